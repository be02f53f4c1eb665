#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace unsir {

// CRC32 (IEEE, reflected). Used by the checkpoint trailer and the run
// manifest.
class Crc32 {
  public:
    void update(const void* data, size_t n) {
        const auto* p = static_cast<const uint8_t*>(data);
        uint32_t c = state_;
        for (size_t i = 0; i < n; ++i) {
            c = table()[(c ^ p[i]) & 0xff] ^ (c >> 8);
        }
        state_ = c;
    }

    uint32_t value() const { return state_ ^ 0xffffffffu; }

    static uint32_t of(const void* data, size_t n) {
        Crc32 c;
        c.update(data, n);
        return c.value();
    }

  private:
    static const std::array<uint32_t, 256>& table() {
        static const std::array<uint32_t, 256> t = [] {
            std::array<uint32_t, 256> v{};
            for (uint32_t i = 0; i < 256; ++i) {
                uint32_t c = i;
                for (int j = 0; j < 8; ++j) {
                    c = (c & 1) ? (0xedb88320u ^ (c >> 1)) : (c >> 1);
                }
                v[i] = c;
            }
            return v;
        }();
        return t;
    }

    uint32_t state_ = 0xffffffffu;
};

inline uint64_t fnv1a64_bytes(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace unsir
