#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "unsir/tensor.hpp"

namespace unsir {

// Sample-label pairs with a uniform per-sample shape. Immutable once built;
// shared freely across threads.
struct LabeledDataset {
    Shape sample_shape;
    std::vector<float> values;  // size() * sample_size(), row-major
    std::vector<int> labels;
    int num_classes = 0;
    std::string name;
    // Synthesized-noise provenance, used by the zero-glance audit: either the
    // whole set is noise (noise_origin) or a per-sample mask marks the noise
    // rows of a mixed stream.
    bool noise_origin = false;
    std::vector<uint8_t> noise_mask;

    int64_t size() const { return static_cast<int64_t>(labels.size()); }
    int64_t sample_size() const { return shape_numel(sample_shape); }
    const float* sample(int64_t i) const { return values.data() + i * sample_size(); }
    bool is_noise(int64_t i) const {
        return noise_origin || (!noise_mask.empty() && noise_mask[static_cast<size_t>(i)] != 0);
    }
    // Checks the structural invariants (lengths agree, labels in range).
    void validate() const;
};

// IDX (big-endian) image/label pair, values scaled to [0,1].
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

struct CifarMeta {
    int num_classes = 10;
    int height = 32;
    int width = 32;
    int channels = 3;
};

// Binary records of 1 label byte + channels*height*width pixel bytes.
LabeledDataset load_cifar_binary(const std::vector<std::string>& paths,
                                 const CifarMeta& meta);

struct SyntheticSpec {
    int num_classes = 10;
    Shape sample_shape;  // {dims} or {C,H,W}
    int per_class = 100;
    double separation = 6.0;   // guaranteed minimum center distance
    double noise_sigma = 1.0;
    // Seeds the class-center layout. Datasets that must share geometry (a
    // train/test pair) use the same layout_seed with different draw seeds.
    uint64_t layout_seed = 1;
};

// Gaussian class clusters. Centers are unit directions drawn from layout_seed
// and rescaled so every pairwise distance is >= separation.
LabeledDataset generate_synthetic(const SyntheticSpec& spec, uint64_t seed);

// The forget/retain split: D_f holds exactly the forget-class samples, D_r the
// rest, both preserving source order.
struct ClassPartition {
    std::vector<int> forget_classes;  // sorted, deduplicated
    LabeledDataset forget_set;
    LabeledDataset retain_set;

    bool is_forget_class(int label) const;
};

ClassPartition partition(const LabeledDataset& ds, const std::vector<int>& forget_classes);

// D_r_sub: an at-most-per_class_count uniform draw from each retain class.
// Contains no forget-class sample by construction.
struct RetainSubset {
    LabeledDataset subset;
    int per_class_count = 0;
    uint64_t draw_seed = 0;
};

RetainSubset sample_retain_subset(const ClassPartition& p, int per_class_count,
                                  uint64_t seed);

struct Batch {
    Tensor inputs;  // B x sample_shape
    std::vector<int> labels;
    std::vector<uint8_t> noise_mask;  // parallel to labels
};

// Single-consumer batch iterator. With a shuffle seed, a Fisher-Yates
// permutation of indices precedes batching; otherwise source order is kept.
// The final partial batch is emitted.
class BatchStream {
  public:
    BatchStream(const LabeledDataset& ds, int batch_size,
                std::optional<uint64_t> shuffle_seed);

    std::optional<Batch> next();
    int64_t batch_count() const;

  private:
    const LabeledDataset& ds_;
    int batch_size_;
    std::vector<int64_t> order_;
    int64_t cursor_ = 0;
};

// Concatenation for the impair stream; tracks per-sample noise provenance.
LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

}  // namespace unsir
