#include "unsir/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>

#include "unsir/error.hpp"

namespace unsir {

void LabeledDataset::validate() const {
    if (static_cast<int64_t>(values.size()) != size() * sample_size()) {
        throw ContractError("dataset '" + name + "': value buffer length " +
                            std::to_string(values.size()) + " != " +
                            std::to_string(size()) + " samples of " +
                            std::to_string(sample_size()));
    }
    for (int64_t i = 0; i < size(); ++i) {
        int y = labels[static_cast<size_t>(i)];
        if (y < 0 || y >= num_classes) {
            throw ContractError("dataset '" + name + "': label " + std::to_string(y) +
                                " at index " + std::to_string(i) + " outside [0, " +
                                std::to_string(num_classes) + ")");
        }
    }
    if (!noise_mask.empty() && noise_mask.size() != labels.size()) {
        throw ContractError("dataset '" + name + "': noise mask length mismatch");
    }
}

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

uint32_t read_be32(const std::vector<uint8_t>& b, size_t off, const std::string& path) {
    if (off + 4 > b.size()) {
        throw FormatError("'" + path + "': truncated at byte offset " + std::to_string(off));
    }
    return (static_cast<uint32_t>(b[off]) << 24) | (static_cast<uint32_t>(b[off + 1]) << 16) |
           (static_cast<uint32_t>(b[off + 2]) << 8) | static_cast<uint32_t>(b[off + 3]);
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img = read_file(images_path);
    const auto lab = read_file(labels_path);

    const uint32_t img_magic = read_be32(img, 0, images_path);
    if (img_magic != 0x00000803u) {
        throw FormatError("'" + images_path + "': bad IDX image magic at byte offset 0");
    }
    const uint32_t lab_magic = read_be32(lab, 0, labels_path);
    if (lab_magic != 0x00000801u) {
        throw FormatError("'" + labels_path + "': bad IDX label magic at byte offset 0");
    }
    const uint32_t n_img = read_be32(img, 4, images_path);
    const uint32_t h = read_be32(img, 8, images_path);
    const uint32_t w = read_be32(img, 12, images_path);
    const uint32_t n_lab = read_be32(lab, 4, labels_path);
    if (n_img != n_lab) {
        throw FormatError("IDX count mismatch: " + std::to_string(n_img) + " images in '" +
                          images_path + "' vs " + std::to_string(n_lab) + " labels in '" +
                          labels_path + "' (byte offset 4)");
    }
    const size_t need_img = 16 + static_cast<size_t>(n_img) * h * w;
    if (img.size() < need_img) {
        throw FormatError("'" + images_path + "': truncated at byte offset " +
                          std::to_string(img.size()) + ", expected " + std::to_string(need_img));
    }
    const size_t need_lab = 8 + n_lab;
    if (lab.size() < need_lab) {
        throw FormatError("'" + labels_path + "': truncated at byte offset " +
                          std::to_string(lab.size()) + ", expected " + std::to_string(need_lab));
    }

    LabeledDataset ds;
    ds.sample_shape = {1, static_cast<int>(h), static_cast<int>(w)};
    ds.name = images_path;
    ds.values.resize(static_cast<size_t>(n_img) * h * w);
    ds.labels.resize(n_img);
    for (size_t i = 0; i < ds.values.size(); ++i) {
        ds.values[i] = static_cast<float>(img[16 + i]) / 255.0f;
    }
    int max_label = 0;
    for (uint32_t i = 0; i < n_lab; ++i) {
        ds.labels[i] = lab[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = max_label + 1;
    ds.validate();
    return ds;
}

LabeledDataset load_cifar_binary(const std::vector<std::string>& paths, const CifarMeta& meta) {
    if (meta.num_classes < 1 || meta.height < 1 || meta.width < 1 || meta.channels < 1) {
        throw ConfigError("load_cifar_binary: invalid record geometry");
    }
    const size_t pixels = static_cast<size_t>(meta.channels) * meta.height * meta.width;
    const size_t record = 1 + pixels;

    LabeledDataset ds;
    ds.sample_shape = {meta.channels, meta.height, meta.width};
    ds.num_classes = meta.num_classes;
    ds.name = paths.empty() ? "cifar" : paths.front();

    for (const auto& path : paths) {
        const auto bytes = read_file(path);
        if (bytes.size() % record != 0) {
            throw FormatError("'" + path + "': length " + std::to_string(bytes.size()) +
                              " is not a multiple of record size " + std::to_string(record));
        }
        const size_t count = bytes.size() / record;
        for (size_t r = 0; r < count; ++r) {
            const uint8_t* rec = bytes.data() + r * record;
            if (rec[0] >= meta.num_classes) {
                throw FormatError("'" + path + "': label " + std::to_string(rec[0]) +
                                  " at byte offset " + std::to_string(r * record) +
                                  " outside [0, " + std::to_string(meta.num_classes) + ")");
            }
            ds.labels.push_back(rec[0]);
            for (size_t i = 0; i < pixels; ++i) {
                ds.values.push_back(static_cast<float>(rec[1 + i]) / 255.0f);
            }
        }
    }
    ds.validate();
    return ds;
}

LabeledDataset generate_synthetic(const SyntheticSpec& spec, uint64_t seed) {
    if (spec.num_classes < 2) throw ConfigError("generate_synthetic: need K >= 2");
    if (spec.per_class < 1) throw ConfigError("generate_synthetic: need per_class >= 1");
    if (spec.separation <= 0.0) throw ConfigError("generate_synthetic: separation must be positive");
    if (spec.sample_shape.empty()) throw ConfigError("generate_synthetic: empty sample shape");

    const int64_t d = shape_numel(spec.sample_shape);
    const int k = spec.num_classes;

    // Unit directions from the layout seed, rescaled so the smallest pairwise
    // gap is exactly the requested separation (with a hair of headroom).
    std::vector<std::vector<double>> centers(static_cast<size_t>(k));
    Rng layout(spec.layout_seed);
    for (auto& c : centers) {
        c.resize(static_cast<size_t>(d));
        double norm = 0.0;
        do {
            norm = 0.0;
            for (auto& v : c) {
                v = layout.normal();
                norm += v * v;
            }
        } while (norm < 1e-12);
        norm = std::sqrt(norm);
        for (auto& v : c) v /= norm;
    }
    double min_dist = -1.0;
    for (int a = 0; a < k; ++a) {
        for (int b = a + 1; b < k; ++b) {
            double s = 0.0;
            for (int64_t i = 0; i < d; ++i) {
                double diff = centers[a][i] - centers[b][i];
                s += diff * diff;
            }
            double dist = std::sqrt(s);
            if (min_dist < 0.0 || dist < min_dist) min_dist = dist;
        }
    }
    if (min_dist < 1e-9) {
        throw ConfigError("generate_synthetic: degenerate center layout, change layout_seed");
    }
    const double scale = spec.separation / min_dist * (1.0 + 1e-9);
    for (auto& c : centers) {
        for (auto& v : c) v *= scale;
    }

    LabeledDataset ds;
    ds.sample_shape = spec.sample_shape;
    ds.num_classes = k;
    ds.name = "synthetic";
    ds.labels.reserve(static_cast<size_t>(k) * spec.per_class);
    ds.values.reserve(static_cast<size_t>(k) * spec.per_class * d);
    Rng draw(seed);
    for (int cls = 0; cls < k; ++cls) {
        for (int s = 0; s < spec.per_class; ++s) {
            ds.labels.push_back(cls);
            for (int64_t i = 0; i < d; ++i) {
                ds.values.push_back(static_cast<float>(
                    centers[static_cast<size_t>(cls)][i] + spec.noise_sigma * draw.normal()));
            }
        }
    }
    ds.validate();
    return ds;
}

bool ClassPartition::is_forget_class(int label) const {
    return std::binary_search(forget_classes.begin(), forget_classes.end(), label);
}

ClassPartition partition(const LabeledDataset& ds, const std::vector<int>& forget_classes) {
    if (forget_classes.empty()) throw ContractError("partition: forget class set is empty");
    std::set<int> uniq(forget_classes.begin(), forget_classes.end());
    for (int c : uniq) {
        if (c < 0 || c >= ds.num_classes) {
            throw ContractError("partition: forget class " + std::to_string(c) +
                                " outside [0, " + std::to_string(ds.num_classes) + ")");
        }
    }
    if (static_cast<int>(uniq.size()) >= ds.num_classes) {
        throw ContractError("partition: cannot forget all " +
                            std::to_string(ds.num_classes) + " classes, nothing to retain");
    }

    ClassPartition p;
    p.forget_classes.assign(uniq.begin(), uniq.end());
    p.forget_set.sample_shape = ds.sample_shape;
    p.forget_set.num_classes = ds.num_classes;
    p.forget_set.name = ds.name + "/forget";
    p.retain_set.sample_shape = ds.sample_shape;
    p.retain_set.num_classes = ds.num_classes;
    p.retain_set.name = ds.name + "/retain";

    const int64_t ss = ds.sample_size();
    for (int64_t i = 0; i < ds.size(); ++i) {
        LabeledDataset& side =
            p.is_forget_class(ds.labels[static_cast<size_t>(i)]) ? p.forget_set : p.retain_set;
        side.labels.push_back(ds.labels[static_cast<size_t>(i)]);
        side.values.insert(side.values.end(), ds.sample(i), ds.sample(i) + ss);
    }
    return p;
}

RetainSubset sample_retain_subset(const ClassPartition& p, int per_class_count, uint64_t seed) {
    if (per_class_count < 1) throw ConfigError("sample_retain_subset: per_class_count must be >= 1");

    const LabeledDataset& dr = p.retain_set;
    std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(dr.num_classes));
    for (int64_t i = 0; i < dr.size(); ++i) {
        by_class[static_cast<size_t>(dr.labels[static_cast<size_t>(i)])].push_back(i);
    }

    RetainSubset out;
    out.per_class_count = per_class_count;
    out.draw_seed = seed;
    out.subset.sample_shape = dr.sample_shape;
    out.subset.num_classes = dr.num_classes;
    out.subset.name = dr.name + "/sub";

    Rng rng(seed);
    const int64_t ss = dr.sample_size();
    for (int cls = 0; cls < dr.num_classes; ++cls) {
        auto& idx = by_class[static_cast<size_t>(cls)];
        if (idx.empty()) continue;
        // short classes contribute everything they have
        if (static_cast<int64_t>(idx.size()) > per_class_count) {
            rng.shuffle(idx);
            idx.resize(static_cast<size_t>(per_class_count));
            std::sort(idx.begin(), idx.end());
        }
        for (int64_t i : idx) {
            out.subset.labels.push_back(dr.labels[static_cast<size_t>(i)]);
            out.subset.values.insert(out.subset.values.end(), dr.sample(i), dr.sample(i) + ss);
        }
    }
    out.subset.validate();
    return out;
}

BatchStream::BatchStream(const LabeledDataset& ds, int batch_size,
                         std::optional<uint64_t> shuffle_seed)
    : ds_(ds), batch_size_(batch_size) {
    if (batch_size < 1) throw ConfigError("batches: batch_size must be >= 1");
    order_.resize(static_cast<size_t>(ds.size()));
    for (int64_t i = 0; i < ds.size(); ++i) order_[static_cast<size_t>(i)] = i;
    if (shuffle_seed) {
        Rng rng(*shuffle_seed);
        rng.shuffle(order_);
    }
}

int64_t BatchStream::batch_count() const {
    return (ds_.size() + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchStream::next() {
    if (cursor_ >= ds_.size()) return std::nullopt;
    const int64_t b = std::min<int64_t>(batch_size_, ds_.size() - cursor_);
    const int64_t ss = ds_.sample_size();

    Shape shape;
    shape.push_back(static_cast<int>(b));
    for (int e : ds_.sample_shape) shape.push_back(e);

    std::vector<float> buf(static_cast<size_t>(b * ss));
    Batch batch;
    batch.labels.resize(static_cast<size_t>(b));
    batch.noise_mask.resize(static_cast<size_t>(b), 0);
    for (int64_t i = 0; i < b; ++i) {
        const int64_t src = order_[static_cast<size_t>(cursor_ + i)];
        std::memcpy(buf.data() + i * ss, ds_.sample(src), static_cast<size_t>(ss) * sizeof(float));
        batch.labels[static_cast<size_t>(i)] = ds_.labels[static_cast<size_t>(src)];
        batch.noise_mask[static_cast<size_t>(i)] = ds_.is_noise(src) ? 1 : 0;
    }
    batch.inputs = Tensor::from_data(std::move(shape), std::move(buf));
    cursor_ += b;
    return batch;
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
    if (a.sample_shape != b.sample_shape) {
        throw ShapeError("concat: sample shapes differ, " + shape_str(a.sample_shape) +
                         " vs " + shape_str(b.sample_shape));
    }
    LabeledDataset out;
    out.sample_shape = a.sample_shape;
    out.num_classes = std::max(a.num_classes, b.num_classes);
    out.name = a.name + "+" + b.name;
    out.values = a.values;
    out.values.insert(out.values.end(), b.values.begin(), b.values.end());
    out.labels = a.labels;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.noise_mask.resize(out.labels.size(), 0);
    for (int64_t i = 0; i < a.size(); ++i) {
        out.noise_mask[static_cast<size_t>(i)] = a.is_noise(i) ? 1 : 0;
    }
    for (int64_t i = 0; i < b.size(); ++i) {
        out.noise_mask[static_cast<size_t>(a.size() + i)] = b.is_noise(i) ? 1 : 0;
    }
    out.validate();
    return out;
}

}  // namespace unsir
