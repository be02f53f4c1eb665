#include "unsir/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "unsir/hash.hpp"
#include "unsir/kernels.hpp"

namespace unsir {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

namespace {

std::shared_ptr<TensorImpl> make_impl(Shape shape, bool requires_grad) {
    for (int e : shape) {
        if (e <= 0) throw ShapeError("tensor extent must be positive, got shape " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->data.resize(static_cast<size_t>(shape_numel(shape)), 0.0f);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return impl;
}

}  // namespace

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    auto impl = make_impl(std::move(shape), requires_grad);
    if (impl->data.size() != data.size()) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(impl->shape));
    }
    impl->data = std::move(data);
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return Tensor(make_impl(std::move(shape), requires_grad));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    auto impl = make_impl(std::move(shape), requires_grad);
    std::fill(impl->data.begin(), impl->data.end(), value);
    return Tensor(std::move(impl));
}

Tensor Tensor::randn(Shape shape, Rng& rng, bool requires_grad) {
    auto impl = make_impl(std::move(shape), requires_grad);
    for (float& v : impl->data) v = static_cast<float>(rng.normal());
    return Tensor(std::move(impl));
}

Tensor Tensor::uniform(Shape shape, float lo, float hi, Rng& rng, bool requires_grad) {
    auto impl = make_impl(std::move(shape), requires_grad);
    for (float& v : impl->data) v = static_cast<float>(rng.uniform(lo, hi));
    return Tensor(std::move(impl));
}

void Tensor::ensure_grad() {
    if (impl_->grad.empty()) impl_->grad.resize(impl_->data.size(), 0.0f);
}

void Tensor::zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

float Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item() requires a one-element tensor, got shape " +
                            shape_str(shape()));
    }
    return impl_->data[0];
}

Tensor Tensor::clone() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    impl->requires_grad = impl_->requires_grad;
    return Tensor(std::move(impl));
}

bool all_finite(const Tensor& t) {
    for (float v : t.values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

uint64_t tensor_hash(const Tensor& t) {
    uint64_t h = fnv1a64_bytes(t.data(), t.impl()->data.size() * sizeof(float));
    int rank = t.rank();
    h = fnv1a64_bytes(&rank, sizeof(rank), h);
    for (int e : t.shape()) h = fnv1a64_bytes(&e, sizeof(e), h);
    return h;
}

void Tape::record(std::function<void()> step, std::shared_ptr<TensorImpl> output) {
    steps_.push_back(std::move(step));
    outputs_.push_back(std::move(output));
}

void Tape::clear() {
    steps_.clear();
    outputs_.clear();
}

namespace {

// Shared op plumbing: mark the output as tape-produced and register the
// backward closure. The closure must be re-runnable (pure accumulate).
void record_op(Tape* tape, const Tensor& out, std::function<void()> step) {
    if (!tape) return;
    out.impl()->producer = tape;
    out.impl()->requires_grad = true;
    tape->record(std::move(step), out.impl());
}

bool wants_grad(const Tensor& t, Tape* tape) {
    return tape != nullptr && t.requires_grad();
}

void accumulate(const std::shared_ptr<TensorImpl>& dst, const float* src, int64_t n) {
    if (dst->grad.empty()) dst->grad.resize(dst->data.size(), 0.0f);
    kernels::axpy(1.0f, src, dst->grad.data(), n);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    kernels::gemm(a.data(), b.data(), out.data(), m, k, n, false);

    if (tape && (a.requires_grad() || b.requires_grad())) {
        auto ai = a.impl();
        auto bi = b.impl();
        auto oi = out.impl();
        bool need_da = a.requires_grad();
        bool need_db = b.requires_grad();
        record_op(tape, out, [ai, bi, oi, m, k, n, need_da, need_db] {
            if (oi->grad.empty()) return;
            const float* dc = oi->grad.data();
            if (need_da) {
                // dA += dC * B^T
                std::vector<float> bt(static_cast<size_t>(n) * k);
                kernels::transpose(bi->data.data(), bt.data(), k, n);
                std::vector<float> da(static_cast<size_t>(m) * k);
                kernels::gemm(dc, bt.data(), da.data(), m, n, k, false);
                accumulate(ai, da.data(),
                           static_cast<int64_t>(m) * k);
            }
            if (need_db) {
                // dB += A^T * dC
                std::vector<float> at(static_cast<size_t>(k) * m);
                kernels::transpose(ai->data.data(), at.data(), m, k);
                std::vector<float> db(static_cast<size_t>(k) * n);
                kernels::gemm(at.data(), dc, db.data(), k, m, n, false);
                accumulate(bi, db.data(),
                           static_cast<int64_t>(k) * n);
            }
        });
    }
    return out;
}

namespace {

// col[(c*kh+i)*kw+j][oh*ow_count+ow] = padded input patch value
void im2col(const float* x, int c_in, int h, int w, int kh, int kw, int stride,
            int pad, int oh_count, int ow_count, float* col) {
    const int patch = c_in * kh * kw;
    for (int r = 0; r < patch; ++r) {
        const int c = r / (kh * kw);
        const int i = (r / kw) % kh;
        const int j = r % kw;
        float* dst = col + static_cast<int64_t>(r) * oh_count * ow_count;
        for (int oh = 0; oh < oh_count; ++oh) {
            const int ih = oh * stride + i - pad;
            if (ih < 0 || ih >= h) {
                for (int ow = 0; ow < ow_count; ++ow) dst[oh * ow_count + ow] = 0.0f;
                continue;
            }
            const float* src = x + (static_cast<int64_t>(c) * h + ih) * w;
            for (int ow = 0; ow < ow_count; ++ow) {
                const int iw = ow * stride + j - pad;
                dst[oh * ow_count + ow] = (iw >= 0 && iw < w) ? src[iw] : 0.0f;
            }
        }
    }
}

// scatter-add of a column matrix back into image layout
void col2im_add(const float* col, int c_in, int h, int w, int kh, int kw,
                int stride, int pad, int oh_count, int ow_count, float* dx) {
    const int patch = c_in * kh * kw;
    for (int r = 0; r < patch; ++r) {
        const int c = r / (kh * kw);
        const int i = (r / kw) % kh;
        const int j = r % kw;
        const float* src = col + static_cast<int64_t>(r) * oh_count * ow_count;
        for (int oh = 0; oh < oh_count; ++oh) {
            const int ih = oh * stride + i - pad;
            if (ih < 0 || ih >= h) continue;
            float* dst = dx + (static_cast<int64_t>(c) * h + ih) * w;
            for (int ow = 0; ow < ow_count; ++ow) {
                const int iw = ow * stride + j - pad;
                if (iw >= 0 && iw < w) dst[iw] += src[oh * ow_count + ow];
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding,
              Tape* tape) {
    if (stride <= 0) throw ConfigError("conv2d: stride must be positive, got " + std::to_string(stride));
    if (padding < 0) throw ConfigError("conv2d: padding must be nonnegative, got " + std::to_string(padding));
    if (input.rank() != 4 || kernel.rank() != 4) {
        throw ShapeError("conv2d: need NCHW input and FCkk kernel, got " +
                         shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
    }
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int f = kernel.dim(0), kc = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kc != c) {
        throw ShapeError("conv2d: channel mismatch between input " + shape_str(input.shape()) +
                         " and kernel " + shape_str(kernel.shape()));
    }
    if (kh > h + 2 * padding || kw > w + 2 * padding) {
        throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) +
                         " larger than padded input " + shape_str(input.shape()));
    }
    if ((h + 2 * padding - kh) % stride != 0 || (w + 2 * padding - kw) % stride != 0) {
        throw ShapeError("conv2d: output extent not exact for input " + shape_str(input.shape()) +
                         ", kernel " + shape_str(kernel.shape()) + ", stride " +
                         std::to_string(stride) + ", padding " + std::to_string(padding));
    }
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (w + 2 * padding - kw) / stride + 1;
    const int patch = c * kh * kw;
    const int64_t cols_per_img = static_cast<int64_t>(patch) * oh * ow;

    Tensor out = Tensor::zeros({n, f, oh, ow});
    // columns are kept for the backward pass
    auto cols = std::make_shared<std::vector<float>>(static_cast<size_t>(n) * cols_per_img);
    for (int img = 0; img < n; ++img) {
        float* col = cols->data() + img * cols_per_img;
        im2col(input.data() + static_cast<int64_t>(img) * c * h * w, c, h, w, kh, kw,
               stride, padding, oh, ow, col);
        kernels::gemm(kernel.data(), col, out.data() + static_cast<int64_t>(img) * f * oh * ow,
                      f, patch, oh * ow, false);
    }

    if (tape && (input.requires_grad() || kernel.requires_grad())) {
        auto xi = input.impl();
        auto ki = kernel.impl();
        auto oi = out.impl();
        bool need_dx = input.requires_grad();
        bool need_dk = kernel.requires_grad();
        record_op(tape, out, [xi, ki, oi, cols, n, c, h, w, f, kh, kw, stride, padding,
                              oh, ow, patch, cols_per_img, need_dx, need_dk] {
            if (oi->grad.empty()) return;
            const int hw = oh * ow;
            if (need_dk && ki->grad.empty()) ki->grad.resize(ki->data.size(), 0.0f);
            if (need_dx && xi->grad.empty()) xi->grad.resize(xi->data.size(), 0.0f);
            std::vector<float> colt(static_cast<size_t>(hw) * patch);
            std::vector<float> kt;
            std::vector<float> dcol(static_cast<size_t>(patch) * hw);
            if (need_dx) {
                kt.resize(static_cast<size_t>(patch) * f);
                kernels::transpose(ki->data.data(), kt.data(), f, patch);
            }
            for (int img = 0; img < n; ++img) {
                const float* dout = oi->grad.data() + static_cast<int64_t>(img) * f * hw;
                const float* col = cols->data() + img * cols_per_img;
                if (need_dk) {
                    // dK += dOut * col^T
                    kernels::transpose(col, colt.data(), patch, hw);
                    kernels::gemm(dout, colt.data(), ki->grad.data(), f, hw, patch, true);
                }
                if (need_dx) {
                    // dcol = K^T * dOut, then scatter back
                    kernels::gemm(kt.data(), dout, dcol.data(), patch, f, hw, false);
                    col2im_add(dcol.data(), c, h, w, kh, kw, stride, padding, oh, ow,
                               xi->grad.data() + static_cast<int64_t>(img) * c * h * w);
                }
            }
        });
    }
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape) {
    if (bias.rank() != 1) {
        throw ShapeError("add_bias: bias must be rank 1, got " + shape_str(bias.shape()));
    }
    int channels;
    int64_t inner;
    if (x.rank() == 2) {
        channels = x.dim(1);
        inner = 1;
    } else if (x.rank() == 4) {
        channels = x.dim(1);
        inner = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    } else {
        throw ShapeError("add_bias: input must be rank 2 or 4, got " + shape_str(x.shape()));
    }
    if (bias.dim(0) != channels) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not match input " + shape_str(x.shape()));
    }
    const int batch = x.dim(0);
    Tensor out = Tensor::zeros(x.shape());
    const float* src = x.data();
    const float* b = bias.data();
    float* dst = out.data();
    for (int img = 0; img < batch; ++img) {
        for (int ch = 0; ch < channels; ++ch) {
            const float bv = b[ch];
            const int64_t base = (static_cast<int64_t>(img) * channels + ch) * inner;
            for (int64_t i = 0; i < inner; ++i) dst[base + i] = src[base + i] + bv;
        }
    }

    if (tape && (x.requires_grad() || bias.requires_grad())) {
        auto xi = x.impl();
        auto bi = bias.impl();
        auto oi = out.impl();
        bool need_dx = x.requires_grad();
        bool need_db = bias.requires_grad();
        record_op(tape, out, [xi, bi, oi, batch, channels, inner, need_dx, need_db] {
            if (oi->grad.empty()) return;
            const float* dout = oi->grad.data();
            if (need_dx) {
                accumulate(xi, dout,
                           static_cast<int64_t>(oi->grad.size()));
            }
            if (need_db) {
                if (bi->grad.empty()) bi->grad.resize(bi->data.size(), 0.0f);
                for (int img = 0; img < batch; ++img) {
                    for (int ch = 0; ch < channels; ++ch) {
                        const int64_t base = (static_cast<int64_t>(img) * channels + ch) * inner;
                        float s = kernels::sum(dout + base, inner);
                        bi->grad[static_cast<size_t>(ch)] += s;
                    }
                }
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& x, Tape* tape) {
    Tensor out = Tensor::zeros(x.shape());
    kernels::relu_fwd(x.data(), out.data(), x.numel());
    if (wants_grad(x, tape)) {
        auto xi = x.impl();
        auto oi = out.impl();
        record_op(tape, out, [xi, oi] {
            if (oi->grad.empty()) return;
            if (xi->grad.empty()) xi->grad.resize(xi->data.size(), 0.0f);
            kernels::relu_bwd(xi->data.data(), oi->grad.data(), xi->grad.data(),
                              static_cast<int64_t>(xi->data.size()));
        });
    }
    return out;
}

Tensor global_avg_pool(const Tensor& x, Tape* tape) {
    if (x.rank() != 4) {
        throw ShapeError("global_avg_pool: input must be NCHW, got " + shape_str(x.shape()));
    }
    const int n = x.dim(0), c = x.dim(1);
    const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    Tensor out = Tensor::zeros({n, c});
    const float inv = 1.0f / static_cast<float>(hw);
    for (int i = 0; i < n * c; ++i) {
        out.data()[i] = kernels::sum(x.data() + static_cast<int64_t>(i) * hw, hw) * inv;
    }
    if (wants_grad(x, tape)) {
        auto xi = x.impl();
        auto oi = out.impl();
        record_op(tape, out, [xi, oi, n, c, hw, inv] {
            if (oi->grad.empty()) return;
            if (xi->grad.empty()) xi->grad.resize(xi->data.size(), 0.0f);
            for (int i = 0; i < n * c; ++i) {
                const float g = oi->grad[static_cast<size_t>(i)] * inv;
                float* dst = xi->grad.data() + static_cast<int64_t>(i) * hw;
                for (int64_t j = 0; j < hw; ++j) dst[j] += g;
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape target, Tape* tape) {
    if (shape_numel(target) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(target));
    }
    Tensor out = Tensor::from_data(std::move(target), std::vector<float>(
                                       x.values().begin(), x.values().end()));
    if (wants_grad(x, tape)) {
        auto xi = x.impl();
        auto oi = out.impl();
        record_op(tape, out, [xi, oi] {
            if (oi->grad.empty()) return;
            accumulate(xi, oi->grad.data(),
                       static_cast<int64_t>(oi->grad.size()));
        });
    }
    return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             Tape* tape) {
    if (logits.rank() != 2) {
        throw ShapeError("softmax_cross_entropy: logits must be N x K, got " +
                         shape_str(logits.shape()));
    }
    const int n = logits.dim(0), k = logits.dim(1);
    if (static_cast<int>(labels.size()) != n) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(n));
    }
    for (int i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= k) {
            throw ContractError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                                " at row " + std::to_string(i) + " outside [0, " +
                                std::to_string(k) + ")");
        }
    }
    // probs are saved for the backward pass
    auto probs = std::make_shared<std::vector<float>>(static_cast<size_t>(n) * k);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const float* row = logits.data() + static_cast<int64_t>(i) * k;
        float m = row[0];
        for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - m);
        const double logz = std::log(z);
        for (int j = 0; j < k; ++j) {
            (*probs)[static_cast<size_t>(i) * k + j] =
                static_cast<float>(std::exp(static_cast<double>(row[j]) - m) / z);
        }
        total += -(static_cast<double>(row[labels[i]]) - m - logz);
    }
    Tensor out = Tensor::from_data({1}, {static_cast<float>(total / n)});
    if (!all_finite(out)) {
        throw DivergenceError("softmax_cross_entropy: non-finite loss");
    }

    if (wants_grad(logits, tape)) {
        auto li = logits.impl();
        auto oi = out.impl();
        std::vector<int> saved_labels(labels.begin(), labels.end());
        record_op(tape, out, [li, oi, probs, saved_labels, n, k] {
            if (oi->grad.empty()) return;
            const float dl = oi->grad[0] / static_cast<float>(n);
            if (li->grad.empty()) li->grad.resize(li->data.size(), 0.0f);
            for (int i = 0; i < n; ++i) {
                const float* p = probs->data() + static_cast<int64_t>(i) * k;
                float* g = li->grad.data() + static_cast<int64_t>(i) * k;
                for (int j = 0; j < k; ++j) g[j] += dl * p[j];
                g[saved_labels[static_cast<size_t>(i)]] -= dl;
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& x, Tape* tape) {
    Tensor out = Tensor::from_data({1}, {kernels::sum(x.data(), x.numel())});
    if (wants_grad(x, tape)) {
        auto xi = x.impl();
        auto oi = out.impl();
        record_op(tape, out, [xi, oi] {
            if (oi->grad.empty()) return;
            if (xi->grad.empty()) xi->grad.resize(xi->data.size(), 0.0f);
            const float g = oi->grad[0];
            for (float& v : xi->grad) v += g;
        });
    }
    return out;
}

Tensor sum_squares(const Tensor& x, Tape* tape) {
    Tensor out = Tensor::from_data({1}, {kernels::sum_squares(x.data(), x.numel())});
    if (wants_grad(x, tape)) {
        auto xi = x.impl();
        auto oi = out.impl();
        record_op(tape, out, [xi, oi] {
            if (oi->grad.empty()) return;
            if (xi->grad.empty()) xi->grad.resize(xi->data.size(), 0.0f);
            kernels::axpy(2.0f * oi->grad[0], xi->data.data(), xi->grad.data(),
                          static_cast<int64_t>(xi->data.size()));
        });
    }
    return out;
}

Tensor scalar_combine(float ca, const Tensor& a, float cb, const Tensor& b, Tape* tape) {
    if (a.numel() != 1 || b.numel() != 1) {
        throw ContractError("scalar_combine: both inputs must be scalars, got " +
                            shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    Tensor out = Tensor::from_data({1}, {ca * a.data()[0] + cb * b.data()[0]});
    if (tape && (a.requires_grad() || b.requires_grad())) {
        auto ai = a.impl();
        auto bi = b.impl();
        auto oi = out.impl();
        bool need_da = a.requires_grad();
        bool need_db = b.requires_grad();
        record_op(tape, out, [ai, bi, oi, ca, cb, need_da, need_db] {
            if (oi->grad.empty()) return;
            if (need_da) {
                if (ai->grad.empty()) ai->grad.resize(1, 0.0f);
                ai->grad[0] += ca * oi->grad[0];
            }
            if (need_db) {
                if (bi->grad.empty()) bi->grad.resize(1, 0.0f);
                bi->grad[0] += cb * oi->grad[0];
            }
        });
    }
    return out;
}

void backward(const Tensor& loss, Tape& tape) {
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_str(loss.shape()));
    }
    if (loss.impl()->producer != &tape) {
        throw ContractError("backward: loss was not produced through this tape");
    }
    // Intermediate grads are per-pass; leaf grads accumulate across passes.
    for (auto& out : tape.outputs_) {
        if (!out->grad.empty()) std::fill(out->grad.begin(), out->grad.end(), 0.0f);
    }
    loss.impl()->grad.assign(1, 1.0f);
    for (size_t i = tape.steps_.size(); i > 0; --i) {
        tape.steps_[i - 1]();
    }
}

std::vector<float>& SgdState::velocity_for(const std::shared_ptr<TensorImpl>& p) {
    for (auto& [key, vel] : velocities_) {
        if (key == p.get()) return vel;
    }
    velocities_.emplace_back(p.get(), std::vector<float>(p->data.size(), 0.0f));
    return velocities_.back().second;
}

void sgd_step(NamedParams& params, const SgdRule& rule, SgdState* state) {
    if (rule.lr < 0.0f) throw ConfigError("sgd_step: learning rate must be nonnegative");
    if (rule.momentum != 0.0f && state == nullptr) {
        throw ContractError("sgd_step: momentum requires an SgdState");
    }
    for (auto& [name, p] : params) {
        if (!p.has_grad()) {
            throw ContractError("sgd_step: parameter '" + name + "' has no grad");
        }
        if (rule.momentum != 0.0f) {
            auto& vel = state->velocity_for(p.impl());
            // v <- mu * v + g;  p <- p - lr * v
            kernels::scale(rule.momentum, vel.data(), static_cast<int64_t>(vel.size()));
            kernels::axpy(1.0f, p.grad(), vel.data(), static_cast<int64_t>(vel.size()));
            kernels::axpy(-rule.lr, vel.data(), p.data(), p.numel());
        } else {
            kernels::axpy(-rule.lr, p.grad(), p.data(), p.numel());
        }
    }
}

void zero_grads(NamedParams& params) {
    for (auto& [name, p] : params) p.zero_grad();
}

}  // namespace unsir
