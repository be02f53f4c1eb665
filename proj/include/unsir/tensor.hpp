#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "unsir/error.hpp"
#include "unsir/rng.hpp"

namespace unsir {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first needed
    bool requires_grad = false;
    const Tape* producer = nullptr;  // tape that recorded this as an op output
};

// Dense f32 tensor handle. Copies share storage; use clone() for a deep copy.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> data,
                            bool requires_grad = false);
    // i.i.d. N(0,1) entries drawn from rng.
    static Tensor randn(Shape shape, Rng& rng, bool requires_grad = false);
    // i.i.d. uniform in [lo, hi).
    static Tensor uniform(Shape shape, float lo, float hi, Rng& rng,
                          bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    float* data() { return impl_->data.data(); }
    const float* data() const { return impl_->data.data(); }
    std::span<const float> values() const { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }

    bool has_grad() const { return !impl_->grad.empty(); }
    // Allocates a zero grad buffer if absent.
    void ensure_grad();
    void zero_grad();
    float* grad() { return impl_->grad.data(); }
    const float* grad() const { return impl_->grad.data(); }
    std::span<const float> grad_values() const { return impl_->grad; }

    // Value of a one-element tensor.
    float item() const;

    // Deep copy of shape/data/requires_grad (grad not copied).
    Tensor clone() const;

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

  private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;
};

bool all_finite(const Tensor& t);
uint64_t tensor_hash(const Tensor& t);

// Ordered record of executed differentiable ops. Backward replays the record
// in exact reverse execution order. Tensors recorded as op outputs have their
// grads reset at the start of every backward pass; leaf grads accumulate
// across passes until explicitly zeroed.
class Tape {
  public:
    void record(std::function<void()> step, std::shared_ptr<TensorImpl> output);
    size_t size() const { return steps_.size(); }
    void clear();

  private:
    friend void backward(const Tensor& loss, Tape& tape);
    std::vector<std::function<void()>> steps_;
    std::vector<std::shared_ptr<TensorImpl>> outputs_;
};

// Differentiable ops. Passing tape == nullptr runs pure inference (nothing is
// recorded and outputs carry no grad).

// a[m x k] * b[k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape);

// Cross-correlation, NCHW input and FCkhkw kernel. Output extent
// (H + 2*padding - kh) / stride + 1 must divide exactly.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride,
              int padding, Tape* tape);

// Bias broadcast over the batch dimension: rank-2 x[N x D] + b[D], or rank-4
// x[N x C x H x W] + b[C]. The only broadcasting in the engine.
Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape);

Tensor relu(const Tensor& x, Tape* tape);

// N x C x H x W -> N x C spatial mean.
Tensor global_avg_pool(const Tensor& x, Tape* tape);

Tensor reshape(const Tensor& x, Shape target, Tape* tape);

// Mean over the batch of -log softmax(logits)[label]; max-subtraction
// stabilized. Gradient on logits is (softmax - onehot) / N.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             Tape* tape);

Tensor sum(const Tensor& x, Tape* tape);
Tensor sum_squares(const Tensor& x, Tape* tape);

// ca * a + cb * b for scalar tensors a, b.
Tensor scalar_combine(float ca, const Tensor& a, float cb, const Tensor& b,
                      Tape* tape);

// Seeds d(loss)/d(loss) = 1 and replays the tape backward. loss must be a
// scalar produced through this tape.
void backward(const Tensor& loss, Tape& tape);

struct SgdRule {
    float lr = 0.01f;
    float momentum = 0.0f;  // plain SGD unless configured
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// Momentum velocity buffers, keyed by parameter identity. Only needed when
// rule.momentum > 0.
class SgdState {
  public:
    std::vector<float>& velocity_for(const std::shared_ptr<TensorImpl>& p);

  private:
    std::vector<std::pair<TensorImpl*, std::vector<float>>> velocities_;
};

// param <- param - lr * grad, in place; grads are left untouched.
void sgd_step(NamedParams& params, const SgdRule& rule, SgdState* state = nullptr);

void zero_grads(NamedParams& params);

}  // namespace unsir
