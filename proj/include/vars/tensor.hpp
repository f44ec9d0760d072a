#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vars {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty when absent
};
}  // namespace detail

// Dense row-major tensor of doubles.
//
// A Tensor is a handle: copies share storage and gradient, the way parameters
// and graph nodes need to. Use clone() for an independent deep copy.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const double> data() const { return impl_->data; }
    std::span<double> mutable_data() { return impl_->data; }
    double operator[](std::size_t i) const { return impl_->data[i]; }
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on);

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const { return impl_->grad; }
    std::span<double> mutable_grad();
    void zero_grad();

    Tensor clone() const;
    // Same values, no gradient tracking, no storage sharing.
    Tensor detach() const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Ordered record of differentiable operations executed on this thread while
// the tape is alive. Constructing a Tape makes it the thread's active tape;
// destruction restores the previous one. Ops only record when an input
// requires a gradient.
class Tape {
public:
    using BackwardFn = std::function<void(std::span<const double> out_grad)>;

    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    void record(std::shared_ptr<detail::TensorImpl> output, BackwardFn fn);

    // Replays entries in reverse. Intermediate grads are recomputed from
    // scratch; leaf grads accumulate until zeroed.
    void backward(const Tensor& loss);

    std::size_t size() const { return entries_.size(); }

private:
    friend class NoGradGuard;

    struct Entry {
        std::shared_ptr<detail::TensorImpl> output;
        BackwardFn backward;
    };
    std::vector<Entry> entries_;
    Tape* previous_;
};

// Suspends recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape* saved_;
};

// backward() on the thread's active tape.
void backward(const Tensor& loss);

enum class ReduceMode { Mean, Max };

// out = x·w + b with x [B×I], w [I×O], b [O].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(const Tensor& x);

// Valid 1-D convolution along time of x [T×C] with kernel [K×C×C'], placed so
// that output step t is centered on input step t; the K/2 steps at each border
// are zero. K must be odd and K <= T.
Tensor temporal_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

// Mean or max along `axis`. Mean sums in sorted order, so the result does not
// depend on element order. Max routes its gradient to the lowest index among
// ties.
Tensor reduce(const Tensor& x, std::size_t axis, ReduceMode mode);

// Mean over the batch of -log softmax(logits)[label]. Optional per-class
// weights turn it into a weighted mean (normalized by the weight total).
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             std::span<const double> class_weights = {});

// Row-wise softmax, not recorded on the tape.
Tensor softmax(const Tensor& logits);

Tensor reshape(const Tensor& x, Shape shape);
// Stacks equally-shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);
Tensor sum(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar function of one tensor. `x` is restored on return.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h = 1e-5);

// Same check over a set of leaf tensors (e.g. model parameters) that
// `loss_fn` reads. Existing grads on `params` are zeroed.
double grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                  double h = 1e-5);

}  // namespace vars
