#include "vars/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "vars/errors.hpp"

namespace vars {

namespace {

thread_local Tape* g_active_tape = nullptr;

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

std::span<double> ensure_grad(detail::TensorImpl& t) {
    if (t.grad.size() != t.data.size()) t.grad.assign(t.data.size(), 0.0);
    return t.grad;
}

// Marks `out` as differentiable and records `fn` when any input needs a grad
// and a tape is active.
template <typename Fn>
void record_if_needed(const Tensor& out, std::initializer_list<const Tensor*> inputs, Fn&& fn) {
    Tape* tape = Tape::active();
    if (tape == nullptr) return;
    bool needed = false;
    for (const Tensor* t : inputs) needed = needed || t->requires_grad();
    if (!needed) return;
    out.impl()->requires_grad = true;
    tape->record(out.impl(), std::forward<Fn>(fn));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* name) {
    if (t.rank() != rank) {
        std::ostringstream os;
        os << op << ": " << name << " must have rank " << rank << ", got shape "
           << shape_str(t.shape());
        throw ShapeError(os.str());
    }
}

[[noreturn]] void shape_mismatch(const char* op, const char* a_name, const Shape& a,
                                 const char* b_name, const Shape& b) {
    std::ostringstream os;
    os << op << ": dimension mismatch between " << a_name << " " << shape_str(a) << " and "
       << b_name << " " << shape_str(b);
    throw ShapeError(os.str());
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// --- Tensor -----------------------------------------------------------------

Tensor::Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {
    impl_->data.assign(1, 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
    for (std::size_t d : shape)
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    return Tensor(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank())
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    return impl_->shape[axis];
}

double Tensor::item() const {
    if (numel() != 1)
        throw ContractError("item() needs a single-element tensor, got " + shape_str(shape()));
    return impl_->data[0];
}

void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }

std::span<double> Tensor::mutable_grad() { return ensure_grad(*impl_); }

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    Tensor t(impl_->shape, impl_->data, impl_->requires_grad);
    t.impl_->grad = impl_->grad;
    return t;
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

// --- Tape -------------------------------------------------------------------

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<detail::TensorImpl> output, BackwardFn fn) {
    entries_.push_back(Entry{std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
    const bool on_tape =
        std::any_of(entries_.begin(), entries_.end(),
                    [&](const Entry& e) { return e.output == loss.impl(); });
    if (!on_tape) {
        if (loss.requires_grad()) {
            // A leaf loss is its own gradient source.
            ensure_grad(*loss.impl())[0] += 1.0;
            return;
        }
        throw ContractError("backward: loss was not produced under this tape");
    }
    for (Entry& e : entries_) e.output->grad.assign(e.output->data.size(), 0.0);
    loss.impl()->grad[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        it->backward(it->output->grad);
    }
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

void backward(const Tensor& loss) {
    Tape* tape = Tape::active();
    if (tape == nullptr) throw ContractError("backward called without an active tape");
    tape->backward(loss);
}

// --- ops --------------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(x, 2, "linear", "x");
    require_rank(w, 2, "linear", "w");
    require_rank(b, 1, "linear", "b");
    const std::size_t batch = x.dim(0), in = x.dim(1), out = w.dim(1);
    if (w.dim(0) != in) shape_mismatch("linear", "x", x.shape(), "w", w.shape());
    if (b.dim(0) != out) shape_mismatch("linear", "w", w.shape(), "b", b.shape());

    std::vector<double> y(batch * out);
    const double* xd = x.data().data();
    const double* wd = w.data().data();
    const double* bd = b.data().data();
    for (std::size_t r = 0; r < batch; ++r) {
        double* yr = y.data() + r * out;
        for (std::size_t o = 0; o < out; ++o) yr[o] = 0.0;
        for (std::size_t i = 0; i < in; ++i) {
            const double xv = xd[r * in + i];
            if (xv == 0.0) continue;
            const double* wr = wd + i * out;
            for (std::size_t o = 0; o < out; ++o) yr[o] += xv * wr[o];
        }
        for (std::size_t o = 0; o < out; ++o) yr[o] += bd[o];
    }
    Tensor result({batch, out}, std::move(y));

    record_if_needed(result, {&x, &w, &b},
                     [xi = x.impl(), wi = w.impl(), bi = b.impl(), batch, in, out](
                         std::span<const double> g) {
                         if (wi->requires_grad) {
                             auto gw = ensure_grad(*wi);
                             for (std::size_t r = 0; r < batch; ++r) {
                                 const double* gr = g.data() + r * out;
                                 for (std::size_t i = 0; i < in; ++i) {
                                     const double xv = xi->data[r * in + i];
                                     if (xv == 0.0) continue;
                                     double* gwr = gw.data() + i * out;
                                     for (std::size_t o = 0; o < out; ++o) gwr[o] += xv * gr[o];
                                 }
                             }
                         }
                         if (bi->requires_grad) {
                             auto gb = ensure_grad(*bi);
                             for (std::size_t r = 0; r < batch; ++r)
                                 for (std::size_t o = 0; o < out; ++o) gb[o] += g[r * out + o];
                         }
                         if (xi->requires_grad) {
                             auto gx = ensure_grad(*xi);
                             for (std::size_t r = 0; r < batch; ++r) {
                                 const double* gr = g.data() + r * out;
                                 for (std::size_t i = 0; i < in; ++i) {
                                     const double* wr = wi->data.data() + i * out;
                                     double acc = 0.0;
                                     for (std::size_t o = 0; o < out; ++o) acc += gr[o] * wr[o];
                                     gx[r * in + i] += acc;
                                 }
                             }
                         }
                     });
    return result;
}

Tensor relu(const Tensor& x) {
    std::vector<double> y(x.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    Tensor result(x.shape(), std::move(y));
    record_if_needed(result, {&x}, [xi = x.impl()](std::span<const double> g) {
        auto gx = ensure_grad(*xi);
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (xi->data[i] > 0.0) gx[i] += g[i];
    });
    return result;
}

Tensor temporal_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    require_rank(x, 2, "temporal_conv1d", "x");
    require_rank(kernel, 3, "temporal_conv1d", "kernel");
    require_rank(bias, 1, "temporal_conv1d", "bias");
    const std::size_t steps = x.dim(0), cin = x.dim(1);
    const std::size_t k = kernel.dim(0), cout = kernel.dim(2);
    if (k % 2 == 0)
        throw ConfigError("temporal_conv1d: kernel size must be odd, got " + std::to_string(k));
    if (k > steps) {
        throw ConfigError("temporal_conv1d: kernel size " + std::to_string(k) +
                          " exceeds sequence length " + std::to_string(steps));
    }
    if (kernel.dim(1) != cin) shape_mismatch("temporal_conv1d", "x", x.shape(), "kernel", kernel.shape());
    if (bias.dim(0) != cout)
        shape_mismatch("temporal_conv1d", "kernel", kernel.shape(), "bias", bias.shape());

    const std::size_t half = k / 2;
    std::vector<double> y(steps * cout, 0.0);
    const double* xd = x.data().data();
    const double* kd = kernel.data().data();
    for (std::size_t t = half; t + half < steps; ++t) {
        double* yr = y.data() + t * cout;
        for (std::size_t o = 0; o < cout; ++o) yr[o] = bias[o];
        for (std::size_t j = 0; j < k; ++j) {
            const double* xr = xd + (t - half + j) * cin;
            for (std::size_t c = 0; c < cin; ++c) {
                const double xv = xr[c];
                const double* kr = kd + (j * cin + c) * cout;
                for (std::size_t o = 0; o < cout; ++o) yr[o] += xv * kr[o];
            }
        }
    }
    Tensor result({steps, cout}, std::move(y));

    record_if_needed(
        result, {&x, &kernel, &bias},
        [xi = x.impl(), ki = kernel.impl(), bi = bias.impl(), steps, cin, cout, k, half](
            std::span<const double> g) {
            for (std::size_t t = half; t + half < steps; ++t) {
                const double* gr = g.data() + t * cout;
                if (bi->requires_grad) {
                    auto gb = ensure_grad(*bi);
                    for (std::size_t o = 0; o < cout; ++o) gb[o] += gr[o];
                }
                for (std::size_t j = 0; j < k; ++j) {
                    const std::size_t src = t - half + j;
                    for (std::size_t c = 0; c < cin; ++c) {
                        const std::size_t kr = (j * cin + c) * cout;
                        if (ki->requires_grad) {
                            auto gk = ensure_grad(*ki);
                            const double xv = xi->data[src * cin + c];
                            for (std::size_t o = 0; o < cout; ++o) gk[kr + o] += xv * gr[o];
                        }
                        if (xi->requires_grad) {
                            auto gx = ensure_grad(*xi);
                            double acc = 0.0;
                            for (std::size_t o = 0; o < cout; ++o) acc += ki->data[kr + o] * gr[o];
                            gx[src * cin + c] += acc;
                        }
                    }
                }
            }
        });
    return result;
}

Tensor reduce(const Tensor& x, std::size_t axis, ReduceMode mode) {
    if (axis >= x.rank()) {
        throw ShapeError("reduce: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    }
    const Shape& shape = x.shape();
    const std::size_t extent = shape[axis];
    if (extent == 0) throw DomainError("reduce: empty axis extent");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];

    Shape out_shape;
    for (std::size_t i = 0; i < shape.size(); ++i)
        if (i != axis) out_shape.push_back(shape[i]);

    std::vector<double> y(outer * inner);
    std::vector<std::size_t> argmax;
    if (mode == ReduceMode::Max) argmax.resize(y.size());
    std::vector<double> column(extent);
    const double* xd = x.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * extent * inner + in;
            const std::size_t out_idx = o * inner + in;
            if (mode == ReduceMode::Max) {
                std::size_t best = 0;
                double best_v = xd[base];
                for (std::size_t e = 1; e < extent; ++e) {
                    const double v = xd[base + e * inner];
                    if (v > best_v) {
                        best_v = v;
                        best = e;
                    }
                }
                y[out_idx] = best_v;
                argmax[out_idx] = best;
            } else {
                for (std::size_t e = 0; e < extent; ++e) column[e] = xd[base + e * inner];
                std::sort(column.begin(), column.end());
                // Shifting by the minimum makes n equal values average to
                // exactly that value.
                const double pivot = column[0];
                double acc = 0.0;
                for (std::size_t e = 1; e < extent; ++e) acc += column[e] - pivot;
                y[out_idx] = pivot + acc / static_cast<double>(extent);
            }
        }
    }
    Tensor result(std::move(out_shape), std::move(y));

    record_if_needed(result, {&x},
                     [xi = x.impl(), argmax = std::move(argmax), mode, outer, inner, extent](
                         std::span<const double> g) {
                         auto gx = ensure_grad(*xi);
                         for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t in = 0; in < inner; ++in) {
                                 const std::size_t base = o * extent * inner + in;
                                 const std::size_t out_idx = o * inner + in;
                                 if (mode == ReduceMode::Max) {
                                     gx[base + argmax[out_idx] * inner] += g[out_idx];
                                 } else {
                                     const double share = g[out_idx] / static_cast<double>(extent);
                                     for (std::size_t e = 0; e < extent; ++e)
                                         gx[base + e * inner] += share;
                                 }
                             }
                         }
                     });
    return result;
}

Tensor softmax(const Tensor& logits) {
    require_rank(logits, 2, "softmax", "logits");
    const std::size_t rows = logits.dim(0), n = logits.dim(1);
    std::vector<double> p(rows * n);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* z = logits.data().data() + r * n;
        const double m = *std::max_element(z, z + n);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            p[r * n + i] = std::exp(z[i] - m);
            total += p[r * n + i];
        }
        for (std::size_t i = 0; i < n; ++i) p[r * n + i] /= total;
    }
    return Tensor(logits.shape(), std::move(p));
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             std::span<const double> class_weights) {
    require_rank(logits, 2, "softmax_cross_entropy", "logits");
    const std::size_t batch = logits.dim(0), n = logits.dim(1);
    if (labels.size() != batch) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_str(logits.shape()));
    }
    if (!class_weights.empty() && class_weights.size() != n) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(class_weights.size()) +
                         " class weights for " + std::to_string(n) + " classes");
    }
    for (std::size_t r = 0; r < batch; ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= n) {
            throw LabelError("softmax_cross_entropy: label " + std::to_string(labels[r]) +
                             " at batch index " + std::to_string(r) + " outside [0, " +
                             std::to_string(n) + ")");
        }
    }

    std::vector<double> probs(batch * n);
    std::vector<double> row_weight(batch, 1.0);
    double weight_total = 0.0;
    double loss = 0.0;
    for (std::size_t r = 0; r < batch; ++r) {
        const double* z = logits.data().data() + r * n;
        const double m = *std::max_element(z, z + n);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            probs[r * n + i] = std::exp(z[i] - m);
            total += probs[r * n + i];
        }
        for (std::size_t i = 0; i < n; ++i) probs[r * n + i] /= total;
        const auto label = static_cast<std::size_t>(labels[r]);
        if (!class_weights.empty()) row_weight[r] = class_weights[label];
        weight_total += row_weight[r];
        loss += row_weight[r] * (m + std::log(total) - z[label]);
    }
    if (!(weight_total > 0.0)) throw DomainError("softmax_cross_entropy: total class weight is zero");
    Tensor result = Tensor::scalar(loss / weight_total);

    std::vector<int> saved_labels(labels.begin(), labels.end());
    record_if_needed(result, {&logits},
                     [li = logits.impl(), probs = std::move(probs),
                      saved_labels = std::move(saved_labels), row_weight = std::move(row_weight),
                      weight_total, batch, n](std::span<const double> g) {
                         auto gl = ensure_grad(*li);
                         for (std::size_t r = 0; r < batch; ++r) {
                             const double f = g[0] * row_weight[r] / weight_total;
                             for (std::size_t i = 0; i < n; ++i) {
                                 const double onehot =
                                     static_cast<std::size_t>(saved_labels[r]) == i ? 1.0 : 0.0;
                                 gl[r * n + i] += f * (probs[r * n + i] - onehot);
                             }
                         }
                     });
    return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Tensor result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
    record_if_needed(result, {&x}, [xi = x.impl()](std::span<const double> g) {
        auto gx = ensure_grad(*xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    });
    return result;
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) throw DomainError("stack: empty tensor list");
    const Shape& inner = items[0].shape();
    const std::size_t each = items[0].numel();
    std::vector<double> y;
    y.reserve(each * items.size());
    for (const Tensor& t : items) {
        if (t.shape() != inner) shape_mismatch("stack", "first item", inner, "item", t.shape());
        y.insert(y.end(), t.data().begin(), t.data().end());
    }
    Shape shape{items.size()};
    shape.insert(shape.end(), inner.begin(), inner.end());
    Tensor result(std::move(shape), std::move(y));

    Tape* tape = Tape::active();
    bool needed = false;
    for (const Tensor& t : items) needed = needed || t.requires_grad();
    if (tape != nullptr && needed) {
        std::vector<ImplPtr> impls;
        for (const Tensor& t : items) impls.push_back(t.impl());
        result.impl()->requires_grad = true;
        tape->record(result.impl(), [impls = std::move(impls), each](std::span<const double> g) {
            for (std::size_t k = 0; k < impls.size(); ++k) {
                if (!impls[k]->requires_grad) continue;
                auto gi = ensure_grad(*impls[k]);
                for (std::size_t i = 0; i < each; ++i) gi[i] += g[k * each + i];
            }
        });
    }
    return result;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor result = Tensor::scalar(acc);
    record_if_needed(result, {&x}, [xi = x.impl()](std::span<const double> g) {
        auto gx = ensure_grad(*xi);
        for (double& v : gx) v += g[0];
    });
    return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_mismatch("add", "a", a.shape(), "b", b.shape());
    std::vector<double> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
    Tensor result(a.shape(), std::move(y));
    record_if_needed(result, {&a, &b}, [ai = a.impl(), bi = b.impl()](std::span<const double> g) {
        for (const auto& t : {ai, bi}) {
            if (!t->requires_grad) continue;
            auto gt = ensure_grad(*t);
            for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
        }
    });
    return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_mismatch("mul", "a", a.shape(), "b", b.shape());
    std::vector<double> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
    Tensor result(a.shape(), std::move(y));
    record_if_needed(result, {&a, &b}, [ai = a.impl(), bi = b.impl()](std::span<const double> g) {
        if (ai->requires_grad) {
            auto ga = ensure_grad(*ai);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bi->data[i];
        }
        if (bi->requires_grad) {
            auto gb = ensure_grad(*bi);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * ai->data[i];
        }
    });
    return result;
}

Tensor scale(const Tensor& x, double factor) {
    std::vector<double> y(x.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * factor;
    Tensor result(x.shape(), std::move(y));
    record_if_needed(result, {&x}, [xi = x.impl(), factor](std::span<const double> g) {
        auto gx = ensure_grad(*xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * factor;
    });
    return result;
}

// --- gradient checking ------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
    Tensor leaf = x.clone();
    leaf.set_requires_grad(true);
    leaf.zero_grad();
    std::vector<Tensor> params{leaf};
    return grad_check([&] { return f(leaf); }, params, h);
}

double grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params, double h) {
    for (Tensor& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    {
        Tape tape;
        Tensor loss = loss_fn();
        tape.backward(loss);
    }
    NoGradGuard no_grad;
    double worst = 0.0;
    for (Tensor& p : params) {
        if (!p.has_grad()) p.mutable_grad();
        auto values = p.mutable_data();
        const std::vector<double> analytic(p.grad().begin(), p.grad().end());
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            values[i] = original + h;
            const double up = loss_fn().item();
            values[i] = original - h;
            const double down = loss_fn().item();
            values[i] = original;
            const double numeric = (up - down) / (2.0 * h);
            const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace vars
