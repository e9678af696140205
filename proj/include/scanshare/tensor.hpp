#pragma once

// Dense tensor engine with reverse-mode differentiation.
//
// Tensors are shared handles to immutable value storage plus an optional
// gradient buffer. Operations are free functions taking an optional Tape;
// when a tape is supplied and an input requires gradients, the op records
// a backward closure. Tape::backward walks the closures in reverse
// recording order (dynamic recording keeps them topologically sorted) and
// accumulates gradients into the leaf storages. A tape supports exactly
// one backward pass.
//
// Scalar type is a template parameter: float for training, double for
// finite-difference gradient checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "scanshare/common.hpp"

namespace scanshare {

template <typename S>
struct TensorData {
    std::vector<int> shape;
    std::vector<S> values;
    std::vector<S> grad;  // empty until first accumulation
    bool requires_grad = false;
};

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

inline std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

template <typename S>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, bool requires_grad = false) {
        for (int d : shape) {
            if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
        }
        d_ = std::make_shared<TensorData<S>>();
        d_->shape = std::move(shape);
        d_->values.assign(shape_numel(d_->shape), S(0));
        d_->requires_grad = requires_grad;
    }

    static Tensor from_values(std::vector<int> shape, std::vector<S> vals, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        if (vals.size() != t.numel()) {
            throw DimensionError("value count " + std::to_string(vals.size()) + " does not match shape " +
                                 shape_str(t.shape()));
        }
        t.d_->values = std::move(vals);
        return t;
    }

    static Tensor scalar(S v, bool requires_grad = false) { return from_values({1}, {v}, requires_grad); }

    static Tensor full(std::vector<int> shape, S v, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        std::fill(t.d_->values.begin(), t.d_->values.end(), v);
        return t;
    }

    bool defined() const { return static_cast<bool>(d_); }
    const std::vector<int>& shape() const { return d_->shape; }
    int ndim() const { return static_cast<int>(d_->shape.size()); }
    int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
    std::size_t numel() const { return d_->values.size(); }

    S* data() { return d_->values.data(); }
    const S* data() const { return d_->values.data(); }
    std::vector<S>& values() { return d_->values; }
    const std::vector<S>& values() const { return d_->values; }

    S& operator()(int i) { return d_->values[static_cast<std::size_t>(i)]; }
    S operator()(int i) const { return d_->values[static_cast<std::size_t>(i)]; }
    S& operator()(int i, int j) { return d_->values[static_cast<std::size_t>(i) * dim(1) + j]; }
    S operator()(int i, int j) const { return d_->values[static_cast<std::size_t>(i) * dim(1) + j]; }
    S& operator()(int i, int j, int k) {
        return d_->values[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k];
    }
    S operator()(int i, int j, int k) const {
        return d_->values[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k];
    }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool b) { d_->requires_grad = b; }

    // Gradient accumulation is the one sanctioned mutation; a const handle
    // still reaches the shared gradient buffer.
    bool has_grad() const { return !d_->grad.empty(); }
    std::vector<S>& grad() const {
        ensure_grad();
        return d_->grad;
    }
    void ensure_grad() const {
        if (d_->grad.empty()) d_->grad.assign(d_->values.size(), S(0));
    }
    void zero_grad() const {
        if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), S(0));
    }

    // Identity of the underlying storage; used as optimizer state key.
    const TensorData<S>* id() const { return d_.get(); }

    Tensor detached_copy() const {
        Tensor t;
        t.d_ = std::make_shared<TensorData<S>>();
        t.d_->shape = d_->shape;
        t.d_->values = d_->values;
        t.d_->requires_grad = false;
        return t;
    }

    std::shared_ptr<TensorData<S>> d_;
};

template <typename S>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

    void add_flops(long long n) { flops_ += n; }
    long long flops() const { return flops_; }

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // Seeds d(loss)/d(loss) = 1 and replays recorded closures newest-first;
    // each node runs exactly once.
    void backward(Tensor<S>& loss) {
        if (!loss.defined() || loss.numel() != 1) {
            throw UsageError("backward requires a scalar loss, got shape " +
                             (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
        }
        if (consumed_) throw UsageError("backward already run on this tape");
        consumed_ = true;
        loss.ensure_grad();
        loss.grad()[0] += S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
        nodes_.clear();
    }

private:
    std::vector<std::function<void()>> nodes_;
    long long flops_ = 0;
    bool consumed_ = false;
};

namespace detail {

template <typename S>
inline bool want_grad(Tape<S>* tape, std::initializer_list<const Tensor<S>*> inputs) {
    if (!tape) return false;
    for (const Tensor<S>* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

template <typename S>
inline Tensor<S> make_output(std::vector<int> shape, bool requires_grad) {
    Tensor<S> out(std::move(shape));
    out.set_requires_grad(requires_grad);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("add: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    bool rg = detail::want_grad(tape, {&a, &b});
    Tensor<S> out = detail::make_output<S>(a.shape(), rg);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (tape) tape->add_flops(static_cast<long long>(n));
    if (rg) {
        tape->record([a, b, out]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> sub(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("sub: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    bool rg = detail::want_grad(tape, {&a, &b});
    Tensor<S> out = detail::make_output<S>(a.shape(), rg);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (tape) tape->add_flops(static_cast<long long>(n));
    if (rg) {
        tape->record([a, b, out]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> mul(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mul: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    bool rg = detail::want_grad(tape, {&a, &b});
    Tensor<S> out = detail::make_output<S>(a.shape(), rg);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (tape) tape->add_flops(static_cast<long long>(n));
    if (rg) {
        tape->record([a, b, out]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> add_scalar(Tape<S>* tape, const Tensor<S>& a, S c) {
    bool rg = detail::want_grad(tape, {&a});
    Tensor<S> out = detail::make_output<S>(a.shape(), rg);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
    if (tape) tape->add_flops(static_cast<long long>(n));
    if (rg) {
        tape->record([a, out]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return out;
}

template <typename S>
Tensor<S> mul_scalar(Tape<S>* tape, const Tensor<S>& a, S c) {
    bool rg = detail::want_grad(tape, {&a});
    Tensor<S> out = detail::make_output<S>(a.shape(), rg);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
    if (tape) tape->add_flops(static_cast<long long>(n));
    if (rg) {
        tape->record([a, out, c]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
    }
    return out;
}

// Clamp with pass-through gradient strictly inside [lo, hi].
template <typename S>
Tensor<S> clamp(Tape<S>* tape, const Tensor<S>& a, S lo, S hi) {
    bool rg = detail::want_grad(tape, {&a});
    Tensor<S> out = detail::make_output<S>(a.shape(), rg);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::min(hi, std::max(lo, a.data()[i]));
    if (tape) tape->add_flops(static_cast<long long>(n));
    if (rg) {
        tape->record([a, out, lo, hi]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (a.data()[i] > lo && a.data()[i] < hi) ga[i] += g[i];
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> log_op(Tape<S>* tape, const Tensor<S>& a) {
    bool rg = detail::want_grad(tape, {&a});
    Tensor<S> out = detail::make_output<S>(a.shape(), rg);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) {
        if (a.data()[i] <= S(0)) throw InputError("log: non-positive input");
        out.data()[i] = std::log(a.data()[i]);
    }
    if (tape) tape->add_flops(static_cast<long long>(n));
    if (rg) {
        tape->record([a, out]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a.data()[i];
        });
    }
    return out;
}

template <typename S>
Tensor<S> exp_op(Tape<S>* tape, const Tensor<S>& a) {
    bool rg = detail::want_grad(tape, {&a});
    Tensor<S> out = detail::make_output<S>(a.shape(), rg);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::exp(a.data()[i]);
    if (tape) tape->add_flops(static_cast<long long>(n));
    if (rg) {
        tape->record([a, out]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * out.data()[i];
        });
    }
    return out;
}

// x^n for integer n >= 1.
template <typename S>
Tensor<S> powi(Tape<S>* tape, const Tensor<S>& a, int n) {
    if (n < 1) throw UsageError("powi: exponent must be >= 1");
    bool rg = detail::want_grad(tape, {&a});
    Tensor<S> out = detail::make_output<S>(a.shape(), rg);
    const std::size_t m = a.numel();
    for (std::size_t i = 0; i < m; ++i) {
        S v = a.data()[i], p = v;
        for (int j = 1; j < n; ++j) p *= v;
        out.data()[i] = p;
    }
    if (tape) tape->add_flops(static_cast<long long>(m) * n);
    if (rg) {
        tape->record([a, out, n]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                S v = a.data()[i], p = S(1);
                for (int j = 1; j < n; ++j) p *= v;
                ga[i] += g[i] * S(n) * p;
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> sigmoid(Tape<S>* tape, const Tensor<S>& a) {
    bool rg = detail::want_grad(tape, {&a});
    Tensor<S> out = detail::make_output<S>(a.shape(), rg);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) {
        S x = a.data()[i];
        out.data()[i] = x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
    }
    if (tape) tape->add_flops(4ll * static_cast<long long>(n));
    if (rg) {
        tape->record([a, out]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                S s = out.data()[i];
                ga[i] += g[i] * s * (S(1) - s);
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> gelu(Tape<S>* tape, const Tensor<S>& a) {
    bool rg = detail::want_grad(tape, {&a});
    Tensor<S> out = detail::make_output<S>(a.shape(), rg);
    const std::size_t n = a.numel();
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (std::size_t i = 0; i < n; ++i) {
        double x = static_cast<double>(a.data()[i]);
        out.data()[i] = static_cast<S>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
    }
    if (tape) tape->add_flops(5ll * static_cast<long long>(n));
    if (rg) {
        tape->record([a, out]() mutable {
            constexpr double inv_sqrt2pi = 0.3989422804014326779;
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                double x = static_cast<double>(a.data()[i]);
                double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
                double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                ga[i] += g[i] * static_cast<S>(cdf + x * pdf);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(Tape<S>* tape, const Tensor<S>& a) {
    bool rg = detail::want_grad(tape, {&a});
    S acc = S(0);
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
    Tensor<S> out = Tensor<S>::scalar(acc);
    out.set_requires_grad(rg);
    if (tape) tape->add_flops(static_cast<long long>(a.numel()));
    if (rg) {
        tape->record([a, out]() mutable {
            S g = out.grad()[0];
            auto& ga = a.grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }
    return out;
}

template <typename S>
Tensor<S> mean(Tape<S>* tape, const Tensor<S>& a) {
    Tensor<S> s = sum(tape, a);
    return mul_scalar(tape, s, S(1) / static_cast<S>(a.numel()));
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(Tape<S>* tape, const Tensor<S>& a, std::vector<int> shape) {
    if (shape_numel(shape) != a.numel())
        throw DimensionError("reshape: element count mismatch: " + shape_str(a.shape()) + " to " + shape_str(shape));
    bool rg = detail::want_grad(tape, {&a});
    Tensor<S> out = detail::make_output<S>(std::move(shape), rg);
    out.values() = a.values();
    if (rg) {
        tape->record([a, out]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return out;
}

template <typename S>
Tensor<S> transpose2d(Tape<S>* tape, const Tensor<S>& a) {
    if (a.ndim() != 2) throw DimensionError("transpose2d: expected 2-d tensor, got " + shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    bool rg = detail::want_grad(tape, {&a});
    Tensor<S> out = detail::make_output<S>({n, m}, rg);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out(j, i) = a(i, j);
    if (rg) {
        tape->record([a, out, m, n]() mutable {
            auto& ga = a.grad();
            const auto& g = out.grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
        });
    }
    return out;
}

template <typename S>
Tensor<S> concat_rows(Tape<S>* tape, const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw UsageError("concat_rows: no inputs");
    const int cols = parts[0].ndim() == 2 ? parts[0].dim(1) : 1;
    int rows = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(1) != cols)
            throw DimensionError("concat_rows: column mismatch: " + shape_str(p.shape()));
        rows += p.dim(0);
    }
    bool rg = false;
    if (tape)
        for (const auto& p : parts) rg = rg || p.requires_grad();
    Tensor<S> out = detail::make_output<S>({rows, cols}, rg);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.values().begin(), p.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(off));
        off += p.numel();
    }
    if (rg) {
        auto ps = parts;
        tape->record([ps, out]() mutable {
            const auto& g = out.grad();
            std::size_t off2 = 0;
            for (auto& p : ps) {
                if (p.requires_grad()) {
                    auto& gp = p.grad();
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off2 + i];
                }
                off2 += p.numel();
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> slice_rows(Tape<S>* tape, const Tensor<S>& a, int start, int count) {
    if (a.ndim() != 2) throw DimensionError("slice_rows: expected 2-d tensor, got " + shape_str(a.shape()));
    if (start < 0 || count < 1 || start + count > a.dim(0))
        throw DimensionError("slice_rows: range [" + std::to_string(start) + "," + std::to_string(start + count) +
                             ") out of " + shape_str(a.shape()));
    const int cols = a.dim(1);
    bool rg = detail::want_grad(tape, {&a});
    Tensor<S> out = detail::make_output<S>({count, cols}, rg);
    std::copy(a.values().begin() + static_cast<std::ptrdiff_t>(start) * cols,
              a.values().begin() + static_cast<std::ptrdiff_t>(start + count) * cols, out.values().begin());
    if (rg) {
        tape->record([a, out, start, cols]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[static_cast<std::size_t>(start) * cols + i] += g[i];
        });
    }
    return out;
}

template <typename S>
Tensor<S> concat_cols(Tape<S>* tape, const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw UsageError("concat_cols: no inputs");
    const int rows = parts[0].dim(0);
    int cols = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != rows)
            throw DimensionError("concat_cols: row mismatch: " + shape_str(p.shape()));
        cols += p.dim(1);
    }
    bool rg = false;
    if (tape)
        for (const auto& p : parts) rg = rg || p.requires_grad();
    Tensor<S> out = detail::make_output<S>({rows, cols}, rg);
    int coff = 0;
    for (const auto& p : parts) {
        const int pc = p.dim(1);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < pc; ++j) out(i, coff + j) = p(i, j);
        coff += pc;
    }
    if (rg) {
        auto ps = parts;
        tape->record([ps, out, rows, cols]() mutable {
            const auto& g = out.grad();
            int coff2 = 0;
            for (auto& p : ps) {
                const int pc = p.dim(1);
                if (p.requires_grad()) {
                    auto& gp = p.grad();
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < pc; ++j)
                            gp[static_cast<std::size_t>(i) * pc + j] += g[static_cast<std::size_t>(i) * cols + coff2 + j];
                }
                coff2 += pc;
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> slice_cols(Tape<S>* tape, const Tensor<S>& a, int start, int count) {
    if (a.ndim() != 2) throw DimensionError("slice_cols: expected 2-d tensor, got " + shape_str(a.shape()));
    if (start < 0 || count < 1 || start + count > a.dim(1))
        throw DimensionError("slice_cols: range out of " + shape_str(a.shape()));
    const int rows = a.dim(0), cols = a.dim(1);
    bool rg = detail::want_grad(tape, {&a});
    Tensor<S> out = detail::make_output<S>({rows, count}, rg);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < count; ++j) out(i, j) = a(i, start + j);
    if (rg) {
        tape->record([a, out, start, rows, count, cols]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < count; ++j)
                    ga[static_cast<std::size_t>(i) * cols + start + j] += g[static_cast<std::size_t>(i) * count + j];
        });
    }
    return out;
}

// Broadcast a [D] row vector over every row of an [N,D] matrix.
template <typename S>
Tensor<S> add_rows(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& v) {
    if (a.ndim() != 2 || v.ndim() != 1 || v.dim(0) != a.dim(1))
        throw DimensionError("add_rows: " + shape_str(a.shape()) + " vs " + shape_str(v.shape()));
    const int rows = a.dim(0), cols = a.dim(1);
    bool rg = detail::want_grad(tape, {&a, &v});
    Tensor<S> out = detail::make_output<S>(a.shape(), rg);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) out(i, j) = a(i, j) + v(j);
    if (tape) tape->add_flops(static_cast<long long>(rows) * cols);
    if (rg) {
        tape->record([a, v, out, rows, cols]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (v.requires_grad()) {
                auto& gv = v.grad();
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < cols; ++j) gv[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * cols + j];
            }
        });
    }
    return out;
}

// Per-column scale by constants (no gradient into the constants).
template <typename S>
Tensor<S> mul_columns(Tape<S>* tape, const Tensor<S>& a, const std::vector<S>& scale) {
    if (a.ndim() != 2 || static_cast<int>(scale.size()) != a.dim(1))
        throw DimensionError("mul_columns: " + shape_str(a.shape()) + " vs " + std::to_string(scale.size()) + " scales");
    const int rows = a.dim(0), cols = a.dim(1);
    bool rg = detail::want_grad(tape, {&a});
    Tensor<S> out = detail::make_output<S>(a.shape(), rg);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) out(i, j) = a(i, j) * scale[static_cast<std::size_t>(j)];
    if (tape) tape->add_flops(static_cast<long long>(rows) * cols);
    if (rg) {
        tape->record([a, out, scale, rows, cols]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j)
                    ga[static_cast<std::size_t>(i) * cols + j] += g[static_cast<std::size_t>(i) * cols + j] * scale[static_cast<std::size_t>(j)];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    bool rg = detail::want_grad(tape, {&a, &b});
    Tensor<S> out = detail::make_output<S>({m, n}, rg);
    const S* pa = a.data();
    const S* pb = b.data();
    S* pc = out.data();
    for (int i = 0; i < m; ++i) {
        S* crow = pc + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const S av = pa[static_cast<std::size_t>(i) * k + p];
            const S* brow = pb + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    if (tape) tape->add_flops(2ll * m * k * n);
    if (rg) {
        tape->record([a, b, out, m, k, n]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {  // dA = dC * B^T
                auto& ga = a.grad();
                const S* pb2 = b.data();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const S gv = g[static_cast<std::size_t>(i) * n + j];
                        if (gv == S(0)) continue;
                        const S* brow = pb2 + 0;
                        for (int p = 0; p < k; ++p)
                            ga[static_cast<std::size_t>(i) * k + p] += gv * brow[static_cast<std::size_t>(p) * n + j];
                    }
            }
            if (b.requires_grad()) {  // dB = A^T * dC
                auto& gb = b.grad();
                const S* pa2 = a.data();
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        const S av = pa2[static_cast<std::size_t>(i) * k + p];
                        if (av == S(0)) continue;
                        for (int j = 0; j < n; ++j)
                            gb[static_cast<std::size_t>(p) * n + j] += av * g[static_cast<std::size_t>(i) * n + j];
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> conv2d(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& w, int stride, int padding) {
    if (x.ndim() != 3 || w.ndim() != 4)
        throw DimensionError("conv2d: expected x [C,H,W] and kernels [K,C,h,w], got " + shape_str(x.shape()) +
                             " and " + shape_str(w.shape()));
    if (x.dim(0) != w.dim(1))
        throw DimensionError("conv2d: channel mismatch: " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (kh > H + 2 * padding || kw > W + 2 * padding)
        throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                             shape_str(x.shape()));
    const int Ho = (H + 2 * padding - kh) / stride + 1;
    const int Wo = (W + 2 * padding - kw) / stride + 1;
    bool rg = detail::want_grad(tape, {&x, &w});
    Tensor<S> out = detail::make_output<S>({K, Ho, Wo}, rg);
    for (int o = 0; o < K; ++o)
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
                S acc = S(0);
                const int i0 = i * stride - padding, j0 = j * stride - padding;
                for (int c = 0; c < C; ++c)
                    for (int u = 0; u < kh; ++u) {
                        const int yi = i0 + u;
                        if (yi < 0 || yi >= H) continue;
                        for (int v = 0; v < kw; ++v) {
                            const int xj = j0 + v;
                            if (xj < 0 || xj >= W) continue;
                            acc += x(c, yi, xj) * w.data()[((static_cast<std::size_t>(o) * C + c) * kh + u) * kw + v];
                        }
                    }
                out(o, i, j) = acc;
            }
    if (tape) tape->add_flops(2ll * K * Ho * Wo * C * kh * kw);
    if (rg) {
        tape->record([x, w, out, stride, padding, C, H, W, K, kh, kw, Ho, Wo]() mutable {
            const auto& g = out.grad();
            const bool gx = x.requires_grad(), gw = w.requires_grad();
            auto* gxv = gx ? &x.grad() : nullptr;
            auto* gwv = gw ? &w.grad() : nullptr;
            for (int o = 0; o < K; ++o)
                for (int i = 0; i < Ho; ++i)
                    for (int j = 0; j < Wo; ++j) {
                        const S gv = g[(static_cast<std::size_t>(o) * Ho + i) * Wo + j];
                        if (gv == S(0)) continue;
                        const int i0 = i * stride - padding, j0 = j * stride - padding;
                        for (int c = 0; c < C; ++c)
                            for (int u = 0; u < kh; ++u) {
                                const int yi = i0 + u;
                                if (yi < 0 || yi >= H) continue;
                                for (int v = 0; v < kw; ++v) {
                                    const int xj = j0 + v;
                                    if (xj < 0 || xj >= W) continue;
                                    const std::size_t wi = ((static_cast<std::size_t>(o) * C + c) * kh + u) * kw + v;
                                    const std::size_t xi = (static_cast<std::size_t>(c) * H + yi) * W + xj;
                                    if (gxv) (*gxv)[xi] += gv * w.data()[wi];
                                    if (gwv) (*gwv)[wi] += gv * x.data()[xi];
                                }
                            }
                    }
        });
    }
    return out;
}

// Per-channel bias for a [K,H,W] map.
template <typename S>
Tensor<S> add_channels(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& bias) {
    if (x.ndim() != 3 || bias.ndim() != 1 || bias.dim(0) != x.dim(0))
        throw DimensionError("add_channels: " + shape_str(x.shape()) + " vs " + shape_str(bias.shape()));
    const int C = x.dim(0);
    const int hw = x.dim(1) * x.dim(2);
    bool rg = detail::want_grad(tape, {&x, &bias});
    Tensor<S> out = detail::make_output<S>(x.shape(), rg);
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < hw; ++i)
            out.data()[static_cast<std::size_t>(c) * hw + i] = x.data()[static_cast<std::size_t>(c) * hw + i] + bias(c);
    if (tape) tape->add_flops(static_cast<long long>(C) * hw);
    if (rg) {
        tape->record([x, bias, out, C, hw]() mutable {
            const auto& g = out.grad();
            if (x.requires_grad()) {
                auto& gx = x.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (bias.requires_grad()) {
                auto& gb = bias.grad();
                for (int c = 0; c < C; ++c)
                    for (int i = 0; i < hw; ++i) gb[static_cast<std::size_t>(c)] += g[static_cast<std::size_t>(c) * hw + i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization and attention primitives
// ---------------------------------------------------------------------------

// Max-shifted softmax along `axis` of a 1-d or 2-d tensor.
template <typename S>
Tensor<S> softmax(Tape<S>* tape, const Tensor<S>& a, int axis) {
    if (a.ndim() == 1) {
        if (axis != 0) throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(a.shape()));
        Tensor<S> row = reshape(tape, a, {1, a.dim(0)});
        Tensor<S> sm = softmax(tape, row, 1);
        return reshape(tape, sm, {a.dim(0)});
    }
    if (a.ndim() != 2) throw DimensionError("softmax: expected 1-d or 2-d tensor, got " + shape_str(a.shape()));
    if (axis == 0) {
        Tensor<S> t = transpose2d(tape, a);
        Tensor<S> sm = softmax(tape, t, 1);
        return transpose2d(tape, sm);
    }
    if (axis != 1) throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(a.shape()));
    const int rows = a.dim(0), cols = a.dim(1);
    bool rg = detail::want_grad(tape, {&a});
    Tensor<S> out = detail::make_output<S>(a.shape(), rg);
    for (int i = 0; i < rows; ++i) {
        S mx = a(i, 0);
        for (int j = 1; j < cols; ++j) mx = std::max(mx, a(i, j));
        S denom = S(0);
        for (int j = 0; j < cols; ++j) {
            S e = std::exp(a(i, j) - mx);
            out(i, j) = e;
            denom += e;
        }
        for (int j = 0; j < cols; ++j) out(i, j) /= denom;
    }
    if (tape) tape->add_flops(4ll * rows * cols);
    if (rg) {
        tape->record([a, out, rows, cols]() mutable {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (int i = 0; i < rows; ++i) {
                S dot = S(0);
                for (int j = 0; j < cols; ++j) dot += g[static_cast<std::size_t>(i) * cols + j] * out(i, j);
                for (int j = 0; j < cols; ++j)
                    ga[static_cast<std::size_t>(i) * cols + j] += out(i, j) * (g[static_cast<std::size_t>(i) * cols + j] - dot);
            }
        });
    }
    return out;
}

// Per-row normalization of [N,D] (or a single [D] vector) to zero mean and
// unit population variance, then elementwise affine with gain/bias [D].
template <typename S>
Tensor<S> layer_norm(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, S eps) {
    Tensor<S> a = x;
    bool vector_input = (x.ndim() == 1);
    if (vector_input) a = reshape(tape, x, {1, x.dim(0)});
    if (a.ndim() != 2) throw DimensionError("layer_norm: expected [N,D], got " + shape_str(x.shape()));
    const int rows = a.dim(0), D = a.dim(1);
    if (gain.ndim() != 1 || gain.dim(0) != D || bias.ndim() != 1 || bias.dim(0) != D)
        throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(D) + "], got " +
                             shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    bool rg = detail::want_grad(tape, {&a, &gain, &bias});
    Tensor<S> out = detail::make_output<S>({rows, D}, rg);
    Tensor<S> xhat = detail::make_output<S>({rows, D}, false);  // cached for backward
    std::vector<S> inv_std(static_cast<std::size_t>(rows));
    for (int i = 0; i < rows; ++i) {
        S mu = S(0);
        for (int j = 0; j < D; ++j) mu += a(i, j);
        mu /= static_cast<S>(D);
        S var = S(0);
        for (int j = 0; j < D; ++j) {
            S d = a(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<S>(D);
        S is = S(1) / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(i)] = is;
        for (int j = 0; j < D; ++j) {
            S xh = (a(i, j) - mu) * is;
            xhat(i, j) = xh;
            out(i, j) = xh * gain(j) + bias(j);
        }
    }
    if (tape) tape->add_flops(8ll * rows * D);
    if (rg) {
        tape->record([a, gain, bias, out, xhat, inv_std, rows, D]() mutable {
            const auto& g = out.grad();
            for (int i = 0; i < rows; ++i) {
                const std::size_t base = static_cast<std::size_t>(i) * D;
                if (gain.requires_grad()) {
                    auto& gg = gain.grad();
                    for (int j = 0; j < D; ++j) gg[static_cast<std::size_t>(j)] += g[base + j] * xhat(i, j);
                }
                if (bias.requires_grad()) {
                    auto& gb = bias.grad();
                    for (int j = 0; j < D; ++j) gb[static_cast<std::size_t>(j)] += g[base + j];
                }
                if (a.requires_grad()) {
                    auto& ga = a.grad();
                    S mean_gy = S(0), mean_gyx = S(0);
                    for (int j = 0; j < D; ++j) {
                        S gy = g[base + j] * gain(j);
                        mean_gy += gy;
                        mean_gyx += gy * xhat(i, j);
                    }
                    mean_gy /= static_cast<S>(D);
                    mean_gyx /= static_cast<S>(D);
                    for (int j = 0; j < D; ++j) {
                        S gy = g[base + j] * gain(j);
                        ga[base + j] += (gy - mean_gy - xhat(i, j) * mean_gyx) * inv_std[static_cast<std::size_t>(i)];
                    }
                }
            }
        });
    }
    if (vector_input) return reshape(tape, out, {D});
    return out;
}

// out[n,:] = sum_k weights[n,k] * samples[k][n,:].
template <typename S>
Tensor<S> weighted_mix(Tape<S>* tape, const std::vector<Tensor<S>>& samples, const Tensor<S>& weights) {
    if (samples.empty()) throw UsageError("weighted_mix: no samples");
    const int N = samples[0].dim(0), D = samples[0].dim(1);
    const int K = static_cast<int>(samples.size());
    if (weights.ndim() != 2 || weights.dim(0) != N || weights.dim(1) != K)
        throw DimensionError("weighted_mix: weights " + shape_str(weights.shape()) + " vs " + std::to_string(K) +
                             " samples of " + shape_str(samples[0].shape()));
    for (const auto& s : samples)
        if (s.ndim() != 2 || s.dim(0) != N || s.dim(1) != D)
            throw DimensionError("weighted_mix: sample shape mismatch: " + shape_str(s.shape()));
    bool rg = weights.requires_grad();
    for (const auto& s : samples) rg = rg || s.requires_grad();
    rg = rg && tape;
    Tensor<S> out = detail::make_output<S>({N, D}, rg);
    for (int k = 0; k < K; ++k) {
        const auto& s = samples[static_cast<std::size_t>(k)];
        for (int n = 0; n < N; ++n) {
            const S w = weights(n, k);
            for (int d = 0; d < D; ++d) out(n, d) += w * s(n, d);
        }
    }
    if (tape) tape->add_flops(2ll * N * D * K);
    if (rg) {
        auto ss = samples;
        tape->record([ss, weights, out, N, D, K]() mutable {
            const auto& g = out.grad();
            for (int k = 0; k < K; ++k) {
                auto& s = ss[static_cast<std::size_t>(k)];
                const bool gs = s.requires_grad();
                auto* gsv = gs ? &s.grad() : nullptr;
                auto* gwv = weights.requires_grad() ? &weights.grad() : nullptr;
                for (int n = 0; n < N; ++n) {
                    const S w = weights(n, k);
                    S acc = S(0);
                    for (int d = 0; d < D; ++d) {
                        const S gv = g[static_cast<std::size_t>(n) * D + d];
                        if (gsv) (*gsv)[static_cast<std::size_t>(n) * D + d] += w * gv;
                        acc += gv * s(n, d);
                    }
                    if (gwv) (*gwv)[static_cast<std::size_t>(n) * K + k] += acc;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bilinear sampling
// ---------------------------------------------------------------------------

// Samples map [C,H,W] at continuous cell coordinates pts [P,2] = (u,v),
// u along width, v along height; coordinates are clamped to the border.
// Differentiable in both the map values and the coordinates (zero
// coordinate-gradient on the clamped border).
template <typename S>
Tensor<S> bilinear_sample_cells(Tape<S>* tape, const Tensor<S>& map, const Tensor<S>& pts) {
    if (map.ndim() != 3) throw DimensionError("bilinear_sample_cells: map must be [C,H,W], got " + shape_str(map.shape()));
    if (pts.ndim() != 2 || pts.dim(1) != 2)
        throw DimensionError("bilinear_sample_cells: points must be [P,2], got " + shape_str(pts.shape()));
    const int C = map.dim(0), H = map.dim(1), W = map.dim(2);
    const int P = pts.dim(0);
    bool rg = detail::want_grad(tape, {&map, &pts});
    Tensor<S> out = detail::make_output<S>({P, C}, rg);
    for (int p = 0; p < P; ++p) {
        S u = pts(p, 0), v = pts(p, 1);
        const S uc = std::min(static_cast<S>(W - 1), std::max(S(0), u));
        const S vc = std::min(static_cast<S>(H - 1), std::max(S(0), v));
        const int u0 = std::min(W - 1, static_cast<int>(std::floor(uc)));
        const int v0 = std::min(H - 1, static_cast<int>(std::floor(vc)));
        const int u1 = std::min(W - 1, u0 + 1), v1 = std::min(H - 1, v0 + 1);
        const S fu = uc - static_cast<S>(u0), fv = vc - static_cast<S>(v0);
        for (int c = 0; c < C; ++c) {
            const S m00 = map(c, v0, u0), m01 = map(c, v0, u1);
            const S m10 = map(c, v1, u0), m11 = map(c, v1, u1);
            out(p, c) = (S(1) - fv) * ((S(1) - fu) * m00 + fu * m01) + fv * ((S(1) - fu) * m10 + fu * m11);
        }
    }
    if (tape) tape->add_flops(7ll * P * C);
    if (rg) {
        tape->record([map, pts, out, C, H, W, P]() mutable {
            const auto& g = out.grad();
            const bool gm = map.requires_grad(), gp = pts.requires_grad();
            auto* gmv = gm ? &map.grad() : nullptr;
            auto* gpv = gp ? &pts.grad() : nullptr;
            for (int p = 0; p < P; ++p) {
                S u = pts(p, 0), v = pts(p, 1);
                const bool u_clamped = (u < S(0) || u > static_cast<S>(W - 1));
                const bool v_clamped = (v < S(0) || v > static_cast<S>(H - 1));
                const S uc = std::min(static_cast<S>(W - 1), std::max(S(0), u));
                const S vc = std::min(static_cast<S>(H - 1), std::max(S(0), v));
                const int u0 = std::min(W - 1, static_cast<int>(std::floor(uc)));
                const int v0 = std::min(H - 1, static_cast<int>(std::floor(vc)));
                const int u1 = std::min(W - 1, u0 + 1), v1 = std::min(H - 1, v0 + 1);
                const S fu = uc - static_cast<S>(u0), fv = vc - static_cast<S>(v0);
                S du = S(0), dv = S(0);
                for (int c = 0; c < C; ++c) {
                    const S gv = g[static_cast<std::size_t>(p) * C + c];
                    if (gv == S(0)) continue;
                    const S m00 = map(c, v0, u0), m01 = map(c, v0, u1);
                    const S m10 = map(c, v1, u0), m11 = map(c, v1, u1);
                    if (gmv) {
                        (*gmv)[(static_cast<std::size_t>(c) * H + v0) * W + u0] += gv * (S(1) - fv) * (S(1) - fu);
                        (*gmv)[(static_cast<std::size_t>(c) * H + v0) * W + u1] += gv * (S(1) - fv) * fu;
                        (*gmv)[(static_cast<std::size_t>(c) * H + v1) * W + u0] += gv * fv * (S(1) - fu);
                        (*gmv)[(static_cast<std::size_t>(c) * H + v1) * W + u1] += gv * fv * fu;
                    }
                    du += gv * ((S(1) - fv) * (m01 - m00) + fv * (m11 - m10));
                    dv += gv * ((S(1) - fu) * (m10 - m00) + fu * (m11 - m01));
                }
                if (gpv) {
                    if (!u_clamped) (*gpv)[static_cast<std::size_t>(p) * 2 + 0] += du;
                    if (!v_clamped) (*gpv)[static_cast<std::size_t>(p) * 2 + 1] += dv;
                }
            }
        });
    }
    return out;
}

// Samples at normalized (x,y) in [0,1]^2 using the half-pixel convention:
// x -> x*W - 0.5, so x at a cell center returns exactly that cell's value.
template <typename S>
Tensor<S> bilinear_sample(Tape<S>* tape, const Tensor<S>& map, const std::vector<std::pair<double, double>>& points) {
    if (map.ndim() != 3) throw DimensionError("bilinear_sample: map must be [C,H,W], got " + shape_str(map.shape()));
    const int H = map.dim(1), W = map.dim(2);
    std::vector<S> coords;
    coords.reserve(points.size() * 2);
    for (const auto& [x, y] : points) {
        if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0)
            throw InputError("bilinear_sample: point (" + std::to_string(x) + "," + std::to_string(y) +
                             ") outside the unit square");
        coords.push_back(static_cast<S>(x * W - 0.5));
        coords.push_back(static_cast<S>(y * H - 0.5));
    }
    Tensor<S> pts = Tensor<S>::from_values({static_cast<int>(points.size()), 2}, std::move(coords));
    return bilinear_sample_cells(tape, map, pts);
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    bool ok(double tolerance) const { return max_rel_err < tolerance; }
};

// Central finite differences against the tape gradients.
// `build_loss` must rebuild the same scalar loss from the given parameters
// on every call. With max_entries_per_param > 0, a deterministic subset of
// entries is probed in each tensor (first, last, and seeded interior picks).
template <typename S>
GradCheckReport check_gradients(const std::vector<std::pair<std::string, Tensor<S>>>& params,
                                const std::function<Tensor<S>(Tape<S>*)>& build_loss, double step = 1e-5,
                                int max_entries_per_param = 0, std::uint64_t probe_seed = 7) {
    for (auto& [name, p] : params) {
        (void)name;
        const_cast<Tensor<S>&>(p).zero_grad();
    }
    Tape<S> tape;
    Tensor<S> loss = build_loss(&tape);
    tape.backward(loss);

    GradCheckReport report;
    Rng rng(probe_seed);
    for (const auto& [name, p_const] : params) {
        auto& p = const_cast<Tensor<S>&>(p_const);
        const std::size_t n = p.numel();
        std::vector<std::size_t> probe;
        if (max_entries_per_param <= 0 || n <= static_cast<std::size_t>(max_entries_per_param)) {
            probe.resize(n);
            for (std::size_t i = 0; i < n; ++i) probe[i] = i;
        } else {
            probe.push_back(0);
            probe.push_back(n - 1);
            while (probe.size() < static_cast<std::size_t>(max_entries_per_param))
                probe.push_back(static_cast<std::size_t>(rng.uniform_u64(n)));
        }
        GradCheckEntry entry{name, 0.0};
        for (std::size_t idx : probe) {
            const S orig = p.data()[idx];
            p.data()[idx] = orig + static_cast<S>(step);
            double fp = static_cast<double>(build_loss(nullptr)(0));
            p.data()[idx] = orig - static_cast<S>(step);
            double fm = static_cast<double>(build_loss(nullptr)(0));
            p.data()[idx] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double analytic = p.has_grad() ? static_cast<double>(p.grad()[idx]) : 0.0;
            const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
            entry.max_rel_err = std::max(entry.max_rel_err, std::abs(analytic - numeric) / scale);
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

template <typename S>
void zero_grads(const std::vector<Tensor<S>>& params) {
    for (auto& p : params) const_cast<Tensor<S>&>(p).zero_grad();
}

}  // namespace scanshare
