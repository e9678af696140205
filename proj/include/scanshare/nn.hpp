#pragma once

// Layer building blocks: a named parameter registry, linear/layer-norm
// wrappers, multi-head attention, feed-forward blocks, and pre-norm
// transformer encoder/decoder layers. Pre-norm residuals are used
// throughout so a layer with zeroed output projections is an exact
// identity map.

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "scanshare/common.hpp"
#include "scanshare/tensor.hpp"

namespace scanshare {

enum class Init { Zero, One, XavierUniform, UniformSmall };

// Ordered registry of named, partitioned parameter tensors. Creation order
// is the serialization order, and drawing all values from one generator in
// that order makes initialization a pure function of the seed.
template <typename S>
class ParamStore {
public:
    struct Entry {
        std::string name;
        std::string partition;
        Tensor<S> tensor;
    };

    Tensor<S> create(const std::string& name, const std::string& partition, std::vector<int> shape, Init init,
                     Rng& rng) {
        Tensor<S> t(shape, /*requires_grad=*/true);
        const std::size_t n = t.numel();
        switch (init) {
            case Init::Zero:
                break;
            case Init::One:
                for (std::size_t i = 0; i < n; ++i) t.data()[i] = S(1);
                break;
            case Init::XavierUniform: {
                int fan_in = shape.size() >= 2 ? shape[0] : shape.back();
                int fan_out = shape.size() >= 2 ? shape[1] : shape.back();
                double a = std::sqrt(6.0 / (fan_in + fan_out));
                for (std::size_t i = 0; i < n; ++i) t.data()[i] = static_cast<S>(rng.uniform(-a, a));
                break;
            }
            case Init::UniformSmall:
                for (std::size_t i = 0; i < n; ++i) t.data()[i] = static_cast<S>(rng.uniform(-0.1, 0.1));
                break;
        }
        entries_.push_back(Entry{name, partition, t});
        return t;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    std::vector<Tensor<S>> tensors_in(const std::vector<std::string>& partitions) const {
        std::vector<Tensor<S>> out;
        for (const auto& e : entries_)
            for (const auto& p : partitions)
                if (e.partition == p) out.push_back(e.tensor);
        return out;
    }

private:
    std::vector<Entry> entries_;
};

template <typename S>
struct Linear {
    Tensor<S> w;  // [in, out]
    Tensor<S> b;  // [out]

    Linear() = default;
    Linear(ParamStore<S>& store, const std::string& name, const std::string& partition, int in, int out, Rng& rng,
           Init w_init = Init::XavierUniform) {
        w = store.create(name + ".w", partition, {in, out}, w_init, rng);
        b = store.create(name + ".b", partition, {out}, Init::Zero, rng);
    }

    Tensor<S> operator()(Tape<S>* tape, const Tensor<S>& x) const {
        return add_rows(tape, matmul(tape, x, w), b);
    }
};

template <typename S>
struct LayerNormParams {
    Tensor<S> gain, bias;
    S eps = static_cast<S>(1e-5);

    LayerNormParams() = default;
    LayerNormParams(ParamStore<S>& store, const std::string& name, const std::string& partition, int dim, Rng& rng) {
        gain = store.create(name + ".gain", partition, {dim}, Init::One, rng);
        bias = store.create(name + ".bias", partition, {dim}, Init::Zero, rng);
    }

    Tensor<S> operator()(Tape<S>* tape, const Tensor<S>& x) const { return layer_norm(tape, x, gain, bias, eps); }
};

// Scaled dot-product multi-head attention with input and output
// projections; scale is 1/sqrt(head_dim).
template <typename S>
struct MultiHeadAttention {
    Linear<S> wq, wk, wv, wo;
    int dim = 0, heads = 0;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore<S>& store, const std::string& name, const std::string& partition, int dim_,
                       int heads_, Rng& rng)
        : dim(dim_), heads(heads_) {
        if (heads <= 0 || dim % heads != 0)
            throw ConfigError("attention dim " + std::to_string(dim) + " not divisible by heads " +
                              std::to_string(heads));
        wq = Linear<S>(store, name + ".wq", partition, dim, dim, rng);
        wk = Linear<S>(store, name + ".wk", partition, dim, dim, rng);
        wv = Linear<S>(store, name + ".wv", partition, dim, dim, rng);
        wo = Linear<S>(store, name + ".wo", partition, dim, dim, rng);
    }

    Tensor<S> operator()(Tape<S>* tape, const Tensor<S>& q_in, const Tensor<S>& k_in, const Tensor<S>& v_in) const {
        if (q_in.dim(1) != dim || k_in.dim(1) != dim || v_in.dim(1) != dim)
            throw DimensionError("attention: feature dim mismatch, expected " + std::to_string(dim));
        if (k_in.dim(0) != v_in.dim(0))
            throw DimensionError("attention: keys " + shape_str(k_in.shape()) + " vs values " +
                                 shape_str(v_in.shape()));
        const int dh = dim / heads;
        const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
        Tensor<S> Q = wq(tape, q_in), K = wk(tape, k_in), V = wv(tape, v_in);
        std::vector<Tensor<S>> head_outs;
        head_outs.reserve(static_cast<std::size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            Tensor<S> qh = slice_cols(tape, Q, h * dh, dh);
            Tensor<S> kh = slice_cols(tape, K, h * dh, dh);
            Tensor<S> vh = slice_cols(tape, V, h * dh, dh);
            Tensor<S> scores = mul_scalar(tape, matmul(tape, qh, transpose2d(tape, kh)), scale);
            Tensor<S> attn = softmax(tape, scores, 1);
            head_outs.push_back(matmul(tape, attn, vh));
        }
        return wo(tape, concat_cols(tape, head_outs));
    }
};

template <typename S>
struct FeedForward {
    Linear<S> w1, w2;

    FeedForward() = default;
    FeedForward(ParamStore<S>& store, const std::string& name, const std::string& partition, int dim, int hidden,
                Rng& rng) {
        w1 = Linear<S>(store, name + ".w1", partition, dim, hidden, rng);
        w2 = Linear<S>(store, name + ".w2", partition, hidden, dim, rng);
    }

    Tensor<S> operator()(Tape<S>* tape, const Tensor<S>& x) const { return w2(tape, gelu(tape, w1(tape, x))); }
};

template <typename S>
struct TransformerEncoderLayer {
    LayerNormParams<S> ln1, ln2;
    MultiHeadAttention<S> attn;
    FeedForward<S> ff;

    TransformerEncoderLayer() = default;
    TransformerEncoderLayer(ParamStore<S>& store, const std::string& name, const std::string& partition, int dim,
                            int heads, int ff_hidden, Rng& rng) {
        ln1 = LayerNormParams<S>(store, name + ".ln1", partition, dim, rng);
        attn = MultiHeadAttention<S>(store, name + ".attn", partition, dim, heads, rng);
        ln2 = LayerNormParams<S>(store, name + ".ln2", partition, dim, rng);
        ff = FeedForward<S>(store, name + ".ff", partition, dim, ff_hidden, rng);
    }

    Tensor<S> operator()(Tape<S>* tape, const Tensor<S>& x_in) const {
        Tensor<S> a = ln1(tape, x_in);
        Tensor<S> x = add(tape, x_in, attn(tape, a, a, a));
        Tensor<S> f = ln2(tape, x);
        return add(tape, x, ff(tape, f));
    }
};

template <typename S>
struct TransformerDecoderLayer {
    LayerNormParams<S> ln1, ln2, ln3;
    MultiHeadAttention<S> self_attn, cross_attn;
    FeedForward<S> ff;

    TransformerDecoderLayer() = default;
    TransformerDecoderLayer(ParamStore<S>& store, const std::string& name, const std::string& partition, int dim,
                            int heads, int ff_hidden, Rng& rng) {
        ln1 = LayerNormParams<S>(store, name + ".ln1", partition, dim, rng);
        self_attn = MultiHeadAttention<S>(store, name + ".self", partition, dim, heads, rng);
        ln2 = LayerNormParams<S>(store, name + ".ln2", partition, dim, rng);
        cross_attn = MultiHeadAttention<S>(store, name + ".cross", partition, dim, heads, rng);
        ln3 = LayerNormParams<S>(store, name + ".ln3", partition, dim, rng);
        ff = FeedForward<S>(store, name + ".ff", partition, dim, ff_hidden, rng);
    }

    Tensor<S> operator()(Tape<S>* tape, const Tensor<S>& q_in, const Tensor<S>& memory) const {
        Tensor<S> a = ln1(tape, q_in);
        Tensor<S> q = add(tape, q_in, self_attn(tape, a, a, a));
        Tensor<S> c = ln2(tape, q);
        q = add(tape, q, cross_attn(tape, c, memory, memory));
        Tensor<S> f = ln3(tape, q);
        return add(tape, q, ff(tape, f));
    }
};

// Fixed 2-d sinusoidal features for a normalized (x, y): a ladder of integer
// frequencies, sin/cos per axis, length `dim` (dim must be divisible by 4).
inline std::vector<double> position_features(double x, double y, int dim) {
    if (dim % 4 != 0) throw ConfigError("position_features: dim must be divisible by 4");
    std::vector<double> f(static_cast<std::size_t>(dim));
    const double two_pi = 6.283185307179586477;
    for (int i = 0; i < dim / 4; ++i) {
        const double freq = two_pi * (i + 1);
        f[static_cast<std::size_t>(4 * i) + 0] = std::sin(freq * x);
        f[static_cast<std::size_t>(4 * i) + 1] = std::cos(freq * x);
        f[static_cast<std::size_t>(4 * i) + 2] = std::sin(freq * y);
        f[static_cast<std::size_t>(4 * i) + 3] = std::cos(freq * y);
    }
    return f;
}

// Constant [h*w, dim] table of position features at the cell centers of an
// h-by-w grid, row-major.
template <typename S>
Tensor<S> grid_position_features(int h, int w, int dim) {
    Tensor<S> t({h * w, dim});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            auto f = position_features((j + 0.5) / w, (i + 0.5) / h, dim);
            for (int d = 0; d < dim; ++d) t(i * w + j, d) = static_cast<S>(f[static_cast<std::size_t>(d)]);
        }
    return t;
}

// [D,h,w] map to [h*w, D] token matrix and back.
template <typename S>
Tensor<S> flatten_map(Tape<S>* tape, const Tensor<S>& map) {
    if (map.ndim() != 3) throw DimensionError("flatten_map: expected [D,h,w], got " + shape_str(map.shape()));
    const int D = map.dim(0), h = map.dim(1), w = map.dim(2);
    return transpose2d(tape, reshape(tape, map, {D, h * w}));
}

template <typename S>
Tensor<S> unflatten_map(Tape<S>* tape, const Tensor<S>& tokens, int h, int w) {
    if (tokens.ndim() != 2 || tokens.dim(0) != h * w)
        throw DimensionError("unflatten_map: tokens " + shape_str(tokens.shape()) + " vs grid " + std::to_string(h) +
                             "x" + std::to_string(w));
    const int D = tokens.dim(1);
    return reshape(tape, transpose2d(tape, tokens), {D, h, w});
}

}  // namespace scanshare
