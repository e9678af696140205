#include <doctest.h>

#include <cmath>
#include <vector>

#include "scanshare/nn.hpp"

using namespace scanshare;

namespace {

Tensor<double> rand_t(std::vector<int> shape, Rng& rng) {
    Tensor<double> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-1, 1);
    return t;
}

// Single-loop reference attention using the layer's own projection weights.
Tensor<double> attention_oracle(const MultiHeadAttention<double>& mha, const Tensor<double>& q,
                                const Tensor<double>& k, const Tensor<double>& v) {
    const int D = mha.dim, heads = mha.heads, dh = D / heads;
    const int Nq = q.dim(0), Nk = k.dim(0);
    auto project = [&](const Linear<double>& lin, const Tensor<double>& x) {
        Tensor<double> out({x.dim(0), D});
        for (int i = 0; i < x.dim(0); ++i)
            for (int j = 0; j < D; ++j) {
                double acc = lin.b(j);
                for (int p = 0; p < D; ++p) acc += x(i, p) * lin.w(p, j);
                out(i, j) = acc;
            }
        return out;
    };
    Tensor<double> Q = project(mha.wq, q), K = project(mha.wk, k), V = project(mha.wv, v);
    Tensor<double> concat({Nq, D});
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < Nq; ++i) {
            std::vector<double> logits(static_cast<std::size_t>(Nk));
            double mx = -1e300;
            for (int j = 0; j < Nk; ++j) {
                double acc = 0.0;
                for (int d = 0; d < dh; ++d) acc += Q(i, h * dh + d) * K(j, h * dh + d);
                logits[static_cast<std::size_t>(j)] = acc / std::sqrt(static_cast<double>(dh));
                mx = std::max(mx, logits[static_cast<std::size_t>(j)]);
            }
            double denom = 0.0;
            for (double& l : logits) {
                l = std::exp(l - mx);
                denom += l;
            }
            for (int d = 0; d < dh; ++d) {
                double acc = 0.0;
                for (int j = 0; j < Nk; ++j) acc += logits[static_cast<std::size_t>(j)] / denom * V(j, h * dh + d);
                concat(i, h * dh + d) = acc;
            }
        }
    }
    return project(mha.wo, concat);
}

}  // namespace

TEST_CASE("attention with a single key returns the projected value for any query") {
    Rng init(5);
    ParamStore<double> store;
    MultiHeadAttention<double> mha(store, "a", "test", 8, 2, init);
    Rng rng(6);
    Tensor<double> k = rand_t({1, 8}, rng);
    Tensor<double> v = rand_t({1, 8}, rng);
    Tensor<double> q1 = rand_t({1, 8}, rng);
    Tensor<double> q2 = rand_t({1, 8}, rng);
    Tensor<double> o1 = mha(nullptr, q1, k, v);
    Tensor<double> o2 = mha(nullptr, q2, k, v);
    Tensor<double> expect = attention_oracle(mha, q1, k, v);
    for (int j = 0; j < 8; ++j) {
        CHECK(o1(0, j) == doctest::Approx(o2(0, j)).epsilon(1e-12));
        CHECK(o1(0, j) == doctest::Approx(expect(0, j)).epsilon(1e-9));
    }
}

TEST_CASE("identical keys give uniform attention regardless of the query") {
    Rng init(15);
    ParamStore<double> store;
    MultiHeadAttention<double> mha(store, "a", "test", 8, 4, init);
    Rng rng(16);
    Tensor<double> krow = rand_t({1, 8}, rng);
    Tensor<double> keys({3, 8});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 8; ++j) keys(i, j) = krow(0, j);
    Tensor<double> values = rand_t({3, 8}, rng);
    Tensor<double> q1 = rand_t({2, 8}, rng);
    Tensor<double> q2 = rand_t({2, 8}, rng);
    Tensor<double> o1 = mha(nullptr, q1, keys, values);
    Tensor<double> o2 = mha(nullptr, q2, keys, values);
    // Uniform weights mean the output cannot depend on the query side.
    for (std::size_t i = 0; i < o1.numel(); ++i) CHECK(o1.data()[i] == doctest::Approx(o2.data()[i]).epsilon(1e-9));
}

TEST_CASE("multi-head attention matches the per-head oracle") {
    Rng init(25);
    ParamStore<double> store;
    MultiHeadAttention<double> mha(store, "a", "test", 6, 2, init);
    Rng rng(26);
    Tensor<double> q = rand_t({2, 6}, rng);
    Tensor<double> k = rand_t({3, 6}, rng);
    Tensor<double> v = rand_t({3, 6}, rng);
    Tensor<double> got = mha(nullptr, q, k, v);
    Tensor<double> expect = attention_oracle(mha, q, k, v);
    for (std::size_t i = 0; i < got.numel(); ++i)
        CHECK(got.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-6));
}

TEST_CASE("attention rejects a head count that does not divide the dim") {
    Rng init(1);
    ParamStore<double> store;
    CHECK_THROWS_AS(MultiHeadAttention<double>(store, "a", "t", 6, 4, init), ConfigError);
}

TEST_CASE("parameter store draws identical values for identical seeds") {
    auto build = [](std::uint64_t seed) {
        Rng rng(seed);
        ParamStore<float> store;
        Linear<float>(store, "l1", "p", 7, 5, rng);
        LayerNormParams<float>(store, "ln", "p", 5, rng);
        std::vector<float> all;
        for (const auto& e : store.entries())
            all.insert(all.end(), e.tensor.values().begin(), e.tensor.values().end());
        return all;
    };
    CHECK(build(99) == build(99));
    CHECK(build(99) != build(100));
}

TEST_CASE("pre-norm layers with zeroed output projections are identities") {
    Rng init(8);
    ParamStore<double> store;
    TransformerEncoderLayer<double> layer(store, "enc", "t", 8, 2, 16, init);
    for (auto& e : store.entries()) {
        if (e.name == "enc.attn.wo.w" || e.name == "enc.ff.w2.w")
            std::fill(e.tensor.values().begin(), e.tensor.values().end(), 0.0);
    }
    Rng rng(9);
    Tensor<double> x = rand_t({5, 8}, rng);
    Tensor<double> y = layer(nullptr, x);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("flatten and unflatten invert each other") {
    Rng rng(14);
    Tensor<double> map = rand_t({3, 4, 5}, rng);
    Tensor<double> tokens = flatten_map<double>(nullptr, map);
    REQUIRE(tokens.dim(0) == 20);
    REQUIRE(tokens.dim(1) == 3);
    CHECK(tokens(7, 2) == map(2, 1, 2));  // position row 1, col 2
    Tensor<double> back = unflatten_map<double>(nullptr, tokens, 4, 5);
    CHECK(back.values() == map.values());
}

TEST_CASE("position features are deterministic and bounded") {
    auto f1 = position_features(0.3, 0.7, 16);
    auto f2 = position_features(0.3, 0.7, 16);
    CHECK(f1 == f2);
    for (double v : f1) CHECK(std::abs(v) <= 1.0);
    auto g = position_features(0.31, 0.7, 16);
    CHECK(f1 != g);
}
