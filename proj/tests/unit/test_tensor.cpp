#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "scanshare/nn.hpp"
#include "scanshare/tensor.hpp"

using namespace scanshare;

namespace {

// Independent central-difference probe: perturbs every entry of every listed
// tensor and compares the numeric slope of `loss()` against the gradient the
// tape produced. Returns the worst relative error.
double fd_probe(std::vector<Tensor<double>> params, const std::function<Tensor<double>(Tape<double>*)>& loss,
                double step = 1e-5) {
    for (auto& p : params) p.zero_grad();
    Tape<double> tape;
    Tensor<double> l = loss(&tape);
    tape.backward(l);
    double worst = 0.0;
    for (auto& p : params) {
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double orig = p.data()[i];
            p.data()[i] = orig + step;
            const double fp = loss(nullptr)(0);
            p.data()[i] = orig - step;
            const double fm = loss(nullptr)(0);
            p.data()[i] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double analytic = p.has_grad() ? p.grad()[i] : 0.0;
            const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
            worst = std::max(worst, std::abs(numeric - analytic) / scale);
        }
    }
    return worst;
}

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape), true);
    for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

// Naive sliding-window convolution, written independently of conv2d.
std::vector<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, int stride, int pad, int& Ho,
                                 int& Wo) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    Ho = (H + 2 * pad - kh) / stride + 1;
    Wo = (W + 2 * pad - kw) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(K) * Ho * Wo, 0.0);
    for (int o = 0; o < K; ++o)
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
                double acc = 0.0;
                for (int c = 0; c < C; ++c)
                    for (int u = 0; u < kh; ++u)
                        for (int v = 0; v < kw; ++v) {
                            int yi = i * stride - pad + u;
                            int xj = j * stride - pad + v;
                            if (yi < 0 || yi >= H || xj < 0 || xj >= W) continue;
                            acc += x(c, yi, xj) * w.data()[((static_cast<std::size_t>(o) * C + c) * kh + u) * kw + v];
                        }
                out[(static_cast<std::size_t>(o) * Ho + i) * Wo + j] = acc;
            }
    return out;
}

}  // namespace

TEST_CASE("matmul basics") {
    Tensor<float> I2 = Tensor<float>::from_values({2, 2}, {1, 0, 0, 1});
    Tensor<float> r = matmul<float>(nullptr, I2, I2);
    CHECK(r(0, 0) == 1.0f);
    CHECK(r(0, 1) == 0.0f);
    CHECK(r(1, 1) == 1.0f);

    Tensor<float> a = Tensor<float>::from_values({2, 2}, {1, 2, 3, 4});
    Tensor<float> b = Tensor<float>::from_values({2, 1}, {0, 1});
    Tensor<float> c = matmul<float>(nullptr, a, b);
    CHECK(c(0, 0) == 2.0f);
    CHECK(c(1, 0) == 4.0f);
}

TEST_CASE("matmul shape error names both shapes") {
    Tensor<float> a({2, 3});
    Tensor<float> b({2, 4});
    try {
        matmul<float>(nullptr, a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[2,4]") != std::string::npos);
    }
}

TEST_CASE("matmul gradients match finite differences") {
    Rng rng(42);
    Tensor<double> a = random_tensor({3, 4}, rng);
    Tensor<double> b = random_tensor({4, 2}, rng);
    double err = fd_probe({a, b}, [&](Tape<double>* t) { return sum(t, matmul(t, a, b)); });
    CHECK(err < 1e-4);
}

TEST_CASE("conv2d identity and zero kernels") {
    Rng rng(7);
    Tensor<float> x({1, 4, 5});
    for (std::size_t i = 0; i < x.numel(); ++i) x.data()[i] = static_cast<float>(rng.uniform());
    Tensor<float> k1 = Tensor<float>::from_values({1, 1, 1, 1}, {1.0f});
    Tensor<float> y = conv2d<float>(nullptr, x, k1, 1, 0);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

    Tensor<float> kz({2, 1, 3, 3});
    Tensor<float> z = conv2d<float>(nullptr, x, kz, 1, 1);
    CHECK(z.dim(0) == 2);
    CHECK(z.dim(1) == 4);
    CHECK(z.dim(2) == 5);
    for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z.data()[i] == 0.0f);
}

TEST_CASE("conv2d matches the sliding-window oracle") {
    Rng rng(11);
    Tensor<double> x = random_tensor({2, 5, 5}, rng, -10.0, 10.0);
    Tensor<double> w = random_tensor({3, 2, 3, 3}, rng, -10.0, 10.0);
    Tensor<double> y = conv2d<double>(nullptr, x, w, 1, 1);
    int Ho = 0, Wo = 0;
    auto expect = conv_oracle(x, w, 1, 1, Ho, Wo);
    REQUIRE(y.dim(1) == 5);
    REQUIRE(y.dim(2) == 5);
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(y.data()[i] == doctest::Approx(expect[i]).epsilon(1e-6));

    SUBCASE("strided variant") {
        Tensor<double> ys = conv2d<double>(nullptr, x, w, 2, 1);
        auto es = conv_oracle(x, w, 2, 1, Ho, Wo);
        REQUIRE(ys.dim(1) == Ho);
        REQUIRE(ys.dim(2) == Wo);
        for (std::size_t i = 0; i < es.size(); ++i) CHECK(ys.data()[i] == doctest::Approx(es[i]).epsilon(1e-6));
    }
}

TEST_CASE("conv2d rejects kernels larger than the padded input") {
    Tensor<float> x({1, 3, 3});
    Tensor<float> w({1, 1, 6, 6});
    CHECK_THROWS_AS(conv2d<float>(nullptr, x, w, 1, 1), DimensionError);
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(3);
    Tensor<double> x = random_tensor({2, 4, 4}, rng);
    Tensor<double> w = random_tensor({2, 2, 3, 3}, rng);
    double err = fd_probe({x, w}, [&](Tape<double>* t) { return sum(t, conv2d(t, x, w, 1, 1)); });
    CHECK(err < 1e-4);
}

TEST_CASE("softmax closed forms") {
    Tensor<float> c = Tensor<float>::full({5}, 3.25f);
    Tensor<float> sc = softmax<float>(nullptr, c, 0);
    for (int i = 0; i < 5; ++i) CHECK(sc(i) == doctest::Approx(0.2f));

    Tensor<float> v = Tensor<float>::from_values({2}, {0.0f, std::log(3.0f)});
    Tensor<float> sv = softmax<float>(nullptr, v, 0);
    CHECK(sv(0) == doctest::Approx(0.25f).epsilon(1e-6));
    CHECK(sv(1) == doctest::Approx(0.75f).epsilon(1e-6));
}

TEST_CASE("softmax is stable for large inputs") {
    // 64-bit shifted-exponent reference: exp(x - max) normalized.
    Tensor<float> v = Tensor<float>::from_values({2}, {1000.0f, 1001.0f});
    Tensor<float> s = softmax<float>(nullptr, v, 0);
    const double e0 = std::exp(-1.0), e1 = 1.0;
    CHECK(std::isfinite(s(0)));
    CHECK(s(0) == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-6));
    CHECK(s(1) == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(5);
    Tensor<double> a = random_tensor({6, 9}, rng, -30.0, 30.0);
    Tensor<double> s = softmax<double>(nullptr, a, 1);
    for (int i = 0; i < 6; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 9; ++j) {
            CHECK(s(i, j) > 0.0);
            CHECK(s(i, j) < 1.0);
            acc += s(i, j);
        }
        CHECK(acc == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("softmax gradient matches finite differences") {
    Rng rng(9);
    Tensor<double> a = random_tensor({3, 5}, rng);
    Tensor<double> pick = random_tensor({3, 5}, rng);
    pick.set_requires_grad(false);
    double err = fd_probe({a}, [&](Tape<double>* t) { return sum(t, mul(t, softmax(t, a, 1), pick)); });
    CHECK(err < 1e-4);
}

TEST_CASE("layer_norm closed forms") {
    Tensor<float> gain = Tensor<float>::full({4}, 1.0f);
    Tensor<float> bias({4});
    Tensor<float> c = Tensor<float>::full({4}, 2.5f);
    Tensor<float> n = layer_norm<float>(nullptr, c, gain, bias, 1e-9f);
    for (int i = 0; i < 4; ++i) CHECK(n(i) == doctest::Approx(0.0f));

    Tensor<float> g2 = Tensor<float>::full({2}, 1.0f);
    Tensor<float> b2({2});
    Tensor<float> v = Tensor<float>::from_values({2}, {1.0f, 3.0f});
    Tensor<float> nv = layer_norm<float>(nullptr, v, g2, b2, 1e-12f);
    CHECK(nv(0) == doctest::Approx(-1.0f).epsilon(1e-5));
    CHECK(nv(1) == doctest::Approx(1.0f).epsilon(1e-5));
}

TEST_CASE("layer_norm gradient matches finite differences") {
    Rng rng(13);
    Tensor<double> x = random_tensor({4, 6}, rng);
    Tensor<double> g = random_tensor({6}, rng, 0.5, 1.5);
    Tensor<double> b = random_tensor({6}, rng);
    Tensor<double> pick = random_tensor({4, 6}, rng);
    pick.set_requires_grad(false);
    double err = fd_probe({x, g, b},
                          [&](Tape<double>* t) { return sum(t, mul(t, layer_norm(t, x, g, b, 1e-6), pick)); });
    CHECK(err < 1e-4);
}

TEST_CASE("bilinear sampling closed forms") {
    // 2x2 single-channel map, values row-major 0,1,2,3.
    Tensor<float> map = Tensor<float>::from_values({1, 2, 2}, {0, 1, 2, 3});
    SUBCASE("exact cell center returns that cell") {
        Tensor<float> s = bilinear_sample<float>(nullptr, map, {{0.25, 0.25}, {0.75, 0.75}});
        CHECK(s(0, 0) == doctest::Approx(0.0f));
        CHECK(s(1, 0) == doctest::Approx(3.0f));
    }
    SUBCASE("midpoint between two cells interpolates") {
        Tensor<float> m2 = Tensor<float>::from_values({1, 1, 2}, {0, 1});
        Tensor<float> s = bilinear_sample<float>(nullptr, m2, {{0.5, 0.5}});
        CHECK(s(0, 0) == doctest::Approx(0.5f));
    }
    SUBCASE("constant map gives constant output") {
        Tensor<float> cm = Tensor<float>::full({2, 3, 3}, 4.5f);
        Tensor<float> s = bilinear_sample<float>(nullptr, cm, {{0.1, 0.9}, {0.33, 0.77}, {1.0, 0.0}});
        for (std::size_t i = 0; i < s.numel(); ++i) CHECK(s.data()[i] == doctest::Approx(4.5f));
    }
    SUBCASE("out-of-range point is rejected") {
        CHECK_THROWS_AS(bilinear_sample<float>(nullptr, map, {{1.2, 0.5}}), InputError);
    }
}

TEST_CASE("bilinear sampling gradients (map and coordinates)") {
    Rng rng(21);
    Tensor<double> map = random_tensor({2, 4, 5}, rng);
    // Keep probe coordinates away from integer cell boundaries.
    Tensor<double> pts = Tensor<double>::from_values({3, 2}, {0.3, 1.4, 2.6, 0.3, 3.3, 2.4}, true);
    Tensor<double> pick = random_tensor({3, 2}, rng);
    pick.set_requires_grad(false);
    double err = fd_probe({map, pts},
                          [&](Tape<double>* t) { return sum(t, mul(t, bilinear_sample_cells(t, map, pts), pick)); });
    CHECK(err < 1e-4);
}

TEST_CASE("backward fills leaf gradients") {
    SUBCASE("sum gives ones") {
        Tensor<float> x = Tensor<float>::from_values({3}, {1, 2, 3}, true);
        Tape<float> tape;
        Tensor<float> l = sum(&tape, x);
        tape.backward(l);
        for (int i = 0; i < 3; ++i) CHECK(x.grad()[static_cast<std::size_t>(i)] == 1.0f);
    }
    SUBCASE("elementwise square gives 2x") {
        Tensor<float> x = Tensor<float>::from_values({3}, {1, -2, 3}, true);
        Tape<float> tape;
        Tensor<float> l = sum(&tape, mul(&tape, x, x));
        tape.backward(l);
        CHECK(x.grad()[0] == doctest::Approx(2.0f));
        CHECK(x.grad()[1] == doctest::Approx(-4.0f));
        CHECK(x.grad()[2] == doctest::Approx(6.0f));
    }
    SUBCASE("non-scalar loss is a usage error") {
        Tensor<float> x = Tensor<float>::from_values({2}, {1, 2}, true);
        Tape<float> tape;
        Tensor<float> y = mul(&tape, x, x);
        CHECK_THROWS_AS(tape.backward(y), UsageError);
    }
    SUBCASE("a tape runs backward exactly once") {
        Tensor<float> x = Tensor<float>::from_values({2}, {1, 2}, true);
        Tape<float> tape;
        Tensor<float> l = sum(&tape, x);
        tape.backward(l);
        CHECK_THROWS_AS(tape.backward(l), UsageError);
    }
}

TEST_CASE("fan-out accumulates gradients once per use") {
    Tensor<float> x = Tensor<float>::from_values({2}, {3, 4}, true);
    Tape<float> tape;
    Tensor<float> l = sum(&tape, add(&tape, x, x));
    tape.backward(l);
    CHECK(x.grad()[0] == 2.0f);
    CHECK(x.grad()[1] == 2.0f);
}

TEST_CASE("replaying identical ops yields bit-identical values") {
    Rng rng(33);
    Tensor<float> a({4, 4}, true);
    for (std::size_t i = 0; i < a.numel(); ++i) a.data()[i] = static_cast<float>(rng.uniform(-1, 1));
    auto run = [&]() {
        Tape<float> t;
        Tensor<float> y = softmax(&t, matmul(&t, a, a), 1);
        return y.values();
    };
    auto v1 = run();
    auto v2 = run();
    CHECK(v1 == v2);
}

TEST_CASE("composite graph gradient: conv + attention + norm") {
    Rng rng(17);
    Tensor<double> img = random_tensor({1, 6, 6}, rng);
    img.set_requires_grad(false);
    Tensor<double> kern = random_tensor({4, 1, 3, 3}, rng);
    Tensor<double> gain = random_tensor({4}, rng, 0.5, 1.5);
    Tensor<double> bias = random_tensor({4}, rng);
    ParamStore<double> store;
    Rng init_rng(2);
    MultiHeadAttention<double> mha(store, "mha", "test", 4, 2, init_rng);
    std::vector<Tensor<double>> params = {kern, gain, bias};
    for (const auto& e : store.entries()) params.push_back(e.tensor);

    auto loss = [&](Tape<double>* t) {
        Tensor<double> fm = conv2d(t, img, kern, 2, 1);  // [4,3,3]
        Tensor<double> tokens = flatten_map(t, fm);      // [9,4]
        Tensor<double> normed = layer_norm(t, tokens, gain, bias, 1e-6);
        Tensor<double> attended = mha(t, normed, normed, normed);
        return mean(t, mul(t, attended, attended));
    };
    double err = fd_probe(params, loss);
    CHECK(err < 1e-4);
}

TEST_CASE("check_gradients reports exact agreement on a linear model") {
    Rng rng(2);
    Tensor<double> w = random_tensor({4, 1}, rng);
    Tensor<double> x = random_tensor({3, 4}, rng);
    x.set_requires_grad(false);
    auto report = check_gradients<double>({{"w", w}}, [&](Tape<double>* t) { return sum(t, matmul(t, x, w)); });
    CHECK(report.max_rel_err < 1e-8);
    CHECK(report.ok(1e-8));
    REQUIRE(report.entries.size() == 1);
    CHECK(report.entries[0].name == "w");
}

TEST_CASE("check_gradients flags a corrupted backward") {
    // Custom op recorded with an intentionally wrong gradient (factor 3
    // instead of 2 for x^2).
    Tensor<double> x = Tensor<double>::from_values({3}, {0.7, -0.3, 0.9}, true);
    auto loss = [&](Tape<double>* t) {
        Tensor<double> out = Tensor<double>::from_values({3}, {x(0) * x(0), x(1) * x(1), x(2) * x(2)});
        out.set_requires_grad(t != nullptr);
        if (t) {
            Tensor<double> xin = x, o = out;
            t->record([xin, o]() mutable {
                auto& gx = xin.grad();
                const auto& g = o.grad();
                for (int i = 0; i < 3; ++i) gx[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)] * 3.0 * xin(i);
            });
        }
        return sum(t, out);
    };
    auto report = check_gradients<double>({{"x", x}}, loss);
    CHECK(report.max_rel_err > 0.1);
    CHECK_FALSE(report.ok(1e-4));
}

TEST_CASE("misc op gradients match finite differences") {
    Rng rng(23);
    Tensor<double> a = random_tensor({3, 4}, rng);
    Tensor<double> b = random_tensor({3, 4}, rng);
    Tensor<double> v = random_tensor({4}, rng);

    CHECK(fd_probe({a, b}, [&](Tape<double>* t) { return sum(t, mul(t, sub(t, a, b), add(t, a, b))); }) < 1e-4);
    CHECK(fd_probe({a, v}, [&](Tape<double>* t) { return sum(t, add_rows(t, a, v)); }) < 1e-4);
    CHECK(fd_probe({a}, [&](Tape<double>* t) { return sum(t, gelu(t, a)); }) < 1e-4);
    CHECK(fd_probe({a}, [&](Tape<double>* t) { return sum(t, sigmoid(t, a)); }) < 1e-4);
    CHECK(fd_probe({a}, [&](Tape<double>* t) { return sum(t, powi(t, a, 3)); }) < 1e-4);
    CHECK(fd_probe({a}, [&](Tape<double>* t) { return sum(t, log_op(t, add_scalar(t, sigmoid(t, a), 0.1))); }) < 1e-4);
    CHECK(fd_probe({a}, [&](Tape<double>* t) { return sum(t, transpose2d(t, a)); }) < 1e-4);
    CHECK(fd_probe({a}, [&](Tape<double>* t) { return sum(t, slice_cols(t, a, 1, 2)); }) < 1e-4);
    CHECK(fd_probe({a, b}, [&](Tape<double>* t) { return sum(t, concat_rows(t, {a, b})); }) < 1e-4);
    CHECK(fd_probe({a, b}, [&](Tape<double>* t) { return sum(t, concat_cols(t, {a, b})); }) < 1e-4);
    CHECK(fd_probe({a}, [&](Tape<double>* t) { return sum(t, mul_columns(t, a, {0.5, -1.5, 2.0, 3.0})); }) < 1e-4);

    Tensor<double> w = random_tensor({3, 2}, rng, -0.8, 0.8);
    std::vector<Tensor<double>> samples = {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
    CHECK(fd_probe({w, samples[0], samples[1]},
                   [&](Tape<double>* t) { return sum(t, weighted_mix(t, samples, w)); }) < 1e-4);
}

TEST_CASE("clamp passes gradient only strictly inside the range") {
    Tensor<double> x = Tensor<double>::from_values({3}, {-2.0, 0.5, 2.0}, true);
    Tape<double> tape;
    Tensor<double> l = sum(&tape, clamp(&tape, x, 0.0, 1.0));
    tape.backward(l);
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
    CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("finite outputs on finite inputs across ops") {
    Rng rng(29);
    Tensor<double> a = random_tensor({4, 8}, rng, -50.0, 50.0);
    Tensor<double> s = softmax<double>(nullptr, a, 1);
    Tensor<double> g = gelu<double>(nullptr, a);
    Tensor<double> sg = sigmoid<double>(nullptr, a);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        CHECK(std::isfinite(s.data()[i]));
        CHECK(std::isfinite(g.data()[i]));
        CHECK(std::isfinite(sg.data()[i]));
    }
}
