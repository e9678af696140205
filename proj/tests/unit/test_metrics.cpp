#include <doctest.h>

#include <cmath>
#include <functional>

#include "scanshare/metrics.hpp"

using namespace scanshare;

namespace {

// Plain recursive edit distance, the independent oracle for the DP version.
int lev_naive(const LabelSequence& a, const LabelSequence& b, std::size_t i, std::size_t j) {
    if (i == 0) return static_cast<int>(j);
    if (j == 0) return static_cast<int>(i);
    const int subst = lev_naive(a, b, i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1);
    return std::min({lev_naive(a, b, i - 1, j) + 1, lev_naive(a, b, i, j - 1) + 1, subst});
}

void all_sequences(int max_len, int symbols, std::vector<LabelSequence>& out) {
    std::function<void(LabelSequence&)> rec = [&](LabelSequence& cur) {
        if (!cur.empty()) out.push_back(cur);
        if (static_cast<int>(cur.size()) == max_len) return;
        for (int s = 0; s < symbols; ++s) {
            cur.push_back(s);
            rec(cur);
            cur.pop_back();
        }
    };
    LabelSequence cur;
    rec(cur);
}

// Threshold-sweep ROC area, the independent oracle for the rank-based AUC.
double auc_sweep(const ProbGrid& map, const std::vector<char>& positive) {
    long long P = 0, N = 0;
    for (char c : positive) (c ? P : N) += 1;
    std::vector<double> thresholds = map.p;
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    double area = 0.0, px = 0.0, py = 0.0;
    for (double th : thresholds) {
        long long tp = 0, fp = 0;
        for (std::size_t i = 0; i < map.p.size(); ++i)
            if (map.p[i] >= th) (positive[i] ? tp : fp) += 1;
        const double x = static_cast<double>(fp) / static_cast<double>(N);
        const double y = static_cast<double>(tp) / static_cast<double>(P);
        area += (x - px) * (y + py) / 2.0;
        px = x;
        py = y;
    }
    return area;
}

Scanpath path_of(std::vector<Fixation> fixations) {
    Scanpath p;
    p.image_id = "x";
    p.task = TaskSpec::free_viewing();
    p.fixations = std::move(fixations);
    p.terminated = true;
    return p;
}

}  // namespace

TEST_CASE("grid clustering follows the row-major boundary rules") {
    Scanpath p = path_of({{0.25, 0.25}, {0.75, 0.25}, {0.25, 0.75}, {1.0, 1.0}});
    LabelSequence labels = cluster_fixations(p, 0.5);
    CHECK(labels == LabelSequence{0, 1, 2, 3});
    CHECK_THROWS_AS(cluster_fixations(p, 0.0), ConfigError);
}

TEST_CASE("sequence score closed forms") {
    CHECK(sequence_score({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(sequence_score({1, 2, 3}, {4, 5, 6}) == 0.0);
    CHECK(sequence_score({1, 2, 3}, {1, 2, 4}) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK_THROWS_AS(sequence_score({}, {1}), InputError);
}

TEST_CASE("dp edit distance equals exhaustive recursion on short sequences") {
    std::vector<LabelSequence> seqs;
    all_sequences(4, 3, seqs);
    for (const auto& a : seqs)
        for (const auto& b : seqs) {
            const int dp = edit_distance(a, b);
            const int naive = lev_naive(a, b, a.size(), b.size());
            REQUIRE(dp == naive);
        }
}

TEST_CASE("sequence score is symmetric and bounded") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        LabelSequence a(1 + rng.uniform_u64(6)), b(1 + rng.uniform_u64(6));
        for (auto& v : a) v = static_cast<int>(rng.uniform_u64(4));
        for (auto& v : b) v = static_cast<int>(rng.uniform_u64(4));
        const double sab = sequence_score(a, b);
        CHECK(sab == sequence_score(b, a));
        CHECK(sab >= 0.0);
        CHECK(sab <= 1.0);
        CHECK(sequence_score(a, a) == 1.0);
    }
}

TEST_CASE("semantic sequence score uses fixated object labels") {
    ImageSample s = generate_scene(3, 1, 2, 2, 64, 64);
    // Find one pixel inside each shape.
    Fixation on1, on2;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const int lab = s.segmentation[static_cast<std::size_t>(y) * 64 + x];
            if (lab == 1) on1 = Fixation{(x + 0.5) / 64.0, (y + 0.5) / 64.0};
            if (lab == 2) on2 = Fixation{(x + 0.5) / 64.0, (y + 0.5) / 64.0};
        }
    Scanpath all1 = path_of({on1, on1, on1});
    Scanpath all1b = path_of({on1, on1, on1});
    Scanpath all2 = path_of({on2, on2, on2});
    CHECK(semantic_sequence_score(all1, all1b, s) == 1.0);
    CHECK(semantic_sequence_score(all1, all2, s) == 0.0);
    Scanpath mixed = path_of({on1, on1, on2});
    CHECK(semantic_sequence_score(mixed, all1, s) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("density baseline is a strictly positive distribution") {
    Scanpath center = path_of({{0.5, 0.5}});
    ProbGrid g = build_density_baseline({&center}, 9, 9, 1.0 / 8.0, 1e-6);
    CHECK(g.sum() == doctest::Approx(1.0).epsilon(1e-6));
    std::size_t argmax = 0;
    for (std::size_t i = 0; i < g.p.size(); ++i) {
        CHECK(g.p[i] > 0.0);
        if (g.p[i] > g.p[argmax]) argmax = i;
    }
    CHECK(argmax == 4 * 9 + 4);

    SUBCASE("mirrored fixations give a mirrored map") {
        Scanpath two = path_of({{0.25, 0.5}, {0.75, 0.5}});
        ProbGrid m = build_density_baseline({&two}, 8, 8, 1.0 / 8.0, 1e-6);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
                CHECK(m.p[static_cast<std::size_t>(i) * 8 + j] ==
                      doctest::Approx(m.p[static_cast<std::size_t>(i) * 8 + (7 - j)]).epsilon(1e-9));
    }
    SUBCASE("empty conditions raise the missing-baseline error") {
        CHECK_THROWS_AS(build_density_baseline({}, 8, 8, 0.1, 1e-6), InputError);
    }
}

TEST_CASE("conditional information gain closed forms") {
    ProbGrid base{2, 2, {0.25, 0.25, 0.25, 0.25}};
    Fixation f{0.25, 0.25};  // cell 0

    SUBCASE("model equal to baseline gives exactly zero") {
        CHECK(conditional_information_gain({{base, f}, {base, Fixation{0.75, 0.75}}}, base) == 0.0);
    }
    SUBCASE("one extra bit") {
        ProbGrid model{2, 2, {0.5, 0.5 / 3, 0.5 / 3, 0.5 / 3}};
        CHECK(conditional_information_gain({{model, f}}, base) == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("minus two bits") {
        ProbGrid model{2, 2, {0.125, 0.875 / 3, 0.875 / 3, 0.875 / 3}};
        ProbGrid half{2, 2, {0.5, 0.5 / 3, 0.5 / 3, 0.5 / 3}};
        CHECK(conditional_information_gain({{model, f}}, half) == doctest::Approx(-2.0).epsilon(1e-9));
    }
}

TEST_CASE("conditional nss closed forms and affine invariance") {
    ProbGrid flat{3, 3, std::vector<double>(9, 0.4)};
    CHECK(conditional_nss(flat, {Fixation{0.5, 0.5}}) == 0.0);

    ProbGrid hand{2, 2, {0, 0, 0, 1}};
    CHECK(conditional_nss(hand, {Fixation{0.75, 0.75}}) == doctest::Approx(1.7321).epsilon(1e-4));

    Rng rng(8);
    ProbGrid m{4, 4, {}};
    m.p.resize(16);
    for (auto& v : m.p) v = rng.uniform();
    std::vector<Fixation> fixes = {{0.1, 0.1}, {0.6, 0.3}, {0.9, 0.9}};
    ProbGrid scaled = m;
    for (auto& v : scaled.p) v = 2.7 * v - 1.3;
    CHECK(conditional_nss(m, fixes) == doctest::Approx(conditional_nss(scaled, fixes)).epsilon(1e-9));
    CHECK_THROWS_AS(conditional_nss(m, {}), InputError);
}

TEST_CASE("conditional auc closed forms") {
    ProbGrid flat{2, 2, {0.25, 0.25, 0.25, 0.25}};
    CHECK(conditional_auc(flat, {Fixation{0.25, 0.25}}) == 0.5);

    ProbGrid peaked{2, 2, {0.7, 0.1, 0.1, 0.1}};
    CHECK(conditional_auc(peaked, {Fixation{0.25, 0.25}}) == 1.0);

    ProbGrid tiny{1, 2, {0.5, 0.5}};
    CHECK_THROWS_AS(conditional_auc(tiny, {Fixation{0.2, 0.5}, Fixation{0.9, 0.5}}), InputError);
}

TEST_CASE("rank-based auc equals the threshold sweep oracle") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        ProbGrid m{8, 8, {}};
        m.p.resize(64);
        for (auto& v : m.p) v = rng.uniform();
        if (trial % 3 == 0)  // force ties
            for (auto& v : m.p) v = std::floor(v * 5.0) / 5.0;
        std::vector<Fixation> fixes;
        std::vector<char> positive(64, 0);
        for (int k = 0; k < 3; ++k) {
            Fixation f{rng.uniform(), rng.uniform()};
            fixes.push_back(f);
            positive[static_cast<std::size_t>(m.cell_of(f))] = 1;
        }
        CHECK(conditional_auc(m, fixes) == doctest::Approx(auc_sweep(m, positive)).epsilon(1e-9));
    }
}

TEST_CASE("uniform maps score auc one half and negative gain against informed baselines") {
    ProbGrid uniform{8, 8, std::vector<double>(64, 1.0 / 64.0)};
    Fixation f{0.5, 0.5};
    CHECK(conditional_auc(uniform, {f}) == 0.5);
    Scanpath train = path_of({f, f, f});
    ProbGrid informed = build_density_baseline({&train}, 8, 8, 1.0 / 16.0, 1e-6);
    CHECK(conditional_information_gain({{uniform, f}}, informed) < 0.0);
}

TEST_CASE("evaluate scores ground truth against itself as unity") {
    Dataset ds;
    for (std::uint64_t i = 0; i < 3; ++i) {
        ImageSample s = generate_scene(700 + i, 2, 2, 3, 64, 64);
        ds.scanpaths.push_back(oracle_scanpath_fv(s, i, 4));
        ds.scanpaths.push_back(oracle_scanpath_vs(s, 2, i));
        ds.images.push_back(std::move(s));
    }
    ModelConfig cfg;
    cfg.decoder_layers = 2;
    cfg.feature_dim = 16;
    cfg.memory_layers = 1;
    cfg.aggregation_layers = 1;
    cfg.queries_vs = 4;
    Model<float> model(cfg, SplitConfig{1}, 3);
    BaselineSet baselines = build_baseline_set(ds.scanpaths, 16, 16, 1.0 / 32.0);

    EvalOptions opts;
    opts.gt_as_pred = true;
    MetricsReport r = evaluate(model, ds, TaskKind::FreeViewing, baselines, opts);
    CHECK(r.ss == doctest::Approx(1.0));
    CHECK(r.sem_ss == doctest::Approx(1.0));
    CHECK(r.has_sem_ss);
    CHECK(r.scanpaths == 3);
    CHECK(r.cauc >= 0.0);
    CHECK(r.cauc <= 1.0);

    SUBCASE("evaluation is deterministic") {
        EvalOptions live;
        MetricsReport a = evaluate(model, ds, TaskKind::VisualSearch, baselines, live);
        MetricsReport b = evaluate(model, ds, TaskKind::VisualSearch, baselines, live);
        CHECK(metrics_row("m", a) == metrics_row("m", b));
    }
    SUBCASE("report row layout") {
        CHECK(metrics_header() == "method,SemSS,SS,cIG,cNSS,cAUC");
        MetricsReport rep;
        rep.sem_ss = 0.5432;
        std::string row = metrics_row("LS", rep);
        CHECK(row.substr(0, 3) == "LS,");
        CHECK(std::count(row.begin(), row.end(), ',') == 5);
        rep.has_sem_ss = false;
        CHECK(metrics_row("LS", rep).find("LS,,") == 0);
    }
}
