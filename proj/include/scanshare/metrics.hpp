#pragma once

// Scanpath and conditional-saliency metrics: grid clustering, normalized
// edit-distance sequence scores (spatial and semantic), Gaussian fixation
// density baselines, and the conditional IG / NSS / AUC triple computed per
// ground-truth fixation step. All metrics are pure functions over doubles.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "scanshare/common.hpp"
#include "scanshare/data.hpp"
#include "scanshare/model.hpp"

namespace scanshare {

using LabelSequence = std::vector<int>;

// ---------------------------------------------------------------------------
// Clustering and sequence scores
// ---------------------------------------------------------------------------

// Square-grid clustering: label = row-major cell index of the fixation on a
// ceil(1/cell_fraction)^2 grid; the x = 1 / y = 1 boundary belongs to the
// last cell.
inline LabelSequence cluster_fixations(const Scanpath& path, double cell_fraction) {
    if (cell_fraction <= 0.0 || cell_fraction > 1.0)
        throw ConfigError("cell_fraction must lie in (0,1], got " + std::to_string(cell_fraction));
    const int cells = static_cast<int>(std::ceil(1.0 / cell_fraction));
    LabelSequence labels;
    labels.reserve(path.fixations.size());
    for (const auto& f : path.fixations) {
        const int col = std::min(cells - 1, static_cast<int>(std::floor(f.x / cell_fraction)));
        const int row = std::min(cells - 1, static_cast<int>(std::floor(f.y / cell_fraction)));
        labels.push_back(row * cells + col);
    }
    return labels;
}

inline int edit_distance(const LabelSequence& a, const LabelSequence& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= m; ++j) {
            const int subst = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

// Normalized string-matching similarity: 1 - edit distance / max length.
inline double sequence_score(const LabelSequence& a, const LabelSequence& b) {
    if (a.empty() || b.empty()) throw InputError("sequence_score: sequences must be nonempty");
    const auto longest = static_cast<double>(std::max(a.size(), b.size()));
    return 1.0 - static_cast<double>(edit_distance(a, b)) / longest;
}

// Maps each fixation to the segmentation label under it (background keeps
// its own symbol 0) and scores the label sequences.
inline double semantic_sequence_score(const Scanpath& pred, const Scanpath& gt, const ImageSample& image) {
    LabelSequence a, b;
    for (const auto& f : pred.fixations) a.push_back(image.label_at(f));
    for (const auto& f : gt.fixations) b.push_back(image.label_at(f));
    return sequence_score(a, b);
}

// ---------------------------------------------------------------------------
// Probability grids
// ---------------------------------------------------------------------------

struct ProbGrid {
    int h = 0, w = 0;
    std::vector<double> p;  // h*w, row-major

    int cell_of(const Fixation& f) const {
        const int col = std::min(w - 1, std::max(0, static_cast<int>(f.x * w)));
        const int row = std::min(h - 1, std::max(0, static_cast<int>(f.y * h)));
        return row * w + col;
    }
    double at(const Fixation& f) const { return p[static_cast<std::size_t>(cell_of(f))]; }
    double sum() const { return std::accumulate(p.begin(), p.end(), 0.0); }
};

template <typename S>
ProbGrid prob_grid_from(const Tensor<S>& map) {
    if (map.ndim() != 2) throw DimensionError("prob_grid_from: expected [h,w], got " + shape_str(map.shape()));
    ProbGrid g;
    g.h = map.dim(0);
    g.w = map.dim(1);
    g.p.resize(map.numel());
    for (std::size_t i = 0; i < map.numel(); ++i) g.p[i] = static_cast<double>(map.data()[i]);
    return g;
}

// ---------------------------------------------------------------------------
// Fixation density baseline
// ---------------------------------------------------------------------------

// Unit-mass Gaussian per training fixation (sigma = sigma_fraction * grid
// width), a uniform floor, then renormalization: strictly positive and sums
// to one.
inline ProbGrid build_density_baseline(const std::vector<const Scanpath*>& train_paths, int h, int w,
                                       double sigma_fraction, double floor_eps) {
    long long n_fix = 0;
    for (const auto* p : train_paths) n_fix += static_cast<long long>(p->fixations.size());
    if (n_fix == 0) throw InputError("missing baseline: no training fixations for this condition");

    ProbGrid g;
    g.h = h;
    g.w = w;
    g.p.assign(static_cast<std::size_t>(h) * w, 0.0);
    const double sigma = std::max(1e-6, sigma_fraction * w);
    std::vector<double> bump(g.p.size());
    for (const auto* path : train_paths) {
        for (const auto& f : path->fixations) {
            const double cx = f.x * w - 0.5, cy = f.y * h - 0.5;
            double mass = 0.0;
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    const double d2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
                    const double v = std::exp(-d2 / (2.0 * sigma * sigma));
                    bump[static_cast<std::size_t>(i) * w + j] = v;
                    mass += v;
                }
            for (std::size_t i = 0; i < g.p.size(); ++i) g.p[i] += bump[i] / mass;
        }
    }
    double total = 0.0;
    for (auto& v : g.p) {
        v = v / static_cast<double>(n_fix) + floor_eps;
        total += v;
    }
    for (auto& v : g.p) v /= total;
    return g;
}

// One baseline per condition: key 0 for free viewing, the target category
// for visual search.
struct BaselineSet {
    std::map<int, ProbGrid> by_condition;

    static int key_of(const TaskSpec& task) { return task.kind == TaskKind::FreeViewing ? 0 : task.target; }

    const ProbGrid& lookup(const TaskSpec& task) const {
        auto it = by_condition.find(key_of(task));
        if (it == by_condition.end())
            throw InputError("missing baseline for condition '" +
                             std::string(task.kind == TaskKind::FreeViewing ? "fv" : "vs target " +
                                         std::to_string(task.target)) + "'");
        return it->second;
    }
};

inline BaselineSet build_baseline_set(const std::vector<Scanpath>& train_paths, int h, int w, double sigma_fraction,
                                      double floor_eps = 1e-6) {
    std::map<int, std::vector<const Scanpath*>> grouped;
    for (const auto& p : train_paths) grouped[BaselineSet::key_of(p.task)].push_back(&p);
    BaselineSet set;
    for (const auto& [key, paths] : grouped)
        set.by_condition.emplace(key, build_density_baseline(paths, h, w, sigma_fraction, floor_eps));
    return set;
}

// ---------------------------------------------------------------------------
// Conditional saliency metrics
// ---------------------------------------------------------------------------

// Mean log2 likelihood ratio of the model against the baseline at the true
// next fixations; probabilities clamped at 1e-12.
inline double conditional_information_gain(const std::vector<std::pair<ProbGrid, Fixation>>& steps,
                                           const ProbGrid& baseline) {
    if (steps.empty()) throw InputError("conditional_information_gain: no fixation steps");
    double acc = 0.0;
    for (const auto& [grid, fix] : steps) {
        const double pm = std::max(1e-12, grid.at(fix));
        const double pb = std::max(1e-12, baseline.at(fix));
        acc += std::log2(pm) - std::log2(pb);
    }
    return acc / static_cast<double>(steps.size());
}

// Mean z-scored salience at the fixations (population standard deviation);
// zero-variance maps score 0 by convention.
inline double conditional_nss(const ProbGrid& map, const std::vector<Fixation>& fixations) {
    if (fixations.empty()) throw InputError("conditional_nss: no fixations");
    const double n = static_cast<double>(map.p.size());
    const double mean = map.sum() / n;
    double var = 0.0;
    for (double v : map.p) var += (v - mean) * (v - mean);
    var /= n;
    // Constant maps accumulate rounding noise; treat negligible relative
    // variance as zero.
    if (var <= 1e-20 * std::max(1.0, mean * mean)) return 0.0;
    const double inv_std = 1.0 / std::sqrt(var);
    double acc = 0.0;
    for (const auto& f : fixations) acc += (map.at(f) - mean) * inv_std;
    return acc / static_cast<double>(fixations.size());
}

// Exact ROC AUC via the midrank statistic: positives are the fixated cells,
// negatives all remaining cells. Equivalent to sweeping every threshold.
inline double conditional_auc(const ProbGrid& map, const std::vector<Fixation>& fixations) {
    if (fixations.empty()) throw InputError("conditional_auc: no fixations");
    std::vector<char> positive(map.p.size(), 0);
    for (const auto& f : fixations) positive[static_cast<std::size_t>(map.cell_of(f))] = 1;
    const long long P = std::count(positive.begin(), positive.end(), char(1));
    const long long N = static_cast<long long>(map.p.size()) - P;
    if (N == 0) throw InputError("conditional_auc: every cell is fixated");

    std::vector<std::size_t> order(map.p.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return map.p[a] < map.p[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && map.p[order[j + 1]] == map.p[order[i]]) ++j;
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k)
            if (positive[order[k]]) rank_sum_pos += midrank;
        i = j + 1;
    }
    return (rank_sum_pos - static_cast<double>(P) * (static_cast<double>(P) + 1.0) / 2.0) /
           (static_cast<double>(P) * static_cast<double>(N));
}

// ---------------------------------------------------------------------------
// Evaluation protocol
// ---------------------------------------------------------------------------

struct MetricsReport {
    double sem_ss = 0.0, ss = 0.0, cig = 0.0, cnss = 0.0, cauc = 0.0;
    bool has_sem_ss = true;
    long long scanpaths = 0;
    long long fixation_steps = 0;
};

struct EvalOptions {
    double cell_fraction = 1.0 / 8.0;
    std::uint64_t rollout_seed = 0;
    bool sample_rollout = false;  // argmax by default
    bool gt_as_pred = false;      // sanity mode: score ground truth against itself
};

// Deterministic uniform-policy rollout over heatmap cells; the reference
// floor for the sharing experiment.
inline Scanpath uniform_rollout(const ImageSample& image, const TaskSpec& task, int grid_h, int grid_w,
                                std::uint64_t seed, int max_len) {
    if (max_len < 1) throw ConfigError("uniform_rollout: max_len must be >= 1");
    Rng rng(seed);
    Scanpath path;
    path.image_id = image.id;
    path.task = task;
    path.fixations.push_back(center_fixation());
    while (static_cast<int>(path.fixations.size()) < max_len) {
        const int cell = static_cast<int>(rng.uniform_u64(static_cast<std::uint64_t>(grid_h) * grid_w));
        path.fixations.push_back(Fixation{(cell % grid_w + 0.5) / grid_w, (cell / grid_w + 0.5) / grid_h});
    }
    path.terminated = false;
    return path;
}

// Scores rollouts against ground truth (SS/SemSS per scanpath) and the
// teacher-forced next-fixation maps against the density baseline
// (cIG/cNSS/cAUC per fixation step).
template <typename S>
MetricsReport evaluate(const Model<S>& model, const Dataset& data, TaskKind task, const BaselineSet& baselines,
                       const EvalOptions& opts = {}) {
    MetricsReport report;
    double ss_acc = 0.0, sem_acc = 0.0, cig_acc = 0.0, cnss_acc = 0.0, cauc_acc = 0.0;
    bool segmentation_everywhere = true;

    for (const auto& gt : data.scanpaths) {
        if (gt.task.kind != task) continue;
        const ImageSample& image = data.image(gt.image_id);

        Scanpath pred;
        if (opts.gt_as_pred) {
            pred = gt;
        } else {
            pred = model.rollout(image, gt.task,
                                 opts.sample_rollout ? Model<S>::RolloutMode::Sample : Model<S>::RolloutMode::Argmax,
                                 opts.rollout_seed ^ fnv1a64(gt.image_id.data(), gt.image_id.size()),
                                 model.max_len_for(gt.task));
        }
        ss_acc += sequence_score(cluster_fixations(pred, opts.cell_fraction),
                                 cluster_fixations(gt, opts.cell_fraction));
        if (image.present_targets.empty()) segmentation_everywhere = false;
        sem_acc += semantic_sequence_score(pred, gt, image);
        ++report.scanpaths;

        const ProbGrid& baseline = baselines.lookup(gt.task);
        FeaturePyramid<S> pyramid =
            model.extract_pyramid(nullptr, Model<S>::image_tensor(image), branch_of(gt.task));
        std::vector<std::pair<ProbGrid, Fixation>> ig_steps;
        for (std::size_t t = 0; t + 1 < gt.fixations.size(); ++t) {
            std::vector<Fixation> prefix(gt.fixations.begin(), gt.fixations.begin() + static_cast<std::ptrdiff_t>(t) + 1);
            HeatmapPrediction<S> step = model.step_from_pyramid(nullptr, pyramid, gt.task, prefix);
            ProbGrid grid = prob_grid_from(step.prob);
            if (grid.h * grid.w != static_cast<int>(baseline.p.size()))
                throw InputError("evaluate: baseline grid does not match the model heatmap grid");
            const Fixation& next = gt.fixations[t + 1];
            cnss_acc += conditional_nss(grid, {next});
            cauc_acc += conditional_auc(grid, {next});
            ig_steps.emplace_back(std::move(grid), next);
            ++report.fixation_steps;
        }
        if (!ig_steps.empty()) cig_acc += conditional_information_gain(ig_steps, baseline) * static_cast<double>(ig_steps.size());
    }

    if (report.scanpaths == 0) throw InputError("evaluate: dataset has no ground truth for this task");
    report.ss = ss_acc / static_cast<double>(report.scanpaths);
    report.has_sem_ss = segmentation_everywhere;
    report.sem_ss = segmentation_everywhere ? sem_acc / static_cast<double>(report.scanpaths) : 0.0;
    if (report.fixation_steps > 0) {
        report.cig = cig_acc / static_cast<double>(report.fixation_steps);
        report.cnss = cnss_acc / static_cast<double>(report.fixation_steps);
        report.cauc = cauc_acc / static_cast<double>(report.fixation_steps);
    }
    return report;
}

// Delimited report row; column order is SemSS, SS, cIG, cNSS, cAUC.
inline std::string metrics_header() { return "method,SemSS,SS,cIG,cNSS,cAUC"; }

inline std::string metrics_row(const std::string& method, const MetricsReport& r) {
    std::string row = method + ",";
    row += (r.has_sem_ss ? format_fixed(r.sem_ss, 4) : std::string(""));
    row += "," + format_fixed(r.ss, 4);
    row += "," + format_fixed(r.cig, 4);
    row += "," + format_fixed(r.cnss, 4);
    row += "," + format_fixed(r.cauc, 4);
    return row;
}

}  // namespace scanshare
