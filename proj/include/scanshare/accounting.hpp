#pragma once

// Parameter counting and FLOP estimation per architecture component, plus
// sharing-reduction reports. FLOPs are measured by running the component
// forward under a counting tape; every arithmetic op contributes its
// analytic cost (one multiply-accumulate = 2 FLOPs, data movement free).
// Branch-path figures use prefix length 1 at a stated input size.

#include <string>
#include <vector>

#include <json.hpp>

#include "scanshare/common.hpp"
#include "scanshare/metrics.hpp"
#include "scanshare/model.hpp"

namespace scanshare {

struct CostReport {
    struct Row {
        std::string name;
        long long params = 0;
        long long flops = 0;
    };
    std::vector<Row> rows;
    int input_width = 0, input_height = 0;

    long long params_total() const {
        long long t = 0;
        for (const auto& r : rows) t += r.params;
        return t;
    }
    long long flops_total() const {
        long long t = 0;
        for (const auto& r : rows) t += r.flops;
        return t;
    }
};

// Forward FLOPs of one branch path, split by component.
struct BranchFlops {
    long long encoder = 0;
    long long decoder = 0;         // all decoder layers on this branch's path
    long long decoder_shared = 0;  // the shared prefix portion of `decoder`
    long long foveation_memory = 0;
    long long aggregation = 0;
    long long heads = 0;

    long long total() const { return encoder + decoder + foveation_memory + aggregation + heads; }
};

template <typename S>
BranchFlops branch_flops(const Model<S>& model, Branch branch, int H, int W) {
    if (H % 32 != 0 || W % 32 != 0) throw InputError("estimate_flops: input size must be divisible by 32");
    BranchFlops out;
    Tensor<S> image({3, H, W});
    const TaskSpec task = branch == Branch::FV ? TaskSpec::free_viewing() : TaskSpec::visual_search(1);

    std::array<Tensor<S>, 4> base;
    {
        Tape<S> t;
        base = model.encode_pixels(&t, image);
        out.encoder = t.flops();
    }
    {
        Tape<S> t;
        (void)model.decode_shared_only(&t, base);
        out.decoder_shared = t.flops();
    }
    FeaturePyramid<S> pyramid;
    {
        Tape<S> t;
        pyramid = model.decode_pixels(&t, base, branch);
        out.decoder = t.flops();
    }
    FoveationResult<S> fov;
    MemoryState<S> mem;
    {
        Tape<S> t;
        fov = model.foveate(&t, pyramid, {center_fixation()}, branch);
        mem = model.encode_memory(&t, fov.tokens, branch);
        out.foveation_memory = t.flops();
    }
    Tensor<S> queries;
    {
        Tape<S> t;
        queries = model.aggregate(&t, mem, task);
        out.aggregation = t.flops();
    }
    {
        Tape<S> t;
        Tensor<S> row = slice_rows(&t, queries, 0, 1);
        (void)model.predict_heatmap(&t, row, pyramid, branch);
        out.heads = t.flops();
    }
    return out;
}

// Forward FLOPs of one named component on the visual-search path.
template <typename S>
long long estimate_flops(const Model<S>& model, const std::string& component, int H, int W) {
    const BranchFlops f = branch_flops(model, Branch::VS, H, W);
    if (component == "pixel_encoder") return f.encoder;
    if (component == "pixel_decoder") return f.decoder;
    if (component == "pixel_decoder_shared") return f.decoder_shared;
    if (component == "foveation") return f.foveation_memory;
    if (component == "aggregation") return f.aggregation;
    if (component == "fixation_prediction") return f.heads;
    if (component == "total") return f.total();
    throw UsageError("unknown component '" + component + "'");
}

// Full forward on a single tape; equals the sum of the component counts.
template <typename S>
long long pipeline_flops(const Model<S>& model, Branch branch, int H, int W) {
    Tensor<S> image({3, H, W});
    const TaskSpec task = branch == Branch::FV ? TaskSpec::free_viewing() : TaskSpec::visual_search(1);
    Tape<S> t;
    FeaturePyramid<S> pyramid = model.extract_pyramid(&t, image, branch);
    (void)model.step_from_pyramid(&t, pyramid, task, {center_fixation()});
    return t.flops();
}

// Five-row cost table for one branch's forward path: encoder, decoder,
// foveation (with its memory encoder), aggregation, fixation prediction.
template <typename S>
CostReport cost_report(const Model<S>& model, Branch branch, int H, int W) {
    const BranchFlops f = branch_flops(model, branch, H, W);
    const bool vs = branch == Branch::VS;
    CostReport rep;
    rep.input_width = W;
    rep.input_height = H;
    rep.rows = {
        {"pixel_encoder", count_parameters(model, {partition::kEncoder}), f.encoder},
        {"pixel_decoder",
         count_parameters(model, {partition::kDecoderShared, vs ? partition::kDecoderVS : partition::kDecoderFV}),
         f.decoder},
        {"foveation",
         count_parameters(model, {vs ? partition::kFoveationVS : partition::kFoveationFV,
                                  vs ? partition::kMemoryVS : partition::kMemoryFV}),
         f.foveation_memory},
        {"aggregation", count_parameters(model, {vs ? partition::kAggregationVS : partition::kAggregationFV}),
         f.aggregation},
        {"fixation_prediction", count_parameters(model, {vs ? partition::kHeadsVS : partition::kHeadsFV}), f.heads},
    };
    return rep;
}

// ---------------------------------------------------------------------------
// Sharing reports
// ---------------------------------------------------------------------------

struct SharingRow {
    std::string split;
    double reduced_trainable_params_pct = 0.0;
    double shared_flops_pct = 0.0;
};

struct SharingReport {
    std::vector<SharingRow> rows;
};

// Percentage arithmetic shared by the toy measurements and the published
// reproduction: shared cost over the trainable-path totals, two decimals.
inline SharingRow sharing_row(const std::string& split, double shared_params, double trainable_params_total,
                              double shared_flops, double trainable_flops_total) {
    if (trainable_params_total <= 0.0 || trainable_flops_total <= 0.0)
        throw InputError("sharing_row: totals must be positive");
    if (shared_params > trainable_params_total * (1.0 + 1e-9) || shared_flops > trainable_flops_total * (1.0 + 1e-9))
        throw InputError("sharing_row: shared cost exceeds the total");
    SharingRow row;
    row.split = split;
    row.reduced_trainable_params_pct = 100.0 * shared_params / trainable_params_total;
    row.shared_flops_pct = 100.0 * shared_flops / trainable_flops_total;
    return row;
}

// Measured sharing report for this artifact's model: one row per split
// configuration, built from parameter counts and counted FLOPs of the
// visual-search path (the trainable path; the frozen encoder is excluded,
// matching the reference protocol).
inline SharingReport measured_sharing_report(const ModelConfig& cfg, int H, int W, std::uint64_t seed = 1) {
    if (cfg.decoder_layers != 6)
        throw ConfigError("the six split configurations require a 6-layer decoder");
    SharingReport report;
    for (const auto& name : SplitConfig::names()) {
        Model<float> model(cfg, SplitConfig::from_name(name), seed);
        const BranchFlops f = branch_flops(model, Branch::VS, H, W);
        const double shared_params = static_cast<double>(count_parameters(model, {partition::kDecoderShared}));
        const double trainable_total = static_cast<double>(count_parameters(
            model, {partition::kDecoderShared, partition::kDecoderVS, partition::kFoveationVS, partition::kMemoryVS,
                    partition::kAggregationVS, partition::kHeadsVS}));
        const double shared_flops = static_cast<double>(f.decoder_shared);
        const double trainable_flops = static_cast<double>(f.total() - f.encoder);
        report.rows.push_back(sharing_row(name, shared_params, trainable_total, shared_flops, trainable_flops));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Published-cost reproduction
// ---------------------------------------------------------------------------

// Per-module published costs (params in millions, GFLOPs), five rows named
// pixel_encoder, pixel_decoder, foveation, aggregation, fixation_prediction.
struct PublishedCosts {
    struct Row {
        std::string name;
        double params_millions = 0.0;
        double gflops = 0.0;
    };
    std::vector<Row> rows;

    const Row& row(const std::string& name) const {
        for (const auto& r : rows)
            if (r.name == name) return r;
        throw FormatError("published costs: missing module '" + name + "'");
    }

    static PublishedCosts from_json(const nlohmann::json& j) {
        PublishedCosts pc;
        try {
            for (const auto& m : j.at("modules"))
                pc.rows.push_back(Row{m.at("name").get<std::string>(), m.at("params_millions").get<double>(),
                                      m.at("gflops").get<double>()});
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("malformed published-cost table: ") + e.what());
        }
        for (const char* required :
             {"pixel_encoder", "pixel_decoder", "foveation", "aggregation", "fixation_prediction"})
            pc.row(required);
        return pc;
    }
};

// Totals and the late-split row recomputed from a published per-module cost
// table. With the encoder frozen, the trainable totals are the non-encoder
// sums; at the late split the whole decoder is shared.
struct ReproductionCheck {
    double total_params_m = 0.0;
    double trainable_params_m = 0.0;
    double total_gflops = 0.0;
    double trainable_gflops = 0.0;
    SharingRow late_split;
};

inline ReproductionCheck reproduce_sharing_arithmetic(const PublishedCosts& pc) {
    ReproductionCheck out;
    for (const auto& r : pc.rows) {
        out.total_params_m += r.params_millions;
        out.total_gflops += r.gflops;
        if (r.name != "pixel_encoder") {
            out.trainable_params_m += r.params_millions;
            out.trainable_gflops += r.gflops;
        }
    }
    const auto& dec = pc.row("pixel_decoder");
    out.late_split =
        sharing_row("LS", dec.params_millions, out.trainable_params_m, dec.gflops, out.trainable_gflops);
    return out;
}

}  // namespace scanshare
