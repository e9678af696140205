#pragma once

// Losses and the two-stage training scheme. Stage 1 trains the
// free-viewing branch together with the encoder and the shared decoder
// prefix. Stage 2 freezes everything learned in stage 1 and trains only
// the visual-search branch. The end-to-end baseline trains the full
// decoder plus the visual-search branch on top of a frozen encoder.
// Frozen parameters have requires_grad cleared for the duration of a run,
// so no gradient work happens on them and they stay bit-identical.

#include <cmath>
#include <cstring>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scanshare/common.hpp"
#include "scanshare/data.hpp"
#include "scanshare/model.hpp"
#include "scanshare/tensor.hpp"

namespace scanshare {

struct TrainConfig {
    double learning_rate = 0.0001;
    int batch_size = 32;
    int epochs = 15;
    double weight_decay = 1e-4;
    double focal_gamma = 2.0;
    double focal_alpha = 4.0;
    double gt_sigma_fraction = 1.0 / 32.0;  // heatmap target std as a fraction of image width
    double termination_weight = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (learning_rate <= 0 || batch_size <= 0 || epochs <= 0)
            throw ConfigError("learning rate, batch size and epochs must be positive");
    }

    nlohmann::json to_json() const {
        return {{"learning_rate", learning_rate}, {"batch_size", batch_size},
                {"epochs", epochs},               {"weight_decay", weight_decay},
                {"focal_gamma", focal_gamma},     {"focal_alpha", focal_alpha},
                {"gt_sigma_fraction", gt_sigma_fraction}, {"termination_weight", termination_weight},
                {"seed", seed}};
    }
};

// ---------------------------------------------------------------------------
// Targets and losses
// ---------------------------------------------------------------------------

// Gaussian heatmap target on the 1/4 grid: exact 1 at the fixation's cell,
// exp(-d^2 / 2 sigma^2) around it, sigma in grid cells.
template <typename S>
Tensor<S> make_target_heatmap(int h, int w, const Fixation& fix, double sigma_fraction) {
    const double sigma = std::max(1e-6, sigma_fraction * w);
    const int j0 = std::min(w - 1, std::max(0, static_cast<int>(fix.x * w)));
    const int i0 = std::min(h - 1, std::max(0, static_cast<int>(fix.y * h)));
    Tensor<S> t({h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double d2 = static_cast<double>((i - i0) * (i - i0) + (j - j0) * (j - j0));
            t(i, j) = static_cast<S>(std::exp(-d2 / (2.0 * sigma * sigma)));
        }
    t(i0, j0) = S(1);
    return t;
}

namespace detail {

// x^p for strictly positive x, via exp(p * log x).
template <typename S>
Tensor<S> pow_positive(Tape<S>* tape, const Tensor<S>& x, double p) {
    return exp_op(tape, mul_scalar(tape, log_op(tape, x), static_cast<S>(p)));
}

}  // namespace detail

// Penalty-reduced pixelwise focal loss against a Gaussian-peak target:
//   peak pixels:  -(1-p)^gamma log p
//   elsewhere:    -(1-y)^alpha p^gamma log(1-p)
// averaged over the number of peak pixels. Probabilities are clamped to
// [1e-7, 1-1e-7] before any logarithm.
template <typename S>
Tensor<S> focal_loss(Tape<S>* tape, const Tensor<S>& pred_prob, const Tensor<S>& gt, double gamma = 2.0,
                     double alpha = 4.0) {
    if (pred_prob.shape() != gt.shape())
        throw DimensionError("focal_loss: prediction " + shape_str(pred_prob.shape()) + " vs target " +
                             shape_str(gt.shape()));
    const std::size_t n = gt.numel();
    Tensor<S> pos_mask(gt.shape());
    Tensor<S> neg_weight(gt.shape());
    long long n_pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double y = static_cast<double>(gt.data()[i]);
        if (y < 0.0 || y > 1.0) throw InputError("focal_loss: target values must lie in [0,1]");
        if (y == 1.0) {
            pos_mask.data()[i] = S(1);
            ++n_pos;
        } else {
            neg_weight.data()[i] = static_cast<S>(std::pow(1.0 - y, alpha));
        }
    }
    if (n_pos == 0) throw InputError("focal_loss: target has no peak pixel");

    Tensor<S> p = clamp(tape, pred_prob, static_cast<S>(1e-7), static_cast<S>(1.0 - 1e-7));
    Tensor<S> one_minus = add_scalar(tape, mul_scalar(tape, p, S(-1)), S(1));
    Tensor<S> pos_term = mul(tape, pos_mask, mul(tape, detail::pow_positive(tape, one_minus, gamma), log_op(tape, p)));
    Tensor<S> neg_term =
        mul(tape, neg_weight, mul(tape, detail::pow_positive(tape, p, gamma), log_op(tape, one_minus)));
    Tensor<S> total = sum(tape, add(tape, pos_term, neg_term));
    return mul_scalar(tape, total, static_cast<S>(-1.0 / static_cast<double>(n_pos)));
}

// Binary cross entropy on a scalar probability, clamped away from 0 and 1.
template <typename S>
Tensor<S> termination_loss(Tape<S>* tape, const Tensor<S>& pred, int label) {
    if (pred.numel() != 1) throw DimensionError("termination_loss: prediction must be scalar");
    if (label != 0 && label != 1) throw InputError("termination_loss: label must be 0 or 1");
    Tensor<S> flat = reshape(tape, pred, {1});
    Tensor<S> p = clamp(tape, flat, static_cast<S>(1e-7), static_cast<S>(1.0 - 1e-7));
    if (label == 1) return mul_scalar(tape, sum(tape, log_op(tape, p)), S(-1));
    Tensor<S> one_minus = add_scalar(tape, mul_scalar(tape, p, S(-1)), S(1));
    return mul_scalar(tape, sum(tape, log_op(tape, one_minus)), S(-1));
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

// Adam with decoupled weight decay; moment state kept in double.
template <typename S>
class AdamW {
public:
    AdamW(std::vector<Tensor<S>> params, double lr, double weight_decay)
        : params_(std::move(params)), lr_(lr), wd_(weight_decay) {
        slots_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            slots_[i].m.assign(params_[i].numel(), 0.0);
            slots_[i].v.assign(params_[i].numel(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            Tensor<S>& p = params_[pi];
            if (!p.has_grad()) continue;
            auto& slot = slots_[pi];
            const auto& g = p.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double gi = static_cast<double>(g[i]);
                slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * gi;
                slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * gi * gi;
                const double mhat = slot.m[i] / bc1;
                const double vhat = slot.v[i] / bc2;
                const double value = static_cast<double>(p.data()[i]);
                p.data()[i] = static_cast<S>(value - lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * value));
            }
        }
    }

private:
    struct Slot {
        std::vector<double> m, v;
    };
    std::vector<Tensor<S>> params_;
    std::vector<Slot> slots_;
    double lr_, wd_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;
};

struct Checkpoint {
    int version = kCheckpointVersion;
    std::string stage;  // "fv" | "vs_shared" | "vs_e2e"
    nlohmann::json config;
    std::vector<CheckpointEntry> entries;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw FormatError("truncated checkpoint");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos++])) << (8 * i);
    return v;
}
inline std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
    if (pos + 8 > in.size()) throw FormatError("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos++])) << (8 * i);
    return v;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::string out;
    out += "SSCP";
    detail::put_u32(out, static_cast<std::uint32_t>(ckpt.version));
    nlohmann::json header = {{"stage", ckpt.stage}, {"config", ckpt.config}};
    const std::string hs = header.dump();
    detail::put_u64(out, hs.size());
    out += hs;
    detail::put_u64(out, ckpt.entries.size());
    for (const auto& e : ckpt.entries) {
        detail::put_u64(out, e.name.size());
        out += e.name;
        detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
        for (int d : e.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
        detail::put_u64(out, e.values.size());
        for (float v : e.values) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            detail::put_u32(out, bits);
        }
    }
    write_binary_file(path, out);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    const std::string in = read_binary_file(path);
    std::size_t pos = 0;
    if (in.size() < 8 || in.compare(0, 4, "SSCP") != 0) throw FormatError("not a checkpoint file: " + path);
    pos = 4;
    Checkpoint ckpt;
    ckpt.version = static_cast<int>(detail::get_u32(in, pos));
    if (ckpt.version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    const std::uint64_t hlen = detail::get_u64(in, pos);
    if (pos + hlen > in.size()) throw FormatError("truncated checkpoint");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(in.substr(pos, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
    }
    pos += hlen;
    ckpt.stage = header.value("stage", "");
    ckpt.config = header.value("config", nlohmann::json::object());
    const std::uint64_t n = detail::get_u64(in, pos);
    for (std::uint64_t i = 0; i < n; ++i) {
        CheckpointEntry e;
        const std::uint64_t nl = detail::get_u64(in, pos);
        if (pos + nl > in.size()) throw FormatError("truncated checkpoint");
        e.name = in.substr(pos, nl);
        pos += nl;
        const std::uint32_t nd = detail::get_u32(in, pos);
        for (std::uint32_t d = 0; d < nd; ++d) e.shape.push_back(static_cast<int>(detail::get_u32(in, pos)));
        const std::uint64_t nv = detail::get_u64(in, pos);
        e.values.resize(nv);
        for (std::uint64_t v = 0; v < nv; ++v) {
            std::uint32_t bits = detail::get_u32(in, pos);
            std::memcpy(&e.values[v], &bits, 4);
        }
        ckpt.entries.push_back(std::move(e));
    }
    if (pos != in.size()) throw FormatError("trailing bytes in checkpoint: " + path);
    return ckpt;
}

inline Checkpoint checkpoint_from_model(const Model<float>& model, const std::string& stage,
                                        nlohmann::json extra_config = {}) {
    Checkpoint ckpt;
    ckpt.stage = stage;
    ckpt.config = {{"split", model.split().name()}, {"model", model.config().to_json()}};
    if (!extra_config.is_null() && !extra_config.empty()) ckpt.config["train"] = std::move(extra_config);
    for (const auto& e : model.params().entries())
        ckpt.entries.push_back(CheckpointEntry{e.name, e.tensor.shape(), e.tensor.values()});
    return ckpt;
}

// Rebuilds an identically configured model from a checkpoint's config echo
// and loads the stored values into it.
inline Model<float> model_from_checkpoint(const Checkpoint& ckpt, std::uint64_t seed = 0);

inline void apply_checkpoint(Model<float>& model, const Checkpoint& ckpt) {
    auto& entries = model.params().entries();
    const std::size_t common = std::min(entries.size(), ckpt.entries.size());
    for (std::size_t i = 0; i < common; ++i) {
        const auto& src = ckpt.entries[i];
        const auto& dst = entries[i];
        if (src.name != dst.name || src.shape != dst.tensor.shape())
            throw FormatError("checkpoint mismatch at tensor '" + src.name + "' (model has '" + dst.name + "' " +
                              shape_str(dst.tensor.shape()) + ", file has " + shape_str(src.shape) + ")");
    }
    if (entries.size() != ckpt.entries.size()) {
        const auto& extra =
            entries.size() > ckpt.entries.size() ? entries[common].name : ckpt.entries[common].name;
        throw FormatError("checkpoint mismatch at tensor '" + extra + "': present on only one side (" +
                          std::to_string(ckpt.entries.size()) + " file tensors vs " + std::to_string(entries.size()) +
                          " model tensors)");
    }
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i].tensor.values() = ckpt.entries[i].values;
}

inline Model<float> model_from_checkpoint(const Checkpoint& ckpt, std::uint64_t seed) {
    if (!ckpt.config.contains("model") || !ckpt.config.contains("split"))
        throw FormatError("checkpoint lacks a model config echo");
    ModelConfig cfg = ModelConfig::from_json(ckpt.config.at("model"));
    SplitConfig split = SplitConfig::from_name(ckpt.config.at("split").get<std::string>());
    Model<float> model(cfg, split, seed);
    apply_checkpoint(model, ckpt);
    return model;
}

// ---------------------------------------------------------------------------
// Stage training
// ---------------------------------------------------------------------------

enum class Stage { FV, VSShared, VSEndToEnd };

inline std::string stage_tag(Stage s) {
    switch (s) {
        case Stage::FV: return "fv";
        case Stage::VSShared: return "vs_shared";
        default: return "vs_e2e";
    }
}

inline std::vector<std::string> trainable_partitions(Stage stage) {
    switch (stage) {
        case Stage::FV:
            return {partition::kEncoder,     partition::kDecoderShared, partition::kDecoderFV,
                    partition::kFoveationFV, partition::kMemoryFV,      partition::kAggregationFV,
                    partition::kHeadsFV};
        case Stage::VSShared:
            return {partition::kDecoderVS, partition::kFoveationVS, partition::kMemoryVS, partition::kAggregationVS,
                    partition::kHeadsVS};
        default:
            return {partition::kDecoderShared, partition::kDecoderVS,     partition::kFoveationVS,
                    partition::kMemoryVS,      partition::kAggregationVS, partition::kHeadsVS};
    }
}

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<double> epoch_losses;
};

namespace detail {

// Teacher-forced loss for one scanpath: the pyramid is decoded once and
// reused across steps. Heatmap targets exist for every step with a next
// fixation; the termination target is 0 there and 1 at a terminated end.
template <typename S>
Tensor<S> scanpath_loss(const Model<S>& model, Tape<S>* tape, const ImageSample& image, const Scanpath& path,
                        const TrainConfig& cfg) {
    FeaturePyramid<S> pyr = model.extract_pyramid(tape, Model<S>::image_tensor(image), branch_of(path.task));
    Tensor<S> heat_acc, term_acc;
    int n_heat = 0, n_term = 0;
    const int L = static_cast<int>(path.fixations.size());
    for (int t = 0; t < L; ++t) {
        const bool has_next = t < L - 1;
        if (!has_next && !path.terminated) break;
        std::vector<Fixation> prefix(path.fixations.begin(), path.fixations.begin() + t + 1);
        HeatmapPrediction<S> pred = model.step_from_pyramid(tape, pyr, path.task, prefix);
        if (has_next) {
            Tensor<S> target =
                make_target_heatmap<S>(pred.h, pred.w, path.fixations[static_cast<std::size_t>(t) + 1], cfg.gt_sigma_fraction);
            Tensor<S> fl = focal_loss(tape, pred.prob, target, cfg.focal_gamma, cfg.focal_alpha);
            heat_acc = heat_acc.defined() ? add(tape, heat_acc, fl) : fl;
            ++n_heat;
        }
        Tensor<S> tl = termination_loss(tape, pred.termination, has_next ? 0 : 1);
        term_acc = term_acc.defined() ? add(tape, term_acc, tl) : tl;
        ++n_term;
    }
    Tensor<S> loss = Tensor<S>::scalar(S(0));
    if (heat_acc.defined()) loss = add(tape, loss, mul_scalar(tape, heat_acc, static_cast<S>(1.0 / n_heat)));
    if (term_acc.defined())
        loss = add(tape, loss,
                   mul_scalar(tape, term_acc, static_cast<S>(cfg.termination_weight / n_term)));
    return loss;
}

template <typename S>
TrainResult train_stage(Model<S>& model, const Dataset& data, const TrainConfig& cfg, Stage stage,
                        std::ostream* log) {
    cfg.validate();
    const TaskKind task = stage == Stage::FV ? TaskKind::FreeViewing : TaskKind::VisualSearch;
    std::vector<const Scanpath*> paths;
    for (const auto& p : data.scanpaths)
        if (p.task.kind == task) paths.push_back(&p);
    if (paths.empty()) throw ConfigError("no scanpaths for stage " + stage_tag(stage) + " in the dataset");

    const auto parts = trainable_partitions(stage);
    std::vector<Tensor<S>> trainable = model.params().tensors_in(parts);

    // Freeze everything else for the duration of the run.
    for (auto& e : model.params().entries()) e.tensor.set_requires_grad(false);
    for (auto& t : trainable) t.set_requires_grad(true);

    AdamW<S> opt(trainable, cfg.learning_rate, cfg.weight_decay);
    Rng order_rng(cfg.seed ^ 0x0ddba11ull);
    TrainResult result;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<const Scanpath*> order = paths;
        order_rng.shuffle(order);
        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            Tape<S> tape;
            Tensor<S> batch_loss;
            for (std::size_t i = start; i < end; ++i) {
                Tensor<S> l = scanpath_loss(model, &tape, data.image(order[i]->image_id), *order[i], cfg);
                batch_loss = batch_loss.defined() ? add(&tape, batch_loss, l) : l;
            }
            batch_loss = mul_scalar(&tape, batch_loss, static_cast<S>(1.0 / static_cast<double>(end - start)));
            epoch_loss += static_cast<double>(batch_loss(0));
            ++batches;
            tape.backward(batch_loss);
            opt.step();
            for (auto& t : trainable) t.zero_grad();
        }
        result.epoch_losses.push_back(epoch_loss / std::max(1, batches));
        if (log) (*log) << "epoch " << (epoch + 1) << "/" << cfg.epochs << " loss " << result.epoch_losses.back()
                        << "\n";
    }

    for (auto& e : model.params().entries()) e.tensor.set_requires_grad(true);
    return result;
}

}  // namespace detail

inline TrainResult train_stage1_fv(Model<float>& model, const Dataset& data, const TrainConfig& cfg,
                                   std::ostream* log = nullptr) {
    TrainResult r = detail::train_stage(model, data, cfg, Stage::FV, log);
    r.checkpoint = checkpoint_from_model(model, stage_tag(Stage::FV), cfg.to_json());
    return r;
}

inline TrainResult train_stage2_vs_shared(Model<float>& model, const Checkpoint& fv_checkpoint, const Dataset& data,
                                          const TrainConfig& cfg, std::ostream* log = nullptr) {
    if (fv_checkpoint.stage != stage_tag(Stage::FV))
        throw UsageError("stage-2 training needs an fv checkpoint, got stage '" + fv_checkpoint.stage + "'");
    apply_checkpoint(model, fv_checkpoint);
    TrainResult r = detail::train_stage(model, data, cfg, Stage::VSShared, log);
    r.checkpoint = checkpoint_from_model(model, stage_tag(Stage::VSShared), cfg.to_json());
    return r;
}

inline TrainResult train_end_to_end_vs(Model<float>& model, const Checkpoint& init_checkpoint, const Dataset& data,
                                       const TrainConfig& cfg, std::ostream* log = nullptr) {
    apply_checkpoint(model, init_checkpoint);
    TrainResult r = detail::train_stage(model, data, cfg, Stage::VSEndToEnd, log);
    r.checkpoint = checkpoint_from_model(model, stage_tag(Stage::VSEndToEnd), cfg.to_json());
    return r;
}

}  // namespace scanshare
