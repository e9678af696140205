#pragma once

// Dual-branch scanpath prediction model: a strided convolutional pixel
// encoder, a pixel decoder of cross-scale sampling-attention layers with a
// configurable shared prefix and per-task suffixes, foveation of the
// feature pyramid around past fixations, a transformer-encoder memory, a
// query-based aggregation decoder, and fixation-heatmap plus termination
// heads. Free-viewing and visual-search branches share the encoder and the
// decoder prefix; everything downstream is task-specific.

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "scanshare/common.hpp"
#include "scanshare/data.hpp"
#include "scanshare/nn.hpp"
#include "scanshare/tensor.hpp"

namespace scanshare {

struct ModelConfig {
    int decoder_layers = 6;
    int decoder_heads = 8;
    int memory_layers = 3;
    int memory_heads = 4;
    int aggregation_layers = 6;
    int aggregation_heads = 4;
    int queries_vs = 18;
    int queries_fv = 1;
    int feature_dim = 64;
    int deform_points = 4;  // sampled points per head per scale in decoder layers
    int ffn_mult = 2;
    int max_len_fv = 10;
    int max_len_vs = 7;

    nlohmann::json to_json() const {
        return {{"decoder_layers", decoder_layers},
                {"decoder_heads", decoder_heads},
                {"memory_layers", memory_layers},
                {"memory_heads", memory_heads},
                {"aggregation_layers", aggregation_layers},
                {"aggregation_heads", aggregation_heads},
                {"queries_vs", queries_vs},
                {"queries_fv", queries_fv},
                {"feature_dim", feature_dim},
                {"deform_points", deform_points},
                {"ffn_mult", ffn_mult},
                {"max_len_fv", max_len_fv},
                {"max_len_vs", max_len_vs}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig cfg;
        cfg.decoder_layers = j.value("decoder_layers", cfg.decoder_layers);
        cfg.decoder_heads = j.value("decoder_heads", cfg.decoder_heads);
        cfg.memory_layers = j.value("memory_layers", cfg.memory_layers);
        cfg.memory_heads = j.value("memory_heads", cfg.memory_heads);
        cfg.aggregation_layers = j.value("aggregation_layers", cfg.aggregation_layers);
        cfg.aggregation_heads = j.value("aggregation_heads", cfg.aggregation_heads);
        cfg.queries_vs = j.value("queries_vs", cfg.queries_vs);
        cfg.queries_fv = j.value("queries_fv", cfg.queries_fv);
        cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);
        cfg.deform_points = j.value("deform_points", cfg.deform_points);
        cfg.ffn_mult = j.value("ffn_mult", cfg.ffn_mult);
        cfg.max_len_fv = j.value("max_len_fv", cfg.max_len_fv);
        cfg.max_len_vs = j.value("max_len_vs", cfg.max_len_vs);
        return cfg;
    }

    void validate() const {
        if (decoder_layers < 1 || memory_layers < 1 || aggregation_layers < 1)
            throw ConfigError("layer counts must be positive");
        if (feature_dim % 4 != 0) throw ConfigError("feature_dim must be divisible by 4");
        for (int heads : {decoder_heads, memory_heads, aggregation_heads}) {
            if (heads < 1 || feature_dim % heads != 0)
                throw ConfigError("feature_dim " + std::to_string(feature_dim) + " not divisible by head count " +
                                  std::to_string(heads));
        }
        if (queries_fv != 1) throw ConfigError("free-viewing uses a single query");
        if (queries_vs < 1 || queries_vs > kMaxCategories)
            throw ConfigError("queries_vs must be in [1," + std::to_string(kMaxCategories) + "]");
        if (deform_points < 1) throw ConfigError("deform_points must be positive");
        if (max_len_fv < 1 || max_len_vs < 1) throw ConfigError("rollout maxima must be >= 1");
    }
};

// Number of pixel-decoder layers shared between the two branches. Six
// shared layers is the late split; fewer shared layers leave
// (decoder_layers - shared) task-specific layers per branch.
struct SplitConfig {
    int shared_layers = 6;

    static const std::vector<std::string>& names() {
        static const std::vector<std::string> n = {"LS", "ES51", "ES42", "ES33", "ES24", "ES15"};
        return n;
    }

    static SplitConfig from_name(const std::string& name) {
        static const std::map<std::string, int> table = {{"LS", 6},   {"ES51", 5}, {"ES42", 4},
                                                         {"ES33", 3}, {"ES24", 2}, {"ES15", 1}};
        auto it = table.find(name);
        if (it != table.end()) return SplitConfig{it->second};
        // Numeric form S<k> for decoders that do not have six layers.
        if (name.size() >= 2 && name[0] == 'S') {
            try {
                return SplitConfig{std::stoi(name.substr(1))};
            } catch (const std::exception&) {
            }
        }
        std::string valid;
        for (const auto& n : names()) valid += (valid.empty() ? "" : ", ") + n;
        throw UsageError("unknown split '" + name + "', expected one of: " + valid + ", or S<k>");
    }

    std::string name() const {
        for (const auto& n : names())
            if (from_name(n).shared_layers == shared_layers) return n;
        return "S" + std::to_string(shared_layers);
    }
};

enum class Branch { FV, VS };

inline Branch branch_of(const TaskSpec& task) {
    return task.kind == TaskKind::FreeViewing ? Branch::FV : Branch::VS;
}

// Parameter partitions; every parameter belongs to exactly one.
namespace partition {
inline constexpr const char* kEncoder = "encoder";
inline constexpr const char* kDecoderShared = "decoder_shared";
inline constexpr const char* kDecoderFV = "decoder_fv";
inline constexpr const char* kDecoderVS = "decoder_vs";
inline constexpr const char* kFoveationFV = "foveation_fv";
inline constexpr const char* kFoveationVS = "foveation_vs";
inline constexpr const char* kMemoryFV = "memory_fv";
inline constexpr const char* kMemoryVS = "memory_vs";
inline constexpr const char* kAggregationFV = "aggregation_fv";
inline constexpr const char* kAggregationVS = "aggregation_vs";
inline constexpr const char* kHeadsFV = "heads_fv";
inline constexpr const char* kHeadsVS = "heads_vs";

inline const std::vector<std::string>& all() {
    static const std::vector<std::string> v = {kEncoder,     kDecoderShared, kDecoderFV,      kDecoderVS,
                                               kFoveationFV, kFoveationVS,   kMemoryFV,       kMemoryVS,
                                               kAggregationFV, kAggregationVS, kHeadsFV,      kHeadsVS};
    return v;
}

inline std::vector<std::string> branch_only(Branch b) {
    if (b == Branch::FV) return {kDecoderFV, kFoveationFV, kMemoryFV, kAggregationFV, kHeadsFV};
    return {kDecoderVS, kFoveationVS, kMemoryVS, kAggregationVS, kHeadsVS};
}
}  // namespace partition

template <typename S>
struct FeaturePyramid {
    std::array<Tensor<S>, 4> maps;  // [D,h,w]; index 0 = 1/32 scale, 3 = 1/4 scale
};

template <typename S>
struct MemoryState {
    Tensor<S> tokens;  // [N,D]
};

template <typename S>
struct FoveationResult {
    Tensor<S> foveal;      // raw bilinear samples of the 1/4 map, [prefix,D]
    Tensor<S> peripheral;  // raw flattened 1/32 map, [N32,D]
    Tensor<S> tokens;      // peripheral then foveal, positional encoding applied
};

template <typename S>
struct HeatmapPrediction {
    Tensor<S> logits;       // [h4,w4]
    Tensor<S> prob;         // [h4,w4], sums to 1
    Tensor<S> termination;  // [1,1] in (0,1)
    int h = 0, w = 0;

    double termination_value() const { return static_cast<double>(termination(0, 0)); }
};

namespace detail {

// Query-grid geometry shared by all decoder layers for one input size:
// positional features per scale and, for every (query scale, source scale)
// pair, the query cell centers expressed in source-grid cell coordinates.
template <typename S>
struct PyramidGeometry {
    std::array<std::pair<int, int>, 4> dims;       // (h,w) per scale
    std::array<Tensor<S>, 4> pos;                  // [N_l, D]
    std::array<std::array<Tensor<S>, 4>, 4> base;  // [query][source] -> [N_l, 2]
};

template <typename S>
PyramidGeometry<S> make_geometry(const std::array<std::pair<int, int>, 4>& dims, int feature_dim) {
    PyramidGeometry<S> geo;
    geo.dims = dims;
    for (int l = 0; l < 4; ++l) geo.pos[static_cast<std::size_t>(l)] =
        grid_position_features<S>(dims[static_cast<std::size_t>(l)].first, dims[static_cast<std::size_t>(l)].second, feature_dim);
    for (int l = 0; l < 4; ++l) {
        const auto [h, w] = dims[static_cast<std::size_t>(l)];
        for (int m = 0; m < 4; ++m) {
            const auto [hm, wm] = dims[static_cast<std::size_t>(m)];
            Tensor<S> b({h * w, 2});
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    b(i * w + j, 0) = static_cast<S>((j + 0.5) / w * wm - 0.5);
                    b(i * w + j, 1) = static_cast<S>((i + 0.5) / h * hm - 0.5);
                }
            geo.base[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)] = b;
        }
    }
    return geo;
}

}  // namespace detail

// One pixel-decoder layer: every pyramid position attends to a small set of
// bilinearly sampled points on all four scales (learned per-head offsets,
// query-dependent mixing weights), followed by a feed-forward block. Both
// sublayers are pre-norm residuals.
template <typename S>
struct PyramidAttentionLayer {
    LayerNormParams<S> ln1, ln2;
    Linear<S> value_proj, attn_weights, out_proj;
    Tensor<S> offsets;  // [heads*4*points, 2] in source-grid cell units
    FeedForward<S> ff;
    int dim = 0, heads = 0, points = 0;

    PyramidAttentionLayer() = default;
    PyramidAttentionLayer(ParamStore<S>& store, const std::string& name, const std::string& part, int dim_,
                          int heads_, int points_, int ffn_hidden, Rng& rng)
        : dim(dim_), heads(heads_), points(points_) {
        if (dim % heads != 0) throw ConfigError("decoder feature dim not divisible by heads");
        ln1 = LayerNormParams<S>(store, name + ".ln1", part, dim, rng);
        value_proj = Linear<S>(store, name + ".value", part, dim, dim, rng);
        attn_weights = Linear<S>(store, name + ".attn", part, dim, heads * 4 * points, rng);
        out_proj = Linear<S>(store, name + ".out", part, dim, dim, rng);
        offsets = store.create(name + ".offsets", part, {heads * 4 * points, 2}, Init::Zero, rng);
        // Offsets start a fraction of a cell away from the grid so sampling
        // begins off the bilinear kinks at integer coordinates.
        for (std::size_t i = 0; i < offsets.numel(); ++i) {
            const double mag = rng.uniform(0.2, 0.45);
            offsets.data()[i] = static_cast<S>(rng.uniform() < 0.5 ? -mag : mag);
        }
        ln2 = LayerNormParams<S>(store, name + ".ln2", part, dim, rng);
        ff = FeedForward<S>(store, name + ".ff", part, dim, ffn_hidden, rng);
    }

    std::array<Tensor<S>, 4> operator()(Tape<S>* tape, const std::array<Tensor<S>, 4>& flats,
                                        const detail::PyramidGeometry<S>& geo) const {
        const int dh = dim / heads;
        std::array<Tensor<S>, 4> normed;
        for (int l = 0; l < 4; ++l) normed[static_cast<std::size_t>(l)] = ln1(tape, flats[static_cast<std::size_t>(l)]);

        // Per-scale value maps, sliced per head into [dh,h,w] for sampling.
        std::vector<std::array<Tensor<S>, 4>> head_maps(static_cast<std::size_t>(heads));
        for (int m = 0; m < 4; ++m) {
            Tensor<S> v = value_proj(tape, normed[static_cast<std::size_t>(m)]);
            const auto [hm, wm] = geo.dims[static_cast<std::size_t>(m)];
            for (int h = 0; h < heads; ++h)
                head_maps[static_cast<std::size_t>(h)][static_cast<std::size_t>(m)] =
                    unflatten_map(tape, slice_cols(tape, v, h * dh, dh), hm, wm);
        }

        std::array<Tensor<S>, 4> out;
        const int group = 4 * points;
        for (int l = 0; l < 4; ++l) {
            Tensor<S> q = add(tape, normed[static_cast<std::size_t>(l)], geo.pos[static_cast<std::size_t>(l)]);
            Tensor<S> logits = attn_weights(tape, q);
            std::vector<Tensor<S>> head_outs;
            head_outs.reserve(static_cast<std::size_t>(heads));
            for (int h = 0; h < heads; ++h) {
                Tensor<S> weights = softmax(tape, slice_cols(tape, logits, h * group, group), 1);
                std::vector<Tensor<S>> samples;
                samples.reserve(static_cast<std::size_t>(group));
                for (int m = 0; m < 4; ++m)
                    for (int k = 0; k < points; ++k) {
                        const int row = h * group + m * points + k;
                        Tensor<S> off = reshape(tape, slice_rows(tape, offsets, row, 1), {2});
                        Tensor<S> pts = add_rows(tape, geo.base[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)], off);
                        samples.push_back(bilinear_sample_cells(tape, head_maps[static_cast<std::size_t>(h)][static_cast<std::size_t>(m)], pts));
                    }
                head_outs.push_back(weighted_mix(tape, samples, weights));
            }
            Tensor<S> attn = out_proj(tape, concat_cols(tape, head_outs));
            Tensor<S> x = add(tape, flats[static_cast<std::size_t>(l)], attn);
            Tensor<S> f = ln2(tape, x);
            out[static_cast<std::size_t>(l)] = add(tape, x, ff(tape, f));
        }
        return out;
    }
};

template <typename S>
class Model {
public:
    Model(const ModelConfig& cfg, SplitConfig split, std::uint64_t seed) : cfg_(cfg), split_(split), seed_(seed) {
        cfg_.validate();
        if (split_.shared_layers < 1 || split_.shared_layers > cfg_.decoder_layers)
            throw ConfigError("shared_layers " + std::to_string(split_.shared_layers) + " outside [1," +
                              std::to_string(cfg_.decoder_layers) + "]");
        Rng rng(seed);
        const int D = cfg_.feature_dim;
        const int stem = std::max(4, D / 4);
        const int ffn = D * cfg_.ffn_mult;

        // Encoder: five stride-2 stages; the last four feed the pyramid.
        enc_w_[0] = store_.create("encoder.conv0.w", partition::kEncoder, {stem, 3, 3, 3}, Init::XavierUniform, rng);
        enc_b_[0] = store_.create("encoder.conv0.b", partition::kEncoder, {stem}, Init::Zero, rng);
        enc_w_[1] = store_.create("encoder.conv1.w", partition::kEncoder, {D, stem, 3, 3}, Init::XavierUniform, rng);
        enc_b_[1] = store_.create("encoder.conv1.b", partition::kEncoder, {D}, Init::Zero, rng);
        for (int i = 2; i <= 4; ++i) {
            enc_w_[static_cast<std::size_t>(i)] = store_.create("encoder.conv" + std::to_string(i) + ".w",
                                                                partition::kEncoder, {D, D, 3, 3}, Init::XavierUniform, rng);
            enc_b_[static_cast<std::size_t>(i)] = store_.create("encoder.conv" + std::to_string(i) + ".b",
                                                                partition::kEncoder, {D}, Init::Zero, rng);
        }

        const int shared = split_.shared_layers;
        for (int i = 0; i < shared; ++i)
            decoder_shared_.emplace_back(store_, "decoder.shared." + std::to_string(i), partition::kDecoderShared, D,
                                         cfg_.decoder_heads, cfg_.deform_points, ffn, rng);
        for (int i = shared; i < cfg_.decoder_layers; ++i)
            decoder_fv_.emplace_back(store_, "decoder.fv." + std::to_string(i), partition::kDecoderFV, D,
                                     cfg_.decoder_heads, cfg_.deform_points, ffn, rng);
        for (int i = shared; i < cfg_.decoder_layers; ++i)
            decoder_vs_.emplace_back(store_, "decoder.vs." + std::to_string(i), partition::kDecoderVS, D,
                                     cfg_.decoder_heads, cfg_.deform_points, ffn, rng);

        build_branch(Branch::FV, rng);
        build_branch(Branch::VS, rng);
    }

    const ModelConfig& config() const { return cfg_; }
    const SplitConfig& split() const { return split_; }
    std::uint64_t seed() const { return seed_; }
    ParamStore<S>& params() { return store_; }
    const ParamStore<S>& params() const { return store_; }

    int queries_for(Branch b) const { return b == Branch::FV ? cfg_.queries_fv : cfg_.queries_vs; }
    int max_len_for(const TaskSpec& task) const {
        return task.kind == TaskKind::FreeViewing ? cfg_.max_len_fv : cfg_.max_len_vs;
    }

    // Four base feature maps at 1/32, 1/16, 1/8, 1/4 of the input size.
    std::array<Tensor<S>, 4> encode_pixels(Tape<S>* tape, const Tensor<S>& image) const {
        if (image.ndim() != 3 || image.dim(0) != 3)
            throw InputError("encode_pixels: expected [3,H,W] image, got " + shape_str(image.shape()));
        if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0)
            throw InputError("encode_pixels: image size " + std::to_string(image.dim(2)) + "x" +
                             std::to_string(image.dim(1)) + " not divisible by 32");
        Tensor<S> x = image;
        std::array<Tensor<S>, 4> maps;
        for (int i = 0; i < 5; ++i) {
            x = gelu(tape, add_channels(tape, conv2d(tape, x, enc_w_[static_cast<std::size_t>(i)], 2, 1),
                                        enc_b_[static_cast<std::size_t>(i)]));
            if (i >= 1) maps[static_cast<std::size_t>(4 - i)] = x;  // maps[3] = 1/4 ... maps[0] = 1/32
        }
        return maps;
    }

    FeaturePyramid<S> decode_pixels(Tape<S>* tape, const std::array<Tensor<S>, 4>& base, Branch branch) const {
        return decode_layers(tape, base, branch, split_.shared_layers + static_cast<int>(suffix(branch).size()));
    }

    // Runs only the shared prefix; used to test suffix-identity behavior.
    FeaturePyramid<S> decode_shared_only(Tape<S>* tape, const std::array<Tensor<S>, 4>& base) const {
        return decode_layers(tape, base, Branch::FV, split_.shared_layers);
    }

    FoveationResult<S> foveate(Tape<S>* tape, const FeaturePyramid<S>& pyramid,
                               const std::vector<Fixation>& prefix, Branch branch) const {
        if (prefix.empty()) throw InputError("foveate: fixation prefix must be nonempty");
        std::vector<std::pair<double, double>> pts;
        for (const auto& f : prefix) {
            if (f.x < 0 || f.x > 1 || f.y < 0 || f.y > 1)
                throw InputError("foveate: fixation outside the unit square");
            pts.emplace_back(f.x, f.y);
        }
        const BranchModules& mod = modules(branch);
        const int D = cfg_.feature_dim;
        const Tensor<S>& high = pyramid.maps[3];
        const Tensor<S>& low = pyramid.maps[0];

        FoveationResult<S> out;
        out.foveal = bilinear_sample(tape, high, pts);
        out.peripheral = flatten_map(tape, low);

        Tensor<S> fov_feat({static_cast<int>(prefix.size()), D});
        for (std::size_t i = 0; i < prefix.size(); ++i) {
            auto f = position_features(prefix[i].x, prefix[i].y, D);
            for (int d = 0; d < D; ++d) fov_feat(static_cast<int>(i), d) = static_cast<S>(f[static_cast<std::size_t>(d)]);
        }
        Tensor<S> per_feat = grid_position_features<S>(low.dim(1), low.dim(2), D);

        Tensor<S> fov_tok = add_rows(tape, add(tape, out.foveal, mod.pos_proj(tape, fov_feat)), mod.foveal_bias);
        Tensor<S> per_tok = add_rows(tape, add(tape, out.peripheral, mod.pos_proj(tape, per_feat)), mod.peripheral_bias);
        out.tokens = concat_rows(tape, {per_tok, fov_tok});
        return out;
    }

    MemoryState<S> encode_memory(Tape<S>* tape, const Tensor<S>& tokens, Branch branch) const {
        if (tokens.dim(0) < 1) throw InputError("encode_memory: empty token set");
        const BranchModules& mod = modules(branch);
        Tensor<S> x = tokens;
        for (const auto& layer : mod.memory) x = layer(tape, x);
        return MemoryState<S>{mod.memory_ln(tape, x)};
    }

    Tensor<S> aggregate(Tape<S>* tape, const MemoryState<S>& memory, const TaskSpec& task) const {
        if (task.kind == TaskKind::VisualSearch && (task.target < 1 || task.target > cfg_.queries_vs))
            throw InputError("aggregate: target " + std::to_string(task.target) + " outside [1," +
                             std::to_string(cfg_.queries_vs) + "]");
        const BranchModules& mod = modules(branch_of(task));
        Tensor<S> q = mod.queries;
        for (const auto& layer : mod.aggregation) q = layer(tape, q, memory.tokens);
        return mod.aggregation_ln(tape, q);
    }

    HeatmapPrediction<S> predict_heatmap(Tape<S>* tape, const Tensor<S>& query_row, const FeaturePyramid<S>& pyramid,
                                         Branch branch) const {
        const BranchModules& mod = modules(branch);
        const Tensor<S>& high = pyramid.maps[3];
        const int h = high.dim(1), w = high.dim(2);
        Tensor<S> emb = mod.head_mlp2(tape, gelu(tape, mod.head_mlp1(tape, query_row)));  // [1,D]
        Tensor<S> flat = flatten_map(tape, high);                                          // [h*w, D]
        Tensor<S> logits_col = matmul(tape, flat, transpose2d(tape, emb));                 // [h*w, 1]
        Tensor<S> logits_row = transpose2d(tape, logits_col);                              // [1, h*w]
        Tensor<S> prob_row = softmax(tape, logits_row, 1);

        HeatmapPrediction<S> out;
        out.h = h;
        out.w = w;
        out.logits = reshape(tape, logits_col, {h, w});
        out.prob = reshape(tape, prob_row, {h, w});
        out.termination = sigmoid(tape, mod.term(tape, query_row));
        return out;
    }

    // One teacher-forced step from a precomputed pyramid.
    HeatmapPrediction<S> step_from_pyramid(Tape<S>* tape, const FeaturePyramid<S>& pyramid, const TaskSpec& task,
                                           const std::vector<Fixation>& prefix) const {
        const Branch b = branch_of(task);
        FoveationResult<S> fov = foveate(tape, pyramid, prefix, b);
        MemoryState<S> mem = encode_memory(tape, fov.tokens, b);
        Tensor<S> queries = aggregate(tape, mem, task);
        const int row = task.kind == TaskKind::VisualSearch ? task.target - 1 : 0;
        Tensor<S> query = slice_rows(tape, queries, row, 1);
        return predict_heatmap(tape, query, pyramid, b);
    }

    FeaturePyramid<S> extract_pyramid(Tape<S>* tape, const Tensor<S>& image, Branch branch) const {
        return decode_pixels(tape, encode_pixels(tape, image), branch);
    }

    enum class RolloutMode { Argmax, Sample };

    Scanpath rollout(const ImageSample& sample, const TaskSpec& task, RolloutMode mode, std::uint64_t seed,
                     int max_len) const {
        if (max_len < 1) throw ConfigError("rollout: max_len must be >= 1");
        Tensor<S> image = image_tensor(sample);
        FeaturePyramid<S> pyramid = extract_pyramid(nullptr, image, branch_of(task));
        Rng rng(seed);

        Scanpath path;
        path.image_id = sample.id;
        path.task = task;
        path.fixations.push_back(center_fixation());
        path.terminated = false;
        while (static_cast<int>(path.fixations.size()) < max_len) {
            HeatmapPrediction<S> pred = step_from_pyramid(nullptr, pyramid, task, path.fixations);
            if (pred.termination_value() > 0.5) {
                path.terminated = true;
                break;
            }
            path.fixations.push_back(pick_fixation(pred, mode, rng));
        }
        return path;
    }

    // Copies every parameter value from a same-shaped model.
    void copy_parameters_from(const Model& other) {
        const auto& src = other.store_.entries();
        auto& dst = store_.entries();
        if (src.size() != dst.size()) throw UsageError("copy_parameters_from: model layouts differ");
        for (std::size_t i = 0; i < src.size(); ++i) {
            if (src[i].name != dst[i].name || src[i].tensor.shape() != dst[i].tensor.shape())
                throw UsageError("copy_parameters_from: mismatch at " + src[i].name);
            dst[i].tensor.values() = src[i].tensor.values();
        }
    }

    static Tensor<S> image_tensor(const ImageSample& sample) {
        if constexpr (std::is_same_v<S, float>) {
            return sample.pixels;
        } else {
            Tensor<S> t(sample.pixels.shape());
            for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<S>(sample.pixels.data()[i]);
            return t;
        }
    }

private:
    struct BranchModules {
        Linear<S> pos_proj;
        Tensor<S> foveal_bias, peripheral_bias;
        std::vector<TransformerEncoderLayer<S>> memory;
        LayerNormParams<S> memory_ln;
        Tensor<S> queries;
        std::vector<TransformerDecoderLayer<S>> aggregation;
        LayerNormParams<S> aggregation_ln;
        Linear<S> head_mlp1, head_mlp2, term;
    };

    void build_branch(Branch b, Rng& rng) {
        const int D = cfg_.feature_dim;
        const int ffn = D * cfg_.ffn_mult;
        const std::string tag = b == Branch::FV ? "fv" : "vs";
        const std::string fov_part = b == Branch::FV ? partition::kFoveationFV : partition::kFoveationVS;
        const std::string mem_part = b == Branch::FV ? partition::kMemoryFV : partition::kMemoryVS;
        const std::string agg_part = b == Branch::FV ? partition::kAggregationFV : partition::kAggregationVS;
        const std::string head_part = b == Branch::FV ? partition::kHeadsFV : partition::kHeadsVS;
        BranchModules& mod = b == Branch::FV ? fv_ : vs_;

        mod.pos_proj = Linear<S>(store_, "fov." + tag + ".pos", fov_part, D, D, rng);
        mod.foveal_bias = store_.create("fov." + tag + ".foveal_bias", fov_part, {D}, Init::UniformSmall, rng);
        mod.peripheral_bias = store_.create("fov." + tag + ".peripheral_bias", fov_part, {D}, Init::UniformSmall, rng);
        for (int i = 0; i < cfg_.memory_layers; ++i)
            mod.memory.emplace_back(store_, "memory." + tag + "." + std::to_string(i), mem_part, D, cfg_.memory_heads,
                                    ffn, rng);
        mod.memory_ln = LayerNormParams<S>(store_, "memory." + tag + ".ln", mem_part, D, rng);
        mod.queries = store_.create("agg." + tag + ".queries", agg_part, {queries_for(b), D}, Init::UniformSmall, rng);
        for (int i = 0; i < cfg_.aggregation_layers; ++i)
            mod.aggregation.emplace_back(store_, "agg." + tag + "." + std::to_string(i), agg_part, D,
                                         cfg_.aggregation_heads, ffn, rng);
        mod.aggregation_ln = LayerNormParams<S>(store_, "agg." + tag + ".ln", agg_part, D, rng);
        mod.head_mlp1 = Linear<S>(store_, "heads." + tag + ".mlp1", head_part, D, D, rng);
        mod.head_mlp2 = Linear<S>(store_, "heads." + tag + ".mlp2", head_part, D, D, rng);
        mod.term = Linear<S>(store_, "heads." + tag + ".term", head_part, D, 1, rng);
    }

    const BranchModules& modules(Branch b) const { return b == Branch::FV ? fv_ : vs_; }
    const std::vector<PyramidAttentionLayer<S>>& suffix(Branch b) const {
        return b == Branch::FV ? decoder_fv_ : decoder_vs_;
    }

    FeaturePyramid<S> decode_layers(Tape<S>* tape, const std::array<Tensor<S>, 4>& base, Branch branch,
                                    int total_layers) const {
        std::array<std::pair<int, int>, 4> dims;
        for (int l = 0; l < 4; ++l) dims[static_cast<std::size_t>(l)] = {base[static_cast<std::size_t>(l)].dim(1),
                                                                          base[static_cast<std::size_t>(l)].dim(2)};
        auto geo = detail::make_geometry<S>(dims, cfg_.feature_dim);
        std::array<Tensor<S>, 4> flats;
        for (int l = 0; l < 4; ++l) flats[static_cast<std::size_t>(l)] = flatten_map(tape, base[static_cast<std::size_t>(l)]);

        int applied = 0;
        for (const auto& layer : decoder_shared_) {
            if (applied++ >= total_layers) break;
            flats = layer(tape, flats, geo);
        }
        for (const auto& layer : suffix(branch)) {
            if (applied++ >= total_layers) break;
            flats = layer(tape, flats, geo);
        }
        FeaturePyramid<S> pyr;
        for (int l = 0; l < 4; ++l)
            pyr.maps[static_cast<std::size_t>(l)] = unflatten_map(tape, flats[static_cast<std::size_t>(l)],
                                                                  dims[static_cast<std::size_t>(l)].first,
                                                                  dims[static_cast<std::size_t>(l)].second);
        return pyr;
    }

    Fixation pick_fixation(const HeatmapPrediction<S>& pred, RolloutMode mode, Rng& rng) const {
        const int h = pred.h, w = pred.w;
        int cell = 0;
        if (mode == RolloutMode::Argmax) {
            S best = pred.prob.data()[0];
            for (int i = 1; i < h * w; ++i)
                if (pred.prob.data()[i] > best) {
                    best = pred.prob.data()[i];
                    cell = i;
                }
        } else {
            double u = rng.uniform();
            double acc = 0.0;
            cell = h * w - 1;
            for (int i = 0; i < h * w; ++i) {
                acc += static_cast<double>(pred.prob.data()[i]);
                if (u < acc) {
                    cell = i;
                    break;
                }
            }
        }
        const int i = cell / w, j = cell % w;
        return Fixation{(j + 0.5) / w, (i + 0.5) / h};
    }

    ModelConfig cfg_;
    SplitConfig split_;
    std::uint64_t seed_;
    ParamStore<S> store_;
    std::array<Tensor<S>, 5> enc_w_, enc_b_;
    std::vector<PyramidAttentionLayer<S>> decoder_shared_, decoder_fv_, decoder_vs_;
    BranchModules fv_, vs_;
};

// Exact scalar count over the given partitions; unknown names are an error.
template <typename S>
long long count_parameters(const Model<S>& model, const std::vector<std::string>& partitions) {
    for (const auto& p : partitions) {
        bool known = false;
        for (const auto& k : partition::all()) known = known || (k == p);
        if (!known) throw UsageError("unknown partition '" + p + "'");
    }
    long long total = 0;
    for (const auto& e : model.params().entries())
        for (const auto& p : partitions)
            if (e.partition == p) total += static_cast<long long>(e.tensor.numel());
    return total;
}

template <typename S>
long long total_parameters(const Model<S>& model) {
    long long total = 0;
    for (const auto& e : model.params().entries()) total += static_cast<long long>(e.tensor.numel());
    return total;
}

}  // namespace scanshare
