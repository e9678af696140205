#pragma once

// Fixation datasets: domain types, a procedural scene generator with exact
// segmentation masks, per-task oracle scanpaths for those scenes, JSONL
// dataset serialization, and deterministic train/val/test splitting.
//
// Fixation file schema, one JSON record per line:
//   {"image_id": str, "task": "fv"|"vs", "target": int (vs only),
//    "fixations": [[x,y], ...], "terminated": bool}
// Images live next to it as <id>.ppm with an <id>.seg.pgm label sidecar.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "scanshare/common.hpp"
#include "scanshare/image.hpp"
#include "scanshare/tensor.hpp"

namespace scanshare {

constexpr int kMaxCategories = 18;

struct Fixation {
    double x = 0.0, y = 0.0;  // fractions of width / height in [0,1]

    bool operator==(const Fixation&) const = default;
};

enum class TaskKind { FreeViewing, VisualSearch };

struct TaskSpec {
    TaskKind kind = TaskKind::FreeViewing;
    int target = 0;  // category id, meaningful only for visual search

    static TaskSpec free_viewing() { return {TaskKind::FreeViewing, 0}; }
    static TaskSpec visual_search(int target) {
        if (target < 1 || target > kMaxCategories)
            throw InputError("visual-search target " + std::to_string(target) + " outside [1," +
                             std::to_string(kMaxCategories) + "]");
        return {TaskKind::VisualSearch, target};
    }

    bool operator==(const TaskSpec&) const = default;
};

struct Scanpath {
    std::string image_id;
    TaskSpec task;
    std::vector<Fixation> fixations;  // length >= 1, starts at the center
    bool terminated = false;

    bool operator==(const Scanpath&) const = default;
};

struct ImageSample {
    std::string id;
    Tensor<float> pixels;           // [3,H,W] in [0,1]
    std::vector<int> segmentation;  // H*W category labels, 0 = background
    std::set<int> present_targets;

    int height() const { return pixels.dim(1); }
    int width() const { return pixels.dim(2); }

    int label_at(const Fixation& f) const {
        const int W = width(), H = height();
        const int x = std::min(W - 1, static_cast<int>(f.x * W));
        const int y = std::min(H - 1, static_cast<int>(f.y * H));
        return segmentation[static_cast<std::size_t>(y) * W + x];
    }
};

struct Dataset {
    std::vector<ImageSample> images;
    std::vector<Scanpath> scanpaths;

    const ImageSample& image(const std::string& id) const {
        for (const auto& img : images)
            if (img.id == id) return img;
        throw InputError("dataset has no image with id '" + id + "'");
    }
    bool has_image(const std::string& id) const {
        for (const auto& img : images)
            if (img.id == id) return true;
        return false;
    }
};

struct DatasetSplit {
    std::vector<Scanpath> train, val, test;
};

inline Fixation center_fixation() { return Fixation{0.5, 0.5}; }

// ---------------------------------------------------------------------------
// Scene generation
// ---------------------------------------------------------------------------

// 18-entry palette, six color families with three members each. Family
// membership drives which shapes count as distractors in visual search.
struct PaletteEntry {
    unsigned char r, g, b;
    int family;
};

inline const std::array<PaletteEntry, kMaxCategories>& palette() {
    static const std::array<PaletteEntry, kMaxCategories> table = {{
        {200, 60, 60, 0},   {240, 100, 100, 0}, {150, 30, 30, 0},    // reds
        {60, 200, 60, 1},   {100, 240, 100, 1}, {30, 150, 30, 1},    // greens
        {60, 60, 220, 2},   {100, 100, 250, 2}, {30, 30, 160, 2},    // blues
        {220, 220, 70, 3},  {250, 250, 120, 3}, {170, 170, 40, 3},   // yellows
        {200, 60, 200, 4},  {240, 110, 240, 4}, {150, 30, 150, 4},   // magentas
        {60, 210, 210, 5},  {110, 245, 245, 5}, {30, 150, 150, 5},   // cyans
    }};
    return table;
}

inline int color_family(int category) { return palette()[static_cast<std::size_t>(category - 1)].family; }

// Geometry of one generated shape, exposed so tests can recount mask pixels
// from the exact membership rules.
struct SceneShape {
    int category = 0;
    int kind = 0;                    // 0 rectangle, 1 disc, 2 triangle
    int x0 = 0, x1 = 0, y0 = 0, y1 = 0;  // rectangle bounds (half-open)
    double cx = 0, cy = 0, radius = 0;   // disc
    double tri[6] = {0, 0, 0, 0, 0, 0};  // triangle vertices (ax,ay,bx,by,ex,ey)
};

// Deterministic scene of flat-colored shapes (rectangle / disc / triangle by
// category) on a jittered grid over a noisy gray background. Shapes never
// overlap, so every drawn pixel keeps its category label and the mask is an
// exact rasterization of the shape geometry.
inline ImageSample generate_scene(std::uint64_t seed, int rows, int cols, int categories, int width = 128,
                                  int height = 96, std::vector<SceneShape>* shapes_out = nullptr) {
    if (categories < 1 || categories > kMaxCategories)
        throw ConfigError("categories must be in [1," + std::to_string(kMaxCategories) + "], got " +
                          std::to_string(categories));
    if (rows * cols < categories)
        throw ConfigError("grid " + std::to_string(rows) + "x" + std::to_string(cols) + " too small for " +
                          std::to_string(categories) + " categories");
    if (width % 32 != 0 || height % 32 != 0)
        throw ConfigError("image size " + std::to_string(width) + "x" + std::to_string(height) +
                          " must be divisible by 32");

    Rng rng(seed);
    ImageU8 img(width, height);
    std::vector<int> seg(static_cast<std::size_t>(width) * height, 0);

    // Noisy gray background from a per-pixel hash of the seed.
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            std::uint64_t key[3] = {seed, static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(y)};
            int noise = static_cast<int>(fnv1a64(key, sizeof(key)) % 17) - 8;
            auto v = static_cast<unsigned char>(std::clamp(90 + noise, 0, 255));
            img.set(x, y, v, v, v);
        }

    std::vector<int> cells(static_cast<std::size_t>(rows) * cols);
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
    rng.shuffle(cells);

    const double cw = static_cast<double>(width) / cols;
    const double ch = static_cast<double>(height) / rows;
    for (int c = 1; c <= categories; ++c) {
        const int cell = cells[static_cast<std::size_t>(c - 1)];
        const int cr = cell / cols, cc = cell % cols;
        const double cx = (cc + 0.5) * cw + rng.uniform(-0.02, 0.02) * cw;
        const double cy = (cr + 0.5) * ch + rng.uniform(-0.02, 0.02) * ch;
        const double s = rng.uniform(0.22, 0.34) * std::min(cw, ch);
        const PaletteEntry& col = palette()[static_cast<std::size_t>(c - 1)];
        const int kind = (c - 1) % 3;

        auto paint = [&](int x, int y) {
            img.set(x, y, col.r, col.g, col.b);
            seg[static_cast<std::size_t>(y) * width + x] = c;
        };

        SceneShape shape;
        shape.category = c;
        shape.kind = kind;
        if (kind == 0) {  // axis-aligned rectangle with integer bounds
            const double a = s * rng.uniform(1.0, 1.35), b = s * rng.uniform(0.7, 1.0);
            const int x0 = static_cast<int>(std::lround(cx - a)), x1 = static_cast<int>(std::lround(cx + a));
            const int y0 = static_cast<int>(std::lround(cy - b)), y1 = static_cast<int>(std::lround(cy + b));
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) paint(x, y);
            shape.x0 = x0;
            shape.x1 = x1;
            shape.y0 = y0;
            shape.y1 = y1;
        } else if (kind == 1) {  // disc, pixel-center membership
            const double r = s * rng.uniform(1.0, 1.2);
            for (int y = static_cast<int>(cy - r) - 1; y <= static_cast<int>(cy + r) + 1; ++y)
                for (int x = static_cast<int>(cx - r) - 1; x <= static_cast<int>(cx + r) + 1; ++x) {
                    const double dx = (x + 0.5) - cx, dy = (y + 0.5) - cy;
                    if (dx * dx + dy * dy <= r * r && x >= 0 && x < width && y >= 0 && y < height) paint(x, y);
                }
            shape.cx = cx;
            shape.cy = cy;
            shape.radius = r;
        } else {  // isoceles triangle, half-plane membership at pixel centers
            const double hw = s * rng.uniform(1.0, 1.25), hh = s * rng.uniform(1.0, 1.25);
            const double ax = cx, ay = cy - hh;
            const double bx = cx - hw, by = cy + hh * 0.8;
            const double ex = cx + hw, ey = cy + hh * 0.8;
            auto side = [](double px, double py, double x1, double y1, double x2, double y2) {
                return (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
            };
            for (int y = static_cast<int>(ay) - 1; y <= static_cast<int>(by) + 1; ++y)
                for (int x = static_cast<int>(bx) - 1; x <= static_cast<int>(ex) + 1; ++x) {
                    const double px = x + 0.5, py = y + 0.5;
                    const double s1 = side(px, py, ax, ay, bx, by);
                    const double s2 = side(px, py, bx, by, ex, ey);
                    const double s3 = side(px, py, ex, ey, ax, ay);
                    const bool inside = (s1 >= 0 && s2 >= 0 && s3 >= 0) || (s1 <= 0 && s2 <= 0 && s3 <= 0);
                    if (inside && x >= 0 && x < width && y >= 0 && y < height) paint(x, y);
                }
            shape.tri[0] = ax;
            shape.tri[1] = ay;
            shape.tri[2] = bx;
            shape.tri[3] = by;
            shape.tri[4] = ex;
            shape.tri[5] = ey;
        }
        if (shapes_out) shapes_out->push_back(shape);
    }

    ImageSample sample;
    sample.id = "scene-" + std::to_string(seed);
    sample.pixels = image_to_tensor(img);
    sample.segmentation = std::move(seg);
    for (int c = 1; c <= categories; ++c) sample.present_targets.insert(c);
    return sample;
}

// ---------------------------------------------------------------------------
// Oracle scanpaths
// ---------------------------------------------------------------------------

namespace detail {

struct ShapeStat {
    int category = 0;
    double cx = 0.0, cy = 0.0;  // centroid, pixel units
    double bw = 0.0, bh = 0.0;  // bounding half-extents
    long long area = 0;
    double color[3] = {0, 0, 0};
};

inline std::vector<ShapeStat> shape_stats(const ImageSample& scene) {
    const int W = scene.width(), H = scene.height();
    std::map<int, ShapeStat> stats;
    std::map<int, std::array<double, 4>> bounds;  // minx, maxx, miny, maxy
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const int c = scene.segmentation[static_cast<std::size_t>(y) * W + x];
            if (c == 0) continue;
            auto& st = stats[c];
            st.category = c;
            st.cx += x + 0.5;
            st.cy += y + 0.5;
            st.area += 1;
            for (int ch = 0; ch < 3; ++ch) st.color[ch] += scene.pixels(ch, y, x);
            auto& b = bounds.try_emplace(c, std::array<double, 4>{1e30, -1e30, 1e30, -1e30}).first->second;
            b[0] = std::min(b[0], x + 0.5);
            b[1] = std::max(b[1], x + 0.5);
            b[2] = std::min(b[2], y + 0.5);
            b[3] = std::max(b[3], y + 0.5);
        }
    std::vector<ShapeStat> out;
    for (auto& [c, st] : stats) {
        st.cx /= static_cast<double>(st.area);
        st.cy /= static_cast<double>(st.area);
        for (int ch = 0; ch < 3; ++ch) st.color[ch] /= static_cast<double>(st.area);
        const auto& b = bounds[c];
        st.bw = (b[1] - b[0]) / 2.0;
        st.bh = (b[3] - b[2]) / 2.0;
        out.push_back(st);
    }
    return out;
}

inline std::array<double, 3> background_color(const ImageSample& scene) {
    const int W = scene.width(), H = scene.height();
    std::array<double, 3> bg = {0, 0, 0};
    long long n = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (scene.segmentation[static_cast<std::size_t>(y) * W + x] != 0) continue;
            for (int c = 0; c < 3; ++c) bg[static_cast<std::size_t>(c)] += scene.pixels(c, y, x);
            ++n;
        }
    if (n > 0)
        for (auto& v : bg) v /= static_cast<double>(n);
    return bg;
}

// Local-contrast salience: Euclidean color distance to the background mean
// times mask area. Ties break toward the smaller category id.
inline double salience_score(const ShapeStat& st, const std::array<double, 3>& bg) {
    double d2 = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double d = st.color[c] - bg[static_cast<std::size_t>(c)];
        d2 += d * d;
    }
    return std::sqrt(d2) * static_cast<double>(st.area);
}

// A fixation on the shape: centroid plus a small seeded jitter, kept inside
// the mask (falls back to the centroid, then to any mask pixel).
inline Fixation fixation_on(const ImageSample& scene, const ShapeStat& st, Rng& rng) {
    const int W = scene.width(), H = scene.height();
    auto inside = [&](double px, double py) {
        const int x = std::clamp(static_cast<int>(px), 0, W - 1);
        const int y = std::clamp(static_cast<int>(py), 0, H - 1);
        return scene.segmentation[static_cast<std::size_t>(y) * W + x] == st.category;
    };
    const double jx = st.cx + rng.uniform(-0.3, 0.3) * st.bw;
    const double jy = st.cy + rng.uniform(-0.3, 0.3) * st.bh;
    double px = st.cx, py = st.cy;
    if (inside(jx, jy)) {
        px = jx;
        py = jy;
    } else if (!inside(st.cx, st.cy)) {
        for (int y = 0; y < H && !inside(px, py); ++y)
            for (int x = 0; x < W; ++x)
                if (scene.segmentation[static_cast<std::size_t>(y) * W + x] == st.category) {
                    px = x + 0.5;
                    py = y + 0.5;
                    break;
                }
    }
    return Fixation{std::clamp(px / W, 0.0, 1.0), std::clamp(py / H, 0.0, 1.0)};
}

}  // namespace detail

// Free-viewing oracle: center start, then shape centers in descending
// salience order, truncated to `length` fixations in total.
inline Scanpath oracle_scanpath_fv(const ImageSample& scene, std::uint64_t seed, int length) {
    if (length < 1) throw ConfigError("scanpath length must be >= 1");
    auto stats = detail::shape_stats(scene);
    const auto bg = detail::background_color(scene);
    std::stable_sort(stats.begin(), stats.end(), [&](const auto& a, const auto& b) {
        const double sa = detail::salience_score(a, bg), sb = detail::salience_score(b, bg);
        if (sa != sb) return sa > sb;
        return a.category < b.category;
    });
    Rng rng(seed ^ 0x5cabfa11ull);
    Scanpath path;
    path.image_id = scene.id;
    path.task = TaskSpec::free_viewing();
    path.fixations.push_back(center_fixation());
    for (const auto& st : stats) {
        if (static_cast<int>(path.fixations.size()) >= length) break;
        path.fixations.push_back(detail::fixation_on(scene, st, rng));
    }
    path.terminated = true;
    return path;
}

// Visual-search oracle: center start, zero to two seeded distractor
// fixations on same-color-family shapes, then a final fixation inside the
// target mask.
inline Scanpath oracle_scanpath_vs(const ImageSample& scene, int target, std::uint64_t seed) {
    if (!scene.present_targets.count(target))
        throw InputError("target " + std::to_string(target) + " not present in scene " + scene.id);
    auto stats = detail::shape_stats(scene);
    const detail::ShapeStat* target_stat = nullptr;
    std::vector<const detail::ShapeStat*> distractors;
    for (const auto& st : stats) {
        if (st.category == target) {
            target_stat = &st;
        } else if (color_family(st.category) == color_family(target)) {
            distractors.push_back(&st);
        }
    }
    if (!target_stat) throw InputError("target " + std::to_string(target) + " has no mask pixels in " + scene.id);

    Rng rng(seed ^ 0x7a125e4cull);
    Scanpath path;
    path.image_id = scene.id;
    path.task = TaskSpec::visual_search(target);
    path.fixations.push_back(center_fixation());
    const int max_distractors = std::min<std::size_t>(2, distractors.size());
    const int count = max_distractors > 0 ? rng.uniform_int(0, max_distractors) : 0;
    rng.shuffle(distractors);
    for (int i = 0; i < count; ++i) path.fixations.push_back(detail::fixation_on(scene, *distractors[static_cast<std::size_t>(i)], rng));
    path.fixations.push_back(detail::fixation_on(scene, *target_stat, rng));
    path.terminated = true;
    return path;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json scanpath_to_json(const Scanpath& p) {
    nlohmann::json rec;
    rec["image_id"] = p.image_id;
    rec["task"] = p.task.kind == TaskKind::FreeViewing ? "fv" : "vs";
    if (p.task.kind == TaskKind::VisualSearch) rec["target"] = p.task.target;
    nlohmann::json fx = nlohmann::json::array();
    for (const auto& f : p.fixations) fx.push_back(nlohmann::json::array({f.x, f.y}));
    rec["fixations"] = std::move(fx);
    rec["terminated"] = p.terminated;
    return rec;
}

inline Scanpath scanpath_from_json(const nlohmann::json& rec, std::size_t record_index) {
    const std::string at = " (record " + std::to_string(record_index) + ")";
    try {
        Scanpath p;
        p.image_id = rec.at("image_id").get<std::string>();
        const std::string task = rec.at("task").get<std::string>();
        if (task == "fv") {
            p.task = TaskSpec::free_viewing();
        } else if (task == "vs") {
            p.task = TaskSpec::visual_search(rec.at("target").get<int>());
        } else {
            throw FormatError("unknown task '" + task + "'" + at);
        }
        for (const auto& f : rec.at("fixations")) {
            const double x = f.at(0).get<double>(), y = f.at(1).get<double>();
            if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0)
                throw InputError("fixation (" + std::to_string(x) + "," + std::to_string(y) +
                                 ") outside the unit square" + at);
            p.fixations.push_back(Fixation{x, y});
        }
        if (p.fixations.empty()) throw FormatError("scanpath without fixations" + at);
        p.terminated = rec.at("terminated").get<bool>();
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed scanpath record: ") + e.what() + at);
    }
}

inline void save_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    std::ofstream out(fs::path(dir) / "scanpaths.jsonl", std::ios::trunc);
    if (!out) throw IOError("cannot write scanpaths in " + dir);
    for (const auto& p : ds.scanpaths) out << scanpath_to_json(p).dump() << "\n";
    for (const auto& img : ds.images) {
        write_ppm((fs::path(dir) / "images" / (img.id + ".ppm")).string(), tensor_to_image(img.pixels));
        std::vector<unsigned char> seg(img.segmentation.size());
        for (std::size_t i = 0; i < seg.size(); ++i) seg[i] = static_cast<unsigned char>(img.segmentation[i]);
        write_pgm((fs::path(dir) / "images" / (img.id + ".seg.pgm")).string(), img.width(), img.height(), seg);
    }
}

inline Dataset load_dataset(const std::string& fixation_file, const std::string& image_dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fixation_file);
    if (!in) throw IOError("cannot open fixation file: " + fixation_file);
    Dataset ds;
    std::string line;
    std::size_t index = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("unparsable record " + std::to_string(index) + ": " + e.what());
        }
        Scanpath p = scanpath_from_json(rec, index);
        if (!seen.count(p.image_id)) {
            const fs::path ppm = fs::path(image_dir) / (p.image_id + ".ppm");
            const fs::path pgm = fs::path(image_dir) / (p.image_id + ".seg.pgm");
            if (!fs::exists(ppm)) throw IOError("missing image for id '" + p.image_id + "': " + ppm.string());
            ImageSample img;
            img.id = p.image_id;
            img.pixels = image_to_tensor(read_ppm(ppm.string()));
            int w = 0, h = 0;
            if (fs::exists(pgm)) {
                auto gray = read_pgm(pgm.string(), w, h);
                if (w != img.width() || h != img.height())
                    throw FormatError("segmentation size mismatch for id '" + p.image_id + "'");
                img.segmentation.assign(gray.begin(), gray.end());
                for (unsigned char g : gray)
                    if (g > 0) img.present_targets.insert(static_cast<int>(g));
            } else {
                img.segmentation.assign(static_cast<std::size_t>(img.width()) * img.height(), 0);
            }
            ds.images.push_back(std::move(img));
            seen.insert(p.image_id);
        }
        ds.scanpaths.push_back(std::move(p));
        ++index;
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

inline DatasetSplit split_dataset(const Dataset& ds, double train_frac, double val_frac, double test_frac,
                                  std::uint64_t seed) {
    if (train_frac <= 0 || val_frac <= 0 || test_frac <= 0)
        throw ConfigError("split fractions must be positive");
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
    std::vector<std::string> ids;
    for (const auto& img : ds.images) ids.push_back(img.id);
    std::sort(ids.begin(), ids.end());
    if (ids.size() < 3) throw ConfigError("need at least 3 images to split, got " + std::to_string(ids.size()));
    Rng rng(seed);
    rng.shuffle(ids);

    const auto n = static_cast<std::size_t>(ids.size());
    std::size_t n_train = static_cast<std::size_t>(train_frac * static_cast<double>(n));
    std::size_t n_val = static_cast<std::size_t>(val_frac * static_cast<double>(n));
    n_train = std::max<std::size_t>(1, n_train);
    n_val = std::max<std::size_t>(1, n_val);
    while (n_train + n_val + 1 > n) {  // leave at least one test image
        if (n_train > 1)
            --n_train;
        else if (n_val > 1)
            --n_val;
        else
            throw ConfigError("not enough images for a three-way split");
    }
    // Remainder beyond the floor counts goes to train.
    std::size_t n_test = static_cast<std::size_t>(test_frac * static_cast<double>(n));
    n_test = std::max<std::size_t>(1, std::min(n_test, n - n_train - n_val));
    n_train = n - n_val - n_test;

    std::set<std::string> train_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::set<std::string> val_ids(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                                  ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));

    DatasetSplit split;
    for (const auto& p : ds.scanpaths) {
        if (train_ids.count(p.image_id))
            split.train.push_back(p);
        else if (val_ids.count(p.image_id))
            split.val.push_back(p);
        else
            split.test.push_back(p);
    }
    return split;
}

}  // namespace scanshare
