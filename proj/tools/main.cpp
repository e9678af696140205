// scanshare: synthetic fixation datasets, dual-branch scanpath model
// training with a shared decoder prefix, metric evaluation, cost
// accounting, and scanpath overlay rendering.

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "scanshare/scanshare.hpp"

namespace fs = std::filesystem;
using namespace scanshare;

namespace {

std::int64_t manifest_epoch() {
    if (const char* e = std::getenv("SCANSHARE_EPOCH")) return std::atoll(e);
    return static_cast<std::int64_t>(std::time(nullptr));
}

std::string resolve_out(const std::string& cli_value, const std::string& default_name) {
    if (!cli_value.empty()) return cli_value;
    if (const char* root = std::getenv("SCANSHARE_OUT")) return (fs::path(root) / default_name).string();
    throw UsageError("no output path: pass --out or set SCANSHARE_OUT");
}

void write_manifest(const std::string& path, const std::string& command, const nlohmann::json& config,
                    std::uint64_t seed, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
    nlohmann::json m;
    m["command"] = command;
    m["config"] = config;
    m["seed"] = seed;
    m["timestamp"] = manifest_epoch();
    m["inputs"] = inputs;
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& o : outputs) outs.push_back({{"path", o}, {"fnv1a64", file_checksum_hex(o)}});
    m["outputs"] = std::move(outs);
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IOError("cannot write manifest: " + path);
    f << m.dump(2) << "\n";
}

Dataset load_data_dir(const std::string& dir) {
    return load_dataset((fs::path(dir) / "scanpaths.jsonl").string(), (fs::path(dir) / "images").string());
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::uint64_t seed = 1;
    int count = 0;
    std::string out;
    int width = 128, height = 96;
    int rows = 2, cols = 3;
    int categories = 6;
    int fv_length = 5;
    int vs_per_scene = 2;
};

int cmd_synth(const SynthArgs& a) {
    if (a.count < 1) throw UsageError("--count must be at least 1");
    const std::string out = resolve_out(a.out, "dataset");
    Dataset ds;
    for (int i = 0; i < a.count; ++i) {
        const std::uint64_t scene_seed = a.seed + static_cast<std::uint64_t>(i);
        ImageSample scene = generate_scene(scene_seed, a.rows, a.cols, a.categories, a.width, a.height);
        ds.scanpaths.push_back(oracle_scanpath_fv(scene, scene_seed, a.fv_length));
        const int vs_count = std::min(a.vs_per_scene, a.categories);
        for (int k = 0; k < vs_count; ++k) {
            const int target = (i + k) % a.categories + 1;
            ds.scanpaths.push_back(oracle_scanpath_vs(scene, target, scene_seed * 31 + static_cast<std::uint64_t>(k)));
        }
        ds.images.push_back(std::move(scene));
    }
    save_dataset(ds, out);

    std::vector<std::string> outputs = {(fs::path(out) / "scanpaths.jsonl").string()};
    for (const auto& img : ds.images) {
        outputs.push_back((fs::path(out) / "images" / (img.id + ".ppm")).string());
        outputs.push_back((fs::path(out) / "images" / (img.id + ".seg.pgm")).string());
    }
    nlohmann::json cfg = {{"count", a.count},   {"width", a.width},         {"height", a.height},
                          {"rows", a.rows},     {"cols", a.cols},           {"categories", a.categories},
                          {"fv_length", a.fv_length}, {"vs_per_scene", a.vs_per_scene}};
    write_manifest((fs::path(out) / "manifest.json").string(), "synth", cfg, a.seed, {}, outputs);
    std::cout << "wrote " << ds.images.size() << " scenes, " << ds.scanpaths.size() << " scanpaths to " << out
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string stage;
    std::string split;  // empty: LS for stage fv, the checkpoint's split otherwise
    std::string data;
    std::string init;
    std::string out;
    ModelConfig model;
    TrainConfig train;
    std::uint64_t model_seed = 1;
};

void print_trainable_summary(const Model<float>& model, Stage stage) {
    const auto parts = trainable_partitions(stage);
    long long total = 0;
    std::cout << "trainable parameters by partition:\n";
    for (const auto& p : parts) {
        const long long n = count_parameters(model, {p});
        total += n;
        std::cout << "  " << p << ": " << n << "\n";
    }
    long long decoder_trainable = 0;
    for (const auto& p : parts)
        if (p == partition::kDecoderShared || p == partition::kDecoderFV || p == partition::kDecoderVS)
            decoder_trainable += count_parameters(model, {p});
    std::cout << "  pixel decoder trainable parameters: " << decoder_trainable << "\n";
    std::cout << "  total trainable: " << total << " / " << total_parameters(model) << "\n";
}

int cmd_train(TrainArgs& a) {
    Stage stage;
    if (a.stage == "fv")
        stage = Stage::FV;
    else if (a.stage == "vs-shared")
        stage = Stage::VSShared;
    else if (a.stage == "vs-e2e")
        stage = Stage::VSEndToEnd;
    else
        throw UsageError("unknown --stage '" + a.stage + "', expected fv, vs-shared, or vs-e2e");
    if (stage != Stage::FV && a.init.empty())
        throw UsageError("--stage " + a.stage + " requires --init with a stage-1 fv checkpoint");

    Dataset data = load_data_dir(a.data);

    TrainResult result;
    std::string split_name;
    if (stage == Stage::FV) {
        const SplitConfig split = SplitConfig::from_name(a.split.empty() ? "LS" : a.split);
        Model<float> model(a.model, split, a.model_seed);
        split_name = model.split().name();
        print_trainable_summary(model, stage);
        result = train_stage1_fv(model, data, a.train, &std::cout);
    } else {
        Checkpoint init = load_checkpoint(a.init);
        Model<float> model = model_from_checkpoint(init, a.model_seed);
        if (!a.split.empty() && SplitConfig::from_name(a.split).shared_layers != model.split().shared_layers)
            throw UsageError("checkpoint was built for split " + model.split().name() + ", not " + a.split);
        split_name = model.split().name();
        print_trainable_summary(model, stage);
        result = stage == Stage::VSShared ? train_stage2_vs_shared(model, init, data, a.train, &std::cout)
                                          : train_end_to_end_vs(model, init, data, a.train, &std::cout);
    }
    const std::string out = resolve_out(a.out, a.stage + "-" + split_name + ".ckpt");
    save_checkpoint(result.checkpoint, out);

    nlohmann::json cfg = {{"stage", a.stage}, {"split", split_name}, {"model", a.model.to_json()},
                          {"train", a.train.to_json()}, {"model_seed", a.model_seed}};
    std::vector<std::string> inputs = {a.data};
    if (!a.init.empty()) inputs.push_back(a.init);
    write_manifest(out + ".manifest.json", "train", cfg, a.train.seed, inputs, {out});
    std::cout << "checkpoint written to " << out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string ckpt;
    std::string data;
    std::string baseline_data;
    std::string task;
    std::string out;
    std::string method;
    double cell_fraction = 1.0 / 8.0;
    double sigma_fraction = 1.0 / 32.0;
    std::uint64_t rollout_seed = 0;
    bool gt_as_pred = false;
    bool sample = false;
};

int cmd_eval(const EvalArgs& a) {
    if (a.task != "fv" && a.task != "vs") throw UsageError("--task must be fv or vs");
    const TaskKind task = a.task == "fv" ? TaskKind::FreeViewing : TaskKind::VisualSearch;

    Checkpoint ckpt = load_checkpoint(a.ckpt);
    Model<float> model = model_from_checkpoint(ckpt);
    Dataset data = load_data_dir(a.data);
    Dataset baseline_data = a.baseline_data.empty() || a.baseline_data == a.data ? Dataset{} : load_data_dir(a.baseline_data);
    const Dataset& bdata = baseline_data.images.empty() ? data : baseline_data;

    if (data.images.empty()) throw InputError("dataset has no images");
    const int h4 = data.images.front().height() / 4;
    const int w4 = data.images.front().width() / 4;
    BaselineSet baselines = build_baseline_set(bdata.scanpaths, h4, w4, a.sigma_fraction);

    EvalOptions opts;
    opts.cell_fraction = a.cell_fraction;
    opts.rollout_seed = a.rollout_seed;
    opts.sample_rollout = a.sample;
    opts.gt_as_pred = a.gt_as_pred;
    MetricsReport report = evaluate(model, data, task, baselines, opts);

    const std::string method = a.method.empty() ? ckpt.stage + "-" + model.split().name() : a.method;
    if (!report.has_sem_ss) std::cerr << "warning: segmentation missing, SemSS column left empty\n";
    const std::string row = metrics_row(method, report);
    std::cout << metrics_header() << "\n" << row << "\n";
    if (!a.out.empty()) {
        const bool fresh = !fs::exists(a.out);
        std::ofstream f(a.out, std::ios::app);
        if (!f) throw IOError("cannot write report: " + a.out);
        if (fresh) f << metrics_header() << "\n";
        f << row << "\n";
        f.close();
        write_manifest(a.out + ".manifest.json", "eval",
                       {{"task", a.task}, {"method", method}, {"cell_fraction", a.cell_fraction},
                        {"gt_as_pred", a.gt_as_pred}},
                       a.rollout_seed, {a.ckpt, a.data}, {a.out});
    }
    return 0;
}

// ---------------------------------------------------------------------------
// account
// ---------------------------------------------------------------------------

struct AccountArgs {
    std::string ckpt;
    std::string split = "LS";
    std::string input_size = "128x96";
    std::string table2;
    std::string out;
    ModelConfig model;
    std::uint64_t seed = 1;
};

int cmd_account(const AccountArgs& a) {
    int W = 0, H = 0;
    if (std::sscanf(a.input_size.c_str(), "%dx%d", &W, &H) != 2 || W <= 0 || H <= 0)
        throw UsageError("--input-size must look like 128x96");

    std::ostringstream text;
    {
        Model<float> model = a.ckpt.empty() ? Model<float>(a.model, SplitConfig::from_name(a.split), a.seed)
                                            : model_from_checkpoint(load_checkpoint(a.ckpt));
        CostReport rep = cost_report(model, Branch::VS, H, W);
        text << "module,parameters,flops\n";
        for (const auto& r : rep.rows) text << r.name << "," << r.params << "," << r.flops << "\n";
        text << "total," << rep.params_total() << "," << rep.flops_total() << "\n";

        if (model.config().decoder_layers == 6) {
            SharingReport sharing = measured_sharing_report(model.config(), H, W, model.seed());
            text << "\nsplit,reduced_trainable_params_pct,shared_flops_pct\n";
            for (const auto& r : sharing.rows)
                text << r.split << "," << format_fixed(r.reduced_trainable_params_pct, 2) << ","
                     << format_fixed(r.shared_flops_pct, 2) << "\n";
        } else {
            text << "\nsharing report skipped: decoder has " << model.config().decoder_layers
                 << " layers, the six split configurations need 6\n";
        }
    }

    if (!a.table2.empty()) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_binary_file(a.table2));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("cannot parse published-cost table: ") + e.what());
        }
        PublishedCosts pc = PublishedCosts::from_json(j);
        ReproductionCheck check = reproduce_sharing_arithmetic(pc);
        text << "\npublished,parameters_millions,gflops\n";
        text << "trainable_total," << format_fixed(check.trainable_params_m, 3) << ","
             << format_fixed(check.trainable_gflops, 3) << "\n";
        text << "full_total," << format_fixed(check.total_params_m, 3) << "," << format_fixed(check.total_gflops, 3)
             << "\n";
        text << "recomputed_LS," << format_fixed(check.late_split.reduced_trainable_params_pct, 2) << ","
             << format_fixed(check.late_split.shared_flops_pct, 2) << "\n";
        if (j.contains("reported_reductions") && j["reported_reductions"].contains("LS")) {
            const auto& ls = j["reported_reductions"]["LS"];
            const double rp = ls.value("trainable_params_pct", 0.0);
            const double rf = ls.value("shared_flops_pct", 0.0);
            text << "reported_LS," << format_fixed(rp, 2) << "," << format_fixed(rf, 2) << "\n";
            text << "delta_pp," << format_fixed(std::abs(check.late_split.reduced_trainable_params_pct - rp), 2)
                 << "," << format_fixed(std::abs(check.late_split.shared_flops_pct - rf), 2) << "\n";
        }
    }

    std::cout << text.str();
    if (!a.out.empty()) {
        write_binary_file(a.out, text.str());
        write_manifest(a.out + ".manifest.json", "account",
                       {{"input_size", a.input_size}, {"split", a.split}}, a.seed,
                       a.table2.empty() ? std::vector<std::string>{} : std::vector<std::string>{a.table2}, {a.out});
    }
    return 0;
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

struct RenderArgs {
    std::string ckpt;
    std::string image;
    std::string task;
    int target = 0;
    std::string gt;
    std::string out;
    std::uint64_t seed = 0;
    bool sample = false;
};

int cmd_render(const RenderArgs& a) {
    if (a.task != "fv" && a.task != "vs") throw UsageError("--task must be fv or vs");
    TaskSpec task = a.task == "fv" ? TaskSpec::free_viewing() : TaskSpec::visual_search(a.target);

    Checkpoint ckpt = load_checkpoint(a.ckpt);
    Model<float> model = model_from_checkpoint(ckpt);

    ImageSample sample;
    sample.id = fs::path(a.image).stem().string();
    sample.pixels = image_to_tensor(read_ppm(a.image));
    const fs::path seg_path = fs::path(a.image).parent_path() / (sample.id + ".seg.pgm");
    if (fs::exists(seg_path)) {
        int w = 0, h = 0;
        auto gray = read_pgm(seg_path.string(), w, h);
        sample.segmentation.assign(gray.begin(), gray.end());
        for (unsigned char g : gray)
            if (g > 0) sample.present_targets.insert(static_cast<int>(g));
    } else {
        sample.segmentation.assign(static_cast<std::size_t>(sample.width()) * sample.height(), 0);
    }

    Scanpath pred = model.rollout(sample, task,
                                  a.sample ? Model<float>::RolloutMode::Sample : Model<float>::RolloutMode::Argmax,
                                  a.seed, model.max_len_for(task));

    Scanpath gt;
    bool have_gt = false;
    if (!a.gt.empty()) {
        std::ifstream in(a.gt);
        if (!in) throw IOError("cannot open ground-truth file: " + a.gt);
        std::string line;
        std::size_t index = 0;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            Scanpath p = scanpath_from_json(nlohmann::json::parse(line), index++);
            if (p.image_id == sample.id && p.task.kind == task.kind &&
                (task.kind == TaskKind::FreeViewing || p.task.target == task.target)) {
                gt = std::move(p);
                have_gt = true;
                break;
            }
        }
    }

    const std::string out = resolve_out(a.out, "overlay.ppm");
    ImageU8 img = render_overlay(sample, pred, have_gt ? &gt : nullptr);
    write_ppm(out, img);
    write_manifest(out + ".manifest.json", "render",
                   {{"task", a.task}, {"target", a.target}, {"image", a.image}, {"have_gt", have_gt}}, a.seed,
                   {a.ckpt, a.image}, {out});
    std::cout << "overlay written to " << out << " (" << pred.fixations.size() << " fixations"
              << (have_gt ? ", ground truth drawn" : "") << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"scanshare: dual-task scanpath prediction with a shared feature decoder"};
    app.require_subcommand(1);
    app.set_config("--config", "", "optional config file; command-line flags win on conflict");

    SynthArgs synth;
    CLI::App* c_synth = app.add_subcommand("synth", "generate a synthetic fixation dataset");
    c_synth->add_option("--seed", synth.seed, "base scene seed");
    c_synth->add_option("--count", synth.count, "number of scenes")->required();
    c_synth->add_option("--out", synth.out, "output dataset directory");
    c_synth->add_option("--width", synth.width);
    c_synth->add_option("--height", synth.height);
    c_synth->add_option("--rows", synth.rows);
    c_synth->add_option("--cols", synth.cols);
    c_synth->add_option("--categories", synth.categories);
    c_synth->add_option("--fv-length", synth.fv_length);
    c_synth->add_option("--vs-per-scene", synth.vs_per_scene);

    TrainArgs train;
    train.train.batch_size = 8;  // desk-scale default
    CLI::App* c_train = app.add_subcommand("train", "train one stage");
    c_train->add_option("--stage", train.stage, "fv | vs-shared | vs-e2e")->required();
    c_train->add_option("--split", train.split, "LS | ES51 | ES42 | ES33 | ES24 | ES15");
    c_train->add_option("--data", train.data, "dataset directory")->required();
    c_train->add_option("--init", train.init, "initial checkpoint (required for vs stages)");
    c_train->add_option("--out", train.out, "checkpoint output path");
    c_train->add_option("--feature-dim", train.model.feature_dim);
    c_train->add_option("--decoder-layers", train.model.decoder_layers);
    c_train->add_option("--decoder-heads", train.model.decoder_heads);
    c_train->add_option("--memory-layers", train.model.memory_layers);
    c_train->add_option("--memory-heads", train.model.memory_heads);
    c_train->add_option("--agg-layers", train.model.aggregation_layers);
    c_train->add_option("--agg-heads", train.model.aggregation_heads);
    c_train->add_option("--queries-vs", train.model.queries_vs);
    c_train->add_option("--deform-points", train.model.deform_points);
    c_train->add_option("--ffn-mult", train.model.ffn_mult);
    c_train->add_option("--max-len-fv", train.model.max_len_fv);
    c_train->add_option("--max-len-vs", train.model.max_len_vs);
    c_train->add_option("--epochs", train.train.epochs);
    c_train->add_option("--batch", train.train.batch_size);
    c_train->add_option("--lr", train.train.learning_rate);
    c_train->add_option("--weight-decay", train.train.weight_decay);
    c_train->add_option("--focal-gamma", train.train.focal_gamma);
    c_train->add_option("--focal-alpha", train.train.focal_alpha);
    c_train->add_option("--sigma-fraction", train.train.gt_sigma_fraction);
    c_train->add_option("--term-weight", train.train.termination_weight);
    c_train->add_option("--seed", train.train.seed, "training seed");
    c_train->add_option("--model-seed", train.model_seed, "parameter init seed");

    EvalArgs eval;
    CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
    c_eval->add_option("--ckpt", eval.ckpt)->required();
    c_eval->add_option("--data", eval.data)->required();
    c_eval->add_option("--task", eval.task, "fv | vs")->required();
    c_eval->add_option("--out", eval.out, "report file (appended)");
    c_eval->add_option("--method", eval.method, "row label");
    c_eval->add_option("--baseline-data", eval.baseline_data, "dataset for the density baseline");
    c_eval->add_option("--cell-fraction", eval.cell_fraction);
    c_eval->add_option("--sigma-fraction", eval.sigma_fraction);
    c_eval->add_option("--rollout-seed", eval.rollout_seed);
    c_eval->add_flag("--gt-as-pred", eval.gt_as_pred, "score ground truth against itself");
    c_eval->add_flag("--sample", eval.sample, "sampled instead of argmax rollouts");

    AccountArgs account;
    CLI::App* c_account = app.add_subcommand("account", "parameter and FLOP accounting");
    c_account->add_option("--ckpt", account.ckpt);
    c_account->add_option("--split", account.split);
    c_account->add_option("--input-size", account.input_size, "WxH, default 128x96");
    c_account->add_option("--table2", account.table2, "published per-module cost table (JSON)");
    c_account->add_option("--out", account.out);
    c_account->add_option("--feature-dim", account.model.feature_dim);
    c_account->add_option("--memory-layers", account.model.memory_layers);
    c_account->add_option("--agg-layers", account.model.aggregation_layers);
    c_account->add_option("--queries-vs", account.model.queries_vs);
    c_account->add_option("--seed", account.seed);

    RenderArgs render;
    CLI::App* c_render = app.add_subcommand("render", "render a scanpath overlay");
    c_render->add_option("--ckpt", render.ckpt)->required();
    c_render->add_option("--image", render.image, "scene image (PPM)")->required();
    c_render->add_option("--task", render.task, "fv | vs")->required();
    c_render->add_option("--target", render.target, "search target (vs)");
    c_render->add_option("--gt", render.gt, "scanpath file with ground truth");
    c_render->add_option("--out", render.out, "output overlay (PPM)");
    c_render->add_option("--seed", render.seed);
    c_render->add_flag("--sample", render.sample);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (c_synth->parsed()) return cmd_synth(synth);
        if (c_train->parsed()) return cmd_train(train);
        if (c_eval->parsed()) return cmd_eval(eval);
        if (c_account->parsed()) return cmd_account(account);
        if (c_render->parsed()) return cmd_render(render);
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
