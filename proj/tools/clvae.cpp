#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "clvae/baselines.hpp"
#include "clvae/changepoint.hpp"
#include "clvae/divergence.hpp"
#include "clvae/inference.hpp"
#include "clvae/kernels.hpp"
#include "clvae/metrics.hpp"
#include "clvae/model.hpp"
#include "clvae/patching.hpp"
#include "clvae/png_io.hpp"
#include "clvae/raster_io.hpp"
#include "clvae/synthdata.hpp"
#include "clvae/training.hpp"

namespace fs = std::filesystem;

namespace {

void log_line(const std::string& msg) { std::cerr << "[clvae] " << msg << "\n"; }

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
}

std::vector<std::string> split_commas(const std::string& joined) {
    std::vector<std::string> parts;
    std::string item;
    std::istringstream in(joined);
    while (std::getline(in, item, ',')) {
        if (!item.empty()) parts.push_back(item);
    }
    return parts;
}

bool is_raster_file(const fs::path& p) {
    const auto ext = p.extension().string();
    return ext == ".tif" || ext == ".tiff" || ext == ".sarf";
}

// Loads every image raster in a directory, oldest acquisition first. Ground
// truth rasters written by `synth` (gt_*) are skipped so a synth output
// directory can be consumed directly.
std::vector<clvae::SarTile> load_tile_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || !is_raster_file(entry.path())) continue;
        if (entry.path().filename().string().rfind("gt_", 0) == 0) continue;
        paths.push_back(entry.path());
    }
    if (paths.empty()) throw std::runtime_error("no rasters (.tif/.tiff/.sarf) in " + dir);
    std::vector<clvae::SarTile> tiles;
    tiles.reserve(paths.size());
    for (const auto& p : paths) tiles.push_back(clvae::load_tile(p.string()));
    std::sort(tiles.begin(), tiles.end(), [](const auto& a, const auto& b) {
        return a.acquisition_date < b.acquisition_date;
    });
    return tiles;
}

void save_map_products(const clvae::NdArray& map, const clvae::NdArray& mask,
                       const std::string& out_dir,
                       const std::optional<clvae::GeoBounds>& bounds) {
    fs::create_directories(out_dir);
    clvae::save_raster(map, out_dir + "/change_map.tif", bounds);
    clvae::save_raster(mask, out_dir + "/change_mask.tif", bounds);
    std::vector<std::uint8_t> pixels(mask.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = mask[i] > 0.0 ? 255 : 0;
    clvae::png::write_gray(out_dir + "/change_mask.png", pixels.data(), mask.dim(1),
                           mask.dim(0));
}

double changed_percent(const clvae::NdArray& mask) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) n += mask[i] > 0.0;
    return mask.size() ? 100.0 * double(n) / double(mask.size()) : 0.0;
}

std::string percent_str(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", value);
    return buf;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string config_path;
    std::string data_dir;
    std::string out_dir;
    std::size_t epochs = 0;
    std::size_t batch = 0;
    double lr = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    double margin = 0.0;
    std::size_t steps = 0;
};

struct TrainFileConfig {
    clvae::ModelConfig model;
    clvae::LossWeights weights;
    clvae::TrainSchedule schedule;
    double margin = 1.0;
    bool augment = true;
    std::size_t steps_per_epoch = 0;
};

TrainFileConfig parse_train_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("train config: bad JSON: ") + e.what());
    }
    TrainFileConfig cfg;
    try {
        if (j.contains("model")) cfg.model = clvae::config_from_json(j["model"].dump());
        if (j.contains("loss")) {
            const auto& l = j["loss"];
            if (l.contains("alpha")) cfg.weights.alpha = l["alpha"].get<double>();
            if (l.contains("beta")) cfg.weights.beta = l["beta"].get<double>();
        }
        if (j.contains("schedule")) {
            const auto& s = j["schedule"];
            auto& o = cfg.schedule;
            if (s.contains("initial_lr")) o.initial_lr = s["initial_lr"].get<double>();
            if (s.contains("min_lr")) o.min_lr = s["min_lr"].get<double>();
            if (s.contains("plateau_patience")) {
                o.plateau_patience = s["plateau_patience"].get<std::size_t>();
            }
            if (s.contains("stop_patience")) o.stop_patience = s["stop_patience"].get<std::size_t>();
            if (s.contains("max_epochs")) o.max_epochs = s["max_epochs"].get<std::size_t>();
            if (s.contains("batch_size")) o.batch_size = s["batch_size"].get<std::size_t>();
            if (s.contains("improvement_tolerance")) {
                o.improvement_tolerance = s["improvement_tolerance"].get<double>();
            }
            if (s.contains("lr_decay")) o.lr_decay = s["lr_decay"].get<double>();
        }
        if (j.contains("margin")) cfg.margin = j["margin"].get<double>();
        if (j.contains("augment")) cfg.augment = j["augment"].get<bool>();
        if (j.contains("steps_per_epoch")) {
            cfg.steps_per_epoch = j["steps_per_epoch"].get<std::size_t>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("train config: bad field type: ") + e.what());
    }
    return cfg;
}

nlohmann::json resolved_train_json(const TrainFileConfig& cfg) {
    return {
        {"model", nlohmann::json::parse(clvae::config_to_json(cfg.model))},
        {"loss", {{"alpha", cfg.weights.alpha}, {"beta", cfg.weights.beta}}},
        {"schedule",
         {{"initial_lr", cfg.schedule.initial_lr},
          {"min_lr", cfg.schedule.min_lr},
          {"plateau_patience", cfg.schedule.plateau_patience},
          {"stop_patience", cfg.schedule.stop_patience},
          {"max_epochs", cfg.schedule.max_epochs},
          {"batch_size", cfg.schedule.batch_size},
          {"improvement_tolerance", cfg.schedule.improvement_tolerance},
          {"lr_decay", cfg.schedule.lr_decay}}},
        {"margin", cfg.margin},
        {"augment", cfg.augment},
        {"steps_per_epoch", cfg.steps_per_epoch},
    };
}

int run_train(const TrainArgs& args, const CLI::App& cmd, std::uint64_t seed) {
    TrainFileConfig cfg;
    if (!args.config_path.empty()) cfg = parse_train_config(read_text_file(args.config_path));
    if (cmd.count("--epochs")) cfg.schedule.max_epochs = args.epochs;
    if (cmd.count("--batch")) cfg.schedule.batch_size = args.batch;
    if (cmd.count("--lr")) cfg.schedule.initial_lr = args.lr;
    if (cmd.count("--alpha")) cfg.weights.alpha = args.alpha;
    if (cmd.count("--beta")) cfg.weights.beta = args.beta;
    if (cmd.count("--margin")) cfg.margin = args.margin;
    if (cmd.count("--steps")) cfg.steps_per_epoch = args.steps;
    cfg.model.validate();
    cfg.weights.validate();
    cfg.schedule.validate();
    log_line("config: " + resolved_train_json(cfg).dump());

    // Each scene is a directory of exactly `timesteps` pre-event tiles; a
    // flat directory of tiles is a single scene.
    std::vector<std::string> scene_dirs;
    for (const auto& entry : fs::directory_iterator(args.data_dir)) {
        if (entry.is_directory()) scene_dirs.push_back(entry.path().string());
    }
    if (scene_dirs.empty()) scene_dirs.push_back(args.data_dir);
    std::sort(scene_dirs.begin(), scene_dirs.end());
    std::vector<clvae::TimeSeriesStack> scenes;
    for (const auto& dir : scene_dirs) {
        auto tiles = load_tile_dir(dir);
        if (tiles.size() != cfg.model.timesteps) {
            throw std::runtime_error("scene " + dir + " holds " + std::to_string(tiles.size()) +
                                     " tiles but the model expects exactly " +
                                     std::to_string(cfg.model.timesteps));
        }
        scenes.push_back(clvae::stack_pre_series(tiles, cfg.model.timesteps));
    }
    log_line("scenes: " + std::to_string(scenes.size()));

    clvae::ClvaeModel model(cfg.model, seed);
    fs::create_directories(args.out_dir);
    clvae::TrainOptions options;
    options.weights = cfg.weights;
    options.schedule = cfg.schedule;
    options.contrastive_margin = cfg.margin;
    options.seed = seed;
    options.steps_per_epoch = cfg.steps_per_epoch;
    options.augment = cfg.augment;
    options.checkpoint_dir = args.out_dir;
    options.history_csv = args.out_dir + "/history.csv";
    options.verbose = true;
    const auto result = clvae::train(model, scenes, options);

    write_text_file(args.out_dir + "/resolved_config.json",
                    resolved_train_json(cfg).dump(2) + "\n");
    const auto& last = result.history.back();
    std::cout << "epochs run: " << result.history.size()
              << (result.stopped_early ? " (stopped early)" : "") << "\n";
    std::cout << "final total loss: " << last.losses.total << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// infer

struct InferArgs {
    std::string model_path;
    std::string pre_joined;
    std::string post_path;
    std::string kind = "cosd";
    double threshold = 0.0;
    std::string out_dir;
    std::size_t batch = 512;
};

int run_infer(const InferArgs& args, const CLI::App& cmd) {
    auto model = clvae::ClvaeModel::load(args.model_path);
    const auto kind = clvae::divergence_kind_from_string(args.kind);
    const double threshold =
        cmd.count("--threshold") ? args.threshold : clvae::default_threshold(kind);

    const auto pre_paths = split_commas(args.pre_joined);
    if (pre_paths.size() != model.config().timesteps) {
        throw std::runtime_error("model expects " + std::to_string(model.config().timesteps) +
                                 " pre-event images, got " + std::to_string(pre_paths.size()));
    }
    std::vector<clvae::SarTile> pre;
    pre.reserve(pre_paths.size());
    for (const auto& p : pre_paths) pre.push_back(clvae::load_tile(p));
    std::sort(pre.begin(), pre.end(), [](const auto& a, const auto& b) {
        return a.acquisition_date < b.acquisition_date;
    });
    auto post = clvae::load_tile(args.post_path);

    log_line("config: " + nlohmann::json({{"model", args.model_path},
                                          {"kind", clvae::to_string(kind)},
                                          {"threshold", threshold},
                                          {"batch_size", args.batch}})
                              .dump());

    clvae::InferenceOptions options;
    options.kind = kind;
    options.batch_size = args.batch;
    const auto map = clvae::change_map(pre, post, model, options);
    const auto mask = clvae::binarize(map, threshold);
    fs::create_directories(args.out_dir);
    clvae::export_change_products(map, mask, args.out_dir, post.bounds);
    std::cout << "changed pixels: " << percent_str(changed_percent(mask.mask)) << "\n";
    std::cout << "products written to " << args.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// changepoint

struct ChangepointArgs {
    std::string model_path;
    std::string ref_path;
    std::string window_dir;
    std::string mode = "fixed";
    double threshold = 5.0;
    std::string kind = "cosd";
    double map_threshold = 0.0;
    std::string out_path;
    std::size_t batch = 512;
};

int run_changepoint(const ChangepointArgs& args, const CLI::App& cmd) {
    auto model = clvae::ClvaeModel::load(args.model_path);
    auto reference = clvae::load_tile(args.ref_path);
    auto window = load_tile_dir(args.window_dir);

    clvae::ChangePointOptions options;
    options.kind = clvae::divergence_kind_from_string(args.kind);
    options.mode = clvae::threshold_mode_from_string(args.mode);
    options.fixed_threshold = args.threshold;
    options.batch_size = args.batch;
    if (cmd.count("--map-threshold")) options.map_threshold = args.map_threshold;

    log_line("config: " +
             nlohmann::json({{"model", args.model_path},
                             {"kind", clvae::to_string(options.kind)},
                             {"mode", clvae::to_string(options.mode)},
                             {"threshold", args.threshold},
                             {"map_threshold", options.map_threshold
                                                   ? nlohmann::json(*options.map_threshold)
                                                   : nlohmann::json(nullptr)},
                             {"window_size", window.size()},
                             {"batch_size", args.batch}})
                 .dump());

    const auto result = clvae::detect_change_point(reference, window, model, options);
    write_text_file(args.out_path, clvae::change_point_report_json(result));
    if (result.change_point) {
        std::cout << "change point: " << result.change_point->iso() << "\n";
    } else {
        std::cout << "change point: none\n";
    }
    std::cout << "report written to " << args.out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// baseline

struct BaselineArgs {
    std::string method;
    std::string pre_path;
    std::string post_path;
    std::string out_dir;
    std::string policy = "mean_abs";
    std::size_t lee_window = 5;
    std::size_t bins = 256;
};

int run_baseline(const BaselineArgs& args) {
    const auto method = clvae::baseline_method_from_string(args.method);
    clvae::BaselineOptions options;
    options.policy = clvae::channel_policy_from_string(args.policy);
    options.lee_window = args.lee_window;
    options.histogram_bins = args.bins;

    log_line("config: " + nlohmann::json({{"method", args.method},
                                          {"policy", args.policy},
                                          {"lee_window", args.lee_window},
                                          {"histogram_bins", args.bins}})
                              .dump());

    auto pre = clvae::load_tile(args.pre_path);
    auto post = clvae::load_tile(args.post_path);
    const auto result = clvae::run_baseline(method, pre, post, options);
    if (result.degenerate_threshold) {
        log_line("warning: histogram was degenerate, threshold fell back to " +
                 std::to_string(result.threshold));
    }
    save_map_products(result.map, result.mask, args.out_dir, post.bounds);
    std::cout << "threshold: " << result.threshold << "\n";
    std::cout << "changed pixels: " << percent_str(changed_percent(result.mask)) << "\n";
    std::cout << "products written to " << args.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
    std::string pred_path;
    std::string gt_path;
    std::string out_path;
    std::string name = "site";
    std::string csv_path;
};

int run_evaluate(const EvaluateArgs& args) {
    log_line("config: " + nlohmann::json({{"pred", args.pred_path}, {"gt", args.gt_path}}).dump());
    const auto pred = clvae::load_raster(args.pred_path);
    const auto gt = clvae::load_mask(args.gt_path);
    const auto report = clvae::score(pred, gt);
    write_text_file(args.out_path, clvae::metrics_report_json(report));
    if (!args.csv_path.empty()) {
        write_text_file(args.csv_path, clvae::metrics_table_csv({{args.name, report}}));
    }
    std::printf("recall %.1f%%  precision %.1f%%  f1 %.1f%%  iou %.1f%%\n", 100.0 * report.recall,
                100.0 * report.precision, 100.0 * report.f1, 100.0 * report.iou);
    std::cout << "report written to " << args.out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::string spec_path;
    std::string out_dir;
};

int run_synth(const SynthArgs& args, std::uint64_t seed, bool seed_given) {
    auto spec = clvae::scene_spec_from_json(read_text_file(args.spec_path));
    if (seed_given) spec.seed = seed;
    log_line("config: " + nlohmann::json({{"spec", args.spec_path},
                                          {"seed", spec.seed},
                                          {"dates", spec.dates.size()},
                                          {"polygons", spec.flood_polygons.size()}})
                              .dump());
    const auto frames = clvae::generate(spec);
    fs::create_directories(args.out_dir);
    write_text_file(args.out_dir + "/scene_spec.json", clvae::scene_spec_to_json(spec));
    for (const auto& frame : frames) {
        const auto date = frame.tile.acquisition_date.iso();
        clvae::save_tile(frame.tile, args.out_dir + "/img_" + date + ".tif");
        clvae::save_mask(frame.truth, args.out_dir + "/gt_" + date + ".tif");
    }
    std::cout << "wrote " << frames.size() << " dates to " << args.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SAR time-series change detection with a contrastive ConvLSTM VAE"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    std::string backend = "auto";
    bool deterministic = false;
    app.add_option("--seed", seed, "Seed for model init, training, and synthesis")
        ->capture_default_str();
    app.add_option("--backend", backend, "Kernel backend")
        ->check(CLI::IsMember({"scalar", "avx2", "avx512", "auto"}))
        ->capture_default_str();
    app.add_flag("--deterministic", deterministic,
                 "Force the scalar backend for machine-independent bit-exact runs");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train the model on pre-event series");
    train_cmd->fallthrough();
    train_cmd->add_option("--config", train_args.config_path, "JSON config file");
    train_cmd->add_option("--data", train_args.data_dir, "Directory of scenes")->required();
    train_cmd->add_option("--out", train_args.out_dir, "Checkpoint/history directory")
        ->required();
    train_cmd->add_option("--epochs", train_args.epochs, "Override max epochs");
    train_cmd->add_option("--batch", train_args.batch, "Override batch size");
    train_cmd->add_option("--lr", train_args.lr, "Override initial learning rate");
    train_cmd->add_option("--alpha", train_args.alpha, "Override KL weight");
    train_cmd->add_option("--beta", train_args.beta, "Override reconstruction weight");
    train_cmd->add_option("--margin", train_args.margin, "Override contrastive margin");
    train_cmd->add_option("--steps", train_args.steps, "Override gradient steps per epoch");

    InferArgs infer_args;
    auto* infer_cmd = app.add_subcommand("infer", "Produce a change map from pre/post images");
    infer_cmd->fallthrough();
    infer_cmd->add_option("--model", infer_args.model_path, "Checkpoint file")->required();
    infer_cmd->add_option("--pre", infer_args.pre_joined, "Comma-separated pre-event images")
        ->required();
    infer_cmd->add_option("--post", infer_args.post_path, "Post-event image")->required();
    infer_cmd->add_option("--kind", infer_args.kind, "Divergence kind")
        ->check(CLI::IsMember({"kld", "jsd", "ed", "cosd"}))
        ->capture_default_str();
    infer_cmd->add_option("--threshold", infer_args.threshold,
                          "Binarization threshold (defaults per kind)");
    infer_cmd->add_option("--out", infer_args.out_dir, "Output directory")->required();
    infer_cmd->add_option("--batch", infer_args.batch, "Encoder batch size")
        ->capture_default_str();

    ChangepointArgs cp_args;
    auto* cp_cmd = app.add_subcommand("changepoint", "Locate the change date in a window");
    cp_cmd->fallthrough();
    cp_cmd->add_option("--model", cp_args.model_path, "Checkpoint file")->required();
    cp_cmd->add_option("--ref", cp_args.ref_path, "Reference (pre-event) image")->required();
    cp_cmd->add_option("--window", cp_args.window_dir, "Directory of dated window images")
        ->required();
    cp_cmd->add_option("--mode", cp_args.mode, "Percentage thresholding rule")
        ->check(CLI::IsMember({"median", "fixed"}))
        ->capture_default_str();
    cp_cmd->add_option("--threshold", cp_args.threshold, "Fixed percentage threshold")
        ->capture_default_str();
    cp_cmd->add_option("--kind", cp_args.kind, "Divergence kind")
        ->check(CLI::IsMember({"kld", "jsd", "ed", "cosd"}))
        ->capture_default_str();
    cp_cmd->add_option("--map-threshold", cp_args.map_threshold,
                       "Per-map binarization threshold (defaults per kind)");
    cp_cmd->add_option("--out", cp_args.out_path, "JSON report path")->required();
    cp_cmd->add_option("--batch", cp_args.batch, "Encoder batch size")->capture_default_str();

    BaselineArgs base_args;
    auto* base_cmd = app.add_subcommand("baseline", "Classical change detection");
    base_cmd->fallthrough();
    base_cmd->add_option("--method", base_args.method, "Detector")
        ->check(CLI::IsMember({"logratio-otsu", "logratio-yen", "cva"}))
        ->required();
    base_cmd->add_option("--pre", base_args.pre_path, "Pre-event image")->required();
    base_cmd->add_option("--post", base_args.post_path, "Post-event image")->required();
    base_cmd->add_option("--out", base_args.out_dir, "Output directory")->required();
    base_cmd->add_option("--policy", base_args.policy, "Log-ratio channel policy")
        ->check(CLI::IsMember({"vv", "vh", "mean_abs"}))
        ->capture_default_str();
    base_cmd->add_option("--lee-window", base_args.lee_window, "Lee filter window (odd)")
        ->capture_default_str();
    base_cmd->add_option("--bins", base_args.bins, "Histogram bins for thresholding")
        ->capture_default_str();

    EvaluateArgs eval_args;
    auto* eval_cmd = app.add_subcommand("evaluate", "Score a change mask against ground truth");
    eval_cmd->fallthrough();
    eval_cmd->add_option("--pred", eval_args.pred_path, "Predicted mask raster")->required();
    eval_cmd->add_option("--gt", eval_args.gt_path, "Ground truth mask")->required();
    eval_cmd->add_option("--out", eval_args.out_path, "JSON report path")->required();
    eval_cmd->add_option("--name", eval_args.name, "Site label for the CSV table")
        ->capture_default_str();
    eval_cmd->add_option("--csv", eval_args.csv_path, "Also write a one-row CSV table");

    SynthArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic flood scene");
    synth_cmd->fallthrough();
    synth_cmd->add_option("--spec", synth_args.spec_path, "Scene spec JSON")->required();
    synth_cmd->add_option("--out", synth_args.out_dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        namespace kn = clvae::kernels;
        if (deterministic) {
            kn::set_backend(kn::Backend::scalar);
        } else if (app.count("--backend")) {
            kn::set_backend(kn::parse_backend(backend));
        }
        log_line(std::string("backend: ") + kn::backend_name(kn::active_backend()));
        log_line("seed: " + std::to_string(seed));

        if (train_cmd->parsed()) return run_train(train_args, *train_cmd, seed);
        if (infer_cmd->parsed()) return run_infer(infer_args, *infer_cmd);
        if (cp_cmd->parsed()) return run_changepoint(cp_args, *cp_cmd);
        if (base_cmd->parsed()) return run_baseline(base_args);
        if (eval_cmd->parsed()) return run_evaluate(eval_args);
        if (synth_cmd->parsed()) return run_synth(synth_args, seed, app.count("--seed") > 0);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
