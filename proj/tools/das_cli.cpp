#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "das/config.hpp"
#include "das/errors.hpp"
#include "das/io.hpp"
#include "das/train.hpp"

namespace fs = std::filesystem;
using namespace das;

namespace {

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg = load_config_file(path);
    apply_seed_env(cfg);
    return cfg;
}

int cmd_gen(const std::string& config_path, const std::string& out_dir) {
    RunConfig cfg = load_run_config(config_path);
    std::vector<Scene> scenes = gen_scenes(cfg.scene, cfg.scene_count, cfg.seed);
    save_scenes(out_dir, scenes, cfg.scene.skeleton);
    std::cout << "wrote " << scenes.size() << " scenes to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
    RunConfig cfg = load_run_config(config_path);
    std::vector<Scene> scenes = load_scenes(data_dir);
    std::vector<LossBreakdown> history;
    TrainedModel model = train_model(scenes, cfg, &history);
    save_model(out_dir, model);
    save_loss_history_csv((fs::path(out_dir) / "loss_curve.csv").string(), history);
    std::cout << "trained " << cfg.train.steps << " steps on " << scenes.size()
              << " scenes; checkpoint in " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_dir, const std::string& data_dir,
             const std::string& report_path) {
    TrainedModel model = load_model(ckpt_dir);
    std::vector<Scene> scenes = load_scenes(data_dir);
    Report report = evaluate_model(model, scenes);
    save_report_csv(report_path, report);
    std::cout << "mean mpjpe_mm=" << report.mean_mpjpe
              << " pck_rel=" << report.mean_pck_rel
              << " pck_abs=" << report.mean_pck_abs << "\n";
    return 0;
}

int cmd_decode(const std::string& maps_path, const std::string& intr_path,
               const std::string& out_path, double threshold, double nms_radius,
               int update_layers) {
    std::vector<double> strides;
    PredictionMaps maps = load_prediction_maps(maps_path, &strides);

    Scene intr_holder = load_scene(intr_path);  // camera block only is required
    CameraIntrinsics intr = intr_holder.intrinsics;

    LevelConfig levels;
    levels.strides = strides;
    levels.ranges.assign(strides.size(), 0.0);
    for (std::size_t i = 1; i < levels.ranges.size(); ++i) levels.ranges[i] = i;

    EvalConfig eval;
    eval.threshold = threshold;
    eval.nms_radius_mm = nms_radius;
    UpdateConfig update;
    update.n_layers = update_layers;
    update.mode = UpdateMode::Recursive;

    std::vector<Detection> dets =
        run_inference(maps, levels, intr, eval, update, {}, 0);
    save_detections_json(out_path, dets);
    std::cout << "decoded " << dets.size() << " detections to " << out_path << "\n";
    return 0;
}

int cmd_export_dist(const std::string& ckpt_dir, const std::string& out_path,
                    double z_range, double step) {
    FlowModel flow = load_flow((fs::path(ckpt_dir) / "flow.json").string());
    DistributionTable table = export_distribution(flow, -z_range, z_range, step);
    save_distribution_csv(out_path, table);
    std::cout << "wrote density table (" << table.n << "x" << table.n << ") to "
              << out_path << "\n";
    return 0;
}

void apply_sweep_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto as_int = [&] { return std::stoi(value); };
    auto as_double = [&] { return std::stod(value); };
    if (key == "update_layers") cfg.update.n_layers = as_int();
    else if (key == "update_mode")
        cfg.update.mode = value == "multi_source" ? UpdateMode::MultiSource
                                                  : UpdateMode::Recursive;
    else if (key == "M") cfg.update.M = as_int();
    else if (key == "pose_loss") {
        if (value == "l1") cfg.loss.pose_loss = PoseLoss::L1;
        else if (value == "mle") cfg.loss.pose_loss = PoseLoss::Mle;
        else if (value == "rle") cfg.loss.pose_loss = PoseLoss::Rle;
        else throw ConfigError("ablate: unknown pose_loss '" + value + "'");
    } else if (key == "steps") cfg.train.steps = as_int();
    else if (key == "lr") cfg.train.lr = as_double();
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "label_noise") {
        if (value == "none") cfg.train.label_noise = LabelNoise::None;
        else if (value == "heteroscedastic")
            cfg.train.label_noise = LabelNoise::Heteroscedastic;
        else throw ConfigError("ablate: unknown label_noise '" + value + "'");
    } else {
        throw ConfigError("ablate: unsupported sweep key '" + key + "'");
    }
}

int cmd_ablate(const std::string& config_path, const std::string& sweep,
               const std::string& out_path) {
    auto eq = sweep.find('=');
    if (eq == std::string::npos)
        throw ConfigError("ablate: --sweep must look like key=v1,v2,...");
    std::string key = sweep.substr(0, eq);
    std::vector<std::string> values;
    std::stringstream ss(sweep.substr(eq + 1));
    std::string item;
    while (std::getline(ss, item, ',')) values.push_back(item);
    if (values.empty()) throw ConfigError("ablate: no sweep values given");

    std::ostringstream csv;
    csv << key << ",mean_mpjpe_mm,mean_pck_rel,mean_pck_abs\n";
    for (const std::string& v : values) {
        RunConfig cfg = load_run_config(config_path);
        apply_sweep_value(cfg, key, v);
        std::vector<Scene> scenes = gen_scenes(cfg.scene, cfg.scene_count, cfg.seed);
        TrainedModel model = train_model(scenes, cfg);
        Report report = evaluate_model(model, scenes);
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g\n", v.c_str(),
                      report.mean_mpjpe, report.mean_pck_rel, report.mean_pck_abs);
        csv << buf;
        std::cout << key << "=" << v << ": mpjpe_mm=" << report.mean_mpjpe
                  << " pck_rel=" << report.mean_pck_rel << "\n";
    }
    std::ofstream out(out_path);
    if (!out) throw ConfigError("ablate: cannot write '" + out_path + "'");
    out << csv.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Single-stage multi-person 3D pose engine"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, ckpt_dir, maps_path, intr_path;
    std::string report_path, sweep;
    double threshold = 0.05, nms_radius = 150.0, z_range = 4.0, z_step = 0.1;
    int update_layers = 0;

    CLI::App* gen = app.add_subcommand("gen", "Generate synthetic scenes");
    gen->add_option("--config", config_path, "Run config JSON")->required();
    gen->add_option("--out", out_path, "Output scene directory")->required();

    CLI::App* train = app.add_subcommand("train", "Train a model");
    train->add_option("--config", config_path, "Run config JSON")->required();
    train->add_option("--data", data_dir, "Scene directory")->required();
    train->add_option("--out", out_path, "Checkpoint directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval->add_option("--ckpt", ckpt_dir, "Checkpoint directory")->required();
    eval->add_option("--data", data_dir, "Scene directory")->required();
    eval->add_option("--report", report_path, "Report CSV path")->required();

    CLI::App* decode = app.add_subcommand("decode", "Decode prediction maps");
    decode->add_option("--maps", maps_path, "Prediction-map manifest JSON")->required();
    decode->add_option("--intr", intr_path, "Scene/intrinsics JSON")->required();
    decode->add_option("--out", out_path, "Detections JSON")->required();
    decode->add_option("--threshold", threshold, "Confidence threshold");
    decode->add_option("--nms-radius", nms_radius, "NMS radius in mm");
    decode->add_option("--update-layers", update_layers,
                       "Recursive update layers before decoding");

    CLI::App* expdist = app.add_subcommand("export-dist", "Export learned density table");
    expdist->add_option("--ckpt", ckpt_dir, "Checkpoint directory")->required();
    expdist->add_option("--out", out_path, "CSV output path")->required();
    expdist->add_option("--range", z_range, "Grid half-range");
    expdist->add_option("--step", z_step, "Grid step");

    CLI::App* ablate = app.add_subcommand("ablate", "Paired sweep runs");
    ablate->add_option("--config", config_path, "Run config JSON")->required();
    ablate->add_option("--sweep", sweep, "key=v1,v2,... sweep spec")->required();
    ablate->add_option("--out", out_path, "Summary CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gen(config_path, out_path);
        if (train->parsed()) return cmd_train(config_path, data_dir, out_path);
        if (eval->parsed()) return cmd_eval(ckpt_dir, data_dir, report_path);
        if (decode->parsed())
            return cmd_decode(maps_path, intr_path, out_path, threshold, nms_radius,
                              update_layers);
        if (expdist->parsed()) return cmd_export_dist(ckpt_dir, out_path, z_range, z_step);
        if (ablate->parsed()) return cmd_ablate(config_path, sweep, out_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
