#include "das/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "das/errors.hpp"

namespace das {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) { ok = true; break; }
        if (!ok) throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

BaseDist parse_base(const std::string& s, const std::string& where) {
    if (s == "gaussian") return BaseDist::Gaussian;
    if (s == "laplace") return BaseDist::Laplace;
    throw ConfigError("config: " + where + " must be 'gaussian' or 'laplace', got '" + s + "'");
}

std::string base_name(BaseDist b) {
    return b == BaseDist::Gaussian ? "gaussian" : "laplace";
}

}  // namespace

void RunConfig::validate() const {
    levels.validate();
    if (scene_count < 1) throw ConfigError("config: scene_count must be >= 1");
    if (train.steps < 1) throw ConfigError("config: train.steps must be >= 1");
    if (train.lr <= 0) throw ConfigError("config: train.lr must be > 0");
    if (loss.focal_alpha < 0 || loss.focal_gamma < 0)
        throw ConfigError("config: focal parameters must be >= 0");
    if (loss.lambda1 < 0 || loss.lambda2 < 0 || loss.lambda3 < 0)
        throw ConfigError("config: loss weights must be >= 0");
    if (update.n_layers < 0) throw ConfigError("config: update.n_layers must be >= 0");
    if (update.M < 1) throw ConfigError("config: update.M must be >= 1");
    if (flow.layers < 0 || flow.hidden < 1)
        throw ConfigError("config: invalid flow architecture");
    if (eval.threshold < 0 || eval.nms_radius_mm < 0)
        throw ConfigError("config: invalid eval settings");
    if (scene.f_px <= 0) throw ConfigError("config: scene.f_px must be > 0");
}

RunConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: JSON parse failure: ") + e.what());
    }

    RunConfig cfg;
    try {
        reject_unknown(j, {"seed", "scene_count", "scene", "levels", "loss", "flow",
                           "update", "train", "eval"},
                       "root");
        get_if(j, "seed", cfg.seed);
        get_if(j, "scene_count", cfg.scene_count);

        if (j.contains("scene")) {
            const json& s = j["scene"];
            reject_unknown(s,
                           {"width", "height", "f_px", "min_persons", "max_persons",
                            "depth_min_mm", "depth_max_mm", "jitter_mm",
                            "min_separation_mm", "margin_px"},
                           "scene");
            get_if(s, "width", cfg.scene.image_w);
            get_if(s, "height", cfg.scene.image_h);
            get_if(s, "f_px", cfg.scene.f_px);
            get_if(s, "min_persons", cfg.scene.min_persons);
            get_if(s, "max_persons", cfg.scene.max_persons);
            get_if(s, "depth_min_mm", cfg.scene.depth_min_mm);
            get_if(s, "depth_max_mm", cfg.scene.depth_max_mm);
            get_if(s, "jitter_mm", cfg.scene.jitter_mm);
            get_if(s, "min_separation_mm", cfg.scene.min_separation_mm);
            get_if(s, "margin_px", cfg.scene.margin_px);
        }
        if (j.contains("levels")) {
            const json& s = j["levels"];
            reject_unknown(s, {"strides", "ranges", "n_pos"}, "levels");
            get_if(s, "strides", cfg.levels.strides);
            get_if(s, "ranges", cfg.levels.ranges);
            get_if(s, "n_pos", cfg.levels.n_pos);
        }
        if (j.contains("loss")) {
            const json& s = j["loss"];
            reject_unknown(s,
                           {"focal_alpha", "focal_gamma", "lambda1", "lambda2", "lambda3",
                            "pose_loss", "rle_prior"},
                           "loss");
            get_if(s, "focal_alpha", cfg.loss.focal_alpha);
            get_if(s, "focal_gamma", cfg.loss.focal_gamma);
            get_if(s, "lambda1", cfg.loss.lambda1);
            get_if(s, "lambda2", cfg.loss.lambda2);
            get_if(s, "lambda3", cfg.loss.lambda3);
            if (s.contains("pose_loss")) {
                std::string p = s["pose_loss"].get<std::string>();
                if (p == "l1") cfg.loss.pose_loss = PoseLoss::L1;
                else if (p == "mle") cfg.loss.pose_loss = PoseLoss::Mle;
                else if (p == "rle") cfg.loss.pose_loss = PoseLoss::Rle;
                else throw ConfigError("config: pose_loss must be l1|mle|rle, got '" + p + "'");
            }
            if (s.contains("rle_prior"))
                cfg.loss.rle_prior = parse_base(s["rle_prior"].get<std::string>(), "rle_prior");
        }
        if (j.contains("flow")) {
            const json& s = j["flow"];
            reject_unknown(s, {"layers", "hidden", "s_max", "base"}, "flow");
            get_if(s, "layers", cfg.flow.layers);
            get_if(s, "hidden", cfg.flow.hidden);
            get_if(s, "s_max", cfg.flow.s_max);
            if (s.contains("base"))
                cfg.flow.base = parse_base(s["base"].get<std::string>(), "flow.base");
        }
        if (j.contains("update")) {
            const json& s = j["update"];
            reject_unknown(s, {"n_layers", "mode", "M", "sampler_hidden"}, "update");
            get_if(s, "n_layers", cfg.update.n_layers);
            get_if(s, "M", cfg.update.M);
            get_if(s, "sampler_hidden", cfg.update.sampler_hidden);
            if (s.contains("mode")) {
                std::string m = s["mode"].get<std::string>();
                if (m == "recursive") cfg.update.mode = UpdateMode::Recursive;
                else if (m == "multi_source") cfg.update.mode = UpdateMode::MultiSource;
                else throw ConfigError("config: update.mode must be recursive|multi_source");
            }
        }
        if (j.contains("train")) {
            const json& s = j["train"];
            reject_unknown(s,
                           {"mode", "steps", "lr", "momentum", "depth_lr_scale",
                            "label_noise", "init", "noise"},
                           "train");
            if (s.contains("mode")) {
                std::string m = s["mode"].get<std::string>();
                if (m == "direct") cfg.train.mode = TrainMode::Direct;
                else if (m == "conv") cfg.train.mode = TrainMode::Conv;
                else throw ConfigError("config: train.mode must be direct|conv");
            }
            get_if(s, "steps", cfg.train.steps);
            get_if(s, "lr", cfg.train.lr);
            get_if(s, "momentum", cfg.train.momentum);
            get_if(s, "depth_lr_scale", cfg.train.depth_lr_scale);
            if (s.contains("label_noise")) {
                std::string m = s["label_noise"].get<std::string>();
                if (m == "none") cfg.train.label_noise = LabelNoise::None;
                else if (m == "heteroscedastic")
                    cfg.train.label_noise = LabelNoise::Heteroscedastic;
                else throw ConfigError("config: label_noise must be none|heteroscedastic");
            }
            if (s.contains("init")) {
                const json& i = s["init"];
                reject_unknown(i, {"profile", "noise_xy", "noise_d", "exact_radius", "ramp"},
                               "train.init");
                if (i.contains("profile")) {
                    std::string p = i["profile"].get<std::string>();
                    if (p == "flat") cfg.train.init.profile = InitProfile::Flat;
                    else if (p == "zeros") cfg.train.init.profile = InitProfile::Zeros;
                    else if (p == "near_joint_exact")
                        cfg.train.init.profile = InitProfile::NearJointExact;
                    else
                        throw ConfigError(
                            "config: init.profile must be zeros|flat|near_joint_exact");
                }
                get_if(i, "noise_xy", cfg.train.init.noise_xy);
                get_if(i, "noise_d", cfg.train.init.noise_d);
                get_if(i, "exact_radius", cfg.train.init.exact_radius);
                get_if(i, "ramp", cfg.train.init.ramp);
            }
            if (s.contains("noise")) {
                const json& n = s["noise"];
                reject_unknown(n,
                               {"p_high", "scale_low", "scale_high", "sd_xy", "sd_d_mm",
                                "mix_w", "mu1", "sd1", "mu2", "sd2"},
                               "train.noise");
                get_if(n, "p_high", cfg.train.noise.p_high);
                get_if(n, "scale_low", cfg.train.noise.scale_low);
                get_if(n, "scale_high", cfg.train.noise.scale_high);
                get_if(n, "sd_xy", cfg.train.noise.sd_xy);
                get_if(n, "sd_d_mm", cfg.train.noise.sd_d_mm);
                get_if(n, "mix_w", cfg.train.noise.mix_w);
                get_if(n, "mu1", cfg.train.noise.mu1);
                get_if(n, "sd1", cfg.train.noise.sd1);
                get_if(n, "mu2", cfg.train.noise.mu2);
                get_if(n, "sd2", cfg.train.noise.sd2);
            }
        }
        if (j.contains("eval")) {
            const json& s = j["eval"];
            reject_unknown(s, {"threshold", "nms_radius_mm", "match_gate_mm", "pck_threshold_mm"},
                           "eval");
            get_if(s, "threshold", cfg.eval.threshold);
            get_if(s, "nms_radius_mm", cfg.eval.nms_radius_mm);
            get_if(s, "match_gate_mm", cfg.eval.match_gate_mm);
            get_if(s, "pck_threshold_mm", cfg.eval.pck_threshold_mm);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad value type: ") + e.what());
    }

    cfg.validate();
    return cfg;
}

std::string dump_config(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["scene_count"] = cfg.scene_count;
    j["scene"] = {{"width", cfg.scene.image_w},
                  {"height", cfg.scene.image_h},
                  {"f_px", cfg.scene.f_px},
                  {"min_persons", cfg.scene.min_persons},
                  {"max_persons", cfg.scene.max_persons},
                  {"depth_min_mm", cfg.scene.depth_min_mm},
                  {"depth_max_mm", cfg.scene.depth_max_mm},
                  {"jitter_mm", cfg.scene.jitter_mm},
                  {"min_separation_mm", cfg.scene.min_separation_mm},
                  {"margin_px", cfg.scene.margin_px}};
    j["levels"] = {{"strides", cfg.levels.strides},
                   {"ranges", cfg.levels.ranges},
                   {"n_pos", cfg.levels.n_pos}};
    const char* pose = cfg.loss.pose_loss == PoseLoss::L1    ? "l1"
                       : cfg.loss.pose_loss == PoseLoss::Mle ? "mle"
                                                             : "rle";
    j["loss"] = {{"focal_alpha", cfg.loss.focal_alpha},
                 {"focal_gamma", cfg.loss.focal_gamma},
                 {"lambda1", cfg.loss.lambda1},
                 {"lambda2", cfg.loss.lambda2},
                 {"lambda3", cfg.loss.lambda3},
                 {"pose_loss", pose},
                 {"rle_prior", base_name(cfg.loss.rle_prior)}};
    j["flow"] = {{"layers", cfg.flow.layers},
                 {"hidden", cfg.flow.hidden},
                 {"s_max", cfg.flow.s_max},
                 {"base", base_name(cfg.flow.base)}};
    j["update"] = {{"n_layers", cfg.update.n_layers},
                   {"mode", cfg.update.mode == UpdateMode::Recursive ? "recursive"
                                                                     : "multi_source"},
                   {"M", cfg.update.M},
                   {"sampler_hidden", cfg.update.sampler_hidden}};
    j["train"] = {
        {"mode", cfg.train.mode == TrainMode::Direct ? "direct" : "conv"},
        {"steps", cfg.train.steps},
        {"lr", cfg.train.lr},
        {"momentum", cfg.train.momentum},
        {"depth_lr_scale", cfg.train.depth_lr_scale},
        {"label_noise",
         cfg.train.label_noise == LabelNoise::None ? "none" : "heteroscedastic"},
        {"init",
         {{"profile",
           cfg.train.init.profile == InitProfile::Flat ? "flat" : "near_joint_exact"},
          {"noise_xy", cfg.train.init.noise_xy},
          {"noise_d", cfg.train.init.noise_d},
          {"exact_radius", cfg.train.init.exact_radius},
          {"ramp", cfg.train.init.ramp}}},
        {"noise",
         {{"p_high", cfg.train.noise.p_high},
          {"scale_low", cfg.train.noise.scale_low},
          {"scale_high", cfg.train.noise.scale_high},
          {"sd_xy", cfg.train.noise.sd_xy},
          {"sd_d_mm", cfg.train.noise.sd_d_mm},
          {"mix_w", cfg.train.noise.mix_w},
          {"mu1", cfg.train.noise.mu1},
          {"sd1", cfg.train.noise.sd1},
          {"mu2", cfg.train.noise.mu2},
          {"sd2", cfg.train.noise.sd2}}}};
    j["eval"] = {{"threshold", cfg.eval.threshold},
                 {"nms_radius_mm", cfg.eval.nms_radius_mm},
                 {"match_gate_mm", cfg.eval.match_gate_mm},
                 {"pck_threshold_mm", cfg.eval.pck_threshold_mm}};
    return j.dump(2);
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void apply_seed_env(RunConfig& cfg) {
    const char* env = std::getenv("DAS_SEED");
    if (!env || !*env) return;
    char* end = nullptr;
    unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
        throw ConfigError("DAS_SEED must be an unsigned integer");
    cfg.seed = v;
}

}  // namespace das
