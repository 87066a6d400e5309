#pragma once

#include <cstdint>
#include <string>

#include "das/assign.hpp"
#include "das/losses.hpp"
#include "das/rupdate.hpp"
#include "das/scene.hpp"

namespace das {

struct FlowConfig {
    int layers = 4;
    int hidden = 16;
    double s_max = 2.0;
    BaseDist base = BaseDist::Gaussian;
};

enum class TrainMode { Direct, Conv };
enum class LabelNoise { None, Heteroscedastic };
enum class InitProfile { Zeros, Flat, NearJointExact };

// Direct-mode map initialization. Joint offset maps start from the dense
// ground-truth field with additive noise; NearJointExact ramps the noise to
// zero within exact_radius of each true joint so update layers can tap
// accurate local predictions.
struct InitConfig {
    InitProfile profile = InitProfile::Flat;
    double noise_xy = 0.5;      // grid units
    double noise_d = 10.0;      // mm
    double exact_radius = 2.0;  // grid units (NearJointExact)
    double ramp = 1.0;          // grid units from exact to full noise
};

// Heteroscedastic skewed label-noise model: each (scene, person, joint)
// channel gets a low or high scale, and per-step draws come from a
// two-component Gaussian mixture (mean zero at the defaults, skewed).
struct NoiseConfig {
    double p_high = 0.4;
    double scale_low = 1.0;
    double scale_high = 6.0;
    double sd_xy = 0.5;    // grid units at scale 1
    double sd_d_mm = 25.0; // depth at scale 1
    double mix_w = 0.75;
    double mu1 = -0.4, sd1 = 0.3;
    double mu2 = 1.2, sd2 = 0.8;
};

struct TrainConfig {
    TrainMode mode = TrainMode::Direct;
    int steps = 300;
    double lr = 0.05;
    double momentum = 0.0;
    double depth_lr_scale = 100.0;  // step scale for raw-mm joint depth channels
    LabelNoise label_noise = LabelNoise::None;
    InitConfig init;
    NoiseConfig noise;
};

struct EvalConfig {
    double threshold = 0.05;
    double nms_radius_mm = 150.0;
    double match_gate_mm = 500.0;
    double pck_threshold_mm = 150.0;
};

struct RunConfig {
    std::uint64_t seed = 1;
    int scene_count = 20;
    SyntheticSceneConfig scene;
    LevelConfig levels;
    LossConfig loss;
    FlowConfig flow;
    UpdateConfig update;
    TrainConfig train;
    EvalConfig eval;

    void validate() const;
};

// JSON round-trip. Unknown keys are rejected to catch typos early.
RunConfig parse_config(const std::string& json_text);
std::string dump_config(const RunConfig& cfg);
RunConfig load_config_file(const std::string& path);

// DAS_SEED environment override.
void apply_seed_env(RunConfig& cfg);

}  // namespace das
