#pragma once

#include <span>
#include <vector>

#include "das/config.hpp"
#include "das/decode.hpp"
#include "das/flow.hpp"
#include "das/rupdate.hpp"

namespace das {

// Per-level prediction maps in decodable form (confidence and centerness
// post-sigmoid).
struct PredictionMaps {
    std::vector<DenseMap> confidence;
    std::vector<DenseMap> centerness;
    std::vector<DenseMap> center_coord;
    std::vector<DenseMap> joint_offsets;
    std::vector<DenseMap> log_sigma;
};

// Direct mode: free prediction-map values per scene, no backbone.
// Classification maps are stored as logits.
struct DirectSceneParams {
    std::vector<Param> conf_logit, ctr_logit, center_coord, joint_offsets, log_sigma;
};

// Tiny convolutional head: two shared 3x3 trunk layers (tanh) on a
// GT-derived feature grid, then one 3x3 conv per output group. Raw depth
// outputs are scaled by fixed constants so all head outputs stay O(1).
struct ConvHead {
    int in_channels = 4;
    int width = 16;
    int K = 15;
    Param k1, b1, k2, b2;
    Param conf_k, conf_b, ctr_k, ctr_b, root_k, root_b;
    Param joint_k, joint_b, sigma_k, sigma_b;

    static ConvHead make(int K, int in_channels, int width, Rng& rng);
    std::vector<Param*> params();
};

// Fixed output scaling for raw-mm / normalized-depth channels.
inline constexpr double kHeadJointDepthScale = 50.0;
inline constexpr double kHeadRootDepthScale = 8.0;

struct LossBreakdown {
    double cls = 0, centerness = 0, root = 0, pose = 0, total = 0;
};

struct TrainedModel {
    RunConfig cfg;
    int K = 0;
    int root_index = 0;
    std::vector<DirectSceneParams> scenes;  // direct mode
    ConvHead head;                          // conv mode
    FlowModel flow;                         // mle/rle losses
    std::vector<SamplerMlp> samplers;       // multi-source update layers
};

// Gradient descent on the total objective; deterministic given cfg.seed.
// history receives one per-step breakdown averaged over scenes.
TrainedModel train_model(const std::vector<Scene>& scenes, const RunConfig& cfg,
                         std::vector<LossBreakdown>* history = nullptr);

// GT-derived feature grid for conv mode: center heatmap, joint heatmap,
// and normalized x/y coordinate channels.
DenseMap render_features(const Scene& scene, const LevelConfig& levels, int level,
                         int image_w, int image_h);

PredictionMaps predict(const TrainedModel& model, const Scene& scene, int scene_index);

// Full one-pass inference: threshold positives, run the update stack at
// each, compose poses, back-project, NMS.
std::vector<Detection> run_inference(const PredictionMaps& maps, const LevelConfig& levels,
                                     const CameraIntrinsics& intr, const EvalConfig& eval,
                                     const UpdateConfig& update,
                                     std::span<const SamplerMlp> samplers, int root_index);

struct SceneMetrics {
    int scene_id = 0;
    double mpjpe_mm = 0;  // root-aligned mean over matched pairs; NaN if none
    double pck_rel = 0;
    double pck_abs = 0;
    int detections = 0;
    int gt_persons = 0;
    int matched = 0;
};

struct Report {
    std::vector<SceneMetrics> scenes;
    double mean_mpjpe = 0;  // over scenes with at least one match
    double mean_pck_rel = 0;
    double mean_pck_abs = 0;
};

Report evaluate_model(const TrainedModel& model, const std::vector<Scene>& scenes);

// Marginal density table over (z1, z2) with z3 integrated out by composite
// Simpson quadrature over [-z3_half, z3_half].
struct DistributionTable {
    double z_min = -4.0, z_max = 4.0, step = 0.1;
    int n = 0;                    // grid points per axis
    std::vector<double> density;  // density[iy * n + ix] at (z1 = ix, z2 = iy)
};

DistributionTable export_distribution(const FlowModel& flow, double z_min = -4.0,
                                      double z_max = 4.0, double step = 0.1,
                                      double z3_half = 6.0, int z3_intervals = 240);

}  // namespace das
