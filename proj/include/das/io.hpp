#pragma once

#include <string>
#include <vector>

#include "das/densemap.hpp"
#include "das/scene.hpp"
#include "das/train.hpp"

namespace das {

// --- DenseMap files ---------------------------------------------------------
// A map is a JSON header {height, width, channels, dtype:"f64",
// layout:"row-major", data, offset, count} plus raw little-endian doubles in
// the sidecar binary file it names.
void save_dense_map(const std::string& json_path, const std::string& bin_path,
                    const DenseMap& map);
DenseMap load_dense_map(const std::string& json_path);

// Prediction-map bundle: one manifest JSON (per-level roles and headers) and
// one shared sidecar binary.
void save_prediction_maps(const std::string& json_path, const std::string& bin_path,
                          const PredictionMaps& maps,
                          const std::vector<double>& strides);
PredictionMaps load_prediction_maps(const std::string& json_path,
                                    std::vector<double>* strides = nullptr);

// --- Scene files -------------------------------------------------------------
// {camera:{f,cx,cy}, persons:[{joints:[[x,y,d],...]}],
//  skeleton:{K, root_index, names}}
void save_scene(const std::string& path, const Scene& scene, const Skeleton& skeleton);
Scene load_scene(const std::string& path, Skeleton* skeleton = nullptr);

void save_scenes(const std::string& dir, const std::vector<Scene>& scenes,
                 const Skeleton& skeleton);
std::vector<Scene> load_scenes(const std::string& dir, Skeleton* skeleton = nullptr);

// --- Checkpoints --------------------------------------------------------------
void save_flow(const std::string& path, const FlowModel& flow);
FlowModel load_flow(const std::string& path);

void save_samplers(const std::string& path, const std::vector<SamplerMlp>& samplers);
std::vector<SamplerMlp> load_samplers(const std::string& path);

// Whole-model checkpoint directory: meta.json (config echo), flow.json,
// sampler.json, and mode-specific parameters.
void save_model(const std::string& dir, const TrainedModel& model);
TrainedModel load_model(const std::string& dir);

// --- Reports -------------------------------------------------------------------
void save_report_csv(const std::string& path, const Report& report);
void save_loss_history_csv(const std::string& path,
                           const std::vector<LossBreakdown>& history);
void save_distribution_csv(const std::string& path, const DistributionTable& table);
void save_detections_json(const std::string& path,
                          const std::vector<Detection>& detections);

std::string read_text_file(const std::string& path);

}  // namespace das
