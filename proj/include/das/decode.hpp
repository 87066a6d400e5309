#pragma once

#include <vector>

#include "das/assign.hpp"
#include "das/camera.hpp"
#include "das/densemap.hpp"

namespace das {

// One decoded person hypothesis.
struct Detection {
    Pose3D pose;               // image coords + mm depth
    CameraPose3D camera_pose;  // via back-projection
    double score = 0.0;        // confidence * centerness
    int level = 0;
    int pixel = 0;             // row-major source pixel, deterministic tie-break
};

struct PixelScore {
    int x = 0, y = 0;
    double confidence = 0.0;
    double score = 0.0;
};

struct MatchResult {
    std::vector<std::pair<int, int>> pairs;  // (prediction, ground truth)
    std::vector<int> unmatched_predictions;
    std::vector<int> unmatched_ground_truths;
};

// Pixels with confidence strictly above the threshold; score folds in the
// centerness map.
std::vector<PixelScore> extract_positives(const DenseMap& confidence,
                                          const DenseMap& centerness,
                                          double threshold = 0.05);

// Composes center coordinates and center-relative joint offsets at each
// positive pixel of one level into image-space poses, then back-projects.
// Detections whose decoded center or joint depth is non-positive are dropped
// and counted in *dropped if given.
std::vector<Detection> reconstruct(const std::vector<PixelScore>& positives,
                                   const DenseMap& center_coord,
                                   const DenseMap& joint_offsets, double stride,
                                   const CameraIntrinsics& intr, int level,
                                   int root_index, int* dropped = nullptr);

// Greedy NMS: keep by descending score (ties by level then pixel); suppress
// when the mean per-joint camera-space distance to a kept detection is below
// radius_mm.
std::vector<Detection> pose_nms(std::vector<Detection> detections,
                                double radius_mm = 150.0);

// Mean per-joint Euclidean distance in mm, optionally after subtracting the
// root joint from both poses.
double mpjpe(const CameraPose3D& pred, const CameraPose3D& gt, int root_index,
             bool root_align);

// Greedy one-to-one matching by ascending root-joint distance; pairs farther
// than gate_mm stay unmatched.
MatchResult match_poses(const std::vector<CameraPose3D>& preds,
                        const std::vector<CameraPose3D>& gts, int root_index,
                        double gate_mm = 500.0);

enum class PckMode { Relative, Absolute };

// Percentage of ground-truth joints within threshold_mm of the matched
// prediction (root-aligned first in Relative mode). Joints of unmatched
// ground truths count as incorrect.
double pck(const std::vector<CameraPose3D>& preds, const std::vector<CameraPose3D>& gts,
           const MatchResult& match, int root_index, PckMode mode,
           double threshold_mm = 150.0);

}  // namespace das
