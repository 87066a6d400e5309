#pragma once

#include <vector>

#include "das/camera.hpp"
#include "das/densemap.hpp"

namespace das {

// Multi-level grid configuration. ranges holds the finite boundaries
// m_0 < m_1 < ... < m_{L-1} (m_0 = 0); the top boundary m_L is +inf.
// A person with max root distance r falls on level l iff m_l <= r < m_{l+1}.
struct LevelConfig {
    std::vector<double> strides{8.0, 16.0, 32.0};
    std::vector<double> ranges{0.0, 64.0, 128.0};
    int n_pos = 9;

    int levels() const { return int(strides.size()); }
    void validate() const;
    // Grid size for an image of the given pixel dimensions.
    int grid_h(int image_h, int level) const;
    int grid_w(int image_w, int level) const;
};

struct PositiveSample {
    int level = 0;
    int x = 0, y = 0;           // grid cell
    int person = 0;             // index into the scene's person list
    double center_dist = 0.0;   // grid-units distance to the scaled center
};

// Per-level ground-truth maps plus positive bookkeeping.
struct LevelTargets {
    DenseMap center_confidence;  // H x W x 1, {0, 1}
    DenseMap centerness;         // H x W x 1, [0, 1]
    DenseMap center_coord;       // H x W x 3: dx, dy (grid units), d_norm
    DenseMap joint_offsets;      // H x W x 3K: dx, dy (grid units), dd (mm)
};

struct TargetMaps {
    std::vector<LevelTargets> levels;
    // Per-person claims, n_pos entries per assigned person.
    std::vector<PositiveSample> positives;
    // Unique positive pixels in (level, row-major) order; `person` is the
    // owner whose regression targets the maps hold at that pixel.
    std::vector<PositiveSample> owned_pixels;
    // Per-joint validity for each owned pixel (owner's mask), K flags each.
    std::vector<std::vector<std::uint8_t>> owned_joint_valid;
    int joint_count = 0;
    int skipped_persons = 0;  // centers projected outside the image
};

// Max 2D image-plane distance from any joint to the root.
double max_root_distance(const Pose3D& pose);

// Level index for a given max root distance.
int assign_level(double r_max, const LevelConfig& cfg);

// Divides x/y by the stride; depth unchanged.
Pose3D scale_to_level(const Pose3D& pose, double stride);

// FCOS-style quality target from distances to the 2D joint bounding box.
// (l, r, t, b) measured at the level's grid scale; 0 outside the box; a
// degenerate axis contributes 1 only within half a cell of its center.
double centerness_target(double px, double py, double x_min, double x_max,
                         double y_min, double y_max);

TargetMaps build_targets(const std::vector<Pose3D>& scene, const CameraIntrinsics& intr,
                         const LevelConfig& cfg, int image_w, int image_h);

}  // namespace das
