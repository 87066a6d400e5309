#pragma once

#include <string>
#include <vector>

#include "das/camera.hpp"
#include "das/rng.hpp"

namespace das {

// Skeleton template: per-joint offsets from the root (pelvis) in mm,
// camera axes (x right, y down, z forward).
struct Skeleton {
    std::vector<std::string> names;
    std::vector<std::array<double, 3>> offsets_mm;
    int root_index = 0;

    int joint_count() const { return int(offsets_mm.size()); }
    // 15-joint humanoid used throughout the harness.
    static Skeleton humanoid15();
};

struct SyntheticSceneConfig {
    int image_w = 256;
    int image_h = 256;
    double f_px = 450.0;
    int min_persons = 1;
    int max_persons = 3;
    double depth_min_mm = 3000.0;
    double depth_max_mm = 8000.0;
    double jitter_mm = 30.0;          // per-joint template jitter
    double min_separation_mm = 1200.0;  // root XY distance between persons
    double margin_px = 10.0;          // all joints stay this far inside the image
    Skeleton skeleton = Skeleton::humanoid15();

    CameraIntrinsics intrinsics() const {
        return CameraIntrinsics{f_px, image_w / 2.0, image_h / 2.0};
    }
};

// One generated scene: image-space poses plus their camera-space originals.
struct Scene {
    std::vector<Pose3D> persons;
    std::vector<CameraPose3D> camera_persons;
    CameraIntrinsics intrinsics;
};

// Rejection-samples persons so every joint projects at least margin_px
// inside the image and roots keep their minimum separation. Throws
// ConfigError after 1000 failed placement attempts.
Scene gen_scene(const SyntheticSceneConfig& cfg, Rng& rng);

std::vector<Scene> gen_scenes(const SyntheticSceneConfig& cfg, int count,
                              std::uint64_t seed);

}  // namespace das
