#include "das/scene.hpp"

#include <cmath>

#include "das/errors.hpp"

namespace das {

Skeleton Skeleton::humanoid15() {
    Skeleton s;
    s.root_index = 0;
    s.names = {"pelvis",  "neck",    "head",    "l_shoulder", "r_shoulder",
               "l_elbow", "r_elbow", "l_wrist", "r_wrist",    "l_hip",
               "r_hip",   "l_knee",  "r_knee",  "l_ankle",    "r_ankle"};
    s.offsets_mm = {
        {0, 0, 0},        {0, -450, 0},    {0, -650, 0},    {-180, -420, 0},
        {180, -420, 0},   {-320, -220, 30}, {320, -220, 30}, {-350, -20, 60},
        {350, -20, 60},   {-100, 50, 0},   {100, 50, 0},    {-120, 480, 20},
        {120, 480, 20},   {-130, 900, 40}, {130, 900, 40},
    };
    return s;
}

namespace {

bool pose_in_bounds(const Pose3D& pose, const SyntheticSceneConfig& cfg) {
    for (const ImageJoint& j : pose.joints) {
        if (j.x < cfg.margin_px || j.x > cfg.image_w - 1 - cfg.margin_px) return false;
        if (j.y < cfg.margin_px || j.y > cfg.image_h - 1 - cfg.margin_px) return false;
        if (j.d <= 0.0) return false;
    }
    return true;
}

}  // namespace

Scene gen_scene(const SyntheticSceneConfig& cfg, Rng& rng) {
    if (cfg.min_persons < 1 || cfg.max_persons < cfg.min_persons)
        throw ConfigError("scene config: invalid person count range");
    if (cfg.depth_min_mm <= 0 || cfg.depth_max_mm < cfg.depth_min_mm)
        throw ConfigError("scene config: invalid depth range");

    Scene scene;
    scene.intrinsics = cfg.intrinsics();
    int n_persons = int(rng.uniform_int(cfg.min_persons, cfg.max_persons));
    const Skeleton& sk = cfg.skeleton;

    for (int p = 0; p < n_persons; ++p) {
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            double z = rng.uniform(cfg.depth_min_mm, cfg.depth_max_mm);
            // Root XY bounded by what can possibly project inside the image.
            double half_w = (cfg.image_w / 2.0 - cfg.margin_px) * z / cfg.f_px;
            double half_h = (cfg.image_h / 2.0 - cfg.margin_px) * z / cfg.f_px;
            double rx = rng.uniform(-half_w, half_w);
            double ry = rng.uniform(-half_h, half_h);

            bool separated = true;
            for (const CameraPose3D& other : scene.camera_persons) {
                double dx = rx - other.joints[sk.root_index][0];
                double dy = ry - other.joints[sk.root_index][1];
                if (std::sqrt(dx * dx + dy * dy) < cfg.min_separation_mm) {
                    separated = false;
                    break;
                }
            }
            if (!separated) continue;

            CameraPose3D cam;
            cam.joints.reserve(sk.joint_count());
            for (int k = 0; k < sk.joint_count(); ++k) {
                std::array<double, 3> jitter{0.0, 0.0, 0.0};
                if (k != sk.root_index && cfg.jitter_mm > 0)
                    jitter = {rng.normal(0.0, cfg.jitter_mm), rng.normal(0.0, cfg.jitter_mm),
                              rng.normal(0.0, cfg.jitter_mm)};
                cam.joints.push_back({rx + sk.offsets_mm[k][0] + jitter[0],
                                      ry + sk.offsets_mm[k][1] + jitter[1],
                                      z + sk.offsets_mm[k][2] + jitter[2]});
            }
            Pose3D img = project(cam, scene.intrinsics, sk.root_index);
            if (!pose_in_bounds(img, cfg)) continue;
            scene.persons.push_back(std::move(img));
            scene.camera_persons.push_back(std::move(cam));
            placed = true;
        }
        if (!placed)
            throw ConfigError("gen_scene: could not place person " + std::to_string(p) +
                              " after 1000 attempts; loosen the scene config");
    }
    return scene;
}

std::vector<Scene> gen_scenes(const SyntheticSceneConfig& cfg, int count,
                              std::uint64_t seed) {
    std::vector<Scene> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        Rng rng = Rng::with_tags(seed, 0x5ce9e, i);
        out.push_back(gen_scene(cfg, rng));
    }
    return out;
}

}  // namespace das
