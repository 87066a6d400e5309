#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace das {

// Pinhole intrinsics: focal length and principal point in pixels.
struct CameraIntrinsics {
    double f = 1.0;
    double cx = 0.0;
    double cy = 0.0;
};

// Image-coordinate joint: x, y in px, depth in mm.
struct ImageJoint {
    double x = 0.0;
    double y = 0.0;
    double d = 0.0;
};

// One person's pose in image coordinates. root_index identifies the pelvis.
struct Pose3D {
    std::vector<ImageJoint> joints;
    int root_index = 0;
    // Per-joint validity; empty means all valid. Invalid joints are ignored
    // by regression losses (e.g. missing depth annotations).
    std::vector<std::uint8_t> valid;

    int joint_count() const { return int(joints.size()); }
    const ImageJoint& root() const { return joints[root_index]; }
    bool joint_valid(int k) const { return valid.empty() || valid[k] != 0; }
};

// Camera-space pose, mm.
struct CameraPose3D {
    std::vector<std::array<double, 3>> joints;
    int joint_count() const { return int(joints.size()); }
};

// x = f*X/Z + cx, y = f*Y/Z + cy, d = Z. Throws NumericalError for Z <= 0.
ImageJoint project(const std::array<double, 3>& p, const CameraIntrinsics& intr);

// X = (x-cx)*d/f, Y = (y-cy)*d/f, Z = d. Throws NumericalError for d <= 0.
std::array<double, 3> back_project(double x, double y, double d,
                                   const CameraIntrinsics& intr);

CameraPose3D back_project(const Pose3D& pose, const CameraIntrinsics& intr);
Pose3D project(const CameraPose3D& pose, const CameraIntrinsics& intr, int root_index);

inline double normalize_depth(double d, double f) { return d / f; }
inline double denormalize_depth(double d_norm, double f) { return d_norm * f; }

}  // namespace das
