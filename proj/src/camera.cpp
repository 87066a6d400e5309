#include "das/camera.hpp"

#include <string>

#include "das/errors.hpp"

namespace das {

ImageJoint project(const std::array<double, 3>& p, const CameraIntrinsics& intr) {
    if (p[2] <= 0.0)
        throw NumericalError("project: point behind camera, Z = " + std::to_string(p[2]));
    return ImageJoint{intr.f * p[0] / p[2] + intr.cx, intr.f * p[1] / p[2] + intr.cy, p[2]};
}

std::array<double, 3> back_project(double x, double y, double d,
                                   const CameraIntrinsics& intr) {
    if (d <= 0.0)
        throw NumericalError("back_project: invalid depth d = " + std::to_string(d));
    return {(x - intr.cx) * d / intr.f, (y - intr.cy) * d / intr.f, d};
}

CameraPose3D back_project(const Pose3D& pose, const CameraIntrinsics& intr) {
    CameraPose3D out;
    out.joints.reserve(pose.joints.size());
    for (const ImageJoint& j : pose.joints)
        out.joints.push_back(back_project(j.x, j.y, j.d, intr));
    return out;
}

Pose3D project(const CameraPose3D& pose, const CameraIntrinsics& intr, int root_index) {
    Pose3D out;
    out.root_index = root_index;
    out.joints.reserve(pose.joints.size());
    for (const auto& p : pose.joints) out.joints.push_back(project(p, intr));
    return out;
}

}  // namespace das
