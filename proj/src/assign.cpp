#include "das/assign.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "das/errors.hpp"

namespace das {

void LevelConfig::validate() const {
    if (strides.empty() || strides.size() != ranges.size())
        throw ConfigError("level config: strides and ranges must be non-empty and matched");
    if (n_pos < 1) throw ConfigError("level config: n_pos must be >= 1");
    if (ranges[0] != 0.0) throw ConfigError("level config: first range boundary must be 0");
    for (std::size_t i = 1; i < strides.size(); ++i) {
        if (strides[i] <= strides[i - 1])
            throw ConfigError("level config: strides must be strictly increasing");
        if (ranges[i] <= ranges[i - 1])
            throw ConfigError("level config: range boundaries must be strictly increasing");
    }
}

int LevelConfig::grid_h(int image_h, int level) const {
    return int(std::ceil(image_h / strides[level]));
}

int LevelConfig::grid_w(int image_w, int level) const {
    return int(std::ceil(image_w / strides[level]));
}

double max_root_distance(const Pose3D& pose) {
    const ImageJoint& r = pose.root();
    double best = 0.0;
    for (const ImageJoint& j : pose.joints) {
        double dx = j.x - r.x;
        double dy = j.y - r.y;
        best = std::max(best, std::sqrt(dx * dx + dy * dy));
    }
    return best;
}

int assign_level(double r_max, const LevelConfig& cfg) {
    // Half-open intervals [m_l, m_{l+1}); the top level catches everything.
    int last = cfg.levels() - 1;
    for (int l = 0; l < last; ++l) {
        if (r_max >= cfg.ranges[l] && r_max < cfg.ranges[l + 1]) return l;
    }
    return last;
}

Pose3D scale_to_level(const Pose3D& pose, double stride) {
    Pose3D out = pose;
    for (ImageJoint& j : out.joints) {
        j.x /= stride;
        j.y /= stride;
    }
    return out;
}

double centerness_target(double px, double py, double x_min, double x_max,
                         double y_min, double y_max) {
    // Per-axis factor min/max of the two box distances. A degenerate axis
    // contributes 1 only within half a cell of its (collapsed) center.
    auto axis = [](double pos, double lo, double hi) {
        if (hi - lo <= 0.0) return std::abs(pos - lo) <= 0.5 ? 1.0 : -1.0;
        double a = pos - lo, b = hi - pos;
        if (a < 0 || b < 0) return -1.0;
        return std::min(a, b) / std::max(a, b);
    };
    double fx = axis(px, x_min, x_max);
    double fy = axis(py, y_min, y_max);
    if (fx < 0 || fy < 0) return 0.0;
    return std::sqrt(fx * fy);
}

TargetMaps build_targets(const std::vector<Pose3D>& scene, const CameraIntrinsics& intr,
                         const LevelConfig& cfg, int image_w, int image_h) {
    cfg.validate();
    int K = scene.empty() ? 0 : scene[0].joint_count();
    for (const Pose3D& p : scene)
        if (p.joint_count() != K)
            throw ConfigError("build_targets: inconsistent joint counts across persons");

    TargetMaps out;
    out.joint_count = K;
    out.levels.resize(cfg.levels());
    for (int l = 0; l < cfg.levels(); ++l) {
        int h = cfg.grid_h(image_h, l);
        int w = cfg.grid_w(image_w, l);
        out.levels[l].center_confidence = DenseMap(h, w, 1);
        out.levels[l].centerness = DenseMap(h, w, 1);
        out.levels[l].center_coord = DenseMap(h, w, 3);
        out.levels[l].joint_offsets = DenseMap(h, w, 3 * std::max(K, 1));
    }

    // When two persons claim the same pixel, the nearer center owns the
    // regression channels; confidence stays 1 for both claims.
    std::vector<std::vector<double>> owner_dist(cfg.levels());
    std::vector<std::vector<int>> owner_id(cfg.levels());
    for (int l = 0; l < cfg.levels(); ++l) {
        owner_dist[l].assign(out.levels[l].center_confidence.size(),
                             std::numeric_limits<double>::infinity());
        owner_id[l].assign(out.levels[l].center_confidence.size(), -1);
    }

    for (int pi = 0; pi < int(scene.size()); ++pi) {
        const Pose3D& person = scene[pi];
        const ImageJoint& root = person.root();
        if (root.x < 0 || root.x > image_w - 1 || root.y < 0 || root.y > image_h - 1) {
            ++out.skipped_persons;
            continue;
        }

        int l = assign_level(max_root_distance(person), cfg);
        LevelTargets& tgt = out.levels[l];
        Pose3D scaled = scale_to_level(person, cfg.strides[l]);
        const ImageJoint& c = scaled.root();

        // n_pos nearest grid pixels to the scaled center, ties broken by
        // row-major index.
        int h = tgt.center_confidence.height, w = tgt.center_confidence.width;
        int want = std::min(cfg.n_pos, h * w);
        std::vector<std::pair<double, int>> order;
        order.reserve(std::size_t(h) * w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double dx = x - c.x, dy = y - c.y;
                order.emplace_back(dx * dx + dy * dy, y * w + x);
            }
        std::partial_sort(order.begin(), order.begin() + want, order.end());

        // 2D joint bounding box at this level for the centerness target.
        double x_min = scaled.joints[0].x, x_max = x_min;
        double y_min = scaled.joints[0].y, y_max = y_min;
        for (const ImageJoint& j : scaled.joints) {
            x_min = std::min(x_min, j.x);
            x_max = std::max(x_max, j.x);
            y_min = std::min(y_min, j.y);
            y_max = std::max(y_max, j.y);
        }

        for (int i = 0; i < want; ++i) {
            int pix = order[i].second;
            int px = pix % w, py = pix / w;
            double dist = std::sqrt(order[i].first);

            tgt.center_confidence.values[pix] = 1.0;
            PositiveSample ps;
            ps.level = l;
            ps.x = px;
            ps.y = py;
            ps.person = pi;
            ps.center_dist = dist;
            out.positives.push_back(ps);

            if (dist >= owner_dist[l][pix]) continue;
            owner_dist[l][pix] = dist;
            owner_id[l][pix] = pi;

            tgt.centerness.values[pix] =
                centerness_target(px, py, x_min, x_max, y_min, y_max);
            tgt.center_coord.at(px, py, 0) = c.x - px;
            tgt.center_coord.at(px, py, 1) = c.y - py;
            tgt.center_coord.at(px, py, 2) = normalize_depth(c.d, intr.f);
            for (int k = 0; k < K; ++k) {
                const ImageJoint& j = scaled.joints[k];
                tgt.joint_offsets.at(px, py, 3 * k + 0) = j.x - c.x;
                tgt.joint_offsets.at(px, py, 3 * k + 1) = j.y - c.y;
                tgt.joint_offsets.at(px, py, 3 * k + 2) = j.d - c.d;
            }
        }
    }

    for (int l = 0; l < cfg.levels(); ++l) {
        int w = out.levels[l].center_confidence.width;
        for (int pix = 0; pix < int(owner_id[l].size()); ++pix) {
            int pi = owner_id[l][pix];
            if (pi < 0) continue;
            PositiveSample ps;
            ps.level = l;
            ps.x = pix % w;
            ps.y = pix / w;
            ps.person = pi;
            ps.center_dist = owner_dist[l][pix];
            out.owned_pixels.push_back(ps);
            const Pose3D& person = scene[pi];
            out.owned_joint_valid.emplace_back(K, std::uint8_t(1));
            if (!person.valid.empty())
                out.owned_joint_valid.back().assign(person.valid.begin(),
                                                    person.valid.end());
        }
    }
    return out;
}

}  // namespace das
