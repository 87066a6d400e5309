#include "das/decode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace das {

std::vector<PixelScore> extract_positives(const DenseMap& confidence,
                                          const DenseMap& centerness,
                                          double threshold) {
    if (confidence.height != centerness.height || confidence.width != centerness.width)
        throw std::invalid_argument("extract_positives: map shape mismatch");
    std::vector<PixelScore> out;
    for (int y = 0; y < confidence.height; ++y) {
        for (int x = 0; x < confidence.width; ++x) {
            double conf = confidence.at(x, y);
            if (conf > threshold) {
                PixelScore ps;
                ps.x = x;
                ps.y = y;
                ps.confidence = conf;
                ps.score = conf * centerness.at(x, y);
                out.push_back(ps);
            }
        }
    }
    return out;
}

std::vector<Detection> reconstruct(const std::vector<PixelScore>& positives,
                                   const DenseMap& center_coord,
                                   const DenseMap& joint_offsets, double stride,
                                   const CameraIntrinsics& intr, int level,
                                   int root_index, int* dropped) {
    if (center_coord.height != joint_offsets.height ||
        center_coord.width != joint_offsets.width)
        throw std::invalid_argument("reconstruct: maps from different levels");
    if (joint_offsets.channels % 3 != 0)
        throw std::invalid_argument("reconstruct: joint offset channels not 3K");
    int K = joint_offsets.channels / 3;

    std::vector<Detection> out;
    for (const PixelScore& ps : positives) {
        double cx_img = (ps.x + center_coord.at(ps.x, ps.y, 0)) * stride;
        double cy_img = (ps.y + center_coord.at(ps.x, ps.y, 1)) * stride;
        double cd = denormalize_depth(center_coord.at(ps.x, ps.y, 2), intr.f);

        Detection det;
        det.score = ps.score;
        det.level = level;
        det.pixel = ps.y * center_coord.width + ps.x;
        det.pose.root_index = root_index;
        det.pose.joints.resize(K);
        bool ok = cd > 0.0;
        for (int k = 0; k < K && ok; ++k) {
            ImageJoint& j = det.pose.joints[k];
            j.x = cx_img + joint_offsets.at(ps.x, ps.y, 3 * k + 0) * stride;
            j.y = cy_img + joint_offsets.at(ps.x, ps.y, 3 * k + 1) * stride;
            j.d = cd + joint_offsets.at(ps.x, ps.y, 3 * k + 2);
            if (j.d <= 0.0) ok = false;
        }
        if (!ok) {
            if (dropped) ++*dropped;
            continue;
        }
        det.camera_pose = back_project(det.pose, intr);
        out.push_back(std::move(det));
    }
    return out;
}

namespace {

double mean_joint_distance(const CameraPose3D& a, const CameraPose3D& b) {
    int K = a.joint_count();
    double sum = 0.0;
    for (int k = 0; k < K; ++k) {
        double dx = a.joints[k][0] - b.joints[k][0];
        double dy = a.joints[k][1] - b.joints[k][1];
        double dz = a.joints[k][2] - b.joints[k][2];
        sum += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    return K > 0 ? sum / K : 0.0;
}

}  // namespace

std::vector<Detection> pose_nms(std::vector<Detection> detections, double radius_mm) {
    std::stable_sort(detections.begin(), detections.end(),
                     [](const Detection& a, const Detection& b) {
                         if (a.score != b.score) return a.score > b.score;
                         if (a.level != b.level) return a.level < b.level;
                         return a.pixel < b.pixel;
                     });
    std::vector<Detection> kept;
    for (Detection& d : detections) {
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (mean_joint_distance(d.camera_pose, k.camera_pose) < radius_mm) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(std::move(d));
    }
    return kept;
}

double mpjpe(const CameraPose3D& pred, const CameraPose3D& gt, int root_index,
             bool root_align) {
    if (pred.joint_count() != gt.joint_count())
        throw std::invalid_argument("mpjpe: joint count mismatch");
    int K = pred.joint_count();
    if (K == 0) return 0.0;
    std::array<double, 3> shift{0.0, 0.0, 0.0};
    if (root_align) {
        for (int c = 0; c < 3; ++c)
            shift[c] = pred.joints[root_index][c] - gt.joints[root_index][c];
    }
    double sum = 0.0;
    for (int k = 0; k < K; ++k) {
        double dx = pred.joints[k][0] - shift[0] - gt.joints[k][0];
        double dy = pred.joints[k][1] - shift[1] - gt.joints[k][1];
        double dz = pred.joints[k][2] - shift[2] - gt.joints[k][2];
        sum += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    return sum / K;
}

MatchResult match_poses(const std::vector<CameraPose3D>& preds,
                        const std::vector<CameraPose3D>& gts, int root_index,
                        double gate_mm) {
    struct Cand {
        double dist;
        int pred, gt;
    };
    std::vector<Cand> cands;
    for (int p = 0; p < int(preds.size()); ++p) {
        for (int g = 0; g < int(gts.size()); ++g) {
            double dx = preds[p].joints[root_index][0] - gts[g].joints[root_index][0];
            double dy = preds[p].joints[root_index][1] - gts[g].joints[root_index][1];
            double dz = preds[p].joints[root_index][2] - gts[g].joints[root_index][2];
            double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
            if (dist <= gate_mm) cands.push_back({dist, p, g});
        }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.pred != b.pred) return a.pred < b.pred;
        return a.gt < b.gt;
    });

    MatchResult out;
    std::vector<bool> pred_used(preds.size(), false), gt_used(gts.size(), false);
    for (const Cand& c : cands) {
        if (pred_used[c.pred] || gt_used[c.gt]) continue;
        pred_used[c.pred] = true;
        gt_used[c.gt] = true;
        out.pairs.emplace_back(c.pred, c.gt);
    }
    for (int p = 0; p < int(preds.size()); ++p)
        if (!pred_used[p]) out.unmatched_predictions.push_back(p);
    for (int g = 0; g < int(gts.size()); ++g)
        if (!gt_used[g]) out.unmatched_ground_truths.push_back(g);
    return out;
}

double pck(const std::vector<CameraPose3D>& preds, const std::vector<CameraPose3D>& gts,
           const MatchResult& match, int root_index, PckMode mode,
           double threshold_mm) {
    long total = 0, correct = 0;
    for (const CameraPose3D& gt : gts) total += gt.joint_count();
    if (total == 0) return preds.empty() ? 100.0 : 0.0;

    for (auto [p, g] : match.pairs) {
        const CameraPose3D& pred = preds[p];
        const CameraPose3D& gt = gts[g];
        std::array<double, 3> shift{0.0, 0.0, 0.0};
        if (mode == PckMode::Relative) {
            for (int c = 0; c < 3; ++c)
                shift[c] = pred.joints[root_index][c] - gt.joints[root_index][c];
        }
        int K = std::min(pred.joint_count(), gt.joint_count());
        for (int k = 0; k < K; ++k) {
            double dx = pred.joints[k][0] - shift[0] - gt.joints[k][0];
            double dy = pred.joints[k][1] - shift[1] - gt.joints[k][1];
            double dz = pred.joints[k][2] - shift[2] - gt.joints[k][2];
            if (std::sqrt(dx * dx + dy * dy + dz * dz) < threshold_mm) ++correct;
        }
    }
    return 100.0 * double(correct) / double(total);
}

}  // namespace das
