#pragma once

#include <span>
#include <vector>

#include "das/assign.hpp"
#include "das/flow.hpp"
#include "das/tape.hpp"

namespace das {

enum class PoseLoss { L1, Mle, Rle };

struct LossConfig {
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    double lambda1 = 1.0;  // centerness
    double lambda2 = 1.0;  // center coordinate regression
    double lambda3 = 1.0;  // pose regression
    PoseLoss pose_loss = PoseLoss::L1;
    BaseDist rle_prior = BaseDist::Laplace;
};

// One pose-regression term: the (post-update) mean estimate and log-scale
// for a single (positive pixel, joint) pair, with its ground-truth offset.
// log_sigma is ignored by the L1 loss.
struct PoseTerm {
    Var mean;
    Var log_sigma;
    Vec3 target{0.0, 0.0, 0.0};
};

// Focal binary classification over all levels' center confidence maps,
// normalized by the number of positive pixels (min 1). Predictions are
// post-sigmoid and get clamped to [eps, 1-eps] in-graph.
Var focal_loss(Tape& tape, std::span<const Var> pred_conf, const TargetMaps& targets,
               const LossConfig& cfg);

// Binary cross-entropy on positive pixels, averaged; 0 without positives.
Var centerness_loss(Tape& tape, std::span<const Var> pred_ctr, const TargetMaps& targets);

// Sum over positives of |U_root - target|_1, normalized by positive count.
Var l1_root_loss(Tape& tape, std::span<const Var> pred_root, const TargetMaps& targets);

// Sum over joints and positives of the offset L1, normalized by positive
// count only (joints are summed).
Var l1_pose_loss(Tape& tape, std::span<const PoseTerm> terms, int n_positives);

// -log P_Z(z_hat | flow) + sum(log sigma), z_hat = (target - mean) / sigma,
// averaged over terms. Gradients reach means, scales and flow parameters.
Var mle_loss(Tape& tape, std::span<const PoseTerm> terms, const FlowModel& flow,
             const FlowVars& fvars);

// -log Q(z_hat) - log G(z_hat | flow) + sum(log sigma), averaged over terms.
Var rle_loss(Tape& tape, std::span<const PoseTerm> terms, const FlowModel& flow,
             const FlowVars& fvars, BaseDist prior);

// L = L_cls + lambda1 * L_centerness + lambda2 * L_root + lambda3 * L_pose.
Var total_loss(Tape& tape, Var cls, Var centerness, Var root, Var pose,
               const LossConfig& cfg);

}  // namespace das
