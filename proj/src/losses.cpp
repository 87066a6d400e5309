#include "das/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace das {

namespace {

constexpr double kEps = 1e-7;
constexpr double kHalfLog2Pi = 0.9189385332046727;
constexpr double kLog2 = 0.6931471805599453;
constexpr double kLogSigmaMin = -10.0;
constexpr double kLogSigmaMax = 10.0;

int positive_pixel_count(const TargetMaps& t) {
    return int(t.owned_pixels.size());
}

}  // namespace

Var focal_loss(Tape& tape, std::span<const Var> pred_conf, const TargetMaps& targets,
               const LossConfig& cfg) {
    if (pred_conf.size() != targets.levels.size())
        throw std::invalid_argument("focal_loss: level count mismatch");
    std::vector<Var> level_sums;
    for (std::size_t l = 0; l < pred_conf.size(); ++l) {
        const DenseMap& tgt = targets.levels[l].center_confidence;
        Shape s = tape.shape(pred_conf[l]);
        if (s.h != tgt.height || s.w != tgt.width || s.c != 1)
            throw std::invalid_argument("focal_loss: prediction/target shape mismatch");

        // Constant per-pixel alpha_t and (1 - t) companions.
        DenseMap alpha_t(tgt.height, tgt.width, 1);
        DenseMap one_minus_t(tgt.height, tgt.width, 1);
        for (std::size_t i = 0; i < tgt.values.size(); ++i) {
            double t = tgt.values[i];
            alpha_t.values[i] = cfg.focal_alpha * t + (1.0 - cfg.focal_alpha) * (1.0 - t);
            one_minus_t.values[i] = 1.0 - t;
        }
        Var t_leaf = tape.leaf(tgt);
        Var omt_leaf = tape.leaf(one_minus_t);
        Var at_leaf = tape.leaf(alpha_t);

        Var p = tape.clamp_const(pred_conf[l], kEps, 1.0 - kEps);
        Var omp = tape.add_const(tape.neg(p), 1.0);
        Var pt = tape.add(tape.mul(p, t_leaf), tape.mul(omp, omt_leaf));
        Var mod = tape.pow_const(tape.add_const(tape.neg(pt), 1.0), cfg.focal_gamma);
        Var nll = tape.neg(tape.log(pt));
        level_sums.push_back(tape.sum(tape.mul(tape.mul(at_leaf, mod), nll)));
    }
    Var total = level_sums.size() == 1 ? level_sums[0] : tape.addn(level_sums);
    return tape.mul_const(total, 1.0 / std::max(1, positive_pixel_count(targets)));
}

Var centerness_loss(Tape& tape, std::span<const Var> pred_ctr, const TargetMaps& targets) {
    if (pred_ctr.size() != targets.levels.size())
        throw std::invalid_argument("centerness_loss: level count mismatch");
    if (targets.owned_pixels.empty()) return tape.leaf(0.0);

    std::vector<int> idx_per_level(targets.levels.size(), 0);
    std::vector<std::vector<int>> gather_idx(targets.levels.size());
    std::vector<std::vector<double>> tgt_vals(targets.levels.size());
    for (const PositiveSample& ps : targets.owned_pixels) {
        const DenseMap& ctr = targets.levels[ps.level].centerness;
        gather_idx[ps.level].push_back(int(ctr.index(ps.x, ps.y)));
        tgt_vals[ps.level].push_back(ctr.at(ps.x, ps.y));
    }

    std::vector<Var> sums;
    for (std::size_t l = 0; l < targets.levels.size(); ++l) {
        if (gather_idx[l].empty()) continue;
        Var p = tape.clamp_const(tape.gather(pred_ctr[l], gather_idx[l]), kEps, 1.0 - kEps);
        int n = int(gather_idx[l].size());
        std::vector<double> t = tgt_vals[l];
        std::vector<double> omt(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) omt[i] = 1.0 - t[i];
        Var t_leaf = tape.leaf(Shape{1, 1, n}, t);
        Var omt_leaf = tape.leaf(Shape{1, 1, n}, omt);
        Var omp = tape.add_const(tape.neg(p), 1.0);
        // -(t log p + (1-t) log(1-p))
        Var bce = tape.neg(tape.add(tape.mul(tape.log(p), t_leaf),
                                    tape.mul(tape.log(omp), omt_leaf)));
        sums.push_back(tape.sum(bce));
    }
    Var total = sums.size() == 1 ? sums[0] : tape.addn(sums);
    return tape.mul_const(total, 1.0 / double(targets.owned_pixels.size()));
}

Var l1_root_loss(Tape& tape, std::span<const Var> pred_root, const TargetMaps& targets) {
    if (pred_root.size() != targets.levels.size())
        throw std::invalid_argument("l1_root_loss: level count mismatch");
    if (targets.owned_pixels.empty()) return tape.leaf(0.0);

    std::vector<std::vector<int>> gather_idx(targets.levels.size());
    std::vector<std::vector<double>> tgt_vals(targets.levels.size());
    for (const PositiveSample& ps : targets.owned_pixels) {
        const DenseMap& cc = targets.levels[ps.level].center_coord;
        for (int c = 0; c < 3; ++c) {
            gather_idx[ps.level].push_back(int(cc.index(ps.x, ps.y, c)));
            tgt_vals[ps.level].push_back(cc.at(ps.x, ps.y, c));
        }
    }

    std::vector<Var> sums;
    for (std::size_t l = 0; l < targets.levels.size(); ++l) {
        if (gather_idx[l].empty()) continue;
        Var p = tape.gather(pred_root[l], gather_idx[l]);
        Var t = tape.leaf(Shape{1, 1, int(tgt_vals[l].size())}, tgt_vals[l]);
        sums.push_back(tape.sum(tape.abs(tape.sub(p, t))));
    }
    Var total = sums.size() == 1 ? sums[0] : tape.addn(sums);
    return tape.mul_const(total, 1.0 / double(targets.owned_pixels.size()));
}

Var l1_pose_loss(Tape& tape, std::span<const PoseTerm> terms, int n_positives) {
    if (terms.empty() || n_positives <= 0) return tape.leaf(0.0);
    std::vector<Var> sums;
    sums.reserve(terms.size());
    for (const PoseTerm& term : terms) {
        Var t = tape.leaf(Shape{1, 1, 3}, term.target);
        sums.push_back(tape.sum(tape.abs(tape.sub(term.mean, t))));
    }
    Var total = sums.size() == 1 ? sums[0] : tape.addn(sums);
    return tape.mul_const(total, 1.0 / double(n_positives));
}

namespace {

// Shared body of the distribution-aware losses. include_prior selects RLE.
Var dist_loss(Tape& tape, std::span<const PoseTerm> terms, const FlowModel& flow,
              const FlowVars& fvars, bool include_prior, BaseDist prior) {
    if (terms.empty()) return tape.leaf(0.0);
    std::vector<Var> parts;
    parts.reserve(terms.size());
    for (const PoseTerm& term : terms) {
        if (!term.log_sigma.valid())
            throw std::invalid_argument("distribution loss: missing log_sigma");
        Var log_sigma = tape.clamp_const(term.log_sigma, kLogSigmaMin, kLogSigmaMax);
        Var sigma = tape.exp(log_sigma);
        Var t = tape.leaf(Shape{1, 1, 3}, term.target);
        Var z = tape.div(tape.sub(t, term.mean), sigma);

        Var nll = tape.neg(flow.build_log_prob(tape, z, fvars));
        if (include_prior) {
            Var prior_lp;
            if (prior == BaseDist::Gaussian) {
                prior_lp = tape.add_const(tape.mul_const(tape.sum(tape.mul(z, z)), -0.5),
                                          -3.0 * kHalfLog2Pi);
            } else {
                prior_lp = tape.add_const(tape.neg(tape.sum(tape.abs(z))), -3.0 * kLog2);
            }
            nll = tape.sub(nll, prior_lp);
        }
        parts.push_back(tape.add(nll, tape.sum(log_sigma)));
    }
    Var total = parts.size() == 1 ? parts[0] : tape.addn(parts);
    return tape.mul_const(total, 1.0 / double(parts.size()));
}

}  // namespace

Var mle_loss(Tape& tape, std::span<const PoseTerm> terms, const FlowModel& flow,
             const FlowVars& fvars) {
    return dist_loss(tape, terms, flow, fvars, false, BaseDist::Gaussian);
}

Var rle_loss(Tape& tape, std::span<const PoseTerm> terms, const FlowModel& flow,
             const FlowVars& fvars, BaseDist prior) {
    return dist_loss(tape, terms, flow, fvars, true, prior);
}

Var total_loss(Tape& tape, Var cls, Var centerness, Var root, Var pose,
               const LossConfig& cfg) {
    std::vector<Var> parts{cls, tape.mul_const(centerness, cfg.lambda1),
                           tape.mul_const(root, cfg.lambda2),
                           tape.mul_const(pose, cfg.lambda3)};
    return tape.addn(parts);
}

}  // namespace das
