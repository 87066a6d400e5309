#include <doctest.h>

#include <cmath>
#include <vector>

#include "das/assign.hpp"
#include "das/losses.hpp"
#include "das/rng.hpp"
#include "support.hpp"

using namespace das;

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;

// Minimal one-level target set with the given confidence/centerness values.
TargetMaps one_level_targets(const DenseMap& conf, const DenseMap& ctr) {
    TargetMaps t;
    t.joint_count = 0;
    LevelTargets lt;
    lt.center_confidence = conf;
    lt.centerness = ctr;
    lt.center_coord = DenseMap(conf.height, conf.width, 3);
    lt.joint_offsets = DenseMap(conf.height, conf.width, 3);
    t.levels.push_back(std::move(lt));
    for (int y = 0; y < conf.height; ++y)
        for (int x = 0; x < conf.width; ++x)
            if (conf.at(x, y) > 0.5) {
                PositiveSample ps;
                ps.level = 0;
                ps.x = x;
                ps.y = y;
                t.positives.push_back(ps);
                t.owned_pixels.push_back(ps);
                t.owned_joint_valid.emplace_back();
            }
    return t;
}

FlowModel identity_flow(BaseDist base) {
    Rng rng(1);
    return FlowModel::make(4, 16, 2.0, base, rng);
}

}  // namespace

TEST_CASE("focal loss: perfect prediction limit goes to zero") {
    DenseMap conf(4, 4, 1, 0.0);
    conf.at(1, 2) = 1.0;
    TargetMaps t = one_level_targets(conf, conf);
    DenseMap pred(4, 4, 1, 1e-9);
    pred.at(1, 2) = 1.0 - 1e-9;
    Tape tape;
    std::vector<Var> preds{tape.leaf(pred)};
    LossConfig cfg;
    Var loss = focal_loss(tape, preds, t, cfg);
    CHECK(tape.val1(loss) < 1e-6);
}

TEST_CASE("focal loss: gamma=0, alpha=0.5 halves binary cross-entropy") {
    Rng rng(12);
    DenseMap conf(5, 5, 1, 0.0);
    conf.at(2, 2) = 1.0;
    conf.at(3, 1) = 1.0;
    TargetMaps t = one_level_targets(conf, conf);
    DenseMap pred(5, 5, 1);
    for (double& v : pred.values) v = rng.uniform(0.05, 0.95);

    double bce_sum = 0;
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        double y = conf.values[i], p = pred.values[i];
        bce_sum += -(y * std::log(p) + (1 - y) * std::log(1 - p));
    }
    double expected = 0.5 * bce_sum / 2;  // normalized by 2 positives

    Tape tape;
    std::vector<Var> preds{tape.leaf(pred)};
    LossConfig cfg;
    cfg.focal_gamma = 0.0;
    cfg.focal_alpha = 0.5;
    Var loss = focal_loss(tape, preds, t, cfg);
    CHECK(tape.val1(loss) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("focal loss: single positive hand value") {
    // p = 0.5 at the only positive, everything else predicted perfectly.
    DenseMap conf(3, 3, 1, 0.0);
    conf.at(1, 1) = 1.0;
    TargetMaps t = one_level_targets(conf, conf);
    DenseMap pred(3, 3, 1, 1e-9);
    pred.at(1, 1) = 0.5;
    Tape tape;
    std::vector<Var> preds{tape.leaf(pred)};
    LossConfig cfg;  // alpha 0.25, gamma 2
    Var loss = focal_loss(tape, preds, t, cfg);
    CHECK(tape.val1(loss) ==
          doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("centerness loss cases") {
    DenseMap conf(3, 3, 1, 0.0);
    conf.at(0, 0) = 1.0;
    DenseMap ctr(3, 3, 1, 0.0);
    ctr.at(0, 0) = 1.0;
    TargetMaps t = one_level_targets(conf, ctr);

    SUBCASE("pred 0.5 vs target 1 gives ln 2") {
        DenseMap pred(3, 3, 1, 0.5);
        Tape tape;
        std::vector<Var> preds{tape.leaf(pred)};
        Var loss = centerness_loss(tape, preds, t);
        CHECK(tape.val1(loss) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("pred equal to target is (near) zero") {
        DenseMap pred(3, 3, 1, 0.123);
        pred.at(0, 0) = 1.0 - 1e-9;
        Tape tape;
        std::vector<Var> preds{tape.leaf(pred)};
        Var loss = centerness_loss(tape, preds, t);
        CHECK(tape.val1(loss) < 1e-6);
    }
    SUBCASE("empty positive set returns zero") {
        TargetMaps empty = one_level_targets(DenseMap(3, 3, 1, 0.0), ctr);
        DenseMap pred(3, 3, 1, 0.7);
        Tape tape;
        std::vector<Var> preds{tape.leaf(pred)};
        CHECK(tape.val1(centerness_loss(tape, preds, empty)) == 0.0);
    }
}

TEST_CASE("l1 root loss hand cases and brute force") {
    DenseMap conf(4, 4, 1, 0.0);
    conf.at(2, 1) = 1.0;
    TargetMaps t = one_level_targets(conf, conf);
    t.levels[0].center_coord.at(2, 1, 0) = 1.0;
    t.levels[0].center_coord.at(2, 1, 1) = -0.5;
    t.levels[0].center_coord.at(2, 1, 2) = 4.0;

    SUBCASE("pred equals target") {
        DenseMap pred = t.levels[0].center_coord;
        Tape tape;
        std::vector<Var> preds{tape.leaf(pred)};
        CHECK(tape.val1(l1_root_loss(tape, preds, t)) == doctest::Approx(0.0));
    }
    SUBCASE("single positive |1| + |-2| + |0.5|") {
        DenseMap pred = t.levels[0].center_coord;
        pred.at(2, 1, 0) += 1.0;
        pred.at(2, 1, 1) += -2.0;
        pred.at(2, 1, 2) += 0.5;
        Tape tape;
        std::vector<Var> preds{tape.leaf(pred)};
        CHECK(tape.val1(l1_root_loss(tape, preds, t)) == doctest::Approx(3.5));
    }
    SUBCASE("matches brute force on random maps") {
        Rng rng(9);
        DenseMap conf2(4, 4, 1, 0.0);
        conf2.at(0, 0) = conf2.at(3, 2) = conf2.at(1, 3) = 1.0;
        TargetMaps t2 = one_level_targets(conf2, conf2);
        for (double& v : t2.levels[0].center_coord.values) v = rng.normal(0, 2);
        DenseMap pred(4, 4, 1 * 3);
        for (double& v : pred.values) v = rng.normal(0, 2);

        double expect = 0;
        for (const auto& ps : t2.owned_pixels)
            for (int c = 0; c < 3; ++c)
                expect += std::abs(pred.at(ps.x, ps.y, c) -
                                   t2.levels[0].center_coord.at(ps.x, ps.y, c));
        expect /= double(t2.owned_pixels.size());

        Tape tape;
        std::vector<Var> preds{tape.leaf(pred)};
        CHECK(tape.val1(l1_root_loss(tape, preds, t2)) ==
              doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("l1 pose loss sums joints and averages positives") {
    Tape tape;
    // K=2, one positive; per-joint errors (1,1,1) and (0,0,2) -> 5
    double m1[3] = {1.0, 2.0, 3.0};
    double m2[3] = {-1.0, 0.5, 0.0};
    PoseTerm a;
    a.mean = tape.leaf(Shape{1, 1, 3}, m1);
    a.target = {0.0, 1.0, 2.0};
    PoseTerm b;
    b.mean = tape.leaf(Shape{1, 1, 3}, m2);
    b.target = {-1.0, 0.5, -2.0};
    std::vector<PoseTerm> terms{a, b};
    CHECK(tape.val1(l1_pose_loss(tape, terms, 1)) == doctest::Approx(5.0));
}

TEST_CASE("mle loss closed forms with the identity flow") {
    FlowModel flow = identity_flow(BaseDist::Gaussian);
    Tape tape;
    FlowVars fv = flow.bind(tape);

    auto term_with_sigma = [&](double log_sigma_val) {
        PoseTerm term;
        double mean[3] = {0.3, -0.7, 1.1};
        double ls[3] = {log_sigma_val, log_sigma_val, log_sigma_val};
        term.mean = tape.leaf(Shape{1, 1, 3}, mean);
        term.log_sigma = tape.leaf(Shape{1, 1, 3}, ls);
        term.target = {0.3, -0.7, 1.1};  // u_hat == u_bar
        return term;
    };

    SUBCASE("u_hat == u_bar, sigma = 1 gives (3/2) ln 2 pi") {
        std::vector<PoseTerm> terms{term_with_sigma(0.0)};
        Var loss = mle_loss(tape, terms, flow, fv);
        CHECK(tape.val1(loss) == doctest::Approx(3.0 * kHalfLog2Pi).epsilon(1e-9));
    }
    SUBCASE("gradient w.r.t. the mean vanishes at the mode") {
        std::vector<PoseTerm> terms{term_with_sigma(0.0)};
        Var loss = mle_loss(tape, terms, flow, fv);
        tape.zero_grad();
        tape.backward(loss);
        for (double g : tape.grad(terms[0].mean)) CHECK(std::abs(g) < 1e-12);
    }
    SUBCASE("doubling sigma adds 3 ln 2") {
        std::vector<PoseTerm> t1{term_with_sigma(0.0)};
        std::vector<PoseTerm> t2{term_with_sigma(std::log(2.0))};
        double l1v = tape.val1(mle_loss(tape, t1, flow, fv));
        double l2v = tape.val1(mle_loss(tape, t2, flow, fv));
        CHECK(l2v - l1v == doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-9));
    }
}

TEST_CASE("rle loss closed form and translation invariance") {
    FlowModel flow = identity_flow(BaseDist::Gaussian);
    Tape tape;
    FlowVars fv = flow.bind(tape);

    SUBCASE("u_hat == u_bar, sigma = 1, Laplace prior") {
        PoseTerm term;
        double mean[3] = {0.0, 0.0, 0.0};
        double ls[3] = {0.0, 0.0, 0.0};
        term.mean = tape.leaf(Shape{1, 1, 3}, mean);
        term.log_sigma = tape.leaf(Shape{1, 1, 3}, ls);
        term.target = {0.0, 0.0, 0.0};
        std::vector<PoseTerm> terms{term};
        Var loss = rle_loss(tape, terms, flow, fv, BaseDist::Laplace);
        CHECK(tape.val1(loss) ==
              doctest::Approx(3.0 * std::log(2.0) + 3.0 * kHalfLog2Pi).epsilon(1e-9));
    }
    SUBCASE("adding a constant to both u_hat and u_bar leaves the loss unchanged") {
        Rng rng(8);
        for (int i = 0; i < 10; ++i) {
            double shift = rng.normal(0, 3);
            double mean[3] = {0.4, -1.0, 0.2};
            double ls[3] = {0.1, -0.3, 0.2};
            PoseTerm a;
            a.mean = tape.leaf(Shape{1, 1, 3}, mean);
            a.log_sigma = tape.leaf(Shape{1, 1, 3}, ls);
            a.target = {1.0, 0.5, -0.7};
            PoseTerm b;
            double mean2[3] = {0.4 + shift, -1.0 + shift, 0.2 + shift};
            b.mean = tape.leaf(Shape{1, 1, 3}, mean2);
            b.log_sigma = tape.leaf(Shape{1, 1, 3}, ls);
            b.target = {1.0 + shift, 0.5 + shift, -0.7 + shift};
            std::vector<PoseTerm> ta{a}, tb{b};
            double la = tape.val1(rle_loss(tape, ta, flow, fv, BaseDist::Laplace));
            double lb = tape.val1(rle_loss(tape, tb, flow, fv, BaseDist::Laplace));
            CHECK(la == doctest::Approx(lb).epsilon(1e-12));
        }
    }
}

TEST_CASE("distribution identity: log P(u) at u = u_bar + sigma*x") {
    // The reparameterized density evaluated through the loss machinery must
    // equal log P_Z(x) - sum(log sigma).
    FlowModel flow = identity_flow(BaseDist::Gaussian);
    Rng rng(77);
    FlowModel rnd = flow;
    rnd.randomize(rng, 0.4, 0.1);

    Tape tape;
    FlowVars fv = rnd.bind(tape);
    for (int i = 0; i < 10; ++i) {
        Vec3 x{rng.normal(), rng.normal(), rng.normal()};
        Vec3 mean{rng.normal(0, 2), rng.normal(0, 2), rng.normal(0, 2)};
        Vec3 log_sigma{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};

        PoseTerm term;
        term.mean = tape.leaf(Shape{1, 1, 3}, mean);
        term.log_sigma = tape.leaf(Shape{1, 1, 3}, log_sigma);
        double sum_ls = 0;
        for (int c = 0; c < 3; ++c) {
            term.target[c] = mean[c] + std::exp(log_sigma[c]) * x[c];
            sum_ls += log_sigma[c];
        }
        std::vector<PoseTerm> terms{term};
        double neg_loss = -tape.val1(mle_loss(tape, terms, rnd, fv));
        CHECK(neg_loss == doctest::Approx(rnd.log_prob(x) - sum_ls).epsilon(1e-8));
    }
}

TEST_CASE("mle/rle strictly increase as the mean moves off the target") {
    FlowModel flow = identity_flow(BaseDist::Gaussian);
    Tape tape;
    FlowVars fv = flow.bind(tape);
    double prev_mle = -1e300, prev_rle = -1e300;
    for (double off : {0.0, 0.5, 1.0, 2.0, 4.0}) {
        PoseTerm term;
        double mean[3] = {off, 0.0, 0.0};
        double ls[3] = {0.0, 0.0, 0.0};
        term.mean = tape.leaf(Shape{1, 1, 3}, mean);
        term.log_sigma = tape.leaf(Shape{1, 1, 3}, ls);
        term.target = {0.0, 0.0, 0.0};
        std::vector<PoseTerm> terms{term};
        double lm = tape.val1(mle_loss(tape, terms, flow, fv));
        double lr = tape.val1(rle_loss(tape, terms, flow, fv, BaseDist::Laplace));
        CHECK(lm > prev_mle);
        CHECK(lr > prev_rle);
        prev_mle = lm;
        prev_rle = lr;
    }
}

TEST_CASE("total loss weighting") {
    Tape tape;
    Var a = tape.leaf(1.0), b = tape.leaf(2.0), c = tape.leaf(3.0), d = tape.leaf(4.0);
    LossConfig cfg;
    SUBCASE("all lambdas zero leaves only the classification term") {
        cfg.lambda1 = cfg.lambda2 = cfg.lambda3 = 0.0;
        CHECK(tape.val1(total_loss(tape, a, b, c, d, cfg)) == doctest::Approx(1.0));
    }
    SUBCASE("unit lambdas sum the components") {
        CHECK(tape.val1(total_loss(tape, a, b, c, d, cfg)) == doctest::Approx(10.0));
    }
    SUBCASE("weights scale their components") {
        cfg.lambda1 = 2.0;
        cfg.lambda2 = 0.5;
        cfg.lambda3 = 3.0;
        CHECK(tape.val1(total_loss(tape, a, b, c, d, cfg)) ==
              doctest::Approx(1 + 4 + 1.5 + 12));
    }
}

TEST_CASE("composite focal + L1 + RLE gradient check on a 4x4 map") {
    using das::testing::FdCheck;
    Rng rng(15);

    DenseMap conf(4, 4, 1, 0.0);
    conf.at(1, 1) = 1.0;
    conf.at(2, 2) = 1.0;
    TargetMaps targets = one_level_targets(conf, conf);
    targets.joint_count = 2;
    targets.levels[0].joint_offsets = DenseMap(4, 4, 6);
    for (double& v : targets.levels[0].joint_offsets.values) v = rng.normal(0, 1);
    for (double& v : targets.levels[0].center_coord.values) v = rng.normal(0, 1);

    FlowModel flow = identity_flow(BaseDist::Gaussian);
    Rng frng(5);
    flow.randomize(frng, 0.4, 0.1);

    std::vector<Param> params;
    Param conf_logit(Shape{4, 4, 1});
    Param root_map(Shape{4, 4, 3});
    Param joint_map(Shape{4, 4, 6});
    Param lsig_map(Shape{4, 4, 6});
    for (double& v : conf_logit.value) v = rng.normal(0, 1.5);
    for (double& v : root_map.value) v = rng.normal(0, 1);
    for (double& v : joint_map.value) v = rng.normal(0, 1);
    for (double& v : lsig_map.value) v = rng.uniform(-0.5, 0.5);
    params = {conf_logit, root_map, joint_map, lsig_map};
    for (Param* p : flow.params()) params.push_back(*p);

    FdCheck fd;
    double err = fd.max_rel_error(params, [&](Tape& t, std::vector<Var>& vs) {
        std::vector<Var> conf_pred{t.sigmoid(vs[0])};
        std::vector<Var> root_pred{vs[1]};
        LossConfig cfg;
        Var l_cls = focal_loss(t, conf_pred, targets, cfg);
        Var l_root = l1_root_loss(t, root_pred, targets);

        FlowVars fv;
        fv.layers.resize(flow.layers.size());
        std::size_t idx = 4;
        for (auto& lv : fv.layers) {
            lv.w1s = vs[idx++];
            lv.b1s = vs[idx++];
            lv.w2s = vs[idx++];
            lv.b2s = vs[idx++];
            lv.w1t = vs[idx++];
            lv.b1t = vs[idx++];
            lv.w2t = vs[idx++];
            lv.b2t = vs[idx++];
        }
        std::vector<PoseTerm> terms;
        for (const auto& ps : targets.owned_pixels) {
            for (int k = 0; k < 2; ++k) {
                PoseTerm term;
                term.mean = t.pixel(vs[2], ps.x, ps.y, 3 * k, 3 * k + 3);
                term.log_sigma = t.pixel(vs[3], ps.x, ps.y, 3 * k, 3 * k + 3);
                const DenseMap& joff = targets.levels[0].joint_offsets;
                term.target = {joff.at(ps.x, ps.y, 3 * k), joff.at(ps.x, ps.y, 3 * k + 1),
                               joff.at(ps.x, ps.y, 3 * k + 2)};
                terms.push_back(term);
            }
        }
        Var l_pose = rle_loss(t, terms, flow, fv, BaseDist::Laplace);
        LossConfig w;
        return total_loss(t, l_cls, t.leaf(0.0), l_root, l_pose, w);
    });
    CHECK(err < 1e-4);
}
