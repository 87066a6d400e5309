#include "das/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "das/assign.hpp"
#include "das/errors.hpp"
#include "das/losses.hpp"

namespace das {

namespace {

constexpr std::uint64_t kTagScene = 1;
constexpr std::uint64_t kTagInit = 2;
constexpr std::uint64_t kTagFlow = 3;
constexpr std::uint64_t kTagSampler = 4;
constexpr std::uint64_t kTagNoiseScale = 5;
constexpr std::uint64_t kTagNoiseDraw = 6;
constexpr std::uint64_t kTagHead = 7;

// ---------------------------------------------------------------------------
// Optimizer

struct Sgd {
    double lr = 0.0;
    double momentum = 0.0;
    std::map<const Param*, std::vector<double>> velocity;

    void apply(Param& p, std::span<const double> grad) {
        const bool scaled = !p.lr_scale.empty();
        if (momentum > 0.0) {
            auto& vel = velocity[&p];
            if (vel.size() != p.value.size()) vel.assign(p.value.size(), 0.0);
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                vel[i] = momentum * vel[i] + grad[i];
                p.value[i] -= lr * (scaled ? p.lr_scale[i] : 1.0) * vel[i];
            }
        } else {
            for (std::size_t i = 0; i < p.value.size(); ++i)
                p.value[i] -= lr * (scaled ? p.lr_scale[i] : 1.0) * grad[i];
        }
    }
};

struct Binding {
    Param* param;
    Var var;
};

Var bind(Tape& tape, Param& p, std::vector<Binding>& out) {
    Var v = tape.leaf(p.shape, p.value);
    out.push_back({&p, v});
    return v;
}

// ---------------------------------------------------------------------------
// Direct-mode initialization

double logit(double p) {
    p = std::min(1.0 - 1e-9, std::max(1e-9, p));
    return std::log(p / (1.0 - p));
}

// Dense ground-truth extension of the target maps used as the direct-mode
// starting point. Classification maps start at their targets; joint offset
// maps start from the per-pixel-nearest person's field plus profile noise.
DirectSceneParams init_direct_params(const Scene& scene, const TargetMaps& targets,
                                     const RunConfig& cfg, Rng& rng) {
    const InitConfig& init = cfg.train.init;
    int K = targets.joint_count;
    int L = cfg.levels.levels();
    DirectSceneParams out;
    out.conf_logit.resize(L);
    out.ctr_logit.resize(L);
    out.center_coord.resize(L);
    out.joint_offsets.resize(L);
    out.log_sigma.resize(L);

    for (int l = 0; l < L; ++l) {
        const LevelTargets& tgt = targets.levels[l];
        int h = tgt.center_confidence.height, w = tgt.center_confidence.width;

        Param conf(Shape{h, w, 1});
        Param ctr(Shape{h, w, 1});
        Param root(Shape{h, w, 3});
        Param joff(Shape{h, w, 3 * K});
        Param lsig(Shape{h, w, 3 * K});

        // Scales start at the known residual ceiling and adapt downward;
        // initializing at sigma = 1 puts raw-mm depth residuals hundreds of
        // standard deviations out and detonates the flow gradients.
        double sig_xy = std::max(0.5, init.noise_xy);
        double sig_d = std::max(5.0, init.noise_d);
        if (init.profile == InitProfile::Zeros) {
            // residuals start at the full center-relative offsets
            sig_xy = std::max(sig_xy, 3.0);
            sig_d = std::max(sig_d, 60.0);
        }
        if (cfg.train.label_noise == LabelNoise::Heteroscedastic) {
            sig_xy = std::max(sig_xy, cfg.train.noise.sd_xy * cfg.train.noise.scale_high);
            sig_d = std::max(sig_d, cfg.train.noise.sd_d_mm * cfg.train.noise.scale_high);
        }
        for (int i = 0; i < h * w; ++i) {
            for (int k = 0; k < K; ++k) {
                std::size_t at = (std::size_t(i)) * 3 * K + std::size_t(3 * k);
                lsig.value[at + 0] = std::log(sig_xy);
                lsig.value[at + 1] = std::log(sig_xy);
                lsig.value[at + 2] = std::log(sig_d);
            }
        }

        for (int i = 0; i < h * w; ++i) {
            conf.value[i] = tgt.center_confidence.values[i] > 0.5 ? 4.0 : -4.0;
            ctr.value[i] = logit(tgt.centerness.values[i]);
        }
        root.value = tgt.center_coord.values;

        // Scaled poses of every person assigned to this level drive the
        // dense joint-offset init.
        struct LevelPerson {
            Pose3D scaled;
            double cx, cy;
        };
        std::vector<LevelPerson> persons;
        for (int pi = 0; pi < int(scene.persons.size()); ++pi) {
            const Pose3D& p = scene.persons[pi];
            if (assign_level(max_root_distance(p), cfg.levels) != l) continue;
            LevelPerson lp;
            lp.scaled = scale_to_level(p, cfg.levels.strides[l]);
            lp.cx = lp.scaled.root().x;
            lp.cy = lp.scaled.root().y;
            persons.push_back(std::move(lp));
        }

        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                // nearest assigned person by scaled center distance
                int best = -1;
                double best_d = 0.0;
                for (int p = 0; p < int(persons.size()); ++p) {
                    double dx = x - persons[p].cx, dy = y - persons[p].cy;
                    double d2 = dx * dx + dy * dy;
                    if (best < 0 || d2 < best_d) {
                        best = p;
                        best_d = d2;
                    }
                }
                for (int k = 0; k < K; ++k) {
                    std::size_t at = joff.shape.w * 3 * K * std::size_t(y) +
                                     std::size_t(x) * 3 * K + std::size_t(3 * k);
                    if (init.profile == InitProfile::Zeros) {
                        joff.value[at + 0] = rng.normal(0.0, init.noise_xy);
                        joff.value[at + 1] = rng.normal(0.0, init.noise_xy);
                        joff.value[at + 2] = rng.normal(0.0, init.noise_d);
                        continue;
                    }
                    if (best < 0) {
                        // no person on this level; leave zeros with full noise
                        joff.value[at + 0] = rng.normal(0.0, init.noise_xy);
                        joff.value[at + 1] = rng.normal(0.0, init.noise_xy);
                        joff.value[at + 2] = rng.normal(0.0, init.noise_d);
                        continue;
                    }
                    const LevelPerson& lp = persons[best];
                    const ImageJoint& j = lp.scaled.joints[k];
                    double jd_rel = j.d - lp.scaled.root().d;
                    double base_x, base_y, base_d;
                    double noise_w = 1.0;
                    if (init.profile == InitProfile::NearJointExact) {
                        // Blend from the center-relative target near the
                        // center to the update operator's affine form near
                        // the joint. A smooth blend keeps bilinear slopes
                        // tame; the depth contribution vanishes at the joint
                        // so sampled depth acts as a residual. Noise ramps to
                        // zero inside exact_radius of the joint.
                        double dc = std::sqrt((x - lp.cx) * (x - lp.cx) +
                                              (y - lp.cy) * (y - lp.cy));
                        double dj = std::sqrt((x - j.x) * (x - j.x) +
                                              (y - j.y) * (y - j.y));
                        double w = dj / std::max(1e-9, dj + dc);
                        base_x = w * (j.x - lp.cx) + (1.0 - w) * (j.x - x);
                        base_y = w * (j.y - lp.cy) + (1.0 - w) * (j.y - y);
                        base_d = w * jd_rel;
                        double ramp = std::max(0.0, dj - init.exact_radius) /
                                      std::max(1e-9, init.ramp);
                        noise_w = std::min(1.0, ramp);
                    } else {
                        // Center-relative values fade out beyond the positive
                        // neighborhood. Zero far-field is the update stack's
                        // quiescent configuration: lookups land on ~zero cells
                        // and leave the estimate alone, so training with any
                        // number of update layers converges like the raw case.
                        double dc = std::sqrt((x - lp.cx) * (x - lp.cx) +
                                              (y - lp.cy) * (y - lp.cy));
                        double fade = std::exp(-std::pow(std::max(0.0, dc - 2.0), 2) /
                                               (2.0 * 1.5 * 1.5));
                        base_x = (j.x - lp.cx) * fade;
                        base_y = (j.y - lp.cy) * fade;
                        base_d = jd_rel * fade;
                        noise_w = fade;
                    }
                    joff.value[at + 0] = base_x + noise_w * rng.normal(0.0, init.noise_xy);
                    joff.value[at + 1] = base_y + noise_w * rng.normal(0.0, init.noise_xy);
                    joff.value[at + 2] = base_d + noise_w * rng.normal(0.0, init.noise_d);
                }
            }
        }

        // Raw-mm depth channels step depth_lr_scale times faster.
        joff.lr_scale.assign(joff.value.size(), 1.0);
        for (std::size_t i = 2; i < joff.lr_scale.size(); i += 3)
            joff.lr_scale[i] = cfg.train.depth_lr_scale;

        out.conf_logit[l] = std::move(conf);
        out.ctr_logit[l] = std::move(ctr);
        out.center_coord[l] = std::move(root);
        out.joint_offsets[l] = std::move(joff);
        out.log_sigma[l] = std::move(lsig);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Heteroscedastic skewed label noise

double skewed_mix_draw(const NoiseConfig& n, Rng& rng) {
    if (rng.uniform() < n.mix_w) return rng.normal(n.mu1, n.sd1);
    return rng.normal(n.mu2, n.sd2);
}

// scales[person*K + k]: low/high noise scale per (person, joint).
std::vector<double> draw_noise_scales(const NoiseConfig& n, int persons, int K,
                                      Rng& rng) {
    std::vector<double> out(std::size_t(persons) * K);
    for (double& v : out)
        v = rng.uniform() < n.p_high ? n.scale_high : n.scale_low;
    return out;
}

// Per-step draws for every (person, joint, dim), in grid units / mm.
std::vector<double> draw_label_noise(const NoiseConfig& n,
                                     std::span<const double> scales, int K, Rng& rng) {
    std::vector<double> out(scales.size() * 3);
    for (std::size_t i = 0; i < scales.size(); ++i) {
        double c = scales[i];
        out[3 * i + 0] = c * n.sd_xy * skewed_mix_draw(n, rng);
        out[3 * i + 1] = c * n.sd_xy * skewed_mix_draw(n, rng);
        out[3 * i + 2] = c * n.sd_d_mm * skewed_mix_draw(n, rng);
    }
    (void)K;
    return out;
}

// ---------------------------------------------------------------------------
// Conv head

DenseMap constant_scale_map(int h, int w, int K, double xy, double d) {
    DenseMap m(h, w, 3 * K, xy);
    for (int i = 0; i < h * w; ++i)
        for (int k = 0; k < K; ++k) m.values[std::size_t(i) * 3 * K + 3 * k + 2] = d;
    return m;
}

struct ConvHeadVars {
    Var k1, b1, k2, b2;
    Var conf_k, conf_b, ctr_k, ctr_b, root_k, root_b;
    Var joint_k, joint_b, sigma_k, sigma_b;
};

struct ConvLevelOutput {
    Var conf;   // post-sigmoid
    Var ctr;    // post-sigmoid
    Var root;   // scaled
    Var joint;  // scaled
    Var sigma;  // log-sigma
};

ConvLevelOutput conv_forward(Tape& tape, const ConvHead& head, const ConvHeadVars& v,
                             Var features) {
    Shape fs = features.tape->shape(features);
    Var t1 = tape.tanh(tape.conv3x3(features, v.k1, v.b1, head.in_channels, head.width));
    Var t2 = tape.tanh(tape.conv3x3(t1, v.k2, v.b2, head.width, head.width));
    ConvLevelOutput out;
    out.conf = tape.sigmoid(tape.conv3x3(t2, v.conf_k, v.conf_b, head.width, 1));
    out.ctr = tape.sigmoid(tape.conv3x3(t2, v.ctr_k, v.ctr_b, head.width, 1));
    Var root_raw = tape.conv3x3(t2, v.root_k, v.root_b, head.width, 3);
    DenseMap root_scale(fs.h, fs.w, 3, 1.0);
    for (int i = 0; i < fs.h * fs.w; ++i)
        root_scale.values[std::size_t(i) * 3 + 2] = kHeadRootDepthScale;
    out.root = tape.mul(root_raw, tape.leaf(root_scale));
    Var joint_raw = tape.conv3x3(t2, v.joint_k, v.joint_b, head.width, 3 * head.K);
    out.joint = tape.mul(joint_raw, tape.leaf(constant_scale_map(
                                        fs.h, fs.w, head.K, 1.0, kHeadJointDepthScale)));
    out.sigma = tape.conv3x3(t2, v.sigma_k, v.sigma_b, head.width, 3 * head.K);
    return out;
}

ConvHeadVars bind_head(Tape& tape, ConvHead& head, std::vector<Binding>& binds) {
    ConvHeadVars v;
    v.k1 = bind(tape, head.k1, binds);
    v.b1 = bind(tape, head.b1, binds);
    v.k2 = bind(tape, head.k2, binds);
    v.b2 = bind(tape, head.b2, binds);
    v.conf_k = bind(tape, head.conf_k, binds);
    v.conf_b = bind(tape, head.conf_b, binds);
    v.ctr_k = bind(tape, head.ctr_k, binds);
    v.ctr_b = bind(tape, head.ctr_b, binds);
    v.root_k = bind(tape, head.root_k, binds);
    v.root_b = bind(tape, head.root_b, binds);
    v.joint_k = bind(tape, head.joint_k, binds);
    v.joint_b = bind(tape, head.joint_b, binds);
    v.sigma_k = bind(tape, head.sigma_k, binds);
    v.sigma_b = bind(tape, head.sigma_b, binds);
    return v;
}

}  // namespace

ConvHead ConvHead::make(int K, int in_channels, int width, Rng& rng) {
    ConvHead h;
    h.K = K;
    h.in_channels = in_channels;
    h.width = width;
    auto conv_param = [&](int cin, int cout, double sd) {
        Param p(Shape{1, 1, 9 * cin * cout});
        for (double& v : p.value) v = rng.normal(0.0, sd);
        return p;
    };
    double sd1 = 1.0 / std::sqrt(9.0 * in_channels);
    double sd2 = 1.0 / std::sqrt(9.0 * width);
    h.k1 = conv_param(in_channels, width, sd1);
    h.b1 = Param(Shape{1, 1, width});
    h.k2 = conv_param(width, width, sd2);
    h.b2 = Param(Shape{1, 1, width});
    // zero-init heads; negative confidence bias keeps early positives rare
    h.conf_k = Param(Shape{1, 1, 9 * width * 1});
    h.conf_b = Param(Shape{1, 1, 1}, -4.0);
    h.ctr_k = Param(Shape{1, 1, 9 * width * 1});
    h.ctr_b = Param(Shape{1, 1, 1});
    h.root_k = Param(Shape{1, 1, 9 * width * 3});
    h.root_b = Param(Shape{1, 1, 3});
    h.joint_k = Param(Shape{1, 1, 9 * width * 3 * K});
    h.joint_b = Param(Shape{1, 1, 3 * K});
    h.sigma_k = Param(Shape{1, 1, 9 * width * 3 * K});
    h.sigma_b = Param(Shape{1, 1, 3 * K});
    // wide initial scales, matching the zero-init offsets' residual range
    for (int k = 0; k < K; ++k) {
        h.sigma_b.value[3 * k + 0] = std::log(2.0);
        h.sigma_b.value[3 * k + 1] = std::log(2.0);
        h.sigma_b.value[3 * k + 2] = std::log(60.0);
    }
    return h;
}

std::vector<Param*> ConvHead::params() {
    return {&k1, &b1, &k2, &b2, &conf_k, &conf_b, &ctr_k, &ctr_b,
            &root_k, &root_b, &joint_k, &joint_b, &sigma_k, &sigma_b};
}

DenseMap render_features(const Scene& scene, const LevelConfig& levels, int level,
                         int image_w, int image_h) {
    int h = levels.grid_h(image_h, level);
    int w = levels.grid_w(image_w, level);
    DenseMap f(h, w, 4);
    double stride = levels.strides[level];
    const double sigma_c = 2.0, sigma_j = 1.5;
    for (const Pose3D& person : scene.persons) {
        Pose3D scaled = scale_to_level(person, stride);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double dxc = x - scaled.root().x, dyc = y - scaled.root().y;
                double g = std::exp(-(dxc * dxc + dyc * dyc) / (2 * sigma_c * sigma_c));
                f.at(x, y, 0) = std::max(f.at(x, y, 0), g);
                for (const ImageJoint& j : scaled.joints) {
                    double dx = x - j.x, dy = y - j.y;
                    double gj = std::exp(-(dx * dx + dy * dy) / (2 * sigma_j * sigma_j));
                    f.at(x, y, 1) = std::max(f.at(x, y, 1), gj);
                }
            }
        }
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            f.at(x, y, 2) = double(x) / std::max(1, w - 1);
            f.at(x, y, 3) = double(y) / std::max(1, h - 1);
        }
    return f;
}

TrainedModel train_model(const std::vector<Scene>& scenes, const RunConfig& cfg,
                         std::vector<LossBreakdown>* history) {
    if (scenes.empty()) throw ConfigError("train: empty dataset");
    cfg.validate();

    TrainedModel model;
    model.cfg = cfg;
    model.K = scenes[0].persons.empty() ? cfg.scene.skeleton.joint_count()
                                        : scenes[0].persons[0].joint_count();
    model.root_index = cfg.scene.skeleton.root_index;

    const bool dist_loss =
        cfg.loss.pose_loss == PoseLoss::Mle || cfg.loss.pose_loss == PoseLoss::Rle;
    const bool multi_source = cfg.update.mode == UpdateMode::MultiSource;
    const int L = cfg.levels.levels();

    // Targets and per-scene parameters.
    std::vector<TargetMaps> targets;
    targets.reserve(scenes.size());
    for (const Scene& s : scenes)
        targets.push_back(build_targets(s.persons, s.intrinsics, cfg.levels,
                                        cfg.scene.image_w, cfg.scene.image_h));

    if (cfg.train.mode == TrainMode::Direct) {
        for (int i = 0; i < int(scenes.size()); ++i) {
            Rng rng = Rng::with_tags(cfg.seed, kTagInit, i);
            model.scenes.push_back(
                init_direct_params(scenes[i], targets[i], cfg, rng));
        }
    } else {
        Rng rng = Rng::with_tags(cfg.seed, kTagHead, 0);
        model.head = ConvHead::make(model.K, 4, 16, rng);
    }

    {
        Rng rng = Rng::with_tags(cfg.seed, kTagFlow, 0);
        model.flow = FlowModel::make(cfg.flow.layers, cfg.flow.hidden, cfg.flow.s_max,
                                     cfg.flow.base, rng);
    }
    if (multi_source) {
        for (int n = 0; n < cfg.update.n_layers; ++n) {
            Rng rng = Rng::with_tags(cfg.seed, kTagSampler, n);
            model.samplers.push_back(
                SamplerMlp::make(cfg.update.M, cfg.update.sampler_hidden, rng));
        }
    }

    // Per-(scene, person, joint) noise scales for the heteroscedastic model.
    std::vector<std::vector<double>> noise_scales(scenes.size());
    if (cfg.train.label_noise == LabelNoise::Heteroscedastic) {
        for (int i = 0; i < int(scenes.size()); ++i) {
            Rng rng = Rng::with_tags(cfg.seed, kTagNoiseScale, i);
            noise_scales[i] = draw_noise_scales(cfg.train.noise,
                                                int(scenes[i].persons.size()), model.K, rng);
        }
    }

    // Conv-mode features, rendered once.
    std::vector<std::vector<DenseMap>> features(scenes.size());
    if (cfg.train.mode == TrainMode::Conv) {
        for (int i = 0; i < int(scenes.size()); ++i)
            for (int l = 0; l < L; ++l)
                features[i].push_back(render_features(scenes[i], cfg.levels, l,
                                                      cfg.scene.image_w, cfg.scene.image_h));
    }

    Sgd opt;
    opt.lr = cfg.train.lr;
    opt.momentum = cfg.train.momentum;

    Tape tape;
    for (int step = 0; step < cfg.train.steps; ++step) {
        LossBreakdown acc;
        for (int si = 0; si < int(scenes.size()); ++si) {
            const TargetMaps& tgt = targets[si];
            tape.clear();
            std::vector<Binding> binds;

            std::vector<Var> conf(L), ctr(L), root(L), joint(L), lsig(L);
            if (cfg.train.mode == TrainMode::Direct) {
                DirectSceneParams& sp = model.scenes[si];
                for (int l = 0; l < L; ++l) {
                    conf[l] = tape.sigmoid(bind(tape, sp.conf_logit[l], binds));
                    ctr[l] = tape.sigmoid(bind(tape, sp.ctr_logit[l], binds));
                    root[l] = bind(tape, sp.center_coord[l], binds);
                    joint[l] = bind(tape, sp.joint_offsets[l], binds);
                    if (dist_loss) lsig[l] = bind(tape, sp.log_sigma[l], binds);
                }
            } else {
                ConvHeadVars hv = bind_head(tape, model.head, binds);
                for (int l = 0; l < L; ++l) {
                    Var feat = tape.leaf(features[si][l]);
                    ConvLevelOutput out = conv_forward(tape, model.head, hv, feat);
                    conf[l] = out.conf;
                    ctr[l] = out.ctr;
                    root[l] = out.root;
                    joint[l] = out.joint;
                    lsig[l] = out.sigma;
                }
            }

            FlowVars fvars;
            if (dist_loss) {
                fvars = model.flow.bind(tape);
                std::vector<Param*> fp = model.flow.params();
                std::size_t idx = 0;
                for (const auto& lv : fvars.layers) {
                    Var vs[8] = {lv.w1s, lv.b1s, lv.w2s, lv.b2s,
                                 lv.w1t, lv.b1t, lv.w2t, lv.b2t};
                    for (Var v : vs) binds.push_back({fp[idx++], v});
                }
            }
            std::vector<SamplerVars> svars;
            if (multi_source) {
                for (SamplerMlp& s : model.samplers) {
                    svars.push_back(bind_sampler(tape, s));
                    std::vector<Param*> ps = s.params();
                    const SamplerVars& sv = svars.back();
                    Var vs[6] = {sv.w1, sv.b1, sv.w_disp, sv.b_disp, sv.w_logit, sv.b_logit};
                    for (int i = 0; i < 6; ++i) binds.push_back({ps[i], vs[i]});
                }
            }

            Var l_cls = focal_loss(tape, conf, tgt, cfg.loss);
            Var l_ctr = centerness_loss(tape, ctr, tgt);
            Var l_root = l1_root_loss(tape, root, tgt);

            // Per-step label noise for this scene.
            std::vector<double> noise;
            if (cfg.train.label_noise == LabelNoise::Heteroscedastic) {
                Rng rng = Rng::with_tags(cfg.seed, kTagNoiseDraw,
                                         std::uint64_t(step) + 1, si);
                noise = draw_label_noise(cfg.train.noise, noise_scales[si], model.K, rng);
            }

            std::vector<PoseTerm> terms;
            terms.reserve(tgt.owned_pixels.size() * model.K);
            for (std::size_t oi = 0; oi < tgt.owned_pixels.size(); ++oi) {
                const PositiveSample& ps = tgt.owned_pixels[oi];
                const DenseMap& joff = tgt.levels[ps.level].joint_offsets;
                for (int k = 0; k < model.K; ++k) {
                    if (!tgt.owned_joint_valid[oi].empty() &&
                        !tgt.owned_joint_valid[oi][k])
                        continue;
                    PoseTerm term;
                    term.mean = stack_updates(tape, joint[ps.level], k, ps.x, ps.y,
                                              cfg.update, model.samplers, svars);
                    if (dist_loss)
                        term.log_sigma =
                            tape.pixel(lsig[ps.level], ps.x, ps.y, 3 * k, 3 * k + 3);
                    term.target = {joff.at(ps.x, ps.y, 3 * k + 0),
                                   joff.at(ps.x, ps.y, 3 * k + 1),
                                   joff.at(ps.x, ps.y, 3 * k + 2)};
                    if (!noise.empty()) {
                        std::size_t ni = (std::size_t(ps.person) * model.K + k) * 3;
                        term.target[0] += noise[ni + 0];
                        term.target[1] += noise[ni + 1];
                        term.target[2] += noise[ni + 2];
                    }
                    terms.push_back(term);
                }
            }

            Var l_pose;
            switch (cfg.loss.pose_loss) {
                case PoseLoss::L1:
                    l_pose = l1_pose_loss(tape, terms, int(tgt.owned_pixels.size()));
                    break;
                case PoseLoss::Mle:
                    l_pose = mle_loss(tape, terms, model.flow, fvars);
                    break;
                case PoseLoss::Rle:
                    l_pose = rle_loss(tape, terms, model.flow, fvars, cfg.loss.rle_prior);
                    break;
            }

            Var total = total_loss(tape, l_cls, l_ctr, l_root, l_pose, cfg.loss);
            double tv = tape.val1(total);
            if (!std::isfinite(tv)) {
                std::ostringstream os;
                os << "train: non-finite loss at step " << step << ", scene " << si
                   << " (cls=" << tape.val1(l_cls) << " centerness=" << tape.val1(l_ctr)
                   << " root=" << tape.val1(l_root) << " pose=" << tape.val1(l_pose)
                   << ")";
                throw NumericalError(os.str());
            }

            tape.zero_grad();
            tape.backward(total);
            for (Binding& b : binds) opt.apply(*b.param, tape.grad(b.var));

            acc.cls += tape.val1(l_cls);
            acc.centerness += tape.val1(l_ctr);
            acc.root += tape.val1(l_root);
            acc.pose += tape.val1(l_pose);
            acc.total += tv;
        }
        if (history) {
            double n = double(scenes.size());
            history->push_back({acc.cls / n, acc.centerness / n, acc.root / n,
                                acc.pose / n, acc.total / n});
        }
    }
    return model;
}

PredictionMaps predict(const TrainedModel& model, const Scene& scene, int scene_index) {
    const RunConfig& cfg = model.cfg;
    const int L = cfg.levels.levels();
    PredictionMaps out;
    out.confidence.resize(L);
    out.centerness.resize(L);
    out.center_coord.resize(L);
    out.joint_offsets.resize(L);
    out.log_sigma.resize(L);

    if (cfg.train.mode == TrainMode::Direct) {
        if (scene_index < 0 || scene_index >= int(model.scenes.size()))
            throw ConfigError("predict: direct-mode scene index out of range");
        const DirectSceneParams& sp = model.scenes[scene_index];
        for (int l = 0; l < L; ++l) {
            const Shape s = sp.conf_logit[l].shape;
            DenseMap conf(s.h, s.w, 1), ctr(s.h, s.w, 1);
            for (int i = 0; i < s.h * s.w; ++i) {
                conf.values[i] = 1.0 / (1.0 + std::exp(-sp.conf_logit[l].value[i]));
                ctr.values[i] = 1.0 / (1.0 + std::exp(-sp.ctr_logit[l].value[i]));
            }
            out.confidence[l] = std::move(conf);
            out.centerness[l] = std::move(ctr);
            DenseMap root(s.h, s.w, 3);
            root.values = sp.center_coord[l].value;
            out.center_coord[l] = std::move(root);
            DenseMap joff(s.h, s.w, 3 * model.K);
            joff.values = sp.joint_offsets[l].value;
            out.joint_offsets[l] = std::move(joff);
            DenseMap lsig(s.h, s.w, 3 * model.K);
            lsig.values = sp.log_sigma[l].value;
            out.log_sigma[l] = std::move(lsig);
        }
        return out;
    }

    // Conv mode: run the head on a scratch tape and read the forward values.
    Tape tape;
    ConvHead head = model.head;  // bind() is non-const over params
    std::vector<Binding> binds;
    ConvHeadVars hv = bind_head(tape, head, binds);
    for (int l = 0; l < L; ++l) {
        DenseMap feat = render_features(scene, cfg.levels, l, cfg.scene.image_w,
                                        cfg.scene.image_h);
        Var fv = tape.leaf(feat);
        ConvLevelOutput o = conv_forward(tape, head, hv, fv);
        auto to_map = [&](Var v) {
            Shape s = tape.shape(v);
            DenseMap m(s.h, s.w, s.c);
            auto vals = tape.val(v);
            m.values.assign(vals.begin(), vals.end());
            return m;
        };
        out.confidence[l] = to_map(o.conf);
        out.centerness[l] = to_map(o.ctr);
        out.center_coord[l] = to_map(o.root);
        out.joint_offsets[l] = to_map(o.joint);
        out.log_sigma[l] = to_map(o.sigma);
    }
    return out;
}

std::vector<Detection> run_inference(const PredictionMaps& maps, const LevelConfig& levels,
                                     const CameraIntrinsics& intr, const EvalConfig& eval,
                                     const UpdateConfig& update,
                                     std::span<const SamplerMlp> samplers, int root_index) {
    std::vector<Detection> all;
    for (int l = 0; l < levels.levels(); ++l) {
        std::vector<PixelScore> pos =
            extract_positives(maps.confidence[l], maps.centerness[l], eval.threshold);
        if (pos.empty()) continue;

        const DenseMap& joff = maps.joint_offsets[l];
        const DenseMap* source = &joff;
        DenseMap refined;
        if (update.n_layers > 0) {
            refined = joff;
            int K = joff.channels / 3;
            for (const PixelScore& ps : pos) {
                for (int k = 0; k < K; ++k) {
                    Vec3 u = stack_updates_plain(joff, k, ps.x, ps.y, update, samplers);
                    refined.at(ps.x, ps.y, 3 * k + 0) = u[0];
                    refined.at(ps.x, ps.y, 3 * k + 1) = u[1];
                    refined.at(ps.x, ps.y, 3 * k + 2) = u[2];
                }
            }
            source = &refined;
        }
        std::vector<Detection> dets = reconstruct(pos, maps.center_coord[l], *source,
                                                  levels.strides[l], intr, l, root_index);
        all.insert(all.end(), dets.begin(), dets.end());
    }
    return pose_nms(std::move(all), eval.nms_radius_mm);
}

Report evaluate_model(const TrainedModel& model, const std::vector<Scene>& scenes) {
    const RunConfig& cfg = model.cfg;
    Report report;
    double mpjpe_sum = 0;
    int mpjpe_scenes = 0;
    for (int si = 0; si < int(scenes.size()); ++si) {
        const Scene& scene = scenes[si];
        PredictionMaps maps = predict(model, scene, si);
        std::vector<Detection> dets =
            run_inference(maps, cfg.levels, scene.intrinsics, cfg.eval, cfg.update,
                          model.samplers, model.root_index);

        std::vector<CameraPose3D> preds;
        preds.reserve(dets.size());
        for (const Detection& d : dets) preds.push_back(d.camera_pose);

        SceneMetrics m;
        m.scene_id = si;
        m.detections = int(dets.size());
        m.gt_persons = int(scene.camera_persons.size());
        MatchResult match = match_poses(preds, scene.camera_persons, model.root_index,
                                        cfg.eval.match_gate_mm);
        m.matched = int(match.pairs.size());
        if (!match.pairs.empty()) {
            double sum = 0;
            for (auto [p, g] : match.pairs)
                sum += mpjpe(preds[p], scene.camera_persons[g], model.root_index, true);
            m.mpjpe_mm = sum / match.pairs.size();
            mpjpe_sum += m.mpjpe_mm;
            ++mpjpe_scenes;
        } else {
            m.mpjpe_mm = std::numeric_limits<double>::quiet_NaN();
        }
        m.pck_rel = pck(preds, scene.camera_persons, match, model.root_index,
                        PckMode::Relative, cfg.eval.pck_threshold_mm);
        m.pck_abs = pck(preds, scene.camera_persons, match, model.root_index,
                        PckMode::Absolute, cfg.eval.pck_threshold_mm);
        report.mean_pck_rel += m.pck_rel;
        report.mean_pck_abs += m.pck_abs;
        report.scenes.push_back(m);
    }
    if (!report.scenes.empty()) {
        report.mean_pck_rel /= report.scenes.size();
        report.mean_pck_abs /= report.scenes.size();
    }
    report.mean_mpjpe = mpjpe_scenes > 0 ? mpjpe_sum / mpjpe_scenes
                                         : std::numeric_limits<double>::quiet_NaN();
    return report;
}

DistributionTable export_distribution(const FlowModel& flow, double z_min, double z_max,
                                      double step, double z3_half, int z3_intervals) {
    DistributionTable table;
    table.z_min = z_min;
    table.z_max = z_max;
    table.step = step;
    table.n = int(std::round((z_max - z_min) / step)) + 1;
    table.density.assign(std::size_t(table.n) * table.n, 0.0);
    if (z3_intervals % 2 != 0) ++z3_intervals;  // Simpson needs even intervals
    double h3 = 2.0 * z3_half / z3_intervals;

    for (int iy = 0; iy < table.n; ++iy) {
        double z2 = z_min + iy * step;
        for (int ix = 0; ix < table.n; ++ix) {
            double z1 = z_min + ix * step;
            double acc = 0.0;
            for (int i = 0; i <= z3_intervals; ++i) {
                double z3 = -z3_half + i * h3;
                double w = (i == 0 || i == z3_intervals) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
                acc += w * std::exp(flow.log_prob({z1, z2, z3}));
            }
            table.density[std::size_t(iy) * table.n + ix] = acc * h3 / 3.0;
        }
    }
    return table;
}

}  // namespace das
