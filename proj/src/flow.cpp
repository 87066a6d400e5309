#include "das/flow.hpp"

#include <cmath>

#include "das/errors.hpp"

namespace das {

namespace {
constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * ln(2*pi)
constexpr double kLog2 = 0.6931471805599453;
}  // namespace

double base_log_prob1(BaseDist kind, double z) {
    if (kind == BaseDist::Gaussian) return -0.5 * z * z - kHalfLog2Pi;
    return -std::abs(z) - kLog2;
}

double base_log_prob(BaseDist kind, const Vec3& z) {
    return base_log_prob1(kind, z[0]) + base_log_prob1(kind, z[1]) +
           base_log_prob1(kind, z[2]);
}

Vec3 base_sample(BaseDist kind, Rng& rng) {
    Vec3 z;
    for (double& v : z) v = kind == BaseDist::Gaussian ? rng.normal() : rng.laplace();
    return z;
}

FlowModel FlowModel::make(int n_layers, int hidden, double s_max, BaseDist base,
                          Rng& rng, double hidden_init_sd) {
    FlowModel fm;
    fm.base = base;
    fm.s_max = s_max;
    fm.hidden = hidden;
    fm.layers.resize(n_layers);
    for (int i = 0; i < n_layers; ++i) {
        CouplingLayer& cl = fm.layers[i];
        if (i % 2 == 0) {
            cl.keep = {0, 1};
            cl.transform = {2};
        } else {
            cl.keep = {2};
            cl.transform = {0, 1};
        }
        int nk = int(cl.keep.size());
        int nt = int(cl.transform.size());
        auto init_net = [&](Param& w1, Param& b1, Param& w2, Param& b2) {
            w1 = Param(Shape{1, 1, hidden * nk});
            b1 = Param(Shape{1, 1, hidden});
            w2 = Param(Shape{1, 1, nt * hidden});
            b2 = Param(Shape{1, 1, nt});
            for (double& v : w1.value) v = rng.normal(0.0, hidden_init_sd);
            // zero output layer: the flow starts as the identity
        };
        init_net(cl.w1s, cl.b1s, cl.w2s, cl.b2s);
        init_net(cl.w1t, cl.b1t, cl.w2t, cl.b2t);
    }
    return fm;
}

void FlowModel::randomize(Rng& rng, double hidden_sd, double out_sd) {
    for (CouplingLayer& cl : layers) {
        for (double& v : cl.w1s.value) v = rng.normal(0.0, hidden_sd);
        for (double& v : cl.b1s.value) v = rng.normal(0.0, 0.05);
        for (double& v : cl.w2s.value) v = rng.normal(0.0, out_sd);
        for (double& v : cl.b2s.value) v = rng.normal(0.0, 0.02);
        for (double& v : cl.w1t.value) v = rng.normal(0.0, hidden_sd);
        for (double& v : cl.b1t.value) v = rng.normal(0.0, 0.05);
        for (double& v : cl.w2t.value) v = rng.normal(0.0, out_sd);
        for (double& v : cl.b2t.value) v = rng.normal(0.0, 0.02);
    }
}

void FlowModel::net_eval(const Param& w1, const Param& b1, const Param& w2,
                         const Param& b2, const double* m, int nm, double* out,
                         int nout) const {
    if (hidden > 128) throw ConfigError("flow: hidden width capped at 128");
    double h[128];
    for (int r = 0; r < hidden; ++r) {
        double s = b1.value[r];
        for (int i = 0; i < nm; ++i) s += w1.value[std::size_t(r) * nm + i] * m[i];
        h[r] = std::tanh(s);
    }
    for (int r = 0; r < nout; ++r) {
        double s = b2.value[r];
        for (int i = 0; i < hidden; ++i) s += w2.value[std::size_t(r) * hidden + i] * h[i];
        out[r] = s;
    }
}

Vec3 FlowModel::forward(const Vec3& z, double* log_det) const {
    Vec3 x = z;
    double ld = 0.0;
    for (const CouplingLayer& cl : layers) {
        int nk = int(cl.keep.size());
        int nt = int(cl.transform.size());
        double m[2], s_raw[2], t[2];
        for (int i = 0; i < nk; ++i) m[i] = x[cl.keep[i]];
        net_eval(cl.w1s, cl.b1s, cl.w2s, cl.b2s, m, nk, s_raw, nt);
        net_eval(cl.w1t, cl.b1t, cl.w2t, cl.b2t, m, nk, t, nt);
        for (int i = 0; i < nt; ++i) {
            double s = std::tanh(s_raw[i]) * s_max;
            x[cl.transform[i]] = x[cl.transform[i]] * std::exp(s) + t[i];
            ld += s;
        }
    }
    if (log_det) *log_det = ld;
    return x;
}

Vec3 FlowModel::inverse(const Vec3& x, double* log_det) const {
    Vec3 z = x;
    double ld = 0.0;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
        const CouplingLayer& cl = *it;
        int nk = int(cl.keep.size());
        int nt = int(cl.transform.size());
        double m[2], s_raw[2], t[2];
        for (int i = 0; i < nk; ++i) m[i] = z[cl.keep[i]];
        net_eval(cl.w1s, cl.b1s, cl.w2s, cl.b2s, m, nk, s_raw, nt);
        net_eval(cl.w1t, cl.b1t, cl.w2t, cl.b2t, m, nk, t, nt);
        for (int i = 0; i < nt; ++i) {
            double s = std::tanh(s_raw[i]) * s_max;
            z[cl.transform[i]] = (z[cl.transform[i]] - t[i]) * std::exp(-s);
            ld -= s;
        }
    }
    if (log_det) *log_det = ld;
    return z;
}

double FlowModel::log_prob(const Vec3& x) const {
    double ld = 0.0;
    Vec3 z = inverse(x, &ld);
    return base_log_prob(base, z) + ld;
}

Vec3 FlowModel::sample(Rng& rng) const {
    Vec3 z = base_sample(base, rng);
    return forward(z);
}

FlowVars FlowModel::bind(Tape& tape) {
    FlowVars fv;
    fv.layers.reserve(layers.size());
    for (CouplingLayer& cl : layers) {
        FlowVars::LayerVars lv;
        lv.w1s = tape.leaf(cl.w1s.shape, cl.w1s.value);
        lv.b1s = tape.leaf(cl.b1s.shape, cl.b1s.value);
        lv.w2s = tape.leaf(cl.w2s.shape, cl.w2s.value);
        lv.b2s = tape.leaf(cl.b2s.shape, cl.b2s.value);
        lv.w1t = tape.leaf(cl.w1t.shape, cl.w1t.value);
        lv.b1t = tape.leaf(cl.b1t.shape, cl.b1t.value);
        lv.w2t = tape.leaf(cl.w2t.shape, cl.w2t.value);
        lv.b2t = tape.leaf(cl.b2t.shape, cl.b2t.value);
        fv.layers.push_back(lv);
    }
    return fv;
}

Var FlowModel::build_log_prob(Tape& tape, Var x, const FlowVars& vars) const {
    Var cur = x;
    std::vector<Var> log_dets;
    for (int li = int(layers.size()) - 1; li >= 0; --li) {
        const CouplingLayer& cl = layers[li];
        const FlowVars::LayerVars& lv = vars.layers[li];
        Var m = tape.gather(cur, cl.keep);
        Var u = tape.gather(cur, cl.transform);
        Var hs = tape.tanh(tape.linear(lv.w1s, lv.b1s, m));
        Var s = tape.mul_const(tape.tanh(tape.linear(lv.w2s, lv.b2s, hs)), s_max);
        Var ht = tape.tanh(tape.linear(lv.w1t, lv.b1t, m));
        Var t = tape.linear(lv.w2t, lv.b2t, ht);
        Var zu = tape.mul(tape.sub(u, t), tape.exp(tape.neg(s)));
        cur = tape.add(tape.scatter(m, cl.keep, 3), tape.scatter(zu, cl.transform, 3));
        log_dets.push_back(tape.neg(tape.sum(s)));
    }
    Var lp;
    if (base == BaseDist::Gaussian) {
        lp = tape.add_const(tape.mul_const(tape.sum(tape.mul(cur, cur)), -0.5),
                            -3.0 * kHalfLog2Pi);
    } else {
        lp = tape.add_const(tape.neg(tape.sum(tape.abs(cur))), -3.0 * kLog2);
    }
    if (!log_dets.empty()) {
        log_dets.push_back(lp);
        lp = tape.addn(log_dets);
    }
    return lp;
}

std::vector<Param*> FlowModel::params() {
    std::vector<Param*> out;
    for (CouplingLayer& cl : layers) {
        out.push_back(&cl.w1s);
        out.push_back(&cl.b1s);
        out.push_back(&cl.w2s);
        out.push_back(&cl.b2s);
        out.push_back(&cl.w1t);
        out.push_back(&cl.b1t);
        out.push_back(&cl.w2t);
        out.push_back(&cl.b2t);
    }
    return out;
}

std::vector<const Param*> FlowModel::params() const {
    std::vector<const Param*> out;
    for (const CouplingLayer& cl : layers) {
        out.push_back(&cl.w1s);
        out.push_back(&cl.b1s);
        out.push_back(&cl.w2s);
        out.push_back(&cl.b2s);
        out.push_back(&cl.w1t);
        out.push_back(&cl.b1t);
        out.push_back(&cl.w2t);
        out.push_back(&cl.b2t);
    }
    return out;
}

}  // namespace das
