#include "das/rupdate.hpp"

#include <cmath>
#include <string>

#include "das/errors.hpp"

namespace das {

namespace {

void check_estimate_finite(const double* u, double px, double py) {
    if (!std::isfinite(u[0]) || !std::isfinite(u[1]) || !std::isfinite(u[2]))
        throw NumericalError("offset update at pixel (" + std::to_string(px) + ", " +
                             std::to_string(py) + "): non-finite offset estimate");
}

constexpr int kXY[2] = {0, 1};

}  // namespace

SamplerMlp SamplerMlp::make(int M, int hidden, Rng& rng) {
    SamplerMlp s;
    s.M = M;
    s.hidden = hidden;
    s.w1 = Param(Shape{1, 1, hidden * 3});
    s.b1 = Param(Shape{1, 1, hidden});
    s.w_disp = Param(Shape{1, 1, 2 * M * hidden});
    s.b_disp = Param(Shape{1, 1, 2 * M});
    s.w_logit = Param(Shape{1, 1, M * hidden});
    s.b_logit = Param(Shape{1, 1, M});
    for (double& v : s.w1.value) v = rng.normal(0.0, 0.3);
    for (int m = 0; m < M; ++m) {
        double ang = 2.0 * M_PI * m / M;
        s.b_disp.value[2 * m + 0] = std::cos(ang);
        s.b_disp.value[2 * m + 1] = std::sin(ang);
    }
    return s;
}

void SamplerMlp::eval(const Vec3& u, double* disp, double* probs) const {
    if (hidden > 128) throw ConfigError("sampler: hidden width capped at 128");
    double h[128];
    for (int r = 0; r < hidden; ++r) {
        double s = b1.value[r];
        for (int i = 0; i < 3; ++i) s += w1.value[std::size_t(r) * 3 + i] * u[i];
        h[r] = std::tanh(s);
    }
    for (int r = 0; r < 2 * M; ++r) {
        double s = b_disp.value[r];
        for (int i = 0; i < hidden; ++i)
            s += w_disp.value[std::size_t(r) * hidden + i] * h[i];
        disp[r] = s;
    }
    // logits -> softmax, max-subtracted as on the tape
    double mx = 0.0;
    for (int r = 0; r < M; ++r) {
        double s = b_logit.value[r];
        for (int i = 0; i < hidden; ++i)
            s += w_logit.value[std::size_t(r) * hidden + i] * h[i];
        probs[r] = s;
        mx = r == 0 ? s : std::max(mx, s);
    }
    double den = 0.0;
    for (int r = 0; r < M; ++r) {
        probs[r] = std::exp(probs[r] - mx);
        den += probs[r];
    }
    for (int r = 0; r < M; ++r) probs[r] /= den;
}

std::vector<Param*> SamplerMlp::params() {
    return {&w1, &b1, &w_disp, &b_disp, &w_logit, &b_logit};
}

SamplerVars bind_sampler(Tape& tape, SamplerMlp& mlp) {
    SamplerVars v;
    v.w1 = tape.leaf(mlp.w1.shape, mlp.w1.value);
    v.b1 = tape.leaf(mlp.b1.shape, mlp.b1.value);
    v.w_disp = tape.leaf(mlp.w_disp.shape, mlp.w_disp.value);
    v.b_disp = tape.leaf(mlp.b_disp.shape, mlp.b_disp.value);
    v.w_logit = tape.leaf(mlp.w_logit.shape, mlp.w_logit.value);
    v.b_logit = tape.leaf(mlp.b_logit.shape, mlp.b_logit.value);
    return v;
}

Var recursive_step(Tape& tape, Var joint_map, int k, double px, double py, Var u) {
    check_estimate_finite(tape.val(u).data(), px, py);
    double p[2] = {px, py};
    Var t = tape.add(tape.leaf(Shape{1, 1, 2}, p), tape.gather(u, kXY));
    Var local = tape.bilinear(joint_map, t, 3 * k, 3 * k + 3);
    return tape.add(u, local);
}

Vec3 recursive_step_plain(const DenseMap& joint_map, int k, double px, double py,
                          const Vec3& u) {
    check_estimate_finite(u.data(), px, py);
    double local[3];
    bilinear_sample(joint_map, px + u[0], py + u[1], 3 * k, 3 * k + 3, local);
    return {u[0] + local[0], u[1] + local[1], u[2] + local[2]};
}

Var multi_source_step(Tape& tape, Var joint_map, int k, double px, double py, Var u,
                      const SamplerMlp& gen, const SamplerVars& vars) {
    check_estimate_finite(tape.val(u).data(), px, py);
    Var h = tape.tanh(tape.linear(vars.w1, vars.b1, u));
    Var disp = tape.linear(vars.w_disp, vars.b_disp, h);
    Var probs = tape.softmax(tape.linear(vars.w_logit, vars.b_logit, h));

    double p[2] = {px, py};
    Var t = tape.add(tape.leaf(Shape{1, 1, 2}, p), tape.gather(u, kXY));

    std::vector<Var> terms;
    terms.reserve(gen.M);
    for (int m = 0; m < gen.M; ++m) {
        int dm_idx[2] = {2 * m, 2 * m + 1};
        Var dm = tape.gather(disp, dm_idx);
        Var tm = tape.add(t, dm);
        Var sampled = tape.bilinear(joint_map, tm, 3 * k, 3 * k + 3);
        Var lifted = tape.scatter(dm, kXY, 3);
        int pm_idx[1] = {m};
        terms.push_back(tape.mul(tape.add(lifted, sampled), tape.gather(probs, pm_idx)));
    }
    Var local = tape.addn(terms);
    return tape.add(u, local);
}

Vec3 multi_source_step_plain(const DenseMap& joint_map, int k, double px, double py,
                             const Vec3& u, const SamplerMlp& gen) {
    check_estimate_finite(u.data(), px, py);
    std::vector<double> disp(2 * gen.M), probs(gen.M);
    gen.eval(u, disp.data(), probs.data());

    double tx = px + u[0], ty = py + u[1];
    Vec3 local{0.0, 0.0, 0.0};
    for (int m = 0; m < gen.M; ++m) {
        double sampled[3];
        bilinear_sample(joint_map, tx + disp[2 * m], ty + disp[2 * m + 1], 3 * k,
                        3 * k + 3, sampled);
        local[0] += (disp[2 * m] + sampled[0]) * probs[m];
        local[1] += (disp[2 * m + 1] + sampled[1]) * probs[m];
        local[2] += (0.0 + sampled[2]) * probs[m];
    }
    return {u[0] + local[0], u[1] + local[1], u[2] + local[2]};
}

Var stack_updates(Tape& tape, Var joint_map, int k, int px, int py,
                  const UpdateConfig& cfg, std::span<const SamplerMlp> samplers,
                  std::span<const SamplerVars> svars) {
    Var u = tape.pixel(joint_map, px, py, 3 * k, 3 * k + 3);
    for (int n = 0; n < cfg.n_layers; ++n) {
        if (cfg.mode == UpdateMode::Recursive) {
            u = recursive_step(tape, joint_map, k, px, py, u);
        } else {
            u = multi_source_step(tape, joint_map, k, px, py, u, samplers[n], svars[n]);
        }
    }
    return u;
}

Vec3 stack_updates_plain(const DenseMap& joint_map, int k, int px, int py,
                         const UpdateConfig& cfg, std::span<const SamplerMlp> samplers) {
    Vec3 u{joint_map.at(px, py, 3 * k), joint_map.at(px, py, 3 * k + 1),
           joint_map.at(px, py, 3 * k + 2)};
    for (int n = 0; n < cfg.n_layers; ++n) {
        if (cfg.mode == UpdateMode::Recursive) {
            u = recursive_step_plain(joint_map, k, px, py, u);
        } else {
            u = multi_source_step_plain(joint_map, k, px, py, u, samplers[n]);
        }
    }
    return u;
}

}  // namespace das
