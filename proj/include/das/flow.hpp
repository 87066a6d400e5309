#pragma once

#include <array>
#include <vector>

#include "das/rng.hpp"
#include "das/tape.hpp"

namespace das {

using Vec3 = std::array<double, 3>;

// Trainable parameter block: a shaped buffer of doubles living outside any
// tape. Training binds these as leaves each step and applies gradients back.
// lr_scale, when non-empty, multiplies the step size per entry (used for
// raw-mm depth channels whose natural scale dwarfs grid-unit channels).
struct Param {
    Shape shape;
    std::vector<double> value;
    std::vector<double> lr_scale;

    Param() = default;
    explicit Param(Shape s, double fill = 0.0)
        : shape(s), value(std::size_t(s.size()), fill) {}
};

enum class BaseDist { Gaussian, Laplace };

// Per-dimension independent base density, log pdf at z.
double base_log_prob(BaseDist kind, const Vec3& z);
double base_log_prob1(BaseDist kind, double z);
Vec3 base_sample(BaseDist kind, Rng& rng);

// One affine coupling layer: dims in `keep` pass through and condition two
// one-hidden-layer nets producing log-scale and translation for the dims in
// `transform`. The raw scale is tanh-bounded by s_max. Jacobian is
// triangular; log|det| is the sum of the bounded scales.
struct CouplingLayer {
    std::vector<int> keep;
    std::vector<int> transform;
    // scale net
    Param w1s, b1s, w2s, b2s;
    // translate net
    Param w1t, b1t, w2t, b2t;
};

struct FlowVars;  // per-tape parameter binding, defined below

// Coupling-layer normalizing flow over 3D vectors with exact densities.
// forward maps base samples z to data x; inverse goes back. The plain
// double path serves inference/quadrature; build_* mirrors it on a tape
// for training, with identical arithmetic ordering.
class FlowModel {
public:
    BaseDist base = BaseDist::Gaussian;
    double s_max = 2.0;
    int hidden = 16;
    std::vector<CouplingLayer> layers;

    // Identity-initialized flow (zero output weights); hidden weights get
    // small random values so gradients are not stuck at a saddle.
    static FlowModel make(int n_layers, int hidden, double s_max, BaseDist base,
                          Rng& rng, double hidden_init_sd = 0.3);
    // Fully randomized parameters (for normalization / invertibility tests).
    void randomize(Rng& rng, double hidden_sd, double out_sd);

    Vec3 forward(const Vec3& z, double* log_det = nullptr) const;
    Vec3 inverse(const Vec3& x, double* log_det = nullptr) const;
    double log_prob(const Vec3& x) const;
    Vec3 sample(Rng& rng) const;

    // Tape path. bind() creates leaves for every parameter on the tape and
    // records them in FlowVars for gradient readback.
    FlowVars bind(Tape& tape);
    Var build_log_prob(Tape& tape, Var x, const FlowVars& vars) const;

    std::vector<Param*> params();
    std::vector<const Param*> params() const;

private:
    // Evaluates one net (W2 act(W1 m + b1) + b2) on the kept dims.
    void net_eval(const Param& w1, const Param& b1, const Param& w2, const Param& b2,
                  const double* m, int nm, double* out, int nout) const;
};

struct FlowVars {
    struct LayerVars {
        Var w1s, b1s, w2s, b2s;
        Var w1t, b1t, w2t, b2t;
    };
    std::vector<LayerVars> layers;
};

}  // namespace das
