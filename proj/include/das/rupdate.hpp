#pragma once

#include <span>
#include <vector>

#include "das/densemap.hpp"
#include "das/flow.hpp"
#include "das/rng.hpp"
#include "das/tape.hpp"

namespace das {

enum class UpdateMode { Recursive, MultiSource };

struct UpdateConfig {
    int n_layers = 3;
    UpdateMode mode = UpdateMode::Recursive;
    int M = 4;
    int sampler_hidden = 16;
};

// Sample-source generator: a one-hidden-layer net mapping the current 3D
// offset estimate to M 2D displacements and M logits (P_D via softmax).
struct SamplerMlp {
    int M = 4;
    int hidden = 16;
    Param w1, b1;           // 3 -> hidden
    Param w_disp, b_disp;   // hidden -> 2M
    Param w_logit, b_logit; // hidden -> M

    // Zero output weights; displacement biases start on the unit circle
    // (the four axis neighbors when M == 4), logits uniform.
    static SamplerMlp make(int M, int hidden, Rng& rng);

    // disp: 2M entries (x, y per source); probs: M softmax weights.
    void eval(const Vec3& u, double* disp, double* probs) const;

    std::vector<Param*> params();
};

struct SamplerVars {
    Var w1, b1, w_disp, b_disp, w_logit, b_logit;
};

SamplerVars bind_sampler(Tape& tape, SamplerMlp& mlp);

// One recursive refinement at query pixel p for joint k: the estimate u is
// incremented by the map's own prediction sampled at p + u.xy. Only the 2D
// components index the grid; depth rides along in the sampled value.
Var recursive_step(Tape& tape, Var joint_map, int k, double px, double py, Var u);
Vec3 recursive_step_plain(const DenseMap& joint_map, int k, double px, double py,
                          const Vec3& u);

// Multi-source refinement: an expectation over M displaced local predictions
// weighted by the generator's probabilities. With M = 1 and zero displacement
// this reduces exactly to recursive_step.
Var multi_source_step(Tape& tape, Var joint_map, int k, double px, double py, Var u,
                      const SamplerMlp& gen, const SamplerVars& vars);
Vec3 multi_source_step_plain(const DenseMap& joint_map, int k, double px, double py,
                             const Vec3& u, const SamplerMlp& gen);

// n_layers update steps starting from the raw map value at (px, py).
// samplers holds one generator per layer in multi-source mode.
Var stack_updates(Tape& tape, Var joint_map, int k, int px, int py,
                  const UpdateConfig& cfg, std::span<const SamplerMlp> samplers,
                  std::span<const SamplerVars> svars);
Vec3 stack_updates_plain(const DenseMap& joint_map, int k, int px, int py,
                         const UpdateConfig& cfg, std::span<const SamplerMlp> samplers);

}  // namespace das
