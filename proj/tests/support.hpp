#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "das/flow.hpp"
#include "das/tape.hpp"

namespace das::testing {

// Central finite-difference gradient check. The builder receives a tape and
// the current parameter set and must return the scalar output var; analytic
// gradients come from one backward pass, numeric ones from re-running the
// forward with perturbed parameters. Returns the max relative error
// (|analytic - numeric| / max(1e-8, |analytic| + |numeric|)) over all
// parameter entries whose numeric gradient is at least `min_grad`.
struct FdCheck {
    double step = 1e-5;
    double min_grad = 1e-10;

    double max_rel_error(
        std::vector<Param>& params,
        const std::function<Var(Tape&, std::vector<Var>&)>& builder) const {
        auto forward = [&](double* out_value, Tape** out_tape,
                           std::vector<Var>* out_vars) {
            static thread_local Tape tape;
            tape.clear();
            std::vector<Var> vars;
            vars.reserve(params.size());
            for (Param& p : params) vars.push_back(tape.leaf(p.shape, p.value));
            Var y = builder(tape, vars);
            if (out_value) *out_value = tape.val1(y);
            if (out_tape) *out_tape = &tape;
            if (out_vars) *out_vars = vars;
            return y;
        };

        Tape* tape = nullptr;
        std::vector<Var> vars;
        Var y = forward(nullptr, &tape, &vars);
        tape->zero_grad();
        tape->backward(y);
        std::vector<std::vector<double>> analytic;
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto g = tape->grad(vars[i]);
            analytic.emplace_back(g.begin(), g.end());
        }

        double worst = 0.0;
        for (std::size_t i = 0; i < params.size(); ++i) {
            for (std::size_t j = 0; j < params[i].value.size(); ++j) {
                double saved = params[i].value[j];
                params[i].value[j] = saved + step;
                double up;
                forward(&up, nullptr, nullptr);
                params[i].value[j] = saved - step;
                double down;
                forward(&down, nullptr, nullptr);
                params[i].value[j] = saved;
                double numeric = (up - down) / (2.0 * step);
                double a = analytic[i][j];
                if (std::abs(numeric) < min_grad && std::abs(a) < min_grad) continue;
                double rel = std::abs(a - numeric) /
                             std::max(1e-8, std::abs(a) + std::abs(numeric));
                worst = std::max(worst, rel);
            }
        }
        return worst;
    }
};

}  // namespace das::testing
