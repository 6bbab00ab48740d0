#pragma once

/* Score-model interface and the reverse-time integrator.
 *
 * A ScoreModel exposes the denoiser through two equivalent views:
 *   - estimate(x,t): posterior-mean/noise estimates (always finite, each
 *     implementation picks its numerically stable parameterization);
 *   - score(x,t): the score of the noised marginal, derived from estimate.
 * x0_pullback is the vector-Jacobian product of the posterior mean, which is
 * what gradient guidance needs:  d<v, x0_hat(x,t)> / dx.
 */

#include <cstdint>
#include <functional>

#include "wmsteer/schedule.hpp"
#include "wmsteer/tensor.hpp"

namespace wmsteer {

struct Estimate {
    Tensor x0;  // posterior mean E[x0 | x_t]
};

class ScoreModel {
public:
    virtual ~ScoreModel() = default;

    virtual Shape sample_shape() const = 0;
    virtual const NoiseSchedule& schedule() const = 0;

    virtual Estimate estimate(const Tensor& x, double t) = 0;

    // Default: score = (alpha * x0_hat - x) / sigma^2.
    virtual Tensor score(const Tensor& x, double t);

    // VJP of the posterior mean; required for gradient guidance.
    virtual Tensor x0_pullback(const Tensor& x, double t, const Tensor& v);
};

struct SolveOptions {
    std::int64_t steps = 50;
    StepMode mode = StepMode::Ode;
    bool clamp_x0 = false;  // clamp posterior mean to [0,1] (pixel models)
};

// Extra score added at (x, t); return empty tensor for "no change".
using ScoreHook = std::function<Tensor(const Tensor& x, double t, std::int64_t step)>;
// Observer called after every transition (and once for the initial state).
using StepObserver = std::function<void(const DenoisingState&)>;

struct SolveStats {
    std::int64_t score_evals = 0;
    std::int64_t hook_evals = 0;
};

/* Integrates the reverse process from t=1 (pure noise drawn from rng) to
 * t=0 on a uniform grid.  The hook, when given, adds to the model score
 * before the posterior mean is re-formed (gradient guidance plugs in here).
 * Throws wmsteer::Error if the trajectory diverges. */
Tensor solve(ScoreModel& model, const SolveOptions& opt, Rng& rng, SolveStats* stats = nullptr,
             const ScoreHook& hook = nullptr, const StepObserver& observer = nullptr);

// Single solver transition used by the particle samplers: given x at t_hi,
// produce the state at t_lo.  x0_hat is recomputed from the model estimate
// plus optional extra score.
Tensor solve_transition(ScoreModel& model, const Tensor& x, double t_hi, double t_lo,
                        const SolveOptions& opt, Rng* rng, SolveStats* stats,
                        const ScoreHook& hook, std::int64_t step_index);

// Posterior mean at (x,t) under the model with options applied (clamping).
Tensor posterior_mean(ScoreModel& model, const Tensor& x, double t, const SolveOptions& opt,
                      SolveStats* stats);

}  // namespace wmsteer
