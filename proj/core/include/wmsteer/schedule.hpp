#pragma once

/* Noise schedules for the diffusion/flow forward process
 *   x_t = alpha(t) * x0 + sigma(t) * eps,   t in [0,1].
 *
 * Two schedules are provided:
 *   - vp_cosine:  alpha = cos(t*th), sigma = sin(t*th) with th = acos(1e-3),
 *     so alpha(0)=1, sigma(0)=0 and alpha(1)=1e-3 exactly (variance
 *     preserving, terminal state is essentially pure noise but Tweedie
 *     denoising stays well-conditioned).
 *   - rect_flow:  alpha = 1-t, sigma = t (rectified-flow interpolation).
 */

#include <string>

#include "wmsteer/rng.hpp"
#include "wmsteer/tensor.hpp"

namespace wmsteer {

enum class ScheduleKind { VpCosine, RectFlow };

struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::VpCosine;

    double alpha(double t) const;
    double sigma(double t) const;
    double alpha_dot(double t) const;  // d alpha / dt
    double sigma_dot(double t) const;  // d sigma / dt

    static NoiseSchedule vp_cosine() { return {ScheduleKind::VpCosine}; }
    static NoiseSchedule rect_flow() { return {ScheduleKind::RectFlow}; }
    static NoiseSchedule from_name(const std::string& name);
    const char* name() const;
};

// State carried along one reverse-denoising trajectory.
struct DenoisingState {
    Tensor x;
    double t = 1.0;
    std::int64_t step = 0;
};

// x_t = alpha(t) x0 + sigma(t) eps.  eps must have x0's shape.
Tensor forward_noise(const NoiseSchedule& s, const Tensor& x0, double t, const Tensor& eps);

// Tweedie posterior mean E[x0 | x_t] = (x_t + sigma(t)^2 * score) / alpha(t).
// Rejects t where alpha(t) < 1e-8: there the estimator is numerically
// meaningless and callers must use a parameterization-specific estimate.
Tensor tweedie_x0(const NoiseSchedule& s, const Tensor& x_t, double t, const Tensor& score);

enum class StepMode { Ode, Sde };

/* One reverse transition t -> t_next (t_next < t), given the model's
 * posterior-mean estimate x0_hat at (x, t).
 *
 *   Ode: deterministic exponential-integrator step
 *        x' = alpha' x0_hat + (sigma'/sigma) (x - alpha x0_hat).
 *   Sde: ancestral step, sampling the Gaussian posterior
 *        q(x_{t'} | x_t, x0_hat); rng must be non-null.
 *
 * Throws wmsteer::Error if the result is not finite (diverged trajectory). */
Tensor reverse_step(const NoiseSchedule& s, const Tensor& x, double t, double t_next,
                    const Tensor& x0_hat, StepMode mode, Rng* rng);

}  // namespace wmsteer
