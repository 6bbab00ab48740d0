#include "wmsteer/solver.hpp"

#include <cmath>

#include "wmsteer/common.hpp"

namespace wmsteer {

Tensor ScoreModel::score(const Tensor& x, double t) {
    const NoiseSchedule& s = schedule();
    const double a = s.alpha(t);
    const double s2 = s.sigma(t) * s.sigma(t);
    require(s2 > 0.0, "score: sigma(t)=0 at t=" + std::to_string(t));
    Estimate est = estimate(x, t);
    Tensor sc(x.shape());
    for (std::int64_t i = 0; i < sc.numel(); ++i) sc[i] = (a * est.x0[i] - x[i]) / s2;
    return sc;
}

Tensor ScoreModel::x0_pullback(const Tensor&, double, const Tensor&) {
    fail("this score model does not implement x0_pullback (gradient guidance unsupported)");
}

namespace {

void apply_clamp(Tensor& x0) {
    for (std::int64_t i = 0; i < x0.numel(); ++i) {
        if (x0[i] < 0.0) x0[i] = 0.0;
        if (x0[i] > 1.0) x0[i] = 1.0;
    }
}

}  // namespace

Tensor posterior_mean(ScoreModel& model, const Tensor& x, double t, const SolveOptions& opt,
                      SolveStats* stats) {
    Estimate est = model.estimate(x, t);
    if (stats) stats->score_evals += 1;
    if (opt.clamp_x0) apply_clamp(est.x0);
    return std::move(est.x0);
}

Tensor solve_transition(ScoreModel& model, const Tensor& x, double t_hi, double t_lo,
                        const SolveOptions& opt, Rng* rng, SolveStats* stats,
                        const ScoreHook& hook, std::int64_t step_index) {
    Estimate est = model.estimate(x, t_hi);
    if (stats) stats->score_evals += 1;

    Tensor x0 = std::move(est.x0);
    if (hook) {
        Tensor extra = hook(x, t_hi, step_index);
        if (extra.numel() != 0) {
            require(extra.same_shape(x), "score hook returned shape " + shape_str(extra.shape()) +
                                             ", expected " + shape_str(x.shape()));
            if (stats) stats->hook_evals += 1;
            // Re-form the posterior mean from the modified score:
            // x0 = (x + sigma^2 (score + extra)) / alpha = x0_base + sigma^2/alpha * extra.
            const NoiseSchedule& s = model.schedule();
            const double a = s.alpha(t_hi);
            const double s2 = s.sigma(t_hi) * s.sigma(t_hi);
            require(std::abs(a) >= 1e-8, "score hook unusable at t=" + std::to_string(t_hi) +
                                             ": alpha(t) below 1e-8");
            const double c = s2 / a;
            for (std::int64_t i = 0; i < x0.numel(); ++i) x0[i] += c * extra[i];
        }
    }
    if (opt.clamp_x0) apply_clamp(x0);
    return reverse_step(model.schedule(), x, t_hi, t_lo, x0, opt.mode, rng);
}

Tensor solve(ScoreModel& model, const SolveOptions& opt, Rng& rng, SolveStats* stats,
             const ScoreHook& hook, const StepObserver& observer) {
    require(opt.steps >= 1, "solve: need at least one step");
    DenoisingState st;
    st.x = normal_tensor(model.sample_shape(), rng);
    st.t = 1.0;
    st.step = 0;
    if (observer) observer(st);

    const std::int64_t n = opt.steps;
    for (std::int64_t k = 0; k < n; ++k) {
        const double t_hi = 1.0 - static_cast<double>(k) / static_cast<double>(n);
        const double t_lo = 1.0 - static_cast<double>(k + 1) / static_cast<double>(n);
        st.x = solve_transition(model, st.x, t_hi, t_lo, opt, &rng, stats, hook, k);
        st.t = t_lo;
        st.step = k + 1;
        if (observer) observer(st);
    }
    return st.x;
}

}  // namespace wmsteer
