#include "wmsteer/schedule.hpp"

#include <cmath>

#include "wmsteer/common.hpp"

namespace wmsteer {

namespace {
// acos(1e-3): puts alpha(1) exactly at the 1e-3 floor.
constexpr double kThetaMax = 1.5697963267948966;

void check_t(double t) {
    require(t >= 0.0 && t <= 1.0, "schedule time t=" + std::to_string(t) + " outside [0,1]");
}
}  // namespace

double NoiseSchedule::alpha(double t) const {
    check_t(t);
    switch (kind) {
        case ScheduleKind::VpCosine: return std::cos(t * kThetaMax);
        case ScheduleKind::RectFlow: return 1.0 - t;
    }
    return 0.0;
}

double NoiseSchedule::sigma(double t) const {
    check_t(t);
    switch (kind) {
        case ScheduleKind::VpCosine: return std::sin(t * kThetaMax);
        case ScheduleKind::RectFlow: return t;
    }
    return 0.0;
}

double NoiseSchedule::alpha_dot(double t) const {
    check_t(t);
    switch (kind) {
        case ScheduleKind::VpCosine: return -kThetaMax * std::sin(t * kThetaMax);
        case ScheduleKind::RectFlow: return -1.0;
    }
    return 0.0;
}

double NoiseSchedule::sigma_dot(double t) const {
    check_t(t);
    switch (kind) {
        case ScheduleKind::VpCosine: return kThetaMax * std::cos(t * kThetaMax);
        case ScheduleKind::RectFlow: return 1.0;
    }
    return 0.0;
}

NoiseSchedule NoiseSchedule::from_name(const std::string& name) {
    if (name == "vp_cosine") return vp_cosine();
    if (name == "rect_flow") return rect_flow();
    fail("unknown noise schedule '" + name + "' (expected vp_cosine or rect_flow)");
}

const char* NoiseSchedule::name() const {
    switch (kind) {
        case ScheduleKind::VpCosine: return "vp_cosine";
        case ScheduleKind::RectFlow: return "rect_flow";
    }
    return "?";
}

Tensor forward_noise(const NoiseSchedule& s, const Tensor& x0, double t, const Tensor& eps) {
    require(x0.same_shape(eps), "forward_noise: x0 " + shape_str(x0.shape()) + " vs eps " +
                                    shape_str(eps.shape()));
    const double a = s.alpha(t), sg = s.sigma(t);
    Tensor x(x0.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = a * x0[i] + sg * eps[i];
    return x;
}

Tensor tweedie_x0(const NoiseSchedule& s, const Tensor& x_t, double t, const Tensor& score) {
    require(x_t.same_shape(score), "tweedie_x0: x_t " + shape_str(x_t.shape()) + " vs score " +
                                       shape_str(score.shape()));
    const double a = s.alpha(t);
    require(std::abs(a) >= 1e-8,
            "tweedie_x0: alpha(t)=" + std::to_string(a) + " at t=" + std::to_string(t) +
                " is too small for the posterior-mean identity");
    const double s2 = s.sigma(t) * s.sigma(t);
    Tensor x0(x_t.shape());
    for (std::int64_t i = 0; i < x0.numel(); ++i) x0[i] = (x_t[i] + s2 * score[i]) / a;
    return x0;
}

Tensor reverse_step(const NoiseSchedule& s, const Tensor& x, double t, double t_next,
                    const Tensor& x0_hat, StepMode mode, Rng* rng) {
    require(x.same_shape(x0_hat), "reverse_step: x " + shape_str(x.shape()) + " vs x0_hat " +
                                      shape_str(x0_hat.shape()));
    require(t_next < t, "reverse_step: t_next must decrease (t=" + std::to_string(t) +
                            ", t_next=" + std::to_string(t_next) + ")");
    const double a = s.alpha(t), sg = s.sigma(t);
    const double an = s.alpha(t_next), sn = s.sigma(t_next);
    require(sg > 0.0, "reverse_step: sigma(t) must be positive");

    Tensor out(x.shape());
    if (mode == StepMode::Ode) {
        const double carry = sn / sg;
        for (std::int64_t i = 0; i < x.numel(); ++i)
            out[i] = an * x0_hat[i] + carry * (x[i] - a * x0_hat[i]);
    } else {
        require(rng != nullptr, "reverse_step: Sde mode needs an rng");
        // q(x_{t'} | x_t, x0): forward transition x_t = r x_{t'} + q eps with
        // r = alpha/alpha', q^2 = sigma^2 - r^2 sigma'^2; combine with the
        // prior q(x_{t'} | x0) to get the Gaussian posterior below.
        require(std::abs(an) > 0.0, "reverse_step: Sde mode requires alpha(t_next) != 0");
        const double r = a / an;
        const double q2 = sg * sg - r * r * sn * sn;
        require(q2 >= -1e-12, "reverse_step: schedule is not noise-increasing on this interval");
        const double s2 = sg * sg;
        const double cx = r * sn * sn / s2;
        const double c0 = an * std::max(q2, 0.0) / s2;
        const double sd = std::sqrt(std::max(q2, 0.0) * sn * sn / s2);
        for (std::int64_t i = 0; i < x.numel(); ++i)
            out[i] = cx * x[i] + c0 * x0_hat[i] + sd * rng->normal();
    }
    if (!out.all_finite())
        fail("reverse_step: non-finite state at t=" + std::to_string(t) + " (diverged trajectory)");
    return out;
}

}  // namespace wmsteer
