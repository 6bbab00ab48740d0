#include "wmsteer/analytic.hpp"

namespace wmsteer {

AnalyticGaussianScore::AnalyticGaussianScore(NoiseSchedule schedule, Tensor mean, Tensor var)
    : schedule_(schedule), mean_(std::move(mean)), var_(std::move(var)) {
    require(mean_.same_shape(var_), "AnalyticGaussianScore: mean/var shape mismatch");
    for (std::int64_t i = 0; i < var_.numel(); ++i)
        require(var_[i] > 0.0, "AnalyticGaussianScore: variances must be positive");
}

AnalyticGaussianScore::AnalyticGaussianScore(NoiseSchedule schedule, std::int64_t d, double mean,
                                             double var)
    : AnalyticGaussianScore(schedule, Tensor(Shape{d}, mean), Tensor(Shape{d}, var)) {}

Estimate AnalyticGaussianScore::estimate(const Tensor& x, double t) {
    require(x.same_shape(mean_), "AnalyticGaussianScore: sample shape mismatch");
    const double a = schedule_.alpha(t);
    const double s2 = schedule_.sigma(t) * schedule_.sigma(t);
    Estimate est;
    est.x0 = Tensor(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double denom = a * a * var_[i] + s2;
        est.x0[i] = mean_[i] + a * var_[i] * (x[i] - a * mean_[i]) / denom;
    }
    return est;
}

Tensor AnalyticGaussianScore::score(const Tensor& x, double t) {
    require(x.same_shape(mean_), "AnalyticGaussianScore: sample shape mismatch");
    const double a = schedule_.alpha(t);
    const double s2 = schedule_.sigma(t) * schedule_.sigma(t);
    Tensor sc(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i)
        sc[i] = -(x[i] - a * mean_[i]) / (a * a * var_[i] + s2);
    return sc;
}

Tensor AnalyticGaussianScore::x0_pullback(const Tensor& x, double t, const Tensor& v) {
    require(v.same_shape(mean_), "x0_pullback: cotangent shape mismatch");
    (void)x;
    const double a = schedule_.alpha(t);
    const double s2 = schedule_.sigma(t) * schedule_.sigma(t);
    Tensor g(v.shape());
    for (std::int64_t i = 0; i < g.numel(); ++i)
        g[i] = v[i] * a * var_[i] / (a * a * var_[i] + s2);
    return g;
}

double LinearReward::value(const Tensor& x0) {
    require(x0.same_shape(w_), "LinearReward: shape mismatch");
    double r = c_;
    for (std::int64_t i = 0; i < x0.numel(); ++i) r += w_[i] * x0[i];
    return r;
}

}  // namespace wmsteer
