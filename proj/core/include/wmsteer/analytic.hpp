#pragma once

/* Closed-form Gaussian score model and linear reward.
 *
 * For a base distribution N(mu, diag(var)) the noised marginal at time t is
 * N(alpha*mu, alpha^2 var + sigma^2), so the score, the posterior mean and
 * its Jacobian all have exact expressions.  Steering a Gaussian base with a
 * linear reward has a known tilted distribution, which makes this pair the
 * ground truth oracle for every sampling scheme. */

#include "wmsteer/reward_oracle.hpp"
#include "wmsteer/solver.hpp"

namespace wmsteer {

class AnalyticGaussianScore final : public ScoreModel {
public:
    AnalyticGaussianScore(NoiseSchedule schedule, Tensor mean, Tensor var);
    // Convenience: d-dimensional isotropic Gaussian.
    AnalyticGaussianScore(NoiseSchedule schedule, std::int64_t d, double mean, double var);

    Shape sample_shape() const override { return mean_.shape(); }
    const NoiseSchedule& schedule() const override { return schedule_; }
    Estimate estimate(const Tensor& x, double t) override;
    Tensor score(const Tensor& x, double t) override;
    Tensor x0_pullback(const Tensor& x, double t, const Tensor& v) override;

    const Tensor& mean() const { return mean_; }
    const Tensor& var() const { return var_; }

private:
    NoiseSchedule schedule_;
    Tensor mean_;
    Tensor var_;
};

// r(x) = <w, x> + c.  Tilting N(mu, V) by exp(lambda r) gives N(mu + lambda V w, V).
class LinearReward final : public RewardOracle {
public:
    LinearReward(Tensor w, double c = 0.0) : w_(std::move(w)), c_(c) {}
    explicit LinearReward(std::int64_t d, double w = 1.0, double c = 0.0)
        : w_(Shape{d}, w), c_(c) {}

    double value(const Tensor& x0) override;
    bool differentiable() const override { return true; }
    Tensor gradient(const Tensor& x0, double* value_out = nullptr) override {
        if (value_out != nullptr) *value_out = value(x0);
        return w_;
    }

private:
    Tensor w_;
    double c_;
};

}  // namespace wmsteer
