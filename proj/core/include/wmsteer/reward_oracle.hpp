#pragma once

/* Interface between reward functions and the steered samplers.  A reward
 * scores a clean sample x0 (higher is better); differentiable rewards also
 * expose their gradient for guidance-based schemes. */

#include "wmsteer/common.hpp"
#include "wmsteer/tensor.hpp"

namespace wmsteer {

class RewardOracle {
public:
    virtual ~RewardOracle() = default;

    virtual double value(const Tensor& x0) = 0;

    virtual bool differentiable() const { return false; }
    // d value / d x0; when `value` is non-null also reports r(x0), which the
    // backward pass usually yields for free.
    virtual Tensor gradient(const Tensor& x0, double* value = nullptr) {
        (void)x0;
        (void)value;
        fail("this reward does not provide gradients");
    }
};

// Control reward: selection under it is reward-blind (ties everywhere), so a
// steered sampler must collapse to its unsteered distribution.
class ConstantReward final : public RewardOracle {
public:
    explicit ConstantReward(double c = 0.0) : c_(c) {}
    double value(const Tensor&) override { return c_; }

private:
    double c_;
};

}  // namespace wmsteer
