#pragma once

/* Deterministic random numbers.
 *
 * Reproducibility across runs, platforms and worker counts is a hard
 * requirement here, so normal/uniform draws are generated by our own code on
 * top of mt19937_64 instead of the standard distributions (whose output is
 * implementation-defined).  Independent streams are spawned with
 * derive_seed(master, index); every particle, clip and worker derives its own
 * stream so results never depend on scheduling order.
 */

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "wmsteer/tensor.hpp"

namespace wmsteer {

// splitmix64: the canonical 64-bit finalizer, used to decorrelate seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ull));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(splitmix64(seed)) {}

    std::uint64_t bits() { return engine_(); }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (deterministic across platforms).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Uniform integer in [0, n), n > 0.  Rejection-sampled, unbiased.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
        std::uint64_t v = bits();
        while (v >= limit) v = bits();
        return v % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::vector<std::int64_t> permutation(std::int64_t n) {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
        for (std::int64_t i = n - 1; i > 0; --i) {
            std::int64_t j = static_cast<std::int64_t>(below(static_cast<std::uint64_t>(i + 1)));
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        return idx;
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

Tensor normal_tensor(const Shape& shape, Rng& rng, double stddev = 1.0);
Tensor uniform_tensor(const Shape& shape, Rng& rng, double lo = 0.0, double hi = 1.0);

}  // namespace wmsteer
