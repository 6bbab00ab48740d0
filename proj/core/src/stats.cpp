#include "wmsteer/stats.hpp"

#include <algorithm>
#include <cmath>

#include "wmsteer/common.hpp"
#include "wmsteer/rng.hpp"

namespace wmsteer {

double normal_pdf(double x, double mean, double stddev) {
    double z = (x - mean) / stddev;
    return std::exp(-0.5 * z * z) / (stddev * std::sqrt(2.0 * M_PI));
}

double normal_cdf(double x, double mean, double stddev) {
    return 0.5 * std::erfc(-(x - mean) / (stddev * std::sqrt(2.0)));
}

double vec_mean(const std::vector<double>& v) {
    require(!v.empty(), "vec_mean: empty input");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double vec_stddev(const std::vector<double>& v) {
    require(v.size() >= 2, "vec_stddev: need at least two values");
    double m = vec_mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double vec_median(std::vector<double> v) {
    require(!v.empty(), "vec_median: empty input");
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
    require(!samples.empty(), "ks_statistic: empty sample");
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        double f = cdf(samples[i]);
        double lo = static_cast<double>(i) / n;
        double hi = static_cast<double>(i + 1) / n;
        d = std::max(d, std::max(std::abs(f - lo), std::abs(f - hi)));
    }
    return d;
}

double ks_statistic_2samp(std::vector<double> a, std::vector<double> b) {
    require(!a.empty() && !b.empty(), "ks_statistic_2samp: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

BootstrapCI bootstrap_mean_ci(const std::vector<double>& values, int n_resamples, double alpha,
                              std::uint64_t seed) {
    require(!values.empty(), "bootstrap_mean_ci: empty input");
    require(n_resamples > 0, "bootstrap_mean_ci: n_resamples must be positive");
    Rng rng(derive_seed(seed, 0x626f6f74ull));
    const std::size_t n = values.size();
    std::vector<double> means(static_cast<std::size_t>(n_resamples));
    for (auto& m : means) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += values[rng.below(n)];
        m = s / static_cast<double>(n);
    }
    std::sort(means.begin(), means.end());
    auto pick = [&](double q) {
        double pos = q * static_cast<double>(n_resamples - 1);
        std::size_t lo = static_cast<std::size_t>(pos);
        std::size_t hi = std::min(lo + 1, means.size() - 1);
        double w = pos - static_cast<double>(lo);
        return (1.0 - w) * means[lo] + w * means[hi];
    };
    BootstrapCI ci;
    ci.mean = vec_mean(values);
    ci.lo = pick(alpha / 2.0);
    ci.hi = pick(1.0 - alpha / 2.0);
    return ci;
}

double mann_whitney_auc(const std::vector<double>& positives, const std::vector<double>& negatives) {
    require(!positives.empty() && !negatives.empty(), "mann_whitney_auc: empty class");
    std::vector<double> neg = negatives;
    std::sort(neg.begin(), neg.end());
    double wins = 0.0;
    for (double p : positives) {
        auto lo = std::lower_bound(neg.begin(), neg.end(), p);
        auto hi = std::upper_bound(neg.begin(), neg.end(), p);
        wins += static_cast<double>(lo - neg.begin());
        wins += 0.5 * static_cast<double>(hi - lo);
    }
    return wins / (static_cast<double>(positives.size()) * static_cast<double>(neg.size()));
}

Kde gaussian_kde(const std::vector<double>& samples, int grid_points) {
    require(samples.size() >= 2, "gaussian_kde: need at least two samples");
    require(grid_points >= 2, "gaussian_kde: need at least two grid points");
    double sd = vec_stddev(samples);
    if (sd <= 0.0) sd = 1e-9;
    const double n = static_cast<double>(samples.size());
    const double h = 1.06 * sd * std::pow(n, -0.2);
    double lo = *std::min_element(samples.begin(), samples.end()) - 3.0 * h;
    double hi = *std::max_element(samples.begin(), samples.end()) + 3.0 * h;

    Kde kde;
    kde.grid.resize(static_cast<std::size_t>(grid_points));
    kde.density.resize(static_cast<std::size_t>(grid_points));
    for (int g = 0; g < grid_points; ++g) {
        double x = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(grid_points - 1);
        double acc = 0.0;
        for (double s : samples) acc += normal_pdf((x - s) / h);
        kde.grid[static_cast<std::size_t>(g)] = x;
        kde.density[static_cast<std::size_t>(g)] = acc / (n * h);
    }
    return kde;
}

}  // namespace wmsteer
