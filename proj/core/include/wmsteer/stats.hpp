#pragma once

/* Statistics used by the test oracles and the experiment harness:
 * Kolmogorov-Smirnov distances, seeded bootstrap confidence intervals,
 * rank-sum AUC and a Gaussian KDE for the report plots. */

#include <cstdint>
#include <functional>
#include <vector>

namespace wmsteer {

double normal_pdf(double x, double mean = 0.0, double stddev = 1.0);
double normal_cdf(double x, double mean = 0.0, double stddev = 1.0);

double vec_mean(const std::vector<double>& v);
double vec_stddev(const std::vector<double>& v);  // sample stddev (n-1)
double vec_median(std::vector<double> v);

// sup_x |F_n(x) - F(x)| against a reference CDF.
double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);
// sup_x |F_n(x) - G_m(x)| between two empirical samples.
double ks_statistic_2samp(std::vector<double> a, std::vector<double> b);

struct BootstrapCI {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

// Percentile bootstrap CI for the mean; deterministic for a given seed.
BootstrapCI bootstrap_mean_ci(const std::vector<double>& values, int n_resamples, double alpha,
                              std::uint64_t seed);

// Probability that a random positive scores above a random negative
// (ties count 1/2).  Equals the area under the ROC curve.
double mann_whitney_auc(const std::vector<double>& positives, const std::vector<double>& negatives);

struct Kde {
    std::vector<double> grid;
    std::vector<double> density;
};

// Gaussian KDE with Silverman bandwidth, evaluated on a uniform grid.
Kde gaussian_kde(const std::vector<double>& samples, int grid_points = 201);

}  // namespace wmsteer
