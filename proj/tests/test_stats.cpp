#include <doctest.h>

#include <cmath>

#include "wmsteer/rng.hpp"
#include "wmsteer/stats.hpp"

using namespace wmsteer;

TEST_SUITE_BEGIN("stats");

TEST_CASE("normal cdf at reference points") {
    CHECK(normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-12));
    // Classic quantile values.
    CHECK(normal_cdf(1.959963985) == doctest::Approx(0.975).epsilon(1e-7));
    CHECK(normal_cdf(-1.0) == doctest::Approx(0.15865525393).epsilon(1e-9));
    CHECK(normal_cdf(3.0, 1.0, 2.0) == doctest::Approx(normal_cdf(1.0)).epsilon(1e-12));
}

TEST_CASE("one-sample KS against a worked example") {
    // Samples {0.1, 0.2, 0.3} against U(0,1): the largest gap is at the top,
    // |0.3 - 1| = 0.7.
    double d = ks_statistic({0.3, 0.1, 0.2}, [](double x) { return x; });
    CHECK(d == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("two-sample KS against a worked example") {
    // a = {1,2,3}, b = {1.5,2.5}: max |F-G| = 1/3.
    double d = ks_statistic_2samp({3, 1, 2}, {2.5, 1.5});
    CHECK(d == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("KS statistic is small for a true normal sample") {
    Rng rng(77);
    std::vector<double> xs(2000);
    for (auto& x : xs) x = rng.normal();
    double d = ks_statistic(xs, [](double x) { return normal_cdf(x); });
    CHECK(d < 0.035);  // 95% critical value is ~0.030 for n=2000
}

TEST_CASE("bootstrap CI is seeded, ordered and covers the mean") {
    Rng rng(4);
    std::vector<double> xs(200);
    for (auto& x : xs) x = rng.normal();
    auto ci1 = bootstrap_mean_ci(xs, 2000, 0.05, 10);
    auto ci2 = bootstrap_mean_ci(xs, 2000, 0.05, 10);
    CHECK(ci1.lo == ci2.lo);
    CHECK(ci1.hi == ci2.hi);
    CHECK(ci1.lo <= ci1.mean);
    CHECK(ci1.mean <= ci1.hi);
    // Width should be about 2 * 1.96 / sqrt(200) = 0.277.
    CHECK(ci1.hi - ci1.lo > 0.15);
    CHECK(ci1.hi - ci1.lo < 0.45);

    auto flat = bootstrap_mean_ci({2.0, 2.0, 2.0}, 500, 0.05, 1);
    CHECK(flat.lo == doctest::Approx(2.0));
    CHECK(flat.hi == doctest::Approx(2.0));
}

TEST_CASE("rank-sum AUC on hand-checked cases") {
    CHECK(mann_whitney_auc({2.0, 3.0}, {1.0}) == doctest::Approx(1.0));
    CHECK(mann_whitney_auc({1.0}, {2.0}) == doctest::Approx(0.0));
    CHECK(mann_whitney_auc({1.0}, {1.0}) == doctest::Approx(0.5));
    // pos {3,1} vs neg {2,2}: 2 wins out of 4 pairs.
    CHECK(mann_whitney_auc({3.0, 1.0}, {2.0, 2.0}) == doctest::Approx(0.5));
}

TEST_CASE("KDE integrates to one and is seeded by its input") {
    Rng rng(15);
    std::vector<double> xs(500);
    for (auto& x : xs) x = rng.normal(1.0, 2.0);
    Kde kde = gaussian_kde(xs, 301);
    double integral = 0.0;
    for (std::size_t i = 1; i < kde.grid.size(); ++i)
        integral += 0.5 * (kde.density[i] + kde.density[i - 1]) * (kde.grid[i] - kde.grid[i - 1]);
    CHECK(integral == doctest::Approx(1.0).epsilon(0.02));
    // Mode should be near the true mean.
    std::size_t arg = 0;
    for (std::size_t i = 0; i < kde.density.size(); ++i)
        if (kde.density[i] > kde.density[arg]) arg = i;
    CHECK(std::abs(kde.grid[arg] - 1.0) < 0.8);
}

TEST_CASE("vector helpers") {
    CHECK(vec_mean({1.0, 2.0, 6.0}) == doctest::Approx(3.0));
    CHECK(vec_median({5.0, 1.0, 3.0}) == doctest::Approx(3.0));
    CHECK(vec_median({4.0, 1.0, 3.0, 2.0}) == doctest::Approx(2.5));
    CHECK(vec_stddev({1.0, 3.0}) == doctest::Approx(std::sqrt(2.0)));
}

TEST_SUITE_END();
