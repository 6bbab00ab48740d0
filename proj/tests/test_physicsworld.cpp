#include <doctest.h>

#include <cmath>
#include <set>

#include "wmsteer/physicsworld.hpp"

using namespace wmsteer;

namespace {

double ball_energy(const WorldConfig& cfg, const BallState& b) {
    // y grows downward, gravity pulls toward +y: U = -g*y.
    return 0.5 * (b.vx * b.vx + b.vy * b.vy) - cfg.gravity * b.y;
}

// Independent anti-aliased disc coverage (same definition as the renderer's
// contract: coverage = clamp(r + 0.5 - dist, 0, 1) at pixel centers).
double disc_coverage(double cx, double cy, double r, std::int64_t px_y, std::int64_t px_x) {
    double dx = (static_cast<double>(px_x) + 0.5) - cx;
    double dy = (static_cast<double>(px_y) + 0.5) - cy;
    return std::clamp(r + 0.5 - std::hypot(dx, dy), 0.0, 1.0);
}

}  // namespace

TEST_SUITE_BEGIN("physicsworld");

TEST_CASE("energy is conserved through elastic bounces") {
    WorldConfig cfg;
    cfg.frames = 48;  // long enough for many wall hits
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
        SimResult sim = simulate(cfg, seed);
        const auto& first = sim.traj.states[0];
        for (std::size_t k = 0; k < first.size(); ++k) {
            const double e0 = ball_energy(cfg, first[k]);
            for (const auto& frame : sim.traj.states) {
                CHECK(std::abs(ball_energy(cfg, frame[k]) - e0) < 1e-9);
            }
        }
    }
}

TEST_CASE("balls never clip through walls") {
    WorldConfig cfg;
    cfg.frames = 64;
    for (std::uint64_t seed = 10; seed < 18; ++seed) {
        SimResult sim = simulate(cfg, seed);
        for (const auto& frame : sim.traj.states) {
            for (const auto& b : frame) {
                CHECK(b.x >= b.r - 1e-9);
                CHECK(b.x <= static_cast<double>(cfg.width) - b.r + 1e-9);
                CHECK(b.y >= b.r - 1e-9);
                CHECK(b.y <= static_cast<double>(cfg.height) - b.r + 1e-9);
            }
        }
    }
}

TEST_CASE("a dropped ball follows the parabola until it bounces") {
    WorldConfig cfg;
    cfg.gravity = 0.2;
    BallState b;
    b.r = 2.0;
    b.x = 16.0;
    b.y = 8.0;
    b.vx = 0.0;
    b.vy = 0.0;
    BallState moved = b;
    advance_ball(cfg, moved, 3.0);
    CHECK(moved.y == doctest::Approx(8.0 + 0.5 * 0.2 * 9.0).epsilon(1e-12));
    CHECK(moved.vy == doctest::Approx(0.6).epsilon(1e-12));

    // Long advance: must have bounced off the floor at y = H - r = 30.
    BallState bounced = b;
    advance_ball(cfg, bounced, 20.0);
    CHECK(bounced.y <= 30.0 + 1e-9);
}

TEST_CASE("rendering matches the documented coverage formula") {
    WorldConfig cfg;
    cfg.frames = 1;
    Trajectory traj;
    BallState b;
    b.x = 16.5;
    b.y = 12.25;
    b.r = 3.0;
    traj.states.push_back({b});
    Tensor video = render_video(cfg, traj);
    REQUIRE(video.shape() == Shape{1, 32, 32});
    for (std::int64_t y = 8; y < 17; ++y)
        for (std::int64_t x = 12; x < 22; ++x)
            CHECK(video.at({0, y, x}) == doctest::Approx(disc_coverage(16.5, 12.25, 3.0, y, x)));
    CHECK(video.at({0, 12, 16}) == doctest::Approx(1.0));  // pixel containing the center
    CHECK(video.at({0, 0, 0}) == 0.0);
}

TEST_CASE("hidden balls are not rendered") {
    WorldConfig cfg;
    cfg.frames = 1;
    Trajectory traj;
    BallState b;
    b.x = 10.0;
    b.y = 10.0;
    b.r = 3.0;
    b.visible = false;
    traj.states.push_back({b});
    CHECK(render_video(cfg, traj).max() == 0.0);
}

TEST_CASE("simulation is deterministic per seed") {
    WorldConfig cfg;
    SimResult a = simulate(cfg, 99);
    SimResult b = simulate(cfg, 99);
    SimResult c = simulate(cfg, 100);
    REQUIRE(a.video.numel() == b.video.numel());
    bool same = true;
    for (std::int64_t i = 0; i < a.video.numel(); ++i) same = same && (a.video[i] == b.video[i]);
    CHECK(same);
    CHECK(a.label == b.label);
    bool differs = a.video.numel() != c.video.numel();
    for (std::int64_t i = 0; !differs && i < a.video.numel(); ++i)
        differs = a.video[i] != c.video[i];
    CHECK(differs);
}

TEST_CASE("labels span the configured ball-count range") {
    WorldConfig cfg;
    std::set<int> labels;
    for (std::uint64_t s = 0; s < 40; ++s) labels.insert(simulate(cfg, s).label);
    CHECK(*labels.begin() == 0);
    CHECK(*labels.rbegin() == cfg.n_classes() - 1);
}

TEST_CASE("teleport corruption jumps at least eight pixels then keeps moving") {
    WorldConfig cfg;
    SimResult nominal = simulate(cfg, 7);
    SimResult bad = corrupt(nominal, cfg, CorruptionKind::Teleport, 7);
    REQUIRE(bad.traj.frames() == nominal.traj.frames());

    // Exactly one ball has a displaced position on exactly one cut frame.
    double max_jump = 0.0;
    std::int64_t cut = -1;
    std::size_t ball = 0;
    for (std::int64_t f = 0; f < cfg.frames; ++f) {
        for (std::size_t k = 0; k < nominal.traj.states[0].size(); ++k) {
            const auto& a = nominal.traj.states[static_cast<std::size_t>(f)][k];
            const auto& b = bad.traj.states[static_cast<std::size_t>(f)][k];
            double d = std::hypot(a.x - b.x, a.y - b.y);
            if (d > max_jump) {
                max_jump = d;
                if (cut < 0) {
                    cut = f;
                    ball = k;
                }
            }
        }
    }
    CHECK(max_jump >= 8.0);
    REQUIRE(cut > 0);
    // After the cut the displaced ball still moves (not frozen).
    const auto& b1 = bad.traj.states[static_cast<std::size_t>(cut)][ball];
    const auto& b2 = bad.traj.states[static_cast<std::size_t>(cut) + 1 < bad.traj.states.size()
                                         ? static_cast<std::size_t>(cut) + 1
                                         : static_cast<std::size_t>(cut)][ball];
    CHECK((b1.vx != 0.0 || b1.vy != 0.0));
    CHECK((b1.x != b2.x || b1.y != b2.y));
}

TEST_CASE("mass violation changes the visible ball count mid-clip") {
    WorldConfig cfg;
    bool saw_vanish = false, saw_duplicate = false;
    for (std::uint64_t seed = 0; seed < 12 && !(saw_vanish && saw_duplicate); ++seed) {
        SimResult nominal = simulate(cfg, seed);
        SimResult bad = corrupt(nominal, cfg, CorruptionKind::MassViolation, seed);
        auto visible = [](const std::vector<BallState>& fr) {
            std::size_t n = 0;
            for (const auto& b : fr)
                if (b.visible) n++;
            return n;
        };
        std::size_t before = visible(bad.traj.states.front());
        std::size_t after = visible(bad.traj.states.back());
        CHECK(before != after);
        if (after < before) saw_vanish = true;
        if (after > before) saw_duplicate = true;
    }
    CHECK(saw_vanish);
    CHECK(saw_duplicate);
}

TEST_CASE("flicker hides a ball on isolated frames only") {
    WorldConfig cfg;
    SimResult nominal = simulate(cfg, 21);
    SimResult bad = corrupt(nominal, cfg, CorruptionKind::Flicker, 21);
    int hidden = 0;
    bool prev_hidden = false, consecutive = false;
    for (const auto& frame : bad.traj.states) {
        bool any_hidden = false;
        for (const auto& b : frame) any_hidden = any_hidden || !b.visible;
        if (any_hidden && prev_hidden) consecutive = true;
        if (any_hidden) hidden++;
        prev_hidden = any_hidden;
    }
    CHECK(hidden >= 2);
    CHECK(!consecutive);
}

TEST_CASE("freeze pins one ball while the others keep moving") {
    WorldConfig cfg;
    cfg.n_balls_min = 2;  // ensure another ball exists to keep moving
    cfg.n_balls_max = 3;
    SimResult nominal = simulate(cfg, 33);
    SimResult bad = corrupt(nominal, cfg, CorruptionKind::Freeze, 33);

    const std::size_t n = nominal.traj.states[0].size();
    std::size_t frozen = n;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& a = bad.traj.states[static_cast<std::size_t>(cfg.frames) - 2][k];
        const auto& b = bad.traj.states[static_cast<std::size_t>(cfg.frames) - 1][k];
        if (a.x == b.x && a.y == b.y) frozen = k;
    }
    REQUIRE(frozen < n);
    // The frozen ball diverges from its nominal self.
    const auto& fa = bad.traj.states.back()[frozen];
    const auto& fn = nominal.traj.states.back()[frozen];
    CHECK(std::hypot(fa.x - fn.x, fa.y - fn.y) > 0.1);
}

TEST_CASE("every corruption produces a visibly different video") {
    WorldConfig cfg;
    SimResult nominal = simulate(cfg, 55);
    for (int k = 0; k < kNumCorruptions; ++k) {
        SimResult bad = corrupt(nominal, cfg, static_cast<CorruptionKind>(k), 55);
        double diff = 0.0;
        for (std::int64_t i = 0; i < nominal.video.numel(); ++i)
            diff += std::abs(bad.video[i] - nominal.video[i]);
        INFO(corruption_name(static_cast<CorruptionKind>(k)));
        CHECK(diff > 1.0);
        CHECK(bad.label == nominal.label);
    }
}

TEST_CASE("corruption names round-trip") {
    for (int k = 0; k < kNumCorruptions; ++k) {
        auto kind = static_cast<CorruptionKind>(k);
        CHECK(corruption_from_name(corruption_name(kind)) == kind);
    }
    CHECK_THROWS_AS(corruption_from_name("melt"), Error);
}

TEST_CASE("metrics: identical clips score perfectly") {
    WorldConfig cfg;
    SimResult sim = simulate(cfg, 3);
    MetricsReport rep = evaluate(sim.video, sim.video);
    CHECK(rep.spatial_iou == doctest::Approx(1.0));
    CHECK(rep.spatiotemporal_iou == doctest::Approx(1.0));
    CHECK(rep.weighted_iou == doctest::Approx(1.0));
    CHECK(rep.mse == doctest::Approx(0.0));
    CHECK(rep.aggregate == doctest::Approx(100.0));
}

TEST_CASE("metrics: disjoint motion scores zero IoU") {
    WorldConfig cfg;
    cfg.gravity = 0.0;
    auto make = [&](double y) {
        Trajectory traj;
        traj.states.resize(static_cast<std::size_t>(cfg.frames));
        BallState b;
        b.r = 2.0;
        b.x = 4.0;
        b.y = y;
        b.vx = 1.0;
        for (std::int64_t f = 0; f < cfg.frames; ++f) {
            traj.states[static_cast<std::size_t>(f)] = {b};
            advance_ball(cfg, b, 1.0);
        }
        return render_video(cfg, traj);
    };
    MetricsReport rep = evaluate(make(6.0), make(26.0));
    CHECK(rep.spatial_iou == doctest::Approx(0.0));
    CHECK(rep.spatiotemporal_iou == doctest::Approx(0.0));
    CHECK(rep.weighted_iou == doctest::Approx(0.0));
    CHECK(rep.aggregate < 100.0);
}

TEST_CASE("metrics: integer-shifted disc matches exact set arithmetic") {
    // Horizontal mover, no gravity, never touches a wall; the candidate is
    // the same motion shifted +2 px in x.  Because the sub-pixel phase is
    // constant, the motion masks are exact translates and the IoUs can be
    // computed by direct pixel-set comparison.
    WorldConfig cfg;
    cfg.gravity = 0.0;
    auto make = [&](double x0) {
        Trajectory traj;
        traj.states.resize(static_cast<std::size_t>(cfg.frames));
        BallState b;
        b.r = 2.0;
        b.x = x0;
        b.y = 16.0;
        b.vx = 1.0;
        for (std::int64_t f = 0; f < cfg.frames; ++f) {
            traj.states[static_cast<std::size_t>(f)] = {b};
            advance_ball(cfg, b, 1.0);
        }
        return render_video(cfg, traj);
    };
    Tensor ref = make(4.0);
    Tensor cand = make(6.0);

    // Independent mask computation: the median background is empty (each
    // pixel is covered in well under half the frames), so a pixel is moving
    // exactly when coverage > 0.1.
    auto mask_set = [&](double x0) {
        std::set<std::int64_t> cells;  // (f, y, x) flattened
        for (std::int64_t f = 0; f < cfg.frames; ++f) {
            double cx = x0 + static_cast<double>(f);
            for (std::int64_t y = 0; y < 32; ++y)
                for (std::int64_t x = 0; x < 32; ++x)
                    if (disc_coverage(cx, 16.0, 2.0, y, x) > 0.1)
                        cells.insert((f * 32 + y) * 32 + x);
        }
        return cells;
    };
    auto A = mask_set(6.0), B = mask_set(4.0);
    std::set<std::int64_t> inter, uni;
    for (auto v : A)
        if (B.count(v)) inter.insert(v);
    uni = A;
    uni.insert(B.begin(), B.end());
    const double expect_st = static_cast<double>(inter.size()) / static_cast<double>(uni.size());

    // Spatial (time-collapsed) sets.
    auto collapse = [&](const std::set<std::int64_t>& s) {
        std::set<std::int64_t> out;
        for (auto v : s) out.insert(v % 1024);
        return out;
    };
    auto A2 = collapse(A), B2 = collapse(B);
    std::set<std::int64_t> inter2, uni2;
    for (auto v : A2)
        if (B2.count(v)) inter2.insert(v);
    uni2 = A2;
    uni2.insert(B2.begin(), B2.end());
    const double expect_sp = static_cast<double>(inter2.size()) / static_cast<double>(uni2.size());

    MetricsReport rep = evaluate(cand, ref);
    CHECK(std::abs(rep.spatiotemporal_iou - expect_st) <= 0.02);
    CHECK(std::abs(rep.spatial_iou - expect_sp) <= 0.02);
    // Per-frame masks are identical translates, so the weighted IoU equals
    // the per-frame (= spatiotemporal) value.
    CHECK(std::abs(rep.weighted_iou - expect_st) <= 0.02);
}

TEST_CASE("metrics: corruption lowers the aggregate score") {
    WorldConfig cfg;
    for (std::uint64_t seed = 60; seed < 64; ++seed) {
        SimResult nominal = simulate(cfg, seed);
        for (int k = 0; k < kNumCorruptions; ++k) {
            SimResult bad = corrupt(nominal, cfg, static_cast<CorruptionKind>(k), seed);
            MetricsReport rep = evaluate(bad.video, nominal.video);
            INFO(corruption_name(static_cast<CorruptionKind>(k)), " seed ", seed);
            CHECK(rep.aggregate < 99.0);
        }
    }
}

TEST_CASE("metric bounds hold for arbitrary clips") {
    WorldConfig cfg;
    SimResult a = simulate(cfg, 70);
    SimResult b = simulate(cfg, 71);
    MetricsReport rep = evaluate(a.video, b.video);
    for (double v : {rep.spatial_iou, rep.spatiotemporal_iou, rep.weighted_iou}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(rep.mse >= 0.0);
    CHECK(rep.aggregate >= 0.0);
    CHECK(rep.aggregate <= 100.0);
}

TEST_SUITE_END();
