#include "wmsteer/physicsworld.hpp"

#include <algorithm>
#include <cmath>

#include "wmsteer/common.hpp"

namespace wmsteer {

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

namespace {

constexpr double kTimeEps = 1e-12;

// Smallest root of (g/2) t^2 + vy t + c = 0 in (eps, limit], or -1.
double earliest_quadratic_root(double g_half, double vy, double c, double limit) {
    double best = -1.0;
    if (std::abs(g_half) < 1e-15) {
        if (std::abs(vy) < 1e-15) return -1.0;
        double t = -c / vy;
        if (t > kTimeEps && t <= limit) best = t;
        return best;
    }
    double disc = vy * vy - 4.0 * g_half * c;
    if (disc < 0.0) return -1.0;
    double sq = std::sqrt(disc);
    // Numerically stable pair of roots.
    double q = vy >= 0.0 ? -0.5 * (vy + sq) : -0.5 * (vy - sq);
    double roots[2] = {q / g_half, std::abs(q) > 1e-300 ? c / q : -1.0};
    for (double t : roots)
        if (t > kTimeEps && t <= limit && (best < 0.0 || t < best)) best = t;
    return best;
}

}  // namespace

void advance_ball(const WorldConfig& cfg, BallState& b, double dt) {
    const double W = static_cast<double>(cfg.width);
    const double H = static_cast<double>(cfg.height);
    const double g = cfg.gravity;
    const double e = cfg.restitution;

    double remaining = dt;
    for (int guard = 0; guard < 256 && remaining > kTimeEps; ++guard) {
        enum { None, Left, Right, Floor, Ceil } event = None;
        double t_hit = remaining;

        if (b.vx < 0.0) {
            double t = (b.r - b.x) / b.vx;
            if (t > kTimeEps && t < t_hit) {
                t_hit = t;
                event = Left;
            }
        } else if (b.vx > 0.0) {
            double t = (W - b.r - b.x) / b.vx;
            if (t > kTimeEps && t < t_hit) {
                t_hit = t;
                event = Right;
            }
        }
        {
            double t = earliest_quadratic_root(0.5 * g, b.vy, b.y - (H - b.r), remaining);
            if (t > 0.0 && t < t_hit) {
                t_hit = t;
                event = Floor;
            }
            t = earliest_quadratic_root(0.5 * g, b.vy, b.y - b.r, remaining);
            if (t > 0.0 && t < t_hit) {
                t_hit = t;
                event = Ceil;
            }
        }

        b.x += b.vx * t_hit;
        b.y += b.vy * t_hit + 0.5 * g * t_hit * t_hit;
        b.vy += g * t_hit;
        remaining -= t_hit;

        switch (event) {
            case Left: b.x = b.r; b.vx = e * std::abs(b.vx); break;
            case Right: b.x = W - b.r; b.vx = -e * std::abs(b.vx); break;
            case Floor: b.y = H - b.r; b.vy = -e * std::abs(b.vy); break;
            case Ceil: b.y = b.r; b.vy = e * std::abs(b.vy); break;
            case None: remaining = 0.0; break;
        }
    }
}

SimResult simulate(const WorldConfig& cfg, std::uint64_t seed) {
    require(cfg.n_balls_min >= 1 && cfg.n_balls_max >= cfg.n_balls_min,
            "simulate: invalid ball count range");
    require(cfg.radius_min > 0.5 && cfg.radius_max >= cfg.radius_min,
            "simulate: invalid radius range");
    require(static_cast<double>(cfg.width) > 2.0 * cfg.radius_max + 2.0 &&
                static_cast<double>(cfg.height) > 2.0 * cfg.radius_max + 2.0,
            "simulate: frame too small for the largest ball");

    Rng rng(derive_seed(seed, 0x73696dull));
    const int n = cfg.n_balls_min +
                  static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_balls_max - cfg.n_balls_min + 1)));

    std::vector<BallState> balls(static_cast<std::size_t>(n));
    for (auto& b : balls) {
        b.r = rng.uniform(cfg.radius_min, cfg.radius_max);
        b.x = rng.uniform(b.r + 0.5, static_cast<double>(cfg.width) - b.r - 0.5);
        b.y = rng.uniform(b.r + 0.5, static_cast<double>(cfg.height) - b.r - 0.5);
        b.vx = rng.uniform(-cfg.speed_max, cfg.speed_max);
        b.vy = rng.uniform(-cfg.speed_max, cfg.speed_max);
    }

    SimResult out;
    out.label = n - cfg.n_balls_min;
    out.traj.states.resize(static_cast<std::size_t>(cfg.frames));
    out.traj.states[0] = balls;
    for (std::int64_t f = 1; f < cfg.frames; ++f) {
        auto frame = out.traj.states[static_cast<std::size_t>(f - 1)];
        for (auto& b : frame) advance_ball(cfg, b, 1.0);
        out.traj.states[static_cast<std::size_t>(f)] = std::move(frame);
    }
    out.video = render_video(cfg, out.traj);
    return out;
}

VideoDataset simulate_dataset(const WorldConfig& cfg, std::int64_t n, std::uint64_t seed) {
    require(n > 0, "simulate_dataset: n must be positive");
    VideoDataset ds;
    ds.videos = Tensor(Shape{n, cfg.frames, cfg.height, cfg.width});
    ds.labels.resize(static_cast<std::size_t>(n));
    const std::int64_t clip = cfg.frames * cfg.height * cfg.width;
    for (std::int64_t i = 0; i < n; ++i) {
        SimResult sim = simulate(cfg, derive_seed(seed, static_cast<std::uint64_t>(i)));
        std::copy(sim.video.data(), sim.video.data() + clip, ds.videos.data() + i * clip);
        ds.labels[static_cast<std::size_t>(i)] = sim.label;
    }
    return ds;
}

VideoDataset corrupt_dataset(const WorldConfig& cfg, std::int64_t n, std::uint64_t seed) {
    require(n > 0, "corrupt_dataset: n must be positive");
    VideoDataset ds;
    ds.videos = Tensor(Shape{n, cfg.frames, cfg.height, cfg.width});
    ds.labels.resize(static_cast<std::size_t>(n));
    const std::int64_t clip = cfg.frames * cfg.height * cfg.width;
    for (std::int64_t i = 0; i < n; ++i) {
        const SimResult nominal = simulate(cfg, derive_seed(seed, static_cast<std::uint64_t>(i)));
        const auto kind = static_cast<CorruptionKind>(i % kNumCorruptions);
        SimResult bad =
            corrupt(nominal, cfg, kind, derive_seed(seed, 0x636f7200ull + static_cast<std::uint64_t>(i)));
        std::copy(bad.video.data(), bad.video.data() + clip, ds.videos.data() + i * clip);
        ds.labels[static_cast<std::size_t>(i)] = bad.label;
    }
    return ds;
}

Tensor render_video(const WorldConfig& cfg, const Trajectory& traj) {
    const std::int64_t F = traj.frames(), H = cfg.height, W = cfg.width;
    Tensor video(Shape{F, H, W});
    for (std::int64_t f = 0; f < F; ++f) {
        double* frame = video.data() + f * H * W;
        for (const auto& b : traj.states[static_cast<std::size_t>(f)]) {
            if (!b.visible) continue;
            const std::int64_t y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(b.y - b.r - 1.0)));
            const std::int64_t y1 = std::min<std::int64_t>(H - 1, static_cast<std::int64_t>(std::ceil(b.y + b.r + 1.0)));
            const std::int64_t x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(b.x - b.r - 1.0)));
            const std::int64_t x1 = std::min<std::int64_t>(W - 1, static_cast<std::int64_t>(std::ceil(b.x + b.r + 1.0)));
            for (std::int64_t i = y0; i <= y1; ++i) {
                for (std::int64_t j = x0; j <= x1; ++j) {
                    double dy = (static_cast<double>(i) + 0.5) - b.y;
                    double dx = (static_cast<double>(j) + 0.5) - b.x;
                    double cov = std::clamp(b.r + 0.5 - std::sqrt(dx * dx + dy * dy), 0.0, 1.0);
                    double& px = frame[i * W + j];
                    px = std::max(px, cov);
                }
            }
        }
    }
    return video;
}

// ---------------------------------------------------------------------------
// Corruptions
// ---------------------------------------------------------------------------

const char* corruption_name(CorruptionKind k) {
    switch (k) {
        case CorruptionKind::Teleport: return "teleport";
        case CorruptionKind::MassViolation: return "mass_violation";
        case CorruptionKind::Flicker: return "flicker";
        case CorruptionKind::Freeze: return "freeze";
    }
    return "?";
}

CorruptionKind corruption_from_name(const std::string& name) {
    for (int k = 0; k < kNumCorruptions; ++k)
        if (name == corruption_name(static_cast<CorruptionKind>(k)))
            return static_cast<CorruptionKind>(k);
    fail("unknown corruption '" + name +
         "' (expected teleport, mass_violation, flicker or freeze)");
}

namespace {

// Re-integrates ball k forward from frame f0 (its state there was edited).
void reintegrate_ball(const WorldConfig& cfg, Trajectory& traj, std::size_t k, std::int64_t f0) {
    for (std::int64_t f = f0 + 1; f < traj.frames(); ++f) {
        BallState b = traj.states[static_cast<std::size_t>(f - 1)][k];
        advance_ball(cfg, b, 1.0);
        traj.states[static_cast<std::size_t>(f)][k] = b;
    }
}

double sample_valid_coord(Rng& rng, double r, double extent) {
    return rng.uniform(r + 0.5, extent - r - 0.5);
}

}  // namespace

SimResult corrupt(const SimResult& nominal, const WorldConfig& cfg, CorruptionKind kind,
                  std::uint64_t seed) {
    require(nominal.traj.frames() == cfg.frames, "corrupt: trajectory/config frame mismatch");
    const std::int64_t F = cfg.frames;
    Rng rng(derive_seed(seed, 0xc0ull + static_cast<std::uint64_t>(kind)));

    SimResult out;
    out.label = nominal.label;
    out.traj = nominal.traj;
    Trajectory& traj = out.traj;
    const std::size_t n = traj.states[0].size();
    const std::size_t k = static_cast<std::size_t>(rng.below(n));
    const std::int64_t f0 = F / 3 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(F / 3)));

    switch (kind) {
        case CorruptionKind::Teleport: {
            BallState& b = traj.states[static_cast<std::size_t>(f0)][k];
            double nx = b.x, ny = b.y;
            for (int attempt = 0; attempt < 64; ++attempt) {
                nx = sample_valid_coord(rng, b.r, static_cast<double>(cfg.width));
                ny = sample_valid_coord(rng, b.r, static_cast<double>(cfg.height));
                if (std::hypot(nx - b.x, ny - b.y) >= 8.0) break;
            }
            if (std::hypot(nx - b.x, ny - b.y) < 8.0) {
                // Deterministic fallback: farthest valid corner.
                nx = b.x < static_cast<double>(cfg.width) / 2.0
                         ? static_cast<double>(cfg.width) - b.r - 0.5
                         : b.r + 0.5;
                ny = b.y < static_cast<double>(cfg.height) / 2.0
                         ? static_cast<double>(cfg.height) - b.r - 0.5
                         : b.r + 0.5;
            }
            b.x = nx;
            b.y = ny;
            reintegrate_ball(cfg, traj, k, f0);
            break;
        }
        case CorruptionKind::MassViolation: {
            const std::size_t affected = (n + 1) / 2;
            auto order = rng.permutation(static_cast<std::int64_t>(n));
            const bool vanish = rng.bernoulli(0.5);
            for (std::size_t i = 0; i < affected; ++i) {
                std::size_t ball = static_cast<std::size_t>(order[i]);
                if (vanish) {
                    for (std::int64_t f = f0; f < F; ++f)
                        traj.states[static_cast<std::size_t>(f)][ball].visible = false;
                } else {
                    BallState dup = traj.states[static_cast<std::size_t>(f0)][ball];
                    dup.x = sample_valid_coord(rng, dup.r, static_cast<double>(cfg.width));
                    dup.y = sample_valid_coord(rng, dup.r, static_cast<double>(cfg.height));
                    for (std::int64_t f = f0; f < F; ++f) {
                        traj.states[static_cast<std::size_t>(f)].push_back(dup);
                        advance_ball(cfg, dup, 1.0);
                    }
                }
            }
            break;
        }
        case CorruptionKind::Flicker: {
            std::vector<std::int64_t> hidden;
            bool prev_hidden = false;
            for (std::int64_t f = F / 4; f < 3 * F / 4; ++f) {
                bool hide = !prev_hidden && rng.bernoulli(0.35);
                if (hide) hidden.push_back(f);
                prev_hidden = hide;
            }
            if (hidden.size() < 2) hidden = {F / 2, F / 2 + 2};
            for (std::int64_t f : hidden)
                traj.states[static_cast<std::size_t>(f)][k].visible = false;
            break;
        }
        case CorruptionKind::Freeze: {
            const BallState frozen = traj.states[static_cast<std::size_t>(f0)][k];
            for (std::int64_t f = f0; f < F; ++f) {
                BallState& b = traj.states[static_cast<std::size_t>(f)][k];
                b.x = frozen.x;
                b.y = frozen.y;
                b.vx = 0.0;
                b.vy = 0.0;
            }
            break;
        }
    }

    out.video = render_video(cfg, traj);
    return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

Tensor motion_masks(const Tensor& video, double threshold) {
    require(video.rank() == 3, "motion_masks: expected [F,H,W], got " + shape_str(video.shape()));
    const std::int64_t F = video.dim(0), HW = video.dim(1) * video.dim(2);
    Tensor mask(video.shape());
    std::vector<double> column(static_cast<std::size_t>(F));
    for (std::int64_t p = 0; p < HW; ++p) {
        for (std::int64_t f = 0; f < F; ++f) column[static_cast<std::size_t>(f)] = video[f * HW + p];
        std::vector<double> sorted = column;
        std::sort(sorted.begin(), sorted.end());
        const double background =
            F % 2 ? sorted[static_cast<std::size_t>(F / 2)]
                  : 0.5 * (sorted[static_cast<std::size_t>(F / 2 - 1)] + sorted[static_cast<std::size_t>(F / 2)]);
        for (std::int64_t f = 0; f < F; ++f)
            mask[f * HW + p] = std::abs(column[static_cast<std::size_t>(f)] - background) > threshold ? 1.0 : 0.0;
    }
    return mask;
}

MetricsReport evaluate(const Tensor& candidate, const Tensor& reference, double motion_threshold) {
    require(candidate.same_shape(reference), "evaluate: candidate " + shape_str(candidate.shape()) +
                                                 " vs reference " + shape_str(reference.shape()));
    require(candidate.rank() == 3, "evaluate: expected [F,H,W] clips");
    const std::int64_t F = candidate.dim(0), HW = candidate.dim(1) * candidate.dim(2);

    Tensor ma = motion_masks(candidate, motion_threshold);
    Tensor mb = motion_masks(reference, motion_threshold);

    MetricsReport rep;

    // Spatial: collapse over time first.
    {
        double inter = 0.0, uni = 0.0;
        for (std::int64_t p = 0; p < HW; ++p) {
            bool a = false, b = false;
            for (std::int64_t f = 0; f < F && !(a && b); ++f) {
                a = a || ma[f * HW + p] > 0.5;
                b = b || mb[f * HW + p] > 0.5;
            }
            inter += (a && b) ? 1.0 : 0.0;
            uni += (a || b) ? 1.0 : 0.0;
        }
        rep.spatial_iou = uni > 0.0 ? inter / uni : 1.0;
    }

    // Spatiotemporal: 3-D voxel IoU.
    {
        double inter = 0.0, uni = 0.0;
        for (std::int64_t i = 0; i < ma.numel(); ++i) {
            bool a = ma[i] > 0.5, b = mb[i] > 0.5;
            inter += (a && b) ? 1.0 : 0.0;
            uni += (a || b) ? 1.0 : 0.0;
        }
        rep.spatiotemporal_iou = uni > 0.0 ? inter / uni : 1.0;
    }

    // Weighted: per-frame IoU weighted by the reference mask area.
    {
        double acc = 0.0, wsum = 0.0;
        bool candidate_empty = true;
        for (std::int64_t f = 0; f < F; ++f) {
            double inter = 0.0, uni = 0.0, area_b = 0.0;
            for (std::int64_t p = 0; p < HW; ++p) {
                bool a = ma[f * HW + p] > 0.5, b = mb[f * HW + p] > 0.5;
                if (a) candidate_empty = false;
                inter += (a && b) ? 1.0 : 0.0;
                uni += (a || b) ? 1.0 : 0.0;
                area_b += b ? 1.0 : 0.0;
            }
            if (area_b > 0.0) {
                acc += area_b * (inter / uni);  // uni >= area_b > 0
                wsum += area_b;
            }
        }
        rep.weighted_iou = wsum > 0.0 ? acc / wsum : (candidate_empty ? 1.0 : 0.0);
    }

    {
        double s = 0.0;
        for (std::int64_t i = 0; i < candidate.numel(); ++i) {
            double d = candidate[i] - reference[i];
            s += d * d;
        }
        rep.mse = s / static_cast<double>(candidate.numel());
    }

    const double mse_score = 1.0 - std::min(rep.mse / 0.05, 1.0);
    rep.aggregate =
        100.0 * (rep.spatial_iou + rep.spatiotemporal_iou + rep.weighted_iou + mse_score) / 4.0;
    return rep;
}

void to_json(nlohmann::json& j, const WorldConfig& c) {
    j = nlohmann::json{{"frames", c.frames},
                       {"height", c.height},
                       {"width", c.width},
                       {"n_balls_min", c.n_balls_min},
                       {"n_balls_max", c.n_balls_max},
                       {"radius_min", c.radius_min},
                       {"radius_max", c.radius_max},
                       {"gravity", c.gravity},
                       {"restitution", c.restitution},
                       {"speed_max", c.speed_max}};
}

void from_json(const nlohmann::json& j, WorldConfig& c) {
    const WorldConfig d = c;
    c.frames = j.value("frames", d.frames);
    c.height = j.value("height", d.height);
    c.width = j.value("width", d.width);
    c.n_balls_min = j.value("n_balls_min", d.n_balls_min);
    c.n_balls_max = j.value("n_balls_max", d.n_balls_max);
    c.radius_min = j.value("radius_min", d.radius_min);
    c.radius_max = j.value("radius_max", d.radius_max);
    c.gravity = j.value("gravity", d.gravity);
    c.restitution = j.value("restitution", d.restitution);
    c.speed_max = j.value("speed_max", d.speed_max);
}

}  // namespace wmsteer
