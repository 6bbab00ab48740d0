#pragma once

/* Synthetic bouncing-ball world: ground-truth simulator, physics-violating
 * corruptions, and the video quality metric suite.
 *
 * Dynamics: each ball moves under constant gravity and reflects elastically
 * off the walls (restitution 1 by default).  Integration is event-exact
 * within each frame step, so with restitution 1 the per-ball energy
 * 0.5|v|^2 - g*y is conserved to floating-point accuracy.  Balls do not
 * interact with each other.  Frames are rendered with anti-aliased discs:
 * pixel coverage = clamp(radius + 0.5 - dist_to_center, 0, 1).
 *
 * The class label of a clip is its ball count minus n_balls_min.
 */

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wmsteer/rng.hpp"
#include "wmsteer/tensor.hpp"

namespace wmsteer {

struct WorldConfig {
    std::int64_t frames = 24;
    std::int64_t height = 32;
    std::int64_t width = 32;
    int n_balls_min = 1;
    int n_balls_max = 3;
    double radius_min = 2.0;
    double radius_max = 3.5;
    double gravity = 0.15;      // px / frame^2, downward (+y)
    double restitution = 1.0;   // wall bounce velocity retention
    double speed_max = 1.6;     // initial velocity components ~ U(-s, s)

    int n_classes() const { return n_balls_max - n_balls_min + 1; }
};

void to_json(nlohmann::json& j, const WorldConfig& c);
void from_json(const nlohmann::json& j, WorldConfig& c);

struct BallState {
    double x = 0.0, y = 0.0;    // center, pixels
    double vx = 0.0, vy = 0.0;  // px / frame
    double r = 0.0;
    bool visible = true;
};

// states[f] holds every ball at the start of frame f.
struct Trajectory {
    std::vector<std::vector<BallState>> states;
    std::int64_t frames() const { return static_cast<std::int64_t>(states.size()); }
};

struct SimResult {
    Tensor video;  // [F, H, W], values in [0,1]
    Trajectory traj;
    int label = 0;  // ball count - n_balls_min
};

// Draws initial conditions from `seed` and integrates the world forward.
SimResult simulate(const WorldConfig& cfg, std::uint64_t seed);

// A batch of clips as one tensor plus per-clip class labels.
struct VideoDataset {
    Tensor videos;            // [N, F, H, W]
    std::vector<int> labels;  // ball count - n_balls_min
    std::int64_t size() const { return videos.numel() ? videos.dim(0) : 0; }
};

// n clips, clip i drawn from derive_seed(seed, i).
VideoDataset simulate_dataset(const WorldConfig& cfg, std::int64_t n, std::uint64_t seed);

// n physics-violating clips cycling through the corruption kinds; clip i
// corrupts simulate(cfg, derive_seed(seed, i)) and keeps its label.
VideoDataset corrupt_dataset(const WorldConfig& cfg, std::int64_t n, std::uint64_t seed);

// Renders a trajectory (used by simulate and by the corruptions).
Tensor render_video(const WorldConfig& cfg, const Trajectory& traj);
// Advances one ball by dt frames with event-exact wall handling.
void advance_ball(const WorldConfig& cfg, BallState& b, double dt);

enum class CorruptionKind { Teleport, MassViolation, Flicker, Freeze };

const char* corruption_name(CorruptionKind k);
CorruptionKind corruption_from_name(const std::string& name);
inline constexpr int kNumCorruptions = 4;

/* Produces a physics-violating variant of a nominal clip:
 *   Teleport       one ball jumps >= 8 px mid-clip, then keeps integrating;
 *   MassViolation  ceil(n/2) balls vanish or duplicate mid-clip;
 *   Flicker        one ball blinks out on isolated frames;
 *   Freeze         one ball stops dead mid-clip while the rest continue.
 * The corrupted video is re-rendered from the modified trajectory. */
SimResult corrupt(const SimResult& nominal, const WorldConfig& cfg, CorruptionKind kind,
                  std::uint64_t seed);

/* Metric suite comparing a candidate clip against a reference clip.
 *
 * Motion masks: per-pixel temporal median of a clip is its background model;
 * a pixel is "moving" in frame f when |frame - background| > 0.1.
 *   spatial_iou         IoU of the masks OR-ed over time (2-D)
 *   spatiotemporal_iou  IoU of the full 3-D mask volumes
 *   weighted_iou        per-frame IoU, weighted by reference mask area
 *   mse                 mean squared pixel error
 *   aggregate           100 * mean(three IoUs, 1 - min(mse/0.05, 1))
 * Empty/empty mask pairs count as perfect agreement. */
struct MetricsReport {
    double spatial_iou = 0.0;
    double spatiotemporal_iou = 0.0;
    double weighted_iou = 0.0;
    double mse = 0.0;
    double aggregate = 0.0;
};

MetricsReport evaluate(const Tensor& candidate, const Tensor& reference,
                       double motion_threshold = 0.1);

// Motion masks as a [F,H,W] 0/1 tensor (exposed for tests and diagnostics).
Tensor motion_masks(const Tensor& video, double threshold = 0.1);

}  // namespace wmsteer
