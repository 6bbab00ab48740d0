#pragma once

/* Differentiable physics-plausibility rewards over generated videos.
 *
 * The main reward converts world-model prediction surprise into a scalar:
 * slide a window of `window` frames across the clip with step `stride`; in
 * each window the first `context` frames are visible and the rest are
 * masked; the world model predicts representations for the masked tokens
 * and the per-token cosine against the target-encoder representations is
 * averaged.  Surprise is the mean of (1 - cosine) over windows, and the
 * reward is its negation, so higher = more plausible and the reward lives
 * in [-2, 0].  The gradient w.r.t. every input pixel is exact (reverse-mode
 * through both encoders and the predictor).
 *
 * Two baseline rewards support the reward-comparison experiments: a
 * pixel-space future predictor scored by negative reconstruction MSE over
 * the same windows, and a binary probe classifier whose plausibility logit
 * is the reward.  All rewards are pure functions of immutable model
 * bundles, safe to evaluate concurrently across particles.
 */

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "wmsteer/generator.hpp"  // TrainReport / ProgressFn
#include "wmsteer/physicsworld.hpp"
#include "wmsteer/reward_oracle.hpp"
#include "wmsteer/worldmodel.hpp"

namespace wmsteer {

struct SurpriseConfig {
    std::int64_t window = 16;   // frames per window (context + horizon)
    std::int64_t context = 8;   // visible frames
    std::int64_t stride = 8;    // frames between window starts
    std::int64_t resize = 0;    // spatial side the input is resampled to; 0 = native

    std::int64_t horizon() const { return window - context; }
    void validate() const;
};

void to_json(nlohmann::json& j, const SurpriseConfig& c);
void from_json(const nlohmann::json& j, SurpriseConfig& c);

// Scalar reward; higher = more physically plausible.
struct RewardValue {
    double value = 0.0;
};

// Number of window positions for a clip of `frames` frames.
std::int64_t window_count(std::int64_t frames, const SurpriseConfig& cfg);

struct BaselineTrainConfig {
    std::int64_t epochs = 15;
    std::int64_t batch_size = 16;
    double lr = 2e-3;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const BaselineTrainConfig& c);
void from_json(const nlohmann::json& j, BaselineTrainConfig& c);

// ---------------------------------------------------------------------------
// World-model surprise reward
// ---------------------------------------------------------------------------

RewardValue wm_reward(const Tensor& video, const WorldModelBundle& wm, const SurpriseConfig& cfg);

// d reward / d pixel, same shape as `video`; optionally reports the value.
Tensor wm_reward_gradient(const Tensor& video, const WorldModelBundle& wm,
                          const SurpriseConfig& cfg, double* value = nullptr);

// ---------------------------------------------------------------------------
// Baseline: pixel-space future prediction
// ---------------------------------------------------------------------------

struct PixelPredictorConfig {
    std::int64_t context = 8;
    std::int64_t horizon = 8;
    std::int64_t height = 32;
    std::int64_t width = 32;
    std::int64_t patch = 4;
    std::int64_t channels = 32;
    std::int64_t blocks = 2;
    std::int64_t hidden_mult = 2;

    std::int64_t tokens() const { return (height / patch) * (width / patch); }
    std::int64_t patch_dim() const { return patch * patch; }
    void validate() const;
};

void to_json(nlohmann::json& j, const PixelPredictorConfig& c);
void from_json(const nlohmann::json& j, PixelPredictorConfig& c);

class PixelPredictor {
public:
    PixelPredictor(const PixelPredictorConfig& cfg, std::uint64_t seed);

    PixelPredictor(PixelPredictor&&) = default;
    PixelPredictor& operator=(PixelPredictor&&) = default;
    PixelPredictor(const PixelPredictor&) = delete;
    PixelPredictor& operator=(const PixelPredictor&) = delete;

    const PixelPredictorConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // context [B,C,H,W] -> predicted future [B,M,H,W].  The output head is
    // zero-initialized, so an untrained predictor forecasts all-zero frames.
    Var forward(Binding& bind, Var context) const;

private:
    PixelPredictorConfig cfg_;
    ParamStore params_;
    Rng rng_;  // consumed during construction only
    Linear in_;
    Param* time_pos_;
    Param* space_pos_;
    std::vector<MixerBlock> blocks_;
    LayerNormLayer head_ln_;
    Linear head_;
};

// value = -mean over windows of MSE(predicted future, actual future); the
// window layout (context/horizon/stride) must match the predictor.
RewardValue pixel_prediction_reward(const Tensor& video, const PixelPredictor& model,
                                    const SurpriseConfig& cfg);

TrainReport train_pixel_predictor(PixelPredictor& model, const VideoDataset& data,
                                  const BaselineTrainConfig& tc, const ProgressFn& progress = nullptr);

// ---------------------------------------------------------------------------
// Baseline: plausibility probe classifier
// ---------------------------------------------------------------------------

struct ProbeConfig {
    std::int64_t frames = 24;
    std::int64_t height = 32;
    std::int64_t width = 32;
    std::int64_t patch = 4;
    std::int64_t tubelet = 2;
    std::int64_t channels = 32;
    std::int64_t blocks = 2;
    std::int64_t hidden_mult = 2;

    std::int64_t tokens() const { return (height / patch) * (width / patch); }
    void validate() const;
};

void to_json(nlohmann::json& j, const ProbeConfig& c);
void from_json(const nlohmann::json& j, ProbeConfig& c);

class ProbeClassifier {
public:
    ProbeClassifier(const ProbeConfig& cfg, std::uint64_t seed);

    ProbeClassifier(ProbeClassifier&&) = default;
    ProbeClassifier& operator=(ProbeClassifier&&) = default;
    ProbeClassifier(const ProbeClassifier&) = delete;
    ProbeClassifier& operator=(const ProbeClassifier&) = delete;

    const ProbeConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // video [B,F,H,W] -> plausibility logits [B].  Zero-initialized head, so
    // an untrained probe scores everything 0.
    Var logits(Binding& bind, Var video) const;

private:
    ProbeConfig cfg_;
    ParamStore params_;
    Rng rng_;  // consumed during construction only
    Linear in_;
    Param* time_pos_;
    Param* space_pos_;
    std::vector<MixerBlock> blocks_;
    LayerNormLayer head_ln_;
    Linear head_;
};

// value = plausibility logit of the clip.
RewardValue classifier_probe_reward(const Tensor& video, const ProbeClassifier& probe);

// Logistic regression of real (1) vs corrupted (0) clips.
TrainReport train_probe(ProbeClassifier& probe, const VideoDataset& real,
                        const VideoDataset& corrupted, const BaselineTrainConfig& tc,
                        const ProgressFn& progress = nullptr);

// ---------------------------------------------------------------------------
// Checkpoints and adapters
// ---------------------------------------------------------------------------

void save_pixel_predictor(const PixelPredictor& model, const std::string& path);
PixelPredictor load_pixel_predictor(const std::string& path);
void save_probe(const ProbeClassifier& probe, const std::string& path);
ProbeClassifier load_probe(const std::string& path);

/* RewardOracle adapters the samplers consume.  Each captures its model by
 * reference (keep it alive while sampling); evaluation builds a private tape
 * per call, so one adapter is safe to share across parallel particles. */

class WmSurpriseReward final : public RewardOracle {
public:
    WmSurpriseReward(const WorldModelBundle& wm, SurpriseConfig cfg) : wm_(&wm), cfg_(cfg) {}
    double value(const Tensor& x0) override { return wm_reward(x0, *wm_, cfg_).value; }
    bool differentiable() const override { return true; }
    Tensor gradient(const Tensor& x0, double* value_out = nullptr) override {
        return wm_reward_gradient(x0, *wm_, cfg_, value_out);
    }

private:
    const WorldModelBundle* wm_;
    SurpriseConfig cfg_;
};

class PixelPredictionReward final : public RewardOracle {
public:
    PixelPredictionReward(const PixelPredictor& model, SurpriseConfig cfg)
        : model_(&model), cfg_(cfg) {}
    double value(const Tensor& x0) override {
        return pixel_prediction_reward(x0, *model_, cfg_).value;
    }

private:
    const PixelPredictor* model_;
    SurpriseConfig cfg_;
};

class ProbeReward final : public RewardOracle {
public:
    explicit ProbeReward(const ProbeClassifier& probe) : probe_(&probe) {}
    double value(const Tensor& x0) override { return classifier_probe_reward(x0, *probe_).value; }

private:
    const ProbeClassifier* probe_;
};

}  // namespace wmsteer
