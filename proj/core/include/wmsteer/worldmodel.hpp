#pragma once

/* Latent video world model (joint-embedding predictive architecture).
 *
 * Three networks over tubelet tokens [B, T', S, d] (T' = frames / tubelet):
 *   - online encoder: tube tokens -> mixer trunk -> representations; masked
 *     input positions are replaced by a learned mask embedding before the
 *     positional embeddings are added;
 *   - predictor: mixer trunk mapping the masked encoding to predicted
 *     representations at every position;
 *   - target encoder: an EMA copy of the online encoder that always sees the
 *     unmasked clip.  Its parameters are bound as constants, so training
 *     gradients never reach it (structural stop-gradient); gradients still
 *     flow through it to pixel inputs, which reward guidance relies on.
 *
 * Training masks a clip two ways (chosen per batch): future-frame masking
 * (everything after a random tubelet cut) and tube masking (random spatial
 * tokens across all of time), then regresses predicted representations onto
 * target representations at masked positions with an L1 loss.  A collapse
 * monitor aborts when the per-feature spread of the online representations
 * vanishes.
 *
 * The same masked-prediction path scores unseen clips: the mean cosine
 * between predicted and target representations on masked future tokens is
 * the model's "unsurprisingness", which the reward module turns into a
 * differentiable physics-plausibility reward.
 */

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "wmsteer/generator.hpp"  // TrainReport / ProgressFn
#include "wmsteer/nn.hpp"
#include "wmsteer/physicsworld.hpp"

namespace wmsteer {

struct WorldModelConfig {
    std::int64_t frames = 24;  // longest clip the positional table supports
    std::int64_t height = 32;
    std::int64_t width = 32;
    std::int64_t patch = 4;
    std::int64_t tubelet = 2;
    std::int64_t channels = 32;  // representation width d
    std::int64_t enc_blocks = 2;
    std::int64_t pred_blocks = 2;
    std::int64_t hidden_mult = 2;

    std::int64_t tokens() const { return (height / patch) * (width / patch); }
    std::int64_t tube_dim() const { return tubelet * patch * patch; }
    std::int64_t t_tokens(std::int64_t t_frames) const { return t_frames / tubelet; }
    void validate() const;
};

void to_json(nlohmann::json& j, const WorldModelConfig& c);
void from_json(const nlohmann::json& j, WorldModelConfig& c);

namespace detail {

// Shared encoder architecture; instantiated once per parameter store so the
// online and target encoders stay name-compatible for EMA updates.
struct TokenEncoder {
    TokenEncoder(ParamStore& s, const WorldModelConfig& cfg, Rng& rng);
    // video [B,F,H,W] with F a multiple of tubelet; input_mask has
    // (F/tubelet)*S entries, 1 = replace the token with the mask embedding.
    Var operator()(Binding& b, const WorldModelConfig& cfg, Var video,
                   const std::vector<std::uint8_t>& input_mask) const;

    Linear in_;
    Param* mask_token_;
    Param* time_pos_;
    Param* space_pos_;
    std::vector<MixerBlock> blocks_;
    LayerNormLayer out_ln_;
};

struct TokenPredictor {
    TokenPredictor(ParamStore& s, const WorldModelConfig& cfg, Rng& rng);
    Var operator()(Binding& b, Var tokens) const;

    Linear in_;
    std::vector<MixerBlock> blocks_;
    LayerNormLayer ln_;
    Linear out_;
};

}  // namespace detail

class WorldModelBundle {
public:
    WorldModelBundle(const WorldModelConfig& cfg, std::uint64_t seed);

    WorldModelBundle(WorldModelBundle&&) = default;
    WorldModelBundle& operator=(WorldModelBundle&&) = default;
    WorldModelBundle(const WorldModelBundle&) = delete;
    WorldModelBundle& operator=(const WorldModelBundle&) = delete;

    const WorldModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }               // encoder + predictor
    const ParamStore& params() const { return params_; }
    ParamStore& target_params() { return target_params_; }  // EMA encoder
    const ParamStore& target_params() const { return target_params_; }

    // bind_online carries trainable parameters; bind_target must be a
    // non-training binding (enforced) so target weights are constants.
    Var encode_online(Binding& bind_online, Var video,
                      const std::vector<std::uint8_t>& input_mask = {}) const;
    Var encode_target(Binding& bind_target, Var video) const;
    Var predict(Binding& bind_online, Var tokens) const;

    // Masks over the (T', S) token grid of a t_frames-long window.
    std::vector<std::uint8_t> future_mask(std::int64_t t_frames,
                                          std::int64_t context_frames) const;
    std::vector<std::uint8_t> tube_mask(std::int64_t t_frames, double ratio, Rng& rng) const;

    /* Inference composite: mean cosine between predicted and target
     * representations over the masked tokens of `window` ([B,F,H,W] or
     * [F,H,W]).  All parameters are bound as constants; if `window` requires
     * gradients they flow through both encoders. */
    Var masked_cosine_mean(Tape& tape, Var window, const std::vector<std::uint8_t>& mask) const;

    // Mean over features of the per-feature std across token positions; the
    // collapse monitor in train_worldmodel aborts when this drops below 1e-4.
    static double feature_std(const Tensor& tokens);

    void ema_step(double decay) { ema_update(target_params_, params_, decay); }

private:
    WorldModelConfig cfg_;
    ParamStore params_;
    ParamStore target_params_;
    Rng rng_;  // consumed during construction only
    detail::TokenEncoder enc_;
    detail::TokenEncoder target_enc_;
    detail::TokenPredictor pred_;
};

struct WorldModelTrainConfig {
    std::int64_t epochs = 20;
    std::int64_t batch_size = 8;
    double lr = 2e-3;
    double clip_norm = 1.0;
    double ema_decay = 0.996;
    double future_prob = 0.5;  // future-frame vs tube masking, per batch
    double tube_ratio = 0.5;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const WorldModelTrainConfig& c);
void from_json(const nlohmann::json& j, WorldModelTrainConfig& c);

TrainReport train_worldmodel(WorldModelBundle& wm, const VideoDataset& data,
                             const WorldModelTrainConfig& tc, const ProgressFn& progress = nullptr);

void save_worldmodel(const WorldModelBundle& wm, const std::string& path);
WorldModelBundle load_worldmodel(const std::string& path);

}  // namespace wmsteer
