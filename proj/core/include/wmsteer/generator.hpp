#pragma once

/* Toy video diffusion/flow generator.
 *
 * The denoiser is a factorized space/time mixer over patch tokens with three
 * additive conditioning channels:
 *   - diffusion time: sincos features -> 2-layer MLP, added per clip;
 *   - class label: embedding table with a trailing null row, added per clip;
 *   - context frames: the context_frames frames preceding the modeled window,
 *     projected per spatial token; a learned null vector stands in when
 *     context is absent or dropped.
 *
 * Training regresses either the noise (eps mode) or the path velocity
 * alpha'(t) x0 + sigma'(t) eps (velocity mode; required for rect_flow, whose
 * alpha vanishes at t=1).  Batches alternate between full clips without
 * context (holistic sampling) and chunk_frames windows conditioned on their
 * preceding frames (autoregressive sampling); label and context are dropped
 * independently to train the classifier-free branches.
 *
 * DenoiserScoreModel adapts a trained network plus a GenerationCondition to
 * the solver's ScoreModel interface.  Classifier-free branches are combined
 * linearly with unit coefficient sum, which commutes with the affine
 * prediction -> x0 inversion, so guidance can be composed on x0 directly.
 */

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "wmsteer/nn.hpp"
#include "wmsteer/physicsworld.hpp"
#include "wmsteer/schedule.hpp"
#include "wmsteer/solver.hpp"

namespace wmsteer {

enum class PredictionTarget { Eps, Velocity };

struct GeneratorConfig {
    std::int64_t frames = 24;
    std::int64_t height = 32;
    std::int64_t width = 32;
    std::int64_t patch = 4;
    std::int64_t channels = 24;     // token embedding width
    std::int64_t blocks = 3;
    std::int64_t hidden_mult = 2;
    std::int64_t time_dim = 32;     // sincos feature length
    std::int64_t context_frames = 2;
    std::int64_t chunk_frames = 8;  // autoregressive window length
    int n_classes = 3;
    std::string schedule = "vp_cosine";
    std::string target = "auto";    // "eps" | "velocity" | "auto" (by schedule)

    std::int64_t tokens() const { return (height / patch) * (width / patch); }
    std::int64_t patch_dim() const { return patch * patch; }
    void validate() const;
    // "auto" -> eps for vp_cosine, velocity for rect_flow.
    PredictionTarget resolve_target() const;
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

class DenoiserNetwork {
public:
    DenoiserNetwork(const GeneratorConfig& cfg, std::uint64_t seed);

    DenoiserNetwork(DenoiserNetwork&&) = default;
    DenoiserNetwork& operator=(DenoiserNetwork&&) = default;
    DenoiserNetwork(const DenoiserNetwork&) = delete;
    DenoiserNetwork& operator=(const DenoiserNetwork&) = delete;

    /* One batched denoiser evaluation.
     *   x_t      [B,T,H,W] noisy input, T <= config().frames
     *   ts       per-clip diffusion times (size B)
     *   labels   per-clip class ids; -1 selects the null (unconditional) row
     *   context  [B,Tc,H,W] preceding frames, or empty for none
     *   ctx_on   per-clip switch (0 substitutes the learned null context);
     *            empty means "all on"; ignored when context is empty
     * Returns the eps/velocity prediction as [B,T,H,W]. */
    Var forward(Binding& bind, Var x_t, const std::vector<double>& ts,
                const std::vector<int>& labels, const Tensor& context,
                const std::vector<std::uint8_t>& ctx_on = {}) const;

    const GeneratorConfig& config() const { return cfg_; }
    const NoiseSchedule& schedule() const { return sched_; }
    PredictionTarget target() const { return target_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

private:
    GeneratorConfig cfg_;
    NoiseSchedule sched_;
    PredictionTarget target_;
    ParamStore params_;
    Rng rng_;  // consumed during construction only
    Linear patch_in_;
    Linear t_in_, t_out_;
    EmbeddingTable label_emb_;  // n_classes + 1 rows, last = null
    Linear ctx_in_;
    Param* null_ctx_;
    Param* time_pos_;
    Param* space_pos_;
    std::vector<MixerBlock> blocks_;
    LayerNormLayer head_ln_;
    Linear head_out_;
};

// ---------------------------------------------------------------------------
// Conditioning
// ---------------------------------------------------------------------------

struct GenerationCondition {
    int label = -1;          // class id; -1 = unconditional
    double cfg_scale = 1.0;  // classifier-free weight on the label
    Tensor context;          // [Tc,H,W] preceding frames; empty = none
    double ctx_scale = 1.0;  // classifier-free weight on the context
};

// One classifier-free branch of the composed score.
struct CfgBranch {
    double coeff = 1.0;
    int label = -1;
    bool use_context = false;
};

/* Expands a condition into score branches with unit coefficient sum:
 *   no context:  (1-w) uncond + w label
 *   context:     (1-wc) uncond + (wc-wl) context + wl context+label
 * Zero-coefficient branches are pruned. */
std::vector<CfgBranch> cfg_branches(const GenerationCondition& cond);

/* Solver adapter.  Branches are evaluated as one batched forward pass;
 * estimate() returns the coefficient-weighted posterior mean and
 * x0_pullback() differentiates the same composition w.r.t. the input.
 * network_evals() counts branch evaluations for compute accounting. */
class DenoiserScoreModel : public ScoreModel {
public:
    DenoiserScoreModel(const DenoiserNetwork& net, GenerationCondition cond, std::int64_t frames);

    Shape sample_shape() const override;
    const NoiseSchedule& schedule() const override { return net_->schedule(); }
    Estimate estimate(const Tensor& x, double t) override;
    Tensor x0_pullback(const Tensor& x, double t, const Tensor& v) override;

    const std::vector<CfgBranch>& branches() const { return branches_; }
    std::int64_t network_evals() const { return net_evals_; }

private:
    // eps:      x0 = (x - sigma p) / alpha
    // velocity: x0 = (sigma' x - sigma p) / (alpha sigma' - sigma alpha')
    void inversion_coeffs(double t, double& cx, double& cp) const;
    Tensor repeat_rows(const Tensor& x) const;

    const DenoiserNetwork* net_;
    GenerationCondition cond_;
    std::int64_t frames_;
    std::vector<CfgBranch> branches_;
    std::vector<int> labels_;
    std::vector<std::uint8_t> ctx_on_;
    Tensor ctx_batch_;  // [n_branches,Tc,H,W], empty when no branch uses context
    std::int64_t net_evals_ = 0;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct GeneratorTrainConfig {
    std::int64_t epochs = 20;
    std::int64_t batch_size = 16;
    double lr = 2e-3;
    double clip_norm = 1.0;
    double label_dropout = 0.1;
    double context_dropout = 0.1;
    double window_prob = 0.5;  // probability a batch trains AR windows
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const GeneratorTrainConfig& c);
void from_json(const nlohmann::json& j, GeneratorTrainConfig& c);

struct TrainReport {
    std::vector<double> epoch_loss;
    std::int64_t steps = 0;
    double wallclock_sec = 0.0;
};

using ProgressFn = std::function<void(std::int64_t epoch, double loss)>;

TrainReport train_generator(DenoiserNetwork& net, const VideoDataset& data,
                            const GeneratorTrainConfig& tc, const ProgressFn& progress = nullptr);

// ---------------------------------------------------------------------------
// Sampling and persistence
// ---------------------------------------------------------------------------

// Denoises a full clip in one pass.  Returns [F,H,W].
Tensor generate(const DenoiserNetwork& net, const GenerationCondition& cond,
                const SolveOptions& opt, std::uint64_t seed, SolveStats* stats = nullptr);

/* Chunked autoregressive generation: the clip is produced chunk_frames at a
 * time, each chunk conditioned on the last context_frames frames of the
 * previous one (first chunk: null context).  cond.context must be empty;
 * chunk c draws its noise from derive_seed(seed, c). */
Tensor generate_autoregressive(const DenoiserNetwork& net, const GenerationCondition& cond,
                               const SolveOptions& opt, std::uint64_t seed,
                               SolveStats* stats = nullptr);

void save_generator(const DenoiserNetwork& net, const std::string& path);
DenoiserNetwork load_generator(const std::string& path);

}  // namespace wmsteer
