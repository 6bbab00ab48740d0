#pragma once

/* Experiment orchestration: configuration, run directories, persistence, and
 * the experiment stages behind the CLI.
 *
 * A run lives in <out>/run-<confighash>/ with one subdirectory per stage;
 * each stage writes its artifacts plus a manifest.json carrying the config
 * hash, the code version, its inputs/outputs and a short summary.  Stage
 * artifacts are deterministic functions of the configuration; the only
 * exception is compute_accounting.csv, whose timing columns necessarily vary
 * between executions.  Manifests carry no wallclock for the same reason.
 *
 * Evaluation protocol (video-to-video analog): episode i is one simulated
 * clip at a seed derived from (config seed, i).  Its first
 * frames - chunk_frames frames are the observed prefix, of which the
 * generator consumes the trailing context_frames; the sampler then produces
 * one chunk_frames continuation, scored against the ground-truth remainder
 * with the motion-mask metric suite.
 */

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wmsteer/generator.hpp"
#include "wmsteer/physicsworld.hpp"
#include "wmsteer/rewards.hpp"
#include "wmsteer/samplers.hpp"
#include "wmsteer/worldmodel.hpp"

namespace wmsteer {

inline constexpr const char* kCodeVersion = "0.1.0";

struct EvalConfig {
    std::int64_t clips = 32;          // evaluation episodes per experiment cell
    std::int64_t solver_steps = 16;
    std::string solver_mode = "sde";  // population schemes need stochastic steps
    double motion_threshold = 0.1;
    double cfg_scale = 1.0;
    double ctx_scale = 1.0;
    std::int64_t compare_particles = 8;  // N for the scheme/reward comparisons

    StepMode mode() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

/* Default-constructed, this is the desk-scale recipe every tool starts from:
 * a 16x16, 16-frame world, a chunked denoiser and a 32-channel world model
 * sized so the full pipeline runs in minutes on one CPU core. */
struct ExperimentConfig {
    ExperimentConfig();

    WorldConfig world;
    GeneratorConfig generator;
    GeneratorTrainConfig generator_train;
    WorldModelConfig worldmodel;
    WorldModelTrainConfig worldmodel_train;
    std::string reward_kind = "wm";  // wm | pixel | probe | constant
    SurpriseConfig reward;
    BaselineTrainConfig baseline_train;
    SamplerSpec sampler;  // spec used by `sample`; also supplies the shared
                          // lambda/guidance knobs the grid schemes inherit
    std::vector<std::string> grid_schemes;
    std::vector<std::int64_t> grid_particles;
    EvalConfig eval;
    std::int64_t train_clips = 1024;
    std::int64_t probe_clips = 200;  // held-out real/corrupted pairs for AUC
    std::uint64_t seed = 0;
    std::string out_dir;  // empty: $WMSTEER_OUT, then ./runs

    void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Baseline reward models share the generator geometry and the surprise
// reward's window split, so their configs are derived, not stored.
PixelPredictorConfig derive_pixel_config(const ExperimentConfig& cfg);
ProbeConfig derive_probe_config(const ExperimentConfig& cfg);

// 16 hex digits identifying the canonical config JSON (FNV-1a).
std::string experiment_hash(const ExperimentConfig& cfg);

std::string resolve_out_root(const std::string& out_dir);

class RunDir {
public:
    explicit RunDir(const ExperimentConfig& cfg);

    const std::string& root() const { return root_; }
    const std::string& hash() const { return hash_; }

    std::string stage_dir(const std::string& stage) const;  // created on demand
    std::string file(const std::string& stage, const std::string& name) const;
    bool stage_done(const std::string& stage) const;
    void finish_stage(const std::string& stage, const nlohmann::json& summary,
                      const std::vector<std::string>& inputs,
                      const std::vector<std::string>& outputs) const;
    nlohmann::json manifest(const std::string& stage) const;
    /* Path of a stage artifact; if the file is missing, throws a dependency
     * error naming it and the subcommand that produces it. */
    std::string artifact(const std::string& stage, const std::string& name,
                         const std::string& producer_cmd) const;

private:
    std::string root_;
    std::string hash_;
};

// ---------------------------------------------------------------------------
// Deterministic CSV tables
// ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> row);
    std::string to_string() const;
    void save(const std::string& path) const;
    static CsvTable load(const std::string& path);
    std::size_t col(const std::string& name) const;
    const std::string& cell(std::size_t row, const std::string& name) const;
    double num(std::size_t row, const std::string& name) const;
};

// Fixed "%.12g" rendering so equal doubles always print identical bytes.
std::string csv_num(double v);

// ---------------------------------------------------------------------------
// Dataset persistence (checkpoint container, kind "dataset")
// ---------------------------------------------------------------------------

void save_dataset(const VideoDataset& data, const std::string& path);
VideoDataset load_dataset(const std::string& path);

// ---------------------------------------------------------------------------
// Evaluation protocol
// ---------------------------------------------------------------------------

struct Episode {
    Tensor prefix;  // [frames - chunk_frames, H, W] observed past
    Tensor truth;   // [chunk_frames, H, W] ground-truth future
    int label = 0;
};

Episode make_episode(const ExperimentConfig& cfg, std::int64_t index);

// Noise seed shared by every scheme/N sampling episode `index`, so particle
// populations nest across grid cells.
std::uint64_t episode_sample_seed(const ExperimentConfig& cfg, std::int64_t index);

// Label + trailing context_frames of the episode prefix, with the eval CFG
// scales applied.
GenerationCondition episode_condition(const ExperimentConfig& cfg, const Episode& ep);

SolveOptions eval_solve_options(const ExperimentConfig& cfg);

// Sampler spec for one grid cell: `n` maps to the population size (best-of-N,
// SMC) or the per-step candidate count (SVDD); lambda and the guidance knobs
// come from cfg.sampler.
SamplerSpec grid_spec(const ExperimentConfig& cfg, const std::string& scheme, std::int64_t n);

/* A reward oracle plus the model it reads from.  `kind` is one of
 * wm | pixel | probe | constant; models are loaded from the run directory
 * (dependency error when the producing stage has not run). */
struct RewardBundle {
    std::unique_ptr<WorldModelBundle> wm;
    std::unique_ptr<PixelPredictor> pixel;
    std::unique_ptr<ProbeClassifier> probe;
    std::unique_ptr<RewardOracle> oracle;
};

RewardBundle load_reward(const ExperimentConfig& cfg, const RunDir& rd, const std::string& kind);

// AUC of oracle scores, real vs corrupted, over n_pairs held-out simulations.
double reward_auc(RewardOracle& oracle, const ExperimentConfig& cfg, CorruptionKind kind,
                  std::int64_t n_pairs);

struct EpisodeResult {
    ParticleBatch batch;
    MetricsReport metrics;  // selected sample vs ground-truth future
};

// One sampling episode: build the episode, run the scheme, score the
// selected continuation against the ground truth.
EpisodeResult run_episode(const ExperimentConfig& cfg, const DenoiserNetwork& net,
                          RewardOracle& reward, const SamplerSpec& spec, std::int64_t index,
                          int workers);

/* Wallclock/memory accounting at fixed N = eval.compare_particles: vanilla in
 * absolute seconds, every other scheme as a multiplier.  Columns other than
 * the eval counters are timing-bearing and excluded from the determinism
 * guarantee.  Runs schemes sequentially with `workers` threads per sampler
 * call (use 1 for the sequential-multiplier contract). */
CsvTable measure_compute_accounting(const ExperimentConfig& cfg, const DenoiserNetwork& net,
                                    RewardOracle& reward, std::int64_t episodes, int workers);

// ---------------------------------------------------------------------------
// Stages.  Each writes its artifacts and manifest under the run directory and
// returns the one-line summary the CLI prints.
// ---------------------------------------------------------------------------

std::string stage_simulate(const ExperimentConfig& cfg, const RunDir& rd);
std::string stage_train_generator(const ExperimentConfig& cfg, const RunDir& rd,
                                  const ProgressFn& progress = nullptr);
std::string stage_train_worldmodel(const ExperimentConfig& cfg, const RunDir& rd,
                                   const ProgressFn& progress = nullptr);
std::string stage_train_baselines(const ExperimentConfig& cfg, const RunDir& rd,
                                  const ProgressFn& progress = nullptr);
std::string stage_sample(const ExperimentConfig& cfg, const RunDir& rd, std::int64_t clip,
                         bool chunked, int workers);
std::string stage_evaluate(const ExperimentConfig& cfg, const RunDir& rd);
std::string stage_scaling(const ExperimentConfig& cfg, const RunDir& rd, int workers);
std::string stage_compare_samplers(const ExperimentConfig& cfg, const RunDir& rd, int workers);
std::string stage_compare_rewards(const ExperimentConfig& cfg, const RunDir& rd, int workers);
std::string stage_report(const ExperimentConfig& cfg, const RunDir& rd);

}  // namespace wmsteer
