#pragma once

/* Reward-aligned sampling schemes.
 *
 * All schemes target (or greedily chase) the reward-tilted distribution
 *   p*(x0) ∝ p(x0) exp(lambda r(x0)),
 * differing in where compute is spent:
 *
 *   vanilla            one plain reverse solve, no reward involvement;
 *   best_of_n          N independent solves, keep the highest reward;
 *   guidance           the reward gradient, pulled back through the posterior
 *                      mean, is added to the score during the solve;
 *   guided_best_of_n   best-of-N over guided solves;
 *   smc                a particle population reweighted by the running reward
 *                      estimate r(x0|t) and multinomially resampled when the
 *                      effective sample size collapses;
 *   svdd               one trajectory; each transition draws several SDE
 *                      candidates and keeps the one whose lookahead estimate
 *                      scores best (optionally softmax-sampled).
 *
 * Seed discipline: particle i draws all noise from derive_seed(seed, i), so
 * particle i's trajectory is identical no matter how many other particles run
 * or how many workers execute them; SMC resampling and SVDD softmax selection
 * use separate streams.  Reward oracles are only read, never written, so one
 * oracle can serve concurrent particles.
 */

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wmsteer/reward_oracle.hpp"
#include "wmsteer/solver.hpp"
#include "wmsteer/tensor.hpp"

namespace wmsteer {

enum class Scheme { Vanilla, BestOfN, Guidance, GuidedBestOfN, Smc, Svdd };

const char* scheme_name(Scheme s);
Scheme scheme_from_name(const std::string& name);

struct SamplerSpec {
    Scheme scheme = Scheme::Vanilla;
    std::int64_t particles = 1;     // population size for best-of-N / SMC
    double lambda = 1.0;            // tilt strength (SMC weights, SVDD softmax)
    double guidance_scale = 0.0;    // omega_s; 0 disables guidance entirely
    std::int64_t guidance_frequency = 1;  // guide on steps with step % f == 0
    std::int64_t smc_checkpoint_every = 1;  // reweight every k-th transition
    double smc_ess_threshold = 0.5;  // resample when ESS < threshold * N
    std::int64_t svdd_candidates = 4;
    bool svdd_softmax = false;  // sample ~ softmax(lambda r) instead of argmax

    void validate() const;
};

void to_json(nlohmann::json& j, const SamplerSpec& s);
void from_json(const nlohmann::json& j, SamplerSpec& s);

// One row per eventful solver step (guidance attempt or SMC checkpoint);
// uneventful transitions are not recorded.  NaN fields serialize as null.
struct StepTrace {
    std::int64_t step = 0;
    double t = 0.0;
    double reward = std::numeric_limits<double>::quiet_NaN();  // r(x0|t) if computed
    bool guided = false;            // guidance gradient applied at this step
    bool guidance_skipped = false;  // gradient was non-finite and dropped
    double ess = std::numeric_limits<double>::quiet_NaN();  // SMC population ESS
    bool resampled = false;                                 // SMC only
};

void to_json(nlohmann::json& j, const StepTrace& t);

struct Particle {
    Tensor video;
    double reward = std::numeric_limits<double>::quiet_NaN();  // terminal r(x0)
    std::uint64_t seed = 0;   // derived seed of this particle's noise stream
    double log_weight = 0.0;  // SMC: final unnormalized log importance weight
    bool failed = false;      // trajectory diverged or guidance aborted
    std::string failure;
    std::vector<StepTrace> trace;
};

// Honest accounting of what a sampling run actually spent.
struct ComputeStats {
    std::int64_t score_evals = 0;        // score-model evaluations (NFE)
    std::int64_t pullback_evals = 0;     // posterior-mean VJPs for guidance
    std::int64_t reward_evals = 0;       // reward value evaluations
    std::int64_t reward_grad_evals = 0;  // reward gradient evaluations
    double wallclock_sec = 0.0;
    std::int64_t peak_rss_kb = 0;  // process high-water mark after the run
};

void to_json(nlohmann::json& j, const ComputeStats& c);
void from_json(const nlohmann::json& j, ComputeStats& c);

struct ParticleBatch {
    std::vector<Particle> particles;
    std::int64_t selected_index = 0;
    ComputeStats stats;
    std::vector<std::string> notes;  // diagnostics: skipped guidance, ESS collapse

    const Particle& selected() const;
};

/* Runs one sampling scheme end to end against an abstract score model and
 * reward oracle.  Failed particles are kept (flagged) as long as at least one
 * survives; if all fail, or a single-trajectory scheme fails, throws Error.
 * Selection: highest terminal reward (SMC: highest lambda * reward), ties
 * broken by the lowest derived seed.  workers parallelizes independent
 * particle work without changing any result (0 = hardware default). */
ParticleBatch sample(ScoreModel& model, RewardOracle& reward, const SamplerSpec& spec,
                     const SolveOptions& opt, std::uint64_t seed, int workers = 0);

class DenoiserNetwork;
struct GenerationCondition;

/* Chunked autoregressive variant for the trained video generator; supports
 * vanilla / guidance / best_of_n / guided_best_of_n (population schemes over
 * whole clips).  The guidance hook evaluates the reward on the committed
 * prefix concatenated with the current chunk's posterior-mean estimate and
 * keeps only the gradient slice for the current chunk; chunks still shorter
 * than the reward's window are skipped (they count toward the skip budget).
 * With scheme=vanilla the output equals generate_autoregressive run with
 * derive_seed(seed, 0). */
ParticleBatch sample_chunked(const DenoiserNetwork& net, const GenerationCondition& cond,
                             RewardOracle& reward, const SamplerSpec& spec,
                             const SolveOptions& opt, std::uint64_t seed, int workers = 0);

}  // namespace wmsteer
