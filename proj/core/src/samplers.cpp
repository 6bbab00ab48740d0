#include "wmsteer/samplers.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "wmsteer/common.hpp"
#include "wmsteer/generator.hpp"
#include "wmsteer/threadpool.hpp"

namespace wmsteer {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Stream tags for the auxiliary rngs (particle i itself uses derive_seed(seed, i)).
constexpr std::uint64_t kSmcResampleTag = 0x736d6372ull;   // "smcr"
constexpr std::uint64_t kSvddSelectTag = 0x73766473ull;    // "svds"
constexpr std::uint64_t kChunkTag = 0x61720000ull;         // matches generate_autoregressive

std::int64_t process_peak_rss_kb() {
    rusage ru{};
    getrusage(RUSAGE_SELF, &ru);
    return static_cast<std::int64_t>(ru.ru_maxrss);
}

bool all_finite(const Tensor& x) {
    for (std::int64_t i = 0; i < x.numel(); ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

// Per-particle tallies that merge into ComputeStats in particle order, so the
// totals never depend on the worker count.
struct ParticleCost {
    SolveStats solve;
    std::int64_t pullback_evals = 0;
    std::int64_t reward_evals = 0;
    std::int64_t reward_grad_evals = 0;
};

void merge_costs(ParticleBatch& out, const std::vector<ParticleCost>& costs) {
    for (const ParticleCost& c : costs) {
        out.stats.score_evals += c.solve.score_evals;
        out.stats.pullback_evals += c.pullback_evals;
        out.stats.reward_evals += c.reward_evals;
        out.stats.reward_grad_evals += c.reward_grad_evals;
    }
}

// Highest key wins; ties go to the lowest derived seed so the choice never
// depends on traversal order.  NaN keys rank below everything.
std::int64_t select_best(const std::vector<Particle>& ps, const std::vector<double>& keys) {
    std::int64_t best = -1;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(ps.size()); ++i) {
        if (ps[i].failed) continue;
        const double k = std::isnan(keys[i]) ? kNegInf : keys[i];
        if (best < 0) {
            best = i;
            continue;
        }
        const double kb = std::isnan(keys[best]) ? kNegInf : keys[best];
        if (k > kb || (k == kb && ps[i].seed < ps[best].seed)) best = i;
    }
    return best;
}

void check_survivors(const ParticleBatch& out) {
    for (const Particle& p : out.particles)
        if (!p.failed) return;
    std::string last;
    for (const Particle& p : out.particles)
        if (!p.failure.empty()) last = p.failure;
    fail("sample: all " + std::to_string(out.particles.size()) +
         " particle(s) failed; last failure: " + last);
}

/* Gradient-guidance score hook for one particle.  Guidance is attempted on
 * steps with step % frequency == 0 where the schedule's alpha(t) is large
 * enough for a score shift to be meaningful (rect_flow has alpha(1) = 0, so
 * its first step is structurally unguidable and does not count as a skip).
 * Non-finite gradients are dropped and counted; the caller aborts the
 * particle when more than half of the attempts were dropped. */
struct GuidanceState {
    std::int64_t attempted = 0;
    std::int64_t skipped = 0;
    std::string first_failure;
};

ScoreHook make_guidance_hook(ScoreModel& model, RewardOracle& reward, const SamplerSpec& spec,
                             const SolveOptions& opt, ParticleCost& cost, Particle& particle,
                             GuidanceState& gs) {
    if (spec.guidance_scale == 0.0) return nullptr;
    return [&model, &reward, &spec, &opt, &cost, &particle, &gs](const Tensor& x, double t,
                                                                 std::int64_t step) -> Tensor {
        if (step % spec.guidance_frequency != 0) return {};
        if (std::abs(model.schedule().alpha(t)) < 1e-8) return {};
        StepTrace tr;
        tr.step = step;
        tr.t = t;
        gs.attempted += 1;
        Tensor x0 = posterior_mean(model, x, t, opt, &cost.solve);
        double rv = kNan;
        Tensor g = reward.gradient(x0, &rv);
        cost.reward_grad_evals += 1;
        tr.reward = rv;
        if (!all_finite(g)) {
            gs.skipped += 1;
            tr.guidance_skipped = true;
            particle.trace.push_back(tr);
            return {};
        }
        Tensor pulled = model.x0_pullback(x, t, g);
        cost.pullback_evals += 1;
        for (std::int64_t i = 0; i < pulled.numel(); ++i) pulled[i] *= spec.guidance_scale;
        tr.guided = true;
        particle.trace.push_back(tr);
        return pulled;
    };
}

void enforce_skip_budget(const GuidanceState& gs) {
    if (gs.attempted > 0 && 2 * gs.skipped > gs.attempted)
        fail("gradient guidance aborted: " + std::to_string(gs.skipped) + " of " +
             std::to_string(gs.attempted) + " guided steps had non-finite gradients");
}

void note_skips(ParticleBatch& out, std::int64_t particle_index, const GuidanceState& gs) {
    if (gs.skipped == 0) return;
    std::string note = "particle " + std::to_string(particle_index) + ": skipped " +
                       std::to_string(gs.skipped) + "/" + std::to_string(gs.attempted) +
                       " guided steps (non-finite reward gradient)";
    if (!gs.first_failure.empty()) note += "; first failure: " + gs.first_failure;
    out.notes.push_back(note);
}

// vanilla / best_of_n / guidance / guided_best_of_n: independent trajectories.
void run_independent(ScoreModel& model, RewardOracle& reward, const SamplerSpec& spec,
                     const SolveOptions& opt, std::uint64_t seed, int workers, bool guided,
                     ParticleBatch& out) {
    const std::int64_t n = spec.particles;
    out.particles.resize(static_cast<std::size_t>(n));
    std::vector<ParticleCost> costs(static_cast<std::size_t>(n));
    std::vector<GuidanceState> gss(static_cast<std::size_t>(n));
    parallel_for(
        n,
        [&](std::int64_t i) {
            Particle& p = out.particles[static_cast<std::size_t>(i)];
            ParticleCost& cost = costs[static_cast<std::size_t>(i)];
            p.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
            try {
                Rng rng(p.seed);
                ScoreHook hook;
                if (guided)
                    hook = make_guidance_hook(model, reward, spec, opt, cost, p,
                                              gss[static_cast<std::size_t>(i)]);
                p.video = solve(model, opt, rng, &cost.solve, hook, nullptr);
                enforce_skip_budget(gss[static_cast<std::size_t>(i)]);
                p.reward = reward.value(p.video);
                cost.reward_evals += 1;
            } catch (const Error& e) {
                p.failed = true;
                p.failure = e.what();
            }
        },
        workers);
    merge_costs(out, costs);
    for (std::int64_t i = 0; i < n; ++i) note_skips(out, i, gss[static_cast<std::size_t>(i)]);
    check_survivors(out);
    std::vector<double> keys(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        keys[static_cast<std::size_t>(i)] = out.particles[static_cast<std::size_t>(i)].reward;
    out.selected_index = select_best(out.particles, keys);
}

double population_ess(const std::vector<double>& logw) {
    double m = kNegInf;
    for (double w : logw) m = std::max(m, w);
    if (!std::isfinite(m)) return 0.0;
    double s1 = 0.0, s2 = 0.0;
    for (double w : logw) {
        const double e = std::exp(w - m);
        s1 += e;
        s2 += e * e;
    }
    return s1 * s1 / s2;
}

/* Sequential-Monte-Carlo steering.  The population follows the reverse SDE;
 * at checkpoints each particle is reweighted by the change in its reward
 * estimate, log w += lambda * (r(x0|t_now) - r(x0|t_prev)), starting from
 * lambda * r(x0|1), so the final weights tilt the vanilla distribution by
 * exp(lambda r).  When the effective sample size drops below threshold * N
 * the population is multinomially resampled from its own separate stream. */
void run_smc(ScoreModel& model, RewardOracle& reward, const SamplerSpec& spec,
             const SolveOptions& opt, std::uint64_t seed, int workers, ParticleBatch& out) {
    require(opt.mode == StepMode::Sde,
            "smc requires stochastic transitions (solver mode must be sde)");
    const std::int64_t n = spec.particles;
    out.particles.resize(static_cast<std::size_t>(n));
    std::vector<ParticleCost> costs(static_cast<std::size_t>(n));
    std::vector<Tensor> xs(static_cast<std::size_t>(n));
    std::vector<Rng> rngs;
    rngs.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(i));
        out.particles[static_cast<std::size_t>(i)].seed = s;
        rngs.emplace_back(s);
    }
    Rng resample_rng(derive_seed(seed, kSmcResampleTag));
    std::vector<double> logw(static_cast<std::size_t>(n), 0.0);
    std::vector<double> prev(static_cast<std::size_t>(n), 0.0);
    std::int64_t dead = 0;  // particles whose reward went non-finite

    auto reweight = [&](std::int64_t i, double r) {
        const std::size_t ui = static_cast<std::size_t>(i);
        if (std::isfinite(r)) {
            logw[ui] += spec.lambda * (r - prev[ui]);
            prev[ui] = r;
        } else if (logw[ui] != kNegInf) {
            logw[ui] = kNegInf;  // zero weight until resampling replaces it
            dead += 1;
        }
    };

    parallel_for(
        n,
        [&](std::int64_t i) {
            const std::size_t ui = static_cast<std::size_t>(i);
            xs[ui] = normal_tensor(model.sample_shape(), rngs[ui]);
            Tensor x0 = posterior_mean(model, xs[ui], 1.0, opt, &costs[ui].solve);
            prev[ui] = reward.value(x0);
            costs[ui].reward_evals += 1;
        },
        workers);
    for (std::int64_t i = 0; i < n; ++i) {
        const std::size_t ui = static_cast<std::size_t>(i);
        const double r = prev[ui];
        prev[ui] = 0.0;
        reweight(i, r);
        StepTrace tr;
        tr.step = 0;
        tr.t = 1.0;
        tr.reward = r;
        out.particles[ui].trace.push_back(tr);
    }

    const std::int64_t steps = opt.steps;
    std::vector<double> rnow(static_cast<std::size_t>(n), kNan);
    for (std::int64_t k = 0; k < steps; ++k) {
        const double t_hi = 1.0 - static_cast<double>(k) / static_cast<double>(steps);
        const double t_lo = 1.0 - static_cast<double>(k + 1) / static_cast<double>(steps);
        const bool checkpoint = ((k + 1) % spec.smc_checkpoint_every == 0) || (k + 1 == steps);
        parallel_for(
            n,
            [&](std::int64_t i) {
                const std::size_t ui = static_cast<std::size_t>(i);
                xs[ui] = solve_transition(model, xs[ui], t_hi, t_lo, opt, &rngs[ui],
                                          &costs[ui].solve, nullptr, k);
                if (!checkpoint) return;
                // At t=0 the posterior mean is the state itself; skip the
                // extra model evaluation.
                Tensor est = (k + 1 == steps)
                                 ? xs[ui]
                                 : posterior_mean(model, xs[ui], t_lo, opt, &costs[ui].solve);
                rnow[ui] = reward.value(est);
                costs[ui].reward_evals += 1;
            },
            workers);
        if (!checkpoint) continue;
        for (std::int64_t i = 0; i < n; ++i) reweight(i, rnow[static_cast<std::size_t>(i)]);
        const double ess = population_ess(logw);
        require(ess > 0.0, "smc: every particle's reward went non-finite");
        const bool resample = (k + 1 < steps) && ess < spec.smc_ess_threshold * n;
        for (std::int64_t i = 0; i < n; ++i) {
            const std::size_t ui = static_cast<std::size_t>(i);
            StepTrace tr;
            tr.step = k + 1;
            tr.t = t_lo;
            tr.reward = rnow[ui];
            tr.ess = ess;
            tr.resampled = resample;
            out.particles[ui].trace.push_back(tr);
        }
        if (!resample) continue;
        // Multinomial resampling: ancestors drawn iid from the normalized
        // weights, then every weight resets to zero (equal).
        double m = kNegInf;
        for (double w : logw) m = std::max(m, w);
        std::vector<double> cum(static_cast<std::size_t>(n));
        double total = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            total += std::exp(logw[static_cast<std::size_t>(i)] - m);
            cum[static_cast<std::size_t>(i)] = total;
        }
        std::vector<Tensor> nxs(static_cast<std::size_t>(n));
        std::vector<double> nprev(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            const double u = resample_rng.uniform() * total;
            // upper_bound skips zero-width (zero-weight) slots even at u=0
            std::size_t a = static_cast<std::size_t>(
                std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
            if (a >= static_cast<std::size_t>(n)) a = static_cast<std::size_t>(n - 1);
            nxs[static_cast<std::size_t>(i)] = xs[a];
            nprev[static_cast<std::size_t>(i)] = prev[a];
        }
        xs = std::move(nxs);
        prev = std::move(nprev);
        std::fill(logw.begin(), logw.end(), 0.0);
    }

    for (std::int64_t i = 0; i < n; ++i) {
        const std::size_t ui = static_cast<std::size_t>(i);
        Particle& p = out.particles[ui];
        p.video = std::move(xs[ui]);
        p.reward = prev[ui];
        p.log_weight = logw[ui];
    }
    merge_costs(out, costs);
    if (dead > 0)
        out.notes.push_back("smc: " + std::to_string(dead) +
                            " particle reward evaluations were non-finite (zero weight)");
    const double final_ess = population_ess(logw);
    if (n > 1 && final_ess < 1.5)
        out.notes.push_back("smc: final effective sample size " + std::to_string(final_ess) +
                            " of " + std::to_string(n) + " (weights degenerate)");
    std::vector<double> keys(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        keys[static_cast<std::size_t>(i)] =
            spec.lambda * out.particles[static_cast<std::size_t>(i)].reward;
    out.selected_index = select_best(out.particles, keys);
}

/* Value-guided candidate selection: one trajectory whose every SDE transition
 * draws svdd_candidates proposals, scores each by the reward of its lookahead
 * posterior mean, and keeps the argmax (or a softmax(lambda r) draw).  All
 * candidate noise comes from the trajectory stream in candidate order, so
 * candidates=1 reproduces the vanilla SDE trajectory bit for bit. */
void run_svdd(ScoreModel& model, RewardOracle& reward, const SamplerSpec& spec,
              const SolveOptions& opt, std::uint64_t seed, int workers, ParticleBatch& out) {
    require(opt.mode == StepMode::Sde,
            "svdd requires stochastic transitions (solver mode must be sde)");
    const std::int64_t c = spec.svdd_candidates;
    out.particles.resize(1);
    Particle& p = out.particles[0];
    p.seed = derive_seed(seed, 0);
    Rng rng(p.seed);
    Rng select_rng(derive_seed(seed, kSvddSelectTag));
    std::vector<ParticleCost> costs(static_cast<std::size_t>(c));
    std::int64_t nonfinite = 0;

    Tensor x = normal_tensor(model.sample_shape(), rng);
    const std::int64_t steps = opt.steps;
    for (std::int64_t k = 0; k < steps; ++k) {
        const double t_hi = 1.0 - static_cast<double>(k) / static_cast<double>(steps);
        const double t_lo = 1.0 - static_cast<double>(k + 1) / static_cast<double>(steps);
        Tensor x0 = posterior_mean(model, x, t_hi, opt, &costs[0].solve);
        std::vector<Tensor> cands(static_cast<std::size_t>(c));
        for (std::int64_t j = 0; j < c; ++j)
            cands[static_cast<std::size_t>(j)] =
                reverse_step(model.schedule(), x, t_hi, t_lo, x0, StepMode::Sde, &rng);
        std::vector<double> rw(static_cast<std::size_t>(c), kNan);
        parallel_for(
            c,
            [&](std::int64_t j) {
                const std::size_t uj = static_cast<std::size_t>(j);
                Tensor est = (k + 1 == steps) ? cands[uj]
                                              : posterior_mean(model, cands[uj], t_lo, opt,
                                                               &costs[uj].solve);
                rw[uj] = reward.value(est);
                costs[uj].reward_evals += 1;
            },
            workers);
        std::int64_t pick = -1;
        if (c == 1) {
            pick = 0;  // no selection draw, so the stream matches vanilla SDE
        } else if (spec.svdd_softmax) {
            double m = kNegInf;
            for (double r : rw)
                if (std::isfinite(r)) m = std::max(m, spec.lambda * r);
            require(std::isfinite(m), "svdd: all candidate rewards non-finite at step " +
                                          std::to_string(k));
            double total = 0.0;
            std::vector<double> cum(static_cast<std::size_t>(c), 0.0);
            for (std::int64_t j = 0; j < c; ++j) {
                const double r = rw[static_cast<std::size_t>(j)];
                if (std::isfinite(r)) total += std::exp(spec.lambda * r - m);
                else nonfinite += 1;
                cum[static_cast<std::size_t>(j)] = total;
            }
            const double u = select_rng.uniform() * total;
            pick = static_cast<std::int64_t>(std::upper_bound(cum.begin(), cum.end(), u) -
                                             cum.begin());
            if (pick >= c) pick = c - 1;
        } else {
            for (std::int64_t j = 0; j < c; ++j) {
                const double r = rw[static_cast<std::size_t>(j)];
                if (!std::isfinite(r)) {
                    nonfinite += 1;
                    continue;
                }
                if (pick < 0 || r > rw[static_cast<std::size_t>(pick)]) pick = j;
            }
            require(pick >= 0,
                    "svdd: all candidate rewards non-finite at step " + std::to_string(k));
        }
        x = std::move(cands[static_cast<std::size_t>(pick)]);
        StepTrace tr;
        tr.step = k + 1;
        tr.t = t_lo;
        tr.reward = rw[static_cast<std::size_t>(pick)];
        p.trace.push_back(tr);
        if (k + 1 == steps) p.reward = rw[static_cast<std::size_t>(pick)];
    }
    p.video = std::move(x);
    merge_costs(out, costs);
    if (nonfinite > 0)
        out.notes.push_back("svdd: " + std::to_string(nonfinite) +
                            " candidate scores were non-finite");
    out.selected_index = 0;
}

}  // namespace

const char* scheme_name(Scheme s) {
    switch (s) {
        case Scheme::Vanilla: return "vanilla";
        case Scheme::BestOfN: return "best_of_n";
        case Scheme::Guidance: return "guidance";
        case Scheme::GuidedBestOfN: return "guided_best_of_n";
        case Scheme::Smc: return "smc";
        case Scheme::Svdd: return "svdd";
    }
    fail("scheme_name: invalid scheme");
}

Scheme scheme_from_name(const std::string& name) {
    for (Scheme s : {Scheme::Vanilla, Scheme::BestOfN, Scheme::Guidance, Scheme::GuidedBestOfN,
                     Scheme::Smc, Scheme::Svdd})
        if (name == scheme_name(s)) return s;
    fail("unknown sampling scheme '" + name +
         "' (expected vanilla|best_of_n|guidance|guided_best_of_n|smc|svdd)");
}

void SamplerSpec::validate() const {
    require(particles >= 1, "sampler: particles must be >= 1");
    require(std::isfinite(lambda) && lambda >= 0.0, "sampler: lambda must be finite and >= 0");
    require(std::isfinite(guidance_scale) && guidance_scale >= 0.0,
            "sampler: guidance_scale must be finite and >= 0");
    require(guidance_frequency >= 1, "sampler: guidance_frequency must be >= 1");
    require(smc_checkpoint_every >= 1, "sampler: smc_checkpoint_every must be >= 1");
    require(smc_ess_threshold > 0.0 && smc_ess_threshold <= 1.0,
            "sampler: smc_ess_threshold must lie in (0, 1]");
    require(svdd_candidates >= 1, "sampler: svdd_candidates must be >= 1");
    if (scheme == Scheme::Vanilla || scheme == Scheme::Guidance || scheme == Scheme::Svdd)
        require(particles == 1, std::string(scheme_name(scheme)) +
                                    " runs a single trajectory; population schemes are "
                                    "best_of_n, guided_best_of_n and smc");
}

void to_json(nlohmann::json& j, const SamplerSpec& s) {
    j = nlohmann::json{{"scheme", scheme_name(s.scheme)},
                       {"particles", s.particles},
                       {"lambda", s.lambda},
                       {"guidance_scale", s.guidance_scale},
                       {"guidance_frequency", s.guidance_frequency},
                       {"smc_checkpoint_every", s.smc_checkpoint_every},
                       {"smc_ess_threshold", s.smc_ess_threshold},
                       {"svdd_candidates", s.svdd_candidates},
                       {"svdd_softmax", s.svdd_softmax}};
}

void from_json(const nlohmann::json& j, SamplerSpec& s) {
    const SamplerSpec d = s;
    s.scheme = scheme_from_name(j.value("scheme", std::string(scheme_name(d.scheme))));
    s.particles = j.value("particles", d.particles);
    s.lambda = j.value("lambda", d.lambda);
    s.guidance_scale = j.value("guidance_scale", d.guidance_scale);
    s.guidance_frequency = j.value("guidance_frequency", d.guidance_frequency);
    s.smc_checkpoint_every = j.value("smc_checkpoint_every", d.smc_checkpoint_every);
    s.smc_ess_threshold = j.value("smc_ess_threshold", d.smc_ess_threshold);
    s.svdd_candidates = j.value("svdd_candidates", d.svdd_candidates);
    s.svdd_softmax = j.value("svdd_softmax", d.svdd_softmax);
}

void to_json(nlohmann::json& j, const StepTrace& t) {
    j = nlohmann::json{{"step", t.step},
                       {"t", t.t},
                       {"guided", t.guided},
                       {"guidance_skipped", t.guidance_skipped},
                       {"resampled", t.resampled}};
    if (std::isfinite(t.reward)) j["reward"] = t.reward;
    else j["reward"] = nullptr;
    if (std::isfinite(t.ess)) j["ess"] = t.ess;
    else j["ess"] = nullptr;
}

void to_json(nlohmann::json& j, const ComputeStats& c) {
    j = nlohmann::json{{"score_evals", c.score_evals},
                       {"pullback_evals", c.pullback_evals},
                       {"reward_evals", c.reward_evals},
                       {"reward_grad_evals", c.reward_grad_evals},
                       {"wallclock_sec", c.wallclock_sec},
                       {"peak_rss_kb", c.peak_rss_kb}};
}

void from_json(const nlohmann::json& j, ComputeStats& c) {
    const ComputeStats d = c;
    c.score_evals = j.value("score_evals", d.score_evals);
    c.pullback_evals = j.value("pullback_evals", d.pullback_evals);
    c.reward_evals = j.value("reward_evals", d.reward_evals);
    c.reward_grad_evals = j.value("reward_grad_evals", d.reward_grad_evals);
    c.wallclock_sec = j.value("wallclock_sec", d.wallclock_sec);
    c.peak_rss_kb = j.value("peak_rss_kb", d.peak_rss_kb);
}

const Particle& ParticleBatch::selected() const {
    require(selected_index >= 0 &&
                selected_index < static_cast<std::int64_t>(particles.size()),
            "ParticleBatch: no selected particle");
    return particles[static_cast<std::size_t>(selected_index)];
}

ParticleBatch sample(ScoreModel& model, RewardOracle& reward, const SamplerSpec& spec,
                     const SolveOptions& opt, std::uint64_t seed, int workers) {
    spec.validate();
    const bool guided =
        (spec.scheme == Scheme::Guidance || spec.scheme == Scheme::GuidedBestOfN);
    if (guided && spec.guidance_scale > 0.0)
        require(reward.differentiable(),
                "gradient guidance needs a differentiable reward oracle");
    const auto start = std::chrono::steady_clock::now();
    ParticleBatch out;
    switch (spec.scheme) {
        case Scheme::Vanilla:
        case Scheme::BestOfN:
        case Scheme::Guidance:
        case Scheme::GuidedBestOfN:
            run_independent(model, reward, spec, opt, seed, workers, guided, out);
            break;
        case Scheme::Smc:
            run_smc(model, reward, spec, opt, seed, workers, out);
            break;
        case Scheme::Svdd:
            run_svdd(model, reward, spec, opt, seed, workers, out);
            break;
    }
    out.stats.wallclock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.stats.peak_rss_kb = process_peak_rss_kb();
    return out;
}

ParticleBatch sample_chunked(const DenoiserNetwork& net, const GenerationCondition& cond,
                             RewardOracle& reward, const SamplerSpec& spec,
                             const SolveOptions& opt, std::uint64_t seed, int workers) {
    spec.validate();
    require(spec.scheme == Scheme::Vanilla || spec.scheme == Scheme::Guidance ||
                spec.scheme == Scheme::BestOfN || spec.scheme == Scheme::GuidedBestOfN,
            "sample_chunked: chunked generation supports vanilla, guidance and the "
            "best-of-N schemes (smc/svdd are holistic samplers)");
    const bool guided =
        (spec.scheme == Scheme::Guidance || spec.scheme == Scheme::GuidedBestOfN);
    if (guided && spec.guidance_scale > 0.0)
        require(reward.differentiable(),
                "gradient guidance needs a differentiable reward oracle");
    const GeneratorConfig& cfg = net.config();
    require(cond.context.numel() == 0,
            "sample_chunked: context is managed per chunk, leave it empty");
    require(cfg.frames % cfg.chunk_frames == 0,
            "sample_chunked: frames must be a multiple of chunk_frames");
    require(cfg.chunk_frames >= cfg.context_frames,
            "sample_chunked: chunks are shorter than the context they must provide");
    const auto start = std::chrono::steady_clock::now();
    const std::int64_t n_chunks = cfg.frames / cfg.chunk_frames;
    const std::int64_t HW = cfg.height * cfg.width;
    const std::int64_t chunk_px = cfg.chunk_frames * HW;

    ParticleBatch out;
    const std::int64_t n = spec.particles;
    out.particles.resize(static_cast<std::size_t>(n));
    std::vector<ParticleCost> costs(static_cast<std::size_t>(n));
    std::vector<GuidanceState> gss(static_cast<std::size_t>(n));
    parallel_for(
        n,
        [&](std::int64_t i) {
            Particle& p = out.particles[static_cast<std::size_t>(i)];
            ParticleCost& cost = costs[static_cast<std::size_t>(i)];
            GuidanceState& gs = gss[static_cast<std::size_t>(i)];
            p.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
            try {
                Tensor clip(Shape{cfg.frames, cfg.height, cfg.width});
                Tensor tail;
                for (std::int64_t c = 0; c < n_chunks; ++c) {
                    GenerationCondition cc = cond;
                    cc.context = tail;
                    DenoiserScoreModel model(net, cc, cfg.chunk_frames);
                    Rng rng(derive_seed(p.seed, kChunkTag + static_cast<std::uint64_t>(c)));
                    ScoreHook hook;
                    if (guided && spec.guidance_scale > 0.0) {
                        hook = [&, c](const Tensor& x, double t, std::int64_t step) -> Tensor {
                            if (step % spec.guidance_frequency != 0) return {};
                            if (std::abs(model.schedule().alpha(t)) < 1e-8) return {};
                            StepTrace tr;
                            tr.step = c * opt.steps + step;
                            tr.t = t;
                            gs.attempted += 1;
                            Tensor x0c = posterior_mean(model, x, t, opt, &cost.solve);
                            // Reward sees the committed prefix plus this
                            // chunk's estimate; only the chunk slice of the
                            // gradient can still influence the trajectory.
                            Tensor full(
                                Shape{(c + 1) * cfg.chunk_frames, cfg.height, cfg.width});
                            std::copy(clip.data(), clip.data() + c * chunk_px, full.data());
                            std::copy(x0c.data(), x0c.data() + chunk_px,
                                      full.data() + c * chunk_px);
                            double rv = kNan;
                            Tensor g;
                            try {
                                g = reward.gradient(full, &rv);
                                cost.reward_grad_evals += 1;
                            } catch (const Error& e) {
                                gs.skipped += 1;
                                if (gs.first_failure.empty()) gs.first_failure = e.what();
                                tr.guidance_skipped = true;
                                p.trace.push_back(tr);
                                return {};
                            }
                            tr.reward = rv;
                            Tensor gc(Shape{cfg.chunk_frames, cfg.height, cfg.width});
                            std::copy(g.data() + c * chunk_px, g.data() + (c + 1) * chunk_px,
                                      gc.data());
                            if (!all_finite(gc)) {
                                gs.skipped += 1;
                                tr.guidance_skipped = true;
                                p.trace.push_back(tr);
                                return {};
                            }
                            Tensor pulled = model.x0_pullback(x, t, gc);
                            cost.pullback_evals += 1;
                            for (std::int64_t q = 0; q < pulled.numel(); ++q)
                                pulled[q] *= spec.guidance_scale;
                            tr.guided = true;
                            p.trace.push_back(tr);
                            return pulled;
                        };
                    }
                    Tensor chunk = solve(model, opt, rng, &cost.solve, hook, nullptr);
                    std::copy(chunk.data(), chunk.data() + chunk.numel(),
                              clip.data() + c * chunk_px);
                    tail = Tensor(Shape{cfg.context_frames, cfg.height, cfg.width});
                    std::copy(chunk.data() + (cfg.chunk_frames - cfg.context_frames) * HW,
                              chunk.data() + chunk.numel(), tail.data());
                }
                enforce_skip_budget(gs);
                p.video = std::move(clip);
                p.reward = reward.value(p.video);
                cost.reward_evals += 1;
            } catch (const Error& e) {
                p.failed = true;
                p.failure = e.what();
            }
        },
        workers);
    merge_costs(out, costs);
    for (std::int64_t i = 0; i < n; ++i) note_skips(out, i, gss[static_cast<std::size_t>(i)]);
    check_survivors(out);
    std::vector<double> keys(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        keys[static_cast<std::size_t>(i)] = out.particles[static_cast<std::size_t>(i)].reward;
    out.selected_index = select_best(out.particles, keys);
    out.stats.wallclock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.stats.peak_rss_kb = process_peak_rss_kb();
    return out;
}

}  // namespace wmsteer
