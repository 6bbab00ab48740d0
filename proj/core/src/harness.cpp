#include "wmsteer/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <utility>

#include "wmsteer/checkpoint.hpp"
#include "wmsteer/config.hpp"
#include "wmsteer/rng.hpp"
#include "wmsteer/stats.hpp"
#include "wmsteer/svgplot.hpp"

namespace fs = std::filesystem;

namespace wmsteer {

namespace {

// Disjoint sub-stream tags hung off the experiment seed.
constexpr std::uint64_t kDataTag = 0x64617461ull;     // training clips
constexpr std::uint64_t kCorruptTag = 0x636f7272ull;  // corrupted clips
constexpr std::uint64_t kGenInitTag = 0x67696e69ull;  // generator weights
constexpr std::uint64_t kWmInitTag = 0x77696e69ull;   // world-model weights
constexpr std::uint64_t kPixInitTag = 0x70696e69ull;  // pixel-predictor weights
constexpr std::uint64_t kProbeInitTag = 0x62696e69ull;
constexpr std::uint64_t kEpisodeTag = 0x65702e00ull;  // evaluation worlds
constexpr std::uint64_t kSampleTag = 0x73616d70ull;   // sampler noise
constexpr std::uint64_t kPairTag = 0x70616972ull;     // held-out AUC pairs
constexpr std::uint64_t kBootTag = 0x626f6f74ull;     // bootstrap resampling

constexpr int kBootResamples = 10000;
constexpr double kBootAlpha = 0.05;

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
    require(out.good(), "failed to write " + path);
}

Tensor slice_frames(const Tensor& video, std::int64_t first, std::int64_t count) {
    const std::int64_t H = video.dim(1), W = video.dim(2);
    Tensor out(Shape{count, H, W});
    std::copy(video.data() + first * H * W, video.data() + (first + count) * H * W, out.data());
    return out;
}

Tensor concat_frames(const Tensor& a, const Tensor& b) {
    const std::int64_t H = a.dim(1), W = a.dim(2);
    Tensor out(Shape{a.dim(0) + b.dim(0), H, W});
    std::copy(a.data(), a.data() + a.numel(), out.data());
    std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
    return out;
}

/* The steering reward sees the observed prefix prepended to the candidate
 * continuation, so windows straddle the boundary and score whether the
 * generated future follows from the observed past (the same geometry the
 * chunked sampler uses for completed chunks). */
class PrefixedReward final : public RewardOracle {
public:
    PrefixedReward(RewardOracle& inner, const Tensor& prefix) : inner_(&inner), prefix_(prefix) {}

    double value(const Tensor& x0) override { return inner_->value(concat_frames(prefix_, x0)); }
    bool differentiable() const override { return inner_->differentiable(); }
    Tensor gradient(const Tensor& x0, double* value) override {
        Tensor g = inner_->gradient(concat_frames(prefix_, x0), value);
        return slice_frames(g, prefix_.dim(0), x0.dim(0));
    }

private:
    RewardOracle* inner_;
    Tensor prefix_;
};

bool nondecreasing(const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] < v[i - 1]) return false;
    return true;
}

std::string rel(const std::string& stage, const std::string& name) { return stage + "/" + name; }

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

StepMode EvalConfig::mode() const {
    if (solver_mode == "ode") return StepMode::Ode;
    if (solver_mode == "sde") return StepMode::Sde;
    fail("eval: solver_mode must be ode or sde, got \"" + solver_mode + "\"");
}

void EvalConfig::validate() const {
    require(clips >= 1, "eval: clips must be >= 1");
    require(solver_steps >= 1, "eval: solver_steps must be >= 1");
    (void)mode();
    require(motion_threshold > 0.0, "eval: motion_threshold must be positive");
    require(cfg_scale >= 0.0 && ctx_scale >= 0.0, "eval: CFG scales must be nonnegative");
    require(compare_particles >= 2, "eval: compare_particles must be >= 2");
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
    j = nlohmann::json{{"clips", c.clips},
                       {"solver_steps", c.solver_steps},
                       {"solver_mode", c.solver_mode},
                       {"motion_threshold", c.motion_threshold},
                       {"cfg_scale", c.cfg_scale},
                       {"ctx_scale", c.ctx_scale},
                       {"compare_particles", c.compare_particles}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
    const EvalConfig d = c;
    c.clips = j.value("clips", d.clips);
    c.solver_steps = j.value("solver_steps", d.solver_steps);
    c.solver_mode = j.value("solver_mode", d.solver_mode);
    c.motion_threshold = j.value("motion_threshold", d.motion_threshold);
    c.cfg_scale = j.value("cfg_scale", d.cfg_scale);
    c.ctx_scale = j.value("ctx_scale", d.ctx_scale);
    c.compare_particles = j.value("compare_particles", d.compare_particles);
}

ExperimentConfig::ExperimentConfig() {
    world.frames = 16;
    world.height = 16;
    world.width = 16;
    generator.frames = 16;
    generator.height = 16;
    generator.width = 16;
    generator.channels = 16;
    generator.blocks = 2;
    generator.time_dim = 16;
    generator_train.epochs = 60;
    worldmodel.frames = 16;
    worldmodel.height = 16;
    worldmodel.width = 16;
    worldmodel_train.epochs = 120;
    worldmodel_train.seed = 7;
    reward.window = 8;
    reward.context = 4;
    reward.stride = 4;
    baseline_train.epochs = 20;
    sampler.lambda = 20.0;
    sampler.guidance_scale = 0.3;
    sampler.smc_checkpoint_every = 2;
    grid_schemes = {"best_of_n", "guided_best_of_n", "smc", "svdd"};
    grid_particles = {1, 2, 4, 8, 16};
}

void ExperimentConfig::validate() const {
    generator.validate();
    worldmodel.validate();
    reward.validate();
    sampler.validate();
    eval.validate();
    require(world.frames == generator.frames && world.height == generator.height &&
                world.width == generator.width,
            "config: world and generator geometry disagree");
    require(worldmodel.frames == generator.frames && worldmodel.height == generator.height &&
                worldmodel.width == generator.width,
            "config: world-model geometry disagrees with the generator");
    require(generator.n_classes == world.n_classes(),
            "config: generator n_classes must match the world's ball-count classes");
    require(reward.window <= generator.chunk_frames,
            "config: reward window must fit in one generated chunk");
    require(reward.window % worldmodel.tubelet == 0 && reward.context % worldmodel.tubelet == 0,
            "config: reward window split must align with the world-model tubelet");
    require(reward.resize == 0, "config: the pixel baseline does not support reward.resize");
    require(reward_kind == "wm" || reward_kind == "pixel" || reward_kind == "probe" ||
                reward_kind == "constant",
            "config: reward.kind must be wm, pixel, probe or constant");
    require(!grid_schemes.empty() && !grid_particles.empty(), "config: empty experiment grid");
    for (const std::string& name : grid_schemes) {
        const Scheme s = scheme_from_name(name);
        require(s == Scheme::BestOfN || s == Scheme::GuidedBestOfN || s == Scheme::Smc ||
                    s == Scheme::Svdd,
                "config: grid scheme \"" + name + "\" has no particle axis");
        if ((s == Scheme::Smc || s == Scheme::Svdd) && eval.mode() == StepMode::Ode)
            fail("config: " + name + " needs the sde solver, set eval.solver_mode=sde");
        if (s == Scheme::GuidedBestOfN)
            require(sampler.guidance_scale > 0.0,
                    "config: guided_best_of_n needs sampler.guidance_scale > 0");
    }
    for (std::size_t i = 0; i < grid_particles.size(); ++i) {
        require(grid_particles[i] >= 1, "config: grid particle counts must be >= 1");
        require(i == 0 || grid_particles[i] > grid_particles[i - 1],
                "config: grid particle counts must be strictly increasing");
    }
    require(train_clips >= 1, "config: train_clips must be >= 1");
    require(probe_clips >= 2, "config: probe_clips must be >= 2");
    require(eval.clips >= 2, "config: eval.clips must be >= 2 for confidence intervals");
    derive_pixel_config(*this).validate();
    derive_probe_config(*this).validate();
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    nlohmann::json reward = c.reward;
    reward["kind"] = c.reward_kind;
    j = nlohmann::json{{"world", c.world},
                       {"generator", c.generator},
                       {"generator_train", c.generator_train},
                       {"worldmodel", c.worldmodel},
                       {"worldmodel_train", c.worldmodel_train},
                       {"reward", reward},
                       {"baseline_train", c.baseline_train},
                       {"sampler", c.sampler},
                       {"grid", {{"schemes", c.grid_schemes}, {"particles", c.grid_particles}}},
                       {"eval", c.eval},
                       {"train_clips", c.train_clips},
                       {"probe_clips", c.probe_clips},
                       {"seed", c.seed},
                       {"out_dir", c.out_dir}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    if (j.contains("world")) j.at("world").get_to(c.world);
    if (j.contains("generator")) j.at("generator").get_to(c.generator);
    if (j.contains("generator_train")) j.at("generator_train").get_to(c.generator_train);
    if (j.contains("worldmodel")) j.at("worldmodel").get_to(c.worldmodel);
    if (j.contains("worldmodel_train")) j.at("worldmodel_train").get_to(c.worldmodel_train);
    if (j.contains("reward")) {
        const nlohmann::json& r = j.at("reward");
        r.get_to(c.reward);
        c.reward_kind = r.value("kind", c.reward_kind);
    }
    if (j.contains("baseline_train")) j.at("baseline_train").get_to(c.baseline_train);
    if (j.contains("sampler")) j.at("sampler").get_to(c.sampler);
    if (j.contains("grid")) {
        const nlohmann::json& g = j.at("grid");
        c.grid_schemes = g.value("schemes", c.grid_schemes);
        c.grid_particles = g.value("particles", c.grid_particles);
    }
    if (j.contains("eval")) j.at("eval").get_to(c.eval);
    c.train_clips = j.value("train_clips", c.train_clips);
    c.probe_clips = j.value("probe_clips", c.probe_clips);
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
}

PixelPredictorConfig derive_pixel_config(const ExperimentConfig& cfg) {
    PixelPredictorConfig pc;
    pc.context = cfg.reward.context;
    pc.horizon = cfg.reward.horizon();
    pc.height = cfg.generator.height;
    pc.width = cfg.generator.width;
    pc.patch = cfg.generator.patch;
    return pc;
}

ProbeConfig derive_probe_config(const ExperimentConfig& cfg) {
    ProbeConfig pc;
    pc.frames = cfg.generator.frames;
    pc.height = cfg.generator.height;
    pc.width = cfg.generator.width;
    pc.patch = cfg.generator.patch;
    pc.tubelet = cfg.worldmodel.tubelet;
    return pc;
}

std::string experiment_hash(const ExperimentConfig& cfg) {
    nlohmann::json j = cfg;
    j.erase("out_dir");  // the same experiment may live under different roots
    const std::uint64_t h = Config(j).fingerprint();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string resolve_out_root(const std::string& out_dir) {
    if (!out_dir.empty()) return out_dir;
    if (const char* env = std::getenv("WMSTEER_OUT"); env != nullptr && *env != '\0') return env;
    return "runs";
}

// ---------------------------------------------------------------------------
// Run directory
// ---------------------------------------------------------------------------

RunDir::RunDir(const ExperimentConfig& cfg) {
    cfg.validate();
    hash_ = experiment_hash(cfg);
    root_ = resolve_out_root(cfg.out_dir) + "/run-" + hash_;
    fs::create_directories(root_);
    write_text(root_ + "/config.json", nlohmann::json(cfg).dump(1) + "\n");
}

std::string RunDir::stage_dir(const std::string& stage) const {
    const std::string dir = root_ + "/" + stage;
    fs::create_directories(dir);
    return dir;
}

std::string RunDir::file(const std::string& stage, const std::string& name) const {
    return stage_dir(stage) + "/" + name;
}

bool RunDir::stage_done(const std::string& stage) const {
    return fs::exists(root_ + "/" + stage + "/manifest.json");
}

void RunDir::finish_stage(const std::string& stage, const nlohmann::json& summary,
                          const std::vector<std::string>& inputs,
                          const std::vector<std::string>& outputs) const {
    const nlohmann::json manifest{{"stage", stage},          {"config_hash", hash_},
                                  {"code_version", kCodeVersion}, {"inputs", inputs},
                                  {"outputs", outputs},      {"summary", summary}};
    write_text(file(stage, "manifest.json"), manifest.dump(1) + "\n");
}

nlohmann::json RunDir::manifest(const std::string& stage) const {
    const std::string path = root_ + "/" + stage + "/manifest.json";
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "stage \"" + stage + "\" has not run (no " + path + ")");
    return nlohmann::json::parse(in);
}

std::string RunDir::artifact(const std::string& stage, const std::string& name,
                             const std::string& producer_cmd) const {
    const std::string path = root_ + "/" + stage + "/" + name;
    if (!fs::exists(path))
        fail("missing artifact " + path + "; run `wmsteer " + producer_cmd + "` first");
    return path;
}

// ---------------------------------------------------------------------------
// CSV tables
// ---------------------------------------------------------------------------

std::string csv_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

void CsvTable::add_row(std::vector<std::string> row) {
    require(row.size() == header.size(), "csv: row width does not match the header");
    rows.push_back(std::move(row));
}

std::string CsvTable::to_string() const {
    std::ostringstream out;
    for (std::size_t c = 0; c < header.size(); ++c)
        out << (c ? "," : "") << header[c];
    out << "\n";
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            require(row[c].find_first_of(",\n\"") == std::string::npos,
                    "csv: cell \"" + row[c] + "\" needs quoting, which this writer avoids");
            out << (c ? "," : "") << row[c];
        }
        out << "\n";
    }
    return out.str();
}

void CsvTable::save(const std::string& path) const { write_text(path, to_string()); }

CsvTable CsvTable::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open csv " + path);
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            fields.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (first) {
            t.header = std::move(fields);
            first = false;
        } else {
            t.add_row(std::move(fields));
        }
    }
    require(!t.header.empty(), "csv " + path + " is empty");
    return t;
}

std::size_t CsvTable::col(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
        if (header[c] == name) return c;
    fail("csv: no column \"" + name + "\"");
}

const std::string& CsvTable::cell(std::size_t row, const std::string& name) const {
    require(row < rows.size(), "csv: row out of range");
    return rows[row][col(name)];
}

double CsvTable::num(std::size_t row, const std::string& name) const {
    return std::stod(cell(row, name));
}

// ---------------------------------------------------------------------------
// Dataset persistence
// ---------------------------------------------------------------------------

void save_dataset(const VideoDataset& data, const std::string& path) {
    Checkpoint ck;
    ck.meta = nlohmann::json{{"kind", "dataset"}, {"labels", data.labels}};
    ck.add("videos", data.videos);
    ck.save(path);
}

VideoDataset load_dataset(const std::string& path) {
    const Checkpoint ck = Checkpoint::load(path);
    require(ck.meta.value("kind", "") == "dataset",
            path + " is not a dataset checkpoint");
    const Tensor* videos = ck.find("videos");
    require(videos != nullptr, "dataset " + path + " has no videos tensor");
    VideoDataset data;
    data.videos = *videos;
    data.labels = ck.meta.at("labels").get<std::vector<int>>();
    require(static_cast<std::int64_t>(data.labels.size()) == data.size(),
            "dataset " + path + " labels do not match the clip count");
    return data;
}

// ---------------------------------------------------------------------------
// Evaluation protocol
// ---------------------------------------------------------------------------

Episode make_episode(const ExperimentConfig& cfg, std::int64_t index) {
    const std::int64_t chunk = cfg.generator.chunk_frames;
    const std::int64_t prefix = cfg.world.frames - chunk;
    const SimResult sim = simulate(
        cfg.world, derive_seed(derive_seed(cfg.seed, kEpisodeTag), static_cast<std::uint64_t>(index)));
    Episode ep;
    ep.prefix = slice_frames(sim.video, 0, prefix);
    ep.truth = slice_frames(sim.video, prefix, chunk);
    ep.label = sim.label;
    return ep;
}

std::uint64_t episode_sample_seed(const ExperimentConfig& cfg, std::int64_t index) {
    return derive_seed(derive_seed(cfg.seed, kSampleTag), static_cast<std::uint64_t>(index));
}

GenerationCondition episode_condition(const ExperimentConfig& cfg, const Episode& ep) {
    GenerationCondition cond;
    cond.label = ep.label;
    cond.cfg_scale = cfg.eval.cfg_scale;
    cond.ctx_scale = cfg.eval.ctx_scale;
    const std::int64_t Tc = cfg.generator.context_frames;
    cond.context = slice_frames(ep.prefix, ep.prefix.dim(0) - Tc, Tc);
    return cond;
}

SolveOptions eval_solve_options(const ExperimentConfig& cfg) {
    SolveOptions opt;
    opt.steps = cfg.eval.solver_steps;
    opt.mode = cfg.eval.mode();
    return opt;
}

SamplerSpec grid_spec(const ExperimentConfig& cfg, const std::string& scheme, std::int64_t n) {
    require(n >= 1, "grid: particle count must be >= 1");
    SamplerSpec spec = cfg.sampler;
    spec.scheme = scheme_from_name(scheme);
    spec.particles = 1;
    switch (spec.scheme) {
        case Scheme::Vanilla:
        case Scheme::Guidance:
            require(n == 1, "grid: scheme \"" + scheme + "\" has no particle axis");
            break;
        case Scheme::BestOfN:
        case Scheme::GuidedBestOfN:
        case Scheme::Smc:
            spec.particles = n;
            break;
        case Scheme::Svdd:
            spec.svdd_candidates = n;
            break;
    }
    spec.validate();
    return spec;
}

RewardBundle load_reward(const ExperimentConfig& cfg, const RunDir& rd, const std::string& kind) {
    RewardBundle b;
    if (kind == "wm") {
        b.wm = std::make_unique<WorldModelBundle>(
            load_worldmodel(rd.artifact("worldmodel", "worldmodel.ckpt", "train-worldmodel")));
        b.oracle = std::make_unique<WmSurpriseReward>(*b.wm, cfg.reward);
    } else if (kind == "pixel") {
        b.pixel = std::make_unique<PixelPredictor>(
            load_pixel_predictor(rd.artifact("baselines", "pixel.ckpt", "train-baseline-rewards")));
        b.oracle = std::make_unique<PixelPredictionReward>(*b.pixel, cfg.reward);
    } else if (kind == "probe") {
        b.probe = std::make_unique<ProbeClassifier>(
            load_probe(rd.artifact("baselines", "probe.ckpt", "train-baseline-rewards")));
        b.oracle = std::make_unique<ProbeReward>(*b.probe);
    } else if (kind == "constant") {
        b.oracle = std::make_unique<ConstantReward>();
    } else {
        fail("unknown reward kind \"" + kind + "\" (wm, pixel, probe, constant)");
    }
    return b;
}

namespace {

// Held-out real/corrupted clip pairs for reward discrimination.
struct PairSet {
    std::vector<Tensor> real;
    std::vector<Tensor> fake;
};

PairSet build_pairs(const ExperimentConfig& cfg, CorruptionKind kind, std::int64_t n_pairs) {
    const std::uint64_t base = derive_seed(cfg.seed, kPairTag);
    PairSet ps;
    ps.real.reserve(static_cast<std::size_t>(n_pairs));
    ps.fake.reserve(static_cast<std::size_t>(n_pairs));
    for (std::int64_t i = 0; i < n_pairs; ++i) {
        SimResult nominal = simulate(cfg.world, derive_seed(base, 2 * static_cast<std::uint64_t>(i)));
        ps.fake.push_back(
            corrupt(nominal, cfg.world, kind, derive_seed(base, 2 * static_cast<std::uint64_t>(i) + 1))
                .video);
        ps.real.push_back(std::move(nominal.video));
    }
    return ps;
}

double pairs_auc(RewardOracle& oracle, const PairSet& ps) {
    std::vector<double> pos, neg;
    pos.reserve(ps.real.size());
    neg.reserve(ps.fake.size());
    for (const Tensor& v : ps.real) pos.push_back(oracle.value(v));
    for (const Tensor& v : ps.fake) neg.push_back(oracle.value(v));
    return mann_whitney_auc(pos, neg);
}

}  // namespace

double reward_auc(RewardOracle& oracle, const ExperimentConfig& cfg, CorruptionKind kind,
                  std::int64_t n_pairs) {
    return pairs_auc(oracle, build_pairs(cfg, kind, n_pairs));
}

EpisodeResult run_episode(const ExperimentConfig& cfg, const DenoiserNetwork& net,
                          RewardOracle& reward, const SamplerSpec& spec, std::int64_t index,
                          int workers) {
    const Episode ep = make_episode(cfg, index);
    DenoiserScoreModel model(net, episode_condition(cfg, ep), cfg.generator.chunk_frames);
    PrefixedReward prefixed(reward, ep.prefix);
    EpisodeResult res;
    res.batch = sample(model, prefixed, spec, eval_solve_options(cfg), episode_sample_seed(cfg, index),
                       workers);
    res.metrics = evaluate(res.batch.selected().video, ep.truth, cfg.eval.motion_threshold);
    return res;
}

// ---------------------------------------------------------------------------
// Shared cell runner for the experiment grids
// ---------------------------------------------------------------------------

namespace {

struct CellResult {
    std::vector<double> aggregates;
    std::vector<double> rewards;
    double mean_score_evals = 0.0;
    double mean_pullback_evals = 0.0;
    double mean_reward_evals = 0.0;
    double mean_grad_evals = 0.0;
};

CellResult run_cell(const ExperimentConfig& cfg, const DenoiserNetwork& net, RewardOracle& reward,
                    const SamplerSpec& spec, int workers, CsvTable* scores,
                    const std::string& scheme, std::int64_t n) {
    CellResult cell;
    for (std::int64_t e = 0; e < cfg.eval.clips; ++e) {
        const EpisodeResult res = run_episode(cfg, net, reward, spec, e, workers);
        const Particle& best = res.batch.selected();
        cell.aggregates.push_back(res.metrics.aggregate);
        cell.rewards.push_back(best.reward);
        cell.mean_score_evals += static_cast<double>(res.batch.stats.score_evals);
        cell.mean_pullback_evals += static_cast<double>(res.batch.stats.pullback_evals);
        cell.mean_reward_evals += static_cast<double>(res.batch.stats.reward_evals);
        cell.mean_grad_evals += static_cast<double>(res.batch.stats.reward_grad_evals);
        if (scores != nullptr)
            scores->add_row({scheme, std::to_string(n), std::to_string(e), csv_num(best.reward),
                             csv_num(res.metrics.aggregate), csv_num(res.metrics.spatial_iou),
                             csv_num(res.metrics.spatiotemporal_iou),
                             csv_num(res.metrics.weighted_iou), csv_num(res.metrics.mse),
                             std::to_string(res.batch.stats.score_evals),
                             std::to_string(res.batch.stats.reward_evals)});
    }
    const double inv = 1.0 / static_cast<double>(cfg.eval.clips);
    cell.mean_score_evals *= inv;
    cell.mean_pullback_evals *= inv;
    cell.mean_reward_evals *= inv;
    cell.mean_grad_evals *= inv;
    return cell;
}

DenoiserNetwork load_run_generator(const RunDir& rd) {
    return load_generator(rd.artifact("generator", "generator.ckpt", "train-generator"));
}

CsvTable train_log_table(const TrainReport& report) {
    CsvTable t;
    t.header = {"epoch", "loss"};
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e)
        t.add_row({std::to_string(e), csv_num(report.epoch_loss[e])});
    return t;
}

std::string geometry_str(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << cfg.world.frames << "f " << cfg.world.height << "x" << cfg.world.width;
    return out.str();
}

}  // namespace

CsvTable measure_compute_accounting(const ExperimentConfig& cfg, const DenoiserNetwork& net,
                                    RewardOracle& reward, std::int64_t episodes, int workers) {
    require(episodes >= 1, "accounting: episodes must be >= 1");
    const std::int64_t N = cfg.eval.compare_particles;
    const std::vector<std::pair<std::string, std::int64_t>> cells = {
        {"vanilla", 1}, {"best_of_n", N},       {"guidance", 1},
        {"guided_best_of_n", N}, {"smc", N},    {"svdd", N}};

    // Episodes are prepared outside the timed region so the measurements
    // cover sampling alone.
    std::vector<Episode> eps;
    std::vector<GenerationCondition> conds;
    for (std::int64_t e = 0; e < episodes; ++e) {
        eps.push_back(make_episode(cfg, e));
        conds.push_back(episode_condition(cfg, eps.back()));
    }
    const SolveOptions opt = eval_solve_options(cfg);

    CsvTable t;
    t.header = {"scheme",       "n",           "clips",        "workers",
                "score_evals",  "pullback_evals", "reward_evals", "reward_grad_evals",
                "wallclock_sec", "ms_per_clip", "time_multiplier", "peak_rss_kb"};
    double vanilla_sec = 0.0;
    for (const auto& [scheme, n] : cells) {
        const SamplerSpec spec = grid_spec(cfg, scheme, n);
        ComputeStats agg;
        const auto t0 = std::chrono::steady_clock::now();
        for (std::int64_t e = 0; e < episodes; ++e) {
            DenoiserScoreModel model(net, conds[static_cast<std::size_t>(e)],
                                     cfg.generator.chunk_frames);
            PrefixedReward prefixed(reward, eps[static_cast<std::size_t>(e)].prefix);
            const ParticleBatch batch =
                sample(model, prefixed, spec, opt, episode_sample_seed(cfg, e), workers);
            agg.score_evals += batch.stats.score_evals;
            agg.pullback_evals += batch.stats.pullback_evals;
            agg.reward_evals += batch.stats.reward_evals;
            agg.reward_grad_evals += batch.stats.reward_grad_evals;
            agg.peak_rss_kb = std::max(agg.peak_rss_kb, batch.stats.peak_rss_kb);
        }
        const double sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (scheme == "vanilla") vanilla_sec = sec;
        t.add_row({scheme, std::to_string(n), std::to_string(episodes), std::to_string(workers),
                   std::to_string(agg.score_evals), std::to_string(agg.pullback_evals),
                   std::to_string(agg.reward_evals), std::to_string(agg.reward_grad_evals),
                   csv_num(sec), csv_num(1000.0 * sec / static_cast<double>(episodes)),
                   csv_num(vanilla_sec > 0.0 ? sec / vanilla_sec : 1.0),
                   std::to_string(agg.peak_rss_kb)});
    }
    return t;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

std::string stage_simulate(const ExperimentConfig& cfg, const RunDir& rd) {
    const VideoDataset train =
        simulate_dataset(cfg.world, cfg.train_clips, derive_seed(cfg.seed, kDataTag));
    const VideoDataset corrupted =
        corrupt_dataset(cfg.world, cfg.train_clips, derive_seed(cfg.seed, kCorruptTag));
    save_dataset(train, rd.file("data", "train.ckpt"));
    save_dataset(corrupted, rd.file("data", "corrupt.ckpt"));
    double mean_pixel = 0.0;
    for (std::int64_t i = 0; i < train.videos.numel(); ++i) mean_pixel += train.videos.data()[i];
    mean_pixel /= static_cast<double>(train.videos.numel());
    rd.finish_stage("data",
                    {{"train_clips", cfg.train_clips},
                     {"corrupt_clips", cfg.train_clips},
                     {"mean_pixel", mean_pixel}},
                    {}, {rel("data", "train.ckpt"), rel("data", "corrupt.ckpt")});
    std::ostringstream out;
    out << "simulate-data: " << cfg.train_clips << " train + " << cfg.train_clips
        << " corrupted clips (" << geometry_str(cfg) << ") -> " << rd.stage_dir("data");
    return out.str();
}

std::string stage_train_generator(const ExperimentConfig& cfg, const RunDir& rd,
                                  const ProgressFn& progress) {
    const VideoDataset data =
        load_dataset(rd.artifact("data", "train.ckpt", "simulate-data"));
    DenoiserNetwork net(cfg.generator, derive_seed(cfg.seed, kGenInitTag));
    const TrainReport report = train_generator(net, data, cfg.generator_train, progress);
    save_generator(net, rd.file("generator", "generator.ckpt"));
    train_log_table(report).save(rd.file("generator", "train_log.csv"));
    rd.finish_stage("generator",
                    {{"epochs", cfg.generator_train.epochs},
                     {"steps", report.steps},
                     {"final_loss", report.epoch_loss.back()}},
                    {rel("data", "train.ckpt")},
                    {rel("generator", "generator.ckpt"), rel("generator", "train_log.csv")});
    std::ostringstream out;
    out << "train-generator: " << report.steps << " steps, final loss "
        << csv_num(report.epoch_loss.back()) << " (" << csv_num(report.wallclock_sec) << "s) -> "
        << rd.file("generator", "generator.ckpt");
    return out.str();
}

std::string stage_train_worldmodel(const ExperimentConfig& cfg, const RunDir& rd,
                                   const ProgressFn& progress) {
    const VideoDataset data =
        load_dataset(rd.artifact("data", "train.ckpt", "simulate-data"));
    WorldModelBundle wm(cfg.worldmodel, derive_seed(cfg.seed, kWmInitTag));
    const TrainReport report = train_worldmodel(wm, data, cfg.worldmodel_train, progress);
    save_worldmodel(wm, rd.file("worldmodel", "worldmodel.ckpt"));
    train_log_table(report).save(rd.file("worldmodel", "train_log.csv"));
    rd.finish_stage("worldmodel",
                    {{"epochs", cfg.worldmodel_train.epochs},
                     {"steps", report.steps},
                     {"final_loss", report.epoch_loss.back()}},
                    {rel("data", "train.ckpt")},
                    {rel("worldmodel", "worldmodel.ckpt"), rel("worldmodel", "train_log.csv")});
    std::ostringstream out;
    out << "train-worldmodel: " << report.steps << " steps, final loss "
        << csv_num(report.epoch_loss.back()) << " (" << csv_num(report.wallclock_sec) << "s) -> "
        << rd.file("worldmodel", "worldmodel.ckpt");
    return out.str();
}

std::string stage_train_baselines(const ExperimentConfig& cfg, const RunDir& rd,
                                  const ProgressFn& progress) {
    const VideoDataset data =
        load_dataset(rd.artifact("data", "train.ckpt", "simulate-data"));
    const VideoDataset corrupted =
        load_dataset(rd.artifact("data", "corrupt.ckpt", "simulate-data"));

    PixelPredictor pixel(derive_pixel_config(cfg), derive_seed(cfg.seed, kPixInitTag));
    const TrainReport pixel_report =
        train_pixel_predictor(pixel, data, cfg.baseline_train, progress);
    save_pixel_predictor(pixel, rd.file("baselines", "pixel.ckpt"));
    train_log_table(pixel_report).save(rd.file("baselines", "pixel_log.csv"));

    ProbeClassifier probe(derive_probe_config(cfg), derive_seed(cfg.seed, kProbeInitTag));
    const TrainReport probe_report =
        train_probe(probe, data, corrupted, cfg.baseline_train, progress);
    save_probe(probe, rd.file("baselines", "probe.ckpt"));
    train_log_table(probe_report).save(rd.file("baselines", "probe_log.csv"));

    rd.finish_stage("baselines",
                    {{"pixel_final_loss", pixel_report.epoch_loss.back()},
                     {"probe_final_loss", probe_report.epoch_loss.back()},
                     {"epochs", cfg.baseline_train.epochs}},
                    {rel("data", "train.ckpt"), rel("data", "corrupt.ckpt")},
                    {rel("baselines", "pixel.ckpt"), rel("baselines", "pixel_log.csv"),
                     rel("baselines", "probe.ckpt"), rel("baselines", "probe_log.csv")});
    std::ostringstream out;
    out << "train-baseline-rewards: pixel loss " << csv_num(pixel_report.epoch_loss.back())
        << ", probe loss " << csv_num(probe_report.epoch_loss.back()) << " -> "
        << rd.stage_dir("baselines");
    return out.str();
}

std::string stage_sample(const ExperimentConfig& cfg, const RunDir& rd, std::int64_t clip,
                         bool chunked, int workers) {
    require(clip >= 0, "sample: clip index must be >= 0");
    const DenoiserNetwork net = load_run_generator(rd);
    RewardBundle reward = load_reward(cfg, rd, cfg.reward_kind);
    const Episode ep = make_episode(cfg, clip);
    const std::uint64_t seed = episode_sample_seed(cfg, clip);

    ParticleBatch batch;
    MetricsReport metrics;
    if (chunked) {
        GenerationCondition cond;
        cond.label = ep.label;
        cond.cfg_scale = cfg.eval.cfg_scale;
        batch = sample_chunked(net, cond, *reward.oracle, cfg.sampler, eval_solve_options(cfg),
                               seed, workers);
    } else {
        DenoiserScoreModel model(net, episode_condition(cfg, ep), cfg.generator.chunk_frames);
        PrefixedReward prefixed(*reward.oracle, ep.prefix);
        batch = sample(model, prefixed, cfg.sampler, eval_solve_options(cfg), seed, workers);
        metrics = evaluate(batch.selected().video, ep.truth, cfg.eval.motion_threshold);
    }
    const Particle& best = batch.selected();

    Checkpoint ck;
    ck.meta = nlohmann::json{{"kind", "sample"},
                             {"spec", cfg.sampler},
                             {"reward_kind", cfg.reward_kind},
                             {"clip", clip},
                             {"label", ep.label},
                             {"seed", seed},
                             {"chunked", chunked},
                             {"selected_index", batch.selected_index},
                             {"reward", best.reward},
                             {"notes", batch.notes}};
    if (!chunked) {
        ck.meta["metrics"] = nlohmann::json{{"spatial_iou", metrics.spatial_iou},
                                            {"spatiotemporal_iou", metrics.spatiotemporal_iou},
                                            {"weighted_iou", metrics.weighted_iou},
                                            {"mse", metrics.mse},
                                            {"aggregate", metrics.aggregate}};
        ck.add("prefix", ep.prefix);
        ck.add("truth", ep.truth);
    }
    ck.add("video", best.video);
    ck.save(rd.file("sample", "video.ckpt"));

    std::ostringstream trace;
    nlohmann::json head{{"type", "header"},
                        {"config_hash", rd.hash()},
                        {"spec", cfg.sampler},
                        {"reward_kind", cfg.reward_kind},
                        {"clip", clip},
                        {"seed", seed},
                        {"chunked", chunked}};
    trace << head.dump() << "\n";
    for (std::size_t p = 0; p < batch.particles.size(); ++p) {
        for (const StepTrace& st : batch.particles[p].trace) {
            nlohmann::json row = st;
            row["type"] = "step";
            row["particle"] = p;
            trace << row.dump() << "\n";
        }
    }
    std::vector<double> rewards;
    for (const Particle& p : batch.particles) rewards.push_back(p.reward);
    nlohmann::json stats = batch.stats;
    stats.erase("wallclock_sec");  // keep the trace byte-deterministic
    stats.erase("peak_rss_kb");
    const nlohmann::json tail{{"type", "result"},
                              {"selected", batch.selected_index},
                              {"rewards", rewards},
                              {"notes", batch.notes},
                              {"stats", stats}};
    trace << tail.dump() << "\n";
    write_text(rd.file("sample", "trace.jsonl"), trace.str());

    nlohmann::json summary{{"scheme", scheme_name(cfg.sampler.scheme)},
                           {"reward", best.reward},
                           {"clip", clip},
                           {"chunked", chunked}};
    if (!chunked) summary["aggregate"] = metrics.aggregate;
    rd.finish_stage("sample", summary,
                    {rel("generator", "generator.ckpt")},
                    {rel("sample", "video.ckpt"), rel("sample", "trace.jsonl")});
    std::ostringstream out;
    out << "sample: scheme=" << scheme_name(cfg.sampler.scheme) << " reward="
        << csv_num(best.reward);
    if (!chunked) out << " aggregate=" << csv_num(metrics.aggregate);
    out << " -> " << rd.file("sample", "video.ckpt");
    return out.str();
}

std::string stage_evaluate(const ExperimentConfig& cfg, const RunDir& rd) {
    const DenoiserNetwork net = load_run_generator(rd);
    ConstantReward no_reward;
    const SamplerSpec vanilla = grid_spec(cfg, "vanilla", 1);

    CsvTable t;
    t.header = {"episode", "label",        "spatial_iou", "spatiotemporal_iou",
                "weighted_iou", "mse",     "aggregate"};
    std::vector<double> aggregates;
    for (std::int64_t e = 0; e < cfg.eval.clips; ++e) {
        const Episode ep = make_episode(cfg, e);
        const EpisodeResult res = run_episode(cfg, net, no_reward, vanilla, e, /*workers=*/1);
        t.add_row({std::to_string(e), std::to_string(ep.label), csv_num(res.metrics.spatial_iou),
                   csv_num(res.metrics.spatiotemporal_iou), csv_num(res.metrics.weighted_iou),
                   csv_num(res.metrics.mse), csv_num(res.metrics.aggregate)});
        aggregates.push_back(res.metrics.aggregate);
    }
    t.save(rd.file("evaluate", "metrics.csv"));
    const BootstrapCI ci = bootstrap_mean_ci(aggregates, kBootResamples, kBootAlpha,
                                             derive_seed(cfg.seed, kBootTag));
    rd.finish_stage("evaluate",
                    {{"clips", cfg.eval.clips},
                     {"mean_aggregate", ci.mean},
                     {"aggregate_lo", ci.lo},
                     {"aggregate_hi", ci.hi}},
                    {rel("generator", "generator.ckpt")}, {rel("evaluate", "metrics.csv")});
    std::ostringstream out;
    out << "evaluate: " << cfg.eval.clips << " clips, vanilla aggregate " << csv_num(ci.mean)
        << " [" << csv_num(ci.lo) << ", " << csv_num(ci.hi) << "] -> "
        << rd.file("evaluate", "metrics.csv");
    return out.str();
}

std::string stage_scaling(const ExperimentConfig& cfg, const RunDir& rd, int workers) {
    const DenoiserNetwork net = load_run_generator(rd);
    RewardBundle reward = load_reward(cfg, rd, cfg.reward_kind);
    const std::uint64_t boot = derive_seed(derive_seed(cfg.seed, kBootTag), 1);

    CsvTable scores;
    scores.header = {"scheme", "n",        "episode",      "reward", "aggregate",
                     "spatial_iou", "spatiotemporal_iou", "weighted_iou", "mse",
                     "score_evals", "reward_evals"};
    CsvTable curve;
    curve.header = {"scheme",        "n",         "clips",       "mean_aggregate",
                    "aggregate_lo",  "aggregate_hi", "median_aggregate", "mean_reward",
                    "reward_lo",     "reward_hi", "mean_score_evals",  "monotone_in_n"};
    CsvTable kdes;
    kdes.header = {"scheme", "n", "x", "density"};

    Figure fig_curve, fig_reward, fig_kde;
    std::uint64_t boot_counter = 0;
    for (const std::string& scheme : cfg.grid_schemes) {
        struct Row {
            std::int64_t n;
            BootstrapCI agg, rew;
            double median, score_evals;
        };
        std::vector<Row> rows;
        for (std::int64_t n : cfg.grid_particles) {
            const CellResult cell = run_cell(cfg, net, *reward.oracle, grid_spec(cfg, scheme, n),
                                             workers, &scores, scheme, n);
            Row row;
            row.n = n;
            row.agg = bootstrap_mean_ci(cell.aggregates, kBootResamples, kBootAlpha,
                                        derive_seed(boot, boot_counter++));
            row.rew = bootstrap_mean_ci(cell.rewards, kBootResamples, kBootAlpha,
                                        derive_seed(boot, boot_counter++));
            row.median = vec_median(cell.aggregates);
            row.score_evals = cell.mean_score_evals;
            rows.push_back(row);

            const Kde kde = gaussian_kde(cell.aggregates);
            for (std::size_t i = 0; i < kde.grid.size(); ++i)
                kdes.add_row({scheme, std::to_string(n), csv_num(kde.grid[i]),
                              csv_num(kde.density[i])});
            if (n == cfg.grid_particles.back())
                fig_kde.add_line(scheme, kde.grid, kde.density);
            std::fprintf(stderr, "[scaling] %s N=%lld: aggregate %.2f [%.2f, %.2f]\n",
                         scheme.c_str(), static_cast<long long>(n), row.agg.mean, row.agg.lo,
                         row.agg.hi);
        }
        std::vector<double> means, xs, lo, hi, rmeans, rlo, rhi;
        for (const Row& r : rows) {
            xs.push_back(static_cast<double>(r.n));
            means.push_back(r.agg.mean);
            lo.push_back(r.agg.lo);
            hi.push_back(r.agg.hi);
            rmeans.push_back(r.rew.mean);
            rlo.push_back(r.rew.lo);
            rhi.push_back(r.rew.hi);
        }
        const bool monotone = nondecreasing(means);
        for (const Row& r : rows)
            curve.add_row({scheme, std::to_string(r.n), std::to_string(cfg.eval.clips),
                           csv_num(r.agg.mean), csv_num(r.agg.lo), csv_num(r.agg.hi),
                           csv_num(r.median), csv_num(r.rew.mean), csv_num(r.rew.lo),
                           csv_num(r.rew.hi), csv_num(r.score_evals), monotone ? "1" : "0"});
        fig_curve.add_band(scheme, xs, means, lo, hi).points = true;
        fig_reward.add_band(scheme, xs, rmeans, rlo, rhi).points = true;
    }
    scores.save(rd.file("scaling", "scaling_scores.csv"));
    curve.save(rd.file("scaling", "scaling_curve.csv"));
    kdes.save(rd.file("scaling", "scaling_kde.csv"));

    fig_curve.title = "Particle scaling (aggregate score)";
    fig_curve.xlabel = "particles N";
    fig_curve.ylabel = "aggregate score";
    fig_curve.log_x = true;
    save_svg(fig_curve, rd.file("scaling", "scaling_curve.svg"));
    fig_reward.title = "Particle scaling (selected reward)";
    fig_reward.xlabel = "particles N";
    fig_reward.ylabel = "selected reward";
    fig_reward.log_x = true;
    save_svg(fig_reward, rd.file("scaling", "scaling_reward.svg"));
    fig_kde.title = "Score distribution at N=" + std::to_string(cfg.grid_particles.back());
    fig_kde.xlabel = "aggregate score";
    fig_kde.ylabel = "density";
    save_svg(fig_kde, rd.file("scaling", "scaling_kde.svg"));

    rd.finish_stage("scaling",
                    {{"schemes", cfg.grid_schemes},
                     {"particles", cfg.grid_particles},
                     {"clips", cfg.eval.clips}},
                    {rel("generator", "generator.ckpt")},
                    {rel("scaling", "scaling_scores.csv"), rel("scaling", "scaling_curve.csv"),
                     rel("scaling", "scaling_kde.csv"), rel("scaling", "scaling_curve.svg"),
                     rel("scaling", "scaling_reward.svg"), rel("scaling", "scaling_kde.svg")});
    std::ostringstream out;
    out << "scaling-curve: " << cfg.grid_schemes.size() << " schemes x " << cfg.grid_particles.size()
        << " particle counts x " << cfg.eval.clips << " clips -> "
        << rd.file("scaling", "scaling_curve.csv");
    return out.str();
}

std::string stage_compare_samplers(const ExperimentConfig& cfg, const RunDir& rd, int workers) {
    const DenoiserNetwork net = load_run_generator(rd);
    RewardBundle reward = load_reward(cfg, rd, cfg.reward_kind);
    require(reward.oracle->differentiable(),
            "compare-samplers includes guided schemes; reward.kind must be differentiable (wm)");
    const std::int64_t N = cfg.eval.compare_particles;
    const std::uint64_t boot = derive_seed(derive_seed(cfg.seed, kBootTag), 2);

    const std::vector<std::pair<std::string, std::int64_t>> cells = {
        {"vanilla", 1}, {"best_of_n", N},       {"guidance", 1},
        {"guided_best_of_n", N}, {"smc", N},    {"svdd", N}};

    CsvTable t;
    t.header = {"scheme",        "n",         "clips",       "mean_aggregate",
                "aggregate_lo",  "aggregate_hi", "median_aggregate", "mean_reward",
                "reward_lo",     "reward_hi", "mean_score_evals",  "mean_pullback_evals",
                "mean_reward_evals", "mean_reward_grad_evals"};
    Figure fig;
    std::uint64_t boot_counter = 0;
    for (const auto& [scheme, n] : cells) {
        const CellResult cell = run_cell(cfg, net, *reward.oracle, grid_spec(cfg, scheme, n),
                                         workers, nullptr, scheme, n);
        const BootstrapCI agg = bootstrap_mean_ci(cell.aggregates, kBootResamples, kBootAlpha,
                                                  derive_seed(boot, boot_counter++));
        const BootstrapCI rew = bootstrap_mean_ci(cell.rewards, kBootResamples, kBootAlpha,
                                                  derive_seed(boot, boot_counter++));
        t.add_row({scheme, std::to_string(n), std::to_string(cfg.eval.clips), csv_num(agg.mean),
                   csv_num(agg.lo), csv_num(agg.hi), csv_num(vec_median(cell.aggregates)),
                   csv_num(rew.mean), csv_num(rew.lo), csv_num(rew.hi),
                   csv_num(cell.mean_score_evals), csv_num(cell.mean_pullback_evals),
                   csv_num(cell.mean_reward_evals), csv_num(cell.mean_grad_evals)});
        Series& s = fig.add_scatter(scheme, {cell.mean_score_evals}, {agg.mean});
        s.lo = {agg.lo};
        s.hi = {agg.hi};
        std::fprintf(stderr, "[samplers] %s N=%lld: aggregate %.2f [%.2f, %.2f]\n", scheme.c_str(),
                     static_cast<long long>(n), agg.mean, agg.lo, agg.hi);
    }
    t.save(rd.file("samplers", "sampler_table.csv"));

    fig.title = "Quality vs compute at N=" + std::to_string(N);
    fig.xlabel = "score-model evaluations per clip";
    fig.ylabel = "aggregate score";
    fig.log_x = true;
    save_svg(fig, rd.file("samplers", "compute_quality.svg"));

    const CsvTable accounting =
        measure_compute_accounting(cfg, net, *reward.oracle, /*episodes=*/64, workers);
    accounting.save(rd.file("samplers", "compute_accounting.csv"));

    rd.finish_stage("samplers",
                    {{"compare_particles", N}, {"clips", cfg.eval.clips}},
                    {rel("generator", "generator.ckpt")},
                    {rel("samplers", "sampler_table.csv"),
                     rel("samplers", "compute_accounting.csv"),
                     rel("samplers", "compute_quality.svg")});
    std::ostringstream out;
    out << "compare-samplers: 6 schemes at N=" << N << " over " << cfg.eval.clips << " clips -> "
        << rd.file("samplers", "sampler_table.csv");
    return out.str();
}

std::string stage_compare_rewards(const ExperimentConfig& cfg, const RunDir& rd, int workers) {
    const DenoiserNetwork net = load_run_generator(rd);
    const std::int64_t N = cfg.eval.compare_particles;
    const std::uint64_t boot = derive_seed(derive_seed(cfg.seed, kBootTag), 3);

    // The unsteered baseline is reward-independent: one pass serves as the
    // paired reference for every oracle's gain.
    ConstantReward no_reward;
    const CellResult vanilla = run_cell(cfg, net, no_reward, grid_spec(cfg, "vanilla", 1), workers,
                                        nullptr, "vanilla", 1);
    std::uint64_t boot_counter = 0;
    const BootstrapCI vanilla_ci = bootstrap_mean_ci(vanilla.aggregates, kBootResamples, kBootAlpha,
                                                     derive_seed(boot, boot_counter++));

    CsvTable t;
    t.header = {"reward",       "n",      "clips",   "mean_aggregate", "aggregate_lo",
                "aggregate_hi", "mean_gain", "gain_lo", "gain_hi",     "mean_selected_reward"};
    t.add_row({"vanilla", "1", std::to_string(cfg.eval.clips), csv_num(vanilla_ci.mean),
               csv_num(vanilla_ci.lo), csv_num(vanilla_ci.hi), "0", "0", "0", "0"});

    CsvTable auc;
    auc.header = {"reward", "corruption", "auc", "pairs"};
    Figure fig;
    const std::vector<std::string> kinds = {"wm", "pixel", "probe", "constant"};

    // Corruption pair sets are shared across oracles.
    std::vector<PairSet> pairs;
    for (int k = 0; k < kNumCorruptions; ++k)
        pairs.push_back(build_pairs(cfg, static_cast<CorruptionKind>(k), cfg.probe_clips));

    for (const std::string& kind : kinds) {
        RewardBundle reward = load_reward(cfg, rd, kind);
        const CellResult cell = run_cell(cfg, net, *reward.oracle, grid_spec(cfg, "best_of_n", N),
                                         workers, nullptr, kind, N);
        std::vector<double> gains;
        for (std::size_t e = 0; e < cell.aggregates.size(); ++e)
            gains.push_back(cell.aggregates[e] - vanilla.aggregates[e]);
        const BootstrapCI agg = bootstrap_mean_ci(cell.aggregates, kBootResamples, kBootAlpha,
                                                  derive_seed(boot, boot_counter++));
        const BootstrapCI gain = bootstrap_mean_ci(gains, kBootResamples, kBootAlpha,
                                                   derive_seed(boot, boot_counter++));
        t.add_row({kind, std::to_string(N), std::to_string(cfg.eval.clips), csv_num(agg.mean),
                   csv_num(agg.lo), csv_num(agg.hi), csv_num(gain.mean), csv_num(gain.lo),
                   csv_num(gain.hi), csv_num(vec_mean(cell.rewards))});

        std::vector<double> xs, ys;
        for (int k = 0; k < kNumCorruptions; ++k) {
            const double a = pairs_auc(*reward.oracle, pairs[static_cast<std::size_t>(k)]);
            auc.add_row({kind, corruption_name(static_cast<CorruptionKind>(k)), csv_num(a),
                         std::to_string(cfg.probe_clips)});
            xs.push_back(static_cast<double>(k));
            ys.push_back(a);
        }
        fig.add_line(kind, xs, ys).points = true;
        std::fprintf(stderr, "[rewards] %s: gain %.2f [%.2f, %.2f]\n", kind.c_str(), gain.mean,
                     gain.lo, gain.hi);
    }
    t.save(rd.file("rewards", "reward_table.csv"));
    auc.save(rd.file("rewards", "reward_auc.csv"));

    fig.title = "Reward discrimination (higher is better)";
    fig.xlabel = "corruption kind (0=teleport 1=mass 2=flicker 3=freeze)";
    fig.ylabel = "real-vs-corrupted AUC";
    save_svg(fig, rd.file("rewards", "reward_auc.svg"));

    rd.finish_stage("rewards",
                    {{"compare_particles", N},
                     {"clips", cfg.eval.clips},
                     {"pairs", cfg.probe_clips}},
                    {rel("generator", "generator.ckpt")},
                    {rel("rewards", "reward_table.csv"), rel("rewards", "reward_auc.csv"),
                     rel("rewards", "reward_auc.svg")});
    std::ostringstream out;
    out << "compare-rewards: 4 reward signals, best-of-" << N << " over " << cfg.eval.clips
        << " clips -> " << rd.file("rewards", "reward_table.csv");
    return out.str();
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

namespace {

std::string md_table(const CsvTable& t) {
    std::ostringstream out;
    out << "|";
    for (const std::string& h : t.header) out << " " << h << " |";
    out << "\n|";
    for (std::size_t c = 0; c < t.header.size(); ++c) out << " --- |";
    out << "\n";
    for (const auto& row : t.rows) {
        out << "|";
        for (const std::string& cell : row) out << " " << cell << " |";
        out << "\n";
    }
    return out.str();
}

// Row index of (scheme at n) in a curve-like table; -1 when absent.
std::ptrdiff_t find_row(const CsvTable& t, const std::string& key_col, const std::string& key,
                        const std::string& n_col, std::int64_t n) {
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        if (t.cell(r, key_col) == key && t.cell(r, n_col) == std::to_string(n))
            return static_cast<std::ptrdiff_t>(r);
    return -1;
}

}  // namespace

std::string stage_report(const ExperimentConfig& cfg, const RunDir& rd) {
    const CsvTable metrics = CsvTable::load(rd.artifact("evaluate", "metrics.csv", "evaluate"));
    const CsvTable curve =
        CsvTable::load(rd.artifact("scaling", "scaling_curve.csv", "scaling-curve"));
    const CsvTable samplers =
        CsvTable::load(rd.artifact("samplers", "sampler_table.csv", "compare-samplers"));
    const CsvTable accounting =
        CsvTable::load(rd.artifact("samplers", "compute_accounting.csv", "compare-samplers"));
    const CsvTable rewards =
        CsvTable::load(rd.artifact("rewards", "reward_table.csv", "compare-rewards"));
    const CsvTable auc = CsvTable::load(rd.artifact("rewards", "reward_auc.csv", "compare-rewards"));

    std::ostringstream md;
    md << "# Steered video generation report\n\n";
    md << "Run `" << rd.hash() << "`, code version " << kCodeVersion << ", reward `"
       << cfg.reward_kind << "`, " << geometry_str(cfg) << " world.\n\n";

    md << "## Unsteered generator\n\n";
    std::vector<double> agg;
    for (std::size_t r = 0; r < metrics.rows.size(); ++r)
        agg.push_back(metrics.num(r, "aggregate"));
    md << "Vanilla sampling over " << metrics.rows.size()
       << " held-out episodes: mean aggregate " << csv_num(vec_mean(agg)) << ", median "
       << csv_num(vec_median(agg)) << ".\n\n";

    md << "## Particle scaling\n\n" << md_table(curve) << "\n";
    const std::int64_t n_lo = cfg.grid_particles.front(), n_hi = cfg.grid_particles.back();
    for (const std::string& scheme : cfg.grid_schemes) {
        const std::ptrdiff_t a = find_row(curve, "scheme", scheme, "n", n_lo);
        const std::ptrdiff_t b = find_row(curve, "scheme", scheme, "n", n_hi);
        if (a < 0 || b < 0) continue;
        const double gap = curve.num(static_cast<std::size_t>(b), "mean_aggregate") -
                           curve.num(static_cast<std::size_t>(a), "mean_aggregate");
        const bool separated = curve.num(static_cast<std::size_t>(b), "aggregate_lo") >
                               curve.num(static_cast<std::size_t>(a), "aggregate_hi");
        md << "- " << scheme << ": N=" << n_hi << " vs N=" << n_lo << " gap " << csv_num(gap)
           << (separated ? " (CI-separated)" : " (CIs overlap)") << ", mean monotone in N: "
           << (curve.cell(static_cast<std::size_t>(b), "monotone_in_n") == "1" ? "yes" : "no")
           << "\n";
    }
    md << "\n![Particle scaling](../scaling/scaling_curve.svg)\n\n"
       << "![Score distributions](../scaling/scaling_kde.svg)\n\n";

    md << "## Sampling schemes at N=" << cfg.eval.compare_particles << "\n\n"
       << md_table(samplers) << "\n";
    {
        auto mean_of = [&](const std::string& scheme) {
            const std::ptrdiff_t r = find_row(samplers, "scheme", scheme, "n",
                                              scheme == "vanilla" || scheme == "guidance"
                                                  ? 1
                                                  : cfg.eval.compare_particles);
            require(r >= 0, "report: sampler table is missing " + scheme);
            return std::make_pair(samplers.num(static_cast<std::size_t>(r), "mean_aggregate"),
                                  std::make_pair(
                                      samplers.num(static_cast<std::size_t>(r), "aggregate_lo"),
                                      samplers.num(static_cast<std::size_t>(r), "aggregate_hi")));
        };
        for (const std::string& scheme : {std::string("best_of_n"), std::string("guided_best_of_n")})
            for (const std::string& other : {std::string("smc"), std::string("svdd")}) {
                const auto a = mean_of(scheme), b = mean_of(other);
                const bool higher = a.first >= b.first;
                const bool overlap =
                    a.second.first <= b.second.second && b.second.first <= a.second.second;
                md << "- " << scheme << " vs " << other << ": "
                   << (higher ? "higher mean" : "lower mean") << " ("
                   << csv_num(a.first) << " vs " << csv_num(b.first) << "), CIs "
                   << (overlap ? "overlap" : "do not overlap") << "\n";
            }
    }
    md << "\n![Quality vs compute](../samplers/compute_quality.svg)\n\n";

    md << "## Compute accounting\n\nTiming columns are measured on this machine and vary "
          "between runs; evaluation counters are exact.\n\n"
       << md_table(accounting) << "\n";

    md << "## Reward signals\n\n" << md_table(rewards) << "\n";
    {
        auto gain_of = [&](const std::string& kind) {
            const std::ptrdiff_t r =
                find_row(rewards, "reward", kind, "n", cfg.eval.compare_particles);
            require(r >= 0, "report: reward table is missing " + kind);
            return rewards.num(static_cast<std::size_t>(r), "mean_gain");
        };
        const double wm = gain_of("wm"), pixel = gain_of("pixel"), probe = gain_of("probe");
        md << "- Best-of-N gains: wm " << csv_num(wm) << ", pixel " << csv_num(pixel)
           << ", probe " << csv_num(probe) << " -> ordering wm >= pixel >= probe "
           << ((wm >= pixel && pixel >= probe) ? "holds" : "violated") << "\n";
    }
    md << "\n### Discrimination AUC (" << cfg.probe_clips << " held-out pairs per corruption)\n\n"
       << md_table(auc) << "\n![Reward discrimination](../rewards/reward_auc.svg)\n";

    write_text(rd.file("report", "report.md"), md.str());
    rd.finish_stage("report", {{"sections", 5}},
                    {rel("evaluate", "metrics.csv"), rel("scaling", "scaling_curve.csv"),
                     rel("samplers", "sampler_table.csv"),
                     rel("samplers", "compute_accounting.csv"),
                     rel("rewards", "reward_table.csv"), rel("rewards", "reward_auc.csv")},
                    {rel("report", "report.md")});
    return "report: -> " + rd.file("report", "report.md");
}

}  // namespace wmsteer
