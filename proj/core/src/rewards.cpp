#include "wmsteer/rewards.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "wmsteer/checkpoint.hpp"
#include "wmsteer/common.hpp"

namespace wmsteer {

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

void SurpriseConfig::validate() const {
    require(window >= 2, "surprise: window must be >= 2 frames");
    require(context >= 1 && context < window, "surprise: context must lie in [1, window)");
    require(stride >= 1, "surprise: stride must be >= 1");
    require(resize >= 0, "surprise: resize must be >= 0");
}

void to_json(nlohmann::json& j, const SurpriseConfig& c) {
    j = nlohmann::json{
        {"window", c.window}, {"context", c.context}, {"stride", c.stride}, {"resize", c.resize}};
}

void from_json(const nlohmann::json& j, SurpriseConfig& c) {
    const SurpriseConfig d = c;
    c.window = j.value("window", d.window);
    c.context = j.value("context", d.context);
    c.stride = j.value("stride", d.stride);
    c.resize = j.value("resize", d.resize);
}

std::int64_t window_count(std::int64_t frames, const SurpriseConfig& cfg) {
    cfg.validate();
    require(frames >= cfg.window,
            "surprise: clip of " + std::to_string(frames) + " frames is shorter than one window (" +
                std::to_string(cfg.window) + ")");
    return (frames - cfg.window) / cfg.stride + 1;
}

// ---------------------------------------------------------------------------
// World-model surprise reward
// ---------------------------------------------------------------------------

namespace {

// [F,H,W] -> [1,F,H,W] constant or gradient leaf on the tape.
Var video_leaf(Tape& tape, const Tensor& video, bool requires_grad) {
    require(video.shape().size() == 3, "reward: expected video [F,H,W], got " +
                                           shape_str(video.shape()));
    Tensor v4(Shape{1, video.dim(0), video.dim(1), video.dim(2)});
    std::copy(video.data(), video.data() + video.numel(), v4.data());
    return requires_grad ? tape.leaf(std::move(v4), true) : tape.constant(std::move(v4));
}

// Differentiable nearest-neighbour resample of [1,F,H,W] to [1,F,side,side].
Var resize_nearest(Var x, std::int64_t f, std::int64_t h, std::int64_t w, std::int64_t side) {
    std::vector<std::int64_t> rows(static_cast<std::size_t>(f * side * side));
    std::size_t o = 0;
    for (std::int64_t fr = 0; fr < f; ++fr)
        for (std::int64_t y = 0; y < side; ++y) {
            const std::int64_t sy = std::min(h - 1, y * h / side);
            for (std::int64_t xq = 0; xq < side; ++xq) {
                const std::int64_t sx = std::min(w - 1, xq * w / side);
                rows[o++] = (fr * h + sy) * w + sx;
            }
        }
    Var flat = gather_rows(reshape(x, Shape{f * h * w}), std::move(rows));
    return reshape(flat, Shape{1, f, side, side});
}

double wm_reward_impl(const Tensor& video, const WorldModelBundle& wm, const SurpriseConfig& cfg,
                      Tensor* grad_out) {
    cfg.validate();
    const WorldModelConfig& wc = wm.config();
    require(cfg.window % wc.tubelet == 0 && cfg.context % wc.tubelet == 0,
            "surprise: window and context must be multiples of the world-model tubelet");
    require(cfg.window <= wc.frames, "surprise: window exceeds the world-model clip length");

    const std::int64_t F = video.dim(0), H = video.dim(1), W = video.dim(2);
    const std::int64_t K = window_count(F, cfg);
    const std::int64_t side = cfg.resize;
    if (side == 0) {
        require(H == wc.height && W == wc.width,
                "surprise: video " + shape_str(video.shape()) + " does not match the world model");
    } else {
        require(side == wc.height && side == wc.width,
                "surprise: resize target must equal the world-model resolution");
    }

    Tape tape;
    Var x = video_leaf(tape, video, grad_out != nullptr);
    Var frames = side == 0 ? x : resize_nearest(x, F, H, W, side);

    const auto mask = wm.future_mask(cfg.window, cfg.context);
    Var acc;
    for (std::int64_t k = 0; k < K; ++k) {
        Var c = wm.masked_cosine_mean(tape, slice_time(frames, k * cfg.stride, cfg.window), mask);
        acc = k == 0 ? c : add(acc, c);
    }
    Var mean_cos = scale(acc, 1.0 / static_cast<double>(K));
    const double reward = mean_cos.value()[0] - 1.0;  // -(1/K) sum (1 - cos)

    if (grad_out != nullptr) {
        tape.backward(mean_cos);  // the -1 shift has zero derivative
        const Tensor& g = x.grad();
        Tensor out(video.shape());
        std::copy(g.data(), g.data() + g.numel(), out.data());
        *grad_out = std::move(out);
    }
    return reward;
}

}  // namespace

RewardValue wm_reward(const Tensor& video, const WorldModelBundle& wm, const SurpriseConfig& cfg) {
    return {wm_reward_impl(video, wm, cfg, nullptr)};
}

Tensor wm_reward_gradient(const Tensor& video, const WorldModelBundle& wm,
                          const SurpriseConfig& cfg, double* value) {
    Tensor grad;
    const double v = wm_reward_impl(video, wm, cfg, &grad);
    if (value != nullptr) *value = v;
    return grad;
}

// ---------------------------------------------------------------------------
// Pixel-space future predictor
// ---------------------------------------------------------------------------

void PixelPredictorConfig::validate() const {
    require(context >= 1 && horizon >= 1, "pixel predictor: context and horizon must be >= 1");
    require(patch >= 1 && height % patch == 0 && width % patch == 0,
            "pixel predictor: height and width must be multiples of patch");
    require(channels >= 2 && blocks >= 1 && hidden_mult >= 1,
            "pixel predictor: degenerate network");
}

void to_json(nlohmann::json& j, const PixelPredictorConfig& c) {
    j = nlohmann::json{{"context", c.context}, {"horizon", c.horizon},
                       {"height", c.height},   {"width", c.width},
                       {"patch", c.patch},     {"channels", c.channels},
                       {"blocks", c.blocks},   {"hidden_mult", c.hidden_mult}};
}

void from_json(const nlohmann::json& j, PixelPredictorConfig& c) {
    const PixelPredictorConfig d = c;
    c.context = j.value("context", d.context);
    c.horizon = j.value("horizon", d.horizon);
    c.height = j.value("height", d.height);
    c.width = j.value("width", d.width);
    c.patch = j.value("patch", d.patch);
    c.channels = j.value("channels", d.channels);
    c.blocks = j.value("blocks", d.blocks);
    c.hidden_mult = j.value("hidden_mult", d.hidden_mult);
}

namespace {

PixelPredictorConfig px_validated(PixelPredictorConfig cfg) {
    cfg.validate();
    return cfg;
}

}  // namespace

PixelPredictor::PixelPredictor(const PixelPredictorConfig& cfg, std::uint64_t seed)
    : cfg_(px_validated(cfg)),
      rng_(derive_seed(seed, 0x7078696e6974ull)),
      in_(params_, "in", cfg_.patch_dim(), cfg_.channels, rng_),
      time_pos_(&params_.create("time_pos",
                                normal_tensor(Shape{cfg_.context, cfg_.channels}, rng_, 0.02))),
      space_pos_(&params_.create("space_pos",
                                 normal_tensor(Shape{cfg_.tokens(), cfg_.channels}, rng_, 0.02))),
      head_ln_(params_, "head_ln", cfg_.channels),
      head_(params_, "head", cfg_.channels, cfg_.horizon * cfg_.patch_dim(), rng_) {
    blocks_.reserve(static_cast<std::size_t>(cfg_.blocks));
    for (std::int64_t i = 0; i < cfg_.blocks; ++i)
        blocks_.emplace_back(params_, "block" + std::to_string(i), cfg_.tokens(), cfg_.channels,
                             cfg_.hidden_mult, rng_);
    params_.find("head.w")->value.fill(0.0);  // untrained net forecasts zeros
}

Var PixelPredictor::forward(Binding& bind, Var context) const {
    const Shape sh = context.shape();  // copied: node creation moves shapes
    require(sh.size() == 4 && sh[1] == cfg_.context && sh[2] == cfg_.height && sh[3] == cfg_.width,
            "pixel predictor: expected context [B,C,H,W], got " + shape_str(sh));
    const std::int64_t B = sh[0], C = cfg_.context;
    const std::int64_t S = cfg_.tokens(), D = cfg_.channels, P = cfg_.patch_dim();
    const std::int64_t M = cfg_.horizon;

    Var h = in_(bind, patchify(context, cfg_.patch));  // [B,C,S,D]
    h = add_broadcast(h, bind.use(*time_pos_), Broadcast::TimeC);
    h = add_broadcast(h, bind.use(*space_pos_), Broadcast::SpaceC);
    for (const auto& block : blocks_) h = block(bind, h);

    // The last context frame's tokens summarize the window (the temporal
    // convs have already mixed earlier frames in); map each to M patches.
    Var tail = slice_time(h, C - 1, 1);                    // [B,1,S,D]
    Var out = head_(bind, head_ln_(bind, tail));           // [B,1,S,M*P]
    std::vector<std::int64_t> mapping(static_cast<std::size_t>(B * M * S * P));
    std::size_t o = 0;
    for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t m = 0; m < M; ++m)
            for (std::int64_t s = 0; s < S; ++s)
                for (std::int64_t p = 0; p < P; ++p)
                    mapping[o++] = (bi * S + s) * (M * P) + m * P + p;
    Var tokens = permute_elements(out, Shape{B, M, S, P}, std::move(mapping));
    return unpatchify(tokens, cfg_.height, cfg_.width, cfg_.patch);
}

RewardValue pixel_prediction_reward(const Tensor& video, const PixelPredictor& model,
                                    const SurpriseConfig& cfg) {
    cfg.validate();
    const PixelPredictorConfig& pc = model.config();
    require(cfg.context == pc.context && cfg.horizon() == pc.horizon,
            "pixel reward: window layout does not match the predictor");
    require(cfg.resize == 0, "pixel reward: resize is not supported");
    const std::int64_t F = video.dim(0);
    require(video.shape().size() == 3 && video.dim(1) == pc.height && video.dim(2) == pc.width,
            "pixel reward: video " + shape_str(video.shape()) + " does not match the predictor");
    const std::int64_t K = window_count(F, cfg);

    Tape tape;
    Var x = video_leaf(tape, video, false);
    Var acc;
    for (std::int64_t k = 0; k < K; ++k) {
        Binding bind(tape, /*train=*/false);
        Var ctx = slice_time(x, k * cfg.stride, cfg.context);
        Var fut = slice_time(x, k * cfg.stride + cfg.context, pc.horizon);
        Var err = mse_loss(model.forward(bind, ctx), fut);
        acc = k == 0 ? err : add(acc, err);
    }
    return {-scale(acc, 1.0 / static_cast<double>(K)).value()[0]};
}

TrainReport train_pixel_predictor(PixelPredictor& model, const VideoDataset& data,
                                  const BaselineTrainConfig& tc, const ProgressFn& progress) {
    const PixelPredictorConfig& cfg = model.config();
    const std::int64_t N = data.size();
    require(N > 0, "train_pixel_predictor: empty dataset");
    require(data.videos.shape().size() == 4 && data.videos.dim(2) == cfg.height &&
                data.videos.dim(3) == cfg.width,
            "train_pixel_predictor: dataset does not match the predictor geometry");
    const std::int64_t F = data.videos.dim(1), HW = cfg.height * cfg.width;
    const std::int64_t Wn = cfg.context + cfg.horizon;
    require(F >= Wn, "train_pixel_predictor: clips are shorter than context+horizon");
    const std::int64_t B = std::min<std::int64_t>(tc.batch_size, N);

    Adam opt({.lr = tc.lr, .clip_norm = tc.clip_norm});
    Rng rng(derive_seed(tc.seed, 0x747270786cull));
    TrainReport report;
    const auto t_start = std::chrono::steady_clock::now();

    for (std::int64_t epoch = 0; epoch < tc.epochs; ++epoch) {
        const auto perm = rng.permutation(N);
        double acc = 0.0;
        std::int64_t batches = 0;
        for (std::int64_t i0 = 0; i0 + B <= N; i0 += B) {
            Tensor ctx(Shape{B, cfg.context, cfg.height, cfg.width});
            Tensor fut(Shape{B, cfg.horizon, cfg.height, cfg.width});
            for (std::int64_t bi = 0; bi < B; ++bi) {
                const std::int64_t idx = perm[static_cast<std::size_t>(i0 + bi)];
                const std::int64_t f0 =
                    static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(F - Wn + 1)));
                const double* clip = data.videos.data() + idx * F * HW;
                std::copy(clip + f0 * HW, clip + (f0 + cfg.context) * HW,
                          ctx.data() + bi * cfg.context * HW);
                std::copy(clip + (f0 + cfg.context) * HW, clip + (f0 + Wn) * HW,
                          fut.data() + bi * cfg.horizon * HW);
            }
            Tape tape;
            Binding bind(tape, /*train=*/true);
            Var pred = model.forward(bind, tape.constant(std::move(ctx)));
            Var loss = mse_loss(pred, tape.constant(std::move(fut)));
            model.params().zero_grad();
            tape.backward(loss);
            bind.harvest();
            opt.step(model.params());
            acc += loss.value()[0];
            ++batches;
            ++report.steps;
        }
        report.epoch_loss.push_back(acc / static_cast<double>(batches));
        if (progress) progress(epoch, report.epoch_loss.back());
    }

    report.wallclock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

// ---------------------------------------------------------------------------
// Probe classifier
// ---------------------------------------------------------------------------

void ProbeConfig::validate() const {
    require(frames >= tubelet && tubelet >= 1 && frames % tubelet == 0,
            "probe: frames must be a multiple of tubelet");
    require(patch >= 1 && height % patch == 0 && width % patch == 0,
            "probe: height and width must be multiples of patch");
    require(channels >= 2 && blocks >= 1 && hidden_mult >= 1, "probe: degenerate network");
}

void to_json(nlohmann::json& j, const ProbeConfig& c) {
    j = nlohmann::json{{"frames", c.frames},     {"height", c.height},
                       {"width", c.width},       {"patch", c.patch},
                       {"tubelet", c.tubelet},   {"channels", c.channels},
                       {"blocks", c.blocks},     {"hidden_mult", c.hidden_mult}};
}

void from_json(const nlohmann::json& j, ProbeConfig& c) {
    const ProbeConfig d = c;
    c.frames = j.value("frames", d.frames);
    c.height = j.value("height", d.height);
    c.width = j.value("width", d.width);
    c.patch = j.value("patch", d.patch);
    c.tubelet = j.value("tubelet", d.tubelet);
    c.channels = j.value("channels", d.channels);
    c.blocks = j.value("blocks", d.blocks);
    c.hidden_mult = j.value("hidden_mult", d.hidden_mult);
}

namespace {

ProbeConfig probe_validated(ProbeConfig cfg) {
    cfg.validate();
    return cfg;
}

}  // namespace

ProbeClassifier::ProbeClassifier(const ProbeConfig& cfg, std::uint64_t seed)
    : cfg_(probe_validated(cfg)),
      rng_(derive_seed(seed, 0x70726f6265ull)),
      in_(params_, "in", cfg_.tubelet * cfg_.patch * cfg_.patch, cfg_.channels, rng_),
      time_pos_(&params_.create(
          "time_pos", normal_tensor(Shape{cfg_.frames / cfg_.tubelet, cfg_.channels}, rng_, 0.02))),
      space_pos_(&params_.create("space_pos",
                                 normal_tensor(Shape{cfg_.tokens(), cfg_.channels}, rng_, 0.02))),
      head_ln_(params_, "head_ln", cfg_.channels),
      head_(params_, "head", cfg_.channels, 1, rng_) {
    blocks_.reserve(static_cast<std::size_t>(cfg_.blocks));
    for (std::int64_t i = 0; i < cfg_.blocks; ++i)
        blocks_.emplace_back(params_, "block" + std::to_string(i), cfg_.tokens(), cfg_.channels,
                             cfg_.hidden_mult, rng_);
    params_.find("head.w")->value.fill(0.0);  // untrained probe scores 0
}

Var ProbeClassifier::logits(Binding& bind, Var video) const {
    const Shape sh = video.shape();  // copied: node creation moves shapes
    require(sh.size() == 4 && sh[2] == cfg_.height && sh[3] == cfg_.width,
            "probe: expected video [B,F,H,W], got " + shape_str(sh));
    const std::int64_t B = sh[0], F = sh[1];
    require(F >= cfg_.tubelet && F % cfg_.tubelet == 0 && F <= cfg_.frames,
            "probe: clip length must be a multiple of tubelet in [tubelet, frames]");
    const std::int64_t Tt = F / cfg_.tubelet, S = cfg_.tokens();

    Var h = in_(bind, tubeify(video, cfg_.tubelet, cfg_.patch));  // [B,Tt,S,D]
    std::vector<std::int64_t> trows(static_cast<std::size_t>(Tt));
    std::iota(trows.begin(), trows.end(), 0);
    h = add_broadcast(h, gather_rows(bind.use(*time_pos_), std::move(trows)), Broadcast::TimeC);
    h = add_broadcast(h, bind.use(*space_pos_), Broadcast::SpaceC);
    for (const auto& block : blocks_) h = block(bind, h);

    Var scores = head_(bind, head_ln_(bind, h));  // [B,Tt,S,1]
    // Mean pooling over tokens as a matmul with a constant 1/(Tt*S) vector.
    Tensor pool(Shape{Tt * S, 1});
    pool.fill(1.0 / static_cast<double>(Tt * S));
    Var pooled = matmul(reshape(scores, Shape{B, Tt * S}), bind.constant(std::move(pool)));
    return reshape(pooled, Shape{B});
}

RewardValue classifier_probe_reward(const Tensor& video, const ProbeClassifier& probe) {
    Tape tape;
    Binding bind(tape, /*train=*/false);
    Var v = probe.logits(bind, video_leaf(tape, video, false));
    return {v.value()[0]};
}

TrainReport train_probe(ProbeClassifier& probe, const VideoDataset& real,
                        const VideoDataset& corrupted, const BaselineTrainConfig& tc,
                        const ProgressFn& progress) {
    const ProbeConfig& cfg = probe.config();
    const std::int64_t Nr = real.size(), Nc = corrupted.size();
    require(Nr > 0 && Nc > 0, "train_probe: need both real and corrupted clips");
    require(real.videos.shape().size() == 4 && real.videos.dim(2) == cfg.height &&
                real.videos.dim(3) == cfg.width && real.videos.dim(1) == cfg.frames,
            "train_probe: real dataset does not match the probe geometry");
    require(corrupted.videos.dim(1) == cfg.frames && corrupted.videos.dim(2) == cfg.height &&
                corrupted.videos.dim(3) == cfg.width,
            "train_probe: corrupted dataset does not match the probe geometry");

    const std::int64_t N = Nr + Nc;
    const std::int64_t B = std::min<std::int64_t>(tc.batch_size, N);
    const std::int64_t clip = cfg.frames * cfg.height * cfg.width;

    Adam opt({.lr = tc.lr, .clip_norm = tc.clip_norm});
    Rng rng(derive_seed(tc.seed, 0x747270726full));
    TrainReport report;
    const auto t_start = std::chrono::steady_clock::now();

    for (std::int64_t epoch = 0; epoch < tc.epochs; ++epoch) {
        const auto perm = rng.permutation(N);  // indices < Nr are real clips
        double acc = 0.0;
        std::int64_t batches = 0;
        for (std::int64_t i0 = 0; i0 + B <= N; i0 += B) {
            Tensor x(Shape{B, cfg.frames, cfg.height, cfg.width});
            std::vector<double> targets(static_cast<std::size_t>(B));
            for (std::int64_t bi = 0; bi < B; ++bi) {
                const std::int64_t idx = perm[static_cast<std::size_t>(i0 + bi)];
                const bool is_real = idx < Nr;
                const double* clip_p = is_real ? real.videos.data() + idx * clip
                                               : corrupted.videos.data() + (idx - Nr) * clip;
                std::copy(clip_p, clip_p + clip, x.data() + bi * clip);
                targets[static_cast<std::size_t>(bi)] = is_real ? 1.0 : 0.0;
            }
            Tape tape;
            Binding bind(tape, /*train=*/true);
            Var loss = bce_with_logits(probe.logits(bind, tape.constant(std::move(x))), targets);
            probe.params().zero_grad();
            tape.backward(loss);
            bind.harvest();
            opt.step(probe.params());
            acc += loss.value()[0];
            ++batches;
            ++report.steps;
        }
        report.epoch_loss.push_back(acc / static_cast<double>(batches));
        if (progress) progress(epoch, report.epoch_loss.back());
    }

    report.wallclock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoints and adapters
// ---------------------------------------------------------------------------

void save_pixel_predictor(const PixelPredictor& model, const std::string& path) {
    Checkpoint ck;
    ck.meta["kind"] = "pixel_reward";
    ck.meta["config"] = model.config();
    ck.add_store("pixel_reward", model.params());
    ck.save(path);
}

PixelPredictor load_pixel_predictor(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    require(ck.meta.value("kind", "") == "pixel_reward",
            "load_pixel_predictor: " + path + " is not a pixel-reward checkpoint");
    PixelPredictor model(ck.meta.at("config").get<PixelPredictorConfig>(), 0);
    ck.load_store("pixel_reward", model.params());
    return model;
}

void save_probe(const ProbeClassifier& probe, const std::string& path) {
    Checkpoint ck;
    ck.meta["kind"] = "probe_reward";
    ck.meta["config"] = probe.config();
    ck.add_store("probe_reward", probe.params());
    ck.save(path);
}

ProbeClassifier load_probe(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    require(ck.meta.value("kind", "") == "probe_reward",
            "load_probe: " + path + " is not a probe-reward checkpoint");
    ProbeClassifier probe(ck.meta.at("config").get<ProbeConfig>(), 0);
    ck.load_store("probe_reward", probe.params());
    return probe;
}

void to_json(nlohmann::json& j, const BaselineTrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"lr", c.lr},
                       {"clip_norm", c.clip_norm},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, BaselineTrainConfig& c) {
    const BaselineTrainConfig d = c;
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.clip_norm = j.value("clip_norm", d.clip_norm);
    c.seed = j.value("seed", d.seed);
}

}  // namespace wmsteer
