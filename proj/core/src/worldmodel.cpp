#include "wmsteer/worldmodel.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "wmsteer/checkpoint.hpp"
#include "wmsteer/common.hpp"

namespace wmsteer {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void WorldModelConfig::validate() const {
    require(frames >= tubelet && height >= patch && width >= patch,
            "worldmodel: degenerate geometry");
    require(patch >= 1 && height % patch == 0 && width % patch == 0,
            "worldmodel: height and width must be multiples of patch");
    require(tubelet >= 1 && frames % tubelet == 0,
            "worldmodel: frames must be a multiple of tubelet");
    require(channels >= 2 && enc_blocks >= 1 && pred_blocks >= 1 && hidden_mult >= 1,
            "worldmodel: degenerate network");
}

void to_json(nlohmann::json& j, const WorldModelConfig& c) {
    j = nlohmann::json{{"frames", c.frames},         {"height", c.height},
                       {"width", c.width},           {"patch", c.patch},
                       {"tubelet", c.tubelet},       {"channels", c.channels},
                       {"enc_blocks", c.enc_blocks}, {"pred_blocks", c.pred_blocks},
                       {"hidden_mult", c.hidden_mult}};
}

void from_json(const nlohmann::json& j, WorldModelConfig& c) {
    const WorldModelConfig d = c;
    c.frames = j.value("frames", d.frames);
    c.height = j.value("height", d.height);
    c.width = j.value("width", d.width);
    c.patch = j.value("patch", d.patch);
    c.tubelet = j.value("tubelet", d.tubelet);
    c.channels = j.value("channels", d.channels);
    c.enc_blocks = j.value("enc_blocks", d.enc_blocks);
    c.pred_blocks = j.value("pred_blocks", d.pred_blocks);
    c.hidden_mult = j.value("hidden_mult", d.hidden_mult);
}

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

namespace detail {

TokenEncoder::TokenEncoder(ParamStore& s, const WorldModelConfig& cfg, Rng& rng)
    : in_(s, "enc.in", cfg.tube_dim(), cfg.channels, rng),
      mask_token_(&s.create("enc.mask", normal_tensor(Shape{cfg.channels}, rng, 0.02))),
      time_pos_(&s.create("enc.time_pos",
                          normal_tensor(Shape{cfg.t_tokens(cfg.frames), cfg.channels}, rng, 0.02))),
      space_pos_(
          &s.create("enc.space_pos", normal_tensor(Shape{cfg.tokens(), cfg.channels}, rng, 0.02))),
      out_ln_(s, "enc.out_ln", cfg.channels) {
    blocks_.reserve(static_cast<std::size_t>(cfg.enc_blocks));
    for (std::int64_t i = 0; i < cfg.enc_blocks; ++i)
        blocks_.emplace_back(s, "enc.block" + std::to_string(i), cfg.tokens(), cfg.channels,
                             cfg.hidden_mult, rng);
}

Var TokenEncoder::operator()(Binding& b, const WorldModelConfig& cfg, Var video,
                             const std::vector<std::uint8_t>& input_mask) const {
    const Shape& sh = video.shape();
    require(sh.size() == 4 && sh[2] == cfg.height && sh[3] == cfg.width,
            "worldmodel: expected video [B,F,H,W], got " + shape_str(sh));
    const std::int64_t B = sh[0], F = sh[1];  // copied: node creation moves shapes
    require(F >= cfg.tubelet && F % cfg.tubelet == 0 && F <= cfg.frames,
            "worldmodel: window length must be a multiple of tubelet in [tubelet, frames]");
    const std::int64_t Tt = cfg.t_tokens(F), S = cfg.tokens(), D = cfg.channels;

    Var h = in_(b, tubeify(video, cfg.tubelet, cfg.patch));  // [B,Tt,S,D]
    if (!input_mask.empty()) {
        require(static_cast<std::int64_t>(input_mask.size()) == Tt * S,
                "worldmodel: input mask must have T'*S entries");
        Var zeros = b.constant(Tensor(Shape{B, Tt, S, D}));
        h = where_mask(input_mask, h, add_broadcast(zeros, b.use(*mask_token_), Broadcast::AllC));
    }
    std::vector<std::int64_t> trows(static_cast<std::size_t>(Tt));
    std::iota(trows.begin(), trows.end(), 0);
    h = add_broadcast(h, gather_rows(b.use(*time_pos_), std::move(trows)), Broadcast::TimeC);
    h = add_broadcast(h, b.use(*space_pos_), Broadcast::SpaceC);
    for (const auto& block : blocks_) h = block(b, h);
    return out_ln_(b, h);
}

TokenPredictor::TokenPredictor(ParamStore& s, const WorldModelConfig& cfg, Rng& rng)
    : in_(s, "pred.in", cfg.channels, cfg.channels, rng), ln_(s, "pred.ln", cfg.channels),
      out_(s, "pred.out", cfg.channels, cfg.channels, rng) {
    blocks_.reserve(static_cast<std::size_t>(cfg.pred_blocks));
    for (std::int64_t i = 0; i < cfg.pred_blocks; ++i)
        blocks_.emplace_back(s, "pred.block" + std::to_string(i), cfg.tokens(), cfg.channels,
                             cfg.hidden_mult, rng);
}

Var TokenPredictor::operator()(Binding& b, Var tokens) const {
    Var h = in_(b, tokens);
    for (const auto& block : blocks_) h = block(b, h);
    return out_(b, ln_(b, h));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Bundle
// ---------------------------------------------------------------------------

namespace {

WorldModelConfig wm_validated(WorldModelConfig cfg) {
    cfg.validate();
    return cfg;
}

// Row indices of masked (t,s) positions in the flattened [B*Tt*S, D] view.
std::vector<std::int64_t> masked_rows(const std::vector<std::uint8_t>& mask, std::int64_t B,
                                      std::int64_t grid) {
    std::vector<std::int64_t> rows;
    for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t k = 0; k < grid; ++k)
            if (mask[static_cast<std::size_t>(k)]) rows.push_back(bi * grid + k);
    require(!rows.empty(), "worldmodel: mask selects no tokens");
    return rows;
}

}  // namespace

WorldModelBundle::WorldModelBundle(const WorldModelConfig& cfg, std::uint64_t seed)
    : cfg_(wm_validated(cfg)),
      rng_(derive_seed(seed, 0x776d696e6974ull)),
      enc_(params_, cfg_, rng_),
      target_enc_(target_params_, cfg_, rng_),
      pred_(params_, cfg_, rng_) {
    // The target encoder starts as an exact copy of the online encoder.
    ema_update(target_params_, params_, 0.0);
}

Var WorldModelBundle::encode_online(Binding& bind_online, Var video,
                                    const std::vector<std::uint8_t>& input_mask) const {
    return enc_(bind_online, cfg_, video, input_mask);
}

Var WorldModelBundle::encode_target(Binding& bind_target, Var video) const {
    require(!bind_target.training(),
            "worldmodel: the target encoder must be bound without gradients");
    return target_enc_(bind_target, cfg_, video, {});
}

Var WorldModelBundle::predict(Binding& bind_online, Var tokens) const {
    return pred_(bind_online, tokens);
}

std::vector<std::uint8_t> WorldModelBundle::future_mask(std::int64_t t_frames,
                                                        std::int64_t context_frames) const {
    require(context_frames >= cfg_.tubelet && context_frames % cfg_.tubelet == 0 &&
                context_frames < t_frames,
            "worldmodel: context must be a multiple of tubelet in [tubelet, t_frames)");
    const std::int64_t Tt = cfg_.t_tokens(t_frames), S = cfg_.tokens();
    const std::int64_t cut = cfg_.t_tokens(context_frames);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(Tt * S), 0);
    for (std::int64_t t = cut; t < Tt; ++t)
        for (std::int64_t s = 0; s < S; ++s) mask[static_cast<std::size_t>(t * S + s)] = 1;
    return mask;
}

std::vector<std::uint8_t> WorldModelBundle::tube_mask(std::int64_t t_frames, double ratio,
                                                      Rng& rng) const {
    require(ratio > 0.0 && ratio < 1.0, "worldmodel: tube ratio must lie in (0,1)");
    const std::int64_t Tt = cfg_.t_tokens(t_frames), S = cfg_.tokens();
    std::vector<std::uint8_t> tubes(static_cast<std::size_t>(S), 0);
    std::int64_t n = 0;
    for (std::int64_t s = 0; s < S; ++s)
        if (rng.bernoulli(ratio)) {
            tubes[static_cast<std::size_t>(s)] = 1;
            ++n;
        }
    if (n == 0)  // never return an empty mask
        tubes[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(S)))] = 1;
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(Tt * S));
    for (std::int64_t t = 0; t < Tt; ++t)
        for (std::int64_t s = 0; s < S; ++s)
            mask[static_cast<std::size_t>(t * S + s)] = tubes[static_cast<std::size_t>(s)];
    return mask;
}

Var WorldModelBundle::masked_cosine_mean(Tape& tape, Var window,
                                         const std::vector<std::uint8_t>& mask) const {
    const Shape wsh = window.shape();  // copied: node creation moves shapes
    require(wsh.size() == 3 || wsh.size() == 4,
            "worldmodel: expected window [F,H,W] or [B,F,H,W], got " + shape_str(wsh));
    const std::int64_t B = wsh.size() == 3 ? 1 : wsh[0];
    const std::int64_t F = wsh.size() == 3 ? wsh[0] : wsh[1];
    Var w4 = wsh.size() == 3 ? reshape(window, Shape{1, wsh[0], wsh[1], wsh[2]}) : window;
    const std::int64_t Tt = cfg_.t_tokens(F), S = cfg_.tokens(), D = cfg_.channels;
    require(static_cast<std::int64_t>(mask.size()) == Tt * S,
            "worldmodel: mask/window grid mismatch");

    Binding online(tape, /*train=*/false);
    Binding target(tape, /*train=*/false);
    Var p = predict(online, encode_online(online, w4, mask));
    Var z = encode_target(target, w4);

    auto rows = masked_rows(mask, B, Tt * S);
    Var pr = gather_rows(reshape(p, Shape{B * Tt * S, D}), rows);
    Var zr = gather_rows(reshape(z, Shape{B * Tt * S, D}), std::move(rows));
    return mean_all(cosine_rows(pr, zr));
}

double WorldModelBundle::feature_std(const Tensor& tokens) {
    const Shape& sh = tokens.shape();
    require(sh.size() >= 2, "feature_std: need at least [rows, features]");
    const std::int64_t D = sh[sh.size() - 1];
    const std::int64_t n = tokens.numel() / D;
    require(n >= 2, "feature_std: need at least two token positions");
    double acc = 0.0;
    for (std::int64_t c = 0; c < D; ++c) {
        double mean = 0.0, sq = 0.0;
        for (std::int64_t r = 0; r < n; ++r) {
            const double v = tokens[r * D + c];
            mean += v;
            sq += v * v;
        }
        mean /= static_cast<double>(n);
        const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
        acc += std::sqrt(var);
    }
    return acc / static_cast<double>(D);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainReport train_worldmodel(WorldModelBundle& wm, const VideoDataset& data,
                             const WorldModelTrainConfig& tc, const ProgressFn& progress) {
    const WorldModelConfig& cfg = wm.config();
    const std::int64_t N = data.size();
    require(N > 0, "train_worldmodel: empty dataset");
    require(data.videos.shape() == Shape{N, cfg.frames, cfg.height, cfg.width},
            "train_worldmodel: dataset " + shape_str(data.videos.shape()) +
                " does not match the world-model geometry");
    const std::int64_t B = std::min<std::int64_t>(tc.batch_size, N);
    require(B >= 1, "train_worldmodel: batch_size must be >= 1");
    require(tc.ema_decay >= 0.0 && tc.ema_decay < 1.0,
            "train_worldmodel: ema_decay must lie in [0,1)");

    const std::int64_t F = cfg.frames, HW = cfg.height * cfg.width;
    const std::int64_t Tt = cfg.t_tokens(F), S = cfg.tokens(), D = cfg.channels;

    Adam opt({.lr = tc.lr, .clip_norm = tc.clip_norm});
    Rng rng(derive_seed(tc.seed, 0x7472776d75ull));
    TrainReport report;
    const auto t_start = std::chrono::steady_clock::now();

    for (std::int64_t epoch = 0; epoch < tc.epochs; ++epoch) {
        const auto perm = rng.permutation(N);
        double acc = 0.0;
        std::int64_t batches = 0;
        for (std::int64_t i0 = 0; i0 + B <= N; i0 += B) {
            Tensor x(Shape{B, F, cfg.height, cfg.width});
            for (std::int64_t bi = 0; bi < B; ++bi) {
                const std::int64_t idx = perm[static_cast<std::size_t>(i0 + bi)];
                const double* clip = data.videos.data() + idx * F * HW;
                std::copy(clip, clip + F * HW, x.data() + bi * F * HW);
            }

            // Future-frame masking predicts dynamics; tube masking predicts
            // content that is occluded for the whole clip.
            std::vector<std::uint8_t> mask;
            if (rng.bernoulli(tc.future_prob)) {
                const std::int64_t cut =
                    1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(Tt - 1)));
                mask = wm.future_mask(F, cut * cfg.tubelet);
            } else {
                mask = wm.tube_mask(F, tc.tube_ratio, rng);
            }

            Tape tape;
            Binding online(tape, /*train=*/true);
            Binding target(tape, /*train=*/false);
            Var xv = tape.constant(std::move(x));
            Var zo = wm.encode_online(online, xv, mask);
            Var p = wm.predict(online, zo);
            Var z = wm.encode_target(target, xv);

            auto rows = masked_rows(mask, B, Tt * S);
            Var pr = gather_rows(reshape(p, Shape{B * Tt * S, D}), rows);
            Var zr = gather_rows(reshape(z, Shape{B * Tt * S, D}), std::move(rows));
            Var loss = l1_loss(pr, zr);

            const double spread = WorldModelBundle::feature_std(zo.value());
            require(spread >= 1e-4,
                    "train_worldmodel: representation collapse (feature std " +
                        std::to_string(spread) + " at step " + std::to_string(report.steps) + ")");

            wm.params().zero_grad();
            tape.backward(loss);
            online.harvest();
            opt.step(wm.params());
            wm.ema_step(tc.ema_decay);

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
// Checkpointing
// ---------------------------------------------------------------------------

void save_worldmodel(const WorldModelBundle& wm, const std::string& path) {
    Checkpoint ck;
    ck.meta["kind"] = "worldmodel";
    ck.meta["config"] = wm.config();
    ck.add_store("worldmodel", wm.params());
    ck.add_store("worldmodel_target", wm.target_params());
    ck.save(path);
}

WorldModelBundle load_worldmodel(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    require(ck.meta.value("kind", "") == "worldmodel",
            "load_worldmodel: " + path + " is not a world-model checkpoint");
    WorldModelConfig cfg = ck.meta.at("config").get<WorldModelConfig>();
    WorldModelBundle wm(cfg, 0);
    ck.load_store("worldmodel", wm.params());
    ck.load_store("worldmodel_target", wm.target_params());
    return wm;
}

void to_json(nlohmann::json& j, const WorldModelTrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"lr", c.lr},
                       {"clip_norm", c.clip_norm},
                       {"ema_decay", c.ema_decay},
                       {"future_prob", c.future_prob},
                       {"tube_ratio", c.tube_ratio},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, WorldModelTrainConfig& c) {
    const WorldModelTrainConfig d = c;
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.clip_norm = j.value("clip_norm", d.clip_norm);
    c.ema_decay = j.value("ema_decay", d.ema_decay);
    c.future_prob = j.value("future_prob", d.future_prob);
    c.tube_ratio = j.value("tube_ratio", d.tube_ratio);
    c.seed = j.value("seed", d.seed);
}

}  // namespace wmsteer
