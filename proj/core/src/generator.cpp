#include "wmsteer/generator.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "wmsteer/checkpoint.hpp"
#include "wmsteer/common.hpp"

namespace wmsteer {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void GeneratorConfig::validate() const {
    require(frames >= 1 && height >= patch && width >= patch, "generator: degenerate geometry");
    require(patch >= 1 && height % patch == 0 && width % patch == 0,
            "generator: height and width must be multiples of patch");
    require(channels >= 2 && blocks >= 1 && hidden_mult >= 1, "generator: degenerate network");
    require(time_dim >= 2 && time_dim % 2 == 0, "generator: time_dim must be even and >= 2");
    require(context_frames >= 1, "generator: context_frames must be >= 1");
    require(chunk_frames >= 1 && chunk_frames <= frames,
            "generator: chunk_frames must lie in [1, frames]");
    require(context_frames + chunk_frames <= frames,
            "generator: no room for a context window before a chunk");
    require(n_classes >= 1, "generator: n_classes must be >= 1");
    resolve_target();  // throws on invalid combinations
}

PredictionTarget GeneratorConfig::resolve_target() const {
    const NoiseSchedule sched = NoiseSchedule::from_name(schedule);
    if (target == "auto")
        return sched.kind == ScheduleKind::RectFlow ? PredictionTarget::Velocity
                                                    : PredictionTarget::Eps;
    if (target == "eps") {
        require(sched.kind != ScheduleKind::RectFlow,
                "generator: eps target is ill-posed for rect_flow (alpha(1)=0); use velocity");
        return PredictionTarget::Eps;
    }
    if (target == "velocity") return PredictionTarget::Velocity;
    fail("generator: unknown target '" + target + "' (expected eps, velocity or auto)");
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
    j = nlohmann::json{{"frames", c.frames},
                       {"height", c.height},
                       {"width", c.width},
                       {"patch", c.patch},
                       {"channels", c.channels},
                       {"blocks", c.blocks},
                       {"hidden_mult", c.hidden_mult},
                       {"time_dim", c.time_dim},
                       {"context_frames", c.context_frames},
                       {"chunk_frames", c.chunk_frames},
                       {"n_classes", c.n_classes},
                       {"schedule", c.schedule},
                       {"target", c.target}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
    const GeneratorConfig d = c;
    c.frames = j.value("frames", d.frames);
    c.height = j.value("height", d.height);
    c.width = j.value("width", d.width);
    c.patch = j.value("patch", d.patch);
    c.channels = j.value("channels", d.channels);
    c.blocks = j.value("blocks", d.blocks);
    c.hidden_mult = j.value("hidden_mult", d.hidden_mult);
    c.time_dim = j.value("time_dim", d.time_dim);
    c.context_frames = j.value("context_frames", d.context_frames);
    c.chunk_frames = j.value("chunk_frames", d.chunk_frames);
    c.n_classes = j.value("n_classes", d.n_classes);
    c.schedule = j.value("schedule", d.schedule);
    c.target = j.value("target", d.target);
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

namespace {

GeneratorConfig validated(GeneratorConfig cfg) {
    cfg.validate();
    return cfg;
}

}  // namespace

DenoiserNetwork::DenoiserNetwork(const GeneratorConfig& cfg, std::uint64_t seed)
    : cfg_(validated(cfg)),
      sched_(NoiseSchedule::from_name(cfg_.schedule)),
      target_(cfg_.resolve_target()),
      rng_(derive_seed(seed, 0x67656e6974ull)),
      patch_in_(params_, "patch_in", cfg_.patch_dim(), cfg_.channels, rng_),
      t_in_(params_, "t_mlp.in", cfg_.time_dim, cfg_.channels, rng_),
      t_out_(params_, "t_mlp.out", cfg_.channels, cfg_.channels, rng_),
      label_emb_(params_, "label", cfg_.n_classes + 1, cfg_.channels, rng_),
      ctx_in_(params_, "ctx_in", cfg_.context_frames * cfg_.patch_dim(), cfg_.channels, rng_),
      null_ctx_(&params_.create("null_ctx", normal_tensor(Shape{cfg_.channels}, rng_, 0.02))),
      time_pos_(&params_.create("time_pos",
                                normal_tensor(Shape{cfg_.frames, cfg_.channels}, rng_, 0.02))),
      space_pos_(&params_.create("space_pos",
                                 normal_tensor(Shape{cfg_.tokens(), cfg_.channels}, rng_, 0.02))),
      head_ln_(params_, "head_ln", cfg_.channels),
      head_out_(params_, "head", cfg_.channels, cfg_.patch_dim(), rng_) {
    blocks_.reserve(static_cast<std::size_t>(cfg_.blocks));
    for (std::int64_t i = 0; i < cfg_.blocks; ++i)
        blocks_.emplace_back(params_, "block" + std::to_string(i), cfg_.tokens(), cfg_.channels,
                             cfg_.hidden_mult, rng_);
    // Zero-initialized head: the untrained model predicts 0, which keeps the
    // first reverse steps bounded.
    params_.find("head.w")->value.fill(0.0);
}

Var DenoiserNetwork::forward(Binding& bind, Var x_t, const std::vector<double>& ts,
                             const std::vector<int>& labels, const Tensor& context,
                             const std::vector<std::uint8_t>& ctx_on) const {
    const Shape& sh = x_t.shape();
    require(sh.size() == 4 && sh[2] == cfg_.height && sh[3] == cfg_.width,
            "denoiser: expected x_t [B,T,H,W], got " + shape_str(sh));
    const std::int64_t B = sh[0], T = sh[1];
    require(T >= 1 && T <= cfg_.frames, "denoiser: T must lie in [1, frames]");
    require(static_cast<std::int64_t>(ts.size()) == B, "denoiser: ts size mismatch");
    require(static_cast<std::int64_t>(labels.size()) == B, "denoiser: labels size mismatch");

    const std::int64_t S = cfg_.tokens(), D = cfg_.channels, P = cfg_.patch_dim();
    const std::int64_t Tc = cfg_.context_frames;

    Var h = patch_in_(bind, patchify(x_t, cfg_.patch));  // [B,T,S,D]

    // Positions.
    std::vector<std::int64_t> trows(static_cast<std::size_t>(T));
    std::iota(trows.begin(), trows.end(), 0);
    h = add_broadcast(h, gather_rows(bind.use(*time_pos_), std::move(trows)), Broadcast::TimeC);
    h = add_broadcast(h, bind.use(*space_pos_), Broadcast::SpaceC);

    // Diffusion time.
    Tensor tf(Shape{B, cfg_.time_dim});
    for (std::int64_t i = 0; i < B; ++i) {
        Tensor row = sincos_features(ts[static_cast<std::size_t>(i)], cfg_.time_dim);
        std::copy(row.data(), row.data() + cfg_.time_dim, tf.data() + i * cfg_.time_dim);
    }
    h = add_broadcast(h, t_out_(bind, silu(t_in_(bind, bind.constant(std::move(tf))))),
                      Broadcast::BatchC);

    // Label (null row = n_classes).
    std::vector<std::int64_t> ids(static_cast<std::size_t>(B));
    for (std::int64_t i = 0; i < B; ++i) {
        const int lab = labels[static_cast<std::size_t>(i)];
        require(lab < cfg_.n_classes, "denoiser: label out of range");
        ids[static_cast<std::size_t>(i)] = lab < 0 ? cfg_.n_classes : lab;
    }
    h = add_broadcast(h, label_emb_.rows(bind, std::move(ids)), Broadcast::BatchC);

    // Context.
    if (context.numel() == 0) {
        h = add_broadcast(h, bind.use(*null_ctx_), Broadcast::AllC);
    } else {
        require(context.shape() == Shape{B, Tc, cfg_.height, cfg_.width},
                "denoiser: expected context [B,Tc,H,W], got " + shape_str(context.shape()));
        require(ctx_on.empty() || static_cast<std::int64_t>(ctx_on.size()) == B,
                "denoiser: ctx_on size mismatch");
        Var ctok = patchify(bind.constant(context), cfg_.patch);  // [B,Tc,S,P]
        // [B,Tc,S,P] -> [B,S,Tc*P]: each spatial token sees all context frames.
        std::vector<std::int64_t> mapping(static_cast<std::size_t>(B * Tc * S * P));
        std::size_t o = 0;
        for (std::int64_t bi = 0; bi < B; ++bi)
            for (std::int64_t s = 0; s < S; ++s)
                for (std::int64_t tc = 0; tc < Tc; ++tc)
                    for (std::int64_t p = 0; p < P; ++p)
                        mapping[o++] = ((bi * Tc + tc) * S + s) * P + p;
        Var cvec = reshape(permute_elements(ctok, Shape{B, S, Tc, P}, std::move(mapping)),
                           Shape{B, S, Tc * P});
        Var e = ctx_in_(bind, cvec);  // [B,S,D]

        bool all_on = true;
        for (std::uint8_t f : ctx_on) all_on = all_on && f;
        if (all_on) {
            h = add_broadcast(h, e, Broadcast::BatchSpaceC);
        } else {
            // Per-clip blend between the context embedding and the null vector.
            Var e4 = reshape(e, Shape{B, 1, S, D});
            Var n4 = add_broadcast(bind.constant(Tensor(Shape{B, 1, S, D})), bind.use(*null_ctx_),
                                   Broadcast::AllC);
            Tensor on(Shape{B, 1, S, D}), off(Shape{B, 1, S, D});
            for (std::int64_t bi = 0; bi < B; ++bi) {
                const double v = ctx_on[static_cast<std::size_t>(bi)] ? 1.0 : 0.0;
                for (std::int64_t k = 0; k < S * D; ++k) {
                    on[bi * S * D + k] = v;
                    off[bi * S * D + k] = 1.0 - v;
                }
            }
            Var blended = add(mul(e4, bind.constant(std::move(on))),
                              mul(n4, bind.constant(std::move(off))));
            h = add_broadcast(h, reshape(blended, Shape{B, S, D}), Broadcast::BatchSpaceC);
        }
    }

    for (const auto& block : blocks_) h = block(bind, h);
    h = head_out_(bind, head_ln_(bind, h));  // [B,T,S,P]
    return unpatchify(h, cfg_.height, cfg_.width, cfg_.patch);
}

// ---------------------------------------------------------------------------
// Conditioning
// ---------------------------------------------------------------------------

std::vector<CfgBranch> cfg_branches(const GenerationCondition& cond) {
    const bool has_label = cond.label >= 0;
    const bool has_ctx = cond.context.numel() > 0;
    std::vector<CfgBranch> out;
    if (!has_ctx) {
        if (!has_label) {
            out.push_back({1.0, -1, false});
        } else {
            out.push_back({1.0 - cond.cfg_scale, -1, false});
            out.push_back({cond.cfg_scale, cond.label, false});
        }
    } else if (!has_label) {
        out.push_back({1.0 - cond.ctx_scale, -1, false});
        out.push_back({cond.ctx_scale, -1, true});
    } else {
        out.push_back({1.0 - cond.ctx_scale, -1, false});
        out.push_back({cond.ctx_scale - cond.cfg_scale, -1, true});
        out.push_back({cond.cfg_scale, cond.label, true});
    }
    std::erase_if(out, [](const CfgBranch& b) { return b.coeff == 0.0; });
    return out;
}

DenoiserScoreModel::DenoiserScoreModel(const DenoiserNetwork& net, GenerationCondition cond,
                                       std::int64_t frames)
    : net_(&net), cond_(std::move(cond)), frames_(frames) {
    const GeneratorConfig& cfg = net.config();
    require(frames_ >= 1 && frames_ <= cfg.frames, "score model: frames out of range");
    require(cond_.label < cfg.n_classes, "score model: label out of range");
    if (cond_.context.numel() != 0)
        require(cond_.context.shape() == Shape{cfg.context_frames, cfg.height, cfg.width},
                "score model: expected context [Tc,H,W], got " + shape_str(cond_.context.shape()));

    branches_ = cfg_branches(cond_);
    const std::int64_t nb = static_cast<std::int64_t>(branches_.size());
    bool any_ctx = false;
    for (const auto& b : branches_) {
        labels_.push_back(b.label);
        ctx_on_.push_back(b.use_context ? 1 : 0);
        any_ctx = any_ctx || b.use_context;
    }
    if (any_ctx) {
        const std::int64_t n = cond_.context.numel();
        ctx_batch_ = Tensor(Shape{nb, cfg.context_frames, cfg.height, cfg.width});
        for (std::int64_t b = 0; b < nb; ++b)
            std::copy(cond_.context.data(), cond_.context.data() + n, ctx_batch_.data() + b * n);
    }
}

Shape DenoiserScoreModel::sample_shape() const {
    return Shape{frames_, net_->config().height, net_->config().width};
}

void DenoiserScoreModel::inversion_coeffs(double t, double& cx, double& cp) const {
    const NoiseSchedule& s = net_->schedule();
    const double a = s.alpha(t), sg = s.sigma(t);
    if (net_->target() == PredictionTarget::Eps) {
        require(std::abs(a) >= 1e-8, "score model: alpha(t) too small for the eps inversion");
        cx = 1.0 / a;
        cp = -sg / a;
    } else {
        const double ad = s.alpha_dot(t), sd = s.sigma_dot(t);
        const double det = a * sd - sg * ad;
        require(std::abs(det) >= 1e-8, "score model: singular velocity inversion");
        cx = sd / det;
        cp = -sg / det;
    }
}

Tensor DenoiserScoreModel::repeat_rows(const Tensor& x) const {
    const std::int64_t nb = static_cast<std::int64_t>(branches_.size());
    Shape sh = x.shape();
    sh.insert(sh.begin(), nb);
    Tensor out(sh);
    for (std::int64_t b = 0; b < nb; ++b)
        std::copy(x.data(), x.data() + x.numel(), out.data() + b * x.numel());
    return out;
}

Estimate DenoiserScoreModel::estimate(const Tensor& x, double t) {
    require(x.shape() == sample_shape(), "score model: x " + shape_str(x.shape()) +
                                             " vs sample shape " + shape_str(sample_shape()));
    const std::int64_t nb = static_cast<std::int64_t>(branches_.size());
    Tape tape;
    Binding bind(tape, /*train=*/false);
    Var pred = net_->forward(bind, tape.constant(repeat_rows(x)),
                             std::vector<double>(static_cast<std::size_t>(nb), t), labels_,
                             ctx_batch_, ctx_on_);
    net_evals_ += nb;

    double cx, cp;
    inversion_coeffs(t, cx, cp);
    const Tensor& p = pred.value();
    const std::int64_t n = x.numel();
    Tensor x0(x.shape());
    for (std::int64_t b = 0; b < nb; ++b) {
        const double w = branches_[static_cast<std::size_t>(b)].coeff;
        const double* pb = p.data() + b * n;
        for (std::int64_t i = 0; i < n; ++i) x0[i] += w * (cx * x[i] + cp * pb[i]);
    }
    return {std::move(x0)};
}

Tensor DenoiserScoreModel::x0_pullback(const Tensor& x, double t, const Tensor& v) {
    require(x.shape() == sample_shape() && v.same_shape(x),
            "score model: x0_pullback shape mismatch");
    const std::int64_t nb = static_cast<std::int64_t>(branches_.size());
    const std::int64_t n = x.numel();

    Tape tape;
    Binding bind(tape, /*train=*/false);
    Var xb = tape.leaf(repeat_rows(x), /*requires_grad=*/true);
    Var pred = net_->forward(bind, xb, std::vector<double>(static_cast<std::size_t>(nb), t),
                             labels_, ctx_batch_, ctx_on_);
    net_evals_ += nb;

    double cx, cp;
    inversion_coeffs(t, cx, cp);
    // x0 per branch (affine in x and the prediction), weighted dot with v:
    //   sum_b coeff_b <v, cx x_b + cp pred_b>  =  <wv, cx xb + cp pred>.
    Var x0b = add_scaled(scale(xb, cx), pred, cp);
    Tensor wv(pred.shape());
    for (std::int64_t b = 0; b < nb; ++b) {
        const double w = branches_[static_cast<std::size_t>(b)].coeff;
        for (std::int64_t i = 0; i < n; ++i) wv[b * n + i] = w * v[i];
    }
    tape.backward(sum_all(mul(x0b, tape.constant(std::move(wv)))));

    const Tensor& g = xb.grad();
    Tensor out(x.shape());
    for (std::int64_t b = 0; b < nb; ++b)
        for (std::int64_t i = 0; i < n; ++i) out[i] += g[b * n + i];
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainReport train_generator(DenoiserNetwork& net, const VideoDataset& data,
                            const GeneratorTrainConfig& tc, const ProgressFn& progress) {
    const GeneratorConfig& cfg = net.config();
    const std::int64_t N = data.size();
    require(N > 0, "train_generator: empty dataset");
    require(data.videos.shape() == Shape{N, cfg.frames, cfg.height, cfg.width},
            "train_generator: dataset " + shape_str(data.videos.shape()) +
                " does not match the generator geometry");
    require(static_cast<std::int64_t>(data.labels.size()) == N,
            "train_generator: labels size mismatch");
    for (int lab : data.labels)
        require(lab >= 0 && lab < cfg.n_classes, "train_generator: label out of range");
    const std::int64_t B = std::min<std::int64_t>(tc.batch_size, N);
    require(B >= 1, "train_generator: batch_size must be >= 1");

    const NoiseSchedule& sched = net.schedule();
    const bool eps_mode = net.target() == PredictionTarget::Eps;
    const std::int64_t F = cfg.frames, H = cfg.height, W = cfg.width;
    const std::int64_t Tc = cfg.context_frames, HW = H * W;

    Adam opt({.lr = tc.lr, .clip_norm = tc.clip_norm});
    Rng rng(derive_seed(tc.seed, 0x747267656eull));
    TrainReport report;
    const auto t_start = std::chrono::steady_clock::now();

    for (std::int64_t epoch = 0; epoch < tc.epochs; ++epoch) {
        const auto perm = rng.permutation(N);
        double acc = 0.0;
        std::int64_t batches = 0;
        for (std::int64_t i0 = 0; i0 + B <= N; i0 += B) {
            const bool window = rng.bernoulli(tc.window_prob);
            const std::int64_t T = window ? cfg.chunk_frames : F;

            Tensor x0(Shape{B, T, H, W});
            Tensor ctx = window ? Tensor(Shape{B, Tc, H, W}) : Tensor();
            std::vector<std::uint8_t> ctx_on(window ? static_cast<std::size_t>(B) : 0);
            std::vector<int> labels(static_cast<std::size_t>(B));
            std::vector<double> ts(static_cast<std::size_t>(B));

            for (std::int64_t bi = 0; bi < B; ++bi) {
                const std::int64_t idx = perm[static_cast<std::size_t>(i0 + bi)];
                const double* clip = data.videos.data() + idx * F * HW;
                std::int64_t f0 = 0;
                if (window) {
                    f0 = Tc + static_cast<std::int64_t>(
                                  rng.below(static_cast<std::uint64_t>(F - T - Tc + 1)));
                    std::copy(clip + (f0 - Tc) * HW, clip + f0 * HW, ctx.data() + bi * Tc * HW);
                    ctx_on[static_cast<std::size_t>(bi)] = !rng.bernoulli(tc.context_dropout);
                }
                std::copy(clip + f0 * HW, clip + (f0 + T) * HW, x0.data() + bi * T * HW);
                labels[static_cast<std::size_t>(bi)] =
                    rng.bernoulli(tc.label_dropout) ? -1 : data.labels[static_cast<std::size_t>(idx)];
                ts[static_cast<std::size_t>(bi)] = 1.0 - rng.uniform();  // (0,1]
            }

            // Noise the batch and compute the regression target.
            Tensor x_t(x0.shape()), target(x0.shape());
            for (std::int64_t bi = 0; bi < B; ++bi) {
                const double t = ts[static_cast<std::size_t>(bi)];
                const double a = sched.alpha(t), sg = sched.sigma(t);
                const double ad = sched.alpha_dot(t), sd = sched.sigma_dot(t);
                double* xt = x_t.data() + bi * T * HW;
                double* tg = target.data() + bi * T * HW;
                const double* x0p = x0.data() + bi * T * HW;
                for (std::int64_t i = 0; i < T * HW; ++i) {
                    const double e = rng.normal();
                    xt[i] = a * x0p[i] + sg * e;
                    tg[i] = eps_mode ? e : ad * x0p[i] + sd * e;
                }
            }

            Tape tape;
            Binding bind(tape, /*train=*/true);
            Var pred = net.forward(bind, tape.constant(std::move(x_t)), ts, labels, ctx, ctx_on);
            Var loss = mse_loss(pred, tape.constant(std::move(target)));
            net.params().zero_grad();
            tape.backward(loss);
            bind.harvest();
            opt.step(net.params());

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
// Sampling and persistence
// ---------------------------------------------------------------------------

Tensor generate(const DenoiserNetwork& net, const GenerationCondition& cond,
                const SolveOptions& opt, std::uint64_t seed, SolveStats* stats) {
    DenoiserScoreModel model(net, cond, net.config().frames);
    Rng rng(derive_seed(seed, 0x686f6cull));
    return solve(model, opt, rng, stats);
}

Tensor generate_autoregressive(const DenoiserNetwork& net, const GenerationCondition& cond,
                               const SolveOptions& opt, std::uint64_t seed, SolveStats* stats) {
    const GeneratorConfig& cfg = net.config();
    require(cond.context.numel() == 0,
            "generate_autoregressive: context is managed per chunk, leave it empty");
    require(cfg.frames % cfg.chunk_frames == 0,
            "generate_autoregressive: frames must be a multiple of chunk_frames");
    require(cfg.chunk_frames >= cfg.context_frames,
            "generate_autoregressive: chunks are shorter than the context they must provide");
    const std::int64_t n_chunks = cfg.frames / cfg.chunk_frames;
    const std::int64_t HW = cfg.height * cfg.width, Tc = cfg.context_frames;

    Tensor clip(Shape{cfg.frames, cfg.height, cfg.width});
    Tensor tail;
    for (std::int64_t c = 0; c < n_chunks; ++c) {
        GenerationCondition cc = cond;
        cc.context = tail;
        DenoiserScoreModel model(net, cc, cfg.chunk_frames);
        Rng rng(derive_seed(seed, 0x61720000ull + static_cast<std::uint64_t>(c)));
        Tensor chunk = solve(model, opt, rng, stats);

        std::copy(chunk.data(), chunk.data() + chunk.numel(),
                  clip.data() + c * cfg.chunk_frames * HW);
        tail = Tensor(Shape{Tc, cfg.height, cfg.width});
        std::copy(chunk.data() + (cfg.chunk_frames - Tc) * HW, chunk.data() + chunk.numel(),
                  tail.data());
    }
    return clip;
}

void save_generator(const DenoiserNetwork& net, const std::string& path) {
    Checkpoint ck;
    ck.meta["kind"] = "generator";
    ck.meta["config"] = net.config();
    ck.add_store("generator", net.params());
    ck.save(path);
}

DenoiserNetwork load_generator(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    require(ck.meta.value("kind", "") == "generator",
            "load_generator: " + path + " is not a generator checkpoint");
    GeneratorConfig cfg = ck.meta.at("config").get<GeneratorConfig>();
    DenoiserNetwork net(cfg, 0);
    ck.load_store("generator", net.params());
    return net;
}

void to_json(nlohmann::json& j, const GeneratorTrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"lr", c.lr},
                       {"clip_norm", c.clip_norm},
                       {"label_dropout", c.label_dropout},
                       {"context_dropout", c.context_dropout},
                       {"window_prob", c.window_prob},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, GeneratorTrainConfig& c) {
    const GeneratorTrainConfig d = c;
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.clip_norm = j.value("clip_norm", d.clip_norm);
    c.label_dropout = j.value("label_dropout", d.label_dropout);
    c.context_dropout = j.value("context_dropout", d.context_dropout);
    c.window_prob = j.value("window_prob", d.window_prob);
    c.seed = j.value("seed", d.seed);
}

}  // namespace wmsteer
