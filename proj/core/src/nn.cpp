#include "wmsteer/nn.hpp"

#include <cmath>

namespace wmsteer {

// ---------------------------------------------------------------------------
// ParamStore / Adam / EMA
// ---------------------------------------------------------------------------

Param& ParamStore::create(const std::string& name, Tensor init) {
    require(index_.find(name) == index_.end(), "duplicate parameter name: " + name);
    Param p;
    p.name = name;
    p.value = std::move(init);
    params_.push_back(std::move(p));
    index_[name] = params_.size() - 1;
    return params_.back();
}

Param* ParamStore::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
}

const Param* ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
}

std::int64_t ParamStore::scalar_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_)
        if (p.grad.numel() != 0) p.grad.fill(0.0);
}

void Adam::step(ParamStore& store) {
    ++t_;
    double clip_scale = 1.0;
    if (cfg_.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& p : store.all())
            for (std::int64_t i = 0; i < p.grad.numel(); ++i) sq += p.grad[i] * p.grad[i];
        double norm = std::sqrt(sq);
        if (norm > cfg_.clip_norm) clip_scale = cfg_.clip_norm / norm;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& p : store.all()) {
        if (p.grad.numel() == 0) continue;
        if (p.m.numel() == 0) {
            p.m = Tensor(p.value.shape());
            p.v = Tensor(p.value.shape());
        }
        for (std::int64_t i = 0; i < p.value.numel(); ++i) {
            double g = clip_scale * p.grad[i];
            p.m[i] = cfg_.beta1 * p.m[i] + (1.0 - cfg_.beta1) * g;
            p.v[i] = cfg_.beta2 * p.v[i] + (1.0 - cfg_.beta2) * g * g;
            double mhat = p.m[i] / bc1;
            double vhat = p.v[i] / bc2;
            p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void ema_update(ParamStore& target, const ParamStore& online, double decay) {
    for (auto& tp : target.all()) {
        const Param* op = online.find(tp.name);
        require(op != nullptr, "ema_update: online store is missing parameter " + tp.name);
        require(op->value.same_shape(tp.value), "ema_update: shape mismatch for " + tp.name);
        for (std::int64_t i = 0; i < tp.value.numel(); ++i)
            tp.value[i] = decay * tp.value[i] + (1.0 - decay) * op->value[i];
    }
}

// ---------------------------------------------------------------------------
// Binding
// ---------------------------------------------------------------------------

Var Binding::use(Param& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    Var v = tape_->leaf(p.value, train_);
    bound_.emplace(&p, v);
    order_.push_back(&p);
    return v;
}

void Binding::harvest() {
    for (Param* p : order_) {
        const Tensor& g = bound_.at(p).grad();
        if (g.numel() == 0) continue;
        if (p->grad.numel() == 0) p->grad = Tensor(p->value.shape());
        for (std::int64_t i = 0; i < g.numel(); ++i) p->grad[i] += g[i];
    }
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

Linear::Linear(ParamStore& s, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng) {
    double std = 1.0 / std::sqrt(static_cast<double>(in));
    w_ = &s.create(name + ".w", normal_tensor(Shape{in, out}, rng, std));
    b_ = &s.create(name + ".b", Tensor(Shape{out}));
}

LayerNormLayer::LayerNormLayer(ParamStore& s, const std::string& name, std::int64_t c) {
    g_ = &s.create(name + ".g", Tensor(Shape{c}, 1.0));
    b_ = &s.create(name + ".b", Tensor(Shape{c}));
}

TimeConvLayer::TimeConvLayer(ParamStore& s, const std::string& name, std::int64_t k,
                             std::int64_t c_in, std::int64_t c_out, Rng& rng) {
    double std = 1.0 / std::sqrt(static_cast<double>(k * c_in));
    w_ = &s.create(name + ".w", normal_tensor(Shape{k, c_in, c_out}, rng, std));
    b_ = &s.create(name + ".b", Tensor(Shape{c_out}));
}

SpaceMixLayer::SpaceMixLayer(ParamStore& s, const std::string& name, std::int64_t n_tokens, Rng& rng) {
    double std = 1.0 / std::sqrt(static_cast<double>(n_tokens));
    w_ = &s.create(name + ".w", normal_tensor(Shape{n_tokens, n_tokens}, rng, std));
}

EmbeddingTable::EmbeddingTable(ParamStore& s, const std::string& name, std::int64_t rows,
                               std::int64_t c, Rng& rng) {
    t_ = &s.create(name + ".table", normal_tensor(Shape{rows, c}, rng, 0.02));
}

MixerBlock::MixerBlock(ParamStore& s, const std::string& name, std::int64_t n_tokens,
                       std::int64_t c, std::int64_t hidden_mult, Rng& rng)
    : ln_t_(s, name + ".ln_t", c),
      ln_s_(s, name + ".ln_s", c),
      ln_c_(s, name + ".ln_c", c),
      tconv_(s, name + ".tconv", 3, c, c, rng),
      smix_(s, name + ".smix", n_tokens, rng),
      mlp_in_(s, name + ".mlp_in", c, hidden_mult * c, rng),
      mlp_out_(s, name + ".mlp_out", hidden_mult * c, c, rng) {}

Var MixerBlock::operator()(Binding& b, Var x) const {
    x = add(x, tconv_(b, ln_t_(b, x)));
    x = add(x, smix_(b, ln_s_(b, x)));
    x = add(x, mlp_out_(b, silu(mlp_in_(b, ln_c_(b, x)))));
    return x;
}

Tensor sincos_features(double t, std::int64_t dim) {
    require(dim >= 2 && dim % 2 == 0, "sincos_features: dim must be even and >= 2");
    Tensor f(Shape{dim});
    const std::int64_t half = dim / 2;
    const double tau = 1000.0 * t;
    for (std::int64_t i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        f[2 * i] = std::sin(tau * freq);
        f[2 * i + 1] = std::cos(tau * freq);
    }
    return f;
}

}  // namespace wmsteer
