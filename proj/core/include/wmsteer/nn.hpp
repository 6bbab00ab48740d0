#pragma once

/* Parameter storage, optimizer and network building blocks.
 *
 * Parameters live in a ParamStore (named, checkpointable).  A Binding wires
 * parameters onto a Tape for one forward pass: `use` creates a leaf (shared
 * if the same parameter appears twice) and `harvest` copies tape gradients
 * back into Param::grad after backward().  Layers hold Param pointers and
 * are pure functions of (Binding, Var).
 */

#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "wmsteer/autodiff.hpp"
#include "wmsteer/rng.hpp"
#include "wmsteer/tensor.hpp"

namespace wmsteer {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;  // empty until a backward pass touches it
    Tensor m, v;  // Adam moments, sized lazily
};

class ParamStore {
public:
    Param& create(const std::string& name, Tensor init);
    Param* find(const std::string& name);
    const Param* find(const std::string& name) const;

    std::deque<Param>& all() { return params_; }
    const std::deque<Param>& all() const { return params_; }
    std::int64_t scalar_count() const;
    void zero_grad();

private:
    std::deque<Param> params_;  // deque: stable addresses for layer pointers
    std::unordered_map<std::string, std::size_t> index_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0;  // 0 = no clipping
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
    void step(ParamStore& store);
    std::int64_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

private:
    AdamConfig cfg_;
    std::int64_t t_ = 0;
};

// target <- decay * target + (1 - decay) * online, matched by parameter name.
void ema_update(ParamStore& target, const ParamStore& online, double decay);

class Binding {
public:
    Binding(Tape& tape, bool train) : tape_(&tape), train_(train) {}

    Var use(Param& p);
    Var constant(Tensor t) { return tape_->constant(std::move(t)); }
    Tape& tape() { return *tape_; }
    bool training() const { return train_; }

    // Adds each bound parameter's tape gradient into Param::grad.
    void harvest();

private:
    Tape* tape_;
    bool train_;
    std::unordered_map<Param*, Var> bound_;
    std::vector<Param*> order_;
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

class Linear {
public:
    Linear(ParamStore& s, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng);
    Var operator()(Binding& b, Var x) const { return linear(x, b.use(*w_), b.use(*b_)); }

private:
    Param* w_;
    Param* b_;
};

class LayerNormLayer {
public:
    LayerNormLayer(ParamStore& s, const std::string& name, std::int64_t c);
    Var operator()(Binding& b, Var x) const { return layernorm(x, b.use(*g_), b.use(*b_)); }
    Param& gamma() { return *g_; }

private:
    Param* g_;
    Param* b_;
};

class TimeConvLayer {
public:
    TimeConvLayer(ParamStore& s, const std::string& name, std::int64_t k, std::int64_t c_in,
                  std::int64_t c_out, Rng& rng);
    Var operator()(Binding& b, Var x) const { return time_conv(x, b.use(*w_), b.use(*b_)); }

private:
    Param* w_;
    Param* b_;
};

class SpaceMixLayer {
public:
    SpaceMixLayer(ParamStore& s, const std::string& name, std::int64_t n_tokens, Rng& rng);
    Var operator()(Binding& b, Var x) const { return mix_tokens(x, b.use(*w_)); }

private:
    Param* w_;
};

class EmbeddingTable {
public:
    EmbeddingTable(ParamStore& s, const std::string& name, std::int64_t rows, std::int64_t c, Rng& rng);
    Var rows(Binding& b, std::vector<std::int64_t> ids) const {
        return gather_rows(b.use(*t_), std::move(ids));
    }
    std::int64_t row_count() const { return t_->value.dim(0); }
    Param& table() { return *t_; }

private:
    Param* t_;
};

/* Factorized space/time mixer block over [B,T,S,C]:
 * temporal conv -> token mixing -> channel MLP, each residual with pre-LN. */
class MixerBlock {
public:
    MixerBlock(ParamStore& s, const std::string& name, std::int64_t n_tokens, std::int64_t c,
               std::int64_t hidden_mult, Rng& rng);
    Var operator()(Binding& b, Var x) const;

private:
    LayerNormLayer ln_t_, ln_s_, ln_c_;
    TimeConvLayer tconv_;
    SpaceMixLayer smix_;
    Linear mlp_in_, mlp_out_;
};

// Sinusoidal features of a continuous scalar (diffusion time), length dim.
Tensor sincos_features(double t, std::int64_t dim);

}  // namespace wmsteer
