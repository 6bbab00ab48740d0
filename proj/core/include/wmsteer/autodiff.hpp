#pragma once

/* Tape-based reverse-mode automatic differentiation.
 *
 * A Tape owns a flat list of nodes created in execution order; backward()
 * walks the list in reverse, calling each node's pull-back closure.  Ops are
 * free functions over Var handles.  A node only gets a pull-back if at least
 * one operand requires gradients, so running a frozen network on a tape is
 * automatically gradient-free (this is how the EMA target encoder implements
 * its stop-gradient).
 *
 * The op vocabulary is tailored to this project's networks: everything is
 * either a flat matrix [rows, C] or a video token grid [B, T, S, C]
 * (batch, time, space tokens, channels).
 */

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "wmsteer/tensor.hpp"

namespace wmsteer {

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, std::int32_t id) : tape_(tape), id_(id) {}

    bool valid() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    std::int32_t id() const { return id_; }

    const Tensor& value() const;
    const Tensor& grad() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;

private:
    Tape* tape_ = nullptr;
    std::int32_t id_ = -1;
};

class Tape {
public:
    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Seeds d(root)/d(root) = 1 and pulls gradients back to every leaf.
    // root must be a scalar (shape []).
    void backward(const Var& root);

    void clear();
    std::size_t size() const { return nodes_.size(); }

    // --- internals used by ops and by Var accessors -----------------------
    // A pullback receives the tape and the id of its own node; it reads that
    // node's gradient and accumulates into its parents.  Leaves have none.
    using Pullback = std::function<void(Tape&, std::int32_t)>;

    struct Node {
        Tensor value;
        Tensor grad;  // allocated lazily during backward
        bool requires_grad = false;
        Pullback pullback;
    };

    const Tensor& value_of(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    Tensor& value_of(std::int32_t id) { return nodes_[static_cast<std::size_t>(id)].value; }
    const Tensor& grad_of(std::int32_t id) const;
    bool requires_grad_of(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

    // Adds g into the gradient buffer of node id (no-op for non-grad nodes).
    void accumulate(std::int32_t id, const Tensor& g);
    void accumulate_scaled(std::int32_t id, const Tensor& g, double s);

    Var emit(Tensor value, bool requires_grad, Pullback pullback);

private:
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Elementwise / scalar ops
// ---------------------------------------------------------------------------
Var add(Var a, Var b);                       // same shape
Var sub(Var a, Var b);
Var mul(Var a, Var b);                       // elementwise
Var add_scaled(Var a, Var b, double s);      // a + s*b
Var scale(Var a, double s);
Var add_const(Var a, double c);
Var silu(Var a);
Var sigmoid(Var a);
Var abs_val(Var a);
Var clamp01(Var a);                          // pass-through gradient inside (0,1)

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------
Var matmul(Var a, Var b);                    // [m,k] x [k,n]
// x:[..., in] -> [..., out] with weight [in, out] and bias [out].
Var linear(Var x, Var w, Var b);
// Token mixing over the S axis of [B,T,S,C]:  y[b,t,i,:] = sum_j w[i,j] x[b,t,j,:].
Var mix_tokens(Var x, Var w);
// Temporal conv over the T axis of [B,T,S,C], kernel w:[k,C,Cout], same padding.
Var time_conv(Var x, Var w, Var b);
// LayerNorm over the trailing axis with affine gamma/beta [C].
Var layernorm(Var x, Var gamma, Var beta, double eps = 1e-6);

// ---------------------------------------------------------------------------
// Structure: broadcasting adds, gathers, fixed permutations, slicing
// ---------------------------------------------------------------------------
enum class Broadcast { AllC, BatchC, TimeC, SpaceC, BatchSpaceC };
// x must be [B,T,S,C]; e's shape is implied by the pattern (see enum).
Var add_broadcast(Var x, Var e, Broadcast pattern);

Var gather_rows(Var x, std::vector<std::int64_t> rows);         // x:[N,...] -> [k,...]
Var reshape(Var x, Shape shape);
// out[i] = x[mapping[i]]; mapping must be a bijection on the element range.
Var permute_elements(Var x, Shape out_shape, std::vector<std::int64_t> mapping);
// Selects per-(t,s) between a (mask=0) and b (mask=1); mask has T*S entries.
Var where_mask(const std::vector<std::uint8_t>& mask, Var a, Var b);
Var slice_time(Var x, std::int64_t t0, std::int64_t count);     // axis 1 of [B,T,S,C]

// Video [B,T,H,W] <-> patch tokens [B,T,S,P], S=(H/p)*(W/p), P=p*p.
Var patchify(Var video, std::int64_t patch);
Var unpatchify(Var tokens, std::int64_t h, std::int64_t w, std::int64_t patch);
// Video [B,T,H,W] -> tubelet tokens [B,T/tub,S,tub*p*p].
Var tubeify(Var video, std::int64_t tubelet, std::int64_t patch);

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------
Var sum_all(Var x);
Var mean_all(Var x);
Var mse_loss(Var pred, Var target);
Var l1_loss(Var pred, Var target);
// Per-row cosine similarity of two [n,d] tensors -> [n], with norm floor eps.
Var cosine_rows(Var a, Var b, double eps = 1e-8);
// mean over rows of log(1 + exp(-sign * logit)); targets in {0,1}.
Var bce_with_logits(Var logits, const std::vector<double>& targets);

}  // namespace wmsteer
