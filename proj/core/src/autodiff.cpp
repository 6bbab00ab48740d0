#include "wmsteer/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <utility>

namespace wmsteer {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<const Mat>;
using MutMatMap = Eigen::Map<Mat>;

void check_same_tape(const Var& a, const Var& b, const char* who) {
    require(a.valid() && b.valid() && a.tape() == b.tape(),
            std::string(who) + ": operands live on different tapes");
}

void check_same_shape(const Var& a, const Var& b, const char* who) {
    require(a.shape() == b.shape(), std::string(who) + ": shape mismatch " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void check_btsc(const Var& x, const char* who) {
    require(x.shape().size() == 4,
            std::string(who) + ": expected [B,T,S,C], got " + shape_str(x.shape()));
}

// Copies x shifted along the T axis by `off`: y[b,t] = x[b,t+off], zero pad.
Tensor time_shifted(const Tensor& x, std::int64_t off) {
    const std::int64_t B = x.dim(0), T = x.dim(1), block = x.dim(2) * x.dim(3);
    Tensor y(x.shape());
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t t = 0; t < T; ++t) {
            std::int64_t src = t + off;
            if (src < 0 || src >= T) continue;
            const double* in = x.data() + (b * T + src) * block;
            double* out = y.data() + (b * T + t) * block;
            std::copy(in, in + block, out);
        }
    }
    return y;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value_of(id_); }
const Tensor& Var::grad() const { return tape_->grad_of(id_); }
bool Var::requires_grad() const { return tape_->requires_grad_of(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

Var Tape::emit(Tensor value, bool requires_grad, Pullback pullback) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.pullback = std::move(pullback);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

const Tensor& Tape::grad_of(std::int32_t id) const {
    return nodes_[static_cast<std::size_t>(id)].grad;
}

void Tape::accumulate(std::int32_t id, const Tensor& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    require(g.shape() == n.value.shape(), "gradient shape mismatch: " + shape_str(g.shape()) +
                                              " for node of shape " + shape_str(n.value.shape()));
    if (n.grad.numel() == 0 && n.value.numel() != 0) {
        n.grad = g;
        return;
    }
    double* dst = n.grad.data();
    const double* src = g.data();
    for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

void Tape::accumulate_scaled(std::int32_t id, const Tensor& g, double s) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.numel() == 0 && n.value.numel() != 0) n.grad = Tensor(n.value.shape());
    double* dst = n.grad.data();
    const double* src = g.data();
    for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += s * src[i];
}

void Tape::backward(const Var& root) {
    require(root.valid() && root.tape() == this, "backward: root is not on this tape");
    require(root.value().rank() == 0,
            "backward: root must be a scalar, got " + shape_str(root.value().shape()));
    for (auto& n : nodes_) n.grad = Tensor();
    nodes_[static_cast<std::size_t>(root.id())].grad = Tensor::scalar(1.0);
    for (std::int32_t id = root.id(); id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.pullback && n.grad.numel() != 0) n.pullback(*this, id);
    }
}

void Tape::clear() { nodes_.clear(); }

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Var add_scaled(Var a, Var b, double s) {
    check_same_tape(a, b, "add_scaled");
    check_same_shape(a, b, "add_scaled");
    Tape& tp = *a.tape();
    Tensor y = a.value();
    double* yd = y.data();
    const double* bd = b.value().data();
    for (std::int64_t i = 0; i < y.numel(); ++i) yd[i] += s * bd[i];
    const auto ia = a.id(), ib = b.id();
    return tp.emit(std::move(y), a.requires_grad() || b.requires_grad(),
                   [ia, ib, s](Tape& t, std::int32_t self) {
                       const Tensor& gy = t.grad_of(self);
                       t.accumulate(ia, gy);
                       t.accumulate_scaled(ib, gy, s);
                   });
}

Var add(Var a, Var b) { return add_scaled(a, b, 1.0); }
Var sub(Var a, Var b) { return add_scaled(a, b, -1.0); }

Var mul(Var a, Var b) {
    check_same_tape(a, b, "mul");
    check_same_shape(a, b, "mul");
    Tape& tp = *a.tape();
    Tensor y = a.value();
    double* yd = y.data();
    const double* bd = b.value().data();
    for (std::int64_t i = 0; i < y.numel(); ++i) yd[i] *= bd[i];
    const auto ia = a.id(), ib = b.id();
    return tp.emit(std::move(y), a.requires_grad() || b.requires_grad(),
                   [ia, ib](Tape& t, std::int32_t self) {
                       const Tensor& gy = t.grad_of(self);
                       const Tensor& av = t.value_of(ia);
                       const Tensor& bv = t.value_of(ib);
                       if (t.requires_grad_of(ia)) {
                           Tensor ga(av.shape());
                           for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] = gy[i] * bv[i];
                           t.accumulate(ia, ga);
                       }
                       if (t.requires_grad_of(ib)) {
                           Tensor gb(bv.shape());
                           for (std::int64_t i = 0; i < gb.numel(); ++i) gb[i] = gy[i] * av[i];
                           t.accumulate(ib, gb);
                       }
                   });
}

Var scale(Var a, double s) {
    Tape& tp = *a.tape();
    Tensor y = a.value();
    double* yd = y.data();
    for (std::int64_t i = 0; i < y.numel(); ++i) yd[i] *= s;
    const auto ia = a.id();
    return tp.emit(std::move(y), a.requires_grad(), [ia, s](Tape& t, std::int32_t self) {
        t.accumulate_scaled(ia, t.grad_of(self), s);
    });
}

Var add_const(Var a, double c) {
    Tape& tp = *a.tape();
    Tensor y = a.value();
    double* yd = y.data();
    for (std::int64_t i = 0; i < y.numel(); ++i) yd[i] += c;
    const auto ia = a.id();
    return tp.emit(std::move(y), a.requires_grad(),
                   [ia](Tape& t, std::int32_t self) { t.accumulate(ia, t.grad_of(self)); });
}

Var silu(Var a) {
    Tape& tp = *a.tape();
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        double sg = 1.0 / (1.0 + std::exp(-x[i]));
        y[i] = x[i] * sg;
    }
    const auto ia = a.id();
    return tp.emit(std::move(y), a.requires_grad(), [ia](Tape& t, std::int32_t self) {
        const Tensor& gy = t.grad_of(self);
        const Tensor& x = t.value_of(ia);
        Tensor gx(x.shape());
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            double sg = 1.0 / (1.0 + std::exp(-x[i]));
            gx[i] = gy[i] * sg * (1.0 + x[i] * (1.0 - sg));
        }
        t.accumulate(ia, gx);
    });
}

Var sigmoid(Var a) {
    Tape& tp = *a.tape();
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
    const auto ia = a.id();
    return tp.emit(std::move(y), a.requires_grad(), [ia](Tape& t, std::int32_t self) {
        const Tensor& gy = t.grad_of(self);
        const Tensor& y = t.value_of(self);
        Tensor gx(y.shape());
        for (std::int64_t i = 0; i < y.numel(); ++i) gx[i] = gy[i] * y[i] * (1.0 - y[i]);
        t.accumulate(ia, gx);
    });
}

Var abs_val(Var a) {
    Tape& tp = *a.tape();
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = std::abs(x[i]);
    const auto ia = a.id();
    return tp.emit(std::move(y), a.requires_grad(), [ia](Tape& t, std::int32_t self) {
        const Tensor& gy = t.grad_of(self);
        const Tensor& x = t.value_of(ia);
        Tensor gx(x.shape());
        for (std::int64_t i = 0; i < x.numel(); ++i)
            gx[i] = x[i] > 0.0 ? gy[i] : (x[i] < 0.0 ? -gy[i] : 0.0);
        t.accumulate(ia, gx);
    });
}

Var clamp01(Var a) {
    Tape& tp = *a.tape();
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = std::clamp(x[i], 0.0, 1.0);
    const auto ia = a.id();
    return tp.emit(std::move(y), a.requires_grad(), [ia](Tape& t, std::int32_t self) {
        const Tensor& gy = t.grad_of(self);
        const Tensor& x = t.value_of(ia);
        Tensor gx(x.shape());
        for (std::int64_t i = 0; i < x.numel(); ++i)
            gx[i] = (x[i] > 0.0 && x[i] < 1.0) ? gy[i] : 0.0;
        t.accumulate(ia, gx);
    });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
    check_same_tape(a, b, "matmul");
    Tape& tp = *a.tape();
    Tensor y = matmul(a.value(), b.value());
    const auto ia = a.id(), ib = b.id();
    return tp.emit(std::move(y), a.requires_grad() || b.requires_grad(),
                   [ia, ib](Tape& t, std::int32_t self) {
                       const Tensor& gy = t.grad_of(self);
                       if (t.requires_grad_of(ia)) t.accumulate(ia, matmul_nt(gy, t.value_of(ib)));
                       if (t.requires_grad_of(ib)) t.accumulate(ib, matmul_tn(t.value_of(ia), gy));
                   });
}

Var linear(Var x, Var w, Var b) {
    check_same_tape(x, w, "linear");
    check_same_tape(x, b, "linear");
    require(w.shape().size() == 2, "linear: weight must be [in,out], got " + shape_str(w.shape()));
    require(b.shape().size() == 1 && b.shape()[0] == w.shape()[1],
            "linear: bias must be [out], got " + shape_str(b.shape()));
    const Shape& xs = x.shape();
    require(!xs.empty() && xs.back() == w.shape()[0],
            "linear: input " + shape_str(xs) + " does not match weight " + shape_str(w.shape()));

    const std::int64_t in = w.shape()[0], out = w.shape()[1];
    const std::int64_t rows = x.value().numel() / in;
    Shape ys = xs;
    ys.back() = out;

    Tensor y(ys);
    MutMatMap ym(y.data(), rows, out);
    ym.noalias() = MatMap(x.value().data(), rows, in) * MatMap(w.value().data(), in, out);
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), out);

    const auto ix = x.id(), iw = w.id(), ib = b.id();
    bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
    Tape& tp = *x.tape();
    return tp.emit(std::move(y), rg, [rows, in, out, ix, iw, ib](Tape& t, std::int32_t self) {
        const Tensor& gy = t.grad_of(self);
        MatMap gym(gy.data(), rows, out);
        if (t.requires_grad_of(ix)) {
            Tensor gx(t.value_of(ix).shape());
            MutMatMap(gx.data(), rows, in).noalias() = gym * MatMap(t.value_of(iw).data(), in, out).transpose();
            t.accumulate(ix, gx);
        }
        if (t.requires_grad_of(iw)) {
            Tensor gw(Shape{in, out});
            MutMatMap(gw.data(), in, out).noalias() =
                MatMap(t.value_of(ix).data(), rows, in).transpose() * gym;
            t.accumulate(iw, gw);
        }
        if (t.requires_grad_of(ib)) {
            Tensor gb(Shape{out});
            Eigen::Map<Eigen::RowVectorXd>(gb.data(), out) = gym.colwise().sum();
            t.accumulate(ib, gb);
        }
    });
}

Var mix_tokens(Var x, Var w) {
    check_same_tape(x, w, "mix_tokens");
    check_btsc(x, "mix_tokens");
    const std::int64_t B = x.shape()[0], T = x.shape()[1], S = x.shape()[2], C = x.shape()[3];
    require(w.shape() == Shape{S, S}, "mix_tokens: weight must be [S,S]=" + std::to_string(S) +
                                          ", got " + shape_str(w.shape()));
    Tensor y(x.shape());
    MatMap wm(w.value().data(), S, S);
    for (std::int64_t bt = 0; bt < B * T; ++bt) {
        MutMatMap(y.data() + bt * S * C, S, C).noalias() =
            wm * MatMap(x.value().data() + bt * S * C, S, C);
    }
    const auto ix = x.id(), iw = w.id();
    return x.tape()->emit(std::move(y), x.requires_grad() || w.requires_grad(),
                          [B, T, S, C, ix, iw](Tape& t, std::int32_t self) {
                              const Tensor& gy = t.grad_of(self);
                              const Tensor& xv = t.value_of(ix);
                              const Tensor& wv = t.value_of(iw);
                              MatMap wm(wv.data(), S, S);
                              if (t.requires_grad_of(ix)) {
                                  Tensor gx(xv.shape());
                                  for (std::int64_t bt = 0; bt < B * T; ++bt) {
                                      MutMatMap(gx.data() + bt * S * C, S, C).noalias() =
                                          wm.transpose() * MatMap(gy.data() + bt * S * C, S, C);
                                  }
                                  t.accumulate(ix, gx);
                              }
                              if (t.requires_grad_of(iw)) {
                                  Tensor gw(Shape{S, S});
                                  MutMatMap gwm(gw.data(), S, S);
                                  for (std::int64_t bt = 0; bt < B * T; ++bt) {
                                      gwm.noalias() += MatMap(gy.data() + bt * S * C, S, C) *
                                                       MatMap(xv.data() + bt * S * C, S, C).transpose();
                                  }
                                  t.accumulate(iw, gw);
                              }
                          });
}

Var time_conv(Var x, Var w, Var b) {
    check_same_tape(x, w, "time_conv");
    check_same_tape(x, b, "time_conv");
    check_btsc(x, "time_conv");
    require(w.shape().size() == 3, "time_conv: weight must be [k,C,Cout], got " + shape_str(w.shape()));
    const std::int64_t K = w.shape()[0], C = w.shape()[1], Co = w.shape()[2];
    require(K % 2 == 1, "time_conv: kernel size must be odd");
    require(x.shape()[3] == C, "time_conv: channel mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
    require(b.shape() == Shape{Co}, "time_conv: bias must be [Cout]");

    const std::int64_t B = x.shape()[0], T = x.shape()[1], S = x.shape()[2];
    const std::int64_t rows = B * T * S;
    Tensor y(Shape{B, T, S, Co});
    MutMatMap ym(y.data(), rows, Co);
    for (std::int64_t k = 0; k < K; ++k) {
        Tensor xs = time_shifted(x.value(), k - K / 2);
        ym.noalias() += MatMap(xs.data(), rows, C) * MatMap(w.value().data() + k * C * Co, C, Co);
    }
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), Co);

    const auto ix = x.id(), iw = w.id(), ib = b.id();
    bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
    return x.tape()->emit(std::move(y), rg, [K, C, Co, B, T, S, rows, ix, iw, ib](Tape& t, std::int32_t self) {
        const Tensor& gy = t.grad_of(self);
        MatMap gym(gy.data(), rows, Co);
        const Tensor& wv = t.value_of(iw);
        if (t.requires_grad_of(ix)) {
            Tensor gx(t.value_of(ix).shape());
            for (std::int64_t k = 0; k < K; ++k) {
                // y[b,t] consumed x[b,t+off]  =>  gx[b,t'] += gy[b,t'-off] @ W_k^T
                Tensor gpart(Shape{B, T, S, C});
                MutMatMap(gpart.data(), rows, C).noalias() =
                    gym * MatMap(wv.data() + k * C * Co, C, Co).transpose();
                Tensor shifted = time_shifted(gpart, -(k - K / 2));
                double* dst = gx.data();
                const double* src = shifted.data();
                for (std::int64_t i = 0; i < gx.numel(); ++i) dst[i] += src[i];
            }
            t.accumulate(ix, gx);
        }
        if (t.requires_grad_of(iw)) {
            Tensor gw(wv.shape());
            for (std::int64_t k = 0; k < K; ++k) {
                Tensor xs = time_shifted(t.value_of(ix), k - K / 2);
                MutMatMap(gw.data() + k * C * Co, C, Co).noalias() =
                    MatMap(xs.data(), rows, C).transpose() * gym;
            }
            t.accumulate(iw, gw);
        }
        if (t.requires_grad_of(ib)) {
            Tensor gb(Shape{Co});
            Eigen::Map<Eigen::RowVectorXd>(gb.data(), Co) = gym.colwise().sum();
            t.accumulate(ib, gb);
        }
    });
}

Var layernorm(Var x, Var gamma, Var beta, double eps) {
    check_same_tape(x, gamma, "layernorm");
    check_same_tape(x, beta, "layernorm");
    const Shape& xs = x.shape();
    require(!xs.empty(), "layernorm: scalar input");
    const std::int64_t C = xs.back();
    require(gamma.shape() == Shape{C} && beta.shape() == Shape{C},
            "layernorm: affine params must be [C]=" + std::to_string(C));
    const std::int64_t rows = x.value().numel() / C;

    Tensor y(xs);
    std::vector<double> inv_std(static_cast<std::size_t>(rows));
    {
        const double* xd = x.value().data();
        const double* g = gamma.value().data();
        const double* bt = beta.value().data();
        double* yd = y.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* xr = xd + r * C;
            double mu = 0.0;
            for (std::int64_t c = 0; c < C; ++c) mu += xr[c];
            mu /= static_cast<double>(C);
            double var = 0.0;
            for (std::int64_t c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
            var /= static_cast<double>(C);
            double is = 1.0 / std::sqrt(var + eps);
            inv_std[static_cast<std::size_t>(r)] = is;
            double* yr = yd + r * C;
            for (std::int64_t c = 0; c < C; ++c) yr[c] = g[c] * ((xr[c] - mu) * is) + bt[c];
        }
    }

    const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
    bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    return x.tape()->emit(std::move(y), rg,
                          [rows, C, ix, ig, ib, inv = std::move(inv_std)](Tape& t, std::int32_t self) {
        const Tensor& gy = t.grad_of(self);
        const Tensor& xv = t.value_of(ix);
        const Tensor& gv = t.value_of(ig);
        const double* xd = xv.data();
        const double* gyd = gy.data();
        const double* g = gv.data();

        Tensor gx, ggamma, gbeta;
        const bool wx = t.requires_grad_of(ix);
        const bool wg = t.requires_grad_of(ig);
        const bool wb = t.requires_grad_of(ib);
        if (wx) gx = Tensor(xv.shape());
        if (wg) ggamma = Tensor(Shape{C});
        if (wb) gbeta = Tensor(Shape{C});

        std::vector<double> xhat(static_cast<std::size_t>(C));
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* xr = xd + r * C;
            const double* gyr = gyd + r * C;
            const double is = inv[static_cast<std::size_t>(r)];
            double mu = 0.0;
            for (std::int64_t c = 0; c < C; ++c) mu += xr[c];
            mu /= static_cast<double>(C);
            for (std::int64_t c = 0; c < C; ++c) xhat[static_cast<std::size_t>(c)] = (xr[c] - mu) * is;

            if (wg)
                for (std::int64_t c = 0; c < C; ++c) ggamma[c] += gyr[c] * xhat[static_cast<std::size_t>(c)];
            if (wb)
                for (std::int64_t c = 0; c < C; ++c) gbeta[c] += gyr[c];
            if (wx) {
                double m1 = 0.0, m2 = 0.0;
                for (std::int64_t c = 0; c < C; ++c) {
                    double gg = gyr[c] * g[c];
                    m1 += gg;
                    m2 += gg * xhat[static_cast<std::size_t>(c)];
                }
                m1 /= static_cast<double>(C);
                m2 /= static_cast<double>(C);
                double* gxr = gx.data() + r * C;
                for (std::int64_t c = 0; c < C; ++c) {
                    double gg = gyr[c] * g[c];
                    gxr[c] = is * (gg - m1 - xhat[static_cast<std::size_t>(c)] * m2);
                }
            }
        }
        if (wx) t.accumulate(ix, gx);
        if (wg) t.accumulate(ig, ggamma);
        if (wb) t.accumulate(ib, gbeta);
    });
}

// ---------------------------------------------------------------------------
// Structure ops
// ---------------------------------------------------------------------------

Var add_broadcast(Var x, Var e, Broadcast pattern) {
    check_same_tape(x, e, "add_broadcast");
    check_btsc(x, "add_broadcast");
    const std::int64_t B = x.shape()[0], T = x.shape()[1], S = x.shape()[2], C = x.shape()[3];

    Shape want;
    switch (pattern) {
        case Broadcast::AllC: want = {C}; break;
        case Broadcast::BatchC: want = {B, C}; break;
        case Broadcast::TimeC: want = {T, C}; break;
        case Broadcast::SpaceC: want = {S, C}; break;
        case Broadcast::BatchSpaceC: want = {B, S, C}; break;
    }
    require(e.shape() == want, "add_broadcast: expected " + shape_str(want) + ", got " + shape_str(e.shape()));

    auto e_row = [pattern, S, C](const double* ed, std::int64_t b, std::int64_t t,
                                 std::int64_t s) -> const double* {
        switch (pattern) {
            case Broadcast::AllC: return ed;
            case Broadcast::BatchC: return ed + b * C;
            case Broadcast::TimeC: return ed + t * C;
            case Broadcast::SpaceC: return ed + s * C;
            case Broadcast::BatchSpaceC: return ed + (b * S + s) * C;
        }
        return ed;
    };

    Tensor y = x.value();
    {
        const double* ed = e.value().data();
        double* yd = y.data();
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t t = 0; t < T; ++t)
                for (std::int64_t s = 0; s < S; ++s) {
                    const double* er = e_row(ed, b, t, s);
                    double* yr = yd + ((b * T + t) * S + s) * C;
                    for (std::int64_t c = 0; c < C; ++c) yr[c] += er[c];
                }
    }

    const auto ix = x.id(), ie = e.id();
    return x.tape()->emit(std::move(y), x.requires_grad() || e.requires_grad(),
                          [B, T, S, C, ix, ie, e_row](Tape& t, std::int32_t self) {
        const Tensor& gy = t.grad_of(self);
        t.accumulate(ix, gy);
        if (t.requires_grad_of(ie)) {
            Tensor ge(t.value_of(ie).shape());
            double* ged = ge.data();
            const double* gyd = gy.data();
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t tt = 0; tt < T; ++tt)
                    for (std::int64_t s = 0; s < S; ++s) {
                        double* ger = const_cast<double*>(e_row(ged, b, tt, s));
                        const double* gyr = gyd + ((b * T + tt) * S + s) * C;
                        for (std::int64_t c = 0; c < C; ++c) ger[c] += gyr[c];
                    }
            t.accumulate(ie, ge);
        }
    });
}

Var gather_rows(Var x, std::vector<std::int64_t> rows) {
    require(x.shape().size() >= 1, "gather_rows: scalar input");
    const std::int64_t N = x.shape()[0];
    const std::int64_t rowsz = N == 0 ? 0 : x.value().numel() / N;
    for (std::int64_t r : rows) require(r >= 0 && r < N, "gather_rows: index out of range");

    Shape ys = x.shape();
    ys[0] = static_cast<std::int64_t>(rows.size());
    Tensor y(ys);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double* src = x.value().data() + rows[i] * rowsz;
        std::copy(src, src + rowsz, y.data() + static_cast<std::int64_t>(i) * rowsz);
    }
    const auto ix = x.id();
    return x.tape()->emit(std::move(y), x.requires_grad(),
                          [ix, rowsz, idx = std::move(rows)](Tape& t, std::int32_t self) {
                              const Tensor& gy = t.grad_of(self);
                              Tensor gx(t.value_of(ix).shape());
                              for (std::size_t i = 0; i < idx.size(); ++i) {
                                  const double* src = gy.data() + static_cast<std::int64_t>(i) * rowsz;
                                  double* dst = gx.data() + idx[i] * rowsz;
                                  for (std::int64_t k = 0; k < rowsz; ++k) dst[k] += src[k];
                              }
                              t.accumulate(ix, gx);
                          });
}

Var reshape(Var x, Shape shape) {
    Tensor y = x.value().reshaped(shape);
    const auto ix = x.id();
    return x.tape()->emit(std::move(y), x.requires_grad(), [ix](Tape& t, std::int32_t self) {
        t.accumulate(ix, t.grad_of(self).reshaped(t.value_of(ix).shape()));
    });
}

Var permute_elements(Var x, Shape out_shape, std::vector<std::int64_t> mapping) {
    require(numel_of(out_shape) == x.value().numel(),
            "permute_elements: output shape " + shape_str(out_shape) + " has wrong element count");
    require(static_cast<std::int64_t>(mapping.size()) == x.value().numel(),
            "permute_elements: mapping size mismatch");
    Tensor y(out_shape);
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = x.value()[mapping[static_cast<std::size_t>(i)]];
    const auto ix = x.id();
    return x.tape()->emit(std::move(y), x.requires_grad(),
                          [ix, map = std::move(mapping)](Tape& t, std::int32_t self) {
                              const Tensor& gy = t.grad_of(self);
                              Tensor gx(t.value_of(ix).shape());
                              for (std::int64_t i = 0; i < gy.numel(); ++i)
                                  gx[map[static_cast<std::size_t>(i)]] += gy[i];
                              t.accumulate(ix, gx);
                          });
}

Var where_mask(const std::vector<std::uint8_t>& mask, Var a, Var b) {
    check_same_tape(a, b, "where_mask");
    check_same_shape(a, b, "where_mask");
    check_btsc(a, "where_mask");
    const std::int64_t B = a.shape()[0], T = a.shape()[1], S = a.shape()[2], C = a.shape()[3];
    require(static_cast<std::int64_t>(mask.size()) == T * S,
            "where_mask: mask must have T*S entries, got " + std::to_string(mask.size()));

    Tensor y(a.shape());
    for (std::int64_t bb = 0; bb < B; ++bb)
        for (std::int64_t ts = 0; ts < T * S; ++ts) {
            const Tensor& src = mask[static_cast<std::size_t>(ts)] ? b.value() : a.value();
            const double* s = src.data() + (bb * T * S + ts) * C;
            double* d = y.data() + (bb * T * S + ts) * C;
            std::copy(s, s + C, d);
        }

    const auto ia = a.id(), ib = b.id();
    return a.tape()->emit(std::move(y), a.requires_grad() || b.requires_grad(),
                          [B, T, S, C, ia, ib, m = mask](Tape& t, std::int32_t self) {
        const Tensor& gy = t.grad_of(self);
        auto route = [&](std::int32_t target, bool pick_masked) {
            if (!t.requires_grad_of(target)) return;
            Tensor g(t.value_of(target).shape());
            for (std::int64_t bb = 0; bb < B; ++bb)
                for (std::int64_t ts = 0; ts < T * S; ++ts) {
                    if (static_cast<bool>(m[static_cast<std::size_t>(ts)]) != pick_masked) continue;
                    const double* s = gy.data() + (bb * T * S + ts) * C;
                    double* d = g.data() + (bb * T * S + ts) * C;
                    std::copy(s, s + C, d);
                }
            t.accumulate(target, g);
        };
        route(ia, false);
        route(ib, true);
    });
}

Var slice_time(Var x, std::int64_t t0, std::int64_t count) {
    check_btsc(x, "slice_time");
    const std::int64_t B = x.shape()[0], T = x.shape()[1], S = x.shape()[2], C = x.shape()[3];
    require(t0 >= 0 && count >= 0 && t0 + count <= T, "slice_time: window [" + std::to_string(t0) +
                                                          "," + std::to_string(t0 + count) +
                                                          ") outside T=" + std::to_string(T));
    Tensor y(Shape{B, count, S, C});
    const std::int64_t block = S * C;
    for (std::int64_t b = 0; b < B; ++b) {
        const double* src = x.value().data() + (b * T + t0) * block;
        std::copy(src, src + count * block, y.data() + b * count * block);
    }
    const auto ix = x.id();
    return x.tape()->emit(std::move(y), x.requires_grad(),
                          [B, T, S, C, t0, count, block, ix](Tape& t, std::int32_t self) {
                              const Tensor& gy = t.grad_of(self);
                              Tensor gx(t.value_of(ix).shape());
                              for (std::int64_t b = 0; b < B; ++b) {
                                  const double* src = gy.data() + b * count * block;
                                  double* dst = gx.data() + (b * T + t0) * block;
                                  for (std::int64_t k = 0; k < count * block; ++k) dst[k] += src[k];
                              }
                              t.accumulate(ix, gx);
                          });
}

namespace {

std::vector<std::int64_t> patchify_mapping(std::int64_t B, std::int64_t T, std::int64_t H,
                                           std::int64_t W, std::int64_t p) {
    const std::int64_t GH = H / p, GW = W / p, S = GH * GW, P = p * p;
    std::vector<std::int64_t> map(static_cast<std::size_t>(B * T * S * P));
    std::int64_t o = 0;
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t gy = 0; gy < GH; ++gy)
                for (std::int64_t gx = 0; gx < GW; ++gx)
                    for (std::int64_t py = 0; py < p; ++py)
                        for (std::int64_t px = 0; px < p; ++px)
                            map[static_cast<std::size_t>(o++)] =
                                ((b * T + t) * H + (gy * p + py)) * W + (gx * p + px);
    return map;
}

}  // namespace

Var patchify(Var video, std::int64_t patch) {
    require(video.shape().size() == 4, "patchify: expected [B,T,H,W], got " + shape_str(video.shape()));
    const std::int64_t B = video.shape()[0], T = video.shape()[1], H = video.shape()[2], W = video.shape()[3];
    require(H % patch == 0 && W % patch == 0, "patchify: frame size not divisible by patch");
    Shape out{B, T, (H / patch) * (W / patch), patch * patch};
    return permute_elements(video, out, patchify_mapping(B, T, H, W, patch));
}

Var unpatchify(Var tokens, std::int64_t h, std::int64_t w, std::int64_t patch) {
    check_btsc(tokens, "unpatchify");
    const std::int64_t B = tokens.shape()[0], T = tokens.shape()[1];
    require(tokens.shape()[2] == (h / patch) * (w / patch) && tokens.shape()[3] == patch * patch,
            "unpatchify: token grid " + shape_str(tokens.shape()) + " does not match frame " +
                std::to_string(h) + "x" + std::to_string(w));
    // Invert the patchify mapping: out[video_idx] = tokens[token_idx].
    auto fwd = patchify_mapping(B, T, h, w, patch);
    std::vector<std::int64_t> inv(fwd.size());
    for (std::size_t i = 0; i < fwd.size(); ++i) inv[static_cast<std::size_t>(fwd[i])] = static_cast<std::int64_t>(i);
    return permute_elements(tokens, Shape{B, T, h, w}, std::move(inv));
}

Var tubeify(Var video, std::int64_t tubelet, std::int64_t patch) {
    require(video.shape().size() == 4, "tubeify: expected [B,T,H,W], got " + shape_str(video.shape()));
    const std::int64_t B = video.shape()[0], T = video.shape()[1], H = video.shape()[2], W = video.shape()[3];
    require(T % tubelet == 0, "tubeify: T not divisible by tubelet");
    require(H % patch == 0 && W % patch == 0, "tubeify: frame size not divisible by patch");
    const std::int64_t Tt = T / tubelet, GH = H / patch, GW = W / patch, S = GH * GW;
    const std::int64_t Q = tubelet * patch * patch;
    std::vector<std::int64_t> map(static_cast<std::size_t>(B * Tt * S * Q));
    std::int64_t o = 0;
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t tt = 0; tt < Tt; ++tt)
            for (std::int64_t gy = 0; gy < GH; ++gy)
                for (std::int64_t gx = 0; gx < GW; ++gx)
                    for (std::int64_t dt = 0; dt < tubelet; ++dt)
                        for (std::int64_t py = 0; py < patch; ++py)
                            for (std::int64_t px = 0; px < patch; ++px)
                                map[static_cast<std::size_t>(o++)] =
                                    ((b * T + (tt * tubelet + dt)) * H + (gy * patch + py)) * W +
                                    (gx * patch + px);
    return permute_elements(video, Shape{B, Tt, S, Q}, std::move(map));
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

Var sum_all(Var x) {
    Tape& tp = *x.tape();
    const auto ix = x.id();
    return tp.emit(Tensor::scalar(x.value().sum()), x.requires_grad(),
                   [ix](Tape& t, std::int32_t self) {
                       double g = t.grad_of(self)[0];
                       Tensor gx(t.value_of(ix).shape(), g);
                       t.accumulate(ix, gx);
                   });
}

Var mean_all(Var x) {
    require(x.value().numel() > 0, "mean_all: empty tensor");
    return scale(sum_all(x), 1.0 / static_cast<double>(x.value().numel()));
}

Var mse_loss(Var pred, Var target) {
    Var d = sub(pred, target);
    return mean_all(mul(d, d));
}

Var l1_loss(Var pred, Var target) { return mean_all(abs_val(sub(pred, target))); }

Var cosine_rows(Var a, Var b, double eps) {
    check_same_tape(a, b, "cosine_rows");
    check_same_shape(a, b, "cosine_rows");
    require(a.shape().size() == 2, "cosine_rows: expected [n,d], got " + shape_str(a.shape()));
    const std::int64_t n = a.shape()[0], d = a.shape()[1];

    Tensor c(Shape{n});
    for (std::int64_t i = 0; i < n; ++i) {
        const double* ar = a.value().data() + i * d;
        const double* br = b.value().data() + i * d;
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::int64_t k = 0; k < d; ++k) {
            dot += ar[k] * br[k];
            na += ar[k] * ar[k];
            nb += br[k] * br[k];
        }
        c[i] = dot / std::max(std::sqrt(na) * std::sqrt(nb), eps);
    }

    const auto ia = a.id(), ib = b.id();
    return a.tape()->emit(std::move(c), a.requires_grad() || b.requires_grad(),
                          [n, d, eps, ia, ib](Tape& t, std::int32_t self) {
        const Tensor& gy = t.grad_of(self);
        const Tensor& av = t.value_of(ia);
        const Tensor& bv = t.value_of(ib);
        const bool wa = t.requires_grad_of(ia);
        const bool wb = t.requires_grad_of(ib);
        Tensor ga, gb;
        if (wa) ga = Tensor(av.shape());
        if (wb) gb = Tensor(bv.shape());
        for (std::int64_t i = 0; i < n; ++i) {
            const double* ar = av.data() + i * d;
            const double* br = bv.data() + i * d;
            double dot = 0.0, na2 = 0.0, nb2 = 0.0;
            for (std::int64_t k = 0; k < d; ++k) {
                dot += ar[k] * br[k];
                na2 += ar[k] * ar[k];
                nb2 += br[k] * br[k];
            }
            double na = std::sqrt(na2), nb = std::sqrt(nb2);
            double denom = na * nb;
            if (denom <= eps) continue;  // flat region: no gradient through the floor
            double cval = dot / denom;
            double g = gy[i];
            if (wa) {
                double* gr = ga.data() + i * d;
                for (std::int64_t k = 0; k < d; ++k)
                    gr[k] += g * (br[k] / denom - cval * ar[k] / na2);
            }
            if (wb) {
                double* gr = gb.data() + i * d;
                for (std::int64_t k = 0; k < d; ++k)
                    gr[k] += g * (ar[k] / denom - cval * br[k] / nb2);
            }
        }
        if (wa) t.accumulate(ia, ga);
        if (wb) t.accumulate(ib, gb);
    });
}

Var bce_with_logits(Var logits, const std::vector<double>& targets) {
    require(logits.shape().size() == 1, "bce_with_logits: expected [n] logits");
    const std::int64_t n = logits.shape()[0];
    require(static_cast<std::int64_t>(targets.size()) == n, "bce_with_logits: target count mismatch");

    double loss = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double z = logits.value()[i];
        double y = targets[static_cast<std::size_t>(i)];
        loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    loss /= static_cast<double>(n);

    const auto iz = logits.id();
    return logits.tape()->emit(Tensor::scalar(loss), logits.requires_grad(),
                               [n, iz, y = targets](Tape& t, std::int32_t self) {
                                   double g = t.grad_of(self)[0] / static_cast<double>(n);
                                   const Tensor& z = t.value_of(iz);
                                   Tensor gz(z.shape());
                                   for (std::int64_t i = 0; i < n; ++i) {
                                       double sg = 1.0 / (1.0 + std::exp(-z[i]));
                                       gz[i] = g * (sg - y[static_cast<std::size_t>(i)]);
                                   }
                                   t.accumulate(iz, gz);
                               });
}

}  // namespace wmsteer
