#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "wmsteer/autodiff.hpp"
#include "wmsteer/rng.hpp"

using namespace wmsteer;

namespace {

using Builder = std::function<Var(Tape&, std::vector<Var>&)>;

double eval_at(const Builder& build, const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.push_back(tape.leaf(t, false));
    return build(tape, vars).value()[0];
}

// Central finite differences against the tape gradient for every input.
void check_gradients(const Builder& build, std::vector<Tensor> inputs, double tol = 2e-6) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
    Var loss = build(tape, vars);
    REQUIRE(loss.value().rank() == 0);
    tape.backward(loss);

    for (std::size_t v = 0; v < inputs.size(); ++v) {
        const Tensor& g = vars[v].grad();
        for (std::int64_t i = 0; i < inputs[v].numel(); ++i) {
            const double xi = inputs[v][i];
            const double h = 1e-5 * std::max(1.0, std::abs(xi));
            std::vector<Tensor> plus = inputs, minus = inputs;
            plus[v][i] = xi + h;
            minus[v][i] = xi - h;
            const double fd = (eval_at(build, plus) - eval_at(build, minus)) / (2.0 * h);
            const double ad = g.numel() == 0 ? 0.0 : g[i];
            const double err = std::abs(fd - ad) / std::max({1.0, std::abs(fd), std::abs(ad)});
            INFO("input ", v, " element ", i, ": fd=", fd, " ad=", ad);
            REQUIRE(err < tol);
        }
    }
}

Tensor rand_t(Shape s, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    return normal_tensor(std::move(s), rng, scale);
}

}  // namespace

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("elementwise chain gradients") {
    check_gradients(
        [](Tape&, std::vector<Var>& v) {
            Var x = v[0];
            Var y = mul(silu(x), sigmoid(scale(x, 0.5)));
            y = add_scaled(y, add_const(x, -0.3), 0.7);
            return mean_all(y);
        },
        {rand_t(Shape{3, 4}, 1)});
}

TEST_CASE("abs and clamp gradients away from kinks") {
    Tensor x = rand_t(Shape{10}, 2);
    for (std::int64_t i = 0; i < x.numel(); ++i)
        if (std::abs(x[i]) < 0.05) x[i] = 0.2;  // keep FD away from the kink
    check_gradients(
        [](Tape&, std::vector<Var>& v) { return mean_all(abs_val(v[0])); }, {x});

    Tensor c(Shape{6});
    const double vals[] = {-0.7, 0.2, 0.5, 0.8, 1.4, 0.31};
    for (int i = 0; i < 6; ++i) c[i] = vals[i];
    check_gradients(
        [](Tape&, std::vector<Var>& v) { return sum_all(mul(clamp01(v[0]), v[0])); }, {c});
}

TEST_CASE("repeated use of one leaf accumulates") {
    Tape tape;
    Var x = tape.leaf(Tensor::from(Shape{3}, {1.0, -2.0, 0.5}), true);
    Var loss = sum_all(mul(x, x));
    tape.backward(loss);
    const Tensor& g = x.grad();
    CHECK(g[0] == doctest::Approx(2.0));
    CHECK(g[1] == doctest::Approx(-4.0));
    CHECK(g[2] == doctest::Approx(1.0));
}

TEST_CASE("constants receive no gradient and spawn no pullbacks") {
    Tape tape;
    Var x = tape.leaf(rand_t(Shape{4}, 3), true);
    Var c = tape.constant(rand_t(Shape{4}, 4));
    Var loss = mean_all(mul(x, c));
    tape.backward(loss);
    CHECK(c.grad().numel() == 0);
    CHECK(x.grad().numel() == 4);

    // All-constant graphs evaluate fine and backward is a no-op.
    Tape t2;
    Var a = t2.constant(rand_t(Shape{4}, 5));
    Var l2 = mean_all(silu(a));
    t2.backward(l2);
    CHECK(a.grad().numel() == 0);
}

TEST_CASE("matmul and linear gradients") {
    check_gradients(
        [](Tape&, std::vector<Var>& v) { return sum_all(silu(matmul(v[0], v[1]))); },
        {rand_t(Shape{3, 4}, 6), rand_t(Shape{4, 2}, 7)});

    check_gradients(
        [](Tape&, std::vector<Var>& v) {
            return mean_all(linear(v[0], v[1], v[2]));
        },
        {rand_t(Shape{2, 3, 4}, 8), rand_t(Shape{4, 5}, 9), rand_t(Shape{5}, 10)});
}

TEST_CASE("token mixing gradients") {
    check_gradients(
        [](Tape&, std::vector<Var>& v) { return mean_all(silu(mix_tokens(v[0], v[1]))); },
        {rand_t(Shape{2, 3, 5, 2}, 11), rand_t(Shape{5, 5}, 12)});
}

TEST_CASE("temporal conv gradients and padding behaviour") {
    check_gradients(
        [](Tape&, std::vector<Var>& v) { return mean_all(time_conv(v[0], v[1], v[2])); },
        {rand_t(Shape{2, 4, 3, 2}, 13), rand_t(Shape{3, 2, 4}, 14), rand_t(Shape{4}, 15)});

    // A kernel that only looks one frame into the future, applied to a video
    // that is zero except in frame 0, must respond only in frame... 0-1=-1,
    // i.e. nowhere except via the +1 tap at t such that t+1==0: none, and the
    // center tap at t=0.  Spot-check the center/forward taps land correctly.
    Tape tape;
    Tensor x(Shape{1, 3, 1, 1});
    x[0] = 1.0;  // frame 0 only
    Tensor w(Shape{3, 1, 1});
    w[0] = 100.0;  // tap reading t-1
    w[1] = 10.0;   // center tap
    w[2] = 1.0;    // tap reading t+1
    Var y = time_conv(tape.leaf(x, false), tape.leaf(w, false), tape.leaf(Tensor(Shape{1}), false));
    // y[t] = sum_k w[k] * x[t + k - 1]
    CHECK(y.value()[0] == doctest::Approx(10.0));  // t=0: center tap
    CHECK(y.value()[1] == doctest::Approx(100.0)); // t=1: reads x[0] via k=0
    CHECK(y.value()[2] == doctest::Approx(0.0));
}

TEST_CASE("layernorm gradients") {
    check_gradients(
        [](Tape&, std::vector<Var>& v) {
            return mean_all(mul(layernorm(v[0], v[1], v[2]), v[0]));
        },
        {rand_t(Shape{4, 6}, 16), rand_t(Shape{6}, 17, 0.3), rand_t(Shape{6}, 18, 0.3)}, 5e-6);
}

TEST_CASE("broadcast add gradients for every pattern") {
    const Shape xs{2, 3, 4, 2};
    auto mk = [&](Broadcast p, Shape es, std::uint64_t seed) {
        check_gradients(
            [p](Tape&, std::vector<Var>& v) {
                return mean_all(silu(add_broadcast(v[0], v[1], p)));
            },
            {rand_t(xs, 19), rand_t(std::move(es), seed)});
    };
    mk(Broadcast::AllC, Shape{2}, 20);
    mk(Broadcast::BatchC, Shape{2, 2}, 21);
    mk(Broadcast::TimeC, Shape{3, 2}, 22);
    mk(Broadcast::SpaceC, Shape{4, 2}, 23);
    mk(Broadcast::BatchSpaceC, Shape{2, 4, 2}, 24);
}

TEST_CASE("gather_rows gradients accumulate duplicates") {
    check_gradients(
        [](Tape&, std::vector<Var>& v) {
            return mean_all(silu(gather_rows(v[0], {0, 2, 2, 1})));
        },
        {rand_t(Shape{4, 3}, 25)});
}

TEST_CASE("reshape and slice gradients") {
    check_gradients(
        [](Tape&, std::vector<Var>& v) {
            Var r = reshape(v[0], Shape{2, 2, 3, 2});
            return mean_all(mul(slice_time(r, 1, 1), slice_time(r, 0, 1)));
        },
        {rand_t(Shape{24}, 26)});
}

TEST_CASE("where_mask routes values and gradients") {
    std::vector<std::uint8_t> mask = {1, 0, 0, 1, 1, 0};  // T=2, S=3
    check_gradients(
        [mask](Tape&, std::vector<Var>& v) {
            return mean_all(silu(where_mask(mask, v[0], v[1])));
        },
        {rand_t(Shape{2, 2, 3, 2}, 27), rand_t(Shape{2, 2, 3, 2}, 28)});

    Tape tape;
    Tensor a(Shape{1, 2, 3, 1}, 1.0), b(Shape{1, 2, 3, 1}, 2.0);
    Var y = where_mask(mask, tape.constant(a), tape.constant(b));
    const double expect[] = {2, 1, 1, 2, 2, 1};
    for (int i = 0; i < 6; ++i) CHECK(y.value()[i] == doctest::Approx(expect[i]));
}

TEST_CASE("patchify layout, inverse, and gradients") {
    // Video [1,1,4,4] with value 10*y + x: patch (0,1) of size 2 must contain
    // columns 2,3 of rows 0,1.
    Tensor v(Shape{1, 1, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) v[y * 4 + x] = 10.0 * y + x;
    Tape tape;
    Var tok = patchify(tape.constant(v), 2);
    REQUIRE(tok.shape() == Shape{1, 1, 4, 4});
    // token s=1 (gy=0,gx=1): pixels (0,2),(0,3),(1,2),(1,3)
    CHECK(tok.value()[4] == doctest::Approx(2.0));
    CHECK(tok.value()[5] == doctest::Approx(3.0));
    CHECK(tok.value()[6] == doctest::Approx(12.0));
    CHECK(tok.value()[7] == doctest::Approx(13.0));

    Var back = unpatchify(tok, 4, 4, 2);
    for (std::int64_t i = 0; i < 16; ++i) CHECK(back.value()[i] == doctest::Approx(v[i]));

    check_gradients(
        [](Tape&, std::vector<Var>& v) {
            Var t = patchify(v[0], 2);
            return mean_all(mul(t, t));
        },
        {rand_t(Shape{2, 2, 4, 4}, 29)});
    check_gradients(
        [](Tape&, std::vector<Var>& v) {
            return mean_all(silu(unpatchify(v[0], 4, 4, 2)));
        },
        {rand_t(Shape{1, 2, 4, 4}, 30)});
}

TEST_CASE("tubeify layout and gradients") {
    // T=4, tubelet 2 -> 2 token frames; each token holds both frames' patch.
    Tensor v(Shape{1, 4, 2, 2});
    for (int t = 0; t < 4; ++t)
        for (int p = 0; p < 4; ++p) v[t * 4 + p] = 100.0 * t + p;
    Tape tape;
    Var tok = tubeify(tape.constant(v), 2, 2);
    REQUIRE(tok.shape() == Shape{1, 2, 1, 8});
    // First token: frame 0 pixels then frame 1 pixels.
    const double expect[] = {0, 1, 2, 3, 100, 101, 102, 103};
    for (int i = 0; i < 8; ++i) CHECK(tok.value()[i] == doctest::Approx(expect[i]));

    check_gradients(
        [](Tape&, std::vector<Var>& v) { return mean_all(silu(tubeify(v[0], 2, 2))); },
        {rand_t(Shape{1, 4, 2, 2}, 31)});
}

TEST_CASE("loss gradients: mse, l1, bce") {
    Tensor a = rand_t(Shape{3, 4}, 32), b = rand_t(Shape{3, 4}, 33);
    for (std::int64_t i = 0; i < a.numel(); ++i)
        if (std::abs(a[i] - b[i]) < 0.05) a[i] += 0.2;  // keep L1 away from ties
    check_gradients(
        [](Tape&, std::vector<Var>& v) { return mse_loss(v[0], v[1]); }, {a, b});
    check_gradients(
        [](Tape&, std::vector<Var>& v) { return l1_loss(v[0], v[1]); }, {a, b});

    std::vector<double> targets = {1.0, 0.0, 1.0, 0.0, 1.0};
    check_gradients(
        [targets](Tape&, std::vector<Var>& v) { return bce_with_logits(v[0], targets); },
        {rand_t(Shape{5}, 34)});
    // Hand value: z=0, y=1 -> log(2).
    Tape tape;
    Var z = tape.constant(Tensor(Shape{1}, 0.0));
    CHECK(bce_with_logits(z, {1.0}).value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cosine_rows values and gradients") {
    // Hand case: parallel rows give 1, orthogonal rows give 0.
    Tape tape;
    Tensor a = Tensor::from(Shape{2, 2}, {1, 0, 3, 0});
    Tensor b = Tensor::from(Shape{2, 2}, {2, 0, 0, 5});
    Var c = cosine_rows(tape.constant(a), tape.constant(b));
    CHECK(c.value()[0] == doctest::Approx(1.0));
    CHECK(c.value()[1] == doctest::Approx(0.0));

    check_gradients(
        [](Tape&, std::vector<Var>& v) { return mean_all(cosine_rows(v[0], v[1])); },
        {rand_t(Shape{4, 5}, 35), rand_t(Shape{4, 5}, 36)});

    // Norm floor: zero row yields zero cosine and zero gradient, not NaN.
    Tape t2;
    Tensor za(Shape{1, 3});  // all zeros
    Var zz = cosine_rows(t2.leaf(za, true), t2.constant(rand_t(Shape{1, 3}, 37)));
    Var loss = sum_all(zz);
    t2.backward(loss);
    CHECK(zz.value()[0] == 0.0);
    CHECK(std::isfinite(loss.value()[0]));
}

TEST_CASE("backward rejects non-scalar roots") {
    Tape tape;
    Var x = tape.leaf(rand_t(Shape{3}, 38), true);
    CHECK_THROWS_AS(tape.backward(x), Error);
}

TEST_SUITE_END();
