#include <doctest.h>

#include <cmath>

#include "wmsteer/generator.hpp"

using namespace wmsteer;

namespace {

GeneratorConfig tiny_cfg() {
    GeneratorConfig c;
    c.frames = 8;
    c.height = 16;
    c.width = 16;
    c.patch = 4;
    c.channels = 12;
    c.blocks = 1;
    c.hidden_mult = 2;
    c.time_dim = 8;
    c.context_frames = 2;
    c.chunk_frames = 4;
    c.n_classes = 2;
    return c;
}

// The head is zero-initialized; give it weights so branches actually differ.
void randomize_head(DenoiserNetwork& net, std::uint64_t seed) {
    Rng rng(seed);
    Param* w = net.params().find("head.w");
    w->value = normal_tensor(w->value.shape(), rng, 0.3);
}

Tensor rand_t(const Shape& sh, std::uint64_t seed) {
    Rng rng(seed);
    return normal_tensor(sh, rng);
}

}  // namespace

TEST_SUITE_BEGIN("generator");

TEST_CASE("a fresh network predicts zero, so the posterior mean is x/alpha") {
    DenoiserNetwork net(tiny_cfg(), 1);
    DenoiserScoreModel model(net, GenerationCondition{}, net.config().frames);
    const Tensor x = rand_t(Shape{8, 16, 16}, 2);
    const double t = 0.37;
    const Tensor x0 = model.estimate(x, t).x0;
    const double a = net.schedule().alpha(t);
    for (std::int64_t i = 0; i < x.numel(); ++i)
        CHECK(x0[i] == doctest::Approx(x[i] / a).epsilon(1e-12));
    CHECK(model.network_evals() == 1);
}

TEST_CASE("fresh rect-flow velocity model is well-posed at t=1") {
    GeneratorConfig cfg = tiny_cfg();
    cfg.schedule = "rect_flow";  // target auto-resolves to velocity
    DenoiserNetwork net(cfg, 3);
    CHECK(net.target() == PredictionTarget::Velocity);
    DenoiserScoreModel model(net, GenerationCondition{}, cfg.frames);
    const Tensor x = rand_t(Shape{8, 16, 16}, 4);
    // pred = 0 and det = alpha sigma' - sigma alpha' = 1, so x0 = sigma'(t) x = x.
    const Tensor x0 = model.estimate(x, 1.0).x0;
    for (std::int64_t i = 0; i < x.numel(); ++i)
        CHECK(x0[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("cfg_branches expands and prunes guidance branches") {
    GenerationCondition uncond;
    auto b = cfg_branches(uncond);
    REQUIRE(b.size() == 1);
    CHECK(b[0].coeff == 1.0);
    CHECK(b[0].label == -1);
    CHECK(!b[0].use_context);

    GenerationCondition plain_label;
    plain_label.label = 1;  // cfg_scale 1 -> unconditional branch pruned
    b = cfg_branches(plain_label);
    REQUIRE(b.size() == 1);
    CHECK(b[0].label == 1);

    GenerationCondition guided;
    guided.label = 0;
    guided.cfg_scale = 2.5;
    b = cfg_branches(guided);
    REQUIRE(b.size() == 2);
    CHECK(b[0].coeff == -1.5);
    CHECK(b[1].coeff == 2.5);
    CHECK(b[1].label == 0);

    GenerationCondition ar;
    ar.label = 2;
    ar.cfg_scale = 7.5;
    ar.ctx_scale = 1.5;
    ar.context = Tensor(Shape{2, 16, 16});
    b = cfg_branches(ar);
    REQUIRE(b.size() == 3);
    CHECK(b[0].coeff == -0.5);
    CHECK(!b[0].use_context);
    CHECK(b[1].coeff == -6.0);
    CHECK(b[1].use_context);
    CHECK(b[1].label == -1);
    CHECK(b[2].coeff == 7.5);
    CHECK(b[2].use_context);
    CHECK(b[2].label == 2);

    ar.cfg_scale = ar.ctx_scale = 1.0;  // both neutral -> single conditional branch
    b = cfg_branches(ar);
    REQUIRE(b.size() == 1);
    CHECK(b[0].use_context);
    CHECK(b[0].label == 2);
}

TEST_CASE("classifier-free guidance composes branch estimates linearly") {
    DenoiserNetwork net(tiny_cfg(), 5);
    randomize_head(net, 99);
    const Tensor ctx = rand_t(Shape{2, 16, 16}, 7);
    const Tensor x = rand_t(Shape{4, 16, 16}, 8);
    const double t = 0.6;

    auto est = [&](const GenerationCondition& c) {
        DenoiserScoreModel m(net, c, 4);
        return m.estimate(x, t).x0;
    };

    GenerationCondition uncond;
    GenerationCondition lab;
    lab.label = 1;
    GenerationCondition ctx_only;
    ctx_only.context = ctx;
    GenerationCondition both;
    both.label = 1;
    both.context = ctx;

    const Tensor e_u = est(uncond), e_l = est(lab), e_c = est(ctx_only), e_b = est(both);

    GenerationCondition guided = lab;
    guided.cfg_scale = 2.5;
    const Tensor e_g = est(guided);
    for (std::int64_t i = 0; i < x.numel(); ++i)
        CHECK(e_g[i] == doctest::Approx(-1.5 * e_u[i] + 2.5 * e_l[i]).epsilon(1e-9));

    GenerationCondition ar = both;
    ar.cfg_scale = 7.5;
    ar.ctx_scale = 1.5;
    const Tensor e_3 = est(ar);
    for (std::int64_t i = 0; i < x.numel(); ++i)
        CHECK(e_3[i] ==
              doctest::Approx(-0.5 * e_u[i] - 6.0 * e_c[i] + 7.5 * e_b[i]).epsilon(1e-9));
}

TEST_CASE("dropping the context selects the learned null path exactly") {
    DenoiserNetwork net(tiny_cfg(), 11);
    randomize_head(net, 1);
    const Tensor x = rand_t(Shape{2, 4, 16, 16}, 12);
    const Tensor ctx = rand_t(Shape{2, 2, 16, 16}, 13);
    const std::vector<double> ts = {0.3, 0.8};
    const std::vector<int> labels = {0, -1};

    Tape t1;
    Binding b1(t1, false);
    Var off = net.forward(b1, t1.constant(x), ts, labels, ctx, {0, 0});
    Tape t2;
    Binding b2(t2, false);
    Var none = net.forward(b2, t2.constant(x), ts, labels, Tensor());
    for (std::int64_t i = 0; i < off.value().numel(); ++i)
        CHECK(off.value()[i] == doctest::Approx(none.value()[i]).epsilon(1e-14));

    // Mixed mask: each row matches its single-clip forward.
    Tape t3;
    Binding b3(t3, false);
    Var mixed = net.forward(b3, t3.constant(x), ts, labels, ctx, {1, 0});

    Tensor x0(Shape{1, 4, 16, 16}), c0(Shape{1, 2, 16, 16});
    std::copy(x.data(), x.data() + x0.numel(), x0.data());
    std::copy(ctx.data(), ctx.data() + c0.numel(), c0.data());
    Tape t4;
    Binding b4(t4, false);
    Var row0 = net.forward(b4, t4.constant(x0), {ts[0]}, {labels[0]}, c0, {1});
    const std::int64_t n = row0.value().numel();
    for (std::int64_t i = 0; i < n; ++i)
        CHECK(mixed.value()[i] == doctest::Approx(row0.value()[i]).epsilon(1e-12));

    Tensor x1(Shape{1, 4, 16, 16});
    std::copy(x.data() + n, x.data() + 2 * n, x1.data());
    Tape t5;
    Binding b5(t5, false);
    Var row1 = net.forward(b5, t5.constant(x1), {ts[1]}, {labels[1]}, Tensor());
    for (std::int64_t i = 0; i < n; ++i)
        CHECK(mixed.value()[n + i] == doctest::Approx(row1.value()[i]).epsilon(1e-12));
}

TEST_CASE("x0_pullback matches finite differences through guidance branches") {
    DenoiserNetwork net(tiny_cfg(), 13);
    randomize_head(net, 2);
    GenerationCondition cond;
    cond.label = 1;
    cond.cfg_scale = 3.0;
    cond.context = rand_t(Shape{2, 16, 16}, 14);
    cond.ctx_scale = 1.5;
    DenoiserScoreModel model(net, cond, 4);

    Tensor x = rand_t(Shape{4, 16, 16}, 15);
    const Tensor v = rand_t(Shape{4, 16, 16}, 16);
    const double t = 0.45;
    const Tensor g = model.x0_pullback(x, t, v);
    REQUIRE(g.shape() == x.shape());

    auto f = [&](const Tensor& xx) {
        const Tensor x0 = model.estimate(xx, t).x0;
        double s = 0.0;
        for (std::int64_t i = 0; i < x0.numel(); ++i) s += v[i] * x0[i];
        return s;
    };

    Rng pick(77);
    for (int trial = 0; trial < 12; ++trial) {
        const std::int64_t i = static_cast<std::int64_t>(pick.below(
            static_cast<std::uint64_t>(x.numel())));
        const double h = 1e-5 * std::max(1.0, std::abs(x[i]));
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        const double num = (fp - fm) / (2.0 * h);
        const double rel = std::abs(num - g[i]) / std::max(1e-6, std::abs(num) + std::abs(g[i]));
        INFO("i=", i, " fd=", num, " ana=", g[i]);
        CHECK(rel < 1e-5);
    }
}

TEST_CASE("training reduces the denoising loss") {
    WorldConfig w;
    w.frames = 8;
    w.height = 16;
    w.width = 16;
    w.n_balls_min = 1;
    w.n_balls_max = 2;
    w.radius_min = 2.0;
    w.radius_max = 2.5;
    VideoDataset ds = simulate_dataset(w, 32, 17);

    DenoiserNetwork net(tiny_cfg(), 19);
    GeneratorTrainConfig tc;
    tc.epochs = 10;
    tc.batch_size = 8;
    tc.lr = 5e-3;
    tc.seed = 21;
    TrainReport rep = train_generator(net, ds, tc);
    REQUIRE(rep.epoch_loss.size() == 10);
    CHECK(rep.steps == 40);
    CHECK(rep.epoch_loss.back() < 0.9 * rep.epoch_loss.front());
    for (const auto& p : net.params().all()) CHECK(p.value.all_finite());
}

TEST_CASE("generation is deterministic and accounts its compute") {
    DenoiserNetwork net(tiny_cfg(), 23);
    randomize_head(net, 3);
    GenerationCondition cond;
    cond.label = 0;
    SolveOptions opt;
    opt.steps = 8;

    SolveStats s1;
    const Tensor a = generate(net, cond, opt, 100, &s1);
    REQUIRE(a.shape() == Shape{8, 16, 16});
    CHECK(a.all_finite());
    CHECK(s1.score_evals == 8);

    const Tensor b = generate(net, cond, opt, 100);
    bool same = true;
    for (std::int64_t i = 0; i < a.numel(); ++i) same = same && a[i] == b[i];
    CHECK(same);
    const Tensor c = generate(net, cond, opt, 101);
    bool differs = false;
    for (std::int64_t i = 0; i < a.numel(); ++i) differs = differs || a[i] != c[i];
    CHECK(differs);

    SolveStats s2;
    GenerationCondition ar;
    ar.label = 1;
    ar.cfg_scale = 2.0;
    ar.ctx_scale = 1.5;
    const Tensor e = generate_autoregressive(net, ar, opt, 200, &s2);
    REQUIRE(e.shape() == Shape{8, 16, 16});
    CHECK(e.all_finite());
    CHECK(s2.score_evals == 2 * 8);  // two chunks
    const Tensor e2 = generate_autoregressive(net, ar, opt, 200);
    bool ar_same = true;
    for (std::int64_t i = 0; i < e.numel(); ++i) ar_same = ar_same && e[i] == e2[i];
    CHECK(ar_same);
}

TEST_CASE("generator checkpoints round-trip") {
    const std::string path = "/tmp/wmsteer_gen_test.wmtc";
    DenoiserNetwork net(tiny_cfg(), 29);
    randomize_head(net, 4);
    save_generator(net, path);

    DenoiserNetwork back = load_generator(path);
    CHECK(back.config().channels == net.config().channels);
    CHECK(back.config().schedule == net.config().schedule);
    CHECK(back.target() == net.target());
    for (const auto& p : net.params().all()) {
        const Param* q = back.params().find(p.name);
        REQUIRE(q != nullptr);
        for (std::int64_t i = 0; i < p.value.numel(); ++i) CHECK(q->value[i] == p.value[i]);
    }

    const Tensor x = rand_t(Shape{8, 16, 16}, 30);
    DenoiserScoreModel m1(net, GenerationCondition{}, 8);
    DenoiserScoreModel m2(back, GenerationCondition{}, 8);
    const Tensor a = m1.estimate(x, 0.5).x0, b = m2.estimate(x, 0.5).x0;
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
    std::remove(path.c_str());
}

TEST_CASE("invalid configurations and inputs are rejected") {
    GeneratorConfig bad = tiny_cfg();
    bad.schedule = "rect_flow";
    bad.target = "eps";
    CHECK_THROWS_AS(DenoiserNetwork(bad, 1), Error);

    bad = tiny_cfg();
    bad.patch = 5;  // 16 % 5 != 0
    CHECK_THROWS_AS(DenoiserNetwork(bad, 1), Error);

    DenoiserNetwork net(tiny_cfg(), 1);
    GenerationCondition wrong_ctx;
    wrong_ctx.context = Tensor(Shape{3, 16, 16});  // context_frames is 2
    CHECK_THROWS_AS(DenoiserScoreModel(net, wrong_ctx, 4), Error);

    GenerationCondition wrong_label;
    wrong_label.label = 5;
    CHECK_THROWS_AS(DenoiserScoreModel(net, wrong_label, 4), Error);

    DenoiserScoreModel m(net, GenerationCondition{}, 4);
    CHECK_THROWS_AS(m.estimate(Tensor(Shape{5, 16, 16}), 0.5), Error);
}

TEST_SUITE_END();
