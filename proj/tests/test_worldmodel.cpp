#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "wmsteer/checkpoint.hpp"
#include "wmsteer/common.hpp"
#include "wmsteer/physicsworld.hpp"
#include "wmsteer/rng.hpp"
#include "wmsteer/worldmodel.hpp"

#include "test_helpers.hpp"

using namespace wmsteer;
using wmsteer_test::TempDir;

namespace {

WorldModelConfig tiny_wm_cfg() {
    WorldModelConfig cfg;
    cfg.frames = 8;
    cfg.height = 16;
    cfg.width = 16;
    cfg.patch = 4;
    cfg.tubelet = 2;
    cfg.channels = 16;
    cfg.enc_blocks = 1;
    cfg.pred_blocks = 1;
    cfg.hidden_mult = 2;
    return cfg;
}

WorldConfig tiny_wm_world() {
    WorldConfig wc;
    wc.height = 16;
    wc.width = 16;
    wc.frames = 8;
    wc.n_balls_min = 1;
    wc.n_balls_max = 2;
    wc.radius_min = 1.5;
    wc.radius_max = 2.5;
    return wc;
}

}  // namespace

TEST_SUITE("worldmodel") {
    TEST_CASE("encoder produces token grids for full clips and shorter windows") {
        WorldModelBundle wm(tiny_wm_cfg(), 11);
        Rng rng(3);
        for (std::int64_t frames : {8ll, 6ll, 2ll}) {
            Tape tape;
            Binding bind(tape, false);
            Var x = tape.constant(normal_tensor(Shape{2, frames, 16, 16}, rng));
            Var z = wm.encode_online(bind, x);
            CHECK(z.shape() == Shape{2, frames / 2, 16, 16});
            Var p = wm.predict(bind, z);
            CHECK(p.shape() == z.shape());
        }
        // 10 frames exceeds the positional table; 3 is not a tubelet multiple.
        Tape tape;
        Binding bind(tape, false);
        CHECK_THROWS(wm.encode_online(bind, tape.constant(Tensor(Shape{1, 10, 16, 16}))));
        CHECK_THROWS(wm.encode_online(bind, tape.constant(Tensor(Shape{1, 3, 16, 16}))));
    }

    TEST_CASE("target encoder starts as an exact copy and refuses training bindings") {
        WorldModelBundle wm(tiny_wm_cfg(), 5);
        for (const Param& tp : wm.target_params().all()) {
            const Param* op = wm.params().find(tp.name);
            REQUIRE(op != nullptr);
            for (std::int64_t i = 0; i < tp.value.numel(); ++i) CHECK(tp.value[i] == op->value[i]);
        }
        // Online store additionally holds the predictor.
        CHECK(wm.params().scalar_count() > wm.target_params().scalar_count());

        Tape tape;
        Binding train_bind(tape, true);
        CHECK_THROWS(wm.encode_target(train_bind, tape.constant(Tensor(Shape{1, 2, 16, 16}))));
    }

    TEST_CASE("ema_step matches the closed-form recursion") {
        WorldModelBundle wm(tiny_wm_cfg(), 7);
        const double decay = 0.9;
        Param* online = wm.params().find("enc.in.w");
        Param* target = wm.target_params().find("enc.in.w");
        REQUIRE(online != nullptr);
        REQUIRE(target != nullptr);

        const double w0 = target->value[0];
        online->value[0] = w0 + 1.0;  // hold online fixed afterwards
        for (int k = 1; k <= 4; ++k) {
            wm.ema_step(decay);
            // target_k = decay^k * w0 + (1 - decay^k) * (w0 + 1)
            const double expect = w0 + (1.0 - std::pow(decay, k));
            CHECK(target->value[0] == doctest::Approx(expect).epsilon(1e-12));
        }
    }

    TEST_CASE("future and tube masks cover the intended token sets") {
        WorldModelBundle wm(tiny_wm_cfg(), 1);
        const std::int64_t S = 16;  // (16/4)^2

        auto fut = wm.future_mask(8, 4);  // T'=4, context 2 tubelets
        REQUIRE(fut.size() == 4 * S);
        for (std::int64_t t = 0; t < 4; ++t)
            for (std::int64_t s = 0; s < S; ++s)
                CHECK(fut[static_cast<std::size_t>(t * S + s)] == (t >= 2 ? 1 : 0));
        CHECK_THROWS(wm.future_mask(8, 8));  // no future left
        CHECK_THROWS(wm.future_mask(8, 3));  // not a tubelet multiple

        Rng rng(42);
        for (int rep = 0; rep < 20; ++rep) {
            auto tub = wm.tube_mask(8, 0.5, rng);
            REQUIRE(tub.size() == 4 * S);
            std::int64_t n_tubes = 0;
            for (std::int64_t s = 0; s < S; ++s) {
                const std::uint8_t v = tub[static_cast<std::size_t>(s)];
                n_tubes += v;
                for (std::int64_t t = 1; t < 4; ++t)  // constant across time
                    CHECK(tub[static_cast<std::size_t>(t * S + s)] == v);
            }
            CHECK(n_tubes >= 1);
            CHECK(n_tubes <= S);
        }
    }

    TEST_CASE("a fully masked encoding is independent of the pixels") {
        WorldModelBundle wm(tiny_wm_cfg(), 19);
        std::vector<std::uint8_t> all(4 * 16, 1);
        Rng rng(8);
        Tensor a = normal_tensor(Shape{1, 8, 16, 16}, rng);
        Tensor b = normal_tensor(Shape{1, 8, 16, 16}, rng);

        Tape tape;
        Binding bind(tape, false);
        Var za = wm.encode_online(bind, tape.constant(a), all);
        Var zb = wm.encode_online(bind, tape.constant(b), all);
        for (std::int64_t i = 0; i < za.value().numel(); ++i)
            CHECK(za.value()[i] == zb.value()[i]);

        // A partial mask must leave the visible tokens pixel-dependent.
        auto half = wm.future_mask(8, 4);
        Var pa = wm.encode_online(bind, tape.constant(a), half);
        Var pb = wm.encode_online(bind, tape.constant(b), half);
        double diff = 0.0;
        for (std::int64_t i = 0; i < pa.value().numel(); ++i)
            diff += std::abs(pa.value()[i] - pb.value()[i]);
        CHECK(diff > 1e-6);
    }

    TEST_CASE("masked_cosine_mean is bounded and differentiable in the pixels") {
        WorldModelConfig cfg = tiny_wm_cfg();
        WorldModelBundle wm(cfg, 23);
        Rng rng(91);
        Tensor window = normal_tensor(Shape{8, 16, 16}, rng);  // 3D input path
        auto mask = wm.future_mask(8, 4);

        Tape tape;
        Var x = tape.leaf(window, /*requires_grad=*/true);
        Var c = wm.masked_cosine_mean(tape, x, mask);
        REQUIRE(c.value().numel() == 1);
        const double c0 = c.value()[0];
        CHECK(c0 >= -1.0);
        CHECK(c0 <= 1.0);

        tape.backward(c);
        const Tensor& g = x.grad();
        double gnorm = 0.0;
        for (std::int64_t i = 0; i < g.numel(); ++i) gnorm += g[i] * g[i];
        CHECK(std::isfinite(gnorm));
        CHECK(gnorm > 0.0);

        // Central finite differences through both encoders and the predictor.
        Rng pick(7);
        for (int rep = 0; rep < 8; ++rep) {
            const std::int64_t idx =
                static_cast<std::int64_t>(pick.below(static_cast<std::uint64_t>(window.numel())));
            const double h = 1e-5;
            Tensor wp = window, wm_ = window;
            wp[idx] += h;
            wm_[idx] -= h;
            Tape tp;
            double fp = wm.masked_cosine_mean(tp, tp.constant(wp), mask).value()[0];
            Tape tm;
            double fm = wm.masked_cosine_mean(tm, tm.constant(wm_), mask).value()[0];
            const double fd = (fp - fm) / (2.0 * h);
            CHECK(g[idx] == doctest::Approx(fd).epsilon(1e-4));
        }
    }

    TEST_CASE("no gradient reaches the target parameters during training") {
        WorldModelConfig cfg = tiny_wm_cfg();
        WorldModelBundle wm(cfg, 31);
        const VideoDataset data = simulate_dataset(tiny_wm_world(), 8, 400);

        WorldModelTrainConfig tc;
        tc.epochs = 1;
        tc.batch_size = 4;
        tc.seed = 1;
        train_worldmodel(wm, data, tc);

        for (const Param& tp : wm.target_params().all()) CHECK(tp.grad.numel() == 0);
        // Online parameters did receive gradients on the last step.
        bool any = false;
        for (const Param& op : wm.params().all()) any = any || op.grad.numel() > 0;
        CHECK(any);
    }

    TEST_CASE("training reduces the masked prediction loss without collapsing") {
        WorldModelConfig cfg = tiny_wm_cfg();
        WorldModelBundle wm(cfg, 3);
        const VideoDataset data = simulate_dataset(tiny_wm_world(), 32, 500);

        WorldModelTrainConfig tc;
        tc.epochs = 8;
        tc.batch_size = 8;
        tc.lr = 3e-3;
        tc.seed = 2;
        const TrainReport rep = train_worldmodel(wm, data, tc);

        REQUIRE(rep.epoch_loss.size() == 8);
        CHECK(rep.steps == 8 * 4);
        CHECK(rep.epoch_loss.back() < 0.8 * rep.epoch_loss.front());
        CHECK(rep.wallclock_sec > 0.0);

        // Representations keep a healthy spread after training.
        Tape tape;
        Binding bind(tape, false);
        Var z = wm.encode_online(bind, tape.constant(data.videos));
        CHECK(WorldModelBundle::feature_std(z.value()) > 1e-3);

        // Target drifted from the online weights but is no longer the init.
        const Param* ow = wm.params().find("enc.in.w");
        const Param* tw = wm.target_params().find("enc.in.w");
        double d_ot = 0.0;
        for (std::int64_t i = 0; i < ow->value.numel(); ++i)
            d_ot += std::abs(ow->value[i] - tw->value[i]);
        CHECK(d_ot > 0.0);
    }

    TEST_CASE("feature_std flags constant representations") {
        Tensor flat(Shape{4, 8, 3});
        flat.fill(0.25);
        CHECK(WorldModelBundle::feature_std(flat) == doctest::Approx(0.0));

        Rng rng(5);
        Tensor spread = normal_tensor(Shape{32, 3}, rng);
        CHECK(WorldModelBundle::feature_std(spread) > 0.5);
    }

    TEST_CASE("checkpoint roundtrip preserves both stores and the scores") {
        TempDir dir;
        WorldModelConfig cfg = tiny_wm_cfg();
        WorldModelBundle wm(cfg, 17);
        const VideoDataset data = simulate_dataset(tiny_wm_world(), 8, 123);
        WorldModelTrainConfig tc;
        tc.epochs = 2;
        tc.batch_size = 4;
        tc.seed = 9;
        train_worldmodel(wm, data, tc);

        const std::string path = dir.file("wm.ckpt");
        save_worldmodel(wm, path);
        WorldModelBundle back = load_worldmodel(path);

        CHECK(back.config().channels == cfg.channels);
        for (const Param& p : wm.params().all()) {
            const Param* q = back.params().find(p.name);
            REQUIRE(q != nullptr);
            for (std::int64_t i = 0; i < p.value.numel(); ++i) CHECK(p.value[i] == q->value[i]);
        }
        for (const Param& p : wm.target_params().all()) {
            const Param* q = back.target_params().find(p.name);
            REQUIRE(q != nullptr);
            for (std::int64_t i = 0; i < p.value.numel(); ++i) CHECK(p.value[i] == q->value[i]);
        }

        auto mask = wm.future_mask(8, 4);
        Rng rng(77);
        Tensor window = normal_tensor(Shape{2, 8, 16, 16}, rng);
        Tape ta;
        const double ca = wm.masked_cosine_mean(ta, ta.constant(window), mask).value()[0];
        Tape tb;
        const double cb = back.masked_cosine_mean(tb, tb.constant(window), mask).value()[0];
        CHECK(ca == cb);
    }
}
