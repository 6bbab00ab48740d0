#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "wmsteer/common.hpp"
#include "wmsteer/rewards.hpp"
#include "wmsteer/rng.hpp"
#include "wmsteer/stats.hpp"

#include "test_helpers.hpp"

using namespace wmsteer;
using wmsteer_test::TempDir;

namespace {

WorldModelConfig reward_wm_cfg() {
    WorldModelConfig cfg;
    cfg.frames = 16;
    cfg.height = 16;
    cfg.width = 16;
    cfg.patch = 4;
    cfg.tubelet = 2;
    cfg.channels = 16;
    cfg.enc_blocks = 1;
    cfg.pred_blocks = 1;
    return cfg;
}

WorldConfig reward_world() {
    WorldConfig wc;
    wc.height = 16;
    wc.width = 16;
    wc.frames = 16;
    wc.n_balls_min = 1;
    wc.n_balls_max = 2;
    wc.radius_min = 1.5;
    wc.radius_max = 2.5;
    return wc;
}

SurpriseConfig small_surprise() {
    SurpriseConfig cfg;
    cfg.window = 8;
    cfg.context = 4;
    cfg.stride = 4;
    return cfg;
}

}  // namespace

TEST_SUITE("rewards") {
    TEST_CASE("window_count follows floor((L - window)/stride) + 1") {
        const SurpriseConfig cfg = small_surprise();
        CHECK(window_count(cfg.window, cfg) == 1);
        CHECK(window_count(cfg.window + cfg.stride, cfg) == 2);
        CHECK(window_count(cfg.window + 2 * cfg.stride + 1, cfg) == 3);
        CHECK_THROWS(window_count(cfg.window - 1, cfg));

        SurpriseConfig bad = cfg;
        bad.context = bad.window;  // no horizon left
        CHECK_THROWS(bad.validate());
        bad = cfg;
        bad.stride = 0;
        CHECK_THROWS(bad.validate());
    }

    TEST_CASE("surprise reward lies in [-2, 0] and matches its gradient's value") {
        WorldModelBundle wm(reward_wm_cfg(), 3);
        Rng rng(11);
        const Tensor video = normal_tensor(Shape{16, 16, 16}, rng, 0.5);
        const SurpriseConfig cfg = small_surprise();

        const double r = wm_reward(video, wm, cfg).value;
        CHECK(r >= -2.0);
        CHECK(r <= 0.0);

        double r2 = 0.0;
        wm_reward_gradient(video, wm, cfg, &r2);
        CHECK(r2 == r);
    }

    TEST_CASE("frame-constant videos score the same under every stride") {
        WorldModelBundle wm(reward_wm_cfg(), 5);
        Rng rng(13);
        Tensor frame = normal_tensor(Shape{16, 16}, rng, 0.3);
        Tensor video(Shape{16, 16, 16});
        for (std::int64_t f = 0; f < 16; ++f)
            std::copy(frame.data(), frame.data() + 256, video.data() + f * 256);

        SurpriseConfig cfg = small_surprise();
        std::vector<double> values;
        for (std::int64_t stride : {std::int64_t{1}, cfg.stride, cfg.window}) {
            SurpriseConfig c = cfg;
            c.stride = stride;
            values.push_back(wm_reward(video, wm, c).value);
        }
        CHECK(values[0] == doctest::Approx(values[1]).epsilon(1e-12));
        CHECK(values[1] == doctest::Approx(values[2]).epsilon(1e-12));
    }

    TEST_CASE("reward gradient matches central finite differences") {
        WorldModelBundle wm(reward_wm_cfg(), 7);
        Rng rng(17);
        const Tensor video = normal_tensor(Shape{12, 16, 16}, rng, 0.5);
        const SurpriseConfig cfg = small_surprise();  // two windows over 12 frames

        const Tensor grad = wm_reward_gradient(video, wm, cfg);
        REQUIRE(grad.shape() == video.shape());

        Rng pick(23);
        for (int rep = 0; rep < 20; ++rep) {
            const std::int64_t idx =
                static_cast<std::int64_t>(pick.below(static_cast<std::uint64_t>(video.numel())));
            const double h = 1e-5;
            Tensor vp = video, vm = video;
            vp[idx] += h;
            vm[idx] -= h;
            const double fd =
                (wm_reward(vp, wm, cfg).value - wm_reward(vm, wm, cfg).value) / (2.0 * h);
            if (std::abs(fd) > 1e-10) {
                CHECK(grad[idx] == doctest::Approx(fd).epsilon(1e-3));
            } else {
                CHECK(std::abs(grad[idx] - fd) < 1e-8);
            }
        }
    }

    TEST_CASE("constant-zero videos produce a finite gradient") {
        WorldModelBundle wm(reward_wm_cfg(), 9);
        Tensor video(Shape{8, 16, 16});  // all zeros
        const Tensor grad = wm_reward_gradient(video, wm, small_surprise());
        for (std::int64_t i = 0; i < grad.numel(); ++i) CHECK(std::isfinite(grad[i]));
    }

    TEST_CASE("frames outside every window receive exactly zero gradient") {
        WorldModelBundle wm(reward_wm_cfg(), 21);
        Rng rng(29);
        // 13 frames, windows [0,8) and [4,12): frame 12 enters no term.
        const Tensor video = normal_tensor(Shape{13, 16, 16}, rng, 0.5);
        const Tensor grad = wm_reward_gradient(video, wm, small_surprise());
        double tail = 0.0, head = 0.0;
        for (std::int64_t i = 0; i < 256; ++i) {
            tail += std::abs(grad[12 * 256 + i]);
            head += std::abs(grad[i]);
        }
        CHECK(tail == 0.0);
        CHECK(head > 0.0);
    }

    TEST_CASE("spatial resize reaches the world model and stays differentiable") {
        WorldModelBundle wm(reward_wm_cfg(), 33);
        Rng rng(31);
        const Tensor video = normal_tensor(Shape{8, 32, 32}, rng, 0.5);

        SurpriseConfig cfg = small_surprise();
        CHECK_THROWS(wm_reward(video, wm, cfg));  // native resolution mismatch
        cfg.resize = 8;
        CHECK_THROWS(wm_reward(video, wm, cfg));  // resize must hit the model size
        cfg.resize = 16;

        const double r = wm_reward(video, wm, cfg).value;
        CHECK(r >= -2.0);
        CHECK(r <= 0.0);

        const Tensor grad = wm_reward_gradient(video, wm, cfg);
        REQUIRE(grad.shape() == video.shape());
        Rng pick(37);
        for (int rep = 0; rep < 6; ++rep) {
            const std::int64_t idx =
                static_cast<std::int64_t>(pick.below(static_cast<std::uint64_t>(video.numel())));
            const double h = 1e-5;
            Tensor vp = video, vm = video;
            vp[idx] += h;
            vm[idx] -= h;
            const double fd =
                (wm_reward(vp, wm, cfg).value - wm_reward(vm, wm, cfg).value) / (2.0 * h);
            CHECK(grad[idx] == doctest::Approx(fd).epsilon(1e-3));
        }
    }

    TEST_CASE("geometry violations are rejected") {
        WorldModelBundle wm(reward_wm_cfg(), 41);
        Tensor video(Shape{8, 16, 16});
        SurpriseConfig cfg = small_surprise();
        cfg.window = 7;  // not a tubelet multiple
        cfg.context = 3;
        CHECK_THROWS(wm_reward(video, wm, cfg));
        cfg = small_surprise();
        cfg.window = 18;  // longer than the world model supports
        cfg.context = 4;
        CHECK_THROWS(window_count(8, cfg));  // the video is also too short
        CHECK_THROWS(wm_reward(video, wm, cfg));
    }

    TEST_CASE("untrained pixel predictor scores minus the future mean square") {
        PixelPredictorConfig pc;
        pc.context = 4;
        pc.horizon = 4;
        pc.height = 16;
        pc.width = 16;
        pc.channels = 16;
        pc.blocks = 1;
        PixelPredictor model(pc, 51);  // zero head: predicts all-zero futures

        Rng rng(43);
        const Tensor video = normal_tensor(Shape{12, 16, 16}, rng, 0.5);
        const SurpriseConfig cfg = small_surprise();

        // Oracle: mean over the two windows of mean(future^2).
        double expect = 0.0;
        for (std::int64_t k = 0; k < 2; ++k) {
            double m = 0.0;
            const double* fut = video.data() + (k * 4 + 4) * 256;
            for (std::int64_t i = 0; i < 4 * 256; ++i) m += fut[i] * fut[i];
            expect += m / (4.0 * 256.0);
        }
        expect /= 2.0;

        const double r = pixel_prediction_reward(video, model, cfg).value;
        CHECK(r == doctest::Approx(-expect).epsilon(1e-12));

        SurpriseConfig bad = cfg;
        bad.context = 6;  // layout mismatch with the predictor
        CHECK_THROWS(pixel_prediction_reward(video, model, bad));
    }

    TEST_CASE("pixel predictor training improves its reconstruction reward") {
        PixelPredictorConfig pc;
        pc.context = 4;
        pc.horizon = 4;
        pc.height = 16;
        pc.width = 16;
        pc.channels = 16;
        pc.blocks = 1;
        PixelPredictor model(pc, 53);

        const VideoDataset data = simulate_dataset(reward_world(), 24, 610);
        BaselineTrainConfig tc;
        tc.epochs = 6;
        tc.batch_size = 8;
        tc.seed = 4;
        const TrainReport rep = train_pixel_predictor(model, data, tc);
        REQUIRE(rep.epoch_loss.size() == 6);
        CHECK(rep.epoch_loss.back() < rep.epoch_loss.front());

        // Better than the all-zero baseline on a held-out clip.
        const SimResult held = simulate(reward_world(), 9100);
        SurpriseConfig cfg  = small_surprise();
        const double trained = pixel_prediction_reward(held.video, model, cfg).value;
        PixelPredictor fresh(pc, 53);
        const double zero = pixel_prediction_reward(held.video, fresh, cfg).value;
        CHECK(trained > zero);
    }

    TEST_CASE("untrained probe scores exactly zero everywhere") {
        ProbeConfig pc;
        pc.frames = 16;
        pc.height = 16;
        pc.width = 16;
        pc.channels = 16;
        pc.blocks = 1;
        ProbeClassifier probe(pc, 61);

        Rng rng(47);
        for (int rep = 0; rep < 3; ++rep) {
            const Tensor video = normal_tensor(Shape{16, 16, 16}, rng, 0.5);
            CHECK(classifier_probe_reward(video, probe).value == 0.0);
        }
    }

    TEST_CASE("probe training separates real from corrupted clips") {
        ProbeConfig pc;
        pc.frames = 16;
        pc.height = 16;
        pc.width = 16;
        pc.channels = 16;
        pc.blocks = 1;
        ProbeClassifier probe(pc, 63);

        const WorldConfig wc = reward_world();
        const VideoDataset real = simulate_dataset(wc, 32, 700);
        const VideoDataset bad = corrupt_dataset(wc, 32, 701);
        BaselineTrainConfig tc;
        tc.epochs = 8;
        tc.batch_size = 8;
        tc.seed = 5;
        const TrainReport rep = train_probe(probe, real, bad, tc);
        CHECK(rep.epoch_loss.back() < rep.epoch_loss.front());

        // Held-out AUC beats chance.
        const VideoDataset real_h = simulate_dataset(wc, 16, 800);
        const VideoDataset bad_h = corrupt_dataset(wc, 16, 801);
        std::vector<double> pos, neg;
        const std::int64_t clip = 16 * 16 * 16;
        for (std::int64_t i = 0; i < 16; ++i) {
            Tensor v(Shape{16, 16, 16});
            std::copy(real_h.videos.data() + i * clip, real_h.videos.data() + (i + 1) * clip,
                      v.data());
            pos.push_back(classifier_probe_reward(v, probe).value);
            std::copy(bad_h.videos.data() + i * clip, bad_h.videos.data() + (i + 1) * clip,
                      v.data());
            neg.push_back(classifier_probe_reward(v, probe).value);
        }
        CHECK(mann_whitney_auc(pos, neg) > 0.5);
    }

    TEST_CASE("baseline checkpoints round-trip") {
        TempDir dir;
        PixelPredictorConfig pc;
        pc.context = 4;
        pc.horizon = 4;
        pc.height = 16;
        pc.width = 16;
        pc.channels = 16;
        pc.blocks = 1;
        PixelPredictor model(pc, 71);
        Rng rng(53);
        // Perturb the zero head so the roundtrip is non-trivial.
        Param* head = model.params().find("head.w");
        for (std::int64_t i = 0; i < head->value.numel(); ++i) head->value[i] = rng.normal() * 0.1;

        const std::string ppath = dir.file("pixel.wmtc");
        save_pixel_predictor(model, ppath);
        PixelPredictor pback = load_pixel_predictor(ppath);
        const Tensor video = normal_tensor(Shape{8, 16, 16}, rng, 0.5);
        const SurpriseConfig cfg = small_surprise();
        CHECK(pixel_prediction_reward(video, model, cfg).value ==
              pixel_prediction_reward(video, pback, cfg).value);

        ProbeConfig prc;
        prc.frames = 8;
        prc.height = 16;
        prc.width = 16;
        prc.channels = 16;
        prc.blocks = 1;
        ProbeClassifier probe(prc, 73);
        Param* phead = probe.params().find("head.w");
        for (std::int64_t i = 0; i < phead->value.numel(); ++i)
            phead->value[i] = rng.normal() * 0.1;

        const std::string prpath = dir.file("probe.wmtc");
        save_probe(probe, prpath);
        ProbeClassifier prback = load_probe(prpath);
        CHECK(classifier_probe_reward(video, probe).value ==
              classifier_probe_reward(video, prback).value);
        CHECK_THROWS(load_probe(ppath));  // kind mismatch
    }

    TEST_CASE("reward oracle adapters expose values and gradients consistently") {
        WorldModelBundle wm(reward_wm_cfg(), 81);
        Rng rng(59);
        const Tensor video = normal_tensor(Shape{8, 16, 16}, rng, 0.5);
        const SurpriseConfig cfg = small_surprise();

        WmSurpriseReward wf(wm, cfg);
        CHECK(wf.differentiable());
        CHECK(wf.value(video) == wm_reward(video, wm, cfg).value);
        double v = 0.0;
        const Tensor g = wf.gradient(video, &v);
        CHECK(v == wm_reward(video, wm, cfg).value);
        const Tensor g2 = wm_reward_gradient(video, wm, cfg);
        for (std::int64_t i = 0; i < g.numel(); ++i) CHECK(g[i] == g2[i]);

        PixelPredictorConfig pc;
        pc.context = 4;
        pc.horizon = 4;
        pc.height = 16;
        pc.width = 16;
        pc.channels = 16;
        pc.blocks = 1;
        PixelPredictor model(pc, 83);
        PixelPredictionReward pf(model, cfg);
        CHECK(pf.value(video) == pixel_prediction_reward(video, model, cfg).value);
        CHECK_FALSE(pf.differentiable());
        CHECK_THROWS(pf.gradient(video));

        ProbeConfig prc;
        prc.frames = 8;
        prc.height = 16;
        prc.width = 16;
        prc.channels = 16;
        prc.blocks = 1;
        ProbeClassifier probe(prc, 85);
        ProbeReward prf(probe);
        CHECK(prf.value(video) == classifier_probe_reward(video, probe).value);
        CHECK_FALSE(prf.differentiable());
    }

    TEST_CASE("a briefly trained world model prefers real clips to teleported ones") {
        WorldModelConfig mc = reward_wm_cfg();
        WorldModelBundle wm(mc, 91);
        const WorldConfig wc = reward_world();
        const VideoDataset data = simulate_dataset(wc, 48, 900);
        WorldModelTrainConfig tc;
        tc.epochs = 10;
        tc.batch_size = 8;
        tc.seed = 6;
        train_worldmodel(wm, data, tc);

        const SurpriseConfig cfg = small_surprise();
        int wins = 0;
        const int pairs = 24;
        for (int i = 0; i < pairs; ++i) {
            const SimResult nominal = simulate(wc, 2000 + static_cast<std::uint64_t>(i));
            const SimResult bad =
                corrupt(nominal, wc, CorruptionKind::Teleport, 3000 + static_cast<std::uint64_t>(i));
            const double rr = wm_reward(nominal.video, wm, cfg).value;
            const double rb = wm_reward(bad.video, wm, cfg).value;
            if (rr > rb) ++wins;
        }
        INFO("teleport discrimination wins: " << wins << "/" << pairs);
        CHECK(wins > pairs / 2);
    }
}
