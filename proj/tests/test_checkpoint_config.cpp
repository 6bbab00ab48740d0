#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "wmsteer/checkpoint.hpp"
#include "wmsteer/common.hpp"
#include "wmsteer/config.hpp"
#include "wmsteer/rng.hpp"

#include "test_helpers.hpp"

using namespace wmsteer;
using wmsteer_test::TempDir;

TEST_SUITE_BEGIN("checkpoint_config");

TEST_CASE("checkpoint round-trips tensors bit-exactly") {
    TempDir tmp;
    Rng rng(11);
    Tensor a = normal_tensor(Shape{3, 5}, rng);
    Tensor b = uniform_tensor(Shape{7}, rng, -1e300, 1e300);  // extreme magnitudes
    b[0] = 0.0;
    b[1] = -0.0;
    b[2] = 1e-308;  // subnormal territory

    Checkpoint ck;
    ck.meta["schedule"] = "vp_cosine";
    ck.meta["step"] = 1234;
    ck.add("weights", a);
    ck.add("stats", b);
    ck.save(tmp.file("model.wmtc"));

    Checkpoint back = Checkpoint::load(tmp.file("model.wmtc"));
    CHECK(back.tensor_count() == 2);
    CHECK(back.meta.at("schedule") == "vp_cosine");
    CHECK(back.meta.at("step") == 1234);

    const Tensor* ra = back.find("weights");
    const Tensor* rb = back.find("stats");
    REQUIRE(ra != nullptr);
    REQUIRE(rb != nullptr);
    REQUIRE(ra->shape() == a.shape());
    REQUIRE(rb->shape() == b.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK((*ra)[i] == a[i]);
    for (std::int64_t i = 0; i < b.numel(); ++i) {
        // Bit-exact: distinguishes -0.0 from +0.0.
        CHECK(std::signbit((*rb)[i]) == std::signbit(b[i]));
        CHECK((*rb)[i] == b[i]);
    }
    CHECK(back.find("missing") == nullptr);
}

TEST_CASE("checkpoint restores a parameter store") {
    TempDir tmp;
    Rng rng(12);
    ParamStore store;
    store.create("enc.w", normal_tensor(Shape{4, 4}, rng));
    store.create("enc.b", normal_tensor(Shape{4}, rng));

    Checkpoint ck;
    ck.add_store("model", store);
    ck.save(tmp.file("store.wmtc"));

    ParamStore fresh;
    fresh.create("enc.w", Tensor(Shape{4, 4}));
    fresh.create("enc.b", Tensor(Shape{4}));
    Checkpoint::load(tmp.file("store.wmtc")).load_store("model", fresh);

    for (const char* name : {"enc.w", "enc.b"}) {
        const Tensor& orig = store.find(name)->value;
        const Tensor& got = fresh.find(name)->value;
        for (std::int64_t i = 0; i < orig.numel(); ++i) CHECK(got[i] == orig[i]);
    }
}

TEST_CASE("checkpoint rejects missing parameters and shape mismatches") {
    TempDir tmp;
    ParamStore store;
    store.create("w", Tensor(Shape{2, 2}));
    Checkpoint ck;
    ck.add_store("m", store);
    ck.save(tmp.file("partial.wmtc"));

    Checkpoint back = Checkpoint::load(tmp.file("partial.wmtc"));

    ParamStore extra;
    extra.create("w", Tensor(Shape{2, 2}));
    extra.create("unknown", Tensor(Shape{1}));
    CHECK_THROWS_AS(back.load_store("m", extra), Error);

    ParamStore wrong_shape;
    wrong_shape.create("w", Tensor(Shape{2, 3}));
    CHECK_THROWS_AS(back.load_store("m", wrong_shape), Error);

    ParamStore wrong_prefix;
    wrong_prefix.create("w", Tensor(Shape{2, 2}));
    CHECK_THROWS_AS(back.load_store("other", wrong_prefix), Error);
}

TEST_CASE("checkpoint load validates the file") {
    TempDir tmp;
    CHECK_THROWS_AS(Checkpoint::load(tmp.file("nonexistent.wmtc")), Error);

    {
        std::ofstream out(tmp.file("garbage.wmtc"), std::ios::binary);
        out << "not a checkpoint at all, just text";
    }
    CHECK_THROWS_AS(Checkpoint::load(tmp.file("garbage.wmtc")), Error);

    // Truncated payload: valid header+manifest but the tensor data is cut off.
    {
        Checkpoint ck;
        ck.add("t", Tensor(Shape{64}));
        ck.save(tmp.file("full.wmtc"));
        std::ifstream in(tmp.file("full.wmtc"), std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        std::ofstream out(tmp.file("cut.wmtc"), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 100));
    }
    CHECK_THROWS_AS(Checkpoint::load(tmp.file("cut.wmtc")), Error);
}

TEST_CASE("config resolves dotted paths with fallbacks") {
    Config cfg(nlohmann::json{
        {"train", {{"lr", 3e-4}, {"epochs", 30}, {"resume", true}, {"name", "run-a"}}},
        {"top", 7},
    });
    CHECK(cfg.has("train.lr"));
    CHECK(!cfg.has("train.missing"));
    CHECK(!cfg.has("absent.lr"));
    CHECK(cfg.get_double("train.lr", 0.0) == doctest::Approx(3e-4));
    CHECK(cfg.get_int("train.epochs", -1) == 30);
    CHECK(cfg.get_bool("train.resume", false));
    CHECK(cfg.get_string("train.name", "?") == "run-a");
    CHECK(cfg.get_int("top", -1) == 7);
    // Fallbacks for missing keys.
    CHECK(cfg.get_double("train.wd", 0.01) == doctest::Approx(0.01));
    CHECK(cfg.get_string("train.other", "dflt") == "dflt");
    // Integers are readable through the double accessor.
    CHECK(cfg.get_double("train.epochs", 0.0) == doctest::Approx(30.0));
}

TEST_CASE("config overrides parse JSON where possible") {
    Config cfg;
    cfg.apply_override("a.b.lr=0.5");
    cfg.apply_override("a.b.steps=64");
    cfg.apply_override("a.flag=true");
    cfg.apply_override("name=hello world");  // not valid JSON -> raw string
    cfg.apply_override("quoted=\"42\"");     // JSON string, stays a string

    CHECK(cfg.get_double("a.b.lr", 0.0) == doctest::Approx(0.5));
    CHECK(cfg.get_int("a.b.steps", 0) == 64);
    CHECK(cfg.get_bool("a.flag", false));
    CHECK(cfg.get_string("name", "") == "hello world");
    CHECK(cfg.get_string("quoted", "") == "42");

    CHECK_THROWS_AS(cfg.apply_override("no_equals_sign"), Error);
    CHECK_THROWS_AS(cfg.apply_override("=5"), Error);
}

TEST_CASE("config merge overlays nested keys without clobbering siblings") {
    Config base;
    base.set("model.width", 32);
    base.set("model.depth", 4);
    base.set("seed", 1);

    Config overlay;
    overlay.set("model.width", 64);
    overlay.set("train.lr", 1e-3);

    base.merge(overlay);
    CHECK(base.get_int("model.width", 0) == 64);   // overridden
    CHECK(base.get_int("model.depth", 0) == 4);    // sibling preserved
    CHECK(base.get_int("seed", 0) == 1);           // untouched
    CHECK(base.get_double("train.lr", 0.0) == doctest::Approx(1e-3));
}

TEST_CASE("config loads from file and fingerprints content") {
    TempDir tmp;
    {
        std::ofstream out(tmp.file("cfg.json"));
        out << R"({"world": {"frames": 24}, "sampler": {"name": "smc"}})";
    }
    Config cfg = Config::from_file(tmp.file("cfg.json"));
    CHECK(cfg.get_int("world.frames", 0) == 24);
    CHECK(cfg.get_string("sampler.name", "") == "smc");

    const std::uint64_t fp = cfg.fingerprint();
    CHECK(fp == cfg.fingerprint());  // stable
    Config other = cfg;
    other.set("world.frames", 25);
    CHECK(other.fingerprint() != fp);

    CHECK_THROWS_AS(Config::from_file(tmp.file("missing.json")), Error);
    {
        std::ofstream out(tmp.file("broken.json"));
        out << "{ not json";
    }
    CHECK_THROWS_AS(Config::from_file(tmp.file("broken.json")), Error);
}

TEST_SUITE_END();
