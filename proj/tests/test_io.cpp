#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cola/checkpoint.hpp"
#include "cola/config.hpp"
#include "cola/sim.hpp"
#include "cola/world.hpp"
#include "doctest.h"

using namespace cola;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("cola_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("checkpoint round-trips bit-exactly") {
    TempDir tmp;
    Rng rng(4);
    Parameter<float> a(normal_init<float>(rng, {3, 5}, 1.0));
    Parameter<float> b(normal_init<float>(rng, {7}, 1.0));
    ParamSet<float> ps;
    ps.add("block.w", a);
    ps.add("block.b", b);
    save_checkpoint(tmp.file("m.ckpt"), ps);

    Parameter<float> a2(Tensor<float>::zeros({3, 5}));
    Parameter<float> b2(Tensor<float>::zeros({7}));
    ParamSet<float> ps2;
    ps2.add("block.w", a2);
    ps2.add("block.b", b2);
    load_checkpoint(tmp.file("m.ckpt"), ps2);
    CHECK(a2.value.data == a.value.data);
    CHECK(b2.value.data == b.value.data);

    auto entries = read_checkpoint(tmp.file("m.ckpt"));
    REQUIRE(entries.size() == 2);
    CHECK(entries[0].first == "block.w");
    CHECK(entries[0].second.shape == std::vector<int>{3, 5});
}

TEST_CASE("checkpoint rejects name and shape mismatches") {
    TempDir tmp;
    Parameter<float> a(Tensor<float>::full({2, 2}, 1.0f));
    ParamSet<float> ps;
    ps.add("w", a);
    save_checkpoint(tmp.file("m.ckpt"), ps);

    Parameter<float> wrong_shape(Tensor<float>::zeros({2, 3}));
    ParamSet<float> ps_shape;
    ps_shape.add("w", wrong_shape);
    CHECK_THROWS_AS(load_checkpoint(tmp.file("m.ckpt"), ps_shape), parse_error);

    Parameter<float> other(Tensor<float>::zeros({2, 2}));
    ParamSet<float> ps_name;
    ps_name.add("v", other);
    CHECK_THROWS_AS(load_checkpoint(tmp.file("m.ckpt"), ps_name), parse_error);

    std::ofstream bad(tmp.file("bad.ckpt"), std::ios::binary);
    bad << "NOPE";
    bad.close();
    CHECK_THROWS_AS(read_checkpoint(tmp.file("bad.ckpt")), parse_error);
}

TEST_CASE("dataset json-lines round-trip") {
    TempDir tmp;
    RunConfig cfg;
    cfg.kmeans_iters = 10;
    Dataset d = generate_dataset(cfg, 16, 5);
    write_dataset(d.samples, tmp.file("data.jsonl"));
    auto back = read_dataset(tmp.file("data.jsonl"));
    REQUIRE(back.size() == d.samples.size());
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].id == d.samples[i].id);
        CHECK(back[i].family == d.samples[i].family);
        CHECK(back[i].label == d.samples[i].label);
        REQUIRE(back[i].gt.size() == d.samples[i].gt.size());
        for (size_t t = 0; t < back[i].gt.size(); ++t) {
            CHECK(back[i].gt[t][0] == doctest::Approx(d.samples[i].gt[t][0]).epsilon(1e-6));
            CHECK(back[i].gt[t][1] == doctest::Approx(d.samples[i].gt[t][1]).epsilon(1e-6));
        }
        REQUIRE(back[i].tokens.shape == d.samples[i].tokens.shape);
        for (size_t k = 0; k < back[i].tokens.data.size(); ++k)
            CHECK(back[i].tokens.data[k] ==
                  doctest::Approx(d.samples[i].tokens.data[k]).epsilon(1e-6));
    }

    std::ofstream bad(tmp.file("bad.jsonl"));
    bad << "{\"id\": 1}\nnot json\n";
    bad.close();
    CHECK_THROWS_AS(read_dataset(tmp.file("bad.jsonl")), parse_error);
}

TEST_CASE("cluster model round-trip") {
    TempDir tmp;
    ClusterModel cm;
    cm.horizon = 4;
    cm.centroids = Tensor<double>({2, 8});
    for (size_t i = 0; i < cm.centroids.data.size(); ++i) cm.centroids.data[i] = 0.25 * i;
    cm.names = {"cruise", "stop"};
    write_clusters(cm, tmp.file("c.json"));
    ClusterModel back = read_clusters(tmp.file("c.json"));
    CHECK(back.horizon == 4);
    CHECK(back.names == cm.names);
    for (size_t i = 0; i < cm.centroids.data.size(); ++i)
        CHECK(back.centroids.data[i] == doctest::Approx(cm.centroids.data[i]).epsilon(1e-9));
}

TEST_CASE("scenario files round-trip") {
    TempDir tmp;
    RunConfig cfg;
    std::vector<Scenario> suite = make_scenario_suite(3, 11, cfg);
    write_scenarios(suite, tmp.file("s.jsonl"));
    auto back = read_scenarios(tmp.file("s.jsonl"));
    REQUIRE(back.size() == suite.size());
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].kind == suite[i].kind);
        CHECK(back[i].ego.speed == doctest::Approx(suite[i].ego.speed));
        CHECK(back[i].adversary.x0 == doctest::Approx(suite[i].adversary.x0));
        CHECK(back[i].adversary.speed == doctest::Approx(suite[i].adversary.speed));
    }
}

TEST_CASE("config: defaults, file loading, unknown keys, echo") {
    TempDir tmp;
    RunConfig cfg;
    CHECK(cfg.dim == 64);
    CHECK(cfg.strategy == "interpolate");

    std::ofstream f(tmp.file("run.cfg"));
    f << "# comment line\n"
      << "dim=32\n"
      << "lr=0.001\n"
      << "strategy=single\n";
    f.close();
    cfg.load(tmp.file("run.cfg"));
    CHECK(cfg.dim == 32);
    CHECK(cfg.lr == doctest::Approx(0.001));
    CHECK(cfg.strategy == "single");
    CHECK(cfg.layers == 4);  // untouched default

    CHECK_THROWS_AS(cfg.set("no_such_key", "1"), config_error);

    cfg.save(tmp.file("echo.cfg"));
    RunConfig cfg2;
    cfg2.load(tmp.file("echo.cfg"));
    CHECK(cfg2.dim == 32);
    CHECK(cfg2.strategy == "single");
    CHECK(cfg.echo().find("dim=32") != std::string::npos);
}

TEST_CASE("config validation") {
    RunConfig cfg;
    cfg.dim = 30;  // not divisible by heads=4
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = RunConfig{};
    cfg.top_k = 100;  // > vision_tokens
    CHECK_THROWS_AS(cfg.validate(), config_error);
}
