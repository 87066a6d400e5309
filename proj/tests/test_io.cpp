#include <doctest.h>

#include <filesystem>

#include "das/config.hpp"
#include "das/errors.hpp"
#include "das/io.hpp"
#include "das/rng.hpp"

using namespace das;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("das_test_" + std::to_string(Rng(9).bits()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("dense map round trip through header + sidecar") {
    TempDir tmp;
    Rng rng(3);
    DenseMap m(5, 7, 3);
    for (double& v : m.values) v = rng.normal(0, 10);
    save_dense_map(tmp.file("map.json"), tmp.file("map.bin"), m);
    DenseMap back = load_dense_map(tmp.file("map.json"));
    CHECK(back.height == 5);
    CHECK(back.width == 7);
    CHECK(back.channels == 3);
    for (std::size_t i = 0; i < m.values.size(); ++i)
        CHECK(back.values[i] == m.values[i]);
}

TEST_CASE("prediction map bundle round trip") {
    TempDir tmp;
    Rng rng(5);
    PredictionMaps maps;
    for (int l = 0; l < 2; ++l) {
        int h = 8 >> l, w = 8 >> l;
        maps.confidence.emplace_back(h, w, 1);
        maps.centerness.emplace_back(h, w, 1);
        maps.center_coord.emplace_back(h, w, 3);
        maps.joint_offsets.emplace_back(h, w, 6);
        maps.log_sigma.emplace_back(h, w, 6);
        for (auto* m : {&maps.confidence[l], &maps.centerness[l], &maps.center_coord[l],
                        &maps.joint_offsets[l], &maps.log_sigma[l]})
            for (double& v : m->values) v = rng.normal(0, 1);
    }
    std::vector<double> strides{8, 16};
    save_prediction_maps(tmp.file("maps.json"), tmp.file("maps.bin"), maps, strides);

    std::vector<double> strides_back;
    PredictionMaps back = load_prediction_maps(tmp.file("maps.json"), &strides_back);
    REQUIRE(strides_back == strides);
    REQUIRE(back.confidence.size() == 2);
    for (int l = 0; l < 2; ++l) {
        CHECK(back.joint_offsets[l].values == maps.joint_offsets[l].values);
        CHECK(back.log_sigma[l].values == maps.log_sigma[l].values);
    }
}

TEST_CASE("scene files round trip with skeleton metadata") {
    TempDir tmp;
    SyntheticSceneConfig cfg;
    auto scenes = gen_scenes(cfg, 3, 11);
    save_scenes(tmp.path.string(), scenes, cfg.skeleton);
    Skeleton sk;
    auto back = load_scenes(tmp.path.string(), &sk);
    REQUIRE(back.size() == scenes.size());
    CHECK(sk.root_index == cfg.skeleton.root_index);
    CHECK(sk.names == cfg.skeleton.names);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        REQUIRE(back[i].persons.size() == scenes[i].persons.size());
        CHECK(back[i].intrinsics.f == scenes[i].intrinsics.f);
        for (std::size_t p = 0; p < scenes[i].persons.size(); ++p)
            for (int k = 0; k < scenes[i].persons[p].joint_count(); ++k) {
                CHECK(back[i].persons[p].joints[k].x == scenes[i].persons[p].joints[k].x);
                CHECK(back[i].persons[p].joints[k].d == scenes[i].persons[p].joints[k].d);
            }
    }
}

TEST_CASE("flow checkpoint round trip preserves densities") {
    TempDir tmp;
    Rng rng(13);
    FlowModel flow = FlowModel::make(4, 16, 2.0, BaseDist::Laplace, rng);
    flow.randomize(rng, 0.5, 0.1);
    save_flow(tmp.file("flow.json"), flow);
    FlowModel back = load_flow(tmp.file("flow.json"));
    CHECK(back.layers.size() == flow.layers.size());
    for (int i = 0; i < 20; ++i) {
        Vec3 x{rng.normal(0, 2), rng.normal(0, 2), rng.normal(0, 2)};
        CHECK(back.log_prob(x) == flow.log_prob(x));
    }
}

TEST_CASE("sampler checkpoint round trip") {
    TempDir tmp;
    Rng rng(17);
    std::vector<SamplerMlp> samplers;
    for (int i = 0; i < 3; ++i) {
        SamplerMlp s = SamplerMlp::make(4, 16, rng);
        for (double& v : s.w_disp.value) v = rng.normal(0, 0.1);
        samplers.push_back(std::move(s));
    }
    save_samplers(tmp.file("sampler.json"), samplers);
    auto back = load_samplers(tmp.file("sampler.json"));
    REQUIRE(back.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(back[i].M == samplers[i].M);
        CHECK(back[i].w_disp.value == samplers[i].w_disp.value);
    }
}

TEST_CASE("config parsing: round trip, defaults, and typo rejection") {
    RunConfig cfg;
    cfg.seed = 77;
    cfg.loss.pose_loss = PoseLoss::Rle;
    cfg.update.mode = UpdateMode::MultiSource;
    cfg.train.label_noise = LabelNoise::Heteroscedastic;
    std::string text = dump_config(cfg);
    RunConfig back = parse_config(text);
    CHECK(back.seed == 77);
    CHECK(back.loss.pose_loss == PoseLoss::Rle);
    CHECK(back.update.mode == UpdateMode::MultiSource);
    CHECK(back.train.label_noise == LabelNoise::Heteroscedastic);

    CHECK_THROWS_AS(parse_config("{\"sceen\": {}}"), ConfigError);
    CHECK_THROWS_AS(parse_config("{\"loss\": {\"pose_loss\": \"l3\"}}"), ConfigError);
    CHECK_THROWS_AS(parse_config("not json"), ConfigError);

    RunConfig defaults = parse_config("{}");
    CHECK(defaults.levels.strides.size() == 3);
    CHECK(defaults.eval.threshold == doctest::Approx(0.05));
}

TEST_CASE("DAS_SEED environment override") {
    RunConfig cfg;
    cfg.seed = 1;
    setenv("DAS_SEED", "987", 1);
    apply_seed_env(cfg);
    CHECK(cfg.seed == 987);
    setenv("DAS_SEED", "xyz", 1);
    CHECK_THROWS_AS(apply_seed_env(cfg), ConfigError);
    unsetenv("DAS_SEED");
    cfg.seed = 5;
    apply_seed_env(cfg);
    CHECK(cfg.seed == 5);
}
