#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <string>
#include <vector>

#include "benchmark_refs.hpp"
#include "lsens/common.hpp"
#include "lsens/ensemble.hpp"
#include "lsens/metrics.hpp"
#include "lsens/synth.hpp"
#include "test_util.hpp"

using namespace lsens;

namespace {

ModelRecord stub_record(const std::string& arch, const std::string& loss, double lr,
                        BandSetting setting, double val_f1) {
    ModelRecord r;
    r.config.arch = arch;
    r.config.loss = LossConfig{loss};
    r.config.learning_rate = lr;
    r.config.setting = setting;
    r.best_val_f1 = val_f1;
    r.best_epoch = 1;
    r.epochs_run = 1;
    r.history = {{0.5, val_f1}};
    r.weights_path = "unused";
    return r;
}

// Manifest rebuilt from the published per-setting rankings.
MatrixManifest benchmark_manifest() {
    MatrixManifest m;
    for (const refs::ScoreRow& row : refs::kScoreRows)
        m.records.push_back(
            stub_record(row.arch, row.loss, row.lr, parse_setting(row.setting), row.val_f1));
    return m;
}

ProbabilityMap flat_map(const std::string& id, int w, int h, float value) {
    ProbabilityMap m;
    m.scene_id = id;
    m.width = w;
    m.height = h;
    m.values.assign(std::size_t(w) * std::size_t(h), value);
    return m;
}

// Three real (untrained) models persisted as session artifacts, with a
// manifest pointing at their checkpoints.
struct EnsembleFixture {
    TempDir dir;
    Scene scene;
    NormStats stats;
    MatrixManifest manifest;
    std::vector<TrainConfig> configs;

    EnsembleFixture() {
        SynthSpec spec;
        spec.width = 32;
        spec.height = 32;
        spec.min_blobs = 1;
        spec.max_blobs = 1;
        spec.min_radius = 2.0f;
        spec.max_radius = 3.5f;
        scene = synth_case_study(21, spec);
        std::vector<const Scene*> one = {&scene};
        stats = fit_norm_stats(one);

        const char* losses[3] = {"BCELoss", "DiceLoss", "FocalLoss"};
        for (int i = 0; i < 3; ++i) {
            TrainConfig c;
            c.arch = "Unet";
            c.loss = LossConfig{losses[i]};
            c.learning_rate = 0.001;
            c.setting = BandSetting::S2;
            c.seed = std::uint64_t(100 + i);
            c.width = 2;
            c.depth = 1;
            c.patch_size = 16;

            const std::string d = session_dir(dir.file("runs"), c);
            std::filesystem::create_directories(d);
            Model m(ArchSpec{c.arch, setting_channels(c.setting), c.width, c.depth}, c.seed);
            save_weights(m, d + "/weights.bin");

            ModelRecord r = stub_record(c.arch, losses[i], c.learning_rate, c.setting,
                                        0.6 - 0.1 * i);
            r.config = c;
            r.weights_path = d + "/weights.bin";
            manifest.records.push_back(r);
            configs.push_back(c);
        }
    }
};

EnsembleFixture& fixture() {
    static EnsembleFixture f;
    return f;
}

}  // namespace

TEST_CASE("ranking reproduces the published per-setting leaders") {
    const MatrixManifest m = benchmark_manifest();

    std::vector<ModelRecord> top = rank_models(m, BandSetting::S1S2);
    REQUIRE(top.size() == 10);
    CHECK(top[0].config.arch == "UnetPP");
    CHECK(top[0].config.loss.name == "FocalLoss");
    CHECK(top[0].config.learning_rate == 0.01);
    CHECK(top[0].best_val_f1 == 0.751);
    for (std::size_t i = 1; i < top.size(); ++i)
        CHECK(top[i - 1].best_val_f1 >= top[i].best_val_f1);
    for (const ModelRecord& r : top) CHECK(r.config.setting == BandSetting::S1S2);

    SUBCASE("each setting ranks only its own records") {
        for (BandSetting s : kAllSettings) CHECK(rank_models(m, s).size() == 10);
        CHECK(rank_models(m, BandSetting::S1)[0].best_val_f1 == 0.488);
    }

    SUBCASE("the order is stable across calls") {
        std::vector<ModelRecord> again = rank_models(m, BandSetting::S1S2);
        for (std::size_t i = 0; i < top.size(); ++i)
            CHECK(again[i].config == top[i].config);
    }
}

TEST_CASE("ties break lexicographically by arch, loss, then lr") {
    MatrixManifest m;
    m.records.push_back(stub_record("Unet", "BCELoss", 0.001, BandSetting::S1, 0.70));
    m.records.push_back(stub_record("DeepLabV3", "DiceLoss", 0.01, BandSetting::S1, 0.70));
    m.records.push_back(stub_record("DeepLabV3", "BCELoss", 0.01, BandSetting::S1, 0.70));
    m.records.push_back(stub_record("DeepLabV3", "BCELoss", 0.001, BandSetting::S1, 0.70));

    std::vector<ModelRecord> ranked = rank_models(m, BandSetting::S1);
    REQUIRE(ranked.size() == 4);
    CHECK(ranked[0].config.arch == "DeepLabV3");
    CHECK(ranked[0].config.loss.name == "BCELoss");
    CHECK(ranked[0].config.learning_rate == 0.001);
    CHECK(ranked[1].config.learning_rate == 0.01);
    CHECK(ranked[2].config.loss.name == "DiceLoss");
    CHECK(ranked[3].config.arch == "Unet");
}

TEST_CASE("failed records are excluded and may empty a setting") {
    MatrixManifest m;
    ModelRecord dead = stub_record("Unet", "BCELoss", 0.01, BandSetting::S2, -1.0);
    dead.failed = true;
    m.records.push_back(dead);
    m.records.push_back(stub_record("PAN", "DiceLoss", 0.01, BandSetting::S2, 0.4));

    std::vector<ModelRecord> ranked = rank_models(m, BandSetting::S2);
    REQUIRE(ranked.size() == 1);
    CHECK(ranked[0].config.arch == "PAN");

    CHECK(error_message([&] { return rank_models(m, BandSetting::S1); }) ==
          "no successful records for setting S1");
}

TEST_CASE("make_ensemble takes the top k and guards its bounds") {
    const MatrixManifest m = benchmark_manifest();
    EnsembleSpec spec = make_ensemble(m, BandSetting::S1, 3);
    CHECK(spec.k == 3);
    REQUIRE(spec.member_configs.size() == 3);
    CHECK(spec.member_configs[0].arch == "PAN");       // 0.488
    CHECK(spec.member_configs[1].arch == "FPN");       // 0.479
    CHECK(spec.member_configs[2].arch == "UnetPP");    // 0.474
    CHECK(spec.threshold == 0.5);

    CHECK(make_ensemble(m, BandSetting::S1, 1).member_configs.size() == 1);
    CHECK(error_message([&] { return make_ensemble(m, BandSetting::S1, 0); }) ==
          "ensemble size k must be at least 1");
    CHECK(error_message([&] { return make_ensemble(m, BandSetting::S1, 11); })
              .find("exceeds the 10 successful records") != std::string::npos);
    CHECK(error_message([&] { return make_ensemble(m, BandSetting::S1, 2, 1.0); }) ==
          "threshold must lie strictly between 0 and 1");
}

TEST_CASE("averaging is an exact mean with fixed-order reduction") {
    SUBCASE("two constant maps average to the midpoint") {
        std::vector<ProbabilityMap> maps = {flat_map("s", 4, 4, 0.2f),
                                            flat_map("s", 4, 4, 0.8f)};
        ProbabilityMap mean = average_maps(maps);
        for (float v : mean.values) CHECK(v == 0.5f);
    }

    SUBCASE("identical members collapse to the member") {
        ProbabilityMap base = flat_map("s", 3, 3, 0.0f);
        for (std::size_t i = 0; i < base.values.size(); ++i)
            base.values[i] = float(i) / 10.0f + 0.037f;
        ProbabilityMap mean = average_maps({base, base, base});
        CHECK(std::memcmp(mean.values.data(), base.values.data(),
                          base.values.size() * sizeof(float)) == 0);
    }

    SUBCASE("result stays inside [0,1]") {
        std::vector<ProbabilityMap> maps = {flat_map("s", 2, 2, 1.0f), flat_map("s", 2, 2, 1.0f),
                                            flat_map("s", 2, 2, 0.9999999f)};
        for (float v : average_maps(maps).values) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }

    SUBCASE("mismatched scenes are rejected") {
        CHECK(error_message([] {
                  return average_maps({flat_map("a", 2, 2, 0.1f), flat_map("b", 2, 2, 0.1f)});
              }) == "probability maps cover different scenes");
        CHECK(error_message([] { return average_maps({}); }) ==
              "cannot average zero probability maps");
    }
}

TEST_CASE("ensemble prediction averages real member maps") {
    EnsembleFixture& f = fixture();

    EnsembleSpec one;
    one.setting = BandSetting::S2;
    one.k = 1;
    one.member_configs = {f.configs[0]};
    ProbabilityMap single =
        ensemble_predict(one, f.scene, f.stats, f.manifest, 32);

    Model m0 = load_weights(ArchSpec{"Unet", 2, 2, 1}, f.manifest.records[0].weights_path);
    ProbabilityMap direct = predict_scene(m0, f.scene, BandSetting::S2, f.stats, 32, 32);
    REQUIRE(single.values.size() == direct.values.size());
    CHECK(std::memcmp(single.values.data(), direct.values.data(),
                      direct.values.size() * sizeof(float)) == 0);

    EnsembleSpec full;
    full.setting = BandSetting::S2;
    full.k = 3;
    full.member_configs = f.configs;
    ProbabilityMap mean = ensemble_predict(full, f.scene, f.stats, f.manifest, 32);

    SUBCASE("a brute-force recomputation from the member maps agrees") {
        std::vector<ProbabilityMap> maps;
        for (const ModelRecord& r : f.manifest.records) {
            Model m = load_weights(ArchSpec{"Unet", 2, 2, 1}, r.weights_path);
            maps.push_back(predict_scene(m, f.scene, BandSetting::S2, f.stats, 32, 32));
        }
        for (std::size_t p = 0; p < mean.values.size(); ++p) {
            const float brute =
                (maps[0].values[p] + maps[1].values[p] + maps[2].values[p]) / 3.0f;
            CHECK(std::abs(mean.values[p] - brute) <= 1e-7f);
        }
    }

    SUBCASE("member order never changes the bits") {
        EnsembleSpec shuffled = full;
        std::rotate(shuffled.member_configs.begin(), shuffled.member_configs.begin() + 1,
                    shuffled.member_configs.end());
        ProbabilityMap again = ensemble_predict(shuffled, f.scene, f.stats, f.manifest, 32);
        CHECK(std::memcmp(again.values.data(), mean.values.data(),
                          mean.values.size() * sizeof(float)) == 0);
    }

    SUBCASE("provenance names every member and its score") {
        CHECK(mean.provenance.find("ensemble_mean") != std::string::npos);
        CHECK(mean.provenance.find("Unet_BCELoss_0.001") != std::string::npos);
        CHECK(mean.provenance.find("Unet_FocalLoss_0.001") != std::string::npos);
    }

    SUBCASE("majority vote averages binarized maps") {
        ProbabilityMap votes =
            ensemble_predict(full, f.scene, f.stats, f.manifest, 32, true);
        for (float v : votes.values) {
            const bool third = std::abs(v - 1.0f / 3.0f) <= 1e-7f;
            const bool two_thirds = std::abs(v - 2.0f / 3.0f) <= 1e-7f;
            CHECK((v == 0.0f || v == 1.0f || third || two_thirds));
        }
    }
}

TEST_CASE("ensemble prediction rejects inconsistent members") {
    EnsembleFixture& f = fixture();

    EnsembleSpec spec;
    spec.setting = BandSetting::S2;
    spec.k = 2;
    spec.member_configs = {f.configs[0], f.configs[1]};
    spec.member_configs[1].setting = BandSetting::S1;
    CHECK(error_message([&] {
              return ensemble_predict(spec, f.scene, f.stats, f.manifest, 32);
          }).find("trained on setting S1") != std::string::npos);

    spec.member_configs[1] = f.configs[1];
    spec.member_configs[1].seed = 999;  // no such record
    CHECK(error_message([&] {
              return ensemble_predict(spec, f.scene, f.stats, f.manifest, 32);
          }).find("not in the manifest") != std::string::npos);

    spec.member_configs[1] = f.configs[1];
    spec.k = 3;
    CHECK(error_message([&] {
              return ensemble_predict(spec, f.scene, f.stats, f.manifest, 32);
          }).find("does not match its 2 member configs") != std::string::npos);

    MatrixManifest broken = f.manifest;
    broken.records[1].weights_path = f.dir.file("missing.bin");
    spec.k = 2;
    CHECK(error_message([&] {
              return ensemble_predict(spec, f.scene, f.stats, broken, 32);
          }).find("cannot open") != std::string::npos);
}

TEST_CASE("binarize uses the inclusive threshold rule") {
    ProbabilityMap map = flat_map("s", 2, 2, 0.0f);
    map.values = {0.4999f, 0.5f, 0.5001f, 0.0f};
    std::vector<std::uint8_t> mask = binarize(map, 0.5);
    CHECK(mask == std::vector<std::uint8_t>{0, 1, 1, 0});

    SUBCASE("all below threshold gives an all-zero mask") {
        for (std::uint8_t b : binarize(flat_map("s", 3, 3, 0.49f), 0.5)) CHECK(b == 0);
    }

    SUBCASE("raising the threshold never adds positives") {
        ProbabilityMap r = flat_map("s", 10, 10, 0.0f);
        Rng rng(derive_seed(5, "ensemble.monotone"));
        for (float& v : r.values) v = float(rng.uniform());
        std::vector<std::uint8_t> low = binarize(r, 0.3);
        std::vector<std::uint8_t> high = binarize(r, 0.6);
        for (std::size_t i = 0; i < low.size(); ++i)
            CHECK(high[i] <= low[i]);
    }

    SUBCASE("threshold bounds are enforced") {
        ProbabilityMap m = flat_map("s", 1, 1, 0.5f);
        CHECK(error_message([&] { return binarize(m, 0.0); }) ==
              "threshold must lie strictly between 0 and 1");
        CHECK(error_message([&] { return binarize(m, 1.0); }) ==
              "threshold must lie strictly between 0 and 1");
    }
}

TEST_CASE("size sweep reports one test score per requested k") {
    EnsembleFixture& f = fixture();

    std::vector<std::pair<int, double>> sweep =
        size_sweep(f.manifest, BandSetting::S2, f.scene, f.stats, {3, 1, 2}, 32);
    REQUIRE(sweep.size() == 3);
    CHECK(sweep[0].first == 1);
    CHECK(sweep[1].first == 2);
    CHECK(sweep[2].first == 3);

    // k=1 equals the best single model evaluated directly.
    Model best = load_weights(ArchSpec{"Unet", 2, 2, 1}, f.manifest.records[0].weights_path);
    ProbabilityMap map = predict_scene(best, f.scene, BandSetting::S2, f.stats, 32, 32);
    const double direct =
        scores(confusion(binarize(map, 0.5), f.scene.label, f.scene.valid)).f1;
    CHECK(sweep[0].second == direct);

    CHECK(error_message([&] {
              return size_sweep(f.manifest, BandSetting::S2, f.scene, f.stats, {1, 1}, 32);
          }) == "duplicate ensemble size k=1");
    CHECK(error_message([&] {
              return size_sweep(f.manifest, BandSetting::S2, f.scene, f.stats, {4}, 32);
          }).find("exceeds the 3 successful records") != std::string::npos);
}

TEST_CASE("probability rasters round-trip with their provenance") {
    EnsembleFixture& f = fixture();
    ProbabilityMap map = flat_map("case21", 5, 3, 0.0f);
    for (std::size_t i = 0; i < map.values.size(); ++i) map.values[i] = float(i) / 20.0f;
    map.provenance = "{\"kind\":\"ensemble_mean\",\"k\":2}";

    const std::string path = f.dir.file("out.bst");
    save_probability_map(map, path);
    ProbabilityMap back = load_probability_map(path);

    CHECK(back.scene_id == "case21");
    CHECK(back.width == 5);
    CHECK(back.height == 3);
    REQUIRE(back.values.size() == map.values.size());
    CHECK(std::memcmp(back.values.data(), map.values.data(),
                      map.values.size() * sizeof(float)) == 0);
    CHECK(back.provenance.find("ensemble_mean") != std::string::npos);
    CHECK(std::filesystem::exists(path + ".json"));

    SUBCASE("out-of-range values never reach disk") {
        map.values[0] = 1.5f;
        CHECK(error_message([&] { save_probability_map(map, f.dir.file("bad.bst")); })
                  .find("probability outside [0,1]") != std::string::npos);
    }

    SUBCASE("a truncated raster is rejected") {
        std::filesystem::resize_file(path, 20);
        CHECK(error_message([&] { return load_probability_map(path); })
                  .find("truncated") != std::string::npos);
    }
}
