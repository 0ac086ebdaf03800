#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "lsens/common.hpp"
#include "lsens/matrix.hpp"
#include "lsens/synth.hpp"
#include "test_util.hpp"

using namespace lsens;

namespace {

struct MatrixData {
    TempDir dir;
    std::string manifest;

    MatrixData() {
        SynthSpec spec;
        spec.width = 32;
        spec.height = 32;
        spec.min_blobs = 1;
        spec.max_blobs = 1;
        spec.min_radius = 2.0f;
        spec.max_radius = 3.5f;
        spec.max_invalid_border = 2;
        manifest = make_synthetic_dataset(dir.file("data"), 6, 4, spec);
    }
};

MatrixData& fixtures() {
    static MatrixData d;
    return d;
}

TrainConfig tiny_base() {
    TrainConfig c;
    c.width = 2;
    c.depth = 1;
    c.patch_size = 16;
    c.iters_per_epoch = 2;
    c.batch_size = 1;
    c.patience_epochs = 2;
    c.max_epochs = 2;
    return c;
}

// Unet only, 2 losses x 2 lrs: four cheap real sessions.
std::vector<TrainConfig> tiny_grid(std::uint64_t seed = 3) {
    return enumerate_matrix(BandSetting::S2, {"Unet"}, {"BCELoss", "DiceLoss"},
                            {0.01, 0.001}, seed, tiny_base());
}

void check_same_records(const MatrixManifest& a, const MatrixManifest& b) {
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        const ModelRecord& x = a.records[i];
        const ModelRecord& y = b.records[i];
        CHECK(x.config == y.config);
        CHECK(x.best_val_f1 == y.best_val_f1);
        CHECK(x.best_epoch == y.best_epoch);
        CHECK(x.epochs_run == y.epochs_run);
        CHECK(x.failed == y.failed);
        REQUIRE(x.history.size() == y.history.size());
        for (std::size_t k = 0; k < x.history.size(); ++k) {
            CHECK(x.history[k].train_loss == y.history[k].train_loss);
            CHECK(x.history[k].val_f1 == y.history[k].val_f1);
        }
    }
}

}  // namespace

TEST_CASE("enumeration is the sorted cartesian product with stable seeds") {
    const std::vector<std::string> archs = arch_names();
    const std::vector<std::string> losses = loss_names();
    const std::vector<double> lrs = {0.01, 0.001};
    TrainConfig base = tiny_base();
    base.depth = 2;  // shallowest depth every family accepts

    std::vector<TrainConfig> grid =
        enumerate_matrix(BandSetting::S1, archs, losses, lrs, 7, base);
    REQUIRE(grid.size() == 90);

    // Lexicographic in (arch, loss, lr), lr ascending.
    CHECK(grid[0].arch == "DeepLabV3");
    CHECK(grid[0].loss.name == "BCELoss");
    CHECK(grid[0].learning_rate == 0.001);
    CHECK(grid[1].learning_rate == 0.01);
    CHECK(grid[2].loss.name == "DiceLoss");
    CHECK(grid[10].arch == "DeepLabV3Plus");
    CHECK(grid[89].arch == "UnetPP");
    CHECK(grid[89].loss.name == "LovaszLoss");
    CHECK(grid[89].learning_rate == 0.01);
    for (const TrainConfig& c : grid) {
        CHECK(c.setting == BandSetting::S1);
        CHECK(c.width == 2);
        CHECK(c.depth == 2);
        CHECK(c.iters_per_epoch == 2);
    }

    SUBCASE("factor order does not matter, the grid is canonical") {
        std::vector<std::string> shuffled_archs(archs.rbegin(), archs.rend());
        std::vector<double> shuffled_lrs = {0.001, 0.01};
        std::vector<TrainConfig> again = enumerate_matrix(BandSetting::S1, shuffled_archs,
                                                          losses, shuffled_lrs, 7, base);
        REQUIRE(again.size() == grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) CHECK(again[i] == grid[i]);
    }

    SUBCASE("seeds depend on every coordinate and the global seed") {
        std::set<std::uint64_t> seeds;
        for (BandSetting s : kAllSettings)
            for (const TrainConfig& c : enumerate_matrix(s, archs, losses, lrs, 7, base))
                seeds.insert(c.seed);
        CHECK(seeds.size() == 360);

        std::vector<TrainConfig> reseeded =
            enumerate_matrix(BandSetting::S1, archs, losses, lrs, 8, base);
        CHECK(reseeded[0].seed != grid[0].seed);
    }

    SUBCASE("single factors give a single config") {
        CHECK(enumerate_matrix(BandSetting::S2, {"Unet"}, {"BCELoss"}, {0.01}, 1, tiny_base())
                  .size() == 1);
    }

    SUBCASE("duplicate and invalid factors are rejected") {
        CHECK(error_message([&] {
                  enumerate_matrix(BandSetting::S1, {"Unet", "Unet"}, losses, lrs, 7, base);
              }) == "duplicate arch factor: Unet");
        CHECK(error_message([&] {
                  enumerate_matrix(BandSetting::S1, archs, losses, {0.01, 0.01}, 7, base);
              }) == "duplicate lr factor: 0.01");
        CHECK(error_message([&] {
                  enumerate_matrix(BandSetting::S1, archs, {}, lrs, 7, base);
              }) == "empty loss factor list");
        CHECK(error_message([&] {
                  enumerate_matrix(BandSetting::S1, {"FooNet"}, losses, lrs, 7, base);
              }).find("unknown arch") != std::string::npos);
        CHECK(error_message([&] {
                  enumerate_matrix(BandSetting::S1, archs, {"FooLoss"}, lrs, 7, base);
              }).find("FooLoss") != std::string::npos);
    }
}

TEST_CASE("progress lines carry the run coordinates") {
    ModelRecord r;
    r.config = tiny_base();
    r.config.arch = "Unet";
    r.config.loss.name = "DiceLoss";
    r.config.learning_rate = 0.001;
    r.config.setting = BandSetting::S1;
    r.best_val_f1 = 0.455;
    CHECK(progress_line(r, 12, 90) ==
          "[12/90] setting=S1 arch=Unet loss=DiceLoss lr=0.001 val_f1=0.455");
}

TEST_CASE("a small matrix runs to a complete ordered manifest") {
    SceneStore store(fixtures().manifest);
    const std::vector<TrainConfig> grid = tiny_grid();
    const std::string root = fixtures().dir.file("runs_seq");

    std::vector<std::string> lines;
    MatrixOptions opts;
    opts.global_seed = 3;
    opts.progress = [&](const ModelRecord& r, int done, int total) {
        lines.push_back(progress_line(r, done, total));
    };
    MatrixManifest m = run_matrix(grid, store, root, opts);

    REQUIRE(m.records.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(m.records[i].config == grid[i]);
        CHECK(!m.records[i].failed);
        CHECK(m.records[i].epochs_run >= 1);
    }
    CHECK(m.version == kToolkitVersion);
    CHECK(m.global_seed == 3);
    CHECK(m.dataset_fingerprint == store.fingerprint());

    REQUIRE(lines.size() == 4);
    CHECK(lines[0].rfind("[1/4] setting=S2 arch=Unet loss=BCELoss lr=0.001 val_f1=", 0) == 0);
    CHECK(lines[3].rfind("[4/4] setting=S2 arch=Unet loss=DiceLoss lr=0.01 val_f1=", 0) == 0);

    // On-disk artifacts: manifest plus one session dir per config.
    CHECK(std::filesystem::exists(manifest_path(root)));
    for (const TrainConfig& c : grid)
        CHECK(std::filesystem::exists(session_dir(root, c) + "/record.json"));

    MatrixManifest loaded = load_matrix_manifest(manifest_path(root));
    check_same_records(m, loaded);
    CHECK(loaded.dataset_fingerprint == m.dataset_fingerprint);

    SUBCASE("resume skips completed work entirely") {
        int steps = 0;
        SessionHooks hooks;
        hooks.on_step = [&](int, int) { ++steps; };
        MatrixOptions again;
        again.global_seed = 3;
        again.resume = true;
        again.hooks = &hooks;
        MatrixManifest m2 = run_matrix(grid, store, root, again);
        CHECK(steps == 0);
        check_same_records(m, m2);
    }

    SUBCASE("without resume the grid reruns from scratch") {
        int steps = 0;
        SessionHooks hooks;
        hooks.on_step = [&](int, int) { ++steps; };
        MatrixOptions fresh;
        fresh.global_seed = 3;
        fresh.hooks = &hooks;
        MatrixManifest m3 = run_matrix(grid, store, root, fresh);
        CHECK(steps == 4 * 2 * 2);  // 4 sessions x 2 epochs x 2 iters
        check_same_records(m, m3);
    }

    SUBCASE("a deleted manifest is rebuilt from session records") {
        std::filesystem::remove(manifest_path(root));
        int steps = 0;
        SessionHooks hooks;
        hooks.on_step = [&](int, int) { ++steps; };
        MatrixOptions adopt;
        adopt.global_seed = 3;
        adopt.resume = true;
        adopt.hooks = &hooks;
        MatrixManifest m4 = run_matrix(grid, store, root, adopt);
        CHECK(steps == 0);
        check_same_records(m, m4);
    }
}

TEST_CASE("job count changes nothing but wall time") {
    SceneStore store(fixtures().manifest);
    const std::vector<TrainConfig> grid = tiny_grid();

    MatrixOptions one;
    one.global_seed = 3;
    MatrixManifest m1 = run_matrix(grid, store, fixtures().dir.file("runs_j1"), one);

    MatrixOptions two;
    two.global_seed = 3;
    two.jobs = 2;
    MatrixManifest m2 = run_matrix(grid, store, fixtures().dir.file("runs_j2"), two);

    check_same_records(m1, m2);
}

TEST_CASE("an interrupted run resumes to the same manifest") {
    SceneStore store(fixtures().manifest);
    const std::vector<TrainConfig> grid = tiny_grid();
    const std::string root = fixtures().dir.file("runs_interrupt");
    const std::string ref_root = fixtures().dir.file("runs_reference");

    MatrixOptions ref;
    ref.global_seed = 3;
    MatrixManifest expected = run_matrix(grid, store, ref_root, ref);

    MatrixOptions interrupted;
    interrupted.global_seed = 3;
    interrupted.progress = [](const ModelRecord&, int done, int) {
        if (done == 2) fail("simulated interrupt");
    };
    CHECK(error_message([&] { run_matrix(grid, store, root, interrupted); }) ==
          "simulated interrupt");

    MatrixManifest partial = load_matrix_manifest(manifest_path(root));
    CHECK(partial.records.size() == 2);

    MatrixOptions resume;
    resume.global_seed = 3;
    resume.resume = true;
    MatrixManifest converged = run_matrix(grid, store, root, resume);
    check_same_records(expected, converged);
    check_same_records(expected, load_matrix_manifest(manifest_path(root)));
}

TEST_CASE("resume refuses a store with a different fingerprint") {
    SceneStore store(fixtures().manifest);
    const std::vector<TrainConfig> grid = tiny_grid();
    const std::string root = fixtures().dir.file("runs_fp");

    MatrixOptions opts;
    opts.global_seed = 3;
    run_matrix(grid, store, root, opts);

    SynthSpec spec;
    spec.width = 32;
    spec.height = 32;
    spec.min_blobs = 1;
    spec.max_blobs = 1;
    spec.min_radius = 2.0f;
    spec.max_radius = 3.5f;
    const std::string other_manifest =
        make_synthetic_dataset(fixtures().dir.file("data_other"), 6, 5, spec);
    SceneStore other(other_manifest);
    REQUIRE(other.fingerprint() != store.fingerprint());

    MatrixOptions resume;
    resume.global_seed = 3;
    resume.resume = true;
    CHECK(error_message([&] { run_matrix(grid, other, root, resume); })
              .find("dataset fingerprint mismatch") != std::string::npos);
}

TEST_CASE("failed sessions stay in the manifest") {
    SceneStore store(fixtures().manifest);
    std::vector<TrainConfig> grid = enumerate_matrix(BandSetting::S2, {"Unet"}, {"BCELoss"},
                                                     {0.01, 0.001}, 9, tiny_base());
    SessionHooks hooks;
    hooks.loss_override = [](int, int, double) {
        return std::numeric_limits<double>::quiet_NaN();
    };
    MatrixOptions opts;
    opts.global_seed = 9;
    opts.hooks = &hooks;
    MatrixManifest m = run_matrix(grid, store, fixtures().dir.file("runs_failed"), opts);

    REQUIRE(m.records.size() == 2);
    for (const ModelRecord& r : m.records) {
        CHECK(r.failed);
        CHECK(r.best_val_f1 == -1.0);
    }
}

TEST_CASE("duplicate configs in one run are rejected") {
    SceneStore store(fixtures().manifest);
    std::vector<TrainConfig> grid = tiny_grid();
    grid.push_back(grid.front());
    CHECK(error_message([&] {
              run_matrix(grid, store, fixtures().dir.file("runs_dup"), {});
          }).find("duplicate session config") != std::string::npos);
}
