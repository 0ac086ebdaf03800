#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "benchmark_refs.hpp"
#include "lsens/cli.hpp"
#include "test_util.hpp"

using namespace lsens;
using nlohmann::json;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

CliResult run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli_main(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// One tiny dataset and a trained 4-session matrix shared by every case.
struct CliWorld {
    TempDir dir;
    std::string manifest;
    std::string runs;
    std::string test_id;

    CliWorld() {
        const CliResult synth =
            run({"--seed", "4", "dataset", "synth", "--out", dir.file("ds"), "--scenes", "6",
                 "--size", "32x32", "--blobs", "1:1", "--radius", "2:3.5"});
        REQUIRE(synth.code == 0);
        manifest = dir.file("ds") + "/dataset.json";
        runs = dir.file("runs");

        const CliResult matrix = run(
            {"--manifest", manifest, "--runs", runs, "--seed", "3", "matrix", "run",
             "--settings", "S2", "--archs", "Unet", "--losses", "BCELoss,DiceLoss", "--lrs",
             "0.01,0.001", "--width", "2", "--depth", "1", "--patch", "16", "--iters", "2",
             "--batch", "1", "--patience", "2", "--max-epochs", "2"});
        REQUIRE(matrix.code == 0);
        test_id = json::parse(slurp(manifest)).at("split").at("test").at(0).get<std::string>();
    }
};

CliWorld& world() {
    static CliWorld w;
    return w;
}

int count_occurrences(const std::string& hay, const std::string& needle) {
    int n = 0;
    for (std::size_t p = hay.find(needle); p != std::string::npos;
         p = hay.find(needle, p + needle.size()))
        ++n;
    return n;
}

}  // namespace

TEST_CASE("dataset synth writes a loadable dataset that validates") {
    CliWorld& w = world();
    CHECK(run({"dataset", "validate", w.manifest}).code == 0);

    const CliResult ok = run({"dataset", "validate", w.manifest});
    CHECK(ok.out == "ok: 6 scenes, split 4/1/1\n");

    SUBCASE("missing manifest is rejected as bad input") {
        const CliResult r = run({"dataset", "validate", w.dir.file("nope.json")});
        CHECK(r.code == 2);
        CHECK(r.err.find("cannot open") != std::string::npos);
    }

    SUBCASE("malformed size strings are rejected") {
        const CliResult r =
            run({"dataset", "synth", "--out", w.dir.file("x"), "--size", "banana"});
        CHECK(r.code == 2);
        CHECK(r.err.find("size must look like 256x256") != std::string::npos);
    }
}

TEST_CASE("paper-faithful validation enforces the 16/4/1 split") {
    TempDir dir;
    const CliResult synth =
        run({"--seed", "9", "dataset", "synth", "--out", dir.file("ds20"), "--scenes", "20",
             "--size", "32x32", "--blobs", "1:1", "--radius", "2:3.5"});
    REQUIRE(synth.code == 0);
    const std::string manifest = dir.file("ds20") + "/dataset.json";

    // 20 scenes split proportionally as 15/4/1.
    CHECK(run({"dataset", "validate", manifest}).code == 0);
    const CliResult strict = run({"--paper-faithful", "dataset", "validate", manifest});
    CHECK(strict.code == 2);
    CHECK(strict.err.find("train split must have 16 scenes") != std::string::npos);

    SUBCASE("paper-faithful synth pins the scene count") {
        const CliResult r = run({"--paper-faithful", "dataset", "synth", "--out",
                                 dir.file("bad"), "--scenes", "6"});
        CHECK(r.code == 2);
        CHECK(r.err.find("paper-faithful datasets have 21 scenes") != std::string::npos);
    }
}

TEST_CASE("exit codes separate success, bad input, and runtime failure") {
    CliWorld& w = world();
    CHECK(run({"--help"}).code == 0);
    CHECK(run({"train", "--help"}).code == 0);
    CHECK(run({"--version"}).out == "0.1.0\n");

    CHECK(run({"frobnicate"}).code == 2);                        // unknown command
    CHECK(run({"rank"}).code == 2);                              // missing required option
    CHECK(run({"rank", "--setting", "S9"}).code == 2);           // unknown setting
    CHECK(run({"train", "--setting", "S1"}).code == 2);          // no dataset manifest

    const CliResult no_runs = run({"--manifest", w.manifest, "rank", "--setting", "S2"});
    CHECK(no_runs.code == 2);
    CHECK(no_runs.err.find("a runs directory is required") != std::string::npos);

    const CliResult unwritable = run({"render", "diagram", "--out", "/nonexistent/f.svg"});
    CHECK(unwritable.code == 1);  // output failure, not bad input
    CHECK(unwritable.err.find("cannot write") != std::string::npos);
}

TEST_CASE("matrix run reports progress and is idempotent under resume") {
    CliWorld& w = world();
    const std::string mpath = w.runs + "/manifest.json";
    REQUIRE(std::filesystem::exists(mpath));
    const std::string before = slurp(mpath);

    const CliResult again = run(
        {"--manifest", w.manifest, "--runs", w.runs, "--seed", "3", "matrix", "run",
         "--settings", "S2", "--archs", "Unet", "--losses", "BCELoss,DiceLoss", "--lrs",
         "0.01,0.001", "--width", "2", "--depth", "1", "--patch", "16", "--iters", "2",
         "--batch", "1", "--patience", "2", "--max-epochs", "2", "--resume"});
    CHECK(again.code == 0);
    CHECK(count_occurrences(again.out, "setting=S2") == 4);
    CHECK(again.out.find("[1/4]") != std::string::npos);
    CHECK(again.out.find("4 sessions complete") != std::string::npos);
    CHECK(slurp(mpath) == before);  // resume rewrites identical bytes

    SUBCASE("a single-factor grid trains exactly one session") {
        const CliResult one = run(
            {"--manifest", w.manifest, "--runs", w.dir.file("runs_one"), "matrix", "run",
             "--settings", "S1", "--archs", "Unet", "--losses", "DiceLoss", "--lrs", "0.001",
             "--width", "2", "--depth", "1", "--patch", "16", "--iters", "1", "--batch", "1",
             "--max-epochs", "1"});
        CHECK(one.code == 0);
        CHECK(one.out.find("[1/1]") != std::string::npos);
        const json man = json::parse(slurp(w.dir.file("runs_one") + "/manifest.json"));
        CHECK(man.at("records").size() == 1);
    }

    SUBCASE("paper-faithful mode rejects factor overrides") {
        const CliResult r = run({"--manifest", w.manifest, "--runs", w.runs,
                                 "--paper-faithful", "matrix", "run", "--archs", "Unet"});
        CHECK(r.code == 2);
        CHECK(r.err.find("factor lists are fixed in paper-faithful mode") !=
              std::string::npos);
    }

    SUBCASE("duplicate settings are rejected") {
        const CliResult r = run({"--manifest", w.manifest, "--runs", w.runs, "matrix", "run",
                                 "--settings", "S2,S2"});
        CHECK(r.code == 2);
        CHECK(r.err.find("duplicate setting S2") != std::string::npos);
    }
}

TEST_CASE("rank prints the leaderboard with test-scene scores") {
    CliWorld& w = world();
    const CliResult r =
        run({"--manifest", w.manifest, "--runs", w.runs, "rank", "--setting", "S2", "--top",
             "2"});
    REQUIRE(r.code == 0);

    std::istringstream lines(r.out);
    std::string header;
    std::getline(lines, header);
    CHECK(header.find("val_f1") != std::string::npos);
    CHECK(header.find("test_f1") != std::string::npos);

    double prev = 1.0;
    int rows = 0;
    for (std::string line; std::getline(lines, line);) {
        ++rows;
        const double val_f1 = std::stod(line);
        CHECK(val_f1 <= prev);
        prev = val_f1;
        CHECK(line.find("Unet") != std::string::npos);
    }
    CHECK(rows == 2);
}

TEST_CASE("ensemble predict, eval, sweep, and render chain together") {
    CliWorld& w = world();
    const std::string pred = w.dir.file("ens.bst");
    const std::string single = w.dir.file("single.bst");

    const CliResult p =
        run({"--manifest", w.manifest, "--runs", w.runs, "ensemble", "predict", "--setting",
             "S2", "--top", "3", "--scene", w.test_id, "--out", pred});
    REQUIRE(p.code == 0);
    CHECK(p.out.find("k=3") != std::string::npos);
    CHECK(std::filesystem::exists(pred));
    CHECK(std::filesystem::exists(pred + ".json"));

    REQUIRE(run({"--manifest", w.manifest, "--runs", w.runs, "ensemble", "predict",
                 "--setting", "S2", "--top", "1", "--scene", w.test_id, "--out", single})
                .code == 0);

    SUBCASE("eval emits the full scores schema") {
        const std::string scores_path = w.dir.file("scores_out.json");
        const CliResult e = run({"--manifest", w.manifest, "eval", "--pred", pred, "--scene",
                                 w.test_id, "--json", scores_path});
        REQUIRE(e.code == 0);
        const json j = json::parse(e.out);
        for (const char* key : {"tp", "fp", "fn", "tn", "precision", "recall", "f1",
                                "frequency_bias"})
            CHECK(j.contains(key));
        CHECK(json::parse(slurp(scores_path)) == j);

        const CliResult wrong = run({"--manifest", w.manifest, "eval", "--pred", pred,
                                     "--scene", "synth00"});
        CHECK(wrong.code == 2);
        CHECK(wrong.err.find("covers scene") != std::string::npos);
    }

    SUBCASE("sweep writes an ascending CSV") {
        const std::string csv_path = w.dir.file("sweep.csv");
        const CliResult s = run({"--manifest", w.manifest, "--runs", w.runs, "sweep",
                                 "--setting", "S2", "--kmax", "3", "--out", csv_path});
        REQUIRE(s.code == 0);
        std::istringstream csv(slurp(csv_path));
        std::string line;
        std::getline(csv, line);
        CHECK(line == "k,test_f1");
        int expect_k = 1;
        while (std::getline(csv, line)) {
            CHECK(std::stoi(line) == expect_k);
            ++expect_k;
        }
        CHECK(expect_k == 4);
    }

    SUBCASE("render diff and diagram produce their files") {
        const std::string png = w.dir.file("diff.png");
        const CliResult d =
            run({"--manifest", w.manifest, "render", "diff", "--scene", w.test_id, "--single",
                 single, "--ensemble", pred, "--out", png});
        REQUIRE(d.code == 0);
        CHECK(std::filesystem::exists(png));
        CHECK(std::filesystem::exists(png + ".json"));

        const std::string eval_json = w.dir.file("point.json");
        REQUIRE(run({"--manifest", w.manifest, "eval", "--pred", pred, "--scene", w.test_id,
                     "--json", eval_json})
                    .code == 0);
        const std::string svg = w.dir.file("fig.svg");
        const CliResult g =
            run({"render", "diagram", "--in", "ens=" + eval_json, "--out", svg});
        REQUIRE(g.code == 0);
        const std::string markup = slurp(svg);
        CHECK(markup.find("class=\"pt\"") != std::string::npos);
        CHECK(markup.find(">ens<") != std::string::npos);
    }
}

TEST_CASE("report improvements reproduces the published percentages") {
    TempDir dir;
    json stub;
    for (const refs::ImprovementRow& row : refs::kImprovementRows) {
        stub[row.setting]["single"] = row.single_f1;
        stub[row.setting]["ens"][std::to_string(row.k)] = row.ens_f1;
    }
    const std::string path = dir.file("scores.json");
    std::ofstream(path) << stub.dump(2);

    const CliResult r = run({"report", "improvements", "--settings", "S1,S2,S1S2,ALL",
                             "--scores", path});
    REQUIRE(r.code == 0);

    // Every printed percentage lands within one point of the published one.
    std::istringstream lines(r.out);
    std::string line;
    int checked = 0;
    while (std::getline(lines, line)) {
        const std::string setting = line.substr(0, line.find(' '));
        for (const refs::ImprovementRow& row : refs::kImprovementRows) {
            if (setting != row.setting) continue;
            const std::string key = "ens(" + std::to_string(row.k) + ") ";
            const std::size_t at = line.find(key);
            REQUIRE(at != std::string::npos);
            const std::size_t open = line.find("(+", at + key.size());
            REQUIRE(open != std::string::npos);
            const int pct = std::stoi(line.substr(open + 2));
            CHECK(std::abs(pct - row.printed_pct) <= 1);
            ++checked;
        }
    }
    CHECK(checked == 12);

    SUBCASE("a missing setting entry is bad input") {
        const CliResult bad =
            run({"report", "improvements", "--settings", "S1", "--sizes", "99", "--scores",
                 path});
        CHECK(bad.code == 2);
        CHECK(bad.err.find("no ens(99) score for setting S1") != std::string::npos);
    }
}

TEST_CASE("the runs directory can come from the environment") {
    CliWorld& w = world();
    ::setenv("LSENS_RUNS", w.runs.c_str(), 1);
    const CliResult r =
        run({"--manifest", w.manifest, "rank", "--setting", "S2", "--top", "1"});
    ::unsetenv("LSENS_RUNS");
    CHECK(r.code == 0);
    CHECK(r.out.find("Unet") != std::string::npos);
}
