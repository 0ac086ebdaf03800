#include "lsens/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <set>
#include <sstream>

#include "lsens/common.hpp"
#include "lsens/dataset.hpp"
#include "lsens/ensemble.hpp"
#include "lsens/matrix.hpp"
#include "lsens/metrics.hpp"
#include "lsens/render.hpp"
#include "lsens/rng.hpp"
#include "lsens/synth.hpp"
#include "lsens/trainer.hpp"

using nlohmann::json;

namespace lsens {

namespace {

std::string fmt(const char* f, ...) {
    char buf[256];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

const std::string& need_manifest(const CliConfig& cfg) {
    require(!cfg.manifest_path.empty(), "a dataset manifest is required (--manifest)");
    return cfg.manifest_path;
}

const std::string& need_runs(const CliConfig& cfg) {
    require(!cfg.runs_root.empty(), "a runs directory is required (--runs or LSENS_RUNS)");
    return cfg.runs_root;
}

NormStats train_stats(SceneStore& store) {
    return fit_norm_stats(store.scenes(store.split().train));
}

std::string slurp_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), "cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Knobs shared by train and matrix run; defaults stay untouched unless the
// flag is present.
struct TrainKnobs {
    void attach(CLI::App* cmd) {
        cmd->add_option("--width", width, "channel multiplier of the first stage");
        cmd->add_option("--depth", depth, "encoder downsampling stages");
        cmd->add_option("--patch", patch, "training crop edge, pixels");
        cmd->add_option("--iters", iters, "optimizer steps per epoch");
        cmd->add_option("--batch", batch, "patches per step");
        cmd->add_option("--patience", patience, "epochs without improvement before stopping");
        cmd->add_option("--max-epochs", max_epochs, "hard epoch cap");
        cmd->add_option("--val-threshold", threshold, "probability cut for validation F1");
    }

    TrainConfig apply(TrainConfig base) const {
        if (width) base.width = *width;
        if (depth) base.depth = *depth;
        if (patch) base.patch_size = *patch;
        if (iters) base.iters_per_epoch = *iters;
        if (batch) base.batch_size = *batch;
        if (patience) base.patience_epochs = *patience;
        if (max_epochs) base.max_epochs = *max_epochs;
        if (threshold) base.val_threshold = *threshold;
        return base;
    }

    std::optional<int> width, depth, patch, iters, batch, patience, max_epochs;
    std::optional<double> threshold;
};

BandSetting setting_arg(const std::string& s) { return parse_setting(s); }

ArchSpec record_arch(const ModelRecord& r) {
    return ArchSpec{r.config.arch, setting_channels(r.config.setting), r.config.width,
                    r.config.depth};
}

SkillScores test_scores(const ModelRecord& rec, SceneStore& store, const NormStats& stats) {
    const Model model = load_weights(record_arch(rec), rec.weights_path);
    ConfusionCounts pooled;
    for (const Scene* s : store.scenes(store.split().test)) {
        ProbabilityMap map = predict_scene(model, *s, rec.config.setting, stats,
                                           rec.config.patch_size, rec.config.patch_size);
        pooled += confusion(binarize(map, rec.config.val_threshold), s->label, s->valid);
    }
    return scores(pooled);
}

void check_raster_matches(const ProbabilityMap& map, const Scene& scene) {
    require(map.scene_id == scene.id,
            "prediction raster covers scene '" + map.scene_id + "', not '" + scene.id + "'");
    require(map.width == scene.width && map.height == scene.height,
            fmt("prediction raster shape %dx%d does not match scene %dx%d", map.width,
                map.height, scene.width, scene.height));
}

json eval_json(const ProbabilityMap& map, const Scene& scene, double threshold) {
    check_raster_matches(map, scene);
    const ConfusionCounts c = confusion(binarize(map, threshold), scene.label, scene.valid);
    const SkillScores s = scores(c);
    return json{{"tp", c.tp},
                {"fp", c.fp},
                {"fn", c.fn},
                {"tn", c.tn},
                {"precision", s.precision},
                {"recall", s.recall},
                {"f1", s.f1},
                {"frequency_bias", s.frequency_bias}};
}

void register_dataset(CLI::App& app, CliConfig& cfg, std::ostream& out) {
    CLI::App* dataset = app.add_subcommand("dataset", "create or check scene collections");
    dataset->require_subcommand(1);
    dataset->fallthrough();

    struct SynthArgs {
        std::string out_dir;
        int scenes = 21;
        std::string size = "256x256";
        std::string blobs;
        std::string radius;
    };
    auto synth = std::make_shared<SynthArgs>();
    CLI::App* cmd = dataset->add_subcommand("synth", "generate a synthetic dataset");
    cmd->fallthrough();
    cmd->add_option("--out", synth->out_dir, "output directory")->required();
    cmd->add_option("--scenes", synth->scenes, "scene count (split 16/4/1 at 21)");
    cmd->add_option("--size", synth->size, "scene shape, HxW");
    cmd->add_option("--blobs", synth->blobs, "slide regions per scene, MIN:MAX");
    cmd->add_option("--radius", synth->radius, "slide semi-axis range in pixels, MIN:MAX");
    cmd->callback([&, synth] {
        int h = 0, w = 0;
        char junk = 0;
        require(std::sscanf(synth->size.c_str(), "%dx%d%c", &h, &w, &junk) == 2 && h > 0 &&
                    w > 0,
                "size must look like 256x256");
        if (cfg.paper_faithful)
            require(synth->scenes == 21, "paper-faithful datasets have 21 scenes");
        SynthSpec spec;
        spec.height = h;
        spec.width = w;
        if (!synth->blobs.empty())
            require(std::sscanf(synth->blobs.c_str(), "%d:%d%c", &spec.min_blobs,
                                &spec.max_blobs, &junk) == 2,
                    "blobs must look like 1:4");
        if (!synth->radius.empty())
            require(std::sscanf(synth->radius.c_str(), "%f:%f%c", &spec.min_radius,
                                &spec.max_radius, &junk) == 2,
                    "radius must look like 4:10");
        const std::string mpath =
            make_synthetic_dataset(synth->out_dir, synth->scenes, cfg.global_seed, spec);
        out << "wrote " << synth->scenes << " scenes; manifest " << mpath << "\n";
    });

    auto validate_path = std::make_shared<std::string>();
    CLI::App* val = dataset->add_subcommand("validate", "check every scene and the split");
    val->fallthrough();
    val->add_option("manifest", *validate_path, "dataset manifest path")->required();
    val->callback([&, validate_path] {
        SceneStore store(*validate_path);
        validate_dataset(store.manifest(), cfg.paper_faithful);
        for (const std::string& id : store.ids()) store.scene(id);
        const DatasetSplit& sp = store.split();
        out << "ok: " << store.ids().size() << " scenes, split " << sp.train.size() << "/"
            << sp.val.size() << "/" << sp.test.size() << "\n";
    });
}

void register_train(CLI::App& app, CliConfig& cfg, std::ostream& out) {
    struct TrainArgs {
        std::string setting;
        std::string arch = "Unet";
        std::string loss = "BCELoss";
        double lr = 0.001;
        TrainKnobs knobs;
    };
    auto a = std::make_shared<TrainArgs>();
    CLI::App* cmd = app.add_subcommand("train", "run one training session");
    cmd->fallthrough();
    cmd->add_option("--setting", a->setting, "band subset: S1, S2, S1S2 or ALL")->required();
    cmd->add_option("--arch", a->arch, "architecture name");
    cmd->add_option("--loss", a->loss, "loss name");
    cmd->add_option("--lr", a->lr, "learning rate");
    a->knobs.attach(cmd);
    cmd->callback([&, a] {
        SceneStore store(need_manifest(cfg));
        TrainConfig c = a->knobs.apply(TrainConfig{});
        c.setting = setting_arg(a->setting);
        c.arch = a->arch;
        c.loss = LossConfig{a->loss};
        c.learning_rate = a->lr;
        c.seed = derive_seed(cfg.global_seed, setting_name(c.setting) + "/" + c.arch + "/" +
                                                  c.loss.name + "/" + lr_label(c.learning_rate));
        const ModelRecord rec = train_session(c, store, need_runs(cfg));
        if (rec.failed)
            out << "failed after " << rec.epochs_run << " epochs: "
                << session_dir(cfg.runs_root, c) << "\n";
        else
            out << fmt("val_f1=%.3f best_epoch=%d epochs=%d ", rec.best_val_f1, rec.best_epoch,
                       rec.epochs_run)
                << session_dir(cfg.runs_root, c) << "\n";
    });
}

void register_matrix(CLI::App& app, CliConfig& cfg, std::ostream& out) {
    struct MatrixArgs {
        std::vector<std::string> settings;
        std::vector<std::string> archs;
        std::vector<std::string> losses;
        std::vector<double> lrs;
        bool resume = false;
        TrainKnobs knobs;
    };
    auto a = std::make_shared<MatrixArgs>();
    CLI::App* matrix = app.add_subcommand("matrix", "factor-grid execution");
    matrix->require_subcommand(1);
    matrix->fallthrough();
    CLI::App* cmd = matrix->add_subcommand("run", "train every factor combination");
    cmd->fallthrough();
    cmd->add_option("--settings", a->settings, "band subsets to run")->delimiter(',');
    CLI::Option* oa = cmd->add_option("--archs", a->archs, "architecture subset")->delimiter(',');
    CLI::Option* ol = cmd->add_option("--losses", a->losses, "loss subset")->delimiter(',');
    CLI::Option* orr = cmd->add_option("--lrs", a->lrs, "learning rates")->delimiter(',');
    cmd->add_flag("--resume", a->resume, "keep completed sessions from the manifest");
    a->knobs.attach(cmd);
    cmd->callback([&, a, oa, ol, orr] {
        if (cfg.paper_faithful)
            require(oa->count() == 0 && ol->count() == 0 && orr->count() == 0,
                    "factor lists are fixed in paper-faithful mode");
        if (a->settings.empty())
            for (BandSetting s : kAllSettings) a->settings.push_back(setting_name(s));
        if (a->archs.empty()) a->archs = arch_names();
        if (a->losses.empty()) a->losses = loss_names();
        if (a->lrs.empty()) a->lrs = {0.01, 0.001};

        SceneStore store(need_manifest(cfg));
        validate_dataset(store.manifest(), cfg.paper_faithful);

        std::set<std::string> seen;
        std::vector<TrainConfig> configs;
        const TrainConfig base = a->knobs.apply(TrainConfig{});
        for (const std::string& s : a->settings) {
            require(seen.insert(s).second, "duplicate setting " + s);
            const std::vector<TrainConfig> block =
                enumerate_matrix(setting_arg(s), a->archs, a->losses, a->lrs, cfg.global_seed,
                                 base);
            configs.insert(configs.end(), block.begin(), block.end());
        }

        MatrixOptions mo;
        mo.jobs = cfg.jobs;
        mo.resume = a->resume;
        mo.global_seed = cfg.global_seed;
        mo.progress = [&out](const ModelRecord& rec, int done, int total) {
            out << progress_line(rec, done, total) << "\n";
        };
        const MatrixManifest man = run_matrix(configs, store, need_runs(cfg), mo);
        out << man.records.size() << " sessions complete; manifest "
            << manifest_path(cfg.runs_root) << "\n";
    });
}

void register_rank(CLI::App& app, CliConfig& cfg, std::ostream& out) {
    struct RankArgs {
        std::string setting;
        int top = 0;  // 0 = all
    };
    auto a = std::make_shared<RankArgs>();
    CLI::App* cmd = app.add_subcommand("rank", "leaderboard with test-scene scores");
    cmd->fallthrough();
    cmd->add_option("--setting", a->setting, "band subset")->required();
    cmd->add_option("--top", a->top, "row limit, 0 for all");
    cmd->callback([&, a] {
        require(a->top >= 0, "--top must be non-negative");
        const MatrixManifest man = load_matrix_manifest(manifest_path(need_runs(cfg)));
        std::vector<ModelRecord> ranked = rank_models(man, setting_arg(a->setting));
        if (a->top > 0 && int(ranked.size()) > a->top) ranked.resize(std::size_t(a->top));

        SceneStore store(need_manifest(cfg));
        const NormStats stats = train_stats(store);
        out << "val_f1  loss          lr      arch            test_p  test_r  test_f1\n";
        for (const ModelRecord& rec : ranked) {
            const SkillScores t = test_scores(rec, store, stats);
            out << fmt("%-7.3f %-13s %-7s %-15s %-7.3f %-7.3f %-7.3f\n", rec.best_val_f1,
                       rec.config.loss.name.c_str(), lr_label(rec.config.learning_rate).c_str(),
                       rec.config.arch.c_str(), t.precision, t.recall, t.f1);
        }
    });
}

void register_ensemble(CLI::App& app, CliConfig& cfg, std::ostream& out) {
    struct PredictArgs {
        std::string setting;
        int top = 0;
        std::string scene_id;
        std::string out_path;
        double threshold = 0.5;
        int tile = 0;  // 0 = members' training patch size
        bool majority = false;
    };
    auto a = std::make_shared<PredictArgs>();
    CLI::App* ens = app.add_subcommand("ensemble", "combine top-ranked models");
    ens->require_subcommand(1);
    ens->fallthrough();
    CLI::App* cmd = ens->add_subcommand("predict", "write an averaged probability raster");
    cmd->fallthrough();
    cmd->add_option("--setting", a->setting, "band subset")->required();
    cmd->add_option("--top", a->top, "ensemble size k")->required();
    cmd->add_option("--scene", a->scene_id, "scene id")->required();
    cmd->add_option("--out", a->out_path, "output raster path")->required();
    cmd->add_option("--threshold", a->threshold, "binarization cut stored in the spec");
    cmd->add_option("--tile", a->tile, "inference tile, 0 for the training patch size");
    cmd->add_flag("--majority", a->majority, "average binarized maps instead of probabilities");
    cmd->callback([&, a] {
        const MatrixManifest man = load_matrix_manifest(manifest_path(need_runs(cfg)));
        const EnsembleSpec spec =
            make_ensemble(man, setting_arg(a->setting), a->top, a->threshold);
        SceneStore store(need_manifest(cfg));
        const Scene& scene = store.scene(a->scene_id);
        const int tile = a->tile > 0 ? a->tile : spec.member_configs.front().patch_size;
        const ProbabilityMap map =
            ensemble_predict(spec, scene, train_stats(store), man, tile, a->majority);
        save_probability_map(map, a->out_path);
        out << "wrote " << a->out_path << " (k=" << a->top
            << ", setting=" << setting_name(spec.setting) << ")\n";
    });
}

void register_eval(CLI::App& app, CliConfig& cfg, std::ostream& out) {
    struct EvalArgs {
        std::string pred;
        std::string scene_id;
        double threshold = 0.5;
        std::string json_path;
    };
    auto a = std::make_shared<EvalArgs>();
    CLI::App* cmd = app.add_subcommand("eval", "score a probability raster against its scene");
    cmd->fallthrough();
    cmd->add_option("--pred", a->pred, "probability raster path")->required();
    cmd->add_option("--scene", a->scene_id, "scene id")->required();
    cmd->add_option("--threshold", a->threshold, "binarization cut");
    cmd->add_option("--json", a->json_path, "also write the scores to this file");
    cmd->callback([&, a] {
        SceneStore store(need_manifest(cfg));
        const json j =
            eval_json(load_probability_map(a->pred), store.scene(a->scene_id), a->threshold);
        out << j.dump(2) << "\n";
        if (!a->json_path.empty()) write_text_atomic(a->json_path, j.dump(2));
    });
}

void register_report(CLI::App& app, CliConfig& cfg, std::ostream& out) {
    struct ReportArgs {
        std::vector<std::string> settings;
        std::vector<int> sizes = {10, 20, 40};
        std::string scores_path;
    };
    auto a = std::make_shared<ReportArgs>();
    CLI::App* report = app.add_subcommand("report", "summarize evaluated scores");
    report->require_subcommand(1);
    report->fallthrough();
    CLI::App* cmd = report->add_subcommand(
        "improvements", "single best vs ensembles, with percent gains");
    cmd->fallthrough();
    cmd->add_option("--settings", a->settings, "band subsets to report")
        ->delimiter(',')
        ->required();
    cmd->add_option("--sizes", a->sizes, "ensemble sizes")->delimiter(',');
    cmd->add_option("--scores", a->scores_path,
                    "scores manifest JSON, defaults to <runs>/scores.json");
    cmd->callback([&, a] {
        if (a->scores_path.empty()) a->scores_path = need_runs(cfg) + "/scores.json";
        const json doc = json::parse(slurp_file(a->scores_path), nullptr, false);
        require(!doc.is_discarded(), "malformed scores manifest " + a->scores_path);
        for (const std::string& name : a->settings) {
            (void)parse_setting(name);
            require(doc.contains(name), "scores file has no entry for setting " + name);
            const json& entry = doc.at(name);
            require(entry.contains("single"),
                    "no single-model score for setting " + name);
            const double single = entry.at("single").get<double>();
            out << fmt("%-5s single %.2f", name.c_str(), single);
            for (int k : a->sizes) {
                const std::string key = std::to_string(k);
                require(entry.contains("ens") && entry.at("ens").contains(key),
                        "no ens(" + key + ") score for setting " + name);
                const double ens = entry.at("ens").at(key).get<double>();
                out << fmt("  ens(%d) %.2f (%+ld%%)", k, ens,
                           std::lround(improvement(single, ens)));
            }
            out << "\n";
        }
    });
}

void register_sweep(CLI::App& app, CliConfig& cfg, std::ostream& out) {
    struct SweepArgs {
        std::string setting;
        int kmax = 0;
        std::string out_csv;
        int step = 1;
        int tile = 0;
    };
    auto a = std::make_shared<SweepArgs>();
    CLI::App* cmd = app.add_subcommand("sweep", "test F1 as the ensemble grows");
    cmd->fallthrough();
    cmd->add_option("--setting", a->setting, "band subset")->required();
    cmd->add_option("--kmax", a->kmax, "largest ensemble size")->required();
    cmd->add_option("--out", a->out_csv, "output CSV path")->required();
    cmd->add_option("--step", a->step, "k increment");
    cmd->add_option("--tile", a->tile, "inference tile, 0 for the training patch size");
    cmd->callback([&, a] {
        require(a->kmax >= 1, "--kmax must be at least 1");
        require(a->step >= 1, "--step must be at least 1");
        const MatrixManifest man = load_matrix_manifest(manifest_path(need_runs(cfg)));
        const BandSetting setting = setting_arg(a->setting);
        SceneStore store(need_manifest(cfg));
        require(store.split().test.size() == 1,
                "sweep expects exactly one test scene, found " +
                    std::to_string(store.split().test.size()));
        const Scene& scene = store.scene(store.split().test.front());
        std::vector<int> ks;
        for (int k = 1; k <= a->kmax; k += a->step) ks.push_back(k);
        const int tile =
            a->tile > 0 ? a->tile : rank_models(man, setting).front().config.patch_size;
        const auto curve = size_sweep(man, setting, scene, train_stats(store), ks, tile);
        std::string csv = "k,test_f1\n";
        for (const auto& [k, f1] : curve) csv += fmt("%d,%.6f\n", k, f1);
        write_text_atomic(a->out_csv, csv);
        out << "wrote " << a->out_csv << " (" << curve.size() << " sizes)\n";
    });
}

void register_render(CLI::App& app, CliConfig& cfg, std::ostream& out) {
    CLI::App* render = app.add_subcommand("render", "figures from predictions and scores");
    render->require_subcommand(1);
    render->fallthrough();

    struct DiffArgs {
        std::string scene_id;
        std::string single_path;
        std::string ensemble_path;
        std::string out_path;
        double threshold = 0.5;
    };
    auto d = std::make_shared<DiffArgs>();
    CLI::App* diff = render->add_subcommand("diff", "eight-color agreement raster");
    diff->fallthrough();
    diff->add_option("--scene", d->scene_id, "scene id")->required();
    diff->add_option("--single", d->single_path, "single-model probability raster")->required();
    diff->add_option("--ensemble", d->ensemble_path, "ensemble probability raster")->required();
    diff->add_option("--out", d->out_path, "output PNG path")->required();
    diff->add_option("--threshold", d->threshold, "binarization cut");
    diff->callback([&, d] {
        SceneStore store(need_manifest(cfg));
        const Scene& scene = store.scene(d->scene_id);
        const ProbabilityMap sm = load_probability_map(d->single_path);
        const ProbabilityMap em = load_probability_map(d->ensemble_path);
        check_raster_matches(sm, scene);
        check_raster_matches(em, scene);
        const RgbImage img =
            diff_map(scene.label, binarize(sm, d->threshold), binarize(em, d->threshold),
                     scene.valid, scene.width, scene.height);
        save_diff_map(img, d->out_path);
        out << "wrote " << d->out_path << " and legend " << d->out_path << ".json\n";
    });

    struct DiagramArgs {
        std::vector<std::string> inputs;
        std::string out_path;
    };
    auto g = std::make_shared<DiagramArgs>();
    CLI::App* diagram = render->add_subcommand("diagram", "precision/recall skill diagram");
    diagram->fallthrough();
    diagram->add_option("--in", g->inputs,
                        "eval JSON as NAME=PATH (or bare PATH, named by file stem)");
    diagram->add_option("--out", g->out_path, "output SVG path")->required();
    diagram->callback([&, g] {
        std::vector<std::pair<std::string, SkillScores>> points;
        for (const std::string& raw : g->inputs) {
            const std::size_t eq = raw.find('=');
            const std::string path = eq == std::string::npos ? raw : raw.substr(eq + 1);
            const std::string name = eq == std::string::npos
                                         ? std::filesystem::path(path).stem().string()
                                         : raw.substr(0, eq);
            const json j = json::parse(slurp_file(path), nullptr, false);
            require(!j.is_discarded() && j.contains("precision") && j.contains("recall"),
                    "not an eval scores file: " + path);
            SkillScores s;
            s.precision = j.at("precision").get<double>();
            s.recall = j.at("recall").get<double>();
            s.f1 = j.value("f1", 0.0);
            s.frequency_bias = j.value("frequency_bias", 0.0);
            points.emplace_back(name, s);
        }
        render_diagram(diagram_data(points), g->out_path);
        out << "wrote " << g->out_path << " (" << points.size() << " markers)\n";
    });
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"landslide segmentation workbench"};
    app.fallthrough();
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolkitVersion);

    CliConfig cfg;
    app.add_option("--manifest", cfg.manifest_path, "dataset manifest path");
    app.add_option("--runs", cfg.runs_root, "runs directory")->envname("LSENS_RUNS");
    app.add_option("--seed", cfg.global_seed, "global seed; per-session seeds derive from it");
    app.add_option("--jobs", cfg.jobs, "parallel sessions for matrix run")
        ->check(CLI::PositiveNumber);
    app.add_flag("--paper-faithful", cfg.paper_faithful,
                 "fixed factor grid and strict 16/4/1 split");

    register_dataset(app, cfg, out);
    register_train(app, cfg, out);
    register_matrix(app, cfg, out);
    register_rank(app, cfg, out);
    register_ensemble(app, cfg, out);
    register_eval(app, cfg, out);
    register_report(app, cfg, out);
    register_sweep(app, cfg, out);
    register_render(app, cfg, out);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? 0 : 2;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

int cli_main(const std::vector<std::string>& args) {
    return cli_main(args, std::cout, std::cerr);
}

}  // namespace lsens
