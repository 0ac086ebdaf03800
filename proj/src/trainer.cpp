#include "lsens/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "lsens/common.hpp"
#include "lsens/metrics.hpp"
#include "lsens/nn/graph.hpp"
#include "lsens/nn/layers.hpp"
#include "lsens/rng.hpp"
#include "lsens/sampler.hpp"
#include "record_io.hpp"

namespace lsens {

namespace fs = std::filesystem;
using nlohmann::json;

bool operator==(const LossConfig& a, const LossConfig& b) {
    return a.name == b.name && a.smooth_eps == b.smooth_eps &&
           a.focal_gamma == b.focal_gamma && a.focal_alpha == b.focal_alpha;
}

bool operator==(const TrainConfig& a, const TrainConfig& b) {
    return a.arch == b.arch && a.loss == b.loss && a.learning_rate == b.learning_rate &&
           a.setting == b.setting && a.seed == b.seed && a.width == b.width &&
           a.depth == b.depth && a.patch_size == b.patch_size &&
           a.iters_per_epoch == b.iters_per_epoch && a.batch_size == b.batch_size &&
           a.patience_epochs == b.patience_epochs && a.max_epochs == b.max_epochs &&
           a.val_threshold == b.val_threshold;
}

std::string lr_label(double lr) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", lr);
    return buf;
}

std::string session_dir_name(const TrainConfig& config) {
    return config.arch + "_" + config.loss.name + "_" + lr_label(config.learning_rate);
}

std::string session_dir(const std::string& runs_root, const TrainConfig& config) {
    return runs_root + "/" + setting_name(config.setting) + "/" + session_dir_name(config);
}

double pooled_f1(const std::vector<const Scene*>& scenes,
                 const std::function<ProbabilityMap(const Scene&)>& predict,
                 double threshold) {
    require(!scenes.empty(), "empty validation set");
    ConfusionCounts pooled;
    for (const Scene* s : scenes) {
        const ProbabilityMap map = predict(*s);
        const std::size_t n = s->plane_size();
        require(map.values.size() == n,
                "probability map size does not match scene " + s->id);
        std::vector<std::uint8_t> pred(n);
        for (std::size_t i = 0; i < n; ++i)
            pred[i] = double(map.values[i]) >= threshold ? 1 : 0;
        pooled += confusion(pred, s->label, s->valid);
    }
    return scores(pooled).f1;
}

double validate(const Model& model, const std::vector<const Scene*>& scenes,
                BandSetting setting, const NormStats& stats, double threshold,
                int tile) {
    return pooled_f1(
        scenes,
        [&](const Scene& s) { return predict_scene(model, s, setting, stats, tile, tile); },
        threshold);
}

namespace detail {

json config_to_json(const TrainConfig& c) {
    return json{{"arch", c.arch},
                {"loss",
                 {{"name", c.loss.name},
                  {"smooth_eps", c.loss.smooth_eps},
                  {"focal_gamma", c.loss.focal_gamma},
                  {"focal_alpha", c.loss.focal_alpha}}},
                {"learning_rate", c.learning_rate},
                {"setting", setting_name(c.setting)},
                {"seed", c.seed},
                {"width", c.width},
                {"depth", c.depth},
                {"patch_size", c.patch_size},
                {"iters_per_epoch", c.iters_per_epoch},
                {"batch_size", c.batch_size},
                {"patience_epochs", c.patience_epochs},
                {"max_epochs", c.max_epochs},
                {"val_threshold", c.val_threshold}};
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.arch = j.at("arch").get<std::string>();
    const json& l = j.at("loss");
    c.loss.name = l.at("name").get<std::string>();
    c.loss.smooth_eps = l.at("smooth_eps").get<double>();
    c.loss.focal_gamma = l.at("focal_gamma").get<double>();
    c.loss.focal_alpha = l.at("focal_alpha").get<double>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.setting = parse_setting(j.at("setting").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.width = j.at("width").get<int>();
    c.depth = j.at("depth").get<int>();
    c.patch_size = j.at("patch_size").get<int>();
    c.iters_per_epoch = j.at("iters_per_epoch").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.patience_epochs = j.at("patience_epochs").get<int>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.val_threshold = j.at("val_threshold").get<double>();
    return c;
}

json record_to_json(const ModelRecord& r) {
    json j;
    j["format_version"] = 1;
    j["config"] = config_to_json(r.config);
    j["weights"] =
        r.weights_path.empty() ? "" : fs::path(r.weights_path).filename().string();
    j["best_val_f1"] = r.best_val_f1;
    j["best_epoch"] = r.best_epoch;
    j["epochs_run"] = r.epochs_run;
    j["failed"] = r.failed;
    j["hit_max_epochs"] = r.hit_max_epochs;
    json hist = json::array();
    for (const EpochStats& e : r.history)
        hist.push_back({{"train_loss", e.train_loss}, {"val_f1", e.val_f1}});
    j["history"] = hist;
    return j;
}

ModelRecord record_from_json(const json& j, const std::string& dir,
                             const std::string& origin) {
    ModelRecord r;
    try {
        require(j.at("format_version").get<int>() == 1,
                "unsupported record format_version in " + origin);
        r.config = config_from_json(j.at("config"));
        const std::string w = j.at("weights").get<std::string>();
        r.weights_path = w.empty() ? "" : (fs::path(dir) / w).string();
        r.best_val_f1 = j.at("best_val_f1").get<double>();
        r.best_epoch = j.at("best_epoch").get<int>();
        r.epochs_run = j.at("epochs_run").get<int>();
        r.failed = j.at("failed").get<bool>();
        r.hit_max_epochs = j.at("hit_max_epochs").get<bool>();
        for (const json& e : j.at("history"))
            r.history.push_back(
                {e.at("train_loss").get<double>(), e.at("val_f1").get<double>()});
    } catch (const json::exception& e) {
        fail("malformed record " + origin + ": " + e.what());
    }
    require(int(r.history.size()) == r.epochs_run,
            "record " + origin + " history length does not match epochs_run");
    return r;
}

}  // namespace detail

namespace {

void check_config(const TrainConfig& c) {
    require(c.learning_rate > 0.0, "learning rate must be positive");
    require(c.iters_per_epoch >= 1, "iters_per_epoch must be at least 1");
    require(c.batch_size >= 1, "batch_size must be at least 1");
    require(c.patience_epochs >= 1, "patience_epochs must be at least 1");
    require(c.max_epochs >= 1, "max_epochs must be at least 1");
    require(c.val_threshold > 0.0 && c.val_threshold < 1.0,
            "val_threshold must lie strictly between 0 and 1");
    const int unit = 1 << c.depth;
    require(c.patch_size >= unit && c.patch_size % unit == 0,
            "patch size " + std::to_string(c.patch_size) + " not divisible by 2^depth = " +
                std::to_string(unit));
}

}  // namespace

void save_record(const ModelRecord& record, const std::string& dir) {
    fs::create_directories(dir);
    write_text_atomic(dir + "/record.json", detail::record_to_json(record).dump(2) + "\n");

    std::ostringstream csv;
    csv << "epoch,train_loss,val_f1\n";
    for (std::size_t i = 0; i < record.history.size(); ++i) {
        char line[96];
        std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", i + 1,
                      record.history[i].train_loss, record.history[i].val_f1);
        csv << line;
    }
    write_text_atomic(dir + "/history.csv", csv.str());
}

ModelRecord load_record(const std::string& dir) {
    const std::string path = dir + "/record.json";
    std::ifstream in(path);
    require(bool(in), "cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("malformed record " + path + ": " + e.what());
    }
    return detail::record_from_json(j, dir, path);
}

ModelRecord train_session(const TrainConfig& config, SceneStore& store,
                          const std::string& runs_root, const SessionHooks* hooks) {
    check_config(config);
    const std::string dir = session_dir(runs_root, config);
    fs::create_directories(dir);

    std::vector<const Scene*> train = store.scenes(store.split().train);
    std::vector<const Scene*> val = store.scenes(store.split().val);
    require(!train.empty(), "empty training set");
    require(!val.empty(), "empty validation set");

    const NormStats stats = fit_norm_stats(train);
    const ArchSpec spec{config.arch, setting_channels(config.setting), config.width,
                        config.depth};
    Model model(spec, config.seed);
    if (hooks && hooks->on_model) hooks->on_model(model);

    BatchStream stream(train, config.setting, config.patch_size, config.batch_size,
                       derive_seed(config.seed, "batches"));
    const std::unique_ptr<Loss> loss = make_loss(config.loss);
    nn::Adam opt(model.params(), config.learning_rate);

    ModelRecord record;
    record.config = config;
    const std::string weights = dir + "/weights.bin";
    double best = -std::numeric_limits<double>::infinity();

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        double loss_sum = 0.0;
        for (int iter = 1; iter <= config.iters_per_epoch; ++iter) {
            Batch batch = stream.next();
            apply_norm(batch.stack, batch.valid, config.setting, stats);
            nn::Graph g;
            const int out = model.forward(g, g.leaf(std::move(batch.stack)));
            nn::Tensor dlogits;
            double l = loss->value_grad(g.val(out), batch.label, batch.valid, &dlogits);
            if (hooks && hooks->loss_override) l = hooks->loss_override(epoch, iter, l);
            if (!std::isfinite(l)) {
                record.failed = true;
                record.best_val_f1 = -1.0;
                record.best_epoch = 0;
                record.weights_path.clear();
                record.epochs_run = int(record.history.size());
                save_record(record, dir);
                return record;
            }
            model.params().zero_grads();
            g.backward(out, dlogits);
            opt.step();
            if (hooks && hooks->on_step) hooks->on_step(epoch, iter);
            loss_sum += l;
        }

        const double train_loss = loss_sum / config.iters_per_epoch;
        const double val_f1 =
            hooks && hooks->val_override
                ? hooks->val_override(epoch)
                : validate(model, val, config.setting, stats, config.val_threshold,
                           config.patch_size);
        require(std::isfinite(val_f1), "non-finite validation score");
        record.history.push_back({train_loss, val_f1});

        if (val_f1 > best) {  // ties do not reset patience
            best = val_f1;
            record.best_epoch = epoch;
            save_weights(model, weights);
            record.weights_path = weights;
        } else if (epoch - record.best_epoch >= config.patience_epochs) {
            break;
        }
    }

    record.best_val_f1 = best;
    record.epochs_run = int(record.history.size());
    record.hit_max_epochs = record.epochs_run == config.max_epochs &&
                            record.epochs_run - record.best_epoch < config.patience_epochs;
    save_record(record, dir);
    return record;
}

}  // namespace lsens
