#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lsens/dataset.hpp"
#include "lsens/losses.hpp"
#include "lsens/models.hpp"

namespace lsens {

// Everything one training session depends on. Two configs with equal fields
// produce bitwise identical sessions on the same dataset.
struct TrainConfig {
    std::string arch = "Unet";
    LossConfig loss{"BCELoss"};
    double learning_rate = 0.001;
    BandSetting setting = BandSetting::ALL;
    std::uint64_t seed = 0;
    int width = 16;
    int depth = 4;
    int patch_size = 256;
    int iters_per_epoch = 1000;
    int batch_size = 4;
    int patience_epochs = 50;
    int max_epochs = 300;
    double val_threshold = 0.5;
};

bool operator==(const LossConfig& a, const LossConfig& b);
bool operator==(const TrainConfig& a, const TrainConfig& b);
inline bool operator!=(const TrainConfig& a, const TrainConfig& b) { return !(a == b); }

// Shortest decimal form, "0.001" not "0.001000".
std::string lr_label(double lr);

// "<arch>_<loss>_<lr>"; unique within one setting's factor grid.
std::string session_dir_name(const TrainConfig& config);

// "<runs_root>/<setting>/<arch>_<loss>_<lr>"
std::string session_dir(const std::string& runs_root, const TrainConfig& config);

struct EpochStats {
    double train_loss = 0.0;
    double val_f1 = 0.0;
};

// Durable outcome of one session. history.size() == epochs_run always; a
// failed session keeps the epochs it completed before diverging.
struct ModelRecord {
    TrainConfig config;
    std::string weights_path;  // absolute; empty when no checkpoint exists
    double best_val_f1 = -1.0;
    int best_epoch = 0;        // 1-based; 0 when failed before any validation
    int epochs_run = 0;
    bool failed = false;
    bool hit_max_epochs = false;
    std::vector<EpochStats> history;
};

// Test seams. val_override replaces the validation pass entirely (the score
// it returns feeds early stopping unchanged), loss_override rewrites the
// per-step loss before the divergence check, on_model runs right after the
// model is built, on_step after every optimizer step.
struct SessionHooks {
    std::function<double(int epoch)> val_override;
    std::function<double(int epoch, int iter, double loss)> loss_override;
    std::function<void(Model& model)> on_model;
    std::function<void(int epoch, int iter)> on_step;
};

// Micro-averaged F1: one confusion matrix pooled over every valid pixel of
// every scene, probabilities binarized at `threshold` (>= is positive).
// Errors on an empty scene list.
double pooled_f1(const std::vector<const Scene*>& scenes,
                 const std::function<ProbabilityMap(const Scene&)>& predict,
                 double threshold);

// pooled_f1 with tiled model inference; tile = stride = `tile`.
double validate(const Model& model, const std::vector<const Scene*>& scenes,
                BandSetting setting, const NormStats& stats, double threshold,
                int tile = 256);

// Runs one full session against the store's train/val split and persists
// record.json, history.csv and the best checkpoint under
// session_dir(runs_root, config). Early stopping: an epoch improves only if
// its val F1 is strictly greater than the best so far; the session stops once
// (epoch - best_epoch) reaches patience_epochs, or at max_epochs with the
// record flagged. A non-finite training loss aborts the session as failed
// with best_val_f1 = -1.
ModelRecord train_session(const TrainConfig& config, SceneStore& store,
                          const std::string& runs_root,
                          const SessionHooks* hooks = nullptr);

void save_record(const ModelRecord& record, const std::string& dir);
ModelRecord load_record(const std::string& dir);

}  // namespace lsens
