#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lsens/trainer.hpp"

namespace lsens {

inline constexpr const char* kToolkitVersion = "0.1.0";

// Full Cartesian product of the factor lists in lexicographic (arch, loss,
// lr) order. Each config copies `base` and gets a per-config seed derived
// from (global_seed, setting, arch, loss, lr), so a config's stream never
// depends on grid shape or position. Duplicate factor entries are an error.
std::vector<TrainConfig> enumerate_matrix(BandSetting setting,
                                          std::vector<std::string> archs,
                                          std::vector<std::string> losses,
                                          std::vector<double> lrs,
                                          std::uint64_t global_seed,
                                          const TrainConfig& base = {});

struct MatrixManifest {
    std::string version = kToolkitVersion;
    std::uint64_t global_seed = 0;
    std::uint64_t dataset_fingerprint = 0;
    std::vector<ModelRecord> records;
};

// "[k/90] setting=S1 arch=Unet loss=DiceLoss lr=0.001 val_f1=0.455"
std::string progress_line(const ModelRecord& record, int done, int total);

struct MatrixOptions {
    int jobs = 1;
    bool resume = false;
    std::uint64_t global_seed = 0;  // stamped into the manifest
    // Called under a lock after each config completes (resumed ones
    // included). Throwing stops the run after in-flight sessions finish;
    // completed work stays in the manifest on disk.
    std::function<void(const ModelRecord& record, int done, int total)> progress;
    const SessionHooks* hooks = nullptr;
};

// Runs every config not already completed, at most `jobs` sessions in
// parallel, and rewrites <runs_root>/manifest.json atomically after each
// completion. With resume, records whose config matches and whose manifest
// carries the store's dataset fingerprint are kept as-is; a fingerprint
// mismatch is an error. Records land in enumeration order regardless of job
// count. Failed sessions stay in the manifest with best_val_f1 = -1.
MatrixManifest run_matrix(const std::vector<TrainConfig>& configs, SceneStore& store,
                          const std::string& runs_root, const MatrixOptions& options = {});

std::string manifest_path(const std::string& runs_root);
MatrixManifest load_matrix_manifest(const std::string& path);
void save_matrix_manifest(const MatrixManifest& manifest, const std::string& path);

}  // namespace lsens
