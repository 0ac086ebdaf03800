#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lsens/matrix.hpp"

namespace lsens {

// Members are kept in rank order; k always equals member_configs.size().
struct EnsembleSpec {
    BandSetting setting = BandSetting::ALL;
    int k = 0;
    std::vector<TrainConfig> member_configs;
    double threshold = 0.5;
};

// Successful records for one setting, best validation F1 first, ties broken
// lexicographically by (arch, loss, lr). Errors when nothing qualifies.
std::vector<ModelRecord> rank_models(const MatrixManifest& manifest, BandSetting setting);

// Spec for the top k ranked models.
EnsembleSpec make_ensemble(const MatrixManifest& manifest, BandSetting setting, int k,
                           double threshold = 0.5);

// Pixel mean in the given member order via pairwise summation, so the result
// is bitwise deterministic. All maps must cover the same scene.
ProbabilityMap average_maps(const std::vector<ProbabilityMap>& maps);

// Mean of the members' predict_scene outputs. Members are averaged in
// canonical (arch, loss, lr) order, so any permutation of member_configs
// produces a bitwise identical map. majority_vote averages the binarized
// maps instead of the probabilities.
ProbabilityMap ensemble_predict(const EnsembleSpec& spec, const Scene& scene,
                                const NormStats& stats, const MatrixManifest& manifest,
                                int tile = 256, bool majority_vote = false);

// mask[i] = 1 where values[i] >= threshold. Errors when threshold is not
// strictly inside (0,1).
std::vector<std::uint8_t> binarize(const ProbabilityMap& map, double threshold);

// Test F1 of the top-k ensemble against the scene label for each requested
// size, ascending in k.
std::vector<std::pair<int, double>> size_sweep(const MatrixManifest& manifest,
                                               BandSetting setting, const Scene& scene,
                                               const NormStats& stats,
                                               std::vector<int> k_values, int tile = 256);

// Single-band float32 raster in the stack container plus a JSON sidecar at
// path + ".json" carrying the provenance.
void save_probability_map(const ProbabilityMap& map, const std::string& path);
ProbabilityMap load_probability_map(const std::string& path);

}  // namespace lsens
