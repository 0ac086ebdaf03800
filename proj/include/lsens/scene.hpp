#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lsens/nn/tensor.hpp"

namespace lsens {

using nn::Tensor;

inline constexpr int kSceneBands = 15;

// Canonical band order for every scene; indices are contract, names are
// documentation.
extern const std::array<const char*, kSceneBands> kBandNames;

// Categorical bands carry class codes, not measurements; they bypass
// mean/std normalization.
inline constexpr int kClimateBand = 11;
inline constexpr int kLandCoverBand = 13;
inline constexpr float kCategoricalScale = 100.0f;

// One case study: 15 float32 planes, binary label, binary validity mask.
// Planes are band-major row-major; label/valid share (height, width).
struct Scene {
    std::string id;
    int width = 0;
    int height = 0;
    std::vector<std::string> band_names;              // size kSceneBands
    std::optional<float> nodata_value;
    std::map<std::string, std::string> meta;
    std::vector<float> bands;                         // kSceneBands * height * width
    std::vector<std::uint8_t> label;                  // height * width, {0,1}
    std::vector<std::uint8_t> valid;                  // height * width, {0,1}

    std::size_t plane_size() const { return std::size_t(width) * std::size_t(height); }
    const float* band(int b) const { return bands.data() + std::size_t(b) * plane_size(); }
    float* band(int b) { return bands.data() + std::size_t(b) * plane_size(); }
};

enum class BandSetting { S1, S2, S1S2, ALL };

inline constexpr std::array<BandSetting, 4> kAllSettings = {
    BandSetting::S1, BandSetting::S2, BandSetting::S1S2, BandSetting::ALL};

const std::vector<int>& band_indices(BandSetting setting);
std::string setting_name(BandSetting setting);
BandSetting parse_setting(std::string_view name);  // Error on unknown name
int setting_channels(BandSetting setting);

// Raw container I/O. save_scene then load_scene is bit-exact for float32
// planes. Errors name the offending field.
Scene load_scene(const std::string& path);
void save_scene(const Scene& scene, const std::string& path);

// Reads only the container header.
std::string peek_scene_id(const std::string& path);

// Derives valid from finiteness across all bands, the scene's nodata value,
// and an existing mask if one is present (logical AND).
void derive_valid_mask(Scene& scene);

// Structural invariants: plane sizes, band count, label/valid domains,
// finiteness only where valid. Error on first violation.
void validate_scene(const Scene& scene);

// Stacks the setting's bands in index order as a (1, C, H, W) tensor of raw
// (unnormalized) values.
Tensor select_bands(const Scene& scene, BandSetting setting);

// (1, 1, H, W) float copies of the byte masks.
Tensor label_tensor(const Scene& scene);
Tensor valid_tensor(const Scene& scene);

// Per-band moments over valid pixels of the train split. Categorical bands
// are flagged and never standardized; constant bands fall back to std 1 so
// they normalize to exactly 0.
struct NormStats {
    std::array<double, kSceneBands> mean{};
    std::array<double, kSceneBands> stddev{};
    std::array<bool, kSceneBands> categorical{};
    std::array<bool, kSceneBands> constant{};
};

NormStats fit_norm_stats(const std::vector<const Scene*>& train_scenes);

// In place on a stack produced by select_bands (any crop of it): continuous
// planes become (x - mean) / std, categorical planes become code / 100, and
// pixels with valid = 0 become 0 in every plane. valid is (n, 1, H, W)
// matching the stack's (n, C, H, W).
void apply_norm(Tensor& stack, const Tensor& valid, BandSetting setting, const NormStats& stats);

NormStats load_norm_stats(const std::string& path);
void save_norm_stats(const NormStats& stats, const std::string& path);

// Single-band float raster in the same container (band_count = 1), used for
// probability maps. label plane is all zero; valid plane is the mask given.
void save_prob_raster(const std::string& path, const std::string& scene_id, int width, int height,
                      const std::vector<float>& values, const std::vector<std::uint8_t>& valid,
                      const std::map<std::string, std::string>& meta);

struct ProbRaster {
    std::string scene_id;
    int width = 0;
    int height = 0;
    std::vector<float> values;
    std::vector<std::uint8_t> valid;
    std::map<std::string, std::string> meta;
};

ProbRaster load_prob_raster(const std::string& path);

}  // namespace lsens
