#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "lsens/nn/graph.hpp"
#include "lsens/nn/layers.hpp"
#include "lsens/scene.hpp"

namespace lsens {

// Nine fully-convolutional segmentation families behind one contract:
// forward maps (n, C, H, W) to logits (n, 1, H, W) for H, W divisible by
// 2^depth. Widths are desk-scale; each family keeps its defining mechanism
// (skip concatenation, nested skips, attention, add-fusion, pyramid, ...).
struct ArchSpec {
    std::string name;
    int in_channels = 15;
    int width = 16;
    int depth = 4;
};

const std::vector<std::string>& arch_names();
void validate_arch(const ArchSpec& spec);

// Dense per-pixel probabilities for one scene, plus where they came from.
struct ProbabilityMap {
    std::string scene_id;
    int width = 0;
    int height = 0;
    std::vector<float> values;  // row-major height*width, each in [0, 1]
    std::string provenance;
};

namespace detail {
class Net;
}

class Model {
public:
    Model(const ArchSpec& spec, std::uint64_t seed);
    Model(Model&&) noexcept;
    Model& operator=(Model&&) noexcept;
    ~Model();

    const ArchSpec& spec() const { return spec_; }
    std::uint64_t seed() const { return seed_; }
    std::size_t param_count() const { return store_.value_count(); }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }

    // Appends the whole forward pass to g; returns the logits node id.
    int forward(nn::Graph& g, int input) const;
    // Inference convenience: no tape, returns the logits tensor.
    Tensor forward(const Tensor& stack) const;

private:
    ArchSpec spec_;
    std::uint64_t seed_ = 0;
    nn::ParamStore store_;
    std::unique_ptr<detail::Net> net_;
};

Model build_model(const ArchSpec& spec, std::uint64_t seed);

// Binary weight file plus a JSON sidecar at path + ".json" describing
// {arch, in_channels, width, depth, seed, format_version}. Loading verifies
// the sidecar against the requested spec and the payload checksum.
void save_weights(const Model& model, const std::string& path);
Model load_weights(const ArchSpec& spec, const std::string& path);

// Whole-scene inference: reflect-pad to tile multiples, run tiles at the
// given stride, squash logits through the logistic, average overlapping
// contributions, crop, and zero invalid pixels.
ProbabilityMap predict_scene(const Model& model, const Scene& scene,
                             BandSetting setting, const NormStats& stats,
                             int tile = 256, int stride = 256);

}  // namespace lsens
