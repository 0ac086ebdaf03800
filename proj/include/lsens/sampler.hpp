#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lsens/rng.hpp"
#include "lsens/scene.hpp"

namespace lsens {

// One training crop. Raw band values; normalization happens at the training
// loop. Contains at least one pixel with label=1 and valid=1.
struct Patch {
    Tensor stack;   // (1, C, size, size)
    Tensor label;   // (1, 1, size, size)
    Tensor valid;   // (1, 1, size, size)
    std::string source_scene;
    int row = 0;    // crop origin in the source scene
    int col = 0;
};

// Inclusive origin bounds for a window of `size` that contains coordinate p
// on an axis of length n.
std::pair<int, int> window_origin_range(int p, int size, int n);

// Two-stage draw: a valid positive pixel uniformly at random, then a window
// uniformly among all in-bounds windows containing it.
Patch smart_crop(const Scene& scene, BandSetting setting, int size, Rng& rng);

// Joint 90-degree rotation of every plane, k quarter turns counterclockwise.
Patch rotate90(const Patch& patch, int k);

struct Batch {
    Tensor stack;   // (B, C, size, size)
    Tensor label;   // (B, 1, size, size)
    Tensor valid;   // (B, 1, size, size)
};

// Unbounded deterministic batch stream: per patch, a scene uniformly with
// replacement, a smart crop, and a random rotation. Scenes smaller than the
// patch or without a valid positive pixel are excluded with a warning.
class BatchStream {
public:
    BatchStream(std::vector<const Scene*> scenes, BandSetting setting, int patch_size,
                int batch_size, std::uint64_t seed);

    Batch next();

    const std::vector<const Scene*>& eligible() const { return eligible_; }
    const std::vector<std::string>& excluded() const { return excluded_; }

private:
    std::vector<const Scene*> eligible_;
    std::vector<std::vector<std::pair<int, int>>> positives_;  // per eligible scene
    std::vector<std::string> excluded_;
    BandSetting setting_;
    int patch_size_;
    int batch_size_;
    Rng rng_;
};

}  // namespace lsens
