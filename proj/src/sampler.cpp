#include "lsens/sampler.hpp"

#include <cstring>
#include <iostream>

#include "lsens/common.hpp"

namespace lsens {

namespace {

std::vector<std::pair<int, int>> valid_positive_pixels(const Scene& scene) {
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < scene.height; ++y) {
        const std::size_t row = std::size_t(y) * std::size_t(scene.width);
        for (int x = 0; x < scene.width; ++x)
            if (scene.label[row + x] && scene.valid[row + x]) out.emplace_back(y, x);
    }
    return out;
}

Patch crop_at(const Scene& scene, BandSetting setting, int size,
              const std::vector<std::pair<int, int>>& positives, Rng& rng) {
    const auto [py, px] = positives[rng.uniform_int(positives.size())];
    const auto [rlo, rhi] = window_origin_range(py, size, scene.height);
    const auto [clo, chi] = window_origin_range(px, size, scene.width);
    const int row = rng.uniform_range(rlo, rhi);
    const int col = rng.uniform_range(clo, chi);

    const std::vector<int>& idx = band_indices(setting);
    Patch p;
    p.stack = Tensor(1, int(idx.size()), size, size);
    p.label = Tensor(1, 1, size, size);
    p.valid = Tensor(1, 1, size, size);
    p.source_scene = scene.id;
    p.row = row;
    p.col = col;
    for (std::size_t c = 0; c < idx.size(); ++c) {
        const float* src = scene.band(idx[c]);
        float* dst = p.stack.plane(0, int(c));
        for (int y = 0; y < size; ++y)
            std::memcpy(dst + std::size_t(y) * std::size_t(size),
                        src + std::size_t(row + y) * std::size_t(scene.width) + std::size_t(col),
                        std::size_t(size) * sizeof(float));
    }
    float* lp = p.label.plane(0, 0);
    float* vp = p.valid.plane(0, 0);
    for (int y = 0; y < size; ++y) {
        const std::size_t src = std::size_t(row + y) * std::size_t(scene.width) + std::size_t(col);
        const std::size_t dst = std::size_t(y) * std::size_t(size);
        for (int x = 0; x < size; ++x) {
            lp[dst + x] = float(scene.label[src + x]);
            vp[dst + x] = float(scene.valid[src + x]);
        }
    }
    return p;
}

// k quarter turns counterclockwise of one square plane.
void rotate_plane(const float* src, float* dst, int s, int k) {
    switch (k) {
        case 0:
            std::memcpy(dst, src, std::size_t(s) * std::size_t(s) * sizeof(float));
            return;
        case 1:
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x)
                    dst[std::size_t(y) * s + x] = src[std::size_t(x) * s + (s - 1 - y)];
            return;
        case 2:
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x)
                    dst[std::size_t(y) * s + x] = src[std::size_t(s - 1 - y) * s + (s - 1 - x)];
            return;
        case 3:
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x)
                    dst[std::size_t(y) * s + x] = src[std::size_t(s - 1 - x) * s + y];
            return;
        default: fail("rotate90 expects k in {0,1,2,3}, got " + std::to_string(k));
    }
}

}  // namespace

std::pair<int, int> window_origin_range(int p, int size, int n) {
    require(size <= n, "window size exceeds axis length");
    require(p >= 0 && p < n, "pixel outside the axis");
    return {std::max(0, p - size + 1), std::min(p, n - size)};
}

Patch smart_crop(const Scene& scene, BandSetting setting, int size, Rng& rng) {
    require(scene.height >= size && scene.width >= size,
            "scene \"" + scene.id + "\" smaller than crop");
    const auto positives = valid_positive_pixels(scene);
    require(!positives.empty(), "scene \"" + scene.id + "\" has no valid positive pixels");
    return crop_at(scene, setting, size, positives, rng);
}

Patch rotate90(const Patch& patch, int k) {
    require(k >= 0 && k <= 3, "rotate90 expects k in {0,1,2,3}, got " + std::to_string(k));
    require(patch.stack.h == patch.stack.w, "rotate90 needs square patches");
    Patch out;
    out.stack = Tensor::zeros_like(patch.stack);
    out.label = Tensor::zeros_like(patch.label);
    out.valid = Tensor::zeros_like(patch.valid);
    out.source_scene = patch.source_scene;
    out.row = patch.row;
    out.col = patch.col;
    const int s = patch.stack.h;
    for (int c = 0; c < patch.stack.c; ++c)
        rotate_plane(patch.stack.plane(0, c), out.stack.plane(0, c), s, k);
    rotate_plane(patch.label.plane(0, 0), out.label.plane(0, 0), s, k);
    rotate_plane(patch.valid.plane(0, 0), out.valid.plane(0, 0), s, k);
    return out;
}

BatchStream::BatchStream(std::vector<const Scene*> scenes, BandSetting setting, int patch_size,
                         int batch_size, std::uint64_t seed)
    : setting_(setting), patch_size_(patch_size), batch_size_(batch_size), rng_(seed) {
    require(patch_size > 0 && batch_size > 0, "patch and batch size must be positive");
    for (const Scene* s : scenes) {
        if (s->height < patch_size || s->width < patch_size) {
            std::cerr << "warning: excluding scene \"" << s->id << "\" (" << s->height << "x"
                      << s->width << "): smaller than the " << patch_size << " crop\n";
            excluded_.push_back(s->id);
            continue;
        }
        auto positives = valid_positive_pixels(*s);
        if (positives.empty()) {
            std::cerr << "warning: excluding scene \"" << s->id
                      << "\": no valid positive pixels\n";
            excluded_.push_back(s->id);
            continue;
        }
        eligible_.push_back(s);
        positives_.push_back(std::move(positives));
    }
    require(!eligible_.empty(), "no eligible scenes");
}

Batch BatchStream::next() {
    Batch b;
    const int channels = setting_channels(setting_);
    b.stack = Tensor(batch_size_, channels, patch_size_, patch_size_);
    b.label = Tensor(batch_size_, 1, patch_size_, patch_size_);
    b.valid = Tensor(batch_size_, 1, patch_size_, patch_size_);
    for (int i = 0; i < batch_size_; ++i) {
        const std::size_t scene_idx = rng_.uniform_int(eligible_.size());
        Patch p = crop_at(*eligible_[scene_idx], setting_, patch_size_, positives_[scene_idx], rng_);
        p = rotate90(p, int(rng_.uniform_int(4)));
        std::memcpy(b.stack.sample(i), p.stack.v.data(), p.stack.size() * sizeof(float));
        std::memcpy(b.label.sample(i), p.label.v.data(), p.label.size() * sizeof(float));
        std::memcpy(b.valid.sample(i), p.valid.v.data(), p.valid.size() * sizeof(float));
    }
    return b;
}

}  // namespace lsens
