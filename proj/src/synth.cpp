#include "lsens/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "lsens/common.hpp"
#include "lsens/dataset.hpp"
#include "lsens/rng.hpp"

namespace lsens {

namespace {

constexpr float kPi = 3.14159265358979323846f;

// Sum of K random plane waves; zero mean, standard deviation ~ ampl.
std::vector<float> smooth_field(Rng& rng, int w, int h, float ampl) {
    constexpr int K = 6;
    const float a = ampl * std::sqrt(2.0f / K);
    float u[K], v[K], ph[K];
    for (int k = 0; k < K; ++k) {
        const float cycles = float(rng.uniform(1.5, 6.0));
        const float dir = float(rng.uniform(0.0, 2.0 * kPi));
        u[k] = cycles * std::cos(dir) / float(w);
        v[k] = cycles * std::sin(dir) / float(h);
        ph[k] = float(rng.uniform(0.0, 2.0 * kPi));
    }
    std::vector<float> f(std::size_t(w) * std::size_t(h));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float s = 0.0f;
            for (int k = 0; k < K; ++k)
                s += std::sin(2.0f * kPi * (u[k] * float(x) + v[k] * float(y)) + ph[k]);
            f[std::size_t(y) * std::size_t(w) + std::size_t(x)] = a * s;
        }
    return f;
}

struct Ellipse {
    float cy, cx, ra, rb, cos_t, sin_t;
    bool contains(int y, int x) const {
        const float dy = float(y) - cy, dx = float(x) - cx;
        const float p = (dx * cos_t + dy * sin_t) / ra;
        const float q = (-dx * sin_t + dy * cos_t) / rb;
        return p * p + q * q <= 1.0f;
    }
    float reach() const { return std::max(ra, rb); }
};

// Stamps value 1 into mask inside the ellipse, skipping pixels where skip=1.
// Returns the number of pixels newly set.
std::size_t stamp(const Ellipse& e, int w, int h, std::vector<std::uint8_t>& mask,
                  const std::vector<std::uint8_t>* skip) {
    const int y0 = std::max(0, int(std::floor(e.cy - e.reach())));
    const int y1 = std::min(h - 1, int(std::ceil(e.cy + e.reach())));
    const int x0 = std::max(0, int(std::floor(e.cx - e.reach())));
    const int x1 = std::min(w - 1, int(std::ceil(e.cx + e.reach())));
    std::size_t added = 0;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const std::size_t p = std::size_t(y) * std::size_t(w) + std::size_t(x);
            if (skip && (*skip)[p]) continue;
            if (!e.contains(y, x) || mask[p]) continue;
            mask[p] = 1;
            ++added;
        }
    return added;
}

bool bbox_touches(const Ellipse& e, int w, int h, const std::vector<std::uint8_t>& mask) {
    const int y0 = std::max(0, int(e.cy - e.reach()) - 1);
    const int y1 = std::min(h - 1, int(e.cy + e.reach()) + 1);
    const int x0 = std::max(0, int(e.cx - e.reach()) - 1);
    const int x1 = std::min(w - 1, int(e.cx + e.reach()) + 1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if (mask[std::size_t(y) * std::size_t(w) + std::size_t(x)]) return true;
    return false;
}

}  // namespace

Scene synth_case_study(std::uint64_t seed, const SynthSpec& spec) {
    require(spec.width > 0 && spec.height > 0, "synthetic scene size must be positive");
    require(spec.min_blobs >= 0 && spec.max_blobs >= spec.min_blobs, "bad blob count range");
    require(spec.min_radius > 0 && spec.max_radius >= spec.min_radius, "bad blob radius range");
    require(spec.water_fraction >= 0.0f && spec.water_fraction < 0.8f,
            "water fraction must be in [0, 0.8)");
    const int w = spec.width, h = spec.height;
    const std::size_t plane = std::size_t(w) * std::size_t(h);

    Rng terrain_rng(derive_seed(seed, "synth.terrain"));
    Rng water_rng(derive_seed(seed, "synth.water"));
    Rng blob_rng(derive_seed(seed, "synth.blobs"));
    Rng sar_rng(derive_seed(seed, "synth.sar"));
    Rng optical_rng(derive_seed(seed, "synth.optical"));
    Rng class_rng(derive_seed(seed, "synth.classes"));
    Rng mask_rng(derive_seed(seed, "synth.mask"));

    // Water bodies: large ellipses until the target fraction is covered.
    std::vector<std::uint8_t> water(plane, 0);
    if (spec.water_fraction > 0.0f) {
        const std::size_t target = std::size_t(double(spec.water_fraction) * double(plane));
        const float rmin = float(std::min(w, h)) / 16.0f;
        const float rmax = float(std::min(w, h)) / 6.0f;
        std::size_t covered = 0;
        for (int tries = 0; covered < target && tries < 64; ++tries) {
            Ellipse e;
            e.cy = float(water_rng.uniform(0.0, double(h - 1)));
            e.cx = float(water_rng.uniform(0.0, double(w - 1)));
            e.ra = float(water_rng.uniform(rmin, rmax));
            e.rb = float(water_rng.uniform(rmin, rmax));
            const float t = float(water_rng.uniform(0.0, 2.0 * kPi));
            e.cos_t = std::cos(t);
            e.sin_t = std::sin(t);
            covered += stamp(e, w, h, water, nullptr);
        }
    }

    // Landslide blobs: interior ellipses kept clear of water.
    std::vector<std::uint8_t> label(plane, 0);
    const float margin = spec.max_radius + 2.0f;
    require(2.0f * margin < float(std::min(w, h)), "scene too small for the blob radius range");
    std::size_t positives = 0;
    auto add_blob = [&]() {
        for (int tries = 0; tries < 60; ++tries) {
            Ellipse e;
            e.cy = float(blob_rng.uniform(double(margin), double(h) - margin));
            e.cx = float(blob_rng.uniform(double(margin), double(w) - margin));
            e.ra = float(blob_rng.uniform(spec.min_radius, spec.max_radius));
            e.rb = float(blob_rng.uniform(spec.min_radius, spec.max_radius));
            const float t = float(blob_rng.uniform(0.0, 2.0 * kPi));
            e.cos_t = std::cos(t);
            e.sin_t = std::sin(t);
            if (bbox_touches(e, w, h, water)) continue;
            positives += stamp(e, w, h, label, &water);
            return;
        }
    };
    const int blob_count = blob_rng.uniform_range(spec.min_blobs, spec.max_blobs);
    for (int b = 0; b < blob_count; ++b) add_blob();
    if (spec.max_blobs > 0)
        for (int extra = 0; double(positives) < 0.001 * double(plane) && extra < 64; ++extra)
            add_blob();
    require(positives > 0, "synthetic spec produced zero landslide pixels");
    require(double(positives) <= 0.05 * double(plane),
            "synthetic spec produced a positive fraction above 5%; reduce blob count or radius");

    Scene s;
    s.id = "synth";
    s.width = w;
    s.height = h;
    s.band_names.assign(kBandNames.begin(), kBandNames.end());
    s.meta["generator"] = "synthetic";
    s.meta["seed"] = std::to_string(seed);
    s.bands.resize(plane * kSceneBands);
    s.label = label;
    s.valid.assign(plane, 1);

    // Terrain: smooth elevation, slope as its gradient magnitude.
    const std::vector<float> elev_base = smooth_field(terrain_rng, w, h, 120.0f);
    const float tilt_y = float(terrain_rng.uniform(-0.4, 0.4));
    const float tilt_x = float(terrain_rng.uniform(-0.4, 0.4));
    float* elevation = s.band(9);
    float* slope = s.band(10);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t p = std::size_t(y) * std::size_t(w) + std::size_t(x);
            elevation[p] = 500.0f + elev_base[p] + tilt_y * float(y) + tilt_x * float(x);
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t p = std::size_t(y) * std::size_t(w) + std::size_t(x);
            const float gy = elevation[std::min(y + 1, h - 1) * w + x] -
                             elevation[std::max(y - 1, 0) * w + x];
            const float gx = elevation[y * w + std::min(x + 1, w - 1)] -
                             elevation[y * w + std::max(x - 1, 0)];
            slope[p] = 0.5f * std::sqrt(gx * gx + gy * gy);
        }

    // SAR bands 0-5: pre/post backscatter with speckle; slides shift the
    // post image, water drops backscatter and calms the speckle.
    const std::vector<float> vv_base = smooth_field(sar_rng, w, h, 1.5f);
    const std::vector<float> vh_base = smooth_field(sar_rng, w, h, 1.5f);
    float* pre_vv = s.band(0);
    float* post_vv = s.band(1);
    float* d_vv = s.band(2);
    float* pre_vh = s.band(3);
    float* post_vh = s.band(4);
    float* d_vh = s.band(5);
    for (std::size_t p = 0; p < plane; ++p) {
        const float noise_scale = water[p] ? 0.4f : 1.0f;
        const float water_drop = water[p] ? -6.0f : 0.0f;
        const float slide_vv = label[p] ? spec.sar_strength : 0.0f;
        const float slide_vh = label[p] ? -0.8f * spec.sar_strength : 0.0f;
        const float bvv = -8.0f + vv_base[p] + water_drop;
        const float bvh = -14.0f + vh_base[p] + water_drop;
        pre_vv[p] = bvv + float(sar_rng.normal(0.0, double(spec.sar_noise) * noise_scale));
        post_vv[p] = bvv + slide_vv + float(sar_rng.normal(0.0, double(spec.sar_noise) * noise_scale));
        d_vv[p] = post_vv[p] - pre_vv[p];
        pre_vh[p] = bvh + float(sar_rng.normal(0.0, double(spec.sar_noise) * noise_scale));
        post_vh[p] = bvh + slide_vh + float(sar_rng.normal(0.0, double(spec.sar_noise) * noise_scale));
        d_vh[p] = post_vh[p] - pre_vh[p];
    }

    // Bands 6-8: geometry masks and local incidence angle.
    const std::vector<float> lay_f = smooth_field(sar_rng, w, h, 1.0f);
    const std::vector<float> sha_f = smooth_field(sar_rng, w, h, 1.0f);
    const std::vector<float> lia_f = smooth_field(sar_rng, w, h, 8.0f);
    float* layover = s.band(6);
    float* shadow = s.band(7);
    float* lia = s.band(8);
    for (std::size_t p = 0; p < plane; ++p) {
        layover[p] = lay_f[p] > 1.8f ? 1.0f : 0.0f;
        shadow[p] = sha_f[p] < -1.8f ? 1.0f : 0.0f;
        lia[p] = std::clamp(35.0f + lia_f[p], 15.0f, 60.0f);
    }

    // Band 11: one or two climate zones split by a smooth boundary.
    static const float kClimateCodes[] = {3.0f, 7.0f, 14.0f, 26.0f};
    const float code_a = kClimateCodes[class_rng.uniform_int(4)];
    const float code_b = kClimateCodes[class_rng.uniform_int(4)];
    const std::vector<float> climate_f = smooth_field(class_rng, w, h, 1.0f);
    float* climate = s.band(11);
    for (std::size_t p = 0; p < plane; ++p) climate[p] = climate_f[p] > 0.0f ? code_a : code_b;

    // Band 12: canopy height, zero over water.
    const std::vector<float> tree_f = smooth_field(class_rng, w, h, 6.0f);
    float* tree = s.band(12);
    for (std::size_t p = 0; p < plane; ++p)
        tree[p] = water[p] ? 0.0f : std::max(0.0f, 12.0f + tree_f[p]);

    // Band 13: land-cover codes. Water is coded correctly only at
    // landcover_water_acc; the rest keeps a land code, which leaves the
    // negative-dNDVI water confuser in place for optical-only inputs.
    const std::vector<float> lc_f = smooth_field(class_rng, w, h, 1.0f);
    float* landcover = s.band(13);
    for (std::size_t p = 0; p < plane; ++p) {
        float code;
        if (lc_f[p] > 0.8f)
            code = 50.0f;  // urban
        else if (lc_f[p] > 0.0f)
            code = 30.0f;  // grass
        else if (lc_f[p] > -1.0f)
            code = 20.0f;  // shrub
        else
            code = 10.0f;  // forest
        if (water[p] && class_rng.uniform() < double(spec.landcover_water_acc)) code = 80.0f;
        landcover[p] = code;
    }

    // Band 14: dNDVI. Non-negative on undisturbed land, strongly negative in
    // slides, moderately negative in water.
    const float slide_drop = (0.45f + 0.15f * float(optical_rng.uniform())) * spec.optical_strength;
    const float water_drop_ndvi = 0.25f + 0.15f * float(optical_rng.uniform());
    const std::vector<float> ndvi_f = smooth_field(optical_rng, w, h, 0.04f);
    float* dndvi = s.band(14);
    for (std::size_t p = 0; p < plane; ++p) {
        const float noise = float(optical_rng.normal(0.0, double(spec.optical_noise)));
        float v;
        if (label[p])
            v = std::clamp(-slide_drop + noise, -1.0f, -0.01f);
        else if (water[p])
            v = std::clamp(-water_drop_ndvi + noise, -1.0f, 0.2f);
        else
            v = std::clamp(0.03f + ndvi_f[p] + 0.5f * noise, 0.0f, 1.0f);
        dndvi[p] = v;
    }

    // Nodata strip along one random edge; blobs stay clear via their margin.
    if (spec.max_invalid_border > 0) {
        const int strip = mask_rng.uniform_range(0, spec.max_invalid_border);
        const int edge = mask_rng.uniform_int(4);
        for (int k = 0; k < strip; ++k) {
            if (edge == 0)
                for (int x = 0; x < w; ++x) s.valid[std::size_t(k) * w + x] = 0;
            else if (edge == 1)
                for (int x = 0; x < w; ++x) s.valid[std::size_t(h - 1 - k) * w + x] = 0;
            else if (edge == 2)
                for (int y = 0; y < h; ++y) s.valid[std::size_t(y) * w + std::size_t(k)] = 0;
            else
                for (int y = 0; y < h; ++y) s.valid[std::size_t(y) * w + std::size_t(w - 1 - k)] = 0;
        }
    }

    validate_scene(s);
    return s;
}

std::string make_synthetic_dataset(const std::string& dir, int scene_count, std::uint64_t seed,
                                   const SynthSpec& spec) {
    require(scene_count >= 3, "dataset needs at least 3 scenes for a train/val/test split");
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    DatasetManifest manifest;
    std::vector<std::string> ids;
    for (int i = 0; i < scene_count; ++i) {
        char name[16];
        std::snprintf(name, sizeof name, "synth%02d", i);
        Scene s = synth_case_study(derive_seed(seed, name), spec);
        s.id = name;
        const std::string file = std::string(name) + ".bst";
        save_scene(s, (fs::path(dir) / file).string());
        manifest.scene_paths.push_back(file);
        ids.push_back(name);
    }

    int test_n = 1, val_n = 4;
    if (scene_count != 21) {
        test_n = std::max(1, scene_count / 21);
        val_n = std::max(1, (scene_count * 4 + 10) / 21);
    }
    const int train_n = scene_count - val_n - test_n;
    require(train_n >= 1, "dataset too small: no train scenes left after the split");
    manifest.split.train.assign(ids.begin(), ids.begin() + train_n);
    manifest.split.val.assign(ids.begin() + train_n, ids.begin() + train_n + val_n);
    manifest.split.test.assign(ids.begin() + train_n + val_n, ids.end());

    const std::string manifest_path = (fs::path(dir) / "dataset.json").string();
    save_manifest(manifest, manifest_path);
    return manifest_path;
}

}  // namespace lsens
