#include "lsens/scene.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "lsens/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "container planes are written as native float32 and declared little-endian");

namespace lsens {

using nlohmann::json;

const std::array<const char*, kSceneBands> kBandNames = {
    "preVV",     "postVV", "dVV",        "preVH",       "postVH",
    "dVH",       "layover", "shadow",    "liaDeg",      "elevation",
    "slope",     "KG_climate", "tree_height", "landcover", "dNDVI",
};

namespace {

constexpr char kMagic[8] = {'B', 'S', 'T', 'A', 'C', 'K', '0', '1'};

const std::vector<int> kS1Indices = {0, 1, 2, 3, 4, 5, 6, 7, 8};
const std::vector<int> kS2Indices = {13, 14};
const std::vector<int> kS1S2Indices = {0, 1, 2, 3, 4, 5, 6, 7, 8, 13, 14};
const std::vector<int> kAllIndices = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14};

void write_bytes(std::ofstream& out, const void* data, std::size_t n, const std::string& what,
                 const std::string& path) {
    out.write(static_cast<const char*>(data), std::streamsize(n));
    require(bool(out), "failed writing " + what + " to " + path);
}

void read_bytes(std::ifstream& in, void* data, std::size_t n, const std::string& what,
                const std::string& path) {
    in.read(static_cast<char*>(data), std::streamsize(n));
    require(in.gcount() == std::streamsize(n), path + ": truncated " + what);
}

struct RawHeader {
    std::string id;
    int width = 0;
    int height = 0;
    int band_count = 0;
    std::vector<std::string> band_names;
    std::optional<float> nodata;
    std::map<std::string, std::string> meta;
};

void write_container(const std::string& path, const RawHeader& hdr, const float* planes,
                     const std::uint8_t* label, const std::uint8_t* valid) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(bool(out), "cannot open " + path + " for writing");
    json j;
    j["id"] = hdr.id;
    j["width"] = hdr.width;
    j["height"] = hdr.height;
    j["band_count"] = hdr.band_count;
    j["band_names"] = hdr.band_names;
    if (hdr.nodata)
        j["nodata_value"] = *hdr.nodata;
    else
        j["nodata_value"] = nullptr;
    j["meta"] = hdr.meta;
    const std::string text = j.dump();
    write_bytes(out, kMagic, sizeof kMagic, "magic", path);
    const std::uint32_t len = std::uint32_t(text.size());
    const std::uint8_t lenb[4] = {std::uint8_t(len), std::uint8_t(len >> 8), std::uint8_t(len >> 16),
                                  std::uint8_t(len >> 24)};
    write_bytes(out, lenb, 4, "header length", path);
    write_bytes(out, text.data(), text.size(), "header", path);
    const std::size_t plane = std::size_t(hdr.width) * std::size_t(hdr.height);
    write_bytes(out, planes, sizeof(float) * plane * std::size_t(hdr.band_count), "band planes", path);
    write_bytes(out, label, plane, "label plane", path);
    write_bytes(out, valid, plane, "valid_mask plane", path);
}

RawHeader read_header(std::ifstream& in, const std::string& path) {
    char magic[8];
    read_bytes(in, magic, sizeof magic, "magic", path);
    require(std::memcmp(magic, kMagic, sizeof magic) == 0, path + ": bad magic, not a scene container");
    std::uint8_t lenb[4];
    read_bytes(in, lenb, 4, "header length", path);
    const std::uint32_t len =
        std::uint32_t(lenb[0]) | std::uint32_t(lenb[1]) << 8 | std::uint32_t(lenb[2]) << 16 |
        std::uint32_t(lenb[3]) << 24;
    require(len > 0 && len < (1u << 24), path + ": implausible header length");
    std::string text(len, '\0');
    read_bytes(in, text.data(), len, "header", path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(path + ": unreadable header: " + e.what());
    }
    RawHeader hdr;
    try {
        hdr.id = j.at("id").get<std::string>();
        hdr.width = j.at("width").get<int>();
        hdr.height = j.at("height").get<int>();
        hdr.band_count = j.at("band_count").get<int>();
        hdr.band_names = j.at("band_names").get<std::vector<std::string>>();
        if (!j.at("nodata_value").is_null()) hdr.nodata = j.at("nodata_value").get<float>();
        if (j.contains("meta"))
            hdr.meta = j.at("meta").get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
        fail(path + ": header field missing or mistyped: " + e.what());
    }
    require(hdr.width > 0, path + ": width " + std::to_string(hdr.width) + " must be positive");
    require(hdr.height > 0, path + ": height " + std::to_string(hdr.height) + " must be positive");
    require(hdr.band_count > 0, path + ": band count must be positive");
    require(int(hdr.band_names.size()) == hdr.band_count,
            path + ": band_names lists " + std::to_string(hdr.band_names.size()) + " names for " +
                std::to_string(hdr.band_count) + " bands");
    return hdr;
}

}  // namespace

const std::vector<int>& band_indices(BandSetting setting) {
    switch (setting) {
        case BandSetting::S1: return kS1Indices;
        case BandSetting::S2: return kS2Indices;
        case BandSetting::S1S2: return kS1S2Indices;
        case BandSetting::ALL: return kAllIndices;
    }
    fail("invalid band setting");
}

std::string setting_name(BandSetting setting) {
    switch (setting) {
        case BandSetting::S1: return "S1";
        case BandSetting::S2: return "S2";
        case BandSetting::S1S2: return "S1S2";
        case BandSetting::ALL: return "ALL";
    }
    fail("invalid band setting");
}

BandSetting parse_setting(std::string_view name) {
    if (name == "S1") return BandSetting::S1;
    if (name == "S2") return BandSetting::S2;
    if (name == "S1S2") return BandSetting::S1S2;
    if (name == "ALL") return BandSetting::ALL;
    fail("unknown band setting \"" + std::string(name) + "\" (expected S1, S2, S1S2, or ALL)");
}

int setting_channels(BandSetting setting) { return int(band_indices(setting).size()); }

void derive_valid_mask(Scene& scene) {
    const std::size_t plane = scene.plane_size();
    for (std::size_t p = 0; p < plane; ++p) {
        bool ok = scene.valid[p] != 0;
        for (int b = 0; ok && b < kSceneBands; ++b) {
            const float v = scene.band(b)[p];
            if (!std::isfinite(v) || (scene.nodata_value && v == *scene.nodata_value)) ok = false;
        }
        scene.valid[p] = ok ? 1 : 0;
    }
}

void validate_scene(const Scene& scene) {
    const std::string where = "scene \"" + scene.id + "\": ";
    require(!scene.id.empty(), "scene id must be non-empty");
    require(scene.width > 0 && scene.height > 0, where + "non-positive dimensions");
    require(int(scene.band_names.size()) == kSceneBands,
            where + "band count " + std::to_string(scene.band_names.size()) + " ≠ " +
                std::to_string(kSceneBands));
    const std::size_t plane = scene.plane_size();
    require(scene.bands.size() == plane * kSceneBands, where + "band data size mismatch");
    require(scene.label.size() == plane, where + "label plane size mismatch");
    require(scene.valid.size() == plane, where + "valid_mask plane size mismatch");
    for (std::size_t p = 0; p < plane; ++p) {
        require(scene.label[p] <= 1, where + "label value " + std::to_string(scene.label[p]) +
                                         " outside {0,1}");
        require(scene.valid[p] <= 1, where + "valid_mask value " + std::to_string(scene.valid[p]) +
                                         " outside {0,1}");
    }
    for (int b = 0; b < kSceneBands; ++b) {
        const float* v = scene.band(b);
        for (std::size_t p = 0; p < plane; ++p) {
            if (!std::isfinite(v[p]))
                require(scene.valid[p] == 0, where + "non-finite value in band " + std::to_string(b) +
                                                 " at a pixel with valid_mask 1");
        }
    }
}

std::string peek_scene_id(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), "cannot open " + path);
    return read_header(in, path).id;
}

Scene load_scene(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), "cannot open " + path);
    const RawHeader hdr = read_header(in, path);
    require(hdr.band_count == kSceneBands, path + ": band count " + std::to_string(hdr.band_count) +
                                               " ≠ " + std::to_string(kSceneBands));
    Scene s;
    s.id = hdr.id;
    s.width = hdr.width;
    s.height = hdr.height;
    s.band_names = hdr.band_names;
    s.nodata_value = hdr.nodata;
    s.meta = hdr.meta;
    const std::size_t plane = s.plane_size();
    s.bands.resize(plane * kSceneBands);
    s.label.resize(plane);
    s.valid.resize(plane);
    read_bytes(in, s.bands.data(), sizeof(float) * s.bands.size(), "band data", path);
    read_bytes(in, s.label.data(), plane, "label plane", path);
    read_bytes(in, s.valid.data(), plane, "valid_mask plane", path);
    for (std::size_t p = 0; p < plane; ++p) {
        require(s.label[p] <= 1, path + ": label value " + std::to_string(s.label[p]) + " outside {0,1}");
        require(s.valid[p] <= 1,
                path + ": valid_mask value " + std::to_string(s.valid[p]) + " outside {0,1}");
    }
    derive_valid_mask(s);
    validate_scene(s);
    return s;
}

void save_scene(const Scene& scene, const std::string& path) {
    validate_scene(scene);
    RawHeader hdr;
    hdr.id = scene.id;
    hdr.width = scene.width;
    hdr.height = scene.height;
    hdr.band_count = kSceneBands;
    hdr.band_names = scene.band_names;
    hdr.nodata = scene.nodata_value;
    hdr.meta = scene.meta;
    write_container(path, hdr, scene.bands.data(), scene.label.data(), scene.valid.data());
}

Tensor select_bands(const Scene& scene, BandSetting setting) {
    const std::vector<int>& idx = band_indices(setting);
    Tensor out(1, int(idx.size()), scene.height, scene.width);
    const std::size_t plane = scene.plane_size();
    for (std::size_t c = 0; c < idx.size(); ++c)
        std::memcpy(out.plane(0, int(c)), scene.band(idx[c]), plane * sizeof(float));
    return out;
}

Tensor label_tensor(const Scene& scene) {
    Tensor out(1, 1, scene.height, scene.width);
    for (std::size_t p = 0; p < scene.plane_size(); ++p) out.v[p] = float(scene.label[p]);
    return out;
}

Tensor valid_tensor(const Scene& scene) {
    Tensor out(1, 1, scene.height, scene.width);
    for (std::size_t p = 0; p < scene.plane_size(); ++p) out.v[p] = float(scene.valid[p]);
    return out;
}

NormStats fit_norm_stats(const std::vector<const Scene*>& train_scenes) {
    require(!train_scenes.empty(), "empty train set");
    std::array<double, kSceneBands> sum{};
    std::array<double, kSceneBands> sumsq{};
    std::size_t count = 0;
    for (const Scene* s : train_scenes) {
        const std::size_t plane = s->plane_size();
        for (int b = 0; b < kSceneBands; ++b) {
            const float* v = s->band(b);
            double bs = 0.0, bs2 = 0.0;
            for (std::size_t p = 0; p < plane; ++p) {
                if (!s->valid[p]) continue;
                bs += v[p];
                bs2 += double(v[p]) * double(v[p]);
            }
            sum[b] += bs;
            sumsq[b] += bs2;
        }
        for (std::size_t p = 0; p < plane; ++p) count += s->valid[p];
    }
    require(count > 0, "train set has no valid pixels");
    NormStats stats;
    for (int b = 0; b < kSceneBands; ++b) {
        const double mean = sum[b] / double(count);
        const double var = std::max(0.0, sumsq[b] / double(count) - mean * mean);
        stats.mean[b] = mean;
        stats.stddev[b] = std::sqrt(var);
        if (stats.stddev[b] < 1e-12) {
            stats.constant[b] = true;
            stats.stddev[b] = 1.0;
        }
    }
    stats.categorical[kClimateBand] = true;
    stats.categorical[kLandCoverBand] = true;
    return stats;
}

void apply_norm(Tensor& stack, const Tensor& valid, BandSetting setting, const NormStats& stats) {
    const std::vector<int>& idx = band_indices(setting);
    require(stack.c == int(idx.size()), "stack has " + std::to_string(stack.c) + " planes, setting " +
                                            setting_name(setting) + " expects " +
                                            std::to_string(idx.size()));
    require(valid.n == stack.n && valid.c == 1 && valid.h == stack.h && valid.w == stack.w,
            "valid mask shape does not match stack");
    const std::size_t plane = std::size_t(stack.h) * std::size_t(stack.w);
    for (int n = 0; n < stack.n; ++n) {
        const float* vm = valid.plane(n, 0);
        for (int c = 0; c < stack.c; ++c) {
            const int b = idx[std::size_t(c)];
            float* x = stack.plane(n, c);
            if (stats.categorical[b]) {
                for (std::size_t p = 0; p < plane; ++p)
                    x[p] = vm[p] != 0.0f ? x[p] / kCategoricalScale : 0.0f;
            } else {
                const float mean = float(stats.mean[b]);
                const float inv = float(1.0 / stats.stddev[b]);
                for (std::size_t p = 0; p < plane; ++p)
                    x[p] = vm[p] != 0.0f ? (x[p] - mean) * inv : 0.0f;
            }
        }
    }
}

NormStats load_norm_stats(const std::string& path) {
    std::ifstream in(path);
    require(bool(in), "cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(path + ": unreadable stats: " + e.what());
    }
    NormStats stats;
    try {
        auto mean = j.at("mean").get<std::vector<double>>();
        auto stddev = j.at("std").get<std::vector<double>>();
        auto cat = j.at("categorical").get<std::vector<bool>>();
        auto cons = j.at("constant").get<std::vector<bool>>();
        require(mean.size() == kSceneBands && stddev.size() == kSceneBands &&
                    cat.size() == kSceneBands && cons.size() == kSceneBands,
                path + ": stats arrays must have " + std::to_string(kSceneBands) + " entries");
        for (int b = 0; b < kSceneBands; ++b) {
            stats.mean[b] = mean[std::size_t(b)];
            stats.stddev[b] = stddev[std::size_t(b)];
            stats.categorical[b] = cat[std::size_t(b)];
            stats.constant[b] = cons[std::size_t(b)];
        }
    } catch (const json::exception& e) {
        fail(path + ": stats field missing or mistyped: " + e.what());
    }
    return stats;
}

void save_norm_stats(const NormStats& stats, const std::string& path) {
    json j;
    j["mean"] = std::vector<double>(stats.mean.begin(), stats.mean.end());
    j["std"] = std::vector<double>(stats.stddev.begin(), stats.stddev.end());
    j["categorical"] = std::vector<bool>(stats.categorical.begin(), stats.categorical.end());
    j["constant"] = std::vector<bool>(stats.constant.begin(), stats.constant.end());
    std::ofstream out(path, std::ios::trunc);
    require(bool(out), "cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    require(bool(out), "failed writing " + path);
}

void save_prob_raster(const std::string& path, const std::string& scene_id, int width, int height,
                      const std::vector<float>& values, const std::vector<std::uint8_t>& valid,
                      const std::map<std::string, std::string>& meta) {
    const std::size_t plane = std::size_t(width) * std::size_t(height);
    require(values.size() == plane, "probability raster has " + std::to_string(values.size()) +
                                        " values for " + std::to_string(plane) + " pixels");
    require(valid.size() == plane, "probability raster valid mask size mismatch");
    RawHeader hdr;
    hdr.id = scene_id;
    hdr.width = width;
    hdr.height = height;
    hdr.band_count = 1;
    hdr.band_names = {"probability"};
    hdr.meta = meta;
    std::vector<std::uint8_t> label(plane, 0);
    write_container(path, hdr, values.data(), label.data(), valid.data());
}

ProbRaster load_prob_raster(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), "cannot open " + path);
    const RawHeader hdr = read_header(in, path);
    require(hdr.band_count == 1,
            path + ": probability raster must have 1 band, found " + std::to_string(hdr.band_count));
    ProbRaster r;
    r.scene_id = hdr.id;
    r.width = hdr.width;
    r.height = hdr.height;
    r.meta = hdr.meta;
    const std::size_t plane = std::size_t(r.width) * std::size_t(r.height);
    r.values.resize(plane);
    r.valid.resize(plane);
    std::vector<std::uint8_t> label(plane);
    read_bytes(in, r.values.data(), sizeof(float) * plane, "probability plane", path);
    read_bytes(in, label.data(), plane, "label plane", path);
    read_bytes(in, r.valid.data(), plane, "valid_mask plane", path);
    return r;
}

}  // namespace lsens
