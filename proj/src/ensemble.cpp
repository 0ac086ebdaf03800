#include "lsens/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <tuple>

#include <json.hpp>

#include "lsens/common.hpp"
#include "lsens/metrics.hpp"

namespace lsens {

using nlohmann::json;

namespace {

constexpr char kRasterMagic[8] = {'B', 'S', 'T', 'A', 'C', 'K', '0', '1'};

bool member_less(const TrainConfig& a, const TrainConfig& b) {
    return std::tie(a.arch, a.loss.name, a.learning_rate) <
           std::tie(b.arch, b.loss.name, b.learning_rate);
}

}  // namespace

std::vector<ModelRecord> rank_models(const MatrixManifest& manifest, BandSetting setting) {
    std::vector<ModelRecord> out;
    for (const ModelRecord& r : manifest.records)
        if (r.config.setting == setting && !r.failed) out.push_back(r);
    require(!out.empty(), "no successful records for setting " + setting_name(setting));
    std::sort(out.begin(), out.end(), [](const ModelRecord& a, const ModelRecord& b) {
        if (a.best_val_f1 != b.best_val_f1) return a.best_val_f1 > b.best_val_f1;
        return member_less(a.config, b.config);
    });
    return out;
}

EnsembleSpec make_ensemble(const MatrixManifest& manifest, BandSetting setting, int k,
                           double threshold) {
    require(threshold > 0.0 && threshold < 1.0, "threshold must lie strictly between 0 and 1");
    const std::vector<ModelRecord> ranked = rank_models(manifest, setting);
    require(k >= 1, "ensemble size k must be at least 1");
    require(k <= int(ranked.size()),
            "ensemble size k=" + std::to_string(k) + " exceeds the " +
                std::to_string(ranked.size()) + " successful records for setting " +
                setting_name(setting));
    EnsembleSpec spec;
    spec.setting = setting;
    spec.k = k;
    spec.threshold = threshold;
    for (int i = 0; i < k; ++i) spec.member_configs.push_back(ranked[std::size_t(i)].config);
    return spec;
}

ProbabilityMap average_maps(const std::vector<ProbabilityMap>& maps) {
    require(!maps.empty(), "cannot average zero probability maps");
    const ProbabilityMap& first = maps.front();
    for (const ProbabilityMap& m : maps)
        require(m.width == first.width && m.height == first.height &&
                    m.values.size() == first.values.size() && m.scene_id == first.scene_id,
                "probability maps cover different scenes");

    // Pairwise tree over the member axis; the grouping depends only on the
    // member count, never on scheduling.
    auto tree = [&](auto&& self, std::size_t lo, std::size_t hi, std::size_t p) -> double {
        if (hi - lo == 1) return double(maps[lo].values[p]);
        const std::size_t mid = lo + (hi - lo) / 2;
        return self(self, lo, mid, p) + self(self, mid, hi, p);
    };

    ProbabilityMap out;
    out.scene_id = first.scene_id;
    out.width = first.width;
    out.height = first.height;
    out.values.resize(first.values.size());
    const double k = double(maps.size());
    for (std::size_t p = 0; p < out.values.size(); ++p)
        out.values[p] = float(tree(tree, 0, maps.size(), p) / k);
    return out;
}

ProbabilityMap ensemble_predict(const EnsembleSpec& spec, const Scene& scene,
                                const NormStats& stats, const MatrixManifest& manifest,
                                int tile, bool majority_vote) {
    require(spec.k >= 1, "ensemble needs at least one member");
    require(int(spec.member_configs.size()) == spec.k,
            "ensemble spec k=" + std::to_string(spec.k) + " does not match its " +
                std::to_string(spec.member_configs.size()) + " member configs");
    require(spec.threshold > 0.0 && spec.threshold < 1.0,
            "threshold must lie strictly between 0 and 1");

    std::vector<TrainConfig> members = spec.member_configs;
    std::sort(members.begin(), members.end(), member_less);

    std::vector<ProbabilityMap> maps;
    maps.reserve(members.size());
    json prov_members = json::array();
    for (const TrainConfig& c : members) {
        require(c.setting == spec.setting,
                "ensemble member " + session_dir_name(c) + " trained on setting " +
                    setting_name(c.setting) + ", ensemble wants " + setting_name(spec.setting));
        const ModelRecord* rec = nullptr;
        for (const ModelRecord& r : manifest.records)
            if (r.config == c) {
                rec = &r;
                break;
            }
        require(rec != nullptr,
                "ensemble member " + session_dir_name(c) + " not in the manifest");
        require(!rec->failed,
                "ensemble member " + session_dir_name(c) + " is a failed session");
        require(!rec->weights_path.empty(),
                "ensemble member " + session_dir_name(c) + " has no checkpoint");

        const Model model = load_weights(
            ArchSpec{c.arch, setting_channels(c.setting), c.width, c.depth}, rec->weights_path);
        ProbabilityMap map = predict_scene(model, scene, spec.setting, stats, tile, tile);
        if (majority_vote)
            for (float& v : map.values) v = double(v) >= spec.threshold ? 1.0f : 0.0f;
        prov_members.push_back(
            {{"member", session_dir_name(c)}, {"val_f1", rec->best_val_f1}});
        maps.push_back(std::move(map));
    }

    ProbabilityMap out = average_maps(maps);
    json prov;
    prov["kind"] = majority_vote ? "ensemble_majority" : "ensemble_mean";
    prov["setting"] = setting_name(spec.setting);
    prov["k"] = spec.k;
    prov["members"] = prov_members;
    out.provenance = prov.dump();
    return out;
}

std::vector<std::uint8_t> binarize(const ProbabilityMap& map, double threshold) {
    require(threshold > 0.0 && threshold < 1.0, "threshold must lie strictly between 0 and 1");
    std::vector<std::uint8_t> mask(map.values.size());
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = double(map.values[i]) >= threshold ? 1 : 0;
    return mask;
}

std::vector<std::pair<int, double>> size_sweep(const MatrixManifest& manifest,
                                               BandSetting setting, const Scene& scene,
                                               const NormStats& stats,
                                               std::vector<int> k_values, int tile) {
    require(!k_values.empty(), "empty ensemble size list");
    std::sort(k_values.begin(), k_values.end());
    for (std::size_t i = 1; i < k_values.size(); ++i)
        require(k_values[i] != k_values[i - 1],
                "duplicate ensemble size k=" + std::to_string(k_values[i]));

    std::vector<std::pair<int, double>> out;
    for (int k : k_values) {
        const EnsembleSpec spec = make_ensemble(manifest, setting, k);
        const ProbabilityMap map = ensemble_predict(spec, scene, stats, manifest, tile);
        const std::vector<std::uint8_t> mask = binarize(map, spec.threshold);
        out.emplace_back(k, scores(confusion(mask, scene.label, scene.valid)).f1);
    }
    return out;
}

void save_probability_map(const ProbabilityMap& map, const std::string& path) {
    require(map.width > 0 && map.height > 0, "probability map has no shape");
    require(map.values.size() == std::size_t(map.width) * std::size_t(map.height),
            "probability map size does not match its shape");
    for (std::size_t i = 0; i < map.values.size(); ++i)
        require(std::isfinite(map.values[i]) && map.values[i] >= 0.0f && map.values[i] <= 1.0f,
                "probability outside [0,1] at pixel " + std::to_string(i));

    json j;
    j["id"] = map.scene_id;
    j["width"] = map.width;
    j["height"] = map.height;
    j["band_count"] = 1;
    j["band_names"] = {"probability"};
    const std::string header = j.dump();

    std::string payload;
    payload.append(kRasterMagic, sizeof kRasterMagic);
    const std::uint32_t len = std::uint32_t(header.size());
    const char lenb[4] = {char(len & 0xff), char((len >> 8) & 0xff), char((len >> 16) & 0xff),
                          char((len >> 24) & 0xff)};
    payload.append(lenb, 4);
    payload.append(header);
    payload.append(reinterpret_cast<const char*>(map.values.data()),
                   map.values.size() * sizeof(float));
    write_text_atomic(path, payload);

    json side;
    side["scene_id"] = map.scene_id;
    try {
        side["provenance"] = json::parse(map.provenance);
    } catch (const json::exception&) {
        side["provenance"] = map.provenance;
    }
    write_text_atomic(path + ".json", side.dump(2) + "\n");
}

ProbabilityMap load_probability_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), "cannot open " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    require(in.gcount() == 8 && std::memcmp(magic, kRasterMagic, 8) == 0,
            path + ": bad magic, not a raster container");
    std::uint8_t lenb[4];
    in.read(reinterpret_cast<char*>(lenb), 4);
    require(in.gcount() == 4, path + ": truncated header length");
    const std::uint32_t len = std::uint32_t(lenb[0]) | std::uint32_t(lenb[1]) << 8 |
                              std::uint32_t(lenb[2]) << 16 | std::uint32_t(lenb[3]) << 24;
    require(len > 0 && len < (1u << 24), path + ": implausible header length");
    std::string text(len, '\0');
    in.read(text.data(), std::streamsize(len));
    require(in.gcount() == std::streamsize(len), path + ": truncated header");

    ProbabilityMap map;
    try {
        const json j = json::parse(text);
        require(j.at("band_count").get<int>() == 1,
                path + ": expected a single-band raster");
        map.scene_id = j.at("id").get<std::string>();
        map.width = j.at("width").get<int>();
        map.height = j.at("height").get<int>();
    } catch (const json::exception& e) {
        fail(path + ": unreadable header: " + e.what());
    }
    require(map.width > 0 && map.height > 0, path + ": non-positive raster shape");
    map.values.resize(std::size_t(map.width) * std::size_t(map.height));
    in.read(reinterpret_cast<char*>(map.values.data()),
            std::streamsize(map.values.size() * sizeof(float)));
    require(in.gcount() == std::streamsize(map.values.size() * sizeof(float)),
            path + ": truncated raster plane");

    std::ifstream side(path + ".json");
    if (side) {
        try {
            json s;
            side >> s;
            if (s.contains("provenance"))
                map.provenance = s["provenance"].is_string()
                                     ? s["provenance"].get<std::string>()
                                     : s["provenance"].dump();
        } catch (const json::exception&) {
            // sidecar is advisory; a broken one never blocks the raster
        }
    }
    return map;
}

}  // namespace lsens
