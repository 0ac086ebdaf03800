#include "lsens/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lsens/common.hpp"
#include "lsens/rng.hpp"

namespace lsens {

using nlohmann::json;
namespace fs = std::filesystem;

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    require(bool(in), "cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(path + ": unreadable manifest: " + e.what());
    }
    DatasetManifest m;
    m.path = path;
    try {
        const auto rel = j.at("scenes").get<std::vector<std::string>>();
        const fs::path base = fs::path(path).parent_path();
        for (const std::string& r : rel) {
            fs::path p(r);
            m.scene_paths.push_back(p.is_absolute() ? p.string() : (base / p).string());
        }
        m.split.train = j.at("split").at("train").get<std::vector<std::string>>();
        m.split.val = j.at("split").at("val").get<std::vector<std::string>>();
        m.split.test = j.at("split").at("test").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        fail(path + ": manifest field missing or mistyped: " + e.what());
    }
    require(!m.scene_paths.empty(), path + ": manifest lists no scenes");
    return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    const fs::path base = fs::path(path).parent_path();
    std::vector<std::string> rel;
    for (const std::string& p : manifest.scene_paths) {
        const fs::path sp(p);
        std::error_code ec;
        const fs::path r = fs::relative(sp, base, ec);
        rel.push_back((!ec && !r.empty()) ? r.string() : sp.string());
    }
    json j;
    j["scenes"] = rel;
    j["split"] = {{"train", manifest.split.train},
                  {"val", manifest.split.val},
                  {"test", manifest.split.test}};
    std::ofstream out(path, std::ios::trunc);
    require(bool(out), "cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    require(bool(out), "failed writing " + path);
}

void validate_dataset(const DatasetManifest& manifest, bool paper_faithful) {
    std::set<std::string> on_disk;
    for (const std::string& p : manifest.scene_paths) {
        load_scene(p);  // full invariant check per scene
        const std::string id = peek_scene_id(p);
        require(on_disk.insert(id).second, "duplicate scene id \"" + id + "\" in manifest");
    }
    std::set<std::string> in_split;
    auto take = [&](const std::vector<std::string>& ids, const char* which) {
        for (const std::string& id : ids) {
            require(on_disk.count(id), std::string(which) + " split names unknown scene \"" + id + "\"");
            require(in_split.insert(id).second,
                    "scene \"" + id + "\" appears in more than one split");
        }
    };
    take(manifest.split.train, "train");
    take(manifest.split.val, "val");
    take(manifest.split.test, "test");
    require(in_split.size() == on_disk.size(), "split does not cover every scene in the manifest");
    if (paper_faithful) {
        require(manifest.split.train.size() == 16, "train split must have 16 scenes");
        require(manifest.split.val.size() == 4, "val split must have 4 scenes");
        require(manifest.split.test.size() == 1, "test split must have 1 scene");
    } else {
        require(!manifest.split.train.empty(), "train split must be non-empty");
        require(!manifest.split.val.empty(), "val split must be non-empty");
        require(!manifest.split.test.empty(), "test split must be non-empty");
    }
}

SceneStore::SceneStore(const std::string& manifest_path) : manifest_(load_manifest(manifest_path)) {
    for (const std::string& p : manifest_.scene_paths) {
        const std::string id = peek_scene_id(p);
        require(id_to_path_.emplace(id, p).second, "duplicate scene id \"" + id + "\" in manifest");
    }
}

std::vector<std::string> SceneStore::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, path] : id_to_path_) out.push_back(id);
    return out;
}

const Scene& SceneStore::scene(const std::string& id) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(id);
    if (it != cache_.end()) return *it->second;
    auto pit = id_to_path_.find(id);
    require(pit != id_to_path_.end(), "unknown scene id \"" + id + "\"");
    auto scene = std::make_unique<Scene>(load_scene(pit->second));
    return *cache_.emplace(id, std::move(scene)).first->second;
}

std::vector<const Scene*> SceneStore::scenes(const std::vector<std::string>& ids) {
    std::vector<const Scene*> out;
    out.reserve(ids.size());
    for (const std::string& id : ids) out.push_back(&scene(id));
    return out;
}

std::uint64_t SceneStore::fingerprint() {
    std::lock_guard<std::mutex> lock(mu_);
    if (fingerprint_done_) return fingerprint_;
    auto hash_file = [](const std::string& path, std::uint64_t h) {
        std::ifstream in(path, std::ios::binary);
        require(bool(in), "cannot open " + path);
        char buf[1 << 16];
        while (in) {
            in.read(buf, sizeof buf);
            h = fnv1a64_bytes(buf, std::size_t(in.gcount()), h);
        }
        return h;
    };
    std::uint64_t h = hash_file(manifest_.path, 0xcbf29ce484222325ULL);
    for (const auto& [id, path] : id_to_path_) h = hash_file(path, h);
    fingerprint_ = h;
    fingerprint_done_ = true;
    return fingerprint_;
}

}  // namespace lsens
