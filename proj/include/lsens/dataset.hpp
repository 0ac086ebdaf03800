#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "lsens/scene.hpp"

namespace lsens {

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

struct DatasetManifest {
    std::string path;                       // manifest file location
    std::vector<std::string> scene_paths;   // resolved against the manifest dir
    DatasetSplit split;
};

DatasetManifest load_manifest(const std::string& path);

// scene_paths are written relative to the manifest directory when possible.
void save_manifest(const DatasetManifest& manifest, const std::string& path);

// Split ids must be disjoint and cover exactly the scene ids on disk. With
// paper_faithful the split sizes must be 16/4/1.
void validate_dataset(const DatasetManifest& manifest, bool paper_faithful);

// Loads scenes on demand and caches them; safe for concurrent readers.
class SceneStore {
public:
    explicit SceneStore(const std::string& manifest_path);

    const DatasetManifest& manifest() const { return manifest_; }
    const DatasetSplit& split() const { return manifest_.split; }
    std::vector<std::string> ids() const;

    const Scene& scene(const std::string& id);
    std::vector<const Scene*> scenes(const std::vector<std::string>& ids);

    // Content hash of the manifest and every scene file; pins resumed runs
    // to the dataset they started from.
    std::uint64_t fingerprint();

private:
    DatasetManifest manifest_;
    std::map<std::string, std::string> id_to_path_;
    std::map<std::string, std::unique_ptr<Scene>> cache_;
    std::uint64_t fingerprint_ = 0;
    bool fingerprint_done_ = false;
    std::mutex mu_;
};

}  // namespace lsens
