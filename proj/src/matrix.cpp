#include "lsens/matrix.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

#include <json.hpp>

#include "lsens/common.hpp"
#include "lsens/rng.hpp"
#include "record_io.hpp"

namespace lsens {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
void check_factor(std::vector<T>& values, const std::string& what,
                  const std::function<std::string(const T&)>& show) {
    require(!values.empty(), "empty " + what + " factor list");
    std::sort(values.begin(), values.end());
    for (std::size_t i = 1; i < values.size(); ++i)
        require(values[i] != values[i - 1], "duplicate " + what + " factor: " + show(values[i]));
}

}  // namespace

std::vector<TrainConfig> enumerate_matrix(BandSetting setting,
                                          std::vector<std::string> archs,
                                          std::vector<std::string> losses,
                                          std::vector<double> lrs,
                                          std::uint64_t global_seed,
                                          const TrainConfig& base) {
    check_factor<std::string>(archs, "arch", [](const std::string& s) { return s; });
    check_factor<std::string>(losses, "loss", [](const std::string& s) { return s; });
    check_factor<double>(lrs, "lr", [](const double& v) { return lr_label(v); });

    std::vector<TrainConfig> out;
    out.reserve(archs.size() * losses.size() * lrs.size());
    for (const std::string& arch : archs) {
        validate_arch({arch, setting_channels(setting), base.width, base.depth});
        for (const std::string& loss : losses) {
            for (double lr : lrs) {
                TrainConfig c = base;
                c.arch = arch;
                c.loss.name = loss;
                c.learning_rate = lr;
                c.setting = setting;
                c.seed = derive_seed(global_seed, setting_name(setting) + "/" + arch + "/" +
                                                      loss + "/" + lr_label(lr));
                (void)make_loss(c.loss);  // reject unknown loss names before any training
                out.push_back(std::move(c));
            }
        }
    }
    return out;
}

std::string progress_line(const ModelRecord& record, int done, int total) {
    char buf[192];
    std::snprintf(buf, sizeof buf, "[%d/%d] setting=%s arch=%s loss=%s lr=%s val_f1=%.3f", done,
                  total, setting_name(record.config.setting).c_str(), record.config.arch.c_str(),
                  record.config.loss.name.c_str(), lr_label(record.config.learning_rate).c_str(),
                  record.best_val_f1);
    return buf;
}

std::string manifest_path(const std::string& runs_root) { return runs_root + "/manifest.json"; }

void save_matrix_manifest(const MatrixManifest& manifest, const std::string& path) {
    json j;
    j["format_version"] = 1;
    j["version"] = manifest.version;
    j["global_seed"] = manifest.global_seed;
    j["dataset_fingerprint"] = manifest.dataset_fingerprint;
    json recs = json::array();
    for (const ModelRecord& r : manifest.records) {
        json e = detail::record_to_json(r);
        e["dir"] = setting_name(r.config.setting) + "/" + session_dir_name(r.config);
        recs.push_back(std::move(e));
    }
    j["records"] = recs;
    write_text_atomic(path, j.dump(2) + "\n");
}

MatrixManifest load_matrix_manifest(const std::string& path) {
    std::ifstream in(path);
    require(bool(in), "cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("malformed manifest " + path + ": " + e.what());
    }
    MatrixManifest m;
    const std::string root = fs::path(path).parent_path().string();
    try {
        require(j.at("format_version").get<int>() == 1,
                "unsupported manifest format_version in " + path);
        m.version = j.at("version").get<std::string>();
        m.global_seed = j.at("global_seed").get<std::uint64_t>();
        m.dataset_fingerprint = j.at("dataset_fingerprint").get<std::uint64_t>();
        for (const json& e : j.at("records")) {
            const std::string dir =
                (fs::path(root) / e.at("dir").get<std::string>()).string();
            m.records.push_back(detail::record_from_json(e, dir, path));
        }
    } catch (const json::exception& e) {
        fail("malformed manifest " + path + ": " + e.what());
    }
    return m;
}

MatrixManifest run_matrix(const std::vector<TrainConfig>& configs, SceneStore& store,
                          const std::string& runs_root, const MatrixOptions& options) {
    require(!configs.empty(), "no sessions to run");
    for (std::size_t i = 0; i < configs.size(); ++i)
        for (std::size_t k = i + 1; k < configs.size(); ++k)
            require(!(configs[i] == configs[k]),
                    "duplicate session config: " + session_dir(runs_root, configs[i]));

    fs::create_directories(runs_root);
    const std::uint64_t fingerprint = store.fingerprint();
    const std::string mpath = manifest_path(runs_root);
    const int total = int(configs.size());

    std::vector<std::optional<ModelRecord>> done(configs.size());
    std::vector<ModelRecord> carried;  // prior records for configs outside this run

    if (options.resume && fs::exists(mpath)) {
        MatrixManifest prev = load_matrix_manifest(mpath);
        require(prev.dataset_fingerprint == fingerprint,
                "dataset fingerprint mismatch: manifest has " +
                    std::to_string(prev.dataset_fingerprint) + ", store has " +
                    std::to_string(fingerprint) + "; refusing to resume");
        for (ModelRecord& r : prev.records) {
            std::size_t k = configs.size();
            for (std::size_t i = 0; i < configs.size(); ++i)
                if (configs[i] == r.config) {
                    k = i;
                    break;
                }
            if (k < configs.size() && !done[k])
                done[k] = std::move(r);
            else
                carried.push_back(std::move(r));
        }
    }
    if (options.resume) {
        // Adopt sessions that finished after the last manifest write.
        for (std::size_t k = 0; k < configs.size(); ++k) {
            if (done[k]) continue;
            const std::string dir = session_dir(runs_root, configs[k]);
            if (!fs::exists(dir + "/record.json")) continue;
            try {
                ModelRecord r = load_record(dir);
                if (r.config == configs[k]) done[k] = std::move(r);
            } catch (const Error&) {
                // partial or foreign record; the session reruns
            }
        }
    }

    MatrixManifest manifest;
    manifest.global_seed = options.global_seed;
    manifest.dataset_fingerprint = fingerprint;
    auto snapshot = [&] {
        manifest.records = carried;
        for (const auto& r : done)
            if (r) manifest.records.push_back(*r);
        return manifest;
    };
    save_matrix_manifest(snapshot(), mpath);

    int count = 0;
    std::exception_ptr err;
    std::atomic<bool> stop{false};
    for (const auto& r : done) {
        if (!r) continue;
        ++count;
        if (options.progress && !stop.load()) {
            try {
                options.progress(*r, count, total);
            } catch (...) {
                err = std::current_exception();
                stop.store(true);
            }
        }
    }

    std::atomic<std::size_t> cursor{0};
    std::mutex mu;  // guards done/count/err and manifest writes
    auto worker = [&] {
        for (;;) {
            if (stop.load()) return;
            const std::size_t k = cursor.fetch_add(1);
            if (k >= configs.size()) return;
            if (done[k]) continue;
            ModelRecord rec;
            try {
                rec = train_session(configs[k], store, runs_root, options.hooks);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!err) err = std::current_exception();
                stop.store(true);
                return;
            }
            std::lock_guard<std::mutex> lock(mu);
            done[k] = std::move(rec);
            ++count;
            save_matrix_manifest(snapshot(), mpath);
            if (options.progress) {
                try {
                    options.progress(*done[k], count, total);
                } catch (...) {
                    if (!err) err = std::current_exception();
                    stop.store(true);
                }
            }
        }
    };

    if (!stop.load()) {
        const int jobs = std::clamp(options.jobs, 1, total);
        std::vector<std::thread> pool;
        pool.reserve(std::size_t(jobs));
        for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    if (err) std::rethrow_exception(err);
    return snapshot();
}

}  // namespace lsens
