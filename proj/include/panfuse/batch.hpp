#pragma once

// Batch fusion over a manifest of images with a bounded worker pool.
//
// Manifest JSON:
//   {"images": [
//      {"id": "a", "probs": "a_probs.pft", "boundary": "a_bnd.pft", "out": "a_pan.pft",
//       "mask": "a_mask.pft"},                                   // mask optional
//      {"id": "b", "width": 64, "height": 48, "out": "b_pan.pft",
//       "crops": [{"scale": 2, "x": 0, "y": 0, "w": 32, "h": 24,
//                  "probs": "b_c0_probs.pft", "boundary": "b_c0_bnd.pft"}, ...]}
//   ]}
// Relative paths resolve against the manifest's directory. Crop entries are
// merged with the configured tiler scales and overlap before fusion.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "panfuse/config.hpp"
#include "panfuse/fuse.hpp"
#include "panfuse/io.hpp"
#include "panfuse/tiler.hpp"

namespace panfuse::batch {

struct CropInput {
    tiler::Crop crop;
    std::filesystem::path probs, boundary;
};

struct ImageJob {
    std::string id;
    std::filesystem::path probs, boundary, out;
    std::optional<std::filesystem::path> mask;
    std::size_t width = 0, height = 0;  // set for crop entries
    std::vector<CropInput> crops;
};

struct ImageOutcome {
    std::string id;
    enum class Status { Ok, Failed, Skipped } status = Status::Skipped;
    std::string error;
    double seconds = 0.0;
    std::vector<StageTiming> timings;
    std::vector<std::string> warnings;
};

struct Summary {
    std::vector<ImageOutcome> images;  // manifest order

    std::size_t count(ImageOutcome::Status s) const {
        return static_cast<std::size_t>(
            std::count_if(images.begin(), images.end(), [s](const ImageOutcome& o) { return o.status == s; }));
    }
    bool all_ok() const { return count(ImageOutcome::Status::Ok) == images.size(); }
};

inline std::vector<ImageJob> parse_manifest(const nlohmann::json& j, const std::filesystem::path& base) {
    if (!j.is_object() || !j.contains("images") || !j["images"].is_array())
        throw LoadError(LoadError::Kind::Format, "manifest needs an 'images' array");
    auto resolve = [&](const nlohmann::json& v) {
        std::filesystem::path p = v.get<std::string>();
        return p.is_absolute() ? p : base / p;
    };
    std::vector<ImageJob> jobs;
    try {
        for (const auto& e : j["images"]) {
            ImageJob job;
            job.id = e.value("id", "image" + std::to_string(jobs.size()));
            job.out = resolve(e.at("out"));
            if (e.contains("mask")) job.mask = resolve(e["mask"]);
            if (e.contains("crops")) {
                job.width = e.at("width").get<std::size_t>();
                job.height = e.at("height").get<std::size_t>();
                for (const auto& c : e["crops"]) {
                    CropInput ci;
                    ci.crop = {c.at("scale").get<std::size_t>(), c.at("x").get<std::size_t>(),
                               c.at("y").get<std::size_t>(), c.at("w").get<std::size_t>(),
                               c.at("h").get<std::size_t>()};
                    ci.probs = resolve(c.at("probs"));
                    ci.boundary = resolve(c.at("boundary"));
                    job.crops.push_back(std::move(ci));
                }
            } else {
                job.probs = resolve(e.at("probs"));
                job.boundary = resolve(e.at("boundary"));
            }
            jobs.push_back(std::move(job));
        }
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(LoadError::Kind::Format, std::string("manifest: ") + e.what());
    }
    return jobs;
}

inline std::vector<ImageJob> read_manifest(const std::filesystem::path& path) {
    return parse_manifest(read_json(path), path.parent_path());
}

/// Loads the full-image inputs of one job, merging crops when present.
inline std::pair<FloatMap, FloatMap> load_inputs(const ImageJob& job, const PipelineConfig& cfg) {
    if (job.crops.empty())
        return {as<float>(read_tensor(job.probs), "probs"), as<float>(read_tensor(job.boundary), "boundary")};
    const auto plan = tiler::plan_crops(job.width, job.height, cfg.tiler.scales, cfg.tiler.overlap);
    std::vector<tiler::CropPrediction> probs, bnd;
    for (const auto& c : job.crops) {
        probs.push_back({c.crop, as<float>(read_tensor(c.probs), "crop probs")});
        bnd.push_back({c.crop, as<float>(read_tensor(c.boundary), "crop boundary")});
    }
    return {tiler::merge_crops(plan, probs), tiler::merge_crops(plan, bnd)};
}

inline nlohmann::json to_json(const ImageOutcome& o) {
    static const char* names[] = {"ok", "failed", "skipped"};
    nlohmann::json stages = nlohmann::json::object();
    for (const auto& t : o.timings) stages[t.stage] = t.seconds;
    nlohmann::json j = {{"event", "image"}, {"id", o.id}, {"status", names[static_cast<int>(o.status)]},
                        {"seconds", o.seconds}, {"stages", stages}, {"warnings", o.warnings}};
    if (!o.error.empty()) j["error"] = o.error;
    return j;
}

/// Called once per finished image, serialized under a lock.
using LogSink = std::function<void(const ImageOutcome&)>;

/// Reads PANFUSE_THREADS when set; otherwise returns `fallback`.
inline std::size_t threads_from_env(std::size_t fallback) {
    const char* env = std::getenv("PANFUSE_THREADS");
    if (!env || !*env) return fallback;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError("PANFUSE_THREADS must be a positive integer");
    return static_cast<std::size_t>(v);
}

inline ImageOutcome process_one(const ImageJob& job, const FuseConfig& fuse_cfg, const PipelineConfig& cfg,
                                const LabelSpec& labels) {
    ImageOutcome o;
    o.id = job.id;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        auto [probs, bnd] = load_inputs(job, cfg);
        std::optional<BinaryMap> mask;
        if (job.mask) mask = as<std::uint8_t>(read_tensor(*job.mask), "mask");
        auto res = fuse(probs, bnd, labels, fuse_cfg, mask ? &*mask : nullptr);
        write_tensor(panoptic_to_dense(res.panoptic), job.out);
        o.timings = std::move(res.timings);
        o.warnings = std::move(res.warnings);
        o.status = ImageOutcome::Status::Ok;
    } catch (const std::exception& e) {
        o.status = ImageOutcome::Status::Failed;
        o.error = e.what();
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return o;
}

/// Each image is fused independently; the output files do not depend on the
/// number of workers. With `fail_fast`, images not yet started after the first
/// failure are reported as skipped.
inline Summary run_fuse_batch(const std::vector<ImageJob>& jobs, const PipelineConfig& cfg,
                              const LabelSpec& labels, std::size_t threads, const LogSink& log = {}) {
    cfg.validate();
    Summary summary;
    summary.images.resize(jobs.size());
    for (std::size_t i = 0; i < jobs.size(); ++i) summary.images[i].id = jobs[i].id;
    if (jobs.empty()) return summary;

    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::mutex log_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            if (stop.load()) continue;  // leaves the outcome as skipped
            ImageOutcome o = process_one(jobs[i], cfg.fuse, cfg, labels);
            if (o.status == ImageOutcome::Status::Failed && cfg.run.fail_fast) stop.store(true);
            if (log) {
                std::lock_guard lock(log_mutex);
                log(o);
            }
            summary.images[i] = std::move(o);
        }
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(threads, jobs.size()));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return summary;
}

}  // namespace panfuse::batch
