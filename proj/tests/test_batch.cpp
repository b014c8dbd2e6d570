#include <gtest/gtest.h>

#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>

#include "panfuse/batch.hpp"
#include "support.hpp"

using namespace panfuse;
using namespace panfuse::batch;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("panfuse_batch_" + tag + "_" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

testsupport::SceneParams tiny_scene(std::size_t shift) {
    testsupport::SceneParams sp;
    sp.height = 64;
    sp.width = 128;
    sp.c1x = 44 + shift;
    sp.c1y = 32;
    sp.c2x = 84 + shift;
    sp.c2y = 32;
    sp.radius = 20;
    sp.split_x = 64 + shift;
    sp.gap_y = 30;
    return sp;
}

ImageJob write_scene(const fs::path& dir, const std::string& id, std::size_t shift) {
    const auto s = testsupport::make_scene(tiny_scene(shift));
    ImageJob job;
    job.id = id;
    job.probs = dir / (id + "_probs.pft");
    job.boundary = dir / (id + "_bnd.pft");
    job.out = dir / (id + "_pan.pft");
    write_tensor(s.probs, job.probs);
    write_tensor(s.soft, job.boundary);
    return job;
}

FloatMap cut(const FloatMap& m, const tiler::Crop& c) {
    FloatMap out(c.height, c.width, m.channels());
    for (std::size_t y = 0; y < c.height; ++y)
        for (std::size_t x = 0; x < c.width; ++x)
            for (std::size_t k = 0; k < m.channels(); ++k) out(y, x, k) = m(c.y + y, c.x + x, k);
    return out;
}

}  // namespace

TEST(Manifest, ParsesBothEntryKinds) {
    const auto j = nlohmann::json::parse(R"({"images": [
        {"id": "a", "probs": "a.pft", "boundary": "/abs/b.pft", "out": "o.pft", "mask": "m.pft"},
        {"width": 8, "height": 4, "out": "c.pft",
         "crops": [{"scale": 1, "x": 0, "y": 0, "w": 8, "h": 4, "probs": "p", "boundary": "q"}]}]})");
    const auto jobs = parse_manifest(j, "/base");
    ASSERT_EQ(jobs.size(), 2u);
    EXPECT_EQ(jobs[0].probs, fs::path("/base/a.pft"));
    EXPECT_EQ(jobs[0].boundary, fs::path("/abs/b.pft"));
    EXPECT_EQ(*jobs[0].mask, fs::path("/base/m.pft"));
    EXPECT_EQ(jobs[1].id, "image1");
    EXPECT_EQ(jobs[1].crops.size(), 1u);
    EXPECT_THROW(parse_manifest(nlohmann::json::parse(R"({"images": [{"id": "x"}]})"), "/"), LoadError);
    EXPECT_THROW(parse_manifest(nlohmann::json::parse("[]"), "/"), LoadError);
}

TEST(Batch, EmptyManifest) {
    const auto s = run_fuse_batch({}, PipelineConfig{}, testsupport::road_car_labels(), 4);
    EXPECT_TRUE(s.images.empty());
    EXPECT_TRUE(s.all_ok());
}

TEST(Batch, FailedImageDoesNotStopOthers) {
    TempDir dir("fail");
    std::vector<ImageJob> jobs{write_scene(dir.path, "a", 0), write_scene(dir.path, "b", 2),
                               write_scene(dir.path, "c", 4)};
    jobs[1].probs = dir.path / "missing.pft";
    std::vector<std::string> logged;
    const auto s = run_fuse_batch(jobs, PipelineConfig{}, testsupport::road_car_labels(), 2,
                                  [&](const ImageOutcome& o) { logged.push_back(o.id); });
    EXPECT_EQ(s.count(ImageOutcome::Status::Ok), 2u);
    EXPECT_EQ(s.images[1].status, ImageOutcome::Status::Failed);
    EXPECT_FALSE(s.images[1].error.empty());
    EXPECT_EQ(logged.size(), 3u);
    EXPECT_TRUE(fs::exists(jobs[2].out));
    EXPECT_EQ(to_json(s.images[1])["status"], "failed");
}

TEST(Batch, FailFastSkipsTheRest) {
    TempDir dir("ff");
    std::vector<ImageJob> jobs{write_scene(dir.path, "a", 0), write_scene(dir.path, "b", 2),
                               write_scene(dir.path, "c", 4)};
    jobs[0].boundary = dir.path / "missing.pft";
    PipelineConfig cfg;
    cfg.run.fail_fast = true;
    const auto s = run_fuse_batch(jobs, cfg, testsupport::road_car_labels(), 1);
    EXPECT_EQ(s.images[0].status, ImageOutcome::Status::Failed);
    EXPECT_EQ(s.images[1].status, ImageOutcome::Status::Skipped);
    EXPECT_EQ(s.images[2].status, ImageOutcome::Status::Skipped);
    EXPECT_FALSE(fs::exists(jobs[2].out));
}

TEST(Batch, OutputsIndependentOfThreadCount) {
    TempDir dir("det");
    std::vector<ImageJob> jobs;
    for (std::size_t i = 0; i < 5; ++i) jobs.push_back(write_scene(dir.path, "s" + std::to_string(i), i));
    const auto labels = testsupport::road_car_labels();
    std::vector<std::vector<std::vector<unsigned char>>> runs;
    for (std::size_t threads : {1, 4}) {
        ASSERT_TRUE(run_fuse_batch(jobs, PipelineConfig{}, labels, threads).all_ok());
        runs.emplace_back();
        for (const auto& j : jobs) runs.back().push_back(detail::read_file(j.out));
    }
    EXPECT_EQ(runs[0], runs[1]);
}

TEST(Batch, CropEntriesAreMergedBeforeFusion) {
    TempDir dir("crops");
    const auto scene = testsupport::make_scene(tiny_scene(0));
    PipelineConfig cfg;
    const auto plan = tiler::plan_crops(128, 64, cfg.tiler.scales, cfg.tiler.overlap);
    ImageJob job;
    job.id = "tiled";
    job.width = 128;
    job.height = 64;
    job.out = dir.path / "tiled_pan.pft";
    for (std::size_t i = 0; i < plan.crops.size(); ++i) {
        CropInput ci{plan.crops[i], dir.path / ("p" + std::to_string(i) + ".pft"),
                     dir.path / ("b" + std::to_string(i) + ".pft")};
        write_tensor(cut(scene.probs, ci.crop), ci.probs);
        write_tensor(cut(scene.soft, ci.crop), ci.boundary);
        job.crops.push_back(ci);
    }
    const auto [probs, bnd] = load_inputs(job, cfg);
    EXPECT_TRUE(std::ranges::equal(probs.values(), scene.probs.values()));
    EXPECT_TRUE(std::ranges::equal(bnd.values(), scene.soft.values()));

    ImageJob whole = write_scene(dir.path, "whole", 0);
    const auto s = run_fuse_batch({job, whole}, cfg, scene.labels, 2);
    ASSERT_TRUE(s.all_ok());
    EXPECT_EQ(detail::read_file(job.out), detail::read_file(whole.out));
}

TEST(Batch, ThreadsFromEnvironment) {
    ::unsetenv("PANFUSE_THREADS");
    EXPECT_EQ(threads_from_env(3), 3u);
    ::setenv("PANFUSE_THREADS", "6", 1);
    EXPECT_EQ(threads_from_env(3), 6u);
    ::setenv("PANFUSE_THREADS", "zero", 1);
    EXPECT_THROW(threads_from_env(3), ConfigError);
    ::setenv("PANFUSE_THREADS", "0", 1);
    EXPECT_THROW(threads_from_env(3), ConfigError);
    ::unsetenv("PANFUSE_THREADS");
}
