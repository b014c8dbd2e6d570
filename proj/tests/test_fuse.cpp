#include <gtest/gtest.h>

#include <set>

#include "panfuse/fuse.hpp"
#include "panfuse/metrics.hpp"
#include "support.hpp"

using namespace panfuse;

namespace {

testsupport::SceneParams small_scene() {
    testsupport::SceneParams sp;
    sp.height = 128;
    sp.width = 256;
    sp.c1x = 96;
    sp.c1y = 64;
    sp.c2x = 160;
    sp.c2y = 64;
    sp.radius = 40;
    sp.split_x = 128;
    sp.gap_y = 62;
    return sp;
}

std::set<PanId> ids_of(const PanopticMap& m) { return {m.values().begin(), m.values().end()}; }

}  // namespace

TEST(Fuse, TwoTouchingDisksBecomeTwoInstances) {
    const auto scene = testsupport::make_scene(small_scene());
    const auto res = fuse(scene.probs, scene.soft, scene.labels, FuseConfig{});
    EXPECT_EQ(ids_of(res.panoptic), (std::set<PanId>{0, 1001, 1002}));
    const auto report = metrics::panoptic_quality(res.panoptic, scene.gt, scene.labels);
    EXPECT_NEAR(report.pq, 1.0, 1e-9);
    EXPECT_NO_THROW(validate_panoptic(res.panoptic, scene.labels));
}

TEST(Fuse, RecordsEveryStageInOrder) {
    const auto scene = testsupport::make_scene(small_scene());
    const auto res = fuse(scene.probs, scene.soft, scene.labels, FuseConfig{});
    std::vector<std::string> stages;
    for (const auto& t : res.timings) stages.push_back(t.stage);
    EXPECT_EQ(stages, (std::vector<std::string>{"validate", "argmax", "affinity", "boundary", "stuff_thing",
                                                "majority_vote", "cca", "filter_things", "filter_stuff", "ncut",
                                                "assemble", "fill_holes"}));
}

TEST(Fuse, MaskedPixelsStayIgnore) {
    const auto scene = testsupport::make_scene(small_scene());
    BinaryMap mask(scene.probs.height(), scene.probs.width());
    for (std::size_t y = 110; y < 128; ++y)
        for (std::size_t x = 0; x < 256; ++x) mask(y, x) = 1;
    const auto res = fuse(scene.probs, scene.soft, scene.labels, FuseConfig{}, &mask);
    const PanId ignore = ignore_pan(scene.labels);
    for (std::size_t i = 0; i < mask.pixels(); ++i) {
        if (mask[i])
            ASSERT_EQ(res.panoptic[i], ignore);
        else
            ASSERT_NE(res.panoptic[i], ignore);
    }
}

TEST(Fuse, IsDeterministic) {
    auto sp = small_scene();
    sp.gap = 3;
    const auto scene = testsupport::make_scene(sp);
    const auto a = fuse(scene.probs, scene.soft, scene.labels, FuseConfig{});
    const auto b = fuse(scene.probs, scene.soft, scene.labels, FuseConfig{});
    EXPECT_EQ(a.panoptic, b.panoptic);
}

TEST(Fuse, SmallThingBecomesFilledFromItsSurroundings) {
    const auto l = testsupport::road_car_labels();
    FloatMap probs(64, 64, 2);
    for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x) {
            const bool car = y >= 30 && y < 32 && x >= 30 && x < 32;
            probs(y, x, 0) = car ? 0.1f : 0.9f;
            probs(y, x, 1) = car ? 0.9f : 0.1f;
        }
    FuseConfig cfg;
    cfg.refine.scale_sizes = false;
    cfg.refine.min_stuff_size = 10;
    const auto res = fuse(probs, FloatMap(64, 64), l, cfg);
    EXPECT_EQ(ids_of(res.panoptic), (std::set<PanId>{0}));
}

TEST(Fuse, ErrorsNameTheFailingStage) {
    const auto l = testsupport::road_car_labels();
    FloatMap probs(8, 8, 2);  // all zeros: not a distribution
    try {
        fuse(probs, FloatMap(8, 8), l, FuseConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.stage(), "validate");
    }
    FuseConfig bad;
    bad.ncut.radius = 0;
    EXPECT_THROW(fuse(probs, FloatMap(8, 8), l, bad), Error);
}

TEST(Fuse, AllIgnoreWarnsInsteadOfFailing) {
    const auto scene = testsupport::make_scene(small_scene());
    BinaryMap mask(scene.probs.height(), scene.probs.width(), 1, 1);
    const auto res = fuse(scene.probs, scene.soft, scene.labels, FuseConfig{}, &mask);
    EXPECT_EQ(ids_of(res.panoptic), (std::set<PanId>{ignore_pan(scene.labels)}));
    EXPECT_FALSE(res.warnings.empty());
}

TEST(Fuse, KeepsSegmentDiagnostics) {
    const auto scene = testsupport::make_scene(small_scene());
    const auto res = fuse(scene.probs, scene.soft, scene.labels, FuseConfig{}, nullptr, true);
    ASSERT_EQ(res.segments.size(), 1u);
    EXPECT_EQ(res.segments[0].class_id, 1);
    EXPECT_EQ(res.segments[0].delineation.instances.size(), 2u);
}
