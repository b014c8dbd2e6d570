#include <gtest/gtest.h>

#include <algorithm>

#include "panfuse/sampler.hpp"
#include "support.hpp"

using namespace panfuse;
using namespace panfuse::sampler;

namespace {

std::vector<FeatureVector> random_features(testsupport::Rng& rng, std::size_t n, std::size_t d, const char* prefix) {
    std::vector<FeatureVector> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].image_id = std::string(prefix) + std::to_string(i);
        for (std::size_t k = 0; k < d; ++k) out[i].values.push_back(static_cast<float>(testsupport::uniform(rng, -1, 1)));
    }
    return out;
}

}  // namespace

TEST(Cosine, KnownValues) {
    const FeatureVector a{"a", {1, 0}}, b{"b", {0, 2}}, c{"c", {-3, 0}}, d{"d", {1, 1}};
    EXPECT_DOUBLE_EQ(cosine_similarity(a, b), 0.0);
    EXPECT_DOUBLE_EQ(cosine_similarity(a, c), -1.0);
    EXPECT_NEAR(cosine_similarity(a, d), std::sqrt(0.5), 1e-15);
    EXPECT_THROW(cosine_similarity(a, FeatureVector{"z", {0, 0}}), ValidationError);
    EXPECT_THROW(cosine_similarity(a, FeatureVector{"z", {1}}), ValidationError);
}

TEST(Select, WithoutDedupeEqualsFullSort) {
    testsupport::Rng rng(6);
    const auto l = random_features(rng, 5, 8, "l");
    const auto u = random_features(rng, 40, 8, "u");
    SamplerConfig cfg;
    cfg.n_neighbors = 7;
    cfg.dedupe = false;
    const auto sel = select_neighbors(l, u, cfg);
    for (const auto& p : sel.picks) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t j = 0; j < u.size(); ++j) all.emplace_back(-cosine_similarity(l[p.labeled], u[j]), j);
        std::sort(all.begin(), all.end());
        for (std::size_t k = 0; k < 7; ++k) EXPECT_EQ(p.unlabeled[k], all[k].second);
    }
}

TEST(Select, DedupeHandsOutEachImageOnce) {
    testsupport::Rng rng(9);
    const auto l = random_features(rng, 6, 4, "l");
    const auto u = random_features(rng, 20, 4, "u");
    const auto sel = select_neighbors(l, u, SamplerConfig{3, true});
    std::vector<std::size_t> seen;
    for (const auto& p : sel.picks) {
        EXPECT_EQ(p.unlabeled.size(), 3u);
        EXPECT_TRUE(std::is_sorted(p.similarity.rbegin(), p.similarity.rend()));
        seen.insert(seen.end(), p.unlabeled.begin(), p.unlabeled.end());
    }
    std::sort(seen.begin(), seen.end());
    EXPECT_EQ(std::adjacent_find(seen.begin(), seen.end()), seen.end());
    EXPECT_TRUE(sel.warnings.empty());
}

TEST(Select, ShortListsWarn) {
    testsupport::Rng rng(1);
    const auto l = random_features(rng, 3, 4, "l");
    const auto u = random_features(rng, 4, 4, "u");
    const auto sel = select_neighbors(l, u, SamplerConfig{2, true});
    EXPECT_EQ(sel.picks[2].unlabeled.size(), 0u);
    EXPECT_EQ(sel.warnings.size(), 1u);
}

TEST(Select, TiesBrokenByIndex) {
    const std::vector<FeatureVector> l{{"l", {1, 0}}};
    const std::vector<FeatureVector> u{{"a", {0, 1}}, {"b", {2, 0}}, {"c", {1, 0}}, {"d", {5, 0}}};
    const auto sel = select_neighbors(l, u, SamplerConfig{3, true});
    EXPECT_EQ(sel.picks[0].unlabeled, (std::vector<std::size_t>{1, 2, 3}));
}

TEST(Select, ScaleInvariant) {
    testsupport::Rng rng(12);
    auto l = random_features(rng, 4, 6, "l");
    auto u = random_features(rng, 30, 6, "u");
    const auto a = select_neighbors(l, u, SamplerConfig{4, true});
    for (auto* set : {&l, &u})
        for (auto& f : *set) {
            const auto k = static_cast<float>(std::pow(2.0, testsupport::randint(rng, -3, 3)));
            for (auto& v : f.values) v *= k;
        }
    const auto b = select_neighbors(l, u, SamplerConfig{4, true});
    for (std::size_t i = 0; i < a.picks.size(); ++i) EXPECT_EQ(a.picks[i].unlabeled, b.picks[i].unlabeled);
}

TEST(Select, RejectsBadInput) {
    const std::vector<FeatureVector> l{{"l", {1, 0}}};
    EXPECT_THROW(select_neighbors(l, {}, SamplerConfig{}), ValidationError);
    EXPECT_THROW(select_neighbors(l, {{"u", {1, 0, 0}}}, SamplerConfig{}), ValidationError);
    EXPECT_THROW(select_neighbors(l, {{"u", {1, 0}}}, SamplerConfig{0, true}), ValidationError);
}
