#pragma once

// Selection of unlabeled images for self-training: for every labeled image,
// the unlabeled images whose feature vectors have the highest cosine
// similarity.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "panfuse/core.hpp"

namespace panfuse::sampler {

struct SamplerConfig {
    std::size_t n_neighbors = 5;
    bool dedupe = true;

    void validate() const {
        if (n_neighbors == 0) throw ValidationError("sampler.n_neighbors must be >= 1");
    }
};

inline double norm(const std::vector<float>& v) {
    double s = 0.0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

inline double cosine_similarity(const FeatureVector& a, const FeatureVector& b) {
    if (a.values.size() != b.values.size())
        throw ValidationError("cosine_similarity: dimension mismatch");
    const double na = norm(a.values), nb = norm(b.values);
    if (na == 0.0 || nb == 0.0) throw ValidationError("cosine_similarity: zero-norm vector");
    double dot = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i)
        dot += static_cast<double>(a.values[i]) * b.values[i];
    return std::clamp(dot / (na * nb), -1.0, 1.0);
}

struct Pick {
    std::size_t labeled = 0;               // index into the labeled list
    std::vector<std::size_t> unlabeled;    // indices into the unlabeled list, best first
    std::vector<double> similarity;
};

struct Selection {
    std::vector<Pick> picks;
    std::vector<std::string> warnings;
};

/// Ranks unlabeled images per labeled image by descending similarity (ties by
/// ascending index). With dedupe, labeled images are served in order and each
/// unlabeled image is handed out at most once.
inline Selection select_neighbors(const std::vector<FeatureVector>& labeled,
                                  const std::vector<FeatureVector>& unlabeled,
                                  const SamplerConfig& cfg) {
    cfg.validate();
    if (labeled.empty() || unlabeled.empty()) throw ValidationError("select_neighbors: empty feature set");
    const std::size_t d = labeled.front().values.size();
    for (const auto* set : {&labeled, &unlabeled})
        for (const auto& f : *set)
            if (f.values.size() != d) throw ValidationError("select_neighbors: inconsistent feature dimension");

    Selection out;
    std::vector<bool> taken(unlabeled.size(), false);
    std::vector<double> sim(unlabeled.size());
    std::vector<std::size_t> order(unlabeled.size());
    for (std::size_t l = 0; l < labeled.size(); ++l) {
        for (std::size_t u = 0; u < unlabeled.size(); ++u) sim[u] = cosine_similarity(labeled[l], unlabeled[u]);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
        Pick pick{l, {}, {}};
        for (std::size_t u : order) {
            if (pick.unlabeled.size() == cfg.n_neighbors) break;
            if (cfg.dedupe && taken[u]) continue;
            pick.unlabeled.push_back(u);
            pick.similarity.push_back(sim[u]);
            if (cfg.dedupe) taken[u] = true;
        }
        if (pick.unlabeled.size() < cfg.n_neighbors)
            out.warnings.push_back("labeled image " + labeled[l].image_id + " received only " +
                                   std::to_string(pick.unlabeled.size()) + " of " +
                                   std::to_string(cfg.n_neighbors) + " neighbours");
        out.picks.push_back(std::move(pick));
    }
    return out;
}

}  // namespace panfuse::sampler
