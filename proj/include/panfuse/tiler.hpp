#pragma once

// Overlapping multi-scale crop geometry and the per-pixel averaging merge of
// crop predictions.

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "panfuse/core.hpp"

namespace panfuse::tiler {

struct Crop {
    std::size_t scale = 1;
    std::size_t x = 0;
    std::size_t y = 0;
    std::size_t width = 0;
    std::size_t height = 0;
    friend bool operator==(const Crop&, const Crop&) = default;
};

struct CropPlan {
    std::size_t image_width = 0;
    std::size_t image_height = 0;
    std::vector<std::size_t> scales;
    std::size_t overlap = 1;
    std::vector<Crop> crops;  // grouped by scale in `scales` order, then raster order
};

struct CropPrediction {
    Crop crop;
    FloatMap map;
};

/// Offsets along one axis: a regular grid with stride size/z, plus a final
/// crop aligned to the far edge when the grid stops short of it.
inline std::vector<std::size_t> axis_offsets(std::size_t length, std::size_t crop,
                                             std::size_t overlap) {
    const std::size_t stride = std::max<std::size_t>(1, crop / overlap);
    std::vector<std::size_t> offsets;
    std::size_t last = length - crop;
    for (std::size_t o = 0; o <= last; o += stride) offsets.push_back(o);
    if (offsets.back() != last) offsets.push_back(last);
    return offsets;
}

inline CropPlan plan_crops(std::size_t width, std::size_t height,
                           const std::vector<std::size_t>& scales, std::size_t overlap) {
    if (width == 0 || height == 0) throw ValidationError("plan_crops: image dimensions must be positive");
    if (overlap == 0) throw ValidationError("plan_crops: overlap must be >= 1");
    if (scales.empty()) throw ValidationError("plan_crops: at least one scale is required");
    CropPlan plan{width, height, scales, overlap, {}};
    for (std::size_t i = 0; i < scales.size(); ++i)
        for (std::size_t j = i + 1; j < scales.size(); ++j)
            if (scales[i] == scales[j]) throw ValidationError("plan_crops: duplicate scale");
    for (std::size_t s : scales) {
        if (s == 0) throw ValidationError("plan_crops: scale must be >= 1");
        if (s > width || s > height)
            throw ValidationError("plan_crops: scale " + std::to_string(s) + " exceeds image size");
        const std::size_t cw = width / s;
        const std::size_t ch = height / s;
        const auto xs = axis_offsets(width, cw, overlap);
        const auto ys = axis_offsets(height, ch, overlap);
        for (std::size_t y : ys)
            for (std::size_t x : xs) plan.crops.push_back({s, x, y, cw, ch});
    }
    return plan;
}

/// Per scale, each pixel is the mean over the crops covering it; scales are
/// then averaged with equal weight. Accumulation is float64; `Out` selects
/// the element type of the result (float for PFT export).
template <typename Out = float>
Raster<Out> merge_crops(const CropPlan& plan, const std::vector<CropPrediction>& preds) {
    if (preds.size() != plan.crops.size())
        throw ValidationError("merge_crops: expected " + std::to_string(plan.crops.size()) +
                              " crop predictions, got " + std::to_string(preds.size()));
    if (preds.empty()) throw ValidationError("merge_crops: empty plan");
    const std::size_t channels = preds.front().map.channels();

    // Match predictions to planned crops so the result does not depend on list order.
    std::vector<const CropPrediction*> slot(plan.crops.size(), nullptr);
    for (const auto& p : preds) {
        auto it = std::find(plan.crops.begin(), plan.crops.end(), p.crop);
        if (it == plan.crops.end())
            throw ValidationError("merge_crops: prediction for an unplanned crop");
        auto& s = slot[static_cast<std::size_t>(it - plan.crops.begin())];
        if (s) throw ValidationError("merge_crops: duplicate crop prediction");
        if (p.map.height() != p.crop.height || p.map.width() != p.crop.width)
            throw ValidationError("merge_crops: crop map shape " + to_string(p.map.shape()) +
                                  " does not match crop geometry");
        if (p.map.channels() != channels)
            throw ValidationError("merge_crops: inconsistent channel count");
        s = &p;
    }

    const std::size_t w = plan.image_width, h = plan.image_height;
    std::vector<double> total(w * h * channels, 0.0);
    std::vector<double> sum(w * h * channels);
    std::vector<std::size_t> count(w * h);
    std::size_t k = 0;
    for (std::size_t s : plan.scales) {
        std::fill(sum.begin(), sum.end(), 0.0);
        std::fill(count.begin(), count.end(), 0);
        for (; k < plan.crops.size() && plan.crops[k].scale == s; ++k) {
            const Crop& c = plan.crops[k];
            const FloatMap& m = slot[k]->map;
            for (std::size_t y = 0; y < c.height; ++y) {
                for (std::size_t x = 0; x < c.width; ++x) {
                    const std::size_t p = (c.y + y) * w + (c.x + x);
                    ++count[p];
                    auto px = m.pixel(y, x);
                    for (std::size_t ch = 0; ch < channels; ++ch) sum[p * channels + ch] += px[ch];
                }
            }
        }
        for (std::size_t p = 0; p < w * h; ++p) {
            if (count[p] == 0) throw ValidationError("merge_crops: pixel not covered at scale " + std::to_string(s));
            for (std::size_t ch = 0; ch < channels; ++ch)
                total[p * channels + ch] += sum[p * channels + ch] / static_cast<double>(count[p]);
        }
    }
    Raster<Out> out(h, w, channels);
    const double n_scales = static_cast<double>(plan.scales.size());
    for (std::size_t i = 0; i < total.size(); ++i) out[i] = static_cast<Out>(total[i] / n_scales);
    return out;
}

}  // namespace panfuse::tiler
