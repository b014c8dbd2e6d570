#pragma once

// Segment-level refinement of the semantic map: majority voting inside
// boundary-enclosed areas, size/boundary-support/surroundedness filters and
// nearest-neighbour hole filling.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "panfuse/components.hpp"
#include "panfuse/core.hpp"

namespace panfuse::refine {

struct RefineConfig {
    std::size_t min_thing_size = 200;
    std::size_t min_stuff_size = 2048;
    Connectivity connectivity = Connectivity::Four;
    // Sizes above hold at this image area and scale linearly with it when
    // scale_sizes is set.
    std::size_t reference_pixels = 1024 * 2048;
    bool scale_sizes = true;

    double scale_for(std::size_t pixels) const {
        return scale_sizes ? static_cast<double>(pixels) / static_cast<double>(reference_pixels) : 1.0;
    }
    double thing_threshold(std::size_t pixels) const { return min_thing_size * scale_for(pixels); }
    double stuff_threshold(std::size_t pixels) const { return min_stuff_size * scale_for(pixels); }

    void validate() const {
        if (reference_pixels == 0) throw ValidationError("refine.reference_pixels must be positive");
    }
};

/// Every pixel of each region takes the most frequent class of the region;
/// ties go to the lowest id. Pixels outside all regions keep their class.
inline ClassMap majority_vote(const ClassMap& semantic, const SegmentTable& regions) {
    require_same_size(semantic.shape(), regions.ids.shape(), "majority_vote");
    std::vector<std::map<ClassId, std::size_t>> hist(regions.size());
    for (std::size_t i = 0; i < semantic.pixels(); ++i)
        if (const auto id = regions.ids[i]; id != 0) ++hist[id - 1][semantic[i]];
    std::vector<ClassId> winner(regions.size());
    for (std::size_t k = 0; k < regions.size(); ++k) {
        if (hist[k].empty()) throw ValidationError("majority_vote: empty region " + std::to_string(k + 1));
        std::size_t best = 0;
        for (const auto& [cls, n] : hist[k]) {  // ascending class id
            if (n > best) {
                best = n;
                winner[k] = cls;
            }
        }
    }
    ClassMap out = semantic;
    for (std::size_t i = 0; i < out.pixels(); ++i)
        if (const auto id = regions.ids[i]; id != 0) out[i] = winner[id - 1];
    return out;
}

/// Class that fully surrounds a region: every 4-neighbour outside the region
/// carries this one class. Regions touching the image border have none.
inline std::optional<ClassId> surrounding_class(const ClassMap& semantic, const SegmentTable& regions,
                                                std::uint32_t id, const std::vector<std::size_t>& pixels) {
    const std::size_t h = semantic.height(), w = semantic.width();
    std::optional<ClassId> found;
    for (std::size_t p : pixels) {
        const std::size_t y = p / w, x = p % w;
        if (y == 0 || x == 0 || y + 1 == h || x + 1 == w) return std::nullopt;
        for (std::size_t q : {p - w, p - 1, p + 1, p + w}) {
            if (regions.ids[q] == id) continue;
            if (found && *found != semantic[q]) return std::nullopt;
            found = semantic[q];
        }
    }
    return found;
}

namespace detail {

inline ClassMap filter_segments(const ClassMap& semantic, const BinaryMap* head_boundary,
                                const SegmentTable& regions, const LabelSpec& labels,
                                const RefineConfig& cfg, bool things) {
    require_same_size(semantic.shape(), regions.ids.shape(), "filter");
    cfg.validate();
    const double min_size = things ? cfg.thing_threshold(semantic.pixels())
                                   : cfg.stuff_threshold(semantic.pixels());
    const auto members = regions.members();
    ClassMap out = semantic;
    for (std::size_t k = 0; k < regions.size(); ++k) {
        const auto& pixels = members[k];
        if (pixels.empty()) continue;
        const ClassId cls = semantic[pixels.front()];
        if (things ? !labels.is_thing(cls) : !labels.is_stuff(cls)) continue;
        // Order: size, boundary support, surroundedness.
        bool drop = static_cast<double>(pixels.size()) < min_size;
        if (!drop && head_boundary) {
            drop = std::none_of(pixels.begin(), pixels.end(),
                                [&](std::size_t p) { return (*head_boundary)[p] != 0; });
        }
        if (!drop) {
            const auto around = surrounding_class(semantic, regions, static_cast<std::uint32_t>(k + 1), pixels);
            drop = around && labels.is_thing(*around) && *around != cls;
        }
        if (drop)
            for (std::size_t p : pixels) out[p] = labels.ignore_id();
    }
    return out;
}

}  // namespace detail

/// Sets thing segments to ignore when they are too small, carry no predicted
/// boundary pixel, or are fully surrounded by one other thing class.
inline ClassMap filter_things(const ClassMap& semantic, const BinaryMap& head_boundary,
                              const SegmentTable& regions, const LabelSpec& labels,
                              const RefineConfig& cfg) {
    require_same_size(semantic.shape(), head_boundary.shape(), "filter_things");
    return detail::filter_segments(semantic, &head_boundary, regions, labels, cfg, true);
}

/// Stuff counterpart of filter_things without the boundary-support test.
inline ClassMap filter_stuff(const ClassMap& semantic, const SegmentTable& regions,
                             const LabelSpec& labels, const RefineConfig& cfg) {
    return detail::filter_segments(semantic, nullptr, regions, labels, cfg, false);
}

// ---------------------------------------------------------------------------
// Hole filling

class NothingToPropagate : public Error {
public:
    NothingToPropagate() : Error("fill_holes", "every pixel is ignore; nothing to propagate") {}
};

/// Each ignore pixel takes the pan_id of the nearest non-ignore pixel
/// (Euclidean distance; ties go to the source first in raster order). Pixels
/// set in `exclude` are neither filled nor used as sources.
inline PanopticMap fill_holes(const PanopticMap& pan, const LabelSpec& labels,
                              const BinaryMap* exclude = nullptr) {
    if (exclude) require_same_size(pan.shape(), exclude->shape(), "fill_holes");
    const std::size_t h = pan.height(), w = pan.width();
    const PanId hole = ignore_pan(labels);
    auto is_source = [&](std::size_t i) { return pan[i] != hole && !(exclude && (*exclude)[i]); };

    constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
    // Column pass: nearest source row per pixel within its column, upper wins ties.
    std::vector<std::size_t> col_src(h * w, kNone);
    bool any = false;
    for (std::size_t x = 0; x < w; ++x) {
        std::size_t last = kNone;
        for (std::size_t y = 0; y < h; ++y) {
            if (is_source(y * w + x)) last = y;
            col_src[y * w + x] = last;
        }
        last = kNone;
        for (std::size_t y = h; y-- > 0;) {
            if (is_source(y * w + x)) last = y;
            if (last == kNone) continue;
            any = true;
            std::size_t& cur = col_src[y * w + x];
            if (cur == kNone || last - y < y - cur) cur = last;
        }
    }
    if (!any) throw NothingToPropagate();

    PanopticMap out = pan;
    auto dy2 = [&](std::size_t y, std::size_t x) -> std::uint64_t {
        const std::size_t s = col_src[y * w + x];
        if (s == kNone) return std::numeric_limits<std::uint64_t>::max();
        const std::uint64_t d = s > y ? s - y : y - s;
        return d * d;
    };
    // Row pass: widen the column window until it cannot beat the best distance.
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t i = y * w + x;
            if (pan[i] != hole || (exclude && (*exclude)[i])) continue;
            std::uint64_t best = std::numeric_limits<std::uint64_t>::max();
            std::size_t best_y = kNone, best_x = kNone;
            auto consider = [&](std::size_t cx, std::uint64_t r2) {
                const std::uint64_t g = dy2(y, cx);
                if (g == std::numeric_limits<std::uint64_t>::max()) return;
                const std::uint64_t d = r2 + g;
                const std::size_t sy = col_src[y * w + cx];
                if (d < best || (d == best && (sy < best_y || (sy == best_y && cx < best_x)))) {
                    best = d;
                    best_y = sy;
                    best_x = cx;
                }
            };
            for (std::size_t r = 0;; ++r) {
                const std::uint64_t r2 = static_cast<std::uint64_t>(r) * r;
                if (r2 > best || (r > x && x + r >= w)) break;
                if (r <= x) consider(x - r, r2);
                if (r > 0 && x + r < w) consider(x + r, r2);
            }
            out[i] = pan[best_y * w + best_x];
        }
    }
    return out;
}

}  // namespace panfuse::refine
