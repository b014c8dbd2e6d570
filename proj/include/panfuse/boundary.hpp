#pragma once

// Binary boundary maps: thresholding of the soft boundary, removal of small
// boundary fragments, stuff/thing transitions and training-label generation.
// Binary maps store 1 = boundary unless stated otherwise.

#include <cstdint>

#include "panfuse/components.hpp"
#include "panfuse/core.hpp"

namespace panfuse::boundary {

struct BoundaryConfig {
    double lambda_b = 0.5;
    std::size_t min_boundary_size = 64;

    void validate() const {
        if (!(lambda_b > 0.0 && lambda_b < 1.0))
            throw ValidationError("boundary.lambda_b must lie in (0,1)");
    }
};

inline BinaryMap threshold_boundary(const FloatMap& soft, const BoundaryConfig& cfg) {
    cfg.validate();
    validate_unit_interval(soft, "soft boundary");
    BinaryMap out(soft.height(), soft.width());
    for (std::size_t i = 0; i < soft.pixels(); ++i)
        out[i] = static_cast<double>(soft[i]) > cfg.lambda_b ? 1 : 0;
    return out;
}

/// Drops 8-connected boundary components smaller than min_boundary_size.
inline BinaryMap denoise_boundary(const BinaryMap& binary, const BoundaryConfig& cfg) {
    BinaryMap out = binary;
    if (cfg.min_boundary_size == 0) return out;
    const auto cc = connected_components(binary, Connectivity::Eight,
                                         [](std::uint8_t v) { return v != 0; });
    for (std::size_t i = 0; i < binary.pixels(); ++i) {
        const auto id = cc.ids[i];
        if (id != 0 && cc[id].pixel_count < cfg.min_boundary_size) out[i] = 0;
    }
    return out;
}

/// Marks thing pixels 4-adjacent to a stuff pixel and vice versa. Ignore
/// pixels are neither.
inline BinaryMap stuff_thing_boundaries(const ClassMap& semantic, const LabelSpec& labels) {
    validate_classes(semantic, labels, /*allow_ignore=*/true);
    const std::size_t h = semantic.height(), w = semantic.width();
    BinaryMap out(h, w);
    auto kind = [&](std::size_t y, std::size_t x) {
        const ClassId c = semantic(y, x);
        return labels.is_thing(c) ? 1 : labels.is_stuff(c) ? 2 : 0;
    };
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const int k = kind(y, x);
            if (k == 0) continue;
            const int other = 3 - k;
            if ((y > 0 && kind(y - 1, x) == other) || (y + 1 < h && kind(y + 1, x) == other) ||
                (x > 0 && kind(y, x - 1) == other) || (x + 1 < w && kind(y, x + 1) == other))
                out(y, x) = 1;
        }
    }
    return out;
}

/// Training labels for the boundary head: 0 where a thing pixel's panoptic id
/// differs from any of its 8 neighbours, 1 everywhere else.
inline BinaryMap boundary_labels_from_instances(const PanopticMap& gt, const LabelSpec& labels) {
    const std::size_t h = gt.height(), w = gt.width();
    BinaryMap out(h, w, 1, 1);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const PanId id = gt(y, x);
            if (!labels.is_thing(decode_pan(id).class_id)) continue;
            bool differs = false;
            for (int dy = -1; dy <= 1 && !differs; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    const auto ny = static_cast<std::ptrdiff_t>(y) + dy;
                    const auto nx = static_cast<std::ptrdiff_t>(x) + dx;
                    if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(h) ||
                        nx >= static_cast<std::ptrdiff_t>(w))
                        continue;
                    if (gt(static_cast<std::size_t>(ny), static_cast<std::size_t>(nx)) != id) {
                        differs = true;
                        break;
                    }
                }
            }
            if (differs) out(y, x) = 0;
        }
    }
    return out;
}

inline BinaryMap merge_boundaries(const BinaryMap& a, const BinaryMap& b) {
    require_same_size(a.shape(), b.shape(), "merge_boundaries");
    BinaryMap out = a;
    for (std::size_t i = 0; i < out.pixels(); ++i) out[i] = (a[i] | b[i]) ? 1 : 0;
    return out;
}

}  // namespace panfuse::boundary
