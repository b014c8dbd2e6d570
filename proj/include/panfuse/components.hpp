#pragma once

// Connected-component labelling of integer label maps.

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include "panfuse/core.hpp"

namespace panfuse {

enum class Connectivity : int { Four = 4, Eight = 8 };

struct BoundingBox {
    std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // inclusive
};

struct Segment {
    std::uint32_t id = 0;
    std::size_t pixel_count = 0;
    BoundingBox box;
    std::uint32_t label = 0;  // value of the source map inside the segment
    std::size_t first_pixel = 0;
};

/// Per-pixel segment ids (0 = unassigned, otherwise 1..n) plus segment stats.
struct SegmentTable {
    Raster<std::uint32_t> ids;
    std::vector<Segment> segments;  // segments[k].id == k + 1

    std::size_t size() const noexcept { return segments.size(); }
    const Segment& operator[](std::uint32_t id) const { return segments.at(id - 1); }

    /// Pixel indices of every segment, in raster order.
    std::vector<std::vector<std::size_t>> members() const {
        std::vector<std::vector<std::size_t>> out(segments.size());
        for (std::size_t k = 0; k < segments.size(); ++k) out[k].reserve(segments[k].pixel_count);
        for (std::size_t i = 0; i < ids.pixels(); ++i)
            if (ids[i] != 0) out[ids[i] - 1].push_back(i);
        return out;
    }
};

namespace detail {

inline std::vector<std::pair<int, int>> neighbor_offsets(Connectivity conn) {
    if (conn == Connectivity::Four) return {{-1, 0}, {0, -1}, {0, 1}, {1, 0}};
    return {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}};
}

}  // namespace detail

/// Labels maximal regions of equal value. Ids follow the raster order of each
/// region's first pixel. Pixels for which `include(value)` is false are left
/// unassigned (id 0).
template <typename T, typename Pred>
SegmentTable connected_components(const Raster<T>& map, Connectivity conn, Pred include) {
    const std::size_t h = map.height(), w = map.width();
    SegmentTable table{Raster<std::uint32_t>(h, w), {}};
    const auto offsets = detail::neighbor_offsets(conn);
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (table.ids[start] != 0 || !include(map[start])) continue;
        if (table.segments.size() == std::numeric_limits<std::uint32_t>::max() - 1)
            throw ValidationError("connected_components: too many segments");
        const auto id = static_cast<std::uint32_t>(table.segments.size() + 1);
        const T value = map[start];
        Segment seg{id, 0, {start / w, start % w, start / w, start % w},
                    static_cast<std::uint32_t>(value), start};
        table.ids[start] = id;
        stack.assign(1, start);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            const std::size_t y = p / w, x = p % w;
            ++seg.pixel_count;
            seg.box.y0 = std::min(seg.box.y0, y);
            seg.box.y1 = std::max(seg.box.y1, y);
            seg.box.x0 = std::min(seg.box.x0, x);
            seg.box.x1 = std::max(seg.box.x1, x);
            for (auto [dy, dx] : offsets) {
                const auto ny = static_cast<std::ptrdiff_t>(y) + dy;
                const auto nx = static_cast<std::ptrdiff_t>(x) + dx;
                if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(h) ||
                    nx >= static_cast<std::ptrdiff_t>(w))
                    continue;
                const std::size_t q = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
                if (table.ids[q] == 0 && map[q] == value) {
                    table.ids[q] = id;
                    stack.push_back(q);
                }
            }
        }
        table.segments.push_back(seg);
    }
    return table;
}

template <typename T>
SegmentTable connected_components(const Raster<T>& map, Connectivity conn) {
    return connected_components(map, conn, [](T) { return true; });
}

}  // namespace panfuse
