#pragma once

// Colorization of panoptic maps. Stuff pixels take their class color, thing
// instances a per-instance shift of it, ignore pixels the ignore color.

#include <array>
#include <cstdint>
#include <vector>

#include "json.hpp"

#include "panfuse/core.hpp"

namespace panfuse::viz {

using Rgb = std::array<std::uint8_t, 3>;

struct ColorMap {
    std::vector<Rgb> class_colors;
    Rgb ignore{0, 0, 0};

    /// Evenly spread hues, one per class.
    static ColorMap defaults(std::size_t n_classes) {
        ColorMap m;
        for (std::size_t c = 0; c < n_classes; ++c) {
            const double h = 6.0 * static_cast<double>(c) / static_cast<double>(std::max<std::size_t>(n_classes, 1));
            const int sector = static_cast<int>(h) % 6;
            const double f = h - static_cast<int>(h);
            const auto hi = std::uint8_t{220}, lo = std::uint8_t{40};
            const auto up = static_cast<std::uint8_t>(lo + f * (hi - lo));
            const auto down = static_cast<std::uint8_t>(hi - f * (hi - lo));
            static constexpr int pattern[6][3] = {{0, 1, 2}, {3, 0, 2}, {2, 0, 1}, {2, 3, 0}, {1, 2, 0}, {0, 2, 3}};
            Rgb rgb{};
            for (int k = 0; k < 3; ++k) {
                switch (pattern[sector][k]) {
                    case 0: rgb[k] = hi; break;
                    case 1: rgb[k] = up; break;
                    case 2: rgb[k] = lo; break;
                    default: rgb[k] = down; break;
                }
            }
            m.class_colors.push_back(rgb);
        }
        return m;
    }

    /// Reads optional "color": [r, g, b] entries from a label spec document;
    /// classes without one keep their default color.
    static ColorMap from_label_json(const nlohmann::json& j, std::size_t n_classes) {
        ColorMap m = defaults(n_classes);
        if (j.contains("ignore_color")) m.ignore = j["ignore_color"].get<Rgb>();
        if (!j.contains("classes")) return m;
        for (const auto& c : j["classes"]) {
            if (!c.contains("color")) continue;
            const auto id = c.at("id").get<std::size_t>();
            if (id < n_classes) m.class_colors[id] = c["color"].get<Rgb>();
        }
        return m;
    }
};

inline Raster<std::uint8_t> colorize(const PanopticMap& pan, const LabelSpec& labels, const ColorMap& colors) {
    validate_panoptic(pan, labels, false);
    if (colors.class_colors.size() < labels.n_classes()) throw ValidationError("color map has too few classes");
    const PanId ignore = ignore_pan(labels);
    Raster<std::uint8_t> rgb(pan.height(), pan.width(), 3);
    for (std::size_t y = 0; y < pan.height(); ++y) {
        for (std::size_t x = 0; x < pan.width(); ++x) {
            const PanId id = pan(y, x);
            Rgb c = colors.ignore;
            if (id != ignore) {
                const auto [cls, inst] = decode_pan(id);
                c = colors.class_colors[cls];
                if (inst > 0) {
                    // Alternate brighter/darker shades so touching instances differ.
                    const int delta = static_cast<int>((inst * 37) % 90) - 45;
                    for (auto& ch : c) ch = static_cast<std::uint8_t>(std::clamp(int(ch) + delta, 0, 255));
                }
            }
            for (std::size_t k = 0; k < 3; ++k) rgb(y, x, k) = c[k];
        }
    }
    return rgb;
}

}  // namespace panfuse::viz
