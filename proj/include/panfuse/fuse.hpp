#pragma once

// Full panoptic fusion of a merged class-probability map and soft boundary
// map into a panoptic map.

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "panfuse/boundary.hpp"
#include "panfuse/components.hpp"
#include "panfuse/core.hpp"
#include "panfuse/ncut.hpp"
#include "panfuse/refine.hpp"

namespace panfuse {

struct FuseConfig {
    boundary::BoundaryConfig boundary;
    refine::RefineConfig refine;
    ncut::NCutConfig ncut;

    void validate() const {
        boundary.validate();
        refine.validate();
        ncut.validate();
    }
};

struct StageTiming {
    std::string stage;
    double seconds = 0.0;
};

/// Instances found inside one thing segment, for debugging output.
struct SegmentInstances {
    ClassId class_id = 0;
    std::size_t first_pixel = 0;
    Raster<std::uint32_t> local_ids;  // full resolution, 0 outside the segment or dropped
    ncut::Delineation delineation;
};

struct FuseResult {
    PanopticMap panoptic;
    std::vector<StageTiming> timings;
    std::vector<std::string> warnings;
    std::vector<SegmentInstances> segments;
};

namespace detail {

template <typename F>
auto run_stage(std::vector<StageTiming>& timings, const std::string& name, F&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    auto record = [&] {
        timings.push_back({name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
    };
    try {
        if constexpr (std::is_void_v<std::invoke_result_t<F>>) {
            fn();
            record();
        } else {
            auto r = fn();
            record();
            return r;
        }
    } catch (const Error& e) {
        throw Error(name, e.what());
    } catch (const std::exception& e) {
        throw Error(name, e.what());
    }
}

}  // namespace detail

/// Runs boundary thresholding and denoising, stuff/thing boundary extraction,
/// majority voting in enclosed areas, semantic CCA, thing and stuff filters,
/// NCut instance separation and hole filling. Pixels set in `mask` are forced
/// to ignore and stay ignore.
inline FuseResult fuse(const FloatMap& probs, const FloatMap& soft_boundary, const LabelSpec& labels,
                       const FuseConfig& cfg, const BinaryMap* mask = nullptr,
                       bool keep_segments = false) {
    FuseResult res;
    auto& t = res.timings;
    const std::size_t h = probs.height(), w = probs.width();

    detail::run_stage(t, "validate", [&] {
        cfg.validate();
        validate_probabilities(probs, labels.n_classes());
        validate_unit_interval(soft_boundary, "soft boundary");
        require_same_size(probs.shape(), soft_boundary.shape(), "fuse");
        if (mask) require_same_size(probs.shape(), mask->shape(), "fuse mask");
    });

    ClassMap semantic = detail::run_stage(t, "argmax", [&] {
        ClassMap s = argmax_semantics(probs, labels);
        if (mask)
            for (std::size_t i = 0; i < s.pixels(); ++i)
                if ((*mask)[i]) s[i] = labels.ignore_id();
        return s;
    });

    const auto graph = detail::run_stage(t, "affinity", [&] { return ncut::build_affinity(soft_boundary, cfg.ncut); });

    const BinaryMap head_boundary = detail::run_stage(t, "boundary", [&] {
        return boundary::denoise_boundary(boundary::threshold_boundary(soft_boundary, cfg.boundary), cfg.boundary);
    });

    const BinaryMap enclosing = detail::run_stage(t, "stuff_thing", [&] {
        return boundary::merge_boundaries(head_boundary, boundary::stuff_thing_boundaries(semantic, labels));
    });

    semantic = detail::run_stage(t, "majority_vote", [&] {
        const ClassId ignore = labels.ignore_id();
        // Areas enclosed by boundaries; boundary and masked pixels keep their class.
        BinaryMap open = enclosing;
        for (std::size_t i = 0; i < open.pixels(); ++i) open[i] = (enclosing[i] == 0 && semantic[i] != ignore) ? 1 : 0;
        const auto areas = connected_components(open, Connectivity::Four, [](std::uint8_t v) { return v != 0; });
        return refine::majority_vote(semantic, areas);
    });

    const ClassId ignore = labels.ignore_id();
    const SegmentTable segments = detail::run_stage(t, "cca", [&] {
        return connected_components(semantic, cfg.refine.connectivity, [ignore](ClassId c) { return c != ignore; });
    });

    semantic = detail::run_stage(t, "filter_things", [&] {
        return refine::filter_things(semantic, head_boundary, segments, labels, cfg.refine);
    });
    semantic = detail::run_stage(t, "filter_stuff", [&] {
        return refine::filter_stuff(semantic, segments, labels, cfg.refine);
    });

    // Instance separation per surviving thing segment.
    Raster<std::uint32_t> instance_of(h, w);  // global running id per (segment, local instance)
    std::vector<ClassId> instance_class{0};
    detail::run_stage(t, "ncut", [&] {
        const auto members = segments.members();
        for (std::size_t k = 0; k < segments.size(); ++k) {
            const auto& pixels = members[k];
            const ClassId cls = semantic[pixels.front()];
            if (!labels.is_thing(cls)) continue;
            BinaryMap seg_mask(h, w);
            for (std::size_t p : pixels) seg_mask[p] = 1;
            auto nodes = ncut::nodes_of_mask(seg_mask, graph.width, graph.height);
            auto del = ncut::delineate(graph, std::move(nodes), cfg.ncut);
            Raster<std::uint32_t> grid_ids(graph.height, graph.width);
            for (std::size_t i = 0; i < del.instances.size(); ++i)
                for (std::size_t n : del.instances[i]) grid_ids[n] = static_cast<std::uint32_t>(i + 1);
            auto local = ncut::upsample_instances(grid_ids, w, h, seg_mask);
            const auto base = static_cast<std::uint32_t>(instance_class.size() - 1);
            for (std::size_t i = 0; i < del.instances.size(); ++i) instance_class.push_back(cls);
            for (std::size_t p : pixels) {
                if (local[p] == 0)
                    semantic[p] = ignore;
                else
                    instance_of[p] = base + local[p];
            }
            for (const auto& warn : del.warnings) res.warnings.push_back("segment " + std::to_string(k + 1) + ": " + warn);
            if (keep_segments)
                res.segments.push_back({cls, pixels.front(), std::move(local), std::move(del)});
        }
    });

    res.panoptic = detail::run_stage(t, "assemble", [&] {
        PanopticMap pan(h, w);
        std::vector<std::uint32_t> final_index(instance_class.size(), 0);
        std::vector<std::uint32_t> next(labels.n_classes(), 1);
        for (std::size_t i = 0; i < pan.pixels(); ++i) {
            const ClassId cls = semantic[i];
            if (cls == ignore) {
                pan[i] = ignore_pan(labels);
            } else if (labels.is_thing(cls)) {
                const auto g = instance_of[i];
                if (final_index[g] == 0) final_index[g] = next[cls]++;
                pan[i] = encode_pan(cls, final_index[g]);
            } else {
                pan[i] = encode_pan(cls, 0);
            }
        }
        return pan;
    });

    res.panoptic = detail::run_stage(t, "fill_holes", [&] {
        const bool any_source = std::any_of(res.panoptic.values().begin(), res.panoptic.values().end(),
                                            [&](PanId v) { return v != ignore_pan(labels); });
        if (!any_source) {
            res.warnings.push_back("every pixel ended up ignore; nothing to fill");
            return res.panoptic;
        }
        return refine::fill_holes(res.panoptic, labels, mask);
    });
    return res;
}

}  // namespace panfuse
