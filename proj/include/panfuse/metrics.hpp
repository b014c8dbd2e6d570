#pragma once

// mIoU and panoptic quality (PQ = SQ * RQ) with the standard void handling:
// ground-truth ignore pixels are excluded from IoU unions, and unmatched
// predicted segments lying mostly on ignore are not counted as false positives.
// Statistics accumulate across images by summation before the final division.

#include <cstdint>
#include <map>
#include <optional>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "panfuse/core.hpp"

namespace panfuse::metrics {

struct ClassIoUStats {
    std::uint64_t intersection = 0;
    std::uint64_t union_ = 0;
};

struct ClassPQStats {
    double iou_sum = 0.0;
    std::uint64_t tp = 0, fp = 0, fn = 0;
};

struct ClassScores {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    std::optional<double> iou;
    std::optional<double> pq, sq, rq;
};

struct EvalReport {
    std::vector<ClassScores> per_class;
    std::optional<double> miou;
    double pq = 0.0, sq = 0.0, rq = 0.0;
    std::optional<double> pq_things, pq_stuff;
    std::uint64_t tp = 0, fp = 0, fn = 0;
    std::vector<double> matched_ious;
};

/// Streaming accumulator over images.
class Evaluator {
public:
    explicit Evaluator(LabelSpec labels)
        : labels_(std::move(labels)), iou_(labels_.n_classes()), pq_(labels_.n_classes()) {}

    void add_semantic(const ClassMap& pred, const ClassMap& gt) {
        require_same_size(pred.shape(), gt.shape(), "miou");
        semantic_added_ = true;
        const ClassId ignore = labels_.ignore_id();
        for (std::size_t i = 0; i < gt.pixels(); ++i) {
            const ClassId g = gt[i], p = pred[i];
            if (g == ignore) continue;
            if (!labels_.is_valid(g)) throw ValidationError("miou: unknown ground-truth class " + std::to_string(g));
            const bool p_valid = labels_.is_valid(p);
            if (p_valid && p == g) {
                ++iou_[g].intersection;
                ++iou_[g].union_;
            } else {
                ++iou_[g].union_;
                if (p_valid) ++iou_[p].union_;
            }
        }
    }

    void add_panoptic(const PanopticMap& pred, const PanopticMap& gt) {
        require_same_size(pred.shape(), gt.shape(), "panoptic_quality");
        validate_panoptic(pred, labels_, false);
        validate_panoptic(gt, labels_, false);
        const PanId void_id = ignore_pan(labels_);

        std::unordered_map<PanId, std::uint64_t> gt_area, pred_area;
        std::map<std::pair<PanId, PanId>, std::uint64_t> inter;
        for (std::size_t i = 0; i < gt.pixels(); ++i) {
            ++gt_area[gt[i]];
            ++pred_area[pred[i]];
            ++inter[{gt[i], pred[i]}];
        }
        std::unordered_map<PanId, bool> gt_matched, pred_matched;
        for (const auto& [key, n] : inter) {
            const auto [g, p] = key;
            if (g == void_id || p == void_id) continue;
            const auto gc = decode_pan(g).class_id, pc = decode_pan(p).class_id;
            if (gc != pc) continue;
            const auto void_overlap = lookup(inter, void_id, p);
            const double uni = static_cast<double>(pred_area[p] + gt_area[g] - n - void_overlap);
            const double iou = static_cast<double>(n) / uni;
            if (iou > 0.5) {
                auto& s = pq_[gc];
                ++s.tp;
                s.iou_sum += iou;
                gt_matched[g] = true;
                pred_matched[p] = true;
                matched_ious_.push_back(iou);
            }
        }
        for (const auto& [g, area] : gt_area) {
            if (g == void_id || gt_matched[g]) continue;
            ++pq_[decode_pan(g).class_id].fn;
        }
        for (const auto& [p, area] : pred_area) {
            if (p == void_id || pred_matched[p]) continue;
            const auto void_overlap = lookup(inter, void_id, p);
            if (static_cast<double>(void_overlap) / static_cast<double>(area) > 0.5) continue;
            ++pq_[decode_pan(p).class_id].fp;
        }
        panoptic_added_ = true;
    }

    EvalReport report() const {
        EvalReport r;
        r.per_class.resize(labels_.n_classes());
        double iou_total = 0.0;
        std::size_t iou_n = 0;
        double pq_sum[3] = {0, 0, 0}, sq_sum = 0, rq_sum = 0;
        std::size_t pq_n[3] = {0, 0, 0};
        for (std::size_t c = 0; c < labels_.n_classes(); ++c) {
            auto& out = r.per_class[c];
            if (semantic_added_ && iou_[c].union_ > 0) {
                out.iou = static_cast<double>(iou_[c].intersection) / static_cast<double>(iou_[c].union_);
                iou_total += *out.iou;
                ++iou_n;
            }
            const auto& s = pq_[c];
            out.tp = s.tp;
            out.fp = s.fp;
            out.fn = s.fn;
            r.tp += s.tp;
            r.fp += s.fp;
            r.fn += s.fn;
            const double denom = s.tp + 0.5 * s.fp + 0.5 * s.fn;
            if (!panoptic_added_ || denom == 0.0) continue;
            out.rq = s.tp / denom;
            out.sq = s.tp > 0 ? s.iou_sum / s.tp : 0.0;
            out.pq = s.iou_sum / denom;
            const int group = labels_.is_thing(static_cast<int>(c)) ? 1 : 2;
            pq_sum[0] += *out.pq;
            pq_sum[group] += *out.pq;
            ++pq_n[0];
            ++pq_n[group];
            sq_sum += *out.sq;
            rq_sum += *out.rq;
        }
        if (iou_n > 0) r.miou = iou_total / static_cast<double>(iou_n);
        if (pq_n[0] > 0) {
            r.pq = pq_sum[0] / pq_n[0];
            r.sq = sq_sum / pq_n[0];
            r.rq = rq_sum / pq_n[0];
        }
        if (pq_n[1] > 0) r.pq_things = pq_sum[1] / pq_n[1];
        if (pq_n[2] > 0) r.pq_stuff = pq_sum[2] / pq_n[2];
        r.matched_ious = matched_ious_;
        return r;
    }

    const std::vector<ClassPQStats>& pq_stats() const noexcept { return pq_; }
    const LabelSpec& labels() const noexcept { return labels_; }

private:
    static std::uint64_t lookup(const std::map<std::pair<PanId, PanId>, std::uint64_t>& m, PanId g, PanId p) {
        auto it = m.find({g, p});
        return it == m.end() ? 0 : it->second;
    }

    LabelSpec labels_;
    std::vector<ClassIoUStats> iou_;
    std::vector<ClassPQStats> pq_;
    std::vector<double> matched_ious_;
    bool semantic_added_ = false;
    bool panoptic_added_ = false;
};

inline EvalReport miou(const ClassMap& pred, const ClassMap& gt, const LabelSpec& labels) {
    Evaluator e(labels);
    e.add_semantic(pred, gt);
    return e.report();
}

inline EvalReport panoptic_quality(const PanopticMap& pred, const PanopticMap& gt, const LabelSpec& labels) {
    Evaluator e(labels);
    e.add_panoptic(pred, gt);
    e.add_semantic(semantic_of(pred), semantic_of(gt));
    return e.report();
}

inline nlohmann::json to_json(const EvalReport& r, const LabelSpec& labels) {
    auto opt = [](const std::optional<double>& v) -> nlohmann::json { return v ? nlohmann::json(*v) : nlohmann::json(); };
    nlohmann::json per_class = nlohmann::json::object();
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        const auto& s = r.per_class[c];
        const auto& info = labels.at(static_cast<int>(c));
        per_class[info.name.empty() ? std::to_string(c) : info.name] = {
            {"id", c}, {"thing", info.is_thing}, {"IoU", opt(s.iou)},
            {"PQ", opt(s.pq)}, {"SQ", opt(s.sq)}, {"RQ", opt(s.rq)},
            {"TP", s.tp}, {"FP", s.fp}, {"FN", s.fn}};
    }
    return {{"mIoU", opt(r.miou)}, {"PQ", r.pq}, {"SQ", r.sq}, {"RQ", r.rq},
            {"PQ_th", opt(r.pq_things)}, {"PQ_st", opt(r.pq_stuff)},
            {"per_class", per_class},
            {"counts", {{"TP", r.tp}, {"FP", r.fp}, {"FN", r.fn}}},
            {"matched_ious", r.matched_ious}};
}

}  // namespace panfuse::metrics
