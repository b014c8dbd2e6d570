#pragma once

// Test fixtures: seeded generators, synthetic scenes and brute-force oracles
// that share no code paths with the library routines they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <tuple>
#include <utility>
#include <vector>

#include "panfuse/boundary.hpp"
#include "panfuse/core.hpp"
#include "panfuse/ncut.hpp"
#include "panfuse/tiler.hpp"

namespace testsupport {

using panfuse::BinaryMap;
using panfuse::ClassId;
using panfuse::ClassMap;
using panfuse::FloatMap;
using panfuse::LabelSpec;
using panfuse::PanId;
using panfuse::PanopticMap;

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int randint(Rng& rng, int lo, int hi) {  // inclusive
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline FloatMap random_distribution_map(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
    FloatMap m(h, w, c);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            std::vector<double> p(c);
            double s = 0.0;
            for (auto& v : p) s += (v = uniform(rng, 0.01, 1.0));
            for (std::size_t k = 0; k < c; ++k) m(y, x, k) = static_cast<float>(p[k] / s);
        }
    return m;
}

inline FloatMap random_unit_map(std::size_t h, std::size_t w, Rng& rng) {
    FloatMap m(h, w);
    for (auto& v : m.values()) v = static_cast<float>(uniform(rng, 0.0, 1.0));
    return m;
}

inline LabelSpec road_car_labels() {
    return LabelSpec({{0, "road", false}, {1, "car", true}}, 255);
}

// ---------------------------------------------------------------------------
// Synthetic two-disk scene: cars on a road, instances split along the
// perpendicular bisector of the disk centers (x = split_x).

struct SceneParams {
    std::size_t height = 256, width = 512;
    double c1x = 192.0, c1y = 128.0, c2x = 320.0, c2y = 128.0, radius = 80.0;
    std::size_t split_x = 256;
    std::size_t gap = 0;        // rows of missing boundary on the split line
    std::size_t gap_y = 126;
    double sigma = 0.7;         // ridge width of the soft boundary
    double p_fg = 0.9;
};

struct Scene {
    LabelSpec labels = road_car_labels();
    FloatMap probs;
    FloatMap soft;
    PanopticMap gt;
};

inline Scene make_scene(const SceneParams& sp) {
    Scene s;
    const std::size_t h = sp.height, w = sp.width;
    s.gt = PanopticMap(h, w);
    s.probs = FloatMap(h, w, 2);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            const bool in1 = std::hypot(px - sp.c1x, py - sp.c1y) <= sp.radius;
            const bool in2 = std::hypot(px - sp.c2x, py - sp.c2y) <= sp.radius;
            const bool car = in1 || in2;
            s.gt(y, x) = car ? panfuse::encode_pan(1, x < sp.split_x ? 1 : 2) : panfuse::encode_pan(0, 0);
            s.probs(y, x, 0) = static_cast<float>(car ? 1.0 - sp.p_fg : sp.p_fg);
            s.probs(y, x, 1) = static_cast<float>(car ? sp.p_fg : 1.0 - sp.p_fg);
        }
    // Ridge around the ground-truth boundary pixels (label 0 in the boundary-label convention).
    BinaryMap on(h, w);
    const auto labels01 = panfuse::boundary::boundary_labels_from_instances(s.gt, s.labels);
    for (std::size_t i = 0; i < on.pixels(); ++i) on[i] = labels01[i] == 0;
    for (std::size_t y = sp.gap_y; y < sp.gap_y + sp.gap && y < h; ++y)
        for (std::size_t x = sp.split_x - 1; x <= sp.split_x; ++x) on(y, x) = 0;
    s.soft = FloatMap(h, w);
    const int win = static_cast<int>(std::ceil(4.0 * sp.sigma)) + 1;
    for (int y = 0; y < static_cast<int>(h); ++y)
        for (int x = 0; x < static_cast<int>(w); ++x) {
            double best = std::numeric_limits<double>::infinity();
            for (int dy = -win; dy <= win; ++dy)
                for (int dx = -win; dx <= win; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || xx < 0 || yy >= static_cast<int>(h) || xx >= static_cast<int>(w)) continue;
                    if (on(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)))
                        best = std::min(best, double(dx * dx + dy * dy));
                }
            s.soft(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
                std::isinf(best) ? 0.0f : static_cast<float>(std::exp(-best / (2.0 * sp.sigma * sp.sigma)));
        }
    return s;
}

// ---------------------------------------------------------------------------
// Oracles

/// Grid line by direct rounding: the minor coordinate after t major steps is
/// round(t * dminor / dmajor), halves rounded toward the start point.
inline std::vector<std::pair<int, int>> line_oracle(int x0, int y0, int x1, int y1) {
    const int dx = std::abs(x1 - x0), dy = std::abs(y1 - y0);
    const int sx = x1 >= x0 ? 1 : -1, sy = y1 >= y0 ? 1 : -1;
    const bool x_major = dx >= dy;
    const long major = x_major ? dx : dy, minor = x_major ? dy : dx;
    std::vector<std::pair<int, int>> pts;
    for (long t = 0; t <= major; ++t) {
        // ceil((2 t minor - major) / (2 major)) with exact integers
        const long num = 2 * t * minor - major, den = 2 * major;
        long k = major == 0 ? 0 : (num >= 0 ? (num + den - 1) / den : -((-num) / den));
        if (x_major)
            pts.emplace_back(x0 + sx * static_cast<int>(t), y0 + sy * static_cast<int>(k));
        else
            pts.emplace_back(x0 + sx * static_cast<int>(k), y0 + sy * static_cast<int>(t));
    }
    return pts;
}

/// Affinity of grid nodes i < j: exp(-beta * max of the grid map along the line
/// walked from i to j), or 0 outside the radius.
inline double affinity_oracle(const FloatMap& grid, int radius, double beta, std::size_t i, std::size_t j) {
    if (i == j) return 0.0;
    if (j < i) std::swap(i, j);
    const int w = static_cast<int>(grid.width());
    const int xi = static_cast<int>(i) % w, yi = static_cast<int>(i) / w;
    const int xj = static_cast<int>(j) % w, yj = static_cast<int>(j) / w;
    if ((xi - xj) * (xi - xj) + (yi - yj) * (yi - yj) > radius * radius) return 0.0;
    float m = 0.0f;
    for (auto [x, y] : line_oracle(xi, yi, xj, yj)) m = std::max(m, grid(static_cast<std::size_t>(y), static_cast<std::size_t>(x)));
    return std::exp(-beta * static_cast<double>(m));
}

/// Area average where output cell c along an axis averages source indices
/// [floor(c*n/m), floor((c+1)*n/m)), found by scanning the whole source.
inline FloatMap downsample_oracle(const FloatMap& src, std::size_t wb, std::size_t hb) {
    FloatMap out(hb, wb);
    for (std::size_t cy = 0; cy < hb; ++cy)
        for (std::size_t cx = 0; cx < wb; ++cx) {
            double sum = 0.0;
            std::size_t n = 0;
            for (std::size_t y = 0; y < src.height(); ++y) {
                if (!(cy * src.height() / hb <= y && y < (cy + 1) * src.height() / hb)) continue;
                for (std::size_t x = 0; x < src.width(); ++x) {
                    if (!(cx * src.width() / wb <= x && x < (cx + 1) * src.width() / wb)) continue;
                    sum += src(y, x);
                    ++n;
                }
            }
            out(cy, cx) = static_cast<float>(sum / static_cast<double>(n));
        }
    return out;
}

/// Per-pixel mean over scales of the per-scale mean of covering crops,
/// accumulated pixel by pixel in double.
inline std::vector<double> merge_oracle(const panfuse::tiler::CropPlan& plan,
                                        const std::vector<panfuse::tiler::CropPrediction>& preds,
                                        std::size_t channels) {
    const std::size_t h = plan.image_height, w = plan.image_width;
    std::vector<double> out(h * w * channels, 0.0);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < channels; ++c) {
                double across = 0.0;
                for (std::size_t s : plan.scales) {
                    double sum = 0.0;
                    std::size_t n = 0;
                    for (const auto& p : preds) {
                        const auto& cr = p.crop;
                        if (cr.scale != s) continue;
                        if (x < cr.x || x >= cr.x + cr.width || y < cr.y || y >= cr.y + cr.height) continue;
                        sum += p.map(y - cr.y, x - cr.x, c);
                        ++n;
                    }
                    across += sum / static_cast<double>(n);
                }
                out[(y * w + x) * channels + c] = across / static_cast<double>(plan.scales.size());
            }
    return out;
}

// ---------------------------------------------------------------------------
// Small weighted graphs

struct SmallGraph {
    std::size_t n = 0;
    std::vector<std::vector<double>> w;  // symmetric, zero diagonal
};

inline SmallGraph random_connected_graph(Rng& rng, std::size_t n, double density) {
    SmallGraph g;
    g.n = n;
    g.w.assign(n, std::vector<double>(n, 0.0));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t k = 1; k < n; ++k) {  // random spanning tree
        const std::size_t a = perm[k], b = perm[static_cast<std::size_t>(randint(rng, 0, static_cast<int>(k) - 1))];
        g.w[a][b] = g.w[b][a] = uniform(rng, 0.05, 1.0);
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (g.w[i][j] == 0.0 && uniform(rng, 0.0, 1.0) < density) g.w[i][j] = g.w[j][i] = uniform(rng, 0.05, 1.0);
    return g;
}

inline panfuse::ncut::Subgraph to_subgraph(const SmallGraph& g) {
    panfuse::ncut::Subgraph s;
    s.nodes.resize(g.n);
    std::iota(s.nodes.begin(), s.nodes.end(), 0);
    s.offsets.assign(g.n + 1, 0);
    s.degree.assign(g.n, 0.0);
    for (std::size_t i = 0; i < g.n; ++i) {
        for (std::size_t j = 0; j < g.n; ++j)
            if (g.w[i][j] > 0.0) {
                s.neighbors.push_back(static_cast<std::uint32_t>(j));
                s.weights.push_back(g.w[i][j]);
                s.degree[i] += g.w[i][j];
            }
        s.offsets[i + 1] = s.neighbors.size();
    }
    return s;
}

inline double ncut_oracle(const SmallGraph& g, const std::vector<bool>& in_b) {
    double cut = 0.0, a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t j = 0; j < g.n; ++j) {
            (in_b[i] ? b : a) += g.w[i][j];
            if (in_b[i] != in_b[j] && i < j) cut += g.w[i][j];
        }
    if (a == 0.0 || b == 0.0) return std::numeric_limits<double>::infinity();
    return cut / a + cut / b;
}

/// Minimum NCut over all 2^(n-1) - 1 proper bipartitions.
inline double brute_force_min_ncut(const SmallGraph& g) {
    double best = std::numeric_limits<double>::infinity();
    const std::uint32_t total = 1u << (g.n - 1);
    for (std::uint32_t mask = 1; mask < total; ++mask) {
        std::vector<bool> in_b(g.n, false);
        for (std::size_t i = 0; i + 1 < g.n; ++i) in_b[i] = (mask >> i) & 1u;
        best = std::min(best, ncut_oracle(g, in_b));
    }
    return best;
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns eigenvalues
/// ascending with eigenvectors as columns of `vecs`.
inline std::vector<double> jacobi_eigen(std::vector<std::vector<double>> a, std::vector<std::vector<double>>& vecs) {
    const std::size_t n = a.size();
    vecs.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) vecs[i][i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = vecs[k][p], vkq = vecs[k][q];
                    vecs[k][p] = c * vkp - s * vkq;
                    vecs[k][q] = s * vkp + c * vkq;
                }
            }
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x][x] < a[y][y]; });
    std::vector<double> vals(n);
    auto sorted = vecs;
    for (std::size_t k = 0; k < n; ++k) {
        vals[k] = a[order[k]][order[k]];
        for (std::size_t i = 0; i < n; ++i) sorted[i][k] = vecs[i][order[k]];
    }
    vecs = sorted;
    return vals;
}

/// Second-smallest generalized eigenvalue of (D - W) x = lambda D x, through
/// the symmetric form D^-1/2 (D - W) D^-1/2.
inline double second_generalized_eigenvalue(const SmallGraph& g) {
    std::vector<double> d(g.n, 0.0);
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t j = 0; j < g.n; ++j) d[i] += g.w[i][j];
    std::vector<std::vector<double>> m(g.n, std::vector<double>(g.n));
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t j = 0; j < g.n; ++j)
            m[i][j] = ((i == j ? d[i] : 0.0) - g.w[i][j]) / std::sqrt(d[i] * d[j]);
    std::vector<std::vector<double>> vecs;
    return jacobi_eigen(m, vecs)[1];
}

inline double generalized_residual_oracle(const SmallGraph& g, const std::vector<double>& v, double lambda) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < g.n; ++i) {
        double d = 0.0, wv = 0.0;
        for (std::size_t j = 0; j < g.n; ++j) {
            d += g.w[i][j];
            wv += g.w[i][j] * v[j];
        }
        const double r = d * v[i] - wv - lambda * d * v[i];
        num += r * r;
        den += d * v[i] * d * v[i];
    }
    return std::sqrt(num / den);
}

/// Minimum NCut over threshold cuts {v <= t} for every distinct value t of v
/// below the maximum.
inline std::pair<double, std::vector<bool>> best_threshold_cut(const SmallGraph& g, const std::vector<double>& v) {
    std::set<double> values(v.begin(), v.end());
    double best = std::numeric_limits<double>::infinity();
    std::vector<bool> best_side;
    for (double t : values) {
        if (t == *values.rbegin()) break;
        std::vector<bool> in_b(g.n);
        for (std::size_t i = 0; i < g.n; ++i) in_b[i] = v[i] > t;
        const double c = ncut_oracle(g, in_b);
        if (c < best) {
            best = c;
            best_side = in_b;
        }
    }
    return {best, best_side};
}

// ---------------------------------------------------------------------------

/// 4- or 8-connected components by repeated label propagation until stable;
/// returns a canonical relabeling (ids by first pixel in raster order, 0 = excluded).
template <typename T, typename Pred>
std::vector<std::uint32_t> propagation_components(const panfuse::Raster<T>& m, int conn, Pred include) {
    const std::size_t h = m.height(), w = m.width();
    std::vector<std::size_t> lab(h * w, std::numeric_limits<std::size_t>::max());
    for (std::size_t i = 0; i < h * w; ++i)
        if (include(m[i])) lab[i] = i;
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t i = y * w + x;
                if (lab[i] == std::numeric_limits<std::size_t>::max()) continue;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0) continue;
                        if (conn == 4 && dx != 0 && dy != 0) continue;
                        const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
                        if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
                        const std::size_t j = static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx);
                        if (lab[j] == std::numeric_limits<std::size_t>::max() || !(m[j] == m[i])) continue;
                        if (lab[j] < lab[i]) {
                            lab[i] = lab[j];
                            changed = true;
                        }
                    }
            }
    }
    std::map<std::size_t, std::uint32_t> canon;
    std::vector<std::uint32_t> out(h * w, 0);
    for (std::size_t i = 0; i < h * w; ++i) {
        if (lab[i] == std::numeric_limits<std::size_t>::max()) continue;
        auto [it, inserted] = canon.try_emplace(lab[i], static_cast<std::uint32_t>(canon.size() + 1));
        out[i] = it->second;
    }
    return out;
}

}  // namespace testsupport
