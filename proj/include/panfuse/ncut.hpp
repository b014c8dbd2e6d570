#pragma once

// Instance delineation by recursive two-way normalized cut on a sparse
// pixel-affinity graph built from the soft boundary map.
//
// Edge affinity between downsampled pixels p_i, p_j within the neighbourhood
// radius is a_ij = exp(-beta * d_ij), where d_ij is the largest soft-boundary
// value on the Bresenham line between them (endpoints included). The Fiedler
// vector of (C - A) x = lambda C x, with C the degree matrix of the masked
// graph, gives the continuous bipartition.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "panfuse/core.hpp"

namespace panfuse::ncut {

class EigenSolverError : public Error {
public:
    explicit EigenSolverError(const std::string& what) : Error("ncut", what) {}
};

enum class SplitCandidates { All, Quantiles };

struct NCutConfig {
    // Downsampled grid: explicit size, or image size / downsample_factor when 0.
    std::size_t downsample_width = 0;
    std::size_t downsample_height = 0;
    std::size_t downsample_factor = 4;
    int radius = 3;
    double beta = 50.0;
    double cut_cost_threshold = 0.08;
    double stability_ratio_threshold = 0.06;
    std::size_t histogram_bins = 20;
    std::size_t min_instance_size = 16;
    std::size_t max_recursion_depth = 12;
    double eigen_tolerance = 1e-8;
    std::size_t max_eigen_iterations = 300;
    std::size_t dense_limit = 64;
    SplitCandidates split_candidates = SplitCandidates::All;

    void validate() const {
        if (radius <= 0) throw ValidationError("ncut.radius must be positive");
        if (!(beta > 0.0)) throw ValidationError("ncut.beta must be positive");
        if (!(cut_cost_threshold > 0.0)) throw ValidationError("ncut.cut_cost_threshold must be positive");
        if (!(stability_ratio_threshold > 0.0 && stability_ratio_threshold < 1.0))
            throw ValidationError("ncut.stability_ratio_threshold must lie in (0,1)");
        if (histogram_bins < 2) throw ValidationError("ncut.histogram_bins must be >= 2");
        if (min_instance_size == 0) throw ValidationError("ncut.min_instance_size must be positive");
        if (max_recursion_depth == 0) throw ValidationError("ncut.max_recursion_depth must be positive");
        if (!(eigen_tolerance > 0.0)) throw ValidationError("ncut.eigen_tolerance must be positive");
        if (max_eigen_iterations == 0) throw ValidationError("ncut.max_eigen_iterations must be positive");
        if (downsample_factor == 0 && (downsample_width == 0 || downsample_height == 0))
            throw ValidationError("ncut: downsample size or factor required");
    }

    /// (w_b, h_b) for an image of the given size.
    std::pair<std::size_t, std::size_t> grid_size(std::size_t w, std::size_t h) const {
        std::size_t wb = downsample_width, hb = downsample_height;
        if (wb == 0) wb = std::max<std::size_t>(1, w / downsample_factor);
        if (hb == 0) hb = std::max<std::size_t>(1, h / downsample_factor);
        if (wb > w || hb > h)
            throw ValidationError("ncut: downsampled size exceeds image size");
        return {wb, hb};
    }
};

// ---------------------------------------------------------------------------
// Grid resampling. Cell i along an axis of length n with m cells covers source
// indices [floor(i*n/m), floor((i+1)*n/m)).

inline std::vector<std::size_t> cell_of_index(std::size_t n, std::size_t m) {
    std::vector<std::size_t> cell(n);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t lo = i * n / m, hi = (i + 1) * n / m;
        for (std::size_t k = lo; k < hi; ++k) cell[k] = i;
    }
    return cell;
}

/// Area-average downsampling of a single-channel map.
inline FloatMap downsample_mean(const FloatMap& src, std::size_t wb, std::size_t hb) {
    if (wb == 0 || hb == 0 || wb > src.width() || hb > src.height())
        throw ValidationError("downsample: invalid target size");
    const auto row_cell = cell_of_index(src.height(), hb);
    const auto col_cell = cell_of_index(src.width(), wb);
    std::vector<double> sum(wb * hb, 0.0);
    std::vector<std::size_t> count(wb * hb, 0);
    for (std::size_t y = 0; y < src.height(); ++y) {
        for (std::size_t x = 0; x < src.width(); ++x) {
            const std::size_t c = row_cell[y] * wb + col_cell[x];
            sum[c] += src(y, x);
            ++count[c];
        }
    }
    FloatMap out(hb, wb);
    for (std::size_t c = 0; c < wb * hb; ++c)
        out[c] = static_cast<float>(sum[c] / static_cast<double>(count[c]));
    return out;
}

// ---------------------------------------------------------------------------
// Affinity graph

/// Integer Bresenham line from (x0,y0) to (x1,y1), endpoints included. On a
/// minor-axis tie the step is deferred (the line stays closer to its start).
template <typename Visit>
void bresenham(int x0, int y0, int x1, int y1, Visit visit) {
    const int dx = std::abs(x1 - x0), dy = std::abs(y1 - y0);
    const int sx = x1 >= x0 ? 1 : -1, sy = y1 >= y0 ? 1 : -1;
    int x = x0, y = y0;
    if (dx >= dy) {
        int d = 2 * dy - dx;
        for (int i = 0; i <= dx; ++i) {
            visit(x, y);
            if (d > 0) {
                y += sy;
                d -= 2 * dx;
            }
            d += 2 * dy;
            x += sx;
        }
    } else {
        int d = 2 * dx - dy;
        for (int i = 0; i <= dy; ++i) {
            visit(x, y);
            if (d > 0) {
                x += sx;
                d -= 2 * dy;
            }
            d += 2 * dx;
            y += sy;
        }
    }
}

/// Sparse symmetric radius-neighbourhood graph in CSR form. Self-edges are
/// excluded. Node index = y * width + x on the downsampled grid.
struct AffinityGraph {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::size_t> offsets;  // size nodes + 1
    std::vector<std::uint32_t> neighbors;
    std::vector<double> weights;
    std::vector<double> degree;

    std::size_t nodes() const noexcept { return width * height; }
    std::size_t x_of(std::size_t n) const noexcept { return n % width; }
    std::size_t y_of(std::size_t n) const noexcept { return n / width; }

    double weight(std::size_t i, std::size_t j) const {
        const auto b = neighbors.begin() + static_cast<std::ptrdiff_t>(offsets[i]);
        const auto e = neighbors.begin() + static_cast<std::ptrdiff_t>(offsets[i + 1]);
        auto it = std::lower_bound(b, e, static_cast<std::uint32_t>(j));
        if (it == e || *it != j) return 0.0;
        return weights[static_cast<std::size_t>(it - neighbors.begin())];
    }
};

/// Graph over an already-downsampled soft boundary map.
inline AffinityGraph build_affinity_grid(const FloatMap& soft, int radius, double beta) {
    if (radius <= 0) throw ValidationError("build_affinity: radius must be positive");
    if (!(beta > 0.0)) throw ValidationError("build_affinity: beta must be positive");
    validate_unit_interval(soft, "soft boundary");
    AffinityGraph g;
    g.width = soft.width();
    g.height = soft.height();
    const std::size_t n = g.nodes();

    std::vector<std::pair<int, int>> stencil;  // (dy, dx), sorted so neighbour ids ascend
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if ((dy != 0 || dx != 0) && dx * dx + dy * dy <= radius * radius) stencil.emplace_back(dy, dx);

    g.offsets.assign(n + 1, 0);
    const int w = static_cast<int>(g.width), h = static_cast<int>(g.height);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i / g.width), x = static_cast<int>(i % g.width);
        std::size_t k = 0;
        for (auto [dy, dx] : stencil)
            if (y + dy >= 0 && y + dy < h && x + dx >= 0 && x + dx < w) ++k;
        g.offsets[i + 1] = g.offsets[i] + k;
    }
    g.neighbors.resize(g.offsets[n]);
    g.weights.resize(g.offsets[n]);
    g.degree.assign(n, 0.0);
    std::vector<std::size_t> cursor(g.offsets.begin(), g.offsets.end() - 1);

    // Each undirected edge is walked once, from the lower to the higher node id.
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i / g.width), x = static_cast<int>(i % g.width);
        for (auto [dy, dx] : stencil) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            const std::size_t j = static_cast<std::size_t>(ny) * g.width + static_cast<std::size_t>(nx);
            if (j < i) continue;
            float d = 0.0f;
            bresenham(x, y, nx, ny, [&](int px, int py) {
                d = std::max(d, soft(static_cast<std::size_t>(py), static_cast<std::size_t>(px)));
            });
            const double a = std::exp(-beta * static_cast<double>(d));
            g.neighbors[cursor[i]] = static_cast<std::uint32_t>(j);
            g.weights[cursor[i]++] = a;
            g.neighbors[cursor[j]] = static_cast<std::uint32_t>(i);
            g.weights[cursor[j]++] = a;
        }
    }
    // Edges were appended in ascending neighbour order only for j > i; sort rows.
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t b = g.offsets[i], e = g.offsets[i + 1];
        std::vector<std::pair<std::uint32_t, double>> row;
        row.reserve(e - b);
        for (std::size_t k = b; k < e; ++k) row.emplace_back(g.neighbors[k], g.weights[k]);
        std::sort(row.begin(), row.end());
        for (std::size_t k = b; k < e; ++k) {
            g.neighbors[k] = row[k - b].first;
            g.weights[k] = row[k - b].second;
            g.degree[i] += row[k - b].second;
        }
    }
    return g;
}

/// Downsamples the full-resolution soft boundary to the configured grid and
/// builds the affinity graph over it.
inline AffinityGraph build_affinity(const FloatMap& soft_boundary, const NCutConfig& cfg) {
    cfg.validate();
    validate_unit_interval(soft_boundary, "soft boundary");
    const auto [wb, hb] = cfg.grid_size(soft_boundary.width(), soft_boundary.height());
    return build_affinity_grid(downsample_mean(soft_boundary, wb, hb), cfg.radius, cfg.beta);
}

// ---------------------------------------------------------------------------
// Masked subgraph

/// The graph restricted to `active` nodes, reindexed 0..n-1 in the order of
/// `active`. Degrees count only edges inside the subgraph.
struct Subgraph {
    std::vector<std::size_t> nodes;
    std::vector<std::size_t> offsets;
    std::vector<std::uint32_t> neighbors;
    std::vector<double> weights;
    std::vector<double> degree;

    std::size_t size() const noexcept { return nodes.size(); }
};

inline Subgraph mask_graph(const AffinityGraph& g, const std::vector<std::size_t>& active) {
    Subgraph s;
    s.nodes = active;
    constexpr auto kAbsent = std::numeric_limits<std::uint32_t>::max();
    std::vector<std::uint32_t> local(g.nodes(), kAbsent);
    for (std::size_t k = 0; k < active.size(); ++k) {
        if (active[k] >= g.nodes()) throw ValidationError("mask_graph: node out of range");
        if (local[active[k]] != kAbsent) throw ValidationError("mask_graph: duplicate node");
        local[active[k]] = static_cast<std::uint32_t>(k);
    }
    s.offsets.assign(active.size() + 1, 0);
    s.degree.assign(active.size(), 0.0);
    for (std::size_t k = 0; k < active.size(); ++k) {
        const std::size_t i = active[k];
        for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
            const auto l = local[g.neighbors[e]];
            if (l == kAbsent || g.weights[e] <= 0.0) continue;
            s.neighbors.push_back(l);
            s.weights.push_back(g.weights[e]);
            s.degree[k] += g.weights[e];
        }
        s.offsets[k + 1] = s.neighbors.size();
    }
    return s;
}

/// Component index of every subgraph node (0-based, by first node), and the count.
inline std::pair<std::vector<std::size_t>, std::size_t> subgraph_components(const Subgraph& s) {
    constexpr auto kUnset = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> comp(s.size(), kUnset);
    std::size_t count = 0;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < s.size(); ++start) {
        if (comp[start] != kUnset) continue;
        comp[start] = count;
        stack.assign(1, start);
        while (!stack.empty()) {
            const std::size_t u = stack.back();
            stack.pop_back();
            for (std::size_t e = s.offsets[u]; e < s.offsets[u + 1]; ++e) {
                const std::size_t v = s.neighbors[e];
                if (comp[v] == kUnset) {
                    comp[v] = count;
                    stack.push_back(v);
                }
            }
        }
        ++count;
    }
    return {comp, count};
}

// ---------------------------------------------------------------------------
// Generalized eigenproblem

struct CutSolution {
    double lambda = 0.0;
    std::vector<double> v;  // over the active nodes, unit 2-norm
    double residual = 0.0;  // ||(C - A) v - lambda C v|| / ||C v||
    std::size_t components = 1;
    bool dense = true;
};

namespace detail {

/// Normalizes to unit 2-norm with the largest-magnitude entry positive.
inline void canonical_sign(Eigen::VectorXd& v) {
    const double n = v.norm();
    if (n > 0.0) v /= n;
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (std::abs(v[i]) > std::abs(v[arg]) * (1.0 + 1e-12)) arg = i;
    if (v.size() > 0 && v[arg] < 0.0) v = -v;
}

inline double generalized_residual(const Subgraph& s, const Eigen::VectorXd& v, double lambda) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        double av = 0.0;
        for (std::size_t e = s.offsets[i]; e < s.offsets[i + 1]; ++e)
            av += s.weights[e] * v[s.neighbors[e]];
        const double cv = s.degree[i] * v[static_cast<Eigen::Index>(i)];
        const double r = cv - av - lambda * cv;
        num += r * r;
        den += cv * cv;
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

/// Normalized affinity D^-1/2 A D^-1/2 as a sparse matrix.
inline Eigen::SparseMatrix<double> normalized_affinity(const Subgraph& s,
                                                       const Eigen::VectorXd& inv_sqrt_deg) {
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(s.neighbors.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t e = s.offsets[i]; e < s.offsets[i + 1]; ++e) {
            const std::size_t j = s.neighbors[e];
            t.emplace_back(static_cast<int>(i), static_cast<int>(j),
                           s.weights[e] * inv_sqrt_deg[static_cast<Eigen::Index>(i)] *
                               inv_sqrt_deg[static_cast<Eigen::Index>(j)]);
        }
    const auto n = static_cast<Eigen::Index>(s.size());
    Eigen::SparseMatrix<double> m(n, n);
    m.setFromTriplets(t.begin(), t.end());
    return m;
}

/// Second-smallest eigenpair of L = I - D^-1/2 A D^-1/2 by dense decomposition.
inline std::pair<double, Eigen::VectorXd> dense_second(const Subgraph& s,
                                                       const Eigen::VectorXd& inv_sqrt_deg) {
    Eigen::MatrixXd l = -Eigen::MatrixXd(normalized_affinity(s, inv_sqrt_deg));
    l.diagonal().array() += 1.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(l);
    if (es.info() != Eigen::Success) throw EigenSolverError("dense eigensolver failed");
    return {es.eigenvalues()[1], es.eigenvectors().col(1)};
}

/// Second-smallest eigenpair of L by Lanczos on the shift-inverted operator
/// (L + shift I)^-1, deflating the known null vector D^1/2 1.
inline std::pair<double, Eigen::VectorXd> sparse_second(const Subgraph& s,
                                                        const Eigen::VectorXd& sqrt_deg,
                                                        const Eigen::VectorXd& inv_sqrt_deg,
                                                        double tol, std::size_t max_iter) {
    const auto n = static_cast<Eigen::Index>(s.size());
    const double shift = 1e-4;
    Eigen::SparseMatrix<double> na = normalized_affinity(s, inv_sqrt_deg);
    Eigen::SparseMatrix<double> shifted(n, n);
    shifted.setIdentity();
    shifted *= (1.0 + shift);
    shifted -= na;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(shifted);
    if (solver.info() != Eigen::Success) throw EigenSolverError("factorization of shifted Laplacian failed");

    Eigen::VectorXd null = sqrt_deg / sqrt_deg.norm();
    auto deflate = [&](Eigen::VectorXd& x) { x -= null.dot(x) * null; };
    auto apply_l = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x - na * x; };

    // Fixed start vector from a seeded generator for reproducible output.
    std::mt19937 rng(0x5eed);
    Eigen::VectorXd start(n);
    for (Eigen::Index i = 0; i < n; ++i)
        start[i] = static_cast<double>(rng()) / static_cast<double>(std::mt19937::max()) - 0.5;

    const Eigen::Index krylov = std::min<Eigen::Index>(n - 1, 48);
    std::size_t iterations = 0;
    Eigen::VectorXd best;
    double best_mu = 0.0;
    double best_res = std::numeric_limits<double>::infinity();
    while (iterations < max_iter) {
        deflate(start);
        double nrm = start.norm();
        if (nrm == 0.0) throw EigenSolverError("Lanczos start vector vanished");
        Eigen::MatrixXd q(n, krylov);
        Eigen::VectorXd alpha(krylov), beta(krylov);
        q.col(0) = start / nrm;
        Eigen::Index m = 0;
        for (; m < krylov; ++m) {
            ++iterations;
            Eigen::VectorXd w = solver.solve(q.col(m));
            deflate(w);
            alpha[m] = q.col(m).dot(w);
            // Full reorthogonalization, twice.
            for (int pass = 0; pass < 2; ++pass) {
                w -= q.leftCols(m + 1) * (q.leftCols(m + 1).transpose() * w);
                deflate(w);
            }
            beta[m] = w.norm();
            if (m + 1 == krylov || beta[m] < 1e-14 * std::abs(alpha[m])) {
                ++m;
                break;
            }
            q.col(m + 1) = w / beta[m];
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
        Eigen::VectorXd diag = alpha.head(m);
        Eigen::VectorXd sub = beta.head(std::max<Eigen::Index>(m - 1, 0));
        tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
        if (tri.info() != Eigen::Success) throw EigenSolverError("tridiagonal eigensolver failed");
        // Largest Ritz value of the inverse corresponds to the smallest of L.
        Eigen::VectorXd y = q.leftCols(m) * tri.eigenvectors().col(m - 1);
        deflate(y);
        y.normalize();
        const double mu = y.dot(apply_l(y));
        const Eigen::VectorXd r = apply_l(y) - mu * y;
        // Residual in the generalized form: D^1/2 r against D^1/2 y.
        const double res = (sqrt_deg.array() * r.array()).matrix().norm() /
                           std::max((sqrt_deg.array() * y.array()).matrix().norm(), 1e-300);
        if (res < best_res) {
            best_res = res;
            best = y;
            best_mu = mu;
        }
        if (res <= tol) break;
        start = y;  // restart from the current Ritz vector
    }
    if (!(best_res <= tol))
        throw EigenSolverError("Lanczos did not converge (residual " + std::to_string(best_res) +
                               " after " + std::to_string(iterations) + " iterations)");
    return {best_mu, best};
}

}  // namespace detail

/// Second-smallest generalized eigenpair of (C - A) x = lambda C x on the
/// masked subgraph. A disconnected subgraph has lambda = 0 and v constant per
/// component.
inline CutSolution solve_fiedler(const Subgraph& s, const NCutConfig& cfg) {
    if (s.size() < 2) throw ValidationError("solve_fiedler: need at least two nodes");
    CutSolution sol;
    const auto n = static_cast<Eigen::Index>(s.size());
    const auto [comp, count] = subgraph_components(s);
    sol.components = count;
    if (count > 1) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = static_cast<double>(comp[static_cast<std::size_t>(i)]);
        v.array() -= v.mean();
        detail::canonical_sign(v);
        sol.lambda = 0.0;
        sol.v.assign(v.data(), v.data() + n);
        sol.residual = detail::generalized_residual(s, v, 0.0);
        return sol;
    }

    Eigen::VectorXd sqrt_deg(n), inv_sqrt_deg(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        sqrt_deg[i] = std::sqrt(s.degree[static_cast<std::size_t>(i)]);
        inv_sqrt_deg[i] = 1.0 / sqrt_deg[i];
    }
    std::pair<double, Eigen::VectorXd> eig;
    if (s.size() <= cfg.dense_limit) {
        eig = detail::dense_second(s, inv_sqrt_deg);
        sol.dense = true;
    } else {
        eig = detail::sparse_second(s, sqrt_deg, inv_sqrt_deg, cfg.eigen_tolerance,
                                    cfg.max_eigen_iterations);
        sol.dense = false;
    }
    Eigen::VectorXd v = (eig.second.array() * inv_sqrt_deg.array()).matrix();
    detail::canonical_sign(v);
    sol.lambda = std::max(0.0, eig.first);
    sol.residual = detail::generalized_residual(s, v, eig.first);
    if (!(sol.residual <= cfg.eigen_tolerance) && !sol.dense)
        throw EigenSolverError("eigen residual " + std::to_string(sol.residual) + " above tolerance");
    sol.v.assign(v.data(), v.data() + n);
    return sol;
}

inline CutSolution solve_fiedler(const AffinityGraph& g, const std::vector<std::size_t>& active,
                                 const NCutConfig& cfg) {
    return solve_fiedler(mask_graph(g, active), cfg);
}

// ---------------------------------------------------------------------------
// Discrete split

namespace detail {

/// Neumaier-compensated running sum. Cut weights across a clean boundary can
/// be ~1e-20 while the sweep adds and removes O(1) interior edges.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

}  // namespace detail

struct Split {
    std::vector<std::size_t> part_a;  // local indices with v <= threshold
    std::vector<std::size_t> part_b;
    double threshold = 0.0;
    double cost = 0.0;  // NCut(A, B)
};

/// NCut(A,B) = cut/assoc(A,V) + cut/assoc(B,V) for a 0/1 side assignment.
inline double ncut_cost(const Subgraph& s, const std::vector<std::uint8_t>& side) {
    double cut = 0.0, assoc_a = 0.0, assoc_b = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        (side[i] ? assoc_b : assoc_a) += s.degree[i];
        for (std::size_t e = s.offsets[i]; e < s.offsets[i + 1]; ++e)
            if (side[i] != side[s.neighbors[e]] && i < s.neighbors[e]) cut += s.weights[e];
    }
    if (assoc_a <= 0.0 || assoc_b <= 0.0) return std::numeric_limits<double>::infinity();
    return cut / assoc_a + cut / assoc_b;
}

/// Minimum-NCut threshold cut of v. Nodes are swept in ascending v and the cut
/// weight is updated incrementally; only thresholds between distinct values of
/// v are considered, so tied nodes always share a side.
inline Split split_segment(const Subgraph& s, const std::vector<double>& v, const NCutConfig& cfg) {
    const std::size_t n = s.size();
    if (v.size() != n) throw ValidationError("split_segment: vector length mismatch");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });

    std::vector<bool> allowed(n, true);  // allowed[k]: may cut after order[k]
    if (cfg.split_candidates == SplitCandidates::Quantiles) {
        std::fill(allowed.begin(), allowed.end(), false);
        for (std::size_t q = 1; q < cfg.histogram_bins; ++q) {
            const std::size_t k = q * n / cfg.histogram_bins;
            if (k >= 1) allowed[k - 1] = true;
        }
    }

    double total = 0.0;
    for (double d : s.degree) total += d;
    std::vector<std::uint8_t> in_a(n, 0);
    detail::CompensatedSum cut_sum, assoc_sum;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_k = n;
    for (std::size_t k = 0; k + 1 < n; ++k) {
        const std::size_t u = order[k];
        in_a[u] = 1;
        assoc_sum.add(s.degree[u]);
        for (std::size_t e = s.offsets[u]; e < s.offsets[u + 1]; ++e)
            cut_sum.add(in_a[s.neighbors[e]] ? -s.weights[e] : s.weights[e]);
        if (v[order[k + 1]] == v[u] || !allowed[k]) continue;
        const double assoc_a = assoc_sum.value();
        const double assoc_b = total - assoc_a;
        if (assoc_a <= 0.0 || assoc_b <= 0.0) continue;
        const double cut = std::max(0.0, cut_sum.value());
        const double c = cut / assoc_a + cut / assoc_b;
        if (c < best) {
            best = c;
            best_k = k;
        }
    }
    if (best_k == n) throw ValidationError("split_segment: no threshold yields two non-empty sides");
    Split out;
    out.threshold = v[order[best_k]];
    for (std::size_t i = 0; i < n; ++i) (v[i] <= out.threshold ? out.part_a : out.part_b).push_back(i);
    std::vector<std::uint8_t> side(n, 0);
    for (std::size_t i : out.part_b) side[i] = 1;
    out.cost = ncut_cost(s, side);
    return out;
}

// ---------------------------------------------------------------------------

/// Histogram of v over [min v, max v] with `bins` equal-width bins.
inline std::vector<std::size_t> histogram(const std::vector<double>& v, std::size_t bins) {
    std::vector<std::size_t> h(bins, 0);
    if (v.empty()) return h;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double range = *hi - *lo;
    for (double x : v) {
        std::size_t b = range > 0.0 ? static_cast<std::size_t>((x - *lo) / range * static_cast<double>(bins)) : 0;
        h[std::min(b, bins - 1)]++;
    }
    return h;
}

/// True when the histogram of v is uneven enough (min/max bin count below the
/// threshold) for a cut to be trusted. Constant v is never stable.
inline bool stability_check(const std::vector<double>& v, const NCutConfig& cfg) {
    if (v.empty()) throw ValidationError("stability_check: empty vector");
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    if (!(*hi > *lo)) return false;
    const auto h = histogram(v, cfg.histogram_bins);
    const auto [mn, mx] = std::minmax_element(h.begin(), h.end());
    return static_cast<double>(*mn) / static_cast<double>(*mx) < cfg.stability_ratio_threshold;
}

// ---------------------------------------------------------------------------
// Recursive delineation

struct CutRecord {
    std::size_t depth = 0;
    std::size_t nodes = 0;
    double lambda = 0.0;
    double discrete_cost = 0.0;
    bool stable = false;
    bool applied = false;
};

struct Delineation {
    std::vector<std::vector<std::size_t>> instances;  // graph node ids, each sorted
    std::vector<std::size_t> dropped;
    std::vector<CutRecord> cuts;
    std::vector<std::string> warnings;
};

/// Recursively bipartitions `segment` (graph node ids). A cut is applied when
/// lambda < cut_cost_threshold and the stability check passes; disconnected
/// parts are separated first. Parts smaller than min_instance_size are dropped.
inline Delineation delineate(const AffinityGraph& g, std::vector<std::size_t> segment,
                             const NCutConfig& cfg) {
    cfg.validate();
    Delineation out;
    struct Task {
        std::vector<std::size_t> nodes;
        std::size_t depth;
    };
    std::sort(segment.begin(), segment.end());
    segment.erase(std::unique(segment.begin(), segment.end()), segment.end());
    std::vector<Task> stack;
    stack.push_back({std::move(segment), 0});
    while (!stack.empty()) {
        Task t = std::move(stack.back());
        stack.pop_back();
        if (t.nodes.empty()) continue;
        if (t.nodes.size() < cfg.min_instance_size) {
            out.dropped.insert(out.dropped.end(), t.nodes.begin(), t.nodes.end());
            continue;
        }
        if (t.depth >= cfg.max_recursion_depth) {
            out.warnings.push_back("recursion depth limit reached for a part of " +
                                   std::to_string(t.nodes.size()) + " nodes");
            out.instances.push_back(std::move(t.nodes));
            continue;
        }
        const Subgraph s = mask_graph(g, t.nodes);
        const auto [comp, count] = subgraph_components(s);
        if (count > 1) {
            std::vector<std::vector<std::size_t>> parts(count);
            for (std::size_t k = 0; k < s.size(); ++k) parts[comp[k]].push_back(t.nodes[k]);
            for (auto it = parts.rbegin(); it != parts.rend(); ++it)
                stack.push_back({std::move(*it), t.depth + 1});
            continue;
        }
        CutRecord rec{t.depth, t.nodes.size(), 0.0, 0.0, false, false};
        CutSolution sol;
        try {
            sol = solve_fiedler(s, cfg);
        } catch (const EigenSolverError& e) {
            out.warnings.push_back(e.what());
            out.instances.push_back(std::move(t.nodes));
            continue;
        }
        rec.lambda = sol.lambda;
        rec.stable = stability_check(sol.v, cfg);
        std::optional<Split> split;
        if (sol.lambda < cfg.cut_cost_threshold && rec.stable) {
            split = split_segment(s, sol.v, cfg);
            rec.discrete_cost = split->cost;
            rec.applied = true;
        }
        out.cuts.push_back(rec);
        if (!split) {
            out.instances.push_back(std::move(t.nodes));
            continue;
        }
        std::vector<std::size_t> a, b;
        for (std::size_t k : split->part_a) a.push_back(t.nodes[k]);
        for (std::size_t k : split->part_b) b.push_back(t.nodes[k]);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        stack.push_back({std::move(b), t.depth + 1});
        stack.push_back({std::move(a), t.depth + 1});
    }
    std::sort(out.instances.begin(), out.instances.end(),
              [](const auto& x, const auto& y) { return x.front() < y.front(); });
    std::sort(out.dropped.begin(), out.dropped.end());
    return out;
}

/// Nearest-neighbour upscaling of per-node instance ids (0 = none) to full
/// resolution, restricted to `mask`. Masked pixels whose cell carries no
/// instance get 0.
inline Raster<std::uint32_t> upsample_instances(const Raster<std::uint32_t>& grid_ids,
                                                std::size_t width, std::size_t height,
                                                const BinaryMap& mask) {
    if (mask.width() != width || mask.height() != height)
        throw ValidationError("upsample_instances: mask size mismatch");
    if (grid_ids.width() > width || grid_ids.height() > height)
        throw ValidationError("upsample_instances: grid larger than target");
    const auto row_cell = cell_of_index(height, grid_ids.height());
    const auto col_cell = cell_of_index(width, grid_ids.width());
    Raster<std::uint32_t> out(height, width);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            if (mask(y, x)) out(y, x) = grid_ids(row_cell[y], col_cell[x]);
    return out;
}

/// Graph nodes whose cell contains at least one pixel of the mask.
inline std::vector<std::size_t> nodes_of_mask(const BinaryMap& mask, std::size_t wb, std::size_t hb) {
    const auto row_cell = cell_of_index(mask.height(), hb);
    const auto col_cell = cell_of_index(mask.width(), wb);
    std::vector<std::uint8_t> hit(wb * hb, 0);
    for (std::size_t y = 0; y < mask.height(); ++y)
        for (std::size_t x = 0; x < mask.width(); ++x)
            if (mask(y, x)) hit[row_cell[y] * wb + col_cell[x]] = 1;
    std::vector<std::size_t> nodes;
    for (std::size_t i = 0; i < hit.size(); ++i)
        if (hit[i]) nodes.push_back(i);
    return nodes;
}

}  // namespace panfuse::ncut
