#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "redsim/common.hpp"
#include "redsim/embedspace.hpp"

namespace redsim::embedspace {

namespace detail {

// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues in
// `values` and the corresponding eigenvectors as columns of `vectors`.
// Deterministic: fixed sweep order, fixed convergence rule.
inline void jacobi_eigen(std::vector<std::vector<double>> m, std::vector<double>& values,
                         std::vector<std::vector<double>>& vectors) {
    const std::size_t n = m.size();
    vectors.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) vectors[i][i] = 1.0;
    values.assign(n, 0.0);
    if (n == 0) return;
    if (n == 1) {
        values[0] = m[0][0];
        return;
    }

    double frob = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) frob += m[i][j] * m[i][j];
    }
    const double eps = 1e-30 + 1e-28 * frob;

    const int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) off += m[i][j] * m[i][j];
        }
        if (off <= eps) break;
        for (std::size_t p = 0; p < n - 1; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (m[p][q] == 0.0) continue;
                const double theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                const double tau = s / (1.0 + c);
                const double app = m[p][p];
                const double aqq = m[q][q];
                const double apq = m[p][q];
                m[p][p] = app - t * apq;
                m[q][q] = aqq + t * apq;
                m[p][q] = 0.0;
                m[q][p] = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = m[k][p];
                    const double akq = m[k][q];
                    m[k][p] = akp - s * (akq + tau * akp);
                    m[p][k] = m[k][p];
                    m[k][q] = akq + s * (akp - tau * akq);
                    m[q][k] = m[k][q];
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = vectors[k][p];
                    const double vkq = vectors[k][q];
                    vectors[k][p] = vkp - s * (vkq + tau * vkp);
                    vectors[k][q] = vkq + s * (vkp - tau * vkq);
                }
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) values[i] = m[i][i];
}

// Indices of eigenvalues sorted descending; ties keep the lower index first.
inline std::vector<std::size_t> sort_desc(const std::vector<double>& values) {
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    return idx;
}

}  // namespace detail

struct PcaResult {
    std::vector<Vec> projected;       // N x k_used
    std::vector<double> eigenvalues;  // top k_used variances, descending
    std::vector<Vec> components;      // k_used direction vectors of length D
    int k_requested = 0;
    int k_used = 0;
    bool rank_reduced = false;  // k was cut down to the available rank
};

// Centers columns and projects onto the top-k principal directions. When
// N < D the N x N Gram matrix is diagonalized instead of the D x D
// covariance. Sign convention: each direction's largest-magnitude component
// is positive. If k exceeds the available rank, k is reduced and the result
// is flagged instead of failing.
inline PcaResult pca_reduce(const std::vector<Vec>& rows, int k) {
    const std::size_t n = rows.size();
    if (n < 2) throw Error("pca_reduce needs at least 2 rows");
    const std::size_t d = rows[0].size();
    for (const auto& r : rows) {
        if (r.size() != d) throw DimMismatchError("pca_reduce: ragged input rows");
    }
    if (k < 1) throw Error("pca_reduce needs k >= 1");

    PcaResult res;
    res.k_requested = k;
    const auto limit = static_cast<int>(std::min<std::size_t>(n - 1, d));
    if (k > limit) {
        k = limit;
        res.rank_reduced = true;
    }

    // Center columns.
    std::vector<double> mean(d, 0.0);
    for (const auto& r : rows) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
    }
    for (double& v : mean) v /= static_cast<double>(n);
    std::vector<Vec> x(n, Vec(d));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) x[i][j] = rows[i][j] - mean[j];
    }

    const double denom = static_cast<double>(n - 1);
    std::vector<double> eigenvalues;
    std::vector<Vec> directions;  // unit vectors of length D

    if (d <= n) {
        // Covariance route: C = X^T X / (n-1), D x D.
        std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t a = 0; a < d; ++a) {
                const double xa = x[i][a];
                if (xa == 0.0) continue;
                for (std::size_t b = a; b < d; ++b) cov[a][b] += xa * x[i][b];
            }
        }
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t b = a; b < d; ++b) {
                cov[a][b] /= denom;
                cov[b][a] = cov[a][b];
            }
        }
        std::vector<double> vals;
        std::vector<std::vector<double>> vecs;
        detail::jacobi_eigen(std::move(cov), vals, vecs);
        const auto order = detail::sort_desc(vals);
        for (std::size_t r = 0; r < order.size(); ++r) {
            eigenvalues.push_back(vals[order[r]]);
            Vec dir(d);
            for (std::size_t a = 0; a < d; ++a) dir[a] = vecs[a][order[r]];
            directions.push_back(std::move(dir));
        }
    } else {
        // Gram route: G = X X^T / (n-1), N x N; directions recovered as
        // X^T u / ||X^T u||.
        std::vector<std::vector<double>> gram(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i; j < n; ++j) {
                double s = 0.0;
                for (std::size_t a = 0; a < d; ++a) s += x[i][a] * x[j][a];
                gram[i][j] = s / denom;
                gram[j][i] = gram[i][j];
            }
        }
        std::vector<double> vals;
        std::vector<std::vector<double>> vecs;
        detail::jacobi_eigen(std::move(gram), vals, vecs);
        const auto order = detail::sort_desc(vals);
        for (std::size_t r = 0; r < order.size(); ++r) {
            const double lambda = vals[order[r]];
            if (lambda <= 0.0) break;
            Vec dir(d, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double ui = vecs[i][order[r]];
                if (ui == 0.0) continue;
                for (std::size_t a = 0; a < d; ++a) dir[a] += ui * x[i][a];
            }
            const double dn = norm(dir);
            if (dn == 0.0) break;
            for (double& v : dir) v /= dn;
            eigenvalues.push_back(lambda);
            directions.push_back(std::move(dir));
        }
    }

    // Available rank: eigenvalues meaningfully above zero.
    const double max_eig = eigenvalues.empty() ? 0.0 : std::max(eigenvalues[0], 0.0);
    const double rank_tol = max_eig * 1e-12;
    int rank = 0;
    for (double v : eigenvalues) {
        if (v > rank_tol && v > 0.0) ++rank;
    }
    if (rank == 0) {
        // Constant input: no variance anywhere. Emit a single zero column so
        // downstream shapes stay sane, flagged as rank-reduced.
        directions.assign(1, Vec(d, 0.0));
        eigenvalues.assign(1, 0.0);
        k = 1;
        res.rank_reduced = true;
    } else if (k > rank) {
        k = rank;
        res.rank_reduced = true;
    }
    res.k_used = k;

    // Deterministic sign: flip each direction so its largest-|component| is
    // positive (ties broken by the first such index).
    for (int r = 0; r < k; ++r) {
        Vec& dir = directions[static_cast<std::size_t>(r)];
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t a = 0; a < dir.size(); ++a) {
            if (std::abs(dir[a]) > best) {
                best = std::abs(dir[a]);
                arg = a;
            }
        }
        if (dir[arg] < 0.0) {
            for (double& v : dir) v = -v;
        }
    }

    res.projected.assign(n, Vec(static_cast<std::size_t>(k), 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (int r = 0; r < k; ++r) {
            res.projected[i][static_cast<std::size_t>(r)] = dot(x[i], directions[static_cast<std::size_t>(r)]);
        }
    }
    res.eigenvalues.assign(eigenvalues.begin(), eigenvalues.begin() + k);
    res.components.assign(directions.begin(), directions.begin() + k);
    return res;
}

}  // namespace redsim::embedspace
