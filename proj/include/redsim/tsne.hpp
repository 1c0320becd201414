#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "redsim/common.hpp"
#include "redsim/embedspace.hpp"
#include "redsim/pca.hpp"

namespace redsim::embedspace {

class PerplexityTooLargeError : public Error { public: using Error::Error; };

struct TsneParams {
    double perplexity = 30.0;
    int iterations = 1000;
    double learning_rate = 200.0;
    int exaggeration_iters = 250;   // also the momentum switch point
    double exaggeration = 12.0;
    std::uint64_t seed = 0;
    int checkpoint_every = 50;      // KL divergence sampling interval
    int pca_dim = 50;               // pre-reduce when D exceeds this
};

struct KlCheckpoint {
    int iteration = 0;
    double kl = 0.0;
};

struct TsneResult {
    std::vector<std::array<double, 2>> points;
    std::vector<KlCheckpoint> kl_trace;
    TsneParams params;
    bool pca_applied = false;
};

namespace detail {

// Canonical processing order: rows sorted lexicographically by value, ties by
// original index. Makes the whole optimization independent of input order
// (exactly, for distinct rows).
inline std::vector<std::size_t> canonical_order(const std::vector<Vec>& rows) {
    std::vector<std::size_t> idx(rows.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (rows[a] != rows[b]) return rows[a] < rows[b];
        return a < b;
    });
    return idx;
}

// Conditional distributions P_{j|i} with per-point bandwidths binary-searched
// to match log(perplexity) entropy.
inline std::vector<std::vector<double>> conditional_affinities(const std::vector<std::vector<double>>& d2,
                                                               double perplexity) {
    const std::size_t n = d2.size();
    const double h_target = std::log(perplexity);
    std::vector<std::vector<double>> p(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        double beta = 1.0;
        double beta_min = -std::numeric_limits<double>::infinity();
        double beta_max = std::numeric_limits<double>::infinity();
        std::vector<double> row(n, 0.0);
        for (int iter = 0; iter < 50; ++iter) {
            double sum = 0.0;
            double weighted = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) {
                    row[j] = 0.0;
                    continue;
                }
                row[j] = std::exp(-beta * d2[i][j]);
                sum += row[j];
                weighted += d2[i][j] * row[j];
            }
            if (sum <= 0.0) {
                // Bandwidth collapsed every weight to zero; fall back to
                // uniform over the other points.
                for (std::size_t j = 0; j < n; ++j) row[j] = j == i ? 0.0 : 1.0 / static_cast<double>(n - 1);
                break;
            }
            const double h = std::log(sum) + beta * weighted / sum;
            const double diff = h - h_target;
            if (std::abs(diff) < 1e-5) {
                for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
                break;
            }
            if (diff > 0.0) {
                beta_min = beta;
                beta = std::isinf(beta_max) ? beta * 2.0 : (beta + beta_max) / 2.0;
            } else {
                beta_max = beta;
                beta = std::isinf(beta_min) ? beta / 2.0 : (beta + beta_min) / 2.0;
            }
            if (iter == 49) {
                for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
            }
        }
        p[i] = std::move(row);
    }
    return p;
}

}  // namespace detail

// Exact (O(N^2)) t-SNE with early exaggeration, momentum and per-coordinate
// gains. The KL trace is measured against the true (un-exaggerated) P.
inline TsneResult tsne(const std::vector<Vec>& rows, TsneParams params = {}) {
    const std::size_t n = rows.size();
    if (params.perplexity <= 0.0) throw Error("tsne: perplexity must be positive");
    if (static_cast<double>(n) < 3.0 * params.perplexity) {
        throw PerplexityTooLargeError("tsne needs N >= 3*perplexity (N=" + std::to_string(n) + ", perplexity=" +
                                      std::to_string(params.perplexity) + ")");
    }
    if (params.iterations < 1) throw Error("tsne: iterations must be >= 1");
    for (const auto& r : rows) {
        if (r.size() != rows[0].size()) throw DimMismatchError("tsne: ragged input rows");
        for (double v : r) {
            if (!std::isfinite(v)) throw Error("tsne: non-finite input value");
        }
    }

    TsneResult res;
    res.params = params;

    // Canonical order first, so every later float op sees the same operand
    // sequence regardless of input order.
    const auto order = detail::canonical_order(rows);
    std::vector<Vec> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = rows[order[i]];

    if (params.pca_dim > 0 && static_cast<int>(x[0].size()) > params.pca_dim) {
        x = pca_reduce(x, params.pca_dim).projected;
        res.pca_applied = true;
    }

    // Pairwise squared distances.
    std::vector<std::vector<double>> d2(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t a = 0; a < x[i].size(); ++a) {
                const double diff = x[i][a] - x[j][a];
                s += diff * diff;
            }
            d2[i][j] = s;
            d2[j][i] = s;
        }
    }

    // Symmetrized affinities, floored to keep KL finite.
    const auto cond = detail::conditional_affinities(d2, params.perplexity);
    std::vector<std::vector<double>> p(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            p[i][j] = std::max((cond[i][j] + cond[j][i]) / (2.0 * static_cast<double>(n)), 1e-12);
        }
    }

    // Tiny Gaussian init in canonical order.
    SplitMix rng(derive_seed(params.seed, 0x75E));
    std::vector<std::array<double, 2>> y(n);
    for (auto& pt : y) {
        pt[0] = rng.next_gaussian() * 1e-4;
        pt[1] = rng.next_gaussian() * 1e-4;
    }
    std::vector<std::array<double, 2>> dy(n, {0.0, 0.0});
    std::vector<std::array<double, 2>> gains(n, {1.0, 1.0});

    std::vector<std::vector<double>> num(n, std::vector<double>(n, 0.0));
    auto kl_against_true_p = [&]() {
        double kl = 0.0;
        double sum_num = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i != j) sum_num += num[i][j];
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double q = std::max(num[i][j] / sum_num, 1e-12);
                kl += p[i][j] * std::log(p[i][j] / q);
            }
        }
        return kl;
    };

    for (int t = 0; t < params.iterations; ++t) {
        const bool exaggerating = t < params.exaggeration_iters;
        const double p_scale = exaggerating ? params.exaggeration : 1.0;
        const double momentum = t < params.exaggeration_iters ? 0.5 : 0.8;

        double sum_num = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dx = y[i][0] - y[j][0];
                const double dz = y[i][1] - y[j][1];
                const double v = 1.0 / (1.0 + dx * dx + dz * dz);
                num[i][j] = v;
                num[j][i] = v;
                sum_num += 2.0 * v;
            }
        }

        for (std::size_t i = 0; i < n; ++i) {
            double g0 = 0.0;
            double g1 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double q = std::max(num[i][j] / sum_num, 1e-12);
                const double mult = (p_scale * p[i][j] - q) * num[i][j];
                g0 += mult * (y[i][0] - y[j][0]);
                g1 += mult * (y[i][1] - y[j][1]);
            }
            g0 *= 4.0;
            g1 *= 4.0;
            for (int c = 0; c < 2; ++c) {
                const double g = c == 0 ? g0 : g1;
                const bool same_sign = (g > 0.0) == (dy[i][c] > 0.0);
                gains[i][c] = same_sign ? gains[i][c] * 0.8 : gains[i][c] + 0.2;
                gains[i][c] = std::max(gains[i][c], 0.01);
                dy[i][c] = momentum * dy[i][c] - params.learning_rate * gains[i][c] * g;
                y[i][c] += dy[i][c];
            }
        }

        // Re-center.
        double m0 = 0.0;
        double m1 = 0.0;
        for (const auto& pt : y) {
            m0 += pt[0];
            m1 += pt[1];
        }
        m0 /= static_cast<double>(n);
        m1 /= static_cast<double>(n);
        for (auto& pt : y) {
            pt[0] -= m0;
            pt[1] -= m1;
        }

        const bool checkpoint = params.checkpoint_every > 0 && ((t + 1) % params.checkpoint_every == 0);
        if (checkpoint || t + 1 == params.iterations) {
            // num[] holds pre-update similarities; recompute for the KL at the
            // current coordinates.
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = i + 1; j < n; ++j) {
                    const double dx = y[i][0] - y[j][0];
                    const double dz = y[i][1] - y[j][1];
                    const double v = 1.0 / (1.0 + dx * dx + dz * dz);
                    num[i][j] = v;
                    num[j][i] = v;
                }
            }
            if (res.kl_trace.empty() || res.kl_trace.back().iteration != t + 1) {
                res.kl_trace.push_back({t + 1, kl_against_true_p()});
            }
        }
    }

    res.points.assign(n, {0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i) res.points[order[i]] = y[i];
    for (const auto& pt : res.points) {
        if (!std::isfinite(pt[0]) || !std::isfinite(pt[1])) throw Error("tsne: optimization diverged to non-finite");
    }
    return res;
}

}  // namespace redsim::embedspace
