#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "redsim/common.hpp"
#include "redsim/scenario.hpp"

namespace redsim::embedspace {

class ZeroVectorError : public Error { public: using Error::Error; };
class DimMismatchError : public Error { public: using Error::Error; };
class MissingCounterpartError : public Error { public: using Error::Error; };
class SingletonGroupError : public Error { public: using Error::Error; };

using Vec = std::vector<double>;

// --- groups -------------------------------------------------------------------

enum class Group { Real, RealHistory, NoHistory, ProCandidate, AntiCandidate };

inline constexpr std::array<Group, 5> kAllGroups = {Group::Real, Group::RealHistory, Group::NoHistory,
                                                    Group::ProCandidate, Group::AntiCandidate};

inline const char* to_string(Group g) {
    switch (g) {
        case Group::Real: return "real";
        case Group::RealHistory: return "real_history";
        case Group::NoHistory: return "no_history";
        case Group::ProCandidate: return "pro_candidate";
        case Group::AntiCandidate: return "anti_candidate";
    }
    return "?";
}

inline Group group_from_string(const std::string& s) {
    for (Group g : kAllGroups) {
        if (s == to_string(g)) return g;
    }
    throw Error("unknown group: " + s);
}

inline Group group_from_kind(scenario::Kind k) {
    switch (k) {
        case scenario::Kind::RealHistory: return Group::RealHistory;
        case scenario::Kind::NoHistory: return Group::NoHistory;
        case scenario::Kind::ProCandidate: return Group::ProCandidate;
        case scenario::Kind::AntiCandidate: return Group::AntiCandidate;
    }
    throw Error("unmapped scenario kind");
}

inline int group_index(Group g) { return static_cast<int>(g); }

// --- cosine geometry -------------------------------------------------------------

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double cosine_similarity(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) {
        throw DimMismatchError("cosine_similarity: dims " + std::to_string(a.size()) + " vs " +
                               std::to_string(b.size()));
    }
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw ZeroVectorError("cosine_similarity undefined for a zero vector");
    return dot(a, b) / (na * nb);
}

inline double cosine_distance(const Vec& a, const Vec& b) { return 1.0 - cosine_similarity(a, b); }

// --- user centroids ------------------------------------------------------------------

struct CommentEmbedding {
    std::string author;
    Group group = Group::Real;
    Vec vector;
};

struct UserCentroid {
    std::string author;
    Group group = Group::Real;
    Vec vector;
    int n_comments = 0;
    bool zero = false;  // mean collapsed to the zero vector
};

// One centroid per (author, group): the componentwise mean of that user's
// comment embeddings. Output sorted by (group order, author).
inline std::vector<UserCentroid> user_centroids(const std::vector<CommentEmbedding>& comments) {
    std::map<std::pair<int, std::string>, UserCentroid> acc;
    for (const auto& c : comments) {
        const auto key = std::make_pair(group_index(c.group), c.author);
        auto it = acc.find(key);
        if (it == acc.end()) {
            UserCentroid u;
            u.author = c.author;
            u.group = c.group;
            u.vector = c.vector;
            u.n_comments = 1;
            acc.emplace(key, std::move(u));
        } else {
            UserCentroid& u = it->second;
            if (u.vector.size() != c.vector.size()) {
                throw DimMismatchError("user_centroids: inconsistent embedding dims for author " + c.author);
            }
            for (std::size_t i = 0; i < u.vector.size(); ++i) u.vector[i] += c.vector[i];
            ++u.n_comments;
        }
    }
    std::vector<UserCentroid> out;
    out.reserve(acc.size());
    for (auto& [key, u] : acc) {
        const double inv = 1.0 / static_cast<double>(u.n_comments);
        double norm2 = 0.0;
        for (double& x : u.vector) {
            x *= inv;
            norm2 += x * x;
        }
        u.zero = norm2 == 0.0;
        out.push_back(std::move(u));
    }
    return out;
}

// --- exceedance against null baselines -----------------------------------------------

enum class Baseline { RandomMatch, AllRealMean };

inline const char* to_string(Baseline b) { return b == Baseline::RandomMatch ? "random_match" : "all_real_mean"; }

struct ExceedanceResult {
    double proportion = 0.0;      // generated users strictly above their threshold
    double mean_counterpart = 0.0;
    double mean_threshold = 0.0;  // RandomMatch: the global threshold itself
    std::size_t n_users = 0;
};

// Counterpart similarity is cos(generated centroid, real centroid of the same
// author). RandomMatch: one global threshold, the mean similarity across
// n_shuffles random author matchings. AllRealMean: per-user threshold, the
// mean similarity of that generated user to every real centroid. Ties do not
// count as exceeding.
inline ExceedanceResult similarity_exceedance(const std::vector<UserCentroid>& generated,
                                              const std::vector<UserCentroid>& real, Baseline baseline,
                                              std::uint64_t seed = 0, int n_shuffles = 100) {
    if (generated.empty()) throw Error("similarity_exceedance: no generated centroids");
    if (real.empty()) throw Error("similarity_exceedance: no real centroids");
    std::unordered_map<std::string, const UserCentroid*> by_author;
    by_author.reserve(real.size());
    for (const auto& r : real) by_author[r.author] = &r;

    std::vector<double> counterpart(generated.size());
    for (std::size_t i = 0; i < generated.size(); ++i) {
        auto it = by_author.find(generated[i].author);
        if (it == by_author.end()) {
            throw MissingCounterpartError("no real counterpart for generated user " + generated[i].author);
        }
        counterpart[i] = cosine_similarity(generated[i].vector, it->second->vector);
    }

    ExceedanceResult res;
    res.n_users = generated.size();
    for (double s : counterpart) res.mean_counterpart += s;
    res.mean_counterpart /= static_cast<double>(generated.size());

    std::size_t exceed = 0;
    if (baseline == Baseline::RandomMatch) {
        SplitMix rng(derive_seed(seed, 0xE5CE));
        std::vector<std::size_t> perm(real.size());
        double total = 0.0;
        std::size_t pairs = 0;
        for (int k = 0; k < n_shuffles; ++k) {
            for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
            rng.shuffle(perm);
            for (std::size_t i = 0; i < generated.size(); ++i) {
                total += cosine_similarity(generated[i].vector, real[perm[i % real.size()]].vector);
                ++pairs;
            }
        }
        const double threshold = total / static_cast<double>(pairs);
        res.mean_threshold = threshold;
        for (double s : counterpart) {
            if (s > threshold) ++exceed;
        }
    } else {
        double threshold_sum = 0.0;
        for (std::size_t i = 0; i < generated.size(); ++i) {
            double sum = 0.0;
            for (const auto& r : real) sum += cosine_similarity(generated[i].vector, r.vector);
            const double threshold = sum / static_cast<double>(real.size());
            threshold_sum += threshold;
            if (counterpart[i] > threshold) ++exceed;
        }
        res.mean_threshold = threshold_sum / static_cast<double>(generated.size());
    }
    res.proportion = static_cast<double>(exceed) / static_cast<double>(generated.size());
    return res;
}

// --- group distance matrix --------------------------------------------------------------

struct GroupDistanceMatrix {
    std::vector<Group> groups;                        // present groups, canonical order
    std::vector<std::vector<double>> mean_distance;   // G x G, symmetric
    std::vector<bool> singleton;                      // diagonal undefined for these groups
};

inline GroupDistanceMatrix group_distance_matrix(const std::vector<UserCentroid>& centroids) {
    if (centroids.empty()) throw Error("group_distance_matrix: no centroids");
    std::map<int, std::vector<const UserCentroid*>> by_group;
    for (const auto& c : centroids) by_group[group_index(c.group)].push_back(&c);

    GroupDistanceMatrix m;
    for (const auto& [gi, members] : by_group) {
        m.groups.push_back(static_cast<Group>(gi));
        m.singleton.push_back(members.size() < 2);
    }
    const std::size_t g = m.groups.size();
    m.mean_distance.assign(g, std::vector<double>(g, 0.0));
    std::vector<const std::vector<const UserCentroid*>*> lists;
    lists.reserve(g);
    for (const auto& [gi, members] : by_group) lists.push_back(&members);

    for (std::size_t i = 0; i < g; ++i) {
        for (std::size_t j = i; j < g; ++j) {
            const auto& a = *lists[i];
            const auto& b = *lists[j];
            double sum = 0.0;
            std::size_t pairs = 0;
            if (i == j) {
                for (std::size_t p = 0; p < a.size(); ++p) {
                    for (std::size_t q = p + 1; q < a.size(); ++q) {
                        sum += cosine_distance(a[p]->vector, a[q]->vector);
                        ++pairs;
                    }
                }
            } else {
                for (const auto* pa : a) {
                    for (const auto* pb : b) {
                        sum += cosine_distance(pa->vector, pb->vector);
                        ++pairs;
                    }
                }
            }
            const double mean = pairs == 0 ? 0.0 : sum / static_cast<double>(pairs);
            m.mean_distance[i][j] = mean;
            m.mean_distance[j][i] = mean;
        }
    }
    return m;
}

// Mean pairwise cosine similarity over all unordered distinct pairs.
inline double intra_group_similarity(const std::vector<UserCentroid>& members) {
    if (members.size() < 2) {
        throw SingletonGroupError("intra_group_similarity needs at least 2 members, got " +
                                  std::to_string(members.size()));
    }
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < members.size(); ++i) {
        for (std::size_t j = i + 1; j < members.size(); ++j) {
            sum += cosine_similarity(members[i].vector, members[j].vector);
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

}  // namespace redsim::embedspace
