#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "redsim/common.hpp"
#include "redsim/gateway.hpp"
#include "redsim/scenario.hpp"

namespace redsim::classify {

class MalformedReplyError : public Error { public: using Error::Error; };
class EmptyInputError : public Error { public: using Error::Error; };

struct ClassificationTriple {
    int party = 0;      // -1 anti, 0 neutral, 1 pro
    int sentiment = 0;  // -1 negative, 0 neutral, 1 positive
    int violence = 0;   // 0 non-violent, 1 violent

    bool operator==(const ClassificationTriple&) const = default;
};

// --- prompt -------------------------------------------------------------------

inline std::string violent_sample(scenario::Candidate c) {
    return c == scenario::Candidate::Trump ? "Donald Trump is a piece of shit!" : "Hillary Clinton is a whore!";
}

inline std::string build_classification_prompt(const std::string& text, scenario::Candidate c) {
    const std::string full = scenario::full_name(c);
    const std::string abbrev = scenario::short_name(c);
    std::string p;
    p += "You can only return three numbers, such as 1, -1, 0, without providing any other text. "
         "Classify the text provided based on the following categories, returning the right number for each entry:\n";
    p += "- Position on " + full + ": Pro-" + abbrev + " [1], Neutral [0], Anti-" + abbrev + " [-1].\n";
    p += "- Sentiment of the text: Positive [1], Neutral [0], Negative [-1].\n";
    p += "- Level of violence in language: Violent [1], Non-violent [0].\n";
    p += "The text to classify is: " + violent_sample(c) + "\n";
    p += "Assistant: -1, -1, 1\n";
    p += "Continue classifying the following comment: " + text + "\n";
    p += "Assistant:";
    return p;
}

// --- reply parsing --------------------------------------------------------------

// Extracts exactly three integers (any whitespace/comma layout) and validates
// them against the label codomains.
inline ClassificationTriple parse_classification(const std::string& reply) {
    std::vector<long> nums;
    const std::size_t n = reply.size();
    std::size_t i = 0;
    while (i < n) {
        const char c = reply[i];
        const bool neg = c == '-';
        const std::size_t d = neg ? i + 1 : i;
        if (d < n && reply[d] >= '0' && reply[d] <= '9') {
            std::size_t j = d;
            long v = 0;
            while (j < n && reply[j] >= '0' && reply[j] <= '9') {
                v = v * 10 + (reply[j] - '0');
                ++j;
            }
            nums.push_back(neg ? -v : v);
            i = j;
        } else {
            ++i;
        }
    }
    if (nums.size() != 3) {
        throw MalformedReplyError("expected exactly 3 integers in classifier reply, found " +
                                  std::to_string(nums.size()) + ": \"" + reply + "\"");
    }
    auto in = [](long v, long lo, long hi) { return v >= lo && v <= hi; };
    if (!in(nums[0], -1, 1) || !in(nums[1], -1, 1) || !in(nums[2], 0, 1)) {
        throw MalformedReplyError("classifier reply out of range: \"" + reply + "\"");
    }
    return ClassificationTriple{static_cast<int>(nums[0]), static_cast<int>(nums[1]), static_cast<int>(nums[2])};
}

// --- per-comment aggregation ------------------------------------------------------

// Modal label over runs; a tie for the top count resolves to 0.
inline int modal_label(const std::vector<int>& labels) {
    std::map<int, int> counts;
    for (int v : labels) ++counts[v];
    int best = 0;
    int best_count = -1;
    bool tied = false;
    for (const auto& [label, count] : counts) {
        if (count > best_count) {
            best = label;
            best_count = count;
            tied = false;
        } else if (count == best_count) {
            tied = true;
        }
    }
    return tied ? 0 : best;
}

struct AveragedScore {
    double party_mean = 0.0;
    double sentiment_mean = 0.0;
    double violence_rate = 0.0;
    ClassificationTriple modal;
    int n_runs = 0;         // runs that produced a valid triple
    int n_failed_runs = 0;  // runs still malformed after the single re-query
    std::string error;      // last gateway/parse error, for diagnostics

    bool unclassified() const { return n_runs == 0; }
};

inline AveragedScore average_runs(const std::vector<ClassificationTriple>& runs, int failed_runs = 0) {
    AveragedScore s;
    s.n_failed_runs = failed_runs;
    s.n_runs = static_cast<int>(runs.size());
    if (runs.empty()) return s;
    std::vector<int> party, sentiment, violence;
    for (const auto& t : runs) {
        party.push_back(t.party);
        sentiment.push_back(t.sentiment);
        violence.push_back(t.violence);
        s.party_mean += t.party;
        s.sentiment_mean += t.sentiment;
        s.violence_rate += t.violence;
    }
    const auto n = static_cast<double>(runs.size());
    s.party_mean /= n;
    s.sentiment_mean /= n;
    s.violence_rate /= n;
    s.modal.party = modal_label(party);
    s.modal.sentiment = modal_label(sentiment);
    s.modal.violence = modal_label(violence);
    return s;
}

// Re-queries use a shifted run index so the retry has its own cache slot.
inline constexpr int kRequeryRunOffset = 1'000'000;

// Classifies each text n_runs times through the gateway. A malformed reply is
// re-queried once; a run that stays malformed is dropped from the averages and
// counted. Gateway failures are recorded per text; an exhausted call budget
// still aborts, because every later call would fail the same way.
inline std::vector<AveragedScore> classify_corpus(gateway::Gateway& gw, const std::vector<std::string>& texts,
                                                  scenario::Candidate candidate, int n_runs,
                                                  const scenario::GenerationParams& params = {}) {
    if (n_runs < 1) throw Error("classify_corpus needs n_runs >= 1");
    std::vector<AveragedScore> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        const std::string prompt = build_classification_prompt(text, candidate);
        std::vector<ClassificationTriple> runs;
        int failed = 0;
        std::string last_error;
        for (int r = 0; r < n_runs; ++r) {
            try {
                std::string reply = gw.classify(prompt, params, r);
                try {
                    runs.push_back(parse_classification(reply));
                } catch (const MalformedReplyError&) {
                    reply = gw.classify(prompt, params, r + kRequeryRunOffset);
                    try {
                        runs.push_back(parse_classification(reply));
                    } catch (const MalformedReplyError& e2) {
                        ++failed;
                        last_error = e2.what();
                    }
                }
            } catch (const gateway::BudgetExceededError&) {
                throw;
            } catch (const Error& e) {
                ++failed;
                last_error = e.what();
            }
        }
        AveragedScore s = average_runs(runs, failed);
        s.error = last_error;
        out.push_back(std::move(s));
    }
    return out;
}

// --- shares ------------------------------------------------------------------------

enum class Axis { Party, Sentiment, Violence };

inline const char* to_string(Axis a) {
    switch (a) {
        case Axis::Party: return "party";
        case Axis::Sentiment: return "sentiment";
        case Axis::Violence: return "violence";
    }
    return "?";
}

// For party: pro/neutral/anti. For sentiment: positive/neutral/negative.
// For violence: `pro` holds the violent share, `neutral` the non-violent one,
// and `anti` is always 0.
struct ShareBreakdown {
    double pro = 0.0;
    double neutral = 0.0;
    double anti = 0.0;
    std::size_t n_counted = 0;
    std::size_t n_unclassified = 0;
};

inline ShareBreakdown aggregate_shares(const std::vector<AveragedScore>& scores, Axis axis) {
    if (scores.empty()) throw EmptyInputError("aggregate_shares over empty score list");
    ShareBreakdown b;
    std::size_t pro = 0, neutral = 0, anti = 0;
    for (const auto& s : scores) {
        if (s.unclassified()) {
            ++b.n_unclassified;
            continue;
        }
        int label = 0;
        switch (axis) {
            case Axis::Party: label = s.modal.party; break;
            case Axis::Sentiment: label = s.modal.sentiment; break;
            case Axis::Violence: label = s.modal.violence; break;
        }
        if (label > 0) {
            ++pro;
        } else if (label < 0) {
            ++anti;
        } else {
            ++neutral;
        }
        ++b.n_counted;
    }
    if (b.n_counted == 0) throw EmptyInputError("aggregate_shares: every comment was unclassified");
    const auto n = static_cast<double>(b.n_counted);
    b.pro = static_cast<double>(pro) / n;
    b.neutral = static_cast<double>(neutral) / n;
    b.anti = static_cast<double>(anti) / n;
    return b;
}

// --- user-mean distribution -----------------------------------------------------------

struct UserMeanDistribution {
    std::vector<std::pair<std::string, double>> user_means;  // sorted by author
    std::vector<double> bin_edges;                           // size bins+1, spanning [-1,1]
    std::vector<std::size_t> counts;                         // size bins
};

// Mean of per-comment party means per author, then a fixed-width histogram
// over [-1,1]. x = 1 lands in the last bin.
inline UserMeanDistribution user_mean_distribution(const std::vector<std::pair<std::string, double>>& comment_means,
                                                   int bins = 21) {
    if (bins < 1) throw Error("user_mean_distribution needs bins >= 1");
    std::map<std::string, std::pair<double, std::size_t>> acc;  // author -> (sum, count)
    for (const auto& [author, mean] : comment_means) {
        auto& slot = acc[author];
        slot.first += mean;
        slot.second += 1;
    }
    UserMeanDistribution d;
    d.counts.assign(static_cast<std::size_t>(bins), 0);
    const double width = 2.0 / bins;
    for (int i = 0; i <= bins; ++i) d.bin_edges.push_back(-1.0 + width * i);
    for (const auto& [author, slot] : acc) {
        const double mean = slot.first / static_cast<double>(slot.second);
        d.user_means.emplace_back(author, mean);
        auto idx = static_cast<long>(std::floor((mean + 1.0) / width));
        idx = std::clamp<long>(idx, 0, bins - 1);
        ++d.counts[static_cast<std::size_t>(idx)];
    }
    return d;
}

// --- prompt-length binning ---------------------------------------------------------------

struct LengthBin {
    int lo = 0;  // inclusive token bound
    int hi = 0;  // exclusive token bound
    std::size_t count = 0;
    double mean_party = 0.0;
    bool has_mean = false;  // false marks an empty bin
};

// Fixed-width bins over prompt token estimates. Values inside each bin are
// sorted before summing so the output is byte-identical under input
// permutation.
inline std::vector<LengthBin> bin_by_prompt_length(const std::vector<double>& party_means,
                                                   const std::vector<int>& token_estimates, int bin_width = 250) {
    if (party_means.size() != token_estimates.size()) {
        throw Error("bin_by_prompt_length: one token estimate per score required");
    }
    if (bin_width < 1) throw Error("bin_by_prompt_length needs bin_width >= 1");
    std::vector<LengthBin> bins;
    if (party_means.empty()) return bins;
    int max_tokens = 0;
    for (int t : token_estimates) max_tokens = std::max(max_tokens, t);
    const auto n_bins = static_cast<std::size_t>(max_tokens / bin_width) + 1;
    std::vector<std::vector<double>> values(n_bins);
    for (std::size_t i = 0; i < party_means.size(); ++i) {
        const auto idx = static_cast<std::size_t>(std::max(0, token_estimates[i]) / bin_width);
        values[idx].push_back(party_means[i]);
    }
    for (std::size_t i = 0; i < n_bins; ++i) {
        LengthBin b;
        b.lo = static_cast<int>(i) * bin_width;
        b.hi = b.lo + bin_width;
        b.count = values[i].size();
        if (!values[i].empty()) {
            std::sort(values[i].begin(), values[i].end());
            double sum = 0.0;
            for (double v : values[i]) sum += v;
            b.mean_party = sum / static_cast<double>(values[i].size());
            b.has_mean = true;
        }
        bins.push_back(b);
    }
    return bins;
}

// --- cross tabulation -----------------------------------------------------------------------

struct CrossTab {
    // Row = conditioner label, column = outcome label, index = label + 1.
    std::array<std::array<std::size_t, 3>, 3> counts{};
    std::array<std::array<double, 3>, 3> fractions{};
    std::array<bool, 3> row_empty{true, true, true};
};

inline CrossTab cross_tab(const std::vector<int>& conditioner, const std::vector<int>& outcome) {
    if (conditioner.size() != outcome.size()) throw Error("cross_tab: inputs must be aligned by item");
    CrossTab t;
    for (std::size_t i = 0; i < conditioner.size(); ++i) {
        const int r = conditioner[i];
        const int c = outcome[i];
        if (r < -1 || r > 1 || c < -1 || c > 1) throw Error("cross_tab labels must be in {-1,0,1}");
        ++t.counts[static_cast<std::size_t>(r + 1)][static_cast<std::size_t>(c + 1)];
    }
    for (std::size_t r = 0; r < 3; ++r) {
        std::size_t row_sum = 0;
        for (std::size_t c = 0; c < 3; ++c) row_sum += t.counts[r][c];
        t.row_empty[r] = row_sum == 0;
        for (std::size_t c = 0; c < 3; ++c) {
            t.fractions[r][c] = row_sum == 0 ? 0.0 : static_cast<double>(t.counts[r][c]) / static_cast<double>(row_sum);
        }
    }
    return t;
}

// --- serialization ---------------------------------------------------------------------------

inline nlohmann::json score_to_json(const AveragedScore& s) {
    nlohmann::json j;
    j["party_mean"] = s.party_mean;
    j["sentiment_mean"] = s.sentiment_mean;
    j["violence_rate"] = s.violence_rate;
    j["modal"] = {{"party", s.modal.party}, {"sentiment", s.modal.sentiment}, {"violence", s.modal.violence}};
    j["n_runs"] = s.n_runs;
    j["n_failed_runs"] = s.n_failed_runs;
    if (!s.error.empty()) j["error"] = s.error;
    return j;
}

inline AveragedScore score_from_json(const nlohmann::json& j) {
    AveragedScore s;
    s.party_mean = j.at("party_mean").get<double>();
    s.sentiment_mean = j.at("sentiment_mean").get<double>();
    s.violence_rate = j.at("violence_rate").get<double>();
    s.modal.party = j.at("modal").at("party").get<int>();
    s.modal.sentiment = j.at("modal").at("sentiment").get<int>();
    s.modal.violence = j.at("modal").at("violence").get<int>();
    s.n_runs = j.at("n_runs").get<int>();
    s.n_failed_runs = j.value("n_failed_runs", 0);
    s.error = j.value("error", "");
    return s;
}

}  // namespace redsim::classify
