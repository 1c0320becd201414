#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "redsim/common.hpp"
#include "redsim/function_words.hpp"

namespace redsim::textstats {

class EmptyCorpusError : public Error { public: using Error::Error; };
class InsufficientDataError : public Error { public: using Error::Error; };
class TooFewSharedError : public Error { public: using Error::Error; };

inline constexpr const char* kUrlToken = "<url>";

// --- tokenizer ---------------------------------------------------------------
// Lowercase (ASCII range), split on Unicode whitespace, strip leading and
// trailing punctuation, collapse URLs to a sentinel token. Interior
// punctuation (apostrophes, hyphens) is kept.

namespace detail {

// Decodes one UTF-8 codepoint starting at i, advancing i. Invalid bytes are
// returned as their Latin-1 value so malformed input still tokenizes.
inline char32_t next_codepoint(std::string_view s, std::size_t& i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) {
        ++i;
        return b0;
    }
    int extra = 0;
    char32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        extra = 1;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        extra = 2;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        extra = 3;
        cp = b0 & 0x07;
    } else {
        ++i;
        return b0;
    }
    if (i + static_cast<std::size_t>(extra) >= s.size()) {
        // Truncated sequence: fall back to the raw byte.
        ++i;
        return b0;
    }
    for (int k = 1; k <= extra; ++k) {
        const auto bk = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
        if ((bk & 0xC0) != 0x80) {
            ++i;
            return b0;
        }
        cp = (cp << 6) | (bk & 0x3F);
    }
    i += static_cast<std::size_t>(extra) + 1;
    return cp;
}

inline bool is_space_cp(char32_t c) {
    switch (c) {
        case U' ': case U'\t': case U'\n': case U'\r': case U'\f': case U'\v':
        case 0x0085: case 0x00A0: case 0x1680: case 0x2028: case 0x2029:
        case 0x202F: case 0x205F: case 0x3000:
            return true;
        default:
            return c >= 0x2000 && c <= 0x200A;
    }
}

inline bool is_edge_punct_cp(char32_t c) {
    if (c < 0x80) {
        const char ch = static_cast<char>(c);
        return (ch >= '!' && ch <= '/') || (ch >= ':' && ch <= '@') || (ch >= '[' && ch <= '`') ||
               (ch >= '{' && ch <= '~');
    }
    switch (c) {
        case 0x2018: case 0x2019: case 0x201C: case 0x201D:  // curly quotes
        case 0x2013: case 0x2014:                            // dashes
        case 0x2026:                                         // ellipsis
        case 0x00A1: case 0x00BF:                            // inverted ! ?
        case 0x00AB: case 0x00BB:                            // guillemets
        case 0x2022:                                         // bullet
            return true;
        default:
            return false;
    }
}

inline void ascii_lower_inplace(std::string& s) {
    for (char& c : s) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c + 32);
    }
}

inline bool looks_like_url(std::string_view lowered) {
    // Skip leading punctuation such as '(' before the scheme.
    std::size_t i = 0;
    while (i < lowered.size()) {
        std::size_t j = i;
        const char32_t cp = next_codepoint(lowered, j);
        if (!is_edge_punct_cp(cp)) break;
        // "www." would be eaten by the dot check only mid-token; leading
        // chars here are pre-scheme wrappers like quotes and parens.
        if (lowered.compare(i, 4, "www.") == 0) break;
        i = j;
    }
    const std::string_view t = lowered.substr(i);
    return t.substr(0, 7) == "http://" || t.substr(0, 8) == "https://" || t.substr(0, 4) == "www.";
}

// Strips leading/trailing punctuation codepoints.
inline std::string strip_edges(const std::string& tok) {
    std::vector<std::pair<std::size_t, std::size_t>> cps;  // (byte offset, byte length)
    std::vector<char32_t> vals;
    std::size_t i = 0;
    const std::string_view sv(tok);
    while (i < sv.size()) {
        const std::size_t start = i;
        vals.push_back(next_codepoint(sv, i));
        cps.emplace_back(start, i - start);
    }
    std::size_t lo = 0;
    std::size_t hi = vals.size();
    while (lo < hi && is_edge_punct_cp(vals[lo])) ++lo;
    while (hi > lo && is_edge_punct_cp(vals[hi - 1])) --hi;
    if (lo == 0 && hi == vals.size()) return tok;
    if (lo >= hi) return {};
    const std::size_t from = cps[lo].first;
    const std::size_t to = cps[hi - 1].first + cps[hi - 1].second;
    return tok.substr(from, to - from);
}

}  // namespace detail

inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    std::string chunk;
    auto flush = [&] {
        if (chunk.empty()) return;
        detail::ascii_lower_inplace(chunk);
        if (detail::looks_like_url(chunk)) {
            out.emplace_back(kUrlToken);
        } else {
            std::string tok = detail::strip_edges(chunk);
            if (!tok.empty()) out.push_back(std::move(tok));
        }
        chunk.clear();
    };
    while (i < text.size()) {
        const std::size_t start = i;
        const char32_t cp = detail::next_codepoint(text, i);
        if (detail::is_space_cp(cp)) {
            flush();
        } else {
            chunk.append(text.substr(start, i - start));
        }
    }
    flush();
    return out;
}

// --- sentence splitter --------------------------------------------------------
// Splits on . ! ? followed by whitespace or end of text. A period does not end
// a sentence after a known abbreviation or a single uppercase initial.

namespace detail {

inline const std::unordered_set<std::string_view>& abbreviation_guard() {
    static const std::unordered_set<std::string_view> set = {
        "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc", "e.g", "i.e", "u.s", "u.k",
        "gov", "sen", "rep", "gen", "col", "sgt", "capt", "lt", "approx", "dept", "est", "inc", "ltd", "no",
    };
    return set;
}

// The word immediately before position `dot` (letters and interior dots).
inline std::string word_before(std::string_view text, std::size_t dot) {
    std::size_t begin = dot;
    while (begin > 0) {
        const char c = text[begin - 1];
        const bool wordish = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '.';
        if (!wordish) break;
        --begin;
    }
    std::string w(text.substr(begin, dot - begin));
    while (!w.empty() && w.back() == '.') w.pop_back();
    return w;
}

inline std::string trim_ws(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    while (b < e && is_ws(s[b])) ++b;
    while (e > b && is_ws(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

}  // namespace detail

inline std::vector<std::string> sentence_split(std::string_view text) {
    std::vector<std::string> out;
    std::size_t begin = 0;
    const std::size_t n = text.size();
    for (std::size_t i = 0; i < n; ++i) {
        const char c = text[i];
        if (c != '.' && c != '!' && c != '?') continue;
        // Collapse terminator runs ("?!", "...") onto the last one.
        std::size_t j = i;
        while (j + 1 < n && (text[j + 1] == '.' || text[j + 1] == '!' || text[j + 1] == '?')) ++j;
        const bool at_end = (j + 1 == n);
        const bool before_space = !at_end && (static_cast<unsigned char>(text[j + 1]) <= ' ');
        if (!at_end && !before_space) {
            i = j;
            continue;
        }
        if (c == '.' && j == i) {
            std::string w = detail::word_before(text, i);
            const bool single_upper_initial = w.size() == 1 && w[0] >= 'A' && w[0] <= 'Z';
            detail::ascii_lower_inplace(w);
            if (single_upper_initial || detail::abbreviation_guard().count(w) > 0) {
                i = j;
                continue;
            }
        }
        std::string sent = detail::trim_ws(text.substr(begin, j + 1 - begin));
        if (!sent.empty()) out.push_back(std::move(sent));
        begin = j + 1;
        i = j;
    }
    std::string tail = detail::trim_ws(text.substr(begin));
    if (!tail.empty()) out.push_back(std::move(tail));
    return out;
}

// --- per-text features ---------------------------------------------------------

struct TextFeatures {
    double sentence_length = 0.0;  // tokens per sentence
    double article_pct = 0.0;
    double function_word_pct = 0.0;
    double ttr = 0.0;
    std::size_t total_tokens = 0;
    std::size_t unique_tokens = 0;
    std::size_t sentences = 0;
};

inline TextFeatures text_features(const std::string& text) {
    TextFeatures f;
    const auto sentences = sentence_split(text);
    std::size_t total = 0;
    std::size_t articles = 0;
    std::size_t function_words = 0;
    std::unordered_set<std::string> types;
    std::size_t sentences_with_tokens = 0;
    for (const auto& s : sentences) {
        const auto toks = tokenize(s);
        if (!toks.empty()) ++sentences_with_tokens;
        for (const auto& t : toks) {
            ++total;
            if (is_article(t)) ++articles;
            if (is_function_word(t)) ++function_words;
            types.insert(t);
        }
    }
    f.total_tokens = total;
    f.unique_tokens = types.size();
    f.sentences = sentences_with_tokens;
    if (total == 0) return f;
    f.sentence_length = static_cast<double>(total) / static_cast<double>(std::max<std::size_t>(1, f.sentences));
    f.article_pct = 100.0 * static_cast<double>(articles) / static_cast<double>(total);
    f.function_word_pct = 100.0 * static_cast<double>(function_words) / static_cast<double>(total);
    f.ttr = static_cast<double>(types.size()) / static_cast<double>(total);
    return f;
}

struct Estimate {
    double mean = 0.0;
    double std_error = 0.0;
    double std_dev = 0.0;  // sample standard deviation (n-1)
    std::size_t n = 0;
};

namespace detail {

inline Estimate estimate_of(const std::vector<double>& xs) {
    Estimate e;
    e.n = xs.size();
    if (xs.empty()) return e;
    double sum = 0.0;
    for (double x : xs) sum += x;
    e.mean = sum / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - e.mean) * (x - e.mean);
        e.std_dev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
        e.std_error = e.std_dev / std::sqrt(static_cast<double>(xs.size()));
    }
    return e;
}

}  // namespace detail

struct FeatureRecord {
    Estimate sentence_length;
    Estimate article_pct;
    Estimate function_word_pct;
    Estimate ttr;
    std::size_t texts_used = 0;
    std::size_t texts_skipped = 0;  // texts with zero tokens
};

// Per-text features averaged across the corpus; texts with no tokens are
// skipped (and counted) because TTR is undefined for them.
inline FeatureRecord features(const std::vector<std::string>& corpus) {
    if (corpus.empty()) throw EmptyCorpusError("feature extraction needs at least one text");
    std::vector<double> sl, ap, fp, ttr;
    FeatureRecord rec;
    for (const auto& text : corpus) {
        const TextFeatures f = text_features(text);
        if (f.total_tokens == 0) {
            ++rec.texts_skipped;
            continue;
        }
        sl.push_back(f.sentence_length);
        ap.push_back(f.article_pct);
        fp.push_back(f.function_word_pct);
        ttr.push_back(f.ttr);
    }
    if (sl.empty()) throw EmptyCorpusError("no text in the corpus produced any tokens");
    rec.texts_used = sl.size();
    rec.sentence_length = detail::estimate_of(sl);
    rec.article_pct = detail::estimate_of(ap);
    rec.function_word_pct = detail::estimate_of(fp);
    rec.ttr = detail::estimate_of(ttr);
    return rec;
}

// --- n-gram tables ---------------------------------------------------------------

struct NgramEntry {
    std::string gram;
    std::uint64_t count = 0;
    std::size_t rank = 0;
    double normalized_freq = 0.0;
};

struct NgramTable {
    int n = 1;
    std::uint64_t total_count = 0;
    std::vector<NgramEntry> entries;
};

// Grams never cross sentence boundaries. Ranks are 1..K by descending count,
// ties broken lexicographically.
inline NgramTable ngram_table(const std::vector<std::string>& corpus, int n) {
    if (n < 1 || n > 3) throw Error("ngram_table supports n in {1,2,3}, got " + std::to_string(n));
    std::map<std::string, std::uint64_t> counts;
    std::uint64_t total = 0;
    for (const auto& text : corpus) {
        for (const auto& sent : sentence_split(text)) {
            const auto toks = tokenize(sent);
            if (toks.size() < static_cast<std::size_t>(n)) continue;
            for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i) {
                std::string gram = toks[i];
                for (int k = 1; k < n; ++k) {
                    gram += ' ';
                    gram += toks[i + static_cast<std::size_t>(k)];
                }
                ++counts[gram];
                ++total;
            }
        }
    }
    NgramTable table;
    table.n = n;
    table.total_count = total;
    table.entries.reserve(counts.size());
    for (auto& [gram, count] : counts) {
        NgramEntry e;
        e.gram = gram;
        e.count = count;
        table.entries.push_back(std::move(e));
    }
    // std::map iteration is already lexicographic, so a stable sort by count
    // descending leaves ties in lexicographic order.
    std::stable_sort(table.entries.begin(), table.entries.end(),
                     [](const NgramEntry& a, const NgramEntry& b) { return a.count > b.count; });
    for (std::size_t i = 0; i < table.entries.size(); ++i) {
        table.entries[i].rank = i + 1;
        table.entries[i].normalized_freq =
            total == 0 ? 0.0 : static_cast<double>(table.entries[i].count) / static_cast<double>(total);
    }
    return table;
}

// --- Zipf fit -------------------------------------------------------------------

struct ZipfFit {
    double s = 0.0;   // exponent: f(r) = C r^{-s}
    double c = 0.0;   // normalization
    double r2 = 0.0;  // goodness of fit on the log-log scale
    std::size_t ranks_used = 0;
};

// OLS of log(normalized_freq) on log(rank) across entries with
// count >= min_count. Uses the stored normalized frequencies.
inline ZipfFit zipf_fit(const NgramTable& table, std::uint64_t min_count = 2) {
    std::vector<double> xs, ys;
    for (const auto& e : table.entries) {
        if (e.count < min_count) continue;
        if (e.normalized_freq <= 0.0) continue;
        xs.push_back(std::log(static_cast<double>(e.rank)));
        ys.push_back(std::log(e.normalized_freq));
    }
    if (xs.size() < 3) {
        throw InsufficientDataError("zipf_fit needs at least 3 ranks with count >= " + std::to_string(min_count) +
                                    ", got " + std::to_string(xs.size()));
    }
    const auto n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    const double slope = sxy / sxx;
    const double intercept = my - slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double resid = ys[i] - (intercept + slope * xs[i]);
        ss_res += resid * resid;
    }
    ZipfFit fit;
    fit.s = -slope;
    fit.c = std::exp(intercept);
    // Flat frequencies have zero variance to explain; call that a perfect fit.
    fit.r2 = syy == 0.0 ? 1.0 : 1.0 - ss_res / syy;
    fit.ranks_used = xs.size();
    return fit;
}

// --- rank correlation --------------------------------------------------------------

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    const auto n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw Error("pearson undefined for zero-variance input");
    return sxy / std::sqrt(sxx * syy);
}

// Pearson correlation between the rank positions of grams shared by both
// tables.
inline double rank_correlation(const NgramTable& a, const NgramTable& b) {
    std::unordered_map<std::string_view, std::size_t> rank_a;
    rank_a.reserve(a.entries.size());
    for (const auto& e : a.entries) rank_a.emplace(e.gram, e.rank);
    std::vector<double> ra, rb;
    for (const auto& e : b.entries) {
        auto it = rank_a.find(e.gram);
        if (it == rank_a.end()) continue;
        ra.push_back(static_cast<double>(it->second));
        rb.push_back(static_cast<double>(e.rank));
    }
    if (ra.size() < 2) {
        throw TooFewSharedError("rank_correlation needs at least 2 shared grams, got " + std::to_string(ra.size()));
    }
    return pearson(ra, rb);
}

}  // namespace redsim::textstats
