#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "redsim/common.hpp"
#include "redsim/corpus.hpp"

namespace redsim::scenario {

using json = nlohmann::json;

class TargetNotFoundError : public Error { public: using Error::Error; };
class MissingHistoryError : public Error { public: using Error::Error; };
class OversizeContextError : public Error { public: using Error::Error; };

enum class Candidate { Trump, Clinton };
enum class Kind { RealHistory, NoHistory, ProCandidate, AntiCandidate };
enum class Stance { Pro, Anti };

inline const char* to_string(Candidate c) { return c == Candidate::Trump ? "Trump" : "Clinton"; }
inline const char* full_name(Candidate c) { return c == Candidate::Trump ? "Donald Trump" : "Hillary Clinton"; }
inline const char* short_name(Candidate c) { return c == Candidate::Trump ? "Trump" : "Hillary"; }

inline const char* to_string(Kind k) {
    switch (k) {
        case Kind::RealHistory: return "real_history";
        case Kind::NoHistory: return "no_history";
        case Kind::ProCandidate: return "pro_candidate";
        case Kind::AntiCandidate: return "anti_candidate";
    }
    return "?";
}

inline Kind kind_from_string(const std::string& s) {
    if (s == "real_history") return Kind::RealHistory;
    if (s == "no_history") return Kind::NoHistory;
    if (s == "pro_candidate") return Kind::ProCandidate;
    if (s == "anti_candidate") return Kind::AntiCandidate;
    throw Error("unknown scenario kind: " + s);
}

inline Candidate candidate_from_string(const std::string& s) {
    if (s == "Trump") return Candidate::Trump;
    if (s == "Clinton") return Candidate::Clinton;
    throw Error("unknown candidate: " + s);
}

inline constexpr std::array<Kind, 4> kAllKinds = {Kind::RealHistory, Kind::NoHistory, Kind::ProCandidate,
                                                  Kind::AntiCandidate};

// --- prompt template ------------------------------------------------------
// The generation prompt is assembled from these fixed parts; <user>,
// <user_history>, <post> and <comments> are the only substitution points.

inline constexpr const char* kRoleGamePreamble =
    "User: We are playing a role game. I'm about to give you a post from Reddit with some comments. "
    "You will have to reply to the last one as its author would.";

inline constexpr const char* kHistoryIntro =
    "In order to do it, I will give you some previous relevant comments from the user whose text you have to "
    "simulate.";

inline constexpr const char* kHistoryHeader =
    "The following are some previous comments from the user you have to simulate:";

inline std::string user_line(const std::string& user) { return "The user you have to simulate is: " + user + "."; }

inline std::string thread_intro(const std::string& user) {
    return "Now this is the thread where user " + user + " interacted; at the end, you'll have to reply as user " +
           user + " would.";
}

inline std::string reply_cue(const std::string& user) { return "Assistant: User " + user + " replies:"; }

// --- fictitious histories -------------------------------------------------
// The four hand-written partisan histories, preserved character for
// character (including the typographic apostrophes and the doubled space).

inline constexpr const char* kProClintonComment =
    "That’s why Hillary should’ve been president in the first place! She has the experience and the vision "
    "to lead this country forward. She’s spent decades fighting for women’s rights, healthcare, and "
    "working families. We need someone like her who actually understands policy and diplomacy, not just empty "
    "slogans.";

inline constexpr const char* kProTrumpComment =
    "That’s exactly why we need Trump back!  He’s the only one who actually put America first and "
    "didn’t bow down to the political elites. Under Trump, we had a strong economy, secure borders, and respect "
    "on the world stage. No one else will fight for the people like he does.";

inline constexpr const char* kAntiClintonComment =
    "Hillary Clinton is the last person this country needs. Her record is full of scandals, dishonesty, and failed "
    "policies. She represents corruption and the political establishment that has ignored regular Americans for "
    "years. Supporting her is supporting the same broken system that’s failed us time and time again.";

inline constexpr const char* kAntiTrumpComment =
    "Donald Trump is exactly the kind of leader we don’t need. He spent his entire time in office stirring up "
    "anger, spreading lies, and tearing this country apart. His focus was never on unity or progress—it was "
    "always on dividing Americans and feeding his own ego. Electing him again would be a huge step backward.";

inline constexpr const char* kClintonRepliedTo =
    "The country is at a critical crossroads, and we need a leader with experience, intelligence, and compassion. "
    "It’s time for someone who can tackle tough issues with grace and dignity, not divisive rhetoric.";

inline constexpr const char* kProTrumpRepliedTo =
    "America is facing big challenges, and it’s time for a leader who will bring us together to find real "
    "solutions. We can’t keep going down the path of division and hatred. We need someone who cares about all "
    "Americans, not just their base.";

inline constexpr const char* kAntiTrumpRepliedTo =
    "It’s time we move past the anger and division in our politics. We need leaders who prioritize unity and "
    "progress for all Americans, not just those who agree with them.";

// Single-entry history used by the pro/anti-candidate scenarios.
inline corpus::UserHistory fictitious_history(Candidate candidate, Stance stance) {
    corpus::UserHistory h;
    h.author = "<fictitious>";
    corpus::HistoryEntry e;
    if (candidate == Candidate::Clinton) {
        e.user_comment = stance == Stance::Pro ? kProClintonComment : kAntiClintonComment;
        e.replied_to = kClintonRepliedTo;
    } else {
        e.user_comment = stance == Stance::Pro ? kProTrumpComment : kAntiTrumpComment;
        e.replied_to = stance == Stance::Pro ? kProTrumpRepliedTo : kAntiTrumpRepliedTo;
    }
    h.entries.push_back(std::move(e));
    return h;
}

// --- branch rendering -----------------------------------------------------

struct RenderOptions {
    bool anonymize_authors = false;
};

inline std::string render_author(const std::string& author, const RenderOptions& opts) {
    if (!opts.anonymize_authors) return author;
    return "user_" + to_hex(fnv1a64(author) & 0xffffffffull, 8);
}

struct BranchContext {
    std::string post_line;                   // "Post: <body>"
    std::vector<std::string> comment_lines;  // "<author>: <body>", root-to-parent order

    std::string joined() const {
        std::string out = post_line;
        for (const auto& line : comment_lines) {
            out += '\n';
            out += line;
        }
        return out;
    }
};

namespace detail {

inline bool find_path(const std::vector<corpus::CommentNode>& nodes, const std::string& node_ref,
                      std::vector<const corpus::CommentNode*>& path) {
    for (const auto& n : nodes) {
        path.push_back(&n);
        if (n.record.id == node_ref) return true;
        if (find_path(n.children, node_ref, path)) return true;
        path.pop_back();
    }
    return false;
}

}  // namespace detail

// The conversation context fed to the model: the post, then every comment on
// the root-to-target branch except the target itself.
inline BranchContext render_branch(const corpus::ConversationTree& tree, const corpus::TargetComment& target,
                                   const RenderOptions& opts = {}) {
    std::vector<const corpus::CommentNode*> path;
    if (!detail::find_path(tree.comments, target.node_ref, path)) {
        throw TargetNotFoundError("target comment " + target.node_ref + " not in tree " + tree.root.id);
    }
    BranchContext ctx;
    ctx.post_line = "Post: " + tree.root.body;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        ctx.comment_lines.push_back(render_author(path[i]->record.author, opts) + ": " + path[i]->record.body);
    }
    return ctx;
}

// --- token estimation -----------------------------------------------------

using TokenEstimator = std::function<int(std::string_view)>;

// Rough BPE rule of thumb: one token per four bytes, rounded up.
inline int estimate_tokens(std::string_view text) {
    return static_cast<int>((text.size() + 3) / 4);
}

// --- prompt assembly ------------------------------------------------------

struct GenerationParams {
    double temperature = 0.0;
    double top_p = 1.0;
    std::string model_name;
};

struct PromptBundle {
    Kind scenario = Kind::NoHistory;
    Candidate candidate = Candidate::Trump;
    std::string tree_ref;
    std::string target_ref;
    std::string author;
    std::string text;
    int token_estimate = 0;
    GenerationParams params;
};

struct PromptOptions {
    int max_tokens = 0;  // 0 = no budget
    TokenEstimator estimator = estimate_tokens;
    bool anonymize_authors = false;
};

inline std::string render_history_block(const std::string& user, const std::vector<corpus::HistoryEntry>& entries) {
    std::string out;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (i) out += "\n\n";
        out += "User " + user + " says: \"" + entries[i].user_comment + "\"\n";
        out += "in reply to: \"" + entries[i].replied_to + "\"";
    }
    return out;
}

namespace detail {

inline std::string assemble(Kind kind, const std::string& user, const std::string& history_block,
                            const std::string& post_line, const std::vector<std::string>& comment_lines,
                            const std::string& user_name_for_cue) {
    std::string out;
    if (kind == Kind::ProCandidate || kind == Kind::AntiCandidate) {
        // The fictitious reply carries the key signal, so it leads the prompt.
        out += history_block;
        out += '\n';
    }
    out += kRoleGamePreamble;
    out += '\n';
    if (kind == Kind::RealHistory) {
        out += kHistoryIntro;
        out += '\n';
    }
    out += user_line(user);
    out += '\n';
    if (kind == Kind::RealHistory) {
        out += kHistoryHeader;
        out += '\n';
        out += history_block;
        out += '\n';
    }
    out += thread_intro(user);
    out += '\n';
    out += post_line;
    out += '\n';
    for (const auto& line : comment_lines) {
        out += line;
        out += '\n';
    }
    out += reply_cue(user_name_for_cue);
    return out;
}

}  // namespace detail

// Builds the full prompt for one (target, scenario) pair. RealHistory
// requires a non-empty history; the other scenarios must not receive one
// (pro/anti fetch their fictitious history internally). When max_tokens is
// set, oldest history entries go first, then the branch comments nearest the
// root; the post and the instruction lines are never cut.
inline PromptBundle build_prompt(const corpus::TargetComment& target, const BranchContext& context,
                                 const std::optional<corpus::UserHistory>& history, Kind kind, Candidate candidate,
                                 const GenerationParams& params = {}, const PromptOptions& opts = {}) {
    if (kind == Kind::RealHistory) {
        if (!history || history->entries.empty()) {
            throw MissingHistoryError("scenario real_history requires a non-empty user history");
        }
    } else if (history.has_value()) {
        throw Error("history must be absent for scenario " + std::string(to_string(kind)));
    }

    RenderOptions ropts{opts.anonymize_authors};
    const std::string user = render_author(target.author, ropts);

    std::vector<corpus::HistoryEntry> entries;
    if (kind == Kind::RealHistory) {
        entries = history->entries;
    } else if (kind == Kind::ProCandidate || kind == Kind::AntiCandidate) {
        entries = fictitious_history(candidate, kind == Kind::ProCandidate ? Stance::Pro : Stance::Anti).entries;
    }

    std::vector<std::string> comment_lines = context.comment_lines;
    auto render = [&](const std::vector<corpus::HistoryEntry>& es, const std::vector<std::string>& cls) {
        const std::string block = es.empty() ? std::string() : render_history_block(user, es);
        return detail::assemble(kind, user, block, context.post_line, cls, user);
    };

    std::string text = render(entries, comment_lines);
    if (opts.max_tokens > 0) {
        // Drop oldest real-history entries first (the fictitious entry is the
        // scenario itself and is never dropped), then the shallowest branch
        // comments.
        while (opts.estimator(text) > opts.max_tokens && kind == Kind::RealHistory && entries.size() > 1) {
            entries.erase(entries.begin());
            text = render(entries, comment_lines);
        }
        while (opts.estimator(text) > opts.max_tokens && !comment_lines.empty()) {
            comment_lines.erase(comment_lines.begin());
            text = render(entries, comment_lines);
        }
        if (opts.estimator(text) > opts.max_tokens) {
            throw OversizeContextError("prompt for target " + target.node_ref + " exceeds token budget " +
                                       std::to_string(opts.max_tokens));
        }
    }

    PromptBundle bundle;
    bundle.scenario = kind;
    bundle.candidate = candidate;
    bundle.tree_ref = target.tree_ref;
    bundle.target_ref = target.node_ref;
    bundle.author = target.author;
    bundle.text = std::move(text);
    bundle.token_estimate = opts.estimator(bundle.text);
    bundle.params = params;
    return bundle;
}

inline json bundle_to_json(const PromptBundle& b) {
    json j;
    j["scenario"] = to_string(b.scenario);
    j["candidate"] = to_string(b.candidate);
    j["tree_ref"] = b.tree_ref;
    j["target_ref"] = b.target_ref;
    j["author"] = b.author;
    j["text"] = b.text;
    j["token_estimate"] = b.token_estimate;
    j["temperature"] = b.params.temperature;
    j["top_p"] = b.params.top_p;
    j["model_name"] = b.params.model_name;
    return j;
}

inline PromptBundle bundle_from_json(const json& j) {
    PromptBundle b;
    b.scenario = kind_from_string(j.at("scenario").get<std::string>());
    b.candidate = candidate_from_string(j.at("candidate").get<std::string>());
    b.tree_ref = j.at("tree_ref").get<std::string>();
    b.target_ref = j.at("target_ref").get<std::string>();
    b.author = j.at("author").get<std::string>();
    b.text = j.at("text").get<std::string>();
    b.token_estimate = j.at("token_estimate").get<int>();
    b.params.temperature = j.at("temperature").get<double>();
    b.params.top_p = j.at("top_p").get<double>();
    b.params.model_name = j.value("model_name", "");
    return b;
}

}  // namespace redsim::scenario
