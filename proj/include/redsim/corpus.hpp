#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "redsim/common.hpp"

namespace redsim::corpus {

using json = nlohmann::json;

class EmptyInputError : public Error { public: using Error::Error; };
class CycleDetectedError : public Error { public: using Error::Error; };

enum class RecordKind { Post, Comment };

inline const char* to_string(RecordKind k) { return k == RecordKind::Post ? "post" : "comment"; }

// Body text substituted when a history entry's parent is not in the dump.
inline constexpr const char* kUnavailableParent = "[unavailable]";

// Author sentinels excluded from user selection.
inline bool is_deleted_author(const std::string& author) {
    return author == "[deleted]" || author == "[removed]" || author.empty();
}

struct RawRecord {
    std::string id;
    std::optional<std::string> parent_id;
    std::optional<std::string> link_id;
    std::string author;
    std::string body;
    std::int64_t created_utc = 0;
    std::string subreddit;
    RecordKind kind = RecordKind::Post;
};

// Dumps reference things as "t1_<id>" (comment) / "t3_<id>" (post); ids are
// matched with the prefix stripped.
inline std::string strip_thing_prefix(std::string id) {
    if (id.size() > 3 && id[0] == 't' && id[1] >= '0' && id[1] <= '9' && id[2] == '_') {
        return id.substr(3);
    }
    return id;
}

struct ParseDiagnostic {
    std::size_t line_no = 0;
    std::string message;
};

struct ParseResult {
    std::vector<RawRecord> records;
    std::vector<ParseDiagnostic> skipped;  // one entry per skipped line
    std::size_t total_lines = 0;           // non-blank lines seen
};

namespace detail {

inline bool is_blank(const std::string& line) {
    return line.find_first_not_of(" \t") == std::string::npos;
}

inline std::optional<std::string> opt_string_field(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw Error(std::string(key) + " is not a string");
    std::string v = it->get<std::string>();
    if (v.empty()) return std::nullopt;
    return v;
}

inline RawRecord record_from_json(const json& j) {
    RawRecord r;
    if (!j.is_object()) throw Error("line is not a JSON object");
    auto id = opt_string_field(j, "id");
    if (!id) throw Error("missing or empty id");
    r.id = strip_thing_prefix(*id);
    auto parent = opt_string_field(j, "parent_id");
    auto link = opt_string_field(j, "link_id");
    if (parent) r.parent_id = strip_thing_prefix(*parent);
    if (link) r.link_id = strip_thing_prefix(*link);
    if (r.parent_id.has_value() != r.link_id.has_value()) {
        throw Error("record has exactly one of parent_id/link_id");
    }
    r.kind = r.parent_id ? RecordKind::Comment : RecordKind::Post;
    auto author = opt_string_field(j, "author");
    r.author = author.value_or("");
    auto body = j.find("body");
    if (body != j.end() && body->is_string()) {
        r.body = body->get<std::string>();
    } else if (auto title = j.find("title"); title != j.end() && title->is_string()) {
        // Post dumps often carry the text in "title" (+ optional "selftext").
        r.body = title->get<std::string>();
        if (auto st = j.find("selftext"); st != j.end() && st->is_string() && !st->get<std::string>().empty()) {
            r.body += "\n" + st->get<std::string>();
        }
    }
    auto created = j.find("created_utc");
    if (created == j.end() || !created->is_number()) throw Error("missing created_utc");
    r.created_utc = created->get<std::int64_t>();
    if (r.created_utc <= 0) throw Error("created_utc must be positive");
    if (auto sub = opt_string_field(j, "subreddit")) r.subreddit = *sub;
    return r;
}

}  // namespace detail

// Parses newline-delimited JSON. Malformed lines are skipped and reported,
// never fatal; throws EmptyInputError only when no line yields a record.
inline ParseResult parse_dump(std::istream& in) {
    ParseResult out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::is_blank(line)) continue;
        ++out.total_lines;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            out.skipped.push_back({line_no, "invalid JSON"});
            continue;
        }
        try {
            out.records.push_back(detail::record_from_json(j));
        } catch (const std::exception& e) {
            out.skipped.push_back({line_no, e.what()});
        }
    }
    if (out.records.empty()) {
        throw EmptyInputError("dump contains no valid records");
    }
    return out;
}

struct CommentNode {
    RawRecord record;
    std::vector<CommentNode> children;  // sorted by (created_utc, id)
};

struct ConversationTree {
    RawRecord root;  // kind == Post
    std::vector<CommentNode> comments;
    std::string subreddit;

    std::size_t size() const {
        std::size_t n = 1;
        std::vector<const CommentNode*> stack;
        for (const auto& c : comments) stack.push_back(&c);
        while (!stack.empty()) {
            const CommentNode* node = stack.back();
            stack.pop_back();
            ++n;
            for (const auto& c : node->children) stack.push_back(&c);
        }
        return n;
    }
};

struct Forest {
    std::vector<ConversationTree> trees;  // sorted by root id
    std::vector<RawRecord> orphans;       // sorted by id

    std::size_t total_nodes() const {
        std::size_t n = 0;
        for (const auto& t : trees) n += t.size();
        return n;
    }
};

namespace detail {

inline void sort_children(CommentNode& node) {
    std::sort(node.children.begin(), node.children.end(), [](const CommentNode& a, const CommentNode& b) {
        if (a.record.created_utc != b.record.created_utc) return a.record.created_utc < b.record.created_utc;
        return a.record.id < b.record.id;
    });
    for (auto& c : node.children) sort_children(c);
}

inline CommentNode materialize(std::size_t idx, const std::vector<RawRecord>& comments,
                               const std::unordered_map<std::string, std::vector<std::size_t>>& children_of) {
    CommentNode node;
    node.record = comments[idx];
    auto it = children_of.find(comments[idx].id);
    if (it != children_of.end()) {
        node.children.reserve(it->second.size());
        for (std::size_t c : it->second) node.children.push_back(materialize(c, comments, children_of));
    }
    return node;
}

}  // namespace detail

// Reconstructs conversation trees by following parent links. Comments whose
// ancestor chain does not reach a post in the dump are returned as orphans;
// a chain that loops back on itself is a corrupt dump.
inline Forest build_forest(const std::vector<RawRecord>& records) {
    Forest out;
    std::vector<RawRecord> posts;
    std::vector<RawRecord> comments;
    std::unordered_set<std::string> seen_ids;
    for (const auto& r : records) {
        if (!seen_ids.insert(r.id).second) {
            out.orphans.push_back(r);  // duplicate id: keep first occurrence only
            continue;
        }
        (r.kind == RecordKind::Post ? posts : comments).push_back(r);
    }

    std::unordered_map<std::string, std::size_t> post_by_id;
    for (std::size_t i = 0; i < posts.size(); ++i) post_by_id.emplace(posts[i].id, i);
    std::unordered_map<std::string, std::size_t> comment_by_id;
    for (std::size_t i = 0; i < comments.size(); ++i) comment_by_id.emplace(comments[i].id, i);

    // placed[i]: comment i's ancestor chain reaches a post. Resolved by
    // walking each chain once with memoization.
    enum class State : std::uint8_t { Unknown, Placed, Orphan, InProgress };
    std::vector<State> state(comments.size(), State::Unknown);
    std::vector<std::size_t> chain;
    for (std::size_t i = 0; i < comments.size(); ++i) {
        if (state[i] != State::Unknown) continue;
        chain.clear();
        std::size_t cur = i;
        State resolved;
        for (;;) {
            if (state[cur] == State::Placed || state[cur] == State::Orphan) {
                resolved = state[cur];
                break;
            }
            if (state[cur] == State::InProgress) {
                throw CycleDetectedError("parent links form a cycle at comment id " + comments[cur].id);
            }
            state[cur] = State::InProgress;
            chain.push_back(cur);
            const std::string& parent = *comments[cur].parent_id;
            if (post_by_id.count(parent)) {
                resolved = State::Placed;
                break;
            }
            auto it = comment_by_id.find(parent);
            if (it == comment_by_id.end()) {
                resolved = State::Orphan;
                break;
            }
            cur = it->second;
        }
        for (std::size_t c : chain) state[c] = resolved;
    }

    std::unordered_map<std::string, std::vector<std::size_t>> children_of;
    for (std::size_t i = 0; i < comments.size(); ++i) {
        if (state[i] == State::Placed) {
            children_of[*comments[i].parent_id].push_back(i);
        } else {
            out.orphans.push_back(comments[i]);
        }
    }

    out.trees.reserve(posts.size());
    for (const auto& post : posts) {
        ConversationTree tree;
        tree.root = post;
        tree.subreddit = post.subreddit;
        auto it = children_of.find(post.id);
        if (it != children_of.end()) {
            for (std::size_t c : it->second) {
                tree.comments.push_back(detail::materialize(c, comments, children_of));
            }
        }
        CommentNode fake;
        fake.children = std::move(tree.comments);
        detail::sort_children(fake);
        tree.comments = std::move(fake.children);
        out.trees.push_back(std::move(tree));
    }

    std::sort(out.trees.begin(), out.trees.end(),
              [](const ConversationTree& a, const ConversationTree& b) { return a.root.id < b.root.id; });
    std::sort(out.orphans.begin(), out.orphans.end(),
              [](const RawRecord& a, const RawRecord& b) { return a.id < b.id; });
    return out;
}

// Depth-first visit of every comment node with its parent body.
// visit(node, parent_body, root_id).
template <typename Fn>
inline void walk_comments(const ConversationTree& tree, Fn&& visit) {
    struct Item {
        const CommentNode* node;
        const std::string* parent_body;
    };
    std::vector<Item> stack;
    for (auto it = tree.comments.rbegin(); it != tree.comments.rend(); ++it) {
        stack.push_back({&*it, &tree.root.body});
    }
    while (!stack.empty()) {
        Item item = stack.back();
        stack.pop_back();
        visit(*item.node, *item.parent_body, tree.root.id);
        for (auto it = item.node->children.rbegin(); it != item.node->children.rend(); ++it) {
            stack.push_back({&*it, &item.node->record.body});
        }
    }
}

// Authors with at least one comment in both forests, sentinels excluded,
// sorted for determinism.
inline std::vector<std::string> select_users(const Forest& history, const Forest& target) {
    auto authors_of = [](const Forest& f) {
        std::set<std::string> s;
        for (const auto& t : f.trees) {
            walk_comments(t, [&](const CommentNode& n, const std::string&, const std::string&) {
                if (!is_deleted_author(n.record.author)) s.insert(n.record.author);
            });
        }
        return s;
    };
    std::set<std::string> a = authors_of(history);
    std::set<std::string> b = authors_of(target);
    std::vector<std::string> out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

struct HistoryEntry {
    std::string user_comment;
    std::string replied_to;
    std::int64_t created_utc = 0;
};

struct DateWindow {
    std::int64_t start = 0;  // inclusive
    std::int64_t end = 0;    // exclusive; 0 means unbounded

    bool contains(std::int64_t t) const {
        if (t < start) return false;
        if (end != 0 && t >= end) return false;
        return true;
    }
};

struct UserHistory {
    std::string author;
    std::vector<HistoryEntry> entries;  // ascending created_utc
    DateWindow window;
};

// Pairs each of the author's comments with the body it replied to. Orphaned
// comments keep their slot with an explicit placeholder parent.
inline UserHistory extract_history(const std::string& author, const Forest& forest,
                                   const std::vector<RawRecord>& orphans = {}, DateWindow window = {}) {
    UserHistory out;
    out.author = author;
    out.window = window;
    struct Keyed {
        HistoryEntry entry;
        std::string id;
    };
    std::vector<Keyed> entries;
    for (const auto& tree : forest.trees) {
        walk_comments(tree, [&](const CommentNode& n, const std::string& parent_body, const std::string&) {
            if (n.record.author == author && window.contains(n.record.created_utc)) {
                entries.push_back({{n.record.body, parent_body, n.record.created_utc}, n.record.id});
            }
        });
    }
    for (const auto& r : orphans) {
        if (r.author == author && window.contains(r.created_utc)) {
            entries.push_back({{r.body, kUnavailableParent, r.created_utc}, r.id});
        }
    }
    std::sort(entries.begin(), entries.end(), [](const Keyed& a, const Keyed& b) {
        if (a.entry.created_utc != b.entry.created_utc) return a.entry.created_utc < b.entry.created_utc;
        return a.id < b.id;
    });
    out.entries.reserve(entries.size());
    for (auto& e : entries) out.entries.push_back(std::move(e.entry));
    return out;
}

struct TargetComment {
    std::string tree_ref;  // root post id
    std::string node_ref;  // comment id
    std::string author;
    std::string body;
    std::int64_t created_utc = 0;
};

// The author's comments that are leaves of their branch.
inline std::vector<TargetComment> extract_targets(const std::string& author, const Forest& forest) {
    std::vector<TargetComment> out;
    for (const auto& tree : forest.trees) {
        walk_comments(tree, [&](const CommentNode& n, const std::string&, const std::string& root_id) {
            if (n.record.author == author && n.children.empty()) {
                out.push_back({root_id, n.record.id, author, n.record.body, n.record.created_utc});
            }
        });
    }
    std::sort(out.begin(), out.end(), [](const TargetComment& a, const TargetComment& b) {
        if (a.tree_ref != b.tree_ref) return a.tree_ref < b.tree_ref;
        return a.node_ref < b.node_ref;
    });
    return out;
}

// --- serialization -------------------------------------------------------

inline json record_to_json(const RawRecord& r) {
    json j;
    j["id"] = r.id;
    if (r.parent_id) j["parent_id"] = *r.parent_id;
    if (r.link_id) j["link_id"] = *r.link_id;
    j["author"] = r.author;
    j["body"] = r.body;
    j["created_utc"] = r.created_utc;
    j["subreddit"] = r.subreddit;
    j["kind"] = to_string(r.kind);
    return j;
}

inline RawRecord record_from_canonical_json(const json& j) {
    RawRecord r;
    r.id = j.at("id").get<std::string>();
    if (j.contains("parent_id")) r.parent_id = j.at("parent_id").get<std::string>();
    if (j.contains("link_id")) r.link_id = j.at("link_id").get<std::string>();
    r.author = j.at("author").get<std::string>();
    r.body = j.at("body").get<std::string>();
    r.created_utc = j.at("created_utc").get<std::int64_t>();
    r.subreddit = j.value("subreddit", "");
    r.kind = j.at("kind").get<std::string>() == "post" ? RecordKind::Post : RecordKind::Comment;
    return r;
}

namespace detail {

inline json node_to_json(const CommentNode& n) {
    json j;
    j["record"] = record_to_json(n.record);
    json kids = json::array();
    for (const auto& c : n.children) kids.push_back(node_to_json(c));
    j["children"] = std::move(kids);
    return j;
}

inline CommentNode node_from_json(const json& j) {
    CommentNode n;
    n.record = record_from_canonical_json(j.at("record"));
    for (const auto& c : j.at("children")) n.children.push_back(node_from_json(c));
    return n;
}

}  // namespace detail

// One tree per line; keys are emitted in sorted order, so identical forests
// serialize to identical bytes.
inline std::string serialize_forest(const Forest& forest) {
    std::string out;
    for (const auto& tree : forest.trees) {
        json j;
        j["root"] = record_to_json(tree.root);
        j["subreddit"] = tree.subreddit;
        json kids = json::array();
        for (const auto& c : tree.comments) kids.push_back(detail::node_to_json(c));
        j["comments"] = std::move(kids);
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline std::string serialize_orphans(const Forest& forest) {
    std::string out;
    for (const auto& r : forest.orphans) {
        out += record_to_json(r).dump();
        out += '\n';
    }
    return out;
}

inline Forest parse_forest(std::istream& in) {
    Forest out;
    std::string line;
    while (std::getline(in, line)) {
        if (detail::is_blank(line)) continue;
        json j = json::parse(line);
        ConversationTree tree;
        tree.root = record_from_canonical_json(j.at("root"));
        tree.subreddit = j.value("subreddit", "");
        for (const auto& c : j.at("comments")) tree.comments.push_back(detail::node_from_json(c));
        out.trees.push_back(std::move(tree));
    }
    return out;
}

// Keeps only records inside the window (posts are kept regardless, so that
// comment chains in the window still have their roots).
inline std::vector<RawRecord> filter_window(const std::vector<RawRecord>& records, DateWindow window) {
    std::vector<RawRecord> out;
    for (const auto& r : records) {
        if (r.kind == RecordKind::Post || window.contains(r.created_utc)) out.push_back(r);
    }
    return out;
}

// Authors with at least one comment in each window. Counts orphaned comments
// too: activity is activity even when the thread is incomplete.
inline std::vector<std::string> select_users(const std::vector<RawRecord>& records, DateWindow history_window,
                                             DateWindow target_window) {
    std::set<std::string> in_history;
    std::set<std::string> in_target;
    for (const auto& r : records) {
        if (r.kind != RecordKind::Comment || is_deleted_author(r.author)) continue;
        if (history_window.contains(r.created_utc)) in_history.insert(r.author);
        if (target_window.contains(r.created_utc)) in_target.insert(r.author);
    }
    std::vector<std::string> out;
    std::set_intersection(in_history.begin(), in_history.end(), in_target.begin(), in_target.end(),
                          std::back_inserter(out));
    return out;
}

}  // namespace redsim::corpus
