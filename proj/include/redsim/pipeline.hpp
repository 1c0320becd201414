#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "redsim/classify.hpp"
#include "redsim/config.hpp"
#include "redsim/corpus.hpp"
#include "redsim/detector.hpp"
#include "redsim/embedspace.hpp"
#include "redsim/gateway.hpp"
#include "redsim/live_backends.hpp"
#include "redsim/manifest.hpp"
#include "redsim/pca.hpp"
#include "redsim/reference.hpp"
#include "redsim/scenario.hpp"
#include "redsim/textstats.hpp"
#include "redsim/tsne.hpp"

namespace redsim::cli {

namespace fs = std::filesystem;

// --- backend assembly --------------------------------------------------------

struct Backends {
    std::shared_ptr<gateway::ChatBackend> generator;
    std::shared_ptr<gateway::ChatBackend> classifier;
    std::shared_ptr<gateway::EmbedBackend> embedder;
};

inline Backends make_backends(const RunConfig& c) {
    if (c.backend == "mock") {
        return {std::make_shared<gateway::MockGenerator>(), std::make_shared<gateway::MockClassifier>(),
                std::make_shared<gateway::MockEmbedder>(c.mock_embedding_dim)};
    }
    auto key = gateway::api_key_from_env(c.api_key_env.c_str());
    if (!key) {
        throw ConfigError("backend 'live' needs the API key in environment variable " + c.api_key_env);
    }
    gateway::LiveConfig lc;
    lc.base_url = c.base_url;
    lc.api_key = *key;
    return {std::make_shared<gateway::HttpChatBackend>(lc, c.model_name),
            std::make_shared<gateway::HttpChatBackend>(lc, c.classification_model),
            std::make_shared<gateway::HttpEmbedBackend>(lc, c.embedding_model, c.embedding_dim)};
}

inline gateway::GatewayOptions make_gateway_options(const RunConfig& c) {
    gateway::GatewayOptions o;
    o.seed = c.seed;
    o.retry.max_attempts = c.retry_attempts;
    o.retry.base_delay_s = c.retry_base_delay_s;
    o.max_in_flight = c.max_in_flight;
    o.per_minute = c.per_minute;
    o.max_calls = c.max_calls;
    o.cache_enabled = c.cache_enabled;
    if (c.cache_enabled) o.cache_file = fs::path(c.out_dir) / "cache" / "responses.jsonl";
    return o;
}

inline std::string config_digest(const RunConfig& c) { return io::sha256_hex(config_to_json(c).dump()); }

// --- projection scatter plot -------------------------------------------------

// Fixed group palette so plots from different runs stay comparable.
inline const char* group_color(embedspace::Group g) {
    switch (g) {
        case embedspace::Group::Real: return "#1f77b4";
        case embedspace::Group::RealHistory: return "#ff7f0e";
        case embedspace::Group::NoHistory: return "#2ca02c";
        case embedspace::Group::ProCandidate: return "#d62728";
        case embedspace::Group::AntiCandidate: return "#9467bd";
    }
    return "#777777";
}

inline std::string scatter_svg(const std::vector<std::tuple<double, double, embedspace::Group>>& points,
                               int width = 800, int height = 600) {
    const auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };
    double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
    if (!points.empty()) {
        xmin = xmax = std::get<0>(points[0]);
        ymin = ymax = std::get<1>(points[0]);
        for (const auto& [x, y, g] : points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;
    const double margin = 40.0;
    const double sx = (width - 2 * margin) / (xmax - xmin);
    const double sy = (height - 2 * margin) / (ymax - ymin);

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
           std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) + " " + std::to_string(height) +
           "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (const auto& [x, y, g] : points) {
        const double px = margin + (x - xmin) * sx;
        const double py = height - margin - (y - ymin) * sy;  // y grows upward
        svg += "<circle cx=\"" + num(px) + "\" cy=\"" + num(py) + "\" r=\"4\" fill=\"" + group_color(g) +
               "\" fill-opacity=\"0.7\"/>\n";
    }
    std::set<int> present;
    for (const auto& [x, y, g] : points) present.insert(embedspace::group_index(g));
    double ly = margin;
    for (int gi : present) {
        const auto g = static_cast<embedspace::Group>(gi);
        svg += "<circle cx=\"" + num(width - margin - 110.0) + "\" cy=\"" + num(ly) + "\" r=\"5\" fill=\"" +
               group_color(g) + "\"/>\n";
        svg += "<text x=\"" + num(width - margin - 98.0) + "\" y=\"" + num(ly + 4.0) +
               "\" font-family=\"sans-serif\" font-size=\"12\">" + embedspace::to_string(g) + "</text>\n";
        ly += 18.0;
    }
    svg += "</svg>\n";
    return svg;
}

// --- shared helpers -------------------------------------------------------------

namespace detail {

struct CommunityData {
    corpus::Forest forest;
    std::vector<corpus::RawRecord> orphans;
};

inline CommunityData load_forest_artifacts(const fs::path& dir, const std::string& name) {
    const fs::path forest_path = dir / name / "forest.jsonl";
    const fs::path orphan_path = dir / name / "orphans.jsonl";
    if (!fs::exists(forest_path)) {
        throw Error("missing artifact " + forest_path.string() + " (run the ingest stage first)");
    }
    CommunityData data;
    {
        std::ifstream in(forest_path);
        data.forest = corpus::parse_forest(in);
    }
    if (fs::exists(orphan_path)) {
        std::ifstream in(orphan_path);
        io::for_each_line(in, [&](std::size_t, const std::string& line) {
            data.orphans.push_back(corpus::record_from_canonical_json(json::parse(line)));
        });
    }
    return data;
}

inline std::vector<std::string> load_users(const fs::path& dir, const std::string& name) {
    const fs::path path = dir / name / "users.json";
    if (!fs::exists(path)) throw Error("missing artifact " + path.string() + " (run the ingest stage first)");
    std::ifstream in(path);
    json j = json::parse(in);
    return j.at("selected_users").get<std::vector<std::string>>();
}

inline std::map<std::string, const corpus::ConversationTree*> tree_index(const corpus::Forest& forest) {
    std::map<std::string, const corpus::ConversationTree*> idx;
    for (const auto& t : forest.trees) idx[t.root.id] = &t;
    return idx;
}

inline std::vector<gateway::GeneratedComment> load_generated(const fs::path& dir, const std::string& name) {
    const fs::path path = dir / name / "generated.jsonl";
    if (!fs::exists(path)) throw Error("missing artifact " + path.string() + " (run the simulate stage first)");
    std::vector<gateway::GeneratedComment> out;
    std::ifstream in(path);
    io::for_each_line(in, [&](std::size_t, const std::string& line) {
        out.push_back(gateway::generated_from_json(json::parse(line)));
    });
    return out;
}

// Runs fn(i) over [0, n) with the configured worker count; results must be
// written into index-addressed slots by the caller's fn. Exceptions are
// rethrown (the budget error wins when several fire).
template <typename Fn>
inline void parallel_for(std::size_t n, int workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const int w = std::min<int>(workers, static_cast<int>(n));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(w));
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(w));
    for (int t = 0; t < w; ++t) {
        threads.emplace_back([&, t] {
            try {
                for (std::size_t i = static_cast<std::size_t>(t); i < n; i += static_cast<std::size_t>(w)) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
        });
    }
    for (auto& th : threads) th.join();
    std::exception_ptr first;
    for (const auto& e : errors) {
        if (!e) continue;
        try {
            std::rethrow_exception(e);
        } catch (const gateway::BudgetExceededError&) {
            first = e;
            break;
        } catch (...) {
            if (!first) first = e;
        }
    }
    if (first) std::rethrow_exception(first);
}

}  // namespace detail

// --- ingest ------------------------------------------------------------------------

inline json cmd_ingest(const RunConfig& c) {
    validate_input_paths(c);
    Manifest manifest(c.out_dir);
    manifest.set_config_digest(config_digest(c));
    StageRecord stage;
    stage.stage = "ingest";
    stage.started_utc = Manifest::now_utc();

    json summary;
    for (const auto& input : c.inputs) {
        std::vector<corpus::RawRecord> records;
        struct SourcedDiagnostic {
            std::string source;
            corpus::ParseDiagnostic diag;
        };
        std::vector<SourcedDiagnostic> skipped;
        std::size_t total_lines = 0;
        const std::array<std::pair<const char*, const std::string*>, 2> dumps = {
            {{"posts", &input.posts_path}, {"comments", &input.comments_path}}};
        for (const auto& [label, path] : dumps) {
            std::ifstream in(*path);
            if (!in) throw ConfigError(std::string("cannot open ") + label + " dump: " + *path);
            corpus::ParseResult res = corpus::parse_dump(in);
            total_lines += res.total_lines;
            for (auto& r : res.records) records.push_back(std::move(r));
            for (auto& d : res.skipped) skipped.push_back({label, std::move(d)});
        }
        corpus::Forest forest = corpus::build_forest(records);
        const auto users = corpus::select_users(records, c.history_window, c.target_window);

        const fs::path dir = fs::path(c.out_dir) / input.name;
        manifest.write_artifact(dir / "forest.jsonl", corpus::serialize_forest(forest));
        manifest.write_artifact(dir / "orphans.jsonl", corpus::serialize_orphans(forest));
        {
            std::string lines;
            for (const auto& d : skipped) {
                json j;
                j["source"] = d.source;
                j["line"] = d.diag.line_no;
                j["reason"] = d.diag.message;
                lines += j.dump();
                lines += '\n';
            }
            manifest.write_artifact(dir / "skipped.jsonl", lines);
        }
        {
            json uj;
            uj["selected_users"] = users;
            uj["n"] = users.size();
            manifest.write_artifact(dir / "users.json", uj.dump(2) + "\n");
        }

        json s;
        s["records"] = records.size();
        s["trees"] = forest.trees.size();
        s["orphans"] = forest.orphans.size();
        s["skipped"] = skipped.size();
        s["total_lines"] = total_lines;
        s["tree_nodes"] = forest.total_nodes();
        s["selected_users"] = users.size();
        s["conservation_ok"] = forest.total_nodes() + forest.orphans.size() == records.size() &&
                               records.size() + skipped.size() == total_lines;
        summary[input.name] = s;
    }
    manifest.write_artifact(fs::path(c.out_dir) / "ingest_summary.json", summary.dump(2) + "\n");

    stage.finished_utc = Manifest::now_utc();
    manifest.record_stage(stage);
    manifest.save();
    return summary;
}

// --- simulate -------------------------------------------------------------------------

inline json cmd_simulate(const RunConfig& c) {
    Manifest manifest(c.out_dir);
    manifest.set_config_digest(config_digest(c));
    StageRecord stage;
    stage.stage = "simulate";
    stage.started_utc = Manifest::now_utc();

    Backends backends = make_backends(c);
    gateway::Gateway gw(backends.generator, backends.classifier, backends.embedder, make_gateway_options(c));

    json summary;
    bool budget_hit = false;
    std::string budget_message;

    for (const auto& input : c.inputs) {
        const auto data = detail::load_forest_artifacts(c.out_dir, input.name);
        auto users = detail::load_users(c.out_dir, input.name);
        if (c.max_users > 0 && static_cast<int>(users.size()) > c.max_users) {
            users.resize(static_cast<std::size_t>(c.max_users));
        }
        const auto trees = detail::tree_index(data.forest);

        struct Request {
            gateway::GenerationRequest req;
        };
        std::vector<Request> requests;
        std::size_t skipped_no_history = 0;

        for (const auto& user : users) {
            corpus::UserHistory history =
                corpus::extract_history(user, data.forest, data.orphans, c.history_window);
            if (c.history_limit > 0 && static_cast<int>(history.entries.size()) > c.history_limit) {
                // Keep the most recent entries.
                history.entries.erase(history.entries.begin(),
                                      history.entries.end() - static_cast<std::ptrdiff_t>(c.history_limit));
            }
            auto targets = corpus::extract_targets(user, data.forest);
            std::erase_if(targets, [&](const corpus::TargetComment& t) {
                return !c.target_window.contains(t.created_utc);
            });
            if (c.max_targets_per_user > 0 && static_cast<int>(targets.size()) > c.max_targets_per_user) {
                targets.resize(static_cast<std::size_t>(c.max_targets_per_user));
            }
            for (const auto& target : targets) {
                const auto tree_it = trees.find(target.tree_ref);
                if (tree_it == trees.end()) continue;
                const scenario::BranchContext context =
                    scenario::render_branch(*tree_it->second, target, {c.anonymize_authors});
                for (const auto kind : c.scenarios) {
                    std::optional<corpus::UserHistory> hist;
                    if (kind == scenario::Kind::RealHistory) {
                        if (history.entries.empty()) {
                            ++skipped_no_history;
                            continue;
                        }
                        hist = history;
                    }
                    for (const double temperature : c.temperatures) {
                        scenario::GenerationParams params;
                        params.temperature = temperature;
                        params.top_p = c.top_p;
                        params.model_name = c.model_name;
                        scenario::PromptOptions popts;
                        popts.max_tokens = c.max_prompt_tokens;
                        popts.anonymize_authors = c.anonymize_authors;
                        const scenario::PromptBundle bundle =
                            scenario::build_prompt(target, context, hist, kind, input.candidate, params, popts);
                        for (int run = 0; run < c.n_runs; ++run) {
                            requests.push_back({gateway::GenerationRequest{bundle, params, run}});
                        }
                    }
                }
            }
        }

        std::vector<std::optional<gateway::GeneratedComment>> results(requests.size());
        std::exception_ptr budget_error;
        try {
            detail::parallel_for(requests.size(), c.workers,
                                 [&](std::size_t i) { results[i] = gw.generate(requests[i].req); });
        } catch (const gateway::BudgetExceededError& e) {
            budget_hit = true;
            budget_message = e.what();
            budget_error = std::current_exception();
        }

        // Write the completed prefix in request order; a budget abort keeps
        // the artifact truncated but valid, and the cache makes reruns cheap.
        std::string lines;
        std::size_t written = 0;
        for (const auto& r : results) {
            if (!r) break;
            lines += gateway::generated_to_json(*r).dump();
            lines += '\n';
            ++written;
        }
        const fs::path dir = fs::path(c.out_dir) / input.name;
        manifest.write_artifact(dir / "generated.jsonl", lines);

        json s;
        s["requests"] = requests.size();
        s["generated"] = written;
        s["skipped_real_history_no_entries"] = skipped_no_history;
        s["partial"] = budget_hit;
        summary[input.name] = s;
        if (budget_hit) break;
    }

    if (c.cache_enabled) {
        const fs::path cache_file = fs::path(c.out_dir) / "cache" / "responses.jsonl";
        if (fs::exists(cache_file)) manifest.add_artifact(cache_file);
    }
    manifest.write_artifact(fs::path(c.out_dir) / "simulate_summary.json", summary.dump(2) + "\n");
    stage.finished_utc = Manifest::now_utc();
    stage.backend_calls = gw.backend_calls();
    stage.cache_hits = gw.cache_hits();
    stage.partial = budget_hit;
    if (budget_hit) stage.notes.push_back(budget_message);
    manifest.record_stage(stage);
    manifest.save();
    if (budget_hit) throw gateway::BudgetExceededError(budget_message);
    return summary;
}

// --- analyze -----------------------------------------------------------------------------

namespace detail {

struct RealTarget {
    std::string tree_ref;
    std::string target_ref;
    std::string author;
    std::string body;
};

// The set of real comments that were simulated, recovered from the generated
// records so the two stages cannot drift apart.
inline std::vector<RealTarget> real_targets_of(const std::vector<gateway::GeneratedComment>& generated,
                                               const corpus::Forest& forest) {
    std::set<std::pair<std::string, std::string>> keys;
    std::map<std::pair<std::string, std::string>, std::string> authors;
    for (const auto& g : generated) {
        keys.insert({g.tree_ref, g.target_ref});
        authors[{g.tree_ref, g.target_ref}] = g.author;
    }
    const auto trees = tree_index(forest);
    std::vector<RealTarget> out;
    for (const auto& key : keys) {
        const auto it = trees.find(key.first);
        if (it == trees.end()) continue;
        std::string body;
        corpus::walk_comments(*it->second, [&](const corpus::CommentNode& n, const std::string&, const std::string&) {
            if (n.record.id == key.second) body = n.record.body;
        });
        if (!body.empty()) out.push_back({key.first, key.second, authors[key], body});
    }
    return out;
}

inline std::string csv_num(double v) { return io::fmt_double(v); }

struct GroupedGenerated {
    scenario::Kind kind;
    double temperature;
    std::vector<std::size_t> indices;  // into the generated vector
};

inline std::vector<GroupedGenerated> group_generated(const std::vector<gateway::GeneratedComment>& generated,
                                                     const RunConfig& c) {
    std::vector<GroupedGenerated> groups;
    for (const auto kind : c.scenarios) {
        for (const double t : c.temperatures) {
            GroupedGenerated g{kind, t, {}};
            for (std::size_t i = 0; i < generated.size(); ++i) {
                if (generated[i].scenario == kind && generated[i].temperature == t) g.indices.push_back(i);
            }
            if (!g.indices.empty()) groups.push_back(std::move(g));
        }
    }
    return groups;
}

}  // namespace detail

inline json cmd_analyze(const RunConfig& c) {
    Manifest manifest(c.out_dir);
    manifest.set_config_digest(config_digest(c));
    StageRecord stage;
    stage.stage = "analyze";
    stage.started_utc = Manifest::now_utc();

    Backends backends = make_backends(c);
    gateway::Gateway gw(backends.generator, backends.classifier, backends.embedder, make_gateway_options(c));

    json summary;
    for (const auto& input : c.inputs) {
        const fs::path dir = fs::path(c.out_dir) / input.name;
        const auto data = detail::load_forest_artifacts(c.out_dir, input.name);
        const auto generated = detail::load_generated(c.out_dir, input.name);
        const auto real_targets = detail::real_targets_of(generated, data.forest);
        const auto groups = detail::group_generated(generated, c);
        json notes = json::array();

        scenario::GenerationParams cls_params;
        cls_params.temperature = 0.0;
        cls_params.top_p = c.top_p;
        cls_params.model_name = c.classification_model;

        // ---- classification ----
        std::vector<std::string> real_texts;
        real_texts.reserve(real_targets.size());
        for (const auto& t : real_targets) real_texts.push_back(t.body);
        const auto real_scores = classify::classify_corpus(gw, real_texts, input.candidate, c.classification_runs,
                                                           cls_params);
        {
            std::string lines;
            for (std::size_t i = 0; i < real_targets.size(); ++i) {
                json j;
                j["tree_ref"] = real_targets[i].tree_ref;
                j["target_ref"] = real_targets[i].target_ref;
                j["author"] = real_targets[i].author;
                j["score"] = classify::score_to_json(real_scores[i]);
                lines += j.dump();
                lines += '\n';
            }
            manifest.write_artifact(dir / "classification_real.jsonl", lines);
        }

        std::vector<std::string> gen_texts;
        gen_texts.reserve(generated.size());
        for (const auto& g : generated) gen_texts.push_back(g.text);
        const auto gen_scores = classify::classify_corpus(gw, gen_texts, input.candidate, c.classification_runs,
                                                          cls_params);
        {
            std::string lines;
            for (std::size_t i = 0; i < generated.size(); ++i) {
                json j = gateway::generated_to_json(generated[i]);
                j.erase("text");
                j["score"] = classify::score_to_json(gen_scores[i]);
                lines += j.dump();
                lines += '\n';
            }
            manifest.write_artifact(dir / "classification_generated.jsonl", lines);
        }

        // Share tables.
        {
            io::CsvWriter csv;
            csv.header({"community", "source", "scenario", "temperature", "axis", "pro_or_positive", "neutral",
                        "anti_or_negative", "n_counted", "n_unclassified"});
            auto emit = [&](const std::string& source, const std::string& scen, const std::string& temp,
                            const std::vector<classify::AveragedScore>& scores) {
                for (const auto axis : {classify::Axis::Party, classify::Axis::Sentiment, classify::Axis::Violence}) {
                    try {
                        const auto b = classify::aggregate_shares(scores, axis);
                        csv.row({input.name, source, scen, temp, classify::to_string(axis), detail::csv_num(b.pro),
                                 detail::csv_num(b.neutral), detail::csv_num(b.anti), std::to_string(b.n_counted),
                                 std::to_string(b.n_unclassified)});
                    } catch (const classify::EmptyInputError&) {
                        notes.push_back("no classified items for shares: " + source + "/" + scen);
                    }
                }
            };
            if (!real_scores.empty()) emit("real", "", "", real_scores);
            for (const auto& g : groups) {
                std::vector<classify::AveragedScore> scores;
                for (auto i : g.indices) scores.push_back(gen_scores[i]);
                emit("generated", scenario::to_string(g.kind), detail::csv_num(g.temperature), scores);
            }
            manifest.write_artifact(dir / "shares.csv", csv.str());
        }

        // Per-user mean party distributions.
        {
            io::CsvWriter hist;
            hist.header({"community", "source", "scenario", "temperature", "bin_lo", "bin_hi", "count"});
            io::CsvWriter vals;
            vals.header({"community", "source", "scenario", "temperature", "author", "mean_party"});
            auto emit = [&](const std::string& source, const std::string& scen, const std::string& temp,
                            const std::vector<std::pair<std::string, double>>& items) {
                if (items.empty()) return;
                const auto d = classify::user_mean_distribution(items, c.user_hist_bins);
                for (std::size_t b = 0; b < d.counts.size(); ++b) {
                    hist.row({input.name, source, scen, temp, detail::csv_num(d.bin_edges[b]),
                              detail::csv_num(d.bin_edges[b + 1]), std::to_string(d.counts[b])});
                }
                for (const auto& [author, mean] : d.user_means) {
                    vals.row({input.name, source, scen, temp, author, detail::csv_num(mean)});
                }
            };
            std::vector<std::pair<std::string, double>> real_items;
            for (std::size_t i = 0; i < real_targets.size(); ++i) {
                if (!real_scores[i].unclassified()) real_items.emplace_back(real_targets[i].author,
                                                                            real_scores[i].party_mean);
            }
            emit("real", "", "", real_items);
            for (const auto& g : groups) {
                std::vector<std::pair<std::string, double>> items;
                for (auto i : g.indices) {
                    if (!gen_scores[i].unclassified()) items.emplace_back(generated[i].author,
                                                                          gen_scores[i].party_mean);
                }
                emit("generated", scenario::to_string(g.kind), detail::csv_num(g.temperature), items);
            }
            manifest.write_artifact(dir / "user_means.csv", hist.str());
            manifest.write_artifact(dir / "user_mean_values.csv", vals.str());
        }

        // Party alignment vs prompt length.
        {
            io::CsvWriter csv;
            csv.header({"community", "scenario", "temperature", "bin_lo", "bin_hi", "count", "mean_party",
                        "has_mean"});
            for (const auto& g : groups) {
                std::vector<double> means;
                std::vector<int> tokens;
                for (auto i : g.indices) {
                    if (gen_scores[i].unclassified()) continue;
                    means.push_back(gen_scores[i].party_mean);
                    tokens.push_back(generated[i].token_estimate);
                }
                for (const auto& bin : classify::bin_by_prompt_length(means, tokens, c.length_bin_width)) {
                    csv.row({input.name, scenario::to_string(g.kind), detail::csv_num(g.temperature),
                             std::to_string(bin.lo), std::to_string(bin.hi), std::to_string(bin.count),
                             bin.has_mean ? detail::csv_num(bin.mean_party) : "", bin.has_mean ? "1" : "0"});
                }
            }
            manifest.write_artifact(dir / "length_bins.csv", csv.str());
        }

        // Cross-tabs: real label of the target conditions the generated label.
        {
            std::map<std::pair<std::string, std::string>, const classify::AveragedScore*> real_by_key;
            for (std::size_t i = 0; i < real_targets.size(); ++i) {
                real_by_key[{real_targets[i].tree_ref, real_targets[i].target_ref}] = &real_scores[i];
            }
            io::CsvWriter csv;
            csv.header({"community", "scenario", "temperature", "axis", "conditioner_label", "outcome_label",
                        "count", "row_fraction", "row_empty"});
            for (const auto& g : groups) {
                std::vector<int> cond_party, out_party, cond_sent, out_sent;
                for (auto i : g.indices) {
                    const auto it = real_by_key.find({generated[i].tree_ref, generated[i].target_ref});
                    if (it == real_by_key.end() || it->second->unclassified() || gen_scores[i].unclassified()) {
                        continue;
                    }
                    cond_party.push_back(it->second->modal.party);
                    out_party.push_back(gen_scores[i].modal.party);
                    cond_sent.push_back(it->second->modal.sentiment);
                    out_sent.push_back(gen_scores[i].modal.sentiment);
                }
                const auto emit = [&](const char* axis, const std::vector<int>& cond, const std::vector<int>& outc) {
                    if (cond.empty()) return;
                    const auto tab = classify::cross_tab(cond, outc);
                    for (int r = -1; r <= 1; ++r) {
                        for (int col = -1; col <= 1; ++col) {
                            csv.row({input.name, scenario::to_string(g.kind), detail::csv_num(g.temperature), axis,
                                     std::to_string(r), std::to_string(col),
                                     std::to_string(tab.counts[static_cast<std::size_t>(r + 1)]
                                                              [static_cast<std::size_t>(col + 1)]),
                                     detail::csv_num(tab.fractions[static_cast<std::size_t>(r + 1)]
                                                                  [static_cast<std::size_t>(col + 1)]),
                                     tab.row_empty[static_cast<std::size_t>(r + 1)] ? "1" : "0"});
                        }
                    }
                };
                emit("party", cond_party, out_party);
                emit("sentiment", cond_sent, out_sent);
            }
            manifest.write_artifact(dir / "cross_tabs.csv", csv.str());
        }

        // ---- text statistics ----
        {
            io::CsvWriter feat;
            feat.header({"community", "source", "scenario", "temperature", "metric", "mean", "std_error", "std_dev",
                         "n_texts", "texts_skipped"});
            io::CsvWriter zipf;
            zipf.header({"community", "source", "scenario", "temperature", "n", "s", "c", "r2", "ranks_used",
                         "distinct_grams", "note"});
            io::CsvWriter corr;
            corr.header({"community", "scenario", "temperature", "n", "pearson_r", "shared_grams", "note"});

            struct Corpus {
                std::string source, scen, temp;
                const std::vector<std::string>* texts;
            };
            std::vector<std::vector<std::string>> owned;
            std::vector<Corpus> corpora;
            corpora.push_back({"real", "", "", &real_texts});
            owned.reserve(groups.size());
            for (const auto& g : groups) {
                std::vector<std::string> texts;
                for (auto i : g.indices) texts.push_back(generated[i].text);
                owned.push_back(std::move(texts));
                corpora.push_back({"generated", scenario::to_string(g.kind), detail::csv_num(g.temperature),
                                   &owned.back()});
            }

            std::map<std::string, std::array<textstats::NgramTable, 3>> tables;
            for (const auto& corpus_entry : corpora) {
                if (corpus_entry.texts->empty()) continue;
                try {
                    const auto rec = textstats::features(*corpus_entry.texts);
                    const auto emit_metric = [&](const char* metric, const textstats::Estimate& e) {
                        feat.row({input.name, corpus_entry.source, corpus_entry.scen, corpus_entry.temp, metric,
                                  detail::csv_num(e.mean), detail::csv_num(e.std_error), detail::csv_num(e.std_dev),
                                  std::to_string(rec.texts_used), std::to_string(rec.texts_skipped)});
                    };
                    emit_metric("sentence_length", rec.sentence_length);
                    emit_metric("article_pct", rec.article_pct);
                    emit_metric("function_word_pct", rec.function_word_pct);
                    emit_metric("ttr", rec.ttr);
                } catch (const textstats::EmptyCorpusError&) {
                    notes.push_back("feature extraction skipped (no tokens): " + corpus_entry.source + "/" +
                                    corpus_entry.scen);
                }
                const std::string key = corpus_entry.source + "/" + corpus_entry.scen + "/" + corpus_entry.temp;
                for (int n = 1; n <= 3; ++n) {
                    auto table = textstats::ngram_table(*corpus_entry.texts, n);
                    std::string note;
                    try {
                        const auto fit = textstats::zipf_fit(table, c.zipf_min_count);
                        zipf.row({input.name, corpus_entry.source, corpus_entry.scen, corpus_entry.temp,
                                  std::to_string(n), detail::csv_num(fit.s), detail::csv_num(fit.c),
                                  detail::csv_num(fit.r2), std::to_string(fit.ranks_used),
                                  std::to_string(table.entries.size()), ""});
                    } catch (const textstats::InsufficientDataError&) {
                        zipf.row({input.name, corpus_entry.source, corpus_entry.scen, corpus_entry.temp,
                                  std::to_string(n), "", "", "", "0", std::to_string(table.entries.size()),
                                  "insufficient_data"});
                    }
                    tables[key][static_cast<std::size_t>(n - 1)] = std::move(table);
                }
            }
            const auto& real_tables = tables["real//"];
            for (const auto& g : groups) {
                const std::string key = std::string("generated/") + scenario::to_string(g.kind) + "/" +
                                        detail::csv_num(g.temperature);
                const auto it = tables.find(key);
                if (it == tables.end()) continue;
                for (int n = 1; n <= 3; ++n) {
                    const auto& a = real_tables[static_cast<std::size_t>(n - 1)];
                    const auto& b = it->second[static_cast<std::size_t>(n - 1)];
                    std::size_t shared = 0;
                    {
                        std::set<std::string> grams;
                        for (const auto& e : a.entries) grams.insert(e.gram);
                        for (const auto& e : b.entries) shared += grams.count(e.gram);
                    }
                    try {
                        const double r = textstats::rank_correlation(a, b);
                        corr.row({input.name, scenario::to_string(g.kind), detail::csv_num(g.temperature),
                                  std::to_string(n), detail::csv_num(r), std::to_string(shared), ""});
                    } catch (const textstats::TooFewSharedError&) {
                        corr.row({input.name, scenario::to_string(g.kind), detail::csv_num(g.temperature),
                                  std::to_string(n), "", std::to_string(shared), "too_few_shared"});
                    }
                }
            }
            manifest.write_artifact(dir / "features.csv", feat.str());
            manifest.write_artifact(dir / "zipf.csv", zipf.str());
            manifest.write_artifact(dir / "rank_correlation.csv", corr.str());
        }

        // ---- embedding space ----
        {
            std::vector<embedspace::CommentEmbedding> embeddings;
            std::size_t skipped_empty = 0;
            for (const auto& t : real_targets) {
                if (t.body.empty()) {
                    ++skipped_empty;
                    continue;
                }
                embeddings.push_back({t.author, embedspace::Group::Real, gw.embed(t.body).values});
            }
            for (const auto& g : generated) {
                if (g.text.empty()) {
                    ++skipped_empty;
                    continue;
                }
                embeddings.push_back(
                    {g.author, embedspace::group_from_kind(g.scenario), gw.embed(g.text).values});
            }
            if (skipped_empty > 0) notes.push_back(std::to_string(skipped_empty) + " empty texts not embedded");

            const auto centroids = embedspace::user_centroids(embeddings);
            {
                std::string lines;
                for (const auto& u : centroids) {
                    json j;
                    j["author"] = u.author;
                    j["group"] = embedspace::to_string(u.group);
                    j["n_comments"] = u.n_comments;
                    j["zero"] = u.zero;
                    j["vector"] = u.vector;
                    lines += j.dump();
                    lines += '\n';
                }
                manifest.write_artifact(dir / "centroids.jsonl", lines);
            }

            std::map<embedspace::Group, std::vector<embedspace::UserCentroid>> by_group;
            for (const auto& u : centroids) {
                if (!u.zero) by_group[u.group].push_back(u);
            }

            {
                io::CsvWriter csv;
                csv.header({"community", "group", "baseline", "proportion", "mean_counterpart", "mean_threshold",
                            "n_users"});
                const auto real_it = by_group.find(embedspace::Group::Real);
                for (const auto& [grp, members] : by_group) {
                    if (grp == embedspace::Group::Real || real_it == by_group.end()) continue;
                    for (const auto baseline : {embedspace::Baseline::RandomMatch, embedspace::Baseline::AllRealMean}) {
                        try {
                            const auto r = embedspace::similarity_exceedance(members, real_it->second, baseline,
                                                                             c.seed, c.exceedance_shuffles);
                            csv.row({input.name, embedspace::to_string(grp), embedspace::to_string(baseline),
                                     detail::csv_num(r.proportion), detail::csv_num(r.mean_counterpart),
                                     detail::csv_num(r.mean_threshold), std::to_string(r.n_users)});
                        } catch (const embedspace::MissingCounterpartError& e) {
                            notes.push_back(std::string("exceedance skipped for ") + embedspace::to_string(grp) +
                                            ": " + e.what());
                        }
                    }
                }
                manifest.write_artifact(dir / "exceedance.csv", csv.str());
            }

            {
                io::CsvWriter csv;
                csv.header({"community", "group", "n_members", "mean_pairwise_similarity", "note"});
                for (const auto& [grp, members] : by_group) {
                    try {
                        csv.row({input.name, embedspace::to_string(grp), std::to_string(members.size()),
                                 detail::csv_num(embedspace::intra_group_similarity(members)), ""});
                    } catch (const embedspace::SingletonGroupError&) {
                        csv.row({input.name, embedspace::to_string(grp), std::to_string(members.size()), "",
                                 "singleton_group"});
                    }
                }
                manifest.write_artifact(dir / "intra_similarity.csv", csv.str());
            }

            {
                std::vector<embedspace::UserCentroid> nonzero;
                for (const auto& [grp, members] : by_group) {
                    nonzero.insert(nonzero.end(), members.begin(), members.end());
                }
                io::CsvWriter csv;
                csv.header({"community", "group_row", "group_col", "mean_cosine_distance", "diagonal_singleton"});
                if (!nonzero.empty()) {
                    const auto m = embedspace::group_distance_matrix(nonzero);
                    for (std::size_t i = 0; i < m.groups.size(); ++i) {
                        for (std::size_t j = 0; j < m.groups.size(); ++j) {
                            csv.row({input.name, embedspace::to_string(m.groups[i]), embedspace::to_string(m.groups[j]),
                                     detail::csv_num(m.mean_distance[i][j]),
                                     i == j && m.singleton[i] ? "1" : "0"});
                        }
                    }
                }
                manifest.write_artifact(dir / "distance_matrix.csv", csv.str());

                // 2D projection of user centroids.
                if (nonzero.size() >= 6) {
                    embedspace::TsneParams tp = c.tsne;
                    const double max_perplexity = static_cast<double>(nonzero.size()) / 3.0;
                    if (tp.perplexity > max_perplexity) {
                        tp.perplexity = std::max(2.0, std::floor(max_perplexity));
                        notes.push_back("tsne perplexity clamped to " + detail::csv_num(tp.perplexity));
                    }
                    std::vector<embedspace::Vec> rows;
                    rows.reserve(nonzero.size());
                    for (const auto& u : nonzero) rows.push_back(u.vector);
                    const auto proj = embedspace::tsne(rows, tp);

                    io::CsvWriter csvp;
                    csvp.header({"community", "author", "group", "x", "y"});
                    for (std::size_t i = 0; i < nonzero.size(); ++i) {
                        csvp.row({input.name, nonzero[i].author, embedspace::to_string(nonzero[i].group),
                                  detail::csv_num(proj.points[i][0]), detail::csv_num(proj.points[i][1])});
                    }
                    manifest.write_artifact(dir / "projection.csv", csvp.str());

                    json pj;
                    pj["perplexity"] = proj.params.perplexity;
                    pj["iterations"] = proj.params.iterations;
                    pj["learning_rate"] = proj.params.learning_rate;
                    pj["exaggeration"] = proj.params.exaggeration;
                    pj["exaggeration_iters"] = proj.params.exaggeration_iters;
                    pj["seed"] = proj.params.seed;
                    pj["pca_applied"] = proj.pca_applied;
                    json trace = json::array();
                    for (const auto& cp : proj.kl_trace) trace.push_back({{"iteration", cp.iteration}, {"kl", cp.kl}});
                    pj["kl_trace"] = trace;
                    manifest.write_artifact(dir / "projection_params.json", pj.dump(2) + "\n");

                    if (c.emit_svg) {
                        std::vector<std::tuple<double, double, embedspace::Group>> pts;
                        pts.reserve(nonzero.size());
                        for (std::size_t i = 0; i < nonzero.size(); ++i) {
                            pts.emplace_back(proj.points[i][0], proj.points[i][1], nonzero[i].group);
                        }
                        manifest.write_artifact(dir / "projection.svg", scatter_svg(pts));
                    }
                } else {
                    notes.push_back("projection skipped: fewer than 6 usable centroids");
                }
            }
        }

        json s;
        s["real_targets"] = real_targets.size();
        s["generated"] = generated.size();
        s["notes"] = notes;
        summary[input.name] = s;
    }

    if (c.cache_enabled) {
        const fs::path cache_file = fs::path(c.out_dir) / "cache" / "responses.jsonl";
        if (fs::exists(cache_file)) manifest.add_artifact(cache_file);
    }
    manifest.write_artifact(fs::path(c.out_dir) / "analyze_summary.json", summary.dump(2) + "\n");
    stage.finished_utc = Manifest::now_utc();
    stage.backend_calls = gw.backend_calls();
    stage.cache_hits = gw.cache_hits();
    manifest.record_stage(stage);
    manifest.save();
    return summary;
}

// --- detect -------------------------------------------------------------------------------

inline json cmd_detect(const RunConfig& c) {
    Manifest manifest(c.out_dir);
    manifest.set_config_digest(config_digest(c));
    StageRecord stage;
    stage.stage = "detect";
    stage.started_utc = Manifest::now_utc();

    json summary;
    for (const auto& input : c.inputs) {
        const fs::path dir = fs::path(c.out_dir) / input.name;
        const fs::path centroid_path = dir / "centroids.jsonl";
        if (!fs::exists(centroid_path)) {
            throw Error("missing artifact " + centroid_path.string() + " (run the analyze stage first)");
        }
        std::vector<embedspace::Vec> vectors;
        std::vector<embedspace::Group> group_of;
        {
            std::ifstream in(centroid_path);
            io::for_each_line(in, [&](std::size_t, const std::string& line) {
                json j = json::parse(line);
                if (j.value("zero", false)) return;
                vectors.push_back(j.at("vector").get<embedspace::Vec>());
                group_of.push_back(embedspace::group_from_string(j.at("group").get<std::string>()));
            });
        }

        // Keep only groups with at least 2 members and remap labels densely.
        std::map<embedspace::Group, std::size_t> counts;
        for (auto g : group_of) ++counts[g];
        std::vector<embedspace::Group> kept;
        for (const auto& [g, n] : counts) {
            if (n >= 2) kept.push_back(g);
        }
        if (kept.size() < 2) {
            throw detector::ClassTooSmallError(
                "community '" + input.name + "' has fewer than 2 classes with >= 2 centroids each; "
                "increase max_users/max_targets_per_user or scenario coverage and rerun analyze");
        }
        std::map<embedspace::Group, int> label_of;
        detector::Dataset ds;
        for (std::size_t k = 0; k < kept.size(); ++k) {
            label_of[kept[k]] = static_cast<int>(k);
            ds.class_names.push_back(embedspace::to_string(kept[k]));
        }
        ds.n_classes = static_cast<int>(kept.size());
        std::size_t dropped = 0;
        for (std::size_t i = 0; i < vectors.size(); ++i) {
            const auto it = label_of.find(group_of[i]);
            if (it == label_of.end()) {
                ++dropped;
                continue;
            }
            ds.X.push_back(vectors[i]);
            ds.y.push_back(it->second);
        }

        const auto report = detector::run_experiment(ds, c.detect);
        json rj = detector::report_to_json(report);
        rj["class_names"] = ds.class_names;
        rj["dropped_singleton_centroids"] = dropped;

        // Published full-scale numbers, for side-by-side comparison only.
        {
            json ref;
            ref["reference_only"] = true;
            const bool trump = input.candidate == scenario::Candidate::Trump;
            ref["accuracy"] = {{"mean", trump ? reference::kDetectorAccuracyTrumpMean
                                              : reference::kDetectorAccuracyClintonMean},
                               {"std", trump ? reference::kDetectorAccuracyTrumpStd
                                             : reference::kDetectorAccuracyClintonStd}};
            json per_class = json::array();
            const auto& table = trump ? reference::kDetectorTableTrump : reference::kDetectorTableClinton;
            for (const auto& row : table) {
                per_class.push_back({{"class", row.group},
                                     {"precision", {{"mean", row.precision_mean}, {"std", row.precision_std}}},
                                     {"recall", {{"mean", row.recall_mean}, {"std", row.recall_std}}},
                                     {"f1", {{"mean", row.f1_mean}, {"std", row.f1_std}}}});
            }
            ref["per_class"] = per_class;
            ref["tolerance_abs"] = reference::kDetectorComparisonTolerance;
            rj["reference_comparison"] = ref;
        }
        manifest.write_artifact(dir / "detector_report.json", rj.dump(2) + "\n");

        {
            io::CsvWriter csv;
            csv.header({"community", "true_group", "predicted_group", "count"});
            for (std::size_t r = 0; r < report.confusion_sum.size(); ++r) {
                for (std::size_t p = 0; p < report.confusion_sum[r].size(); ++p) {
                    csv.row({input.name, ds.class_names[r], ds.class_names[p],
                             std::to_string(report.confusion_sum[r][p])});
                }
            }
            manifest.write_artifact(dir / "confusion.csv", csv.str());
        }

        json s;
        s["classes"] = ds.class_names;
        s["centroids_used"] = ds.X.size();
        s["accuracy_mean"] = report.accuracy.mean;
        s["accuracy_std"] = report.accuracy.std_dev;
        summary[input.name] = s;
    }

    manifest.write_artifact(fs::path(c.out_dir) / "detect_summary.json", summary.dump(2) + "\n");
    stage.finished_utc = Manifest::now_utc();
    manifest.record_stage(stage);
    manifest.save();
    return summary;
}

}  // namespace redsim::cli
