#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "redsim/common.hpp"
#include "redsim/corpus.hpp"
#include "redsim/detector.hpp"
#include "redsim/scenario.hpp"
#include "redsim/tsne.hpp"

namespace redsim::cli {

using json = nlohmann::json;

class ConfigError : public Error { public: using Error::Error; };

inline constexpr int kConfigSchemaVersion = 1;

struct CommunityInput {
    std::string name;                       // artifact prefix, e.g. "trump"
    scenario::Candidate candidate = scenario::Candidate::Trump;
    std::string posts_path;
    std::string comments_path;
};

struct RunConfig {
    int schema_version = kConfigSchemaVersion;

    std::vector<CommunityInput> inputs;
    corpus::DateWindow history_window;  // user history source
    corpus::DateWindow target_window;   // comments to simulate

    std::vector<scenario::Kind> scenarios{scenario::kAllKinds.begin(), scenario::kAllKinds.end()};
    std::vector<double> temperatures = {0.0};
    double top_p = 1.0;
    std::string model_name = "gpt-4-turbo";
    std::string classification_model = "gpt-4-turbo";
    std::string embedding_model = "text-embedding-3-small";
    int embedding_dim = 1536;  // live; the mock embedder defaults to 384
    int n_runs = 5;            // generations per (target, scenario, temperature)
    int classification_runs = 5;
    int max_users = 0;             // 0 = all selected users
    int max_targets_per_user = 0;  // 0 = all leaf targets
    int history_limit = 0;         // 0 = full history in the prompt
    int max_prompt_tokens = 0;     // 0 = no truncation
    bool anonymize_authors = false;

    std::string backend = "mock";  // "mock" | "live"
    std::string base_url = "https://api.openai.com";
    std::string api_key_env = "OPENAI_API_KEY";
    int mock_embedding_dim = 384;

    std::int64_t max_calls = 0;  // 0 = unlimited
    int max_in_flight = 4;
    int per_minute = 0;
    int retry_attempts = 5;
    double retry_base_delay_s = 1.0;

    std::uint64_t seed = 0;
    int workers = 1;  // >1 trades cache-order byte stability for speed
    std::string out_dir = "out";
    bool cache_enabled = true;

    // analysis knobs
    int user_hist_bins = 21;
    int length_bin_width = 250;
    std::uint64_t zipf_min_count = 2;
    int exceedance_shuffles = 100;
    embedspace::TsneParams tsne;
    bool emit_svg = true;

    // detector knobs
    detector::ExperimentOptions detect;
};

namespace detail {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
}

inline corpus::DateWindow window_from(const json& j, const char* key) {
    corpus::DateWindow w;
    if (!j.contains(key)) return w;
    const json& v = j.at(key);
    w.start = get_or<std::int64_t>(v, "start", 0);
    w.end = get_or<std::int64_t>(v, "end", 0);
    if (w.end != 0 && w.end <= w.start) throw ConfigError(std::string("config window '") + key + "' is empty");
    return w;
}

}  // namespace detail

inline RunConfig config_from_json(const json& j) {
    RunConfig c;
    c.schema_version = detail::get_or(j, "schema_version", kConfigSchemaVersion);
    if (c.schema_version != kConfigSchemaVersion) {
        throw ConfigError("unsupported config schema_version " + std::to_string(c.schema_version));
    }
    if (!j.contains("inputs") || !j.at("inputs").is_array() || j.at("inputs").empty()) {
        throw ConfigError("config needs a non-empty 'inputs' array");
    }
    for (const json& in : j.at("inputs")) {
        CommunityInput ci;
        ci.name = detail::get_or<std::string>(in, "name", "");
        if (ci.name.empty()) throw ConfigError("every input needs a 'name'");
        ci.candidate = scenario::candidate_from_string(detail::get_or<std::string>(in, "candidate", "Trump"));
        ci.posts_path = detail::get_or<std::string>(in, "posts", "");
        ci.comments_path = detail::get_or<std::string>(in, "comments", "");
        if (ci.posts_path.empty() || ci.comments_path.empty()) {
            throw ConfigError("input '" + ci.name + "' needs 'posts' and 'comments' paths");
        }
        c.inputs.push_back(std::move(ci));
    }
    c.history_window = detail::window_from(j, "history_window");
    c.target_window = detail::window_from(j, "target_window");

    if (j.contains("scenarios")) {
        c.scenarios.clear();
        for (const json& s : j.at("scenarios")) c.scenarios.push_back(scenario::kind_from_string(s.get<std::string>()));
        if (c.scenarios.empty()) throw ConfigError("'scenarios' must not be empty");
    }
    if (j.contains("generation")) {
        const json& g = j.at("generation");
        c.temperatures = detail::get_or(g, "temperatures", c.temperatures);
        if (c.temperatures.empty()) throw ConfigError("'generation.temperatures' must not be empty");
        c.top_p = detail::get_or(g, "top_p", c.top_p);
        c.model_name = detail::get_or(g, "model", c.model_name);
        c.classification_model = detail::get_or(g, "classification_model", c.model_name);
        c.n_runs = detail::get_or(g, "n_runs", c.n_runs);
        if (c.n_runs < 1) throw ConfigError("'generation.n_runs' must be >= 1");
        c.classification_runs = detail::get_or(g, "classification_runs", c.n_runs);
        if (c.classification_runs < 1) throw ConfigError("'generation.classification_runs' must be >= 1");
        c.max_users = detail::get_or(g, "max_users", c.max_users);
        c.max_targets_per_user = detail::get_or(g, "max_targets_per_user", c.max_targets_per_user);
        c.history_limit = detail::get_or(g, "history_limit", c.history_limit);
        c.max_prompt_tokens = detail::get_or(g, "max_prompt_tokens", c.max_prompt_tokens);
        c.anonymize_authors = detail::get_or(g, "anonymize_authors", c.anonymize_authors);
    }
    if (j.contains("backend")) {
        const json& b = j.at("backend");
        c.backend = detail::get_or<std::string>(b, "kind", c.backend);
        if (c.backend != "mock" && c.backend != "live") {
            throw ConfigError("'backend.kind' must be \"mock\" or \"live\"");
        }
        c.base_url = detail::get_or(b, "base_url", c.base_url);
        c.api_key_env = detail::get_or(b, "api_key_env", c.api_key_env);
        c.embedding_model = detail::get_or(b, "embedding_model", c.embedding_model);
        c.embedding_dim = detail::get_or(b, "embedding_dim", c.embedding_dim);
        c.mock_embedding_dim = detail::get_or(b, "mock_embedding_dim", c.mock_embedding_dim);
    }
    if (j.contains("budget")) {
        const json& b = j.at("budget");
        c.max_calls = detail::get_or(b, "max_calls", c.max_calls);
        c.max_in_flight = detail::get_or(b, "max_in_flight", c.max_in_flight);
        c.per_minute = detail::get_or(b, "per_minute", c.per_minute);
        c.retry_attempts = detail::get_or(b, "retry_attempts", c.retry_attempts);
        c.retry_base_delay_s = detail::get_or(b, "retry_base_delay_s", c.retry_base_delay_s);
    }
    c.seed = detail::get_or(j, "seed", c.seed);
    c.workers = detail::get_or(j, "workers", c.workers);
    if (c.workers < 1) throw ConfigError("'workers' must be >= 1");
    c.out_dir = detail::get_or(j, "out_dir", c.out_dir);
    c.cache_enabled = detail::get_or(j, "cache_enabled", c.cache_enabled);

    if (j.contains("analysis")) {
        const json& a = j.at("analysis");
        c.user_hist_bins = detail::get_or(a, "user_hist_bins", c.user_hist_bins);
        c.length_bin_width = detail::get_or(a, "length_bin_width", c.length_bin_width);
        c.zipf_min_count = detail::get_or(a, "zipf_min_count", c.zipf_min_count);
        c.exceedance_shuffles = detail::get_or(a, "exceedance_shuffles", c.exceedance_shuffles);
        c.emit_svg = detail::get_or(a, "emit_svg", c.emit_svg);
        if (a.contains("tsne")) {
            const json& t = a.at("tsne");
            c.tsne.perplexity = detail::get_or(t, "perplexity", c.tsne.perplexity);
            c.tsne.iterations = detail::get_or(t, "iterations", c.tsne.iterations);
            c.tsne.learning_rate = detail::get_or(t, "learning_rate", c.tsne.learning_rate);
            c.tsne.exaggeration_iters = detail::get_or(t, "exaggeration_iters", c.tsne.exaggeration_iters);
            c.tsne.exaggeration = detail::get_or(t, "exaggeration", c.tsne.exaggeration);
            c.tsne.checkpoint_every = detail::get_or(t, "checkpoint_every", c.tsne.checkpoint_every);
            c.tsne.pca_dim = detail::get_or(t, "pca_dim", c.tsne.pca_dim);
        }
    }
    c.tsne.seed = derive_seed(c.seed, 0x75E0);

    if (j.contains("detector")) {
        const json& d = j.at("detector");
        c.detect.split_fraction = detail::get_or(d, "split_fraction", c.detect.split_fraction);
        c.detect.runs = detail::get_or(d, "runs", c.detect.runs);
        c.detect.regularization_c = detail::get_or(d, "regularization_c", c.detect.regularization_c);
        c.detect.max_epochs = detail::get_or(d, "max_epochs", c.detect.max_epochs);
        c.detect.tol = detail::get_or(d, "tol", c.detect.tol);
        c.detect.l2_normalize = detail::get_or(d, "l2_normalize", c.detect.l2_normalize);
    }
    c.detect.seed = derive_seed(c.seed, 0xDE7E);
    return c;
}

// Canonical form used for the config digest; key order is alphabetical by
// construction of the JSON type.
inline json config_to_json(const RunConfig& c) {
    json j;
    j["schema_version"] = c.schema_version;
    json inputs = json::array();
    for (const auto& in : c.inputs) {
        inputs.push_back({{"name", in.name},
                          {"candidate", scenario::to_string(in.candidate)},
                          {"posts", in.posts_path},
                          {"comments", in.comments_path}});
    }
    j["inputs"] = inputs;
    j["history_window"] = {{"start", c.history_window.start}, {"end", c.history_window.end}};
    j["target_window"] = {{"start", c.target_window.start}, {"end", c.target_window.end}};
    json scen = json::array();
    for (auto k : c.scenarios) scen.push_back(scenario::to_string(k));
    j["scenarios"] = scen;
    j["generation"] = {{"temperatures", c.temperatures},
                       {"top_p", c.top_p},
                       {"model", c.model_name},
                       {"classification_model", c.classification_model},
                       {"n_runs", c.n_runs},
                       {"classification_runs", c.classification_runs},
                       {"max_users", c.max_users},
                       {"max_targets_per_user", c.max_targets_per_user},
                       {"history_limit", c.history_limit},
                       {"max_prompt_tokens", c.max_prompt_tokens},
                       {"anonymize_authors", c.anonymize_authors}};
    j["backend"] = {{"kind", c.backend},
                    {"base_url", c.base_url},
                    {"api_key_env", c.api_key_env},
                    {"embedding_model", c.embedding_model},
                    {"embedding_dim", c.embedding_dim},
                    {"mock_embedding_dim", c.mock_embedding_dim}};
    j["budget"] = {{"max_calls", c.max_calls},
                   {"max_in_flight", c.max_in_flight},
                   {"per_minute", c.per_minute},
                   {"retry_attempts", c.retry_attempts},
                   {"retry_base_delay_s", c.retry_base_delay_s}};
    j["seed"] = c.seed;
    j["workers"] = c.workers;
    j["out_dir"] = c.out_dir;
    j["cache_enabled"] = c.cache_enabled;
    j["analysis"] = {{"user_hist_bins", c.user_hist_bins},
                     {"length_bin_width", c.length_bin_width},
                     {"zipf_min_count", c.zipf_min_count},
                     {"exceedance_shuffles", c.exceedance_shuffles},
                     {"emit_svg", c.emit_svg},
                     {"tsne",
                      {{"perplexity", c.tsne.perplexity},
                       {"iterations", c.tsne.iterations},
                       {"learning_rate", c.tsne.learning_rate},
                       {"exaggeration_iters", c.tsne.exaggeration_iters},
                       {"exaggeration", c.tsne.exaggeration},
                       {"checkpoint_every", c.tsne.checkpoint_every},
                       {"pca_dim", c.tsne.pca_dim}}}};
    j["detector"] = {{"split_fraction", c.detect.split_fraction},
                     {"runs", c.detect.runs},
                     {"regularization_c", c.detect.regularization_c},
                     {"max_epochs", c.detect.max_epochs},
                     {"tol", c.detect.tol},
                     {"l2_normalize", c.detect.l2_normalize}};
    return j;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
    return config_from_json(j);
}

// Input paths must exist before a stage that reads them runs.
inline void validate_input_paths(const RunConfig& c) {
    namespace fs = std::filesystem;
    for (const auto& in : c.inputs) {
        if (!fs::exists(in.posts_path)) throw ConfigError("posts path does not exist: " + in.posts_path);
        if (!fs::exists(in.comments_path)) throw ConfigError("comments path does not exist: " + in.comments_path);
    }
}

}  // namespace redsim::cli
