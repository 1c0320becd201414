// End-to-end walkthrough on a small synthetic dump, using the scripted mock
// backend so it runs offline. Writes everything under ./demo_out and prints
// the headline numbers of each stage.
//
//   ./demo_pipeline
//
// The same flow is available from the command line tool:
//   redsim run -c config.json
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "redsim/pipeline.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;
using namespace redsim;

namespace {

void append_post(std::string& out, const std::string& id, const std::string& title, std::int64_t t) {
    json j;
    j["id"] = id;
    j["title"] = title;
    j["author"] = "mod_team";
    j["created_utc"] = t;
    j["subreddit"] = "demo";
    out += j.dump() + "\n";
}

void append_comment(std::string& out, const std::string& id, const std::string& parent, const std::string& author,
                    const std::string& body, std::int64_t t) {
    json j;
    j["id"] = id;
    j["parent_id"] = parent;
    j["link_id"] = "t3_p1";
    j["author"] = author;
    j["body"] = body;
    j["created_utc"] = t;
    j["subreddit"] = "demo";
    out += j.dump() + "\n";
}

// Eight users, each with history comments in [1000, 2000) and leaf comments
// in [2000, 3000) that become generation targets.
void write_dumps(const fs::path& dir) {
    std::string posts;
    append_post(posts, "p1", "Open thread: how is the race looking where you live?", 500);
    append_post(posts, "p2", "Debate night reactions", 600);

    std::string comments;
    for (int i = 0; i < 8; ++i) {
        const std::string user = "user" + std::to_string(i);
        append_comment(comments, "h" + std::to_string(i) + "a", "t3_p1", user,
                       "Early voting lines were long in my county this week.", 1100 + i);
        append_comment(comments, "h" + std::to_string(i) + "b", "t3_p2", user,
                       "The debate did not move anyone I know. People decided months ago.", 1300 + i);
        append_comment(comments, "t" + std::to_string(i) + "a", "t3_p1", user,
                       "Turnout will decide this. Everything else is noise.", 2100 + i);
        append_comment(comments, "t" + std::to_string(i) + "b", "t3_p2", user,
                       "I watched the whole thing and still have questions.", 2300 + i);
    }

    std::ofstream(dir / "posts.jsonl") << posts;
    std::ofstream(dir / "comments.jsonl") << comments;
}

json demo_config(const fs::path& work) {
    json in;
    in["name"] = "demo";
    in["candidate"] = "Trump";
    in["posts"] = (work / "dumps" / "posts.jsonl").string();
    in["comments"] = (work / "dumps" / "comments.jsonl").string();

    json j;
    j["inputs"] = json::array({in});
    j["history_window"] = {{"start", 1000}, {"end", 2000}};
    j["target_window"] = {{"start", 2000}, {"end", 3000}};
    j["generation"] = {{"temperatures", json::array({0.7})}, {"n_runs", 2}, {"classification_runs", 2}};
    j["backend"] = {{"kind", "mock"}, {"mock_embedding_dim", 64}};
    j["seed"] = 20161108;
    j["out_dir"] = (work / "out").string();
    j["analysis"] = {{"exceedance_shuffles", 50},
                     {"tsne", {{"iterations", 250}, {"exaggeration_iters", 80}, {"checkpoint_every", 50}}}};
    j["detector"] = {{"runs", 10}};
    return j;
}

}  // namespace

int main() {
    const fs::path work = "demo_out";
    fs::remove_all(work);
    fs::create_directories(work / "dumps");
    write_dumps(work / "dumps");

    const auto cfg = cli::config_from_json(demo_config(work));

    const auto ingest = cli::cmd_ingest(cfg)["demo"];
    std::printf("ingest:   %lld records -> %lld trees, %lld orphans, %lld users selected\n",
                ingest["records"].get<long long>(), ingest["trees"].get<long long>(),
                ingest["orphans"].get<long long>(), ingest["selected_users"].get<long long>());

    const auto simulate = cli::cmd_simulate(cfg)["demo"];
    std::printf("simulate: %lld synthetic comments (4 scenarios x targets x runs)\n",
                simulate["generated"].get<long long>());

    const auto analyze = cli::cmd_analyze(cfg)["demo"];
    std::printf("analyze:  %lld real targets classified alongside the generated set\n",
                analyze["real_targets"].get<long long>());

    // Party-leaning shares per scenario, straight from the artifact.
    {
        std::ifstream shares(fs::path(cfg.out_dir) / "demo" / "shares.csv");
        std::string line;
        std::getline(shares, line);  // header
        std::printf("          %-14s %-6s %-8s %-6s\n", "scenario", "pro", "neutral", "anti");
        while (std::getline(shares, line)) {
            std::vector<std::string> cells;
            std::string cur;
            for (char c : line) {
                if (c == ',') {
                    cells.push_back(cur);
                    cur.clear();
                } else {
                    cur.push_back(c);
                }
            }
            cells.push_back(cur);
            // community, source, scenario, temperature, axis, pro, neutral, anti, ...
            if (cells[4] != "party") continue;
            const std::string label = cells[1] == "real" ? "real" : cells[2];
            std::printf("          %-14s %-6s %-8s %-6s\n", label.c_str(), cells[5].c_str(), cells[6].c_str(),
                        cells[7].c_str());
        }
    }

    const auto detect = cli::cmd_detect(cfg)["demo"];
    std::printf("detect:   %zu-way detector accuracy %.3f +/- %.3f over held-out users\n",
                detect["classes"].size(), detect["accuracy_mean"].get<double>(),
                detect["accuracy_std"].get<double>());

    std::printf("\nartifacts under %s, integrity manifest at %s\n", (fs::path(cfg.out_dir) / "demo").string().c_str(),
                (fs::path(cfg.out_dir) / "manifest.json").string().c_str());
    return 0;
}
