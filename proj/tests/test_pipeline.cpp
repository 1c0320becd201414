#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "redsim/pipeline.hpp"
#include "test_util.hpp"

using namespace redsim;
using json = nlohmann::json;
namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;

namespace {

// One community built from the hand-annotated alpha fixture. Expected numbers,
// derived by hand from the fixture files:
//   21 input lines, 1 malformed -> 20 records (3 posts + 17 comments)
//   trees hp1/p1/p2 with 8+4+6 = 18 nodes, 2 orphans (oc1, oc2)
//   selected users: ada, ben, cleo, dmitri, kay (lou and ghost lack history)
//   in-window leaf targets: ada 2, ben 2, cleo 1, dmitri 1, kay 0 -> 6
//   6 targets x 4 scenarios x 1 temperature x 2 runs = 48 generations
json alpha_config_json(const fs::path& out) {
    json in;
    in["name"] = "alpha";
    in["candidate"] = "Trump";
    in["posts"] = testutil::fixture("alpha_posts.jsonl").string();
    in["comments"] = testutil::fixture("alpha_comments.jsonl").string();
    json j;
    j["inputs"] = json::array({in});
    j["history_window"] = {{"start", 1000}, {"end", 2000}};
    j["target_window"] = {{"start", 2000}, {"end", 3000}};
    j["generation"] = {{"temperatures", json::array({0.7})}, {"n_runs", 2}, {"classification_runs", 2}};
    j["backend"] = {{"kind", "mock"}, {"mock_embedding_dim", 64}};
    j["seed"] = 20161108;
    j["workers"] = 1;
    j["out_dir"] = out.string();
    j["analysis"] = {{"exceedance_shuffles", 25},
                     {"tsne", {{"iterations", 120}, {"exaggeration_iters", 40}, {"checkpoint_every", 40}}}};
    j["detector"] = {{"runs", 6}};
    return j;
}

cli::RunConfig alpha_config(const fs::path& out) { return cli::config_from_json(alpha_config_json(out)); }

std::vector<json> read_jsonl(const fs::path& p) {
    std::vector<json> out;
    std::ifstream in(p);
    REQUIRE(in.good());
    io::for_each_line(in, [&](std::size_t, const std::string& line) { out.push_back(json::parse(line)); });
    return out;
}

json manifest_doc(const fs::path& out) {
    std::ifstream in(out / "manifest.json");
    REQUIRE(in.good());
    return json::parse(in);
}

// Artifact CSVs quote only cells containing separators; none of the inspected
// columns do, so a plain split is enough.
struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t col(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        FAIL("no such column: " + name);
        return 0;
    }

    const std::string& cell(const std::vector<std::string>& row, const std::string& name) const {
        return row.at(col(name));
    }

    std::vector<const std::vector<std::string>*> where(
        const std::vector<std::pair<std::string, std::string>>& conditions) const {
        std::vector<const std::vector<std::string>*> hits;
        for (const auto& row : rows) {
            bool ok = true;
            for (const auto& [name, want] : conditions) {
                if (cell(row, name) != want) {
                    ok = false;
                    break;
                }
            }
            if (ok) hits.push_back(&row);
        }
        return hits;
    }

    const std::vector<std::string>& only(const std::vector<std::pair<std::string, std::string>>& conditions) const {
        const auto hits = where(conditions);
        REQUIRE(hits.size() == 1);
        return *hits[0];
    }
};

Csv load_csv(const fs::path& p) {
    Csv csv;
    std::ifstream in(p);
    REQUIRE(in.good());
    io::for_each_line(in, [&](std::size_t line_no, const std::string& line) {
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
        if (line_no == 1) {
            csv.header = std::move(cells);
        } else {
            csv.rows.push_back(std::move(cells));
        }
    });
    return csv;
}

double num(const std::string& s) { return std::stod(s); }

std::map<std::string, std::string> dir_contents(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        files[fs::relative(e.path(), root).generic_string()] = io::read_file(e.path());
    }
    return files;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(REDSIM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    if (rc == -1) return -1;
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -2;
}

}  // namespace

TEST_CASE("config parsing applies defaults, validates, and round-trips") {
    const json base = alpha_config_json("/tmp/unused");

    SECTION("valid config fills derived and default fields") {
        const auto c = cli::config_from_json(base);
        REQUIRE(c.inputs.size() == 1);
        CHECK(c.inputs[0].name == "alpha");
        CHECK(c.inputs[0].candidate == scenario::Candidate::Trump);
        CHECK(c.scenarios.size() == 4);  // defaults to every scenario
        CHECK(c.n_runs == 2);
        CHECK(c.classification_runs == 2);
        CHECK(c.model_name == "gpt-4-turbo");
        CHECK(c.backend == "mock");
        CHECK(c.mock_embedding_dim == 64);
        CHECK(c.seed == 20161108);
        CHECK(c.tsne.seed == derive_seed(20161108, 0x75E0));
        CHECK(c.detect.seed == derive_seed(20161108, 0xDE7E));
        CHECK(c.tsne.iterations == 120);
        CHECK(c.detect.runs == 6);
        CHECK(c.cache_enabled);
    }
    SECTION("canonical serialization preserves the digest") {
        const auto c = cli::config_from_json(base);
        const auto c2 = cli::config_from_json(cli::config_to_json(c));
        CHECK(cli::config_digest(c) == cli::config_digest(c2));
    }
    SECTION("inputs are mandatory") {
        json j = base;
        j.erase("inputs");
        CHECK_THROWS_AS(cli::config_from_json(j), cli::ConfigError);
        j["inputs"] = json::array();
        CHECK_THROWS_AS(cli::config_from_json(j), cli::ConfigError);
    }
    SECTION("inputs need name and both dump paths") {
        json j = base;
        j["inputs"][0].erase("name");
        CHECK_THROWS_AS(cli::config_from_json(j), cli::ConfigError);
        j = base;
        j["inputs"][0].erase("comments");
        CHECK_THROWS_AS(cli::config_from_json(j), cli::ConfigError);
    }
    SECTION("an empty date window is rejected") {
        json j = base;
        j["target_window"] = {{"start", 500}, {"end", 400}};
        CHECK_THROWS_AS(cli::config_from_json(j), cli::ConfigError);
    }
    SECTION("generation knobs are validated") {
        json j = base;
        j["generation"]["n_runs"] = 0;
        CHECK_THROWS_AS(cli::config_from_json(j), cli::ConfigError);
        j = base;
        j["generation"]["temperatures"] = json::array();
        CHECK_THROWS_AS(cli::config_from_json(j), cli::ConfigError);
    }
    SECTION("backend kind and workers are validated") {
        json j = base;
        j["backend"]["kind"] = "dream";
        CHECK_THROWS_AS(cli::config_from_json(j), cli::ConfigError);
        j = base;
        j["workers"] = 0;
        CHECK_THROWS_AS(cli::config_from_json(j), cli::ConfigError);
    }
    SECTION("unknown scenario names and schema versions are rejected") {
        json j = base;
        j["scenarios"] = json::array({"real_history", "dreamt_up"});
        CHECK_THROWS_AS(cli::config_from_json(j), Error);
        j = base;
        j["schema_version"] = 99;
        CHECK_THROWS_AS(cli::config_from_json(j), cli::ConfigError);
    }
    SECTION("a wrongly typed field names itself in the error") {
        json j = base;
        j["seed"] = "not a number";
        CHECK_THROWS_WITH(cli::config_from_json(j), ContainsSubstring("seed"));
    }
    SECTION("load_config rejects missing files and broken JSON") {
        CHECK_THROWS_AS(cli::load_config("/nonexistent/run.json"), cli::ConfigError);
        const auto dir = testutil::fresh_dir("pipe_cfg");
        io::atomic_write(dir / "broken.json", "{nope");
        CHECK_THROWS_AS(cli::load_config(dir / "broken.json"), cli::ConfigError);
    }
    SECTION("input paths are checked before a stage runs") {
        json j = base;
        j["inputs"][0]["posts"] = "/nonexistent/posts.jsonl";
        const auto c = cli::config_from_json(j);
        CHECK_THROWS_AS(cli::validate_input_paths(c), cli::ConfigError);
    }
}

TEST_CASE("manifest records digests and detects tampering") {
    const auto out = testutil::fresh_dir("pipe_manifest");
    {
        cli::Manifest m(out);
        m.write_artifact(out / "a.txt", "hello\n");
        m.write_artifact(out / "sub" / "b.csv", "x,y\n1,2\n");
        cli::StageRecord rec;
        rec.stage = "demo";
        rec.started_utc = cli::Manifest::now_utc();
        rec.finished_utc = rec.started_utc;
        rec.backend_calls = 3;
        rec.cache_hits = 1;
        rec.notes.push_back("first pass");
        m.record_stage(rec);
        m.save();
        CHECK(m.verify().empty());
    }

    // A fresh instance reloads the saved document.
    cli::Manifest m(out);
    CHECK(m.doc().at("stages").at("demo").at("backend_calls") == 3);
    CHECK(m.doc().at("stages").at("demo").at("notes")[0] == "first pass");
    CHECK(m.doc().at("artifacts").contains("a.txt"));
    CHECK(m.doc().at("artifacts").contains("sub/b.csv"));
    CHECK(m.verify().empty());

    io::atomic_write(out / "a.txt", "tampered\n");
    auto problems = m.verify();
    REQUIRE(problems.size() == 1);
    CHECK(problems[0] == "digest mismatch: a.txt");

    io::atomic_write(out / "a.txt", "hello\n");
    io::atomic_write(out / "stray.bin", "zzz");
    problems = m.verify();
    REQUIRE(problems.size() == 1);
    CHECK(problems[0] == "unlisted artifact: stray.bin");
}

TEST_CASE("stages demand their predecessors' artifacts") {
    const auto out = testutil::fresh_dir("pipe_order");
    auto cfg = alpha_config(out);
    CHECK_THROWS_WITH(cli::cmd_simulate(cfg), ContainsSubstring("run the ingest stage first"));
    cli::cmd_ingest(cfg);
    CHECK_THROWS_WITH(cli::cmd_analyze(cfg), ContainsSubstring("run the simulate stage first"));
    CHECK_THROWS_WITH(cli::cmd_detect(cfg), ContainsSubstring("run the analyze stage first"));
}

TEST_CASE("full pipeline on the alpha fixture produces the expected artifacts") {
    const auto out = testutil::fresh_dir("pipe_full");
    auto cfg = alpha_config(out);
    const fs::path dir = out / "alpha";

    // ---- ingest ----
    const json ing = cli::cmd_ingest(cfg);
    const json& is = ing.at("alpha");
    CHECK(is.at("records") == 20);
    CHECK(is.at("trees") == 3);
    CHECK(is.at("orphans") == 2);
    CHECK(is.at("skipped") == 1);
    CHECK(is.at("total_lines") == 21);
    CHECK(is.at("tree_nodes") == 18);
    CHECK(is.at("selected_users") == 5);
    CHECK(is.at("conservation_ok") == true);

    {
        std::ifstream uin(dir / "users.json");
        const json users = json::parse(uin);
        CHECK(users.at("selected_users") == json::array({"ada", "ben", "cleo", "dmitri", "kay"}));
        CHECK(users.at("n") == 5);
    }
    {
        const auto skipped = read_jsonl(dir / "skipped.jsonl");
        REQUIRE(skipped.size() == 1);
        CHECK(skipped[0].at("source") == "comments");
        CHECK(skipped[0].at("line") == 8);
    }
    {
        std::ifstream fin(dir / "forest.jsonl");
        const auto forest = corpus::parse_forest(fin);
        CHECK(forest.trees.size() == 3);
        CHECK(forest.total_nodes() == 18);
        CHECK(read_jsonl(dir / "orphans.jsonl").size() == 2);
    }

    // Freeze the ingest digest the first time through; compare afterwards.
    {
        const std::string digest = io::sha256_file_hex(dir / "forest.jsonl");
        const auto golden_file = testutil::golden_path("alpha_forest.sha256");
        if (fs::exists(golden_file)) {
            CHECK(digest + "\n" == io::read_file(golden_file));
        } else {
            io::atomic_write(golden_file, digest + "\n");
            WARN("froze ingest digest golden: " + digest);
        }
    }

    // ---- simulate ----
    const json sim = cli::cmd_simulate(cfg);
    const json& ss = sim.at("alpha");
    CHECK(ss.at("requests") == 48);
    CHECK(ss.at("generated") == 48);
    CHECK(ss.at("skipped_real_history_no_entries") == 0);
    CHECK(ss.at("partial") == false);

    const auto gen = read_jsonl(dir / "generated.jsonl");
    REQUIRE(gen.size() == 48);
    std::map<std::string, int> by_scenario;
    std::set<std::string> authors;
    for (const auto& g : gen) {
        by_scenario[g.at("scenario").get<std::string>()]++;
        authors.insert(g.at("author").get<std::string>());
        CHECK(g.at("temperature").get<double>() == 0.7);
        CHECK(g.at("backend_id") == "mock-gen");
        CHECK(g.at("cached") == false);
        const int run = g.at("run_index").get<int>();
        CHECK((run == 0 || run == 1));
        const std::string text = g.at("text").get<std::string>();
        const std::string kind = g.at("scenario").get<std::string>();
        if (kind == "pro_candidate") {
            CHECK_THAT(text, ContainsSubstring("Donald Trump has my full support"));
        } else if (kind == "anti_candidate") {
            CHECK_THAT(text, ContainsSubstring("Donald Trump is not the answer for this country"));
        } else {
            CHECK_THAT(text, ContainsSubstring("It is hard to say where this discussion lands"));
        }
    }
    CHECK(by_scenario ==
          std::map<std::string, int>{
              {"real_history", 12}, {"no_history", 12}, {"pro_candidate", 12}, {"anti_candidate", 12}});
    CHECK(authors == std::set<std::string>{"ada", "ben", "cleo", "dmitri"});
    {
        const json man = manifest_doc(out);
        CHECK(man.at("stages").at("simulate").at("backend_calls") == 48);
        CHECK(man.at("stages").at("simulate").at("cache_hits") == 0);
        CHECK(man.at("stages").at("simulate").at("partial") == false);
    }

    // ---- analyze ----
    const json ana = cli::cmd_analyze(cfg);
    const json& as = ana.at("alpha");
    CHECK(as.at("real_targets") == 6);
    CHECK(as.at("generated") == 48);
    {
        bool clamped_note = false;
        for (const auto& n : as.at("notes")) {
            if (n.get<std::string>() == "tsne perplexity clamped to 6") clamped_note = true;
        }
        CHECK(clamped_note);
    }

    // Real comments carry no stance cue, so the scripted classifier calls each
    // axis neutral; the scripted scenarios are unanimous by construction.
    const auto shares = load_csv(dir / "shares.csv");
    CHECK(shares.rows.size() == 15);  // (real + 4 scenario groups) x 3 axes
    {
        const auto& real_party = shares.only({{"source", "real"}, {"axis", "party"}});
        CHECK(num(shares.cell(real_party, "neutral")) == 1.0);
        CHECK(shares.cell(real_party, "n_counted") == "6");
        CHECK(shares.cell(real_party, "n_unclassified") == "0");

        const auto& pro = shares.only({{"scenario", "pro_candidate"}, {"axis", "party"}});
        CHECK(num(shares.cell(pro, "pro_or_positive")) == 1.0);
        CHECK(shares.cell(pro, "n_counted") == "12");

        const auto& anti = shares.only({{"scenario", "anti_candidate"}, {"axis", "party"}});
        CHECK(num(shares.cell(anti, "anti_or_negative")) == 1.0);

        for (const char* scen : {"real_history", "no_history"}) {
            const auto& row = shares.only({{"scenario", scen}, {"axis", "party"}});
            CHECK(num(shares.cell(row, "neutral")) == 1.0);
        }
        for (const auto& row : shares.where({{"axis", "violence"}})) {
            CHECK(num(shares.cell(*row, "neutral")) == 1.0);  // nothing violent anywhere
        }
        for (const auto& row : shares.rows) {
            const double total = num(shares.cell(row, "pro_or_positive")) + num(shares.cell(row, "neutral")) +
                                 num(shares.cell(row, "anti_or_negative"));
            CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-9));
        }
    }

    {
        const auto vals = load_csv(dir / "user_mean_values.csv");
        CHECK(vals.rows.size() == 20);  // 4 classified authors x (real + 4 groups)
        CHECK(vals.where({{"source", "real"}}).size() == 4);
        for (const auto& row : vals.where({{"scenario", "pro_candidate"}})) {
            CHECK(num(vals.cell(*row, "mean_party")) == 1.0);
        }
        const auto hist = load_csv(dir / "user_means.csv");
        CHECK(hist.rows.size() == 5 * 21);  // default bin count per emitted distribution
        long total = 0;
        for (const auto& row : hist.where({{"source", "real"}})) total += std::stol(hist.cell(*row, "count"));
        CHECK(total == 4);
    }

    {
        const auto bins = load_csv(dir / "length_bins.csv");
        std::map<std::string, long> counted;
        for (const auto& row : bins.rows) counted[bins.cell(row, "scenario")] += std::stol(bins.cell(row, "count"));
        for (const char* scen : {"real_history", "no_history", "pro_candidate", "anti_candidate"}) {
            CHECK(counted[scen] == 12);
        }
    }

    {
        const auto tabs = load_csv(dir / "cross_tabs.csv");
        CHECK(tabs.rows.size() == 4 * 2 * 9);  // scenarios x axes x full 3x3 grid
        const auto& hit = tabs.only({{"scenario", "pro_candidate"},
                                     {"axis", "party"},
                                     {"conditioner_label", "0"},
                                     {"outcome_label", "1"}});
        CHECK(tabs.cell(hit, "count") == "12");
        CHECK(num(tabs.cell(hit, "row_fraction")) == 1.0);
        CHECK(tabs.cell(hit, "row_empty") == "0");
        const auto& empty_row = tabs.only({{"scenario", "pro_candidate"},
                                           {"axis", "party"},
                                           {"conditioner_label", "1"},
                                           {"outcome_label", "1"}});
        CHECK(tabs.cell(empty_row, "row_empty") == "1");
    }

    {
        const auto feat = load_csv(dir / "features.csv");
        CHECK(feat.rows.size() == 5 * 4);  // corpora x metrics
        const auto& real_ttr = feat.only({{"source", "real"}, {"metric", "ttr"}});
        CHECK(feat.cell(real_ttr, "n_texts") == "6");
        CHECK(feat.cell(real_ttr, "texts_skipped") == "0");
        for (const auto& row : feat.where({{"source", "generated"}, {"metric", "ttr"}})) {
            CHECK(feat.cell(*row, "n_texts") == "12");
        }

        const auto zipf = load_csv(dir / "zipf.csv");
        CHECK(zipf.rows.size() == 5 * 3);  // corpora x n-gram orders
        for (const auto& row : zipf.rows) {
            const bool fitted = !zipf.cell(row, "s").empty();
            const bool noted = zipf.cell(row, "note") == "insufficient_data";
            CHECK(fitted != noted);
            // Mock filler text is near-uniform, so the exponent may be ~0.
            if (fitted) CHECK(std::isfinite(num(zipf.cell(row, "s"))));
        }

        const auto corr = load_csv(dir / "rank_correlation.csv");
        CHECK(corr.rows.size() == 4 * 3);  // scenario groups x n-gram orders
        for (const auto& row : corr.rows) {
            const bool computed = !corr.cell(row, "pearson_r").empty();
            const bool noted = corr.cell(row, "note") == "too_few_shared";
            CHECK(computed != noted);
            if (computed) {
                const double r = num(corr.cell(row, "pearson_r"));
                CHECK(r >= -1.0 - 1e-12);
                CHECK(r <= 1.0 + 1e-12);
            }
        }
    }

    {
        const auto centroids = read_jsonl(dir / "centroids.jsonl");
        REQUIRE(centroids.size() == 20);  // 4 embedded authors x 5 groups
        std::map<std::pair<std::string, std::string>, int> counts;
        for (const auto& c : centroids) {
            CHECK(c.at("zero") == false);
            CHECK(c.at("vector").size() == 64);
            counts[{c.at("group").get<std::string>(), c.at("author").get<std::string>()}] =
                c.at("n_comments").get<int>();
        }
        CHECK(counts.size() == 20);
        CHECK(counts[{"real", "ada"}] == 2);
        CHECK(counts[{"real", "cleo"}] == 1);
        for (const char* grp : {"real_history", "no_history", "pro_candidate", "anti_candidate"}) {
            CHECK(counts[{grp, "ada"}] == 4);   // 2 targets x 2 runs
            CHECK(counts[{grp, "ben"}] == 4);
            CHECK(counts[{grp, "cleo"}] == 2);  // 1 target x 2 runs
            CHECK(counts[{grp, "dmitri"}] == 2);
        }
    }

    {
        const auto exc = load_csv(dir / "exceedance.csv");
        CHECK(exc.rows.size() == 4 * 2);  // generated groups x baselines
        for (const auto& row : exc.rows) {
            CHECK(exc.cell(row, "n_users") == "4");
            const double p = num(exc.cell(row, "proportion"));
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
        }
        CHECK(exc.where({{"baseline", "random_match"}}).size() == 4);
        CHECK(exc.where({{"baseline", "all_real_mean"}}).size() == 4);

        const auto intra = load_csv(dir / "intra_similarity.csv");
        CHECK(intra.rows.size() == 5);
        for (const auto& row : intra.rows) {
            CHECK(intra.cell(row, "n_members") == "4");
            CHECK(intra.cell(row, "note").empty());
        }

        const auto dist = load_csv(dir / "distance_matrix.csv");
        CHECK(dist.rows.size() == 25);
        std::map<std::pair<std::string, std::string>, double> d;
        for (const auto& row : dist.rows) {
            d[{dist.cell(row, "group_row"), dist.cell(row, "group_col")}] =
                num(dist.cell(row, "mean_cosine_distance"));
            CHECK(dist.cell(row, "diagonal_singleton") == "0");
        }
        for (const auto& [key, value] : d) {
            CHECK(value == d.at({key.second, key.first}));  // symmetric by construction
        }
    }

    {
        const auto proj = load_csv(dir / "projection.csv");
        CHECK(proj.rows.size() == 20);
        std::ifstream pin(dir / "projection_params.json");
        const json params = json::parse(pin);
        CHECK(params.at("perplexity") == 6.0);  // clamped from the default 30
        CHECK(params.at("iterations") == 120);
        CHECK(params.at("pca_applied") == true);  // 64 dims > the 50-dim threshold
        CHECK(params.at("seed") == derive_seed(20161108, 0x75E0));
        const auto& trace = params.at("kl_trace");
        REQUIRE(trace.size() == 3);  // checkpoints at 40/80/120, final deduplicated
        CHECK(trace.back().at("iteration") == 120);
        for (const auto& cp : trace) CHECK(cp.at("kl").get<double>() >= 0.0);
        CHECK_THAT(io::read_file(dir / "projection.svg"), ContainsSubstring("<svg"));
    }

    // ---- detect ----
    const json det = cli::cmd_detect(cfg);
    const json& ds = det.at("alpha");
    CHECK(ds.at("classes").size() == 5);
    CHECK(ds.at("centroids_used") == 20);
    const double acc = ds.at("accuracy_mean").get<double>();
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);

    {
        std::ifstream rin(dir / "detector_report.json");
        const json report = json::parse(rin);
        CHECK(report.at("runs") == 6);
        CHECK(report.at("class_names") ==
              json::array({"real", "real_history", "no_history", "pro_candidate", "anti_candidate"}));
        CHECK(report.at("per_class").size() == 5);
        CHECK(report.at("dropped_singleton_centroids") == 0);
        REQUIRE(report.at("confusion_sum").size() == 5);
        CHECK(report.at("reference_comparison").at("reference_only") == true);

        const auto confusion = load_csv(dir / "confusion.csv");
        CHECK(confusion.rows.size() == 25);
        long total = 0;
        for (const auto& row : confusion.rows) total += std::stol(confusion.cell(row, "count"));
        CHECK(total == 5 * 1 * 6);  // classes x held-out member x runs
    }

    // Every artifact written along the way is listed with a fresh digest.
    cli::Manifest m(out);
    const auto problems = m.verify();
    CAPTURE(problems);
    CHECK(problems.empty());
    CHECK(m.doc().at("stages").contains("ingest"));
    CHECK(m.doc().at("stages").contains("simulate"));
    CHECK(m.doc().at("stages").contains("analyze"));
    CHECK(m.doc().at("stages").contains("detect"));
}

TEST_CASE("a second simulate run replays entirely from the response cache") {
    const auto out = testutil::fresh_dir("pipe_cache");
    auto cfg = alpha_config(out);
    cli::cmd_ingest(cfg);
    cli::cmd_simulate(cfg);
    const auto first = read_jsonl(out / "alpha" / "generated.jsonl");

    cli::cmd_simulate(cfg);
    const auto second = read_jsonl(out / "alpha" / "generated.jsonl");
    REQUIRE(second.size() == first.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
        CHECK(second[i].at("cached") == true);
        json a = first[i];
        json b = second[i];
        a.erase("cached");
        b.erase("cached");
        CHECK(a == b);
    }
    const json man = manifest_doc(out);
    CHECK(man.at("stages").at("simulate").at("backend_calls") == 0);
    CHECK(man.at("stages").at("simulate").at("cache_hits") == 48);
}

TEST_CASE("budget exhaustion aborts simulate but keeps a resumable prefix") {
    const auto out = testutil::fresh_dir("pipe_budget");
    auto cfg = alpha_config(out);
    cli::cmd_ingest(cfg);

    cfg.max_calls = 5;
    REQUIRE_THROWS_AS(cli::cmd_simulate(cfg), gateway::BudgetExceededError);
    CHECK(read_jsonl(out / "alpha" / "generated.jsonl").size() == 5);
    {
        const json man = manifest_doc(out);
        CHECK(man.at("stages").at("simulate").at("partial") == true);
        CHECK(man.at("stages").at("simulate").at("backend_calls") == 5);
        CHECK(man.at("stages").at("simulate").at("notes").size() == 1);
    }

    // Lifting the cap resumes: the prefix replays from cache, the rest is new.
    cfg.max_calls = 0;
    const json sim = cli::cmd_simulate(cfg);
    CHECK(sim.at("alpha").at("generated") == 48);
    CHECK(sim.at("alpha").at("partial") == false);
    const json man = manifest_doc(out);
    CHECK(man.at("stages").at("simulate").at("backend_calls") == 43);
    CHECK(man.at("stages").at("simulate").at("cache_hits") == 5);
    CHECK(man.at("stages").at("simulate").at("partial") == false);
}

TEST_CASE("pipeline reruns with the same seed are byte-identical") {
    const auto out_a = testutil::fresh_dir("pipe_rep_a");
    const auto out_b = testutil::fresh_dir("pipe_rep_b");
    for (const auto& out : {out_a, out_b}) {
        auto cfg = alpha_config(out);
        cli::cmd_ingest(cfg);
        cli::cmd_simulate(cfg);
        cli::cmd_analyze(cfg);
        cli::cmd_detect(cfg);
    }
    const auto a = dir_contents(out_a);
    const auto b = dir_contents(out_b);
    REQUIRE(a.size() == b.size());
    for (const auto& [rel, bytes] : a) {
        REQUIRE(b.count(rel) == 1);
        if (rel == "manifest.json") continue;  // timestamps and the out_dir digest differ
        INFO("artifact: " << rel);
        CHECK(bytes == b.at(rel));
    }
}

TEST_CASE("worker count does not change the generated artifact") {
    const auto out1 = testutil::fresh_dir("pipe_w1");
    const auto out4 = testutil::fresh_dir("pipe_w4");
    auto c1 = alpha_config(out1);
    auto c4 = alpha_config(out4);
    c4.workers = 4;
    cli::cmd_ingest(c1);
    cli::cmd_simulate(c1);
    cli::cmd_ingest(c4);
    cli::cmd_simulate(c4);
    CHECK(io::read_file(out1 / "alpha" / "generated.jsonl") == io::read_file(out4 / "alpha" / "generated.jsonl"));
}

TEST_CASE("command line interface maps failures to distinct exit codes") {
    const auto dir = testutil::fresh_dir("pipe_cli");
    const auto out = dir / "out";
    const auto cfg_path = dir / "run.json";
    io::atomic_write(cfg_path, alpha_config_json(out).dump(2) + "\n");

    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("") == 2);             // a subcommand is required
    CHECK(run_cli("ingest") == 2);       // --config is required
    CHECK(run_cli("ingest --bogus") == 2);
    CHECK(run_cli("ingest -c " + (dir / "missing.json").string()) == 2);

    CHECK(run_cli("run -c " + cfg_path.string()) == 0);
    CHECK(run_cli("verify --dir " + out.string()) == 0);

    // Budget exhaustion has its own exit code so wrappers can resume.
    const auto out2 = dir / "out_budget";
    CHECK(run_cli("ingest -c " + cfg_path.string() + " --out " + out2.string()) == 0);
    CHECK(run_cli("simulate -c " + cfg_path.string() + " --out " + out2.string() + " --max-calls 3") == 3);

    // Tampering after the fact fails verification.
    io::atomic_write(out / "alpha" / "shares.csv", "tampered\n");
    CHECK(run_cli("verify --dir " + out.string()) == 1);
}
