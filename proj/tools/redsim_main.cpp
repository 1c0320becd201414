#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "redsim/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"threaded-conversation simulation and analysis pipeline"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may follow the subcommand name

    std::string config_path;
    std::string backend;
    std::string out_dir;
    std::int64_t max_calls = -1;
    std::uint64_t seed = 0;
    int workers = 0;

    app.add_option("-c,--config", config_path, "run configuration JSON file");
    app.add_option("--backend", backend, "override backend kind (mock|live)");
    app.add_option("--out", out_dir, "override output directory");
    app.add_option("--max-calls", max_calls, "override backend call budget (0 = unlimited)");
    auto* seed_opt = app.add_option("--seed", seed, "override master seed");
    app.add_option("--workers", workers, "override worker thread count");

    auto* ingest = app.add_subcommand("ingest", "parse dumps into conversation trees and pick users");
    auto* simulate = app.add_subcommand("simulate", "generate synthetic comments for every scenario");
    auto* analyze = app.add_subcommand("analyze", "classify and compare real vs generated text");
    auto* detect = app.add_subcommand("detect", "train and evaluate the group classifier on user centroids");
    auto* run_all = app.add_subcommand("run", "all four stages in order");
    auto* verify = app.add_subcommand("verify", "check output artifacts against the manifest");
    std::string verify_dir;
    verify->add_option("--dir", verify_dir, "output directory to check")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad usage is a configuration problem
    }

    try {
        if (verify->parsed()) {
            redsim::cli::Manifest manifest(verify_dir);
            const auto problems = manifest.verify();
            for (const auto& p : problems) std::cerr << p << "\n";
            if (!problems.empty()) return 1;
            std::cout << "manifest ok\n";
            return 0;
        }

        if (config_path.empty()) {
            throw redsim::cli::ConfigError("--config is required for this command");
        }
        redsim::cli::RunConfig cfg = redsim::cli::load_config(config_path);
        if (!backend.empty()) {
            if (backend != "mock" && backend != "live") {
                throw redsim::cli::ConfigError("--backend must be \"mock\" or \"live\"");
            }
            cfg.backend = backend;
        }
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (max_calls >= 0) cfg.max_calls = max_calls;
        if (seed_opt->count() > 0) cfg.seed = seed;
        if (workers > 0) cfg.workers = workers;
        // Stage seeds derive from the master seed, so overrides must re-derive.
        cfg.tsne.seed = redsim::derive_seed(cfg.seed, 0x75E0);
        cfg.detect.seed = redsim::derive_seed(cfg.seed, 0xDE7E);

        nlohmann::json out;
        if (ingest->parsed()) {
            out = redsim::cli::cmd_ingest(cfg);
        } else if (simulate->parsed()) {
            out = redsim::cli::cmd_simulate(cfg);
        } else if (analyze->parsed()) {
            out = redsim::cli::cmd_analyze(cfg);
        } else if (detect->parsed()) {
            out = redsim::cli::cmd_detect(cfg);
        } else if (run_all->parsed()) {
            out["ingest"] = redsim::cli::cmd_ingest(cfg);
            out["simulate"] = redsim::cli::cmd_simulate(cfg);
            out["analyze"] = redsim::cli::cmd_analyze(cfg);
            out["detect"] = redsim::cli::cmd_detect(cfg);
        }
        std::cout << out.dump(2) << "\n";
        return 0;
    } catch (const redsim::cli::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const redsim::gateway::BudgetExceededError& e) {
        std::cerr << "budget exhausted: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
