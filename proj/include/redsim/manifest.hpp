#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "redsim/common.hpp"
#include "redsim/io.hpp"

namespace redsim::cli {

// Run manifest: one JSON file per output directory recording the config
// digest, per-stage call counters, and a content digest for every artifact.
// Timestamps make the manifest itself non-reproducible byte-for-byte; all
// other artifacts are.

struct StageRecord {
    std::string stage;
    std::string started_utc;
    std::string finished_utc;
    std::int64_t backend_calls = 0;
    std::int64_t cache_hits = 0;
    bool partial = false;  // stage halted early (e.g. budget exhausted)
    std::vector<std::string> notes;
};

class Manifest {
public:
    explicit Manifest(std::filesystem::path out_dir) : out_dir_(std::move(out_dir)), path_(out_dir_ / "manifest.json") {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir_);
        if (fs::exists(path_)) {
            std::ifstream in(path_);
            nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
            if (!j.is_discarded()) doc_ = std::move(j);
        }
        if (!doc_.contains("artifacts")) doc_["artifacts"] = nlohmann::json::object();
        if (!doc_.contains("stages")) doc_["stages"] = nlohmann::json::object();
        doc_["tool_version"] = kVersion;
    }

    static std::string now_utc() {
        const auto now = std::chrono::system_clock::now();
        const std::time_t t = std::chrono::system_clock::to_time_t(now);
        std::tm tm{};
        gmtime_r(&t, &tm);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

    void set_config_digest(const std::string& digest) { doc_["config_digest"] = digest; }

    // Registers an artifact (path relative to the output directory) with its
    // content digest.
    void add_artifact(const std::filesystem::path& file) {
        const auto rel = std::filesystem::relative(file, out_dir_).generic_string();
        nlohmann::json entry;
        entry["sha256"] = io::sha256_file_hex(file);
        entry["bytes"] = static_cast<std::uint64_t>(std::filesystem::file_size(file));
        doc_["artifacts"][rel] = entry;
    }

    void record_stage(const StageRecord& rec) {
        nlohmann::json s;
        s["started_utc"] = rec.started_utc;
        s["finished_utc"] = rec.finished_utc;
        s["backend_calls"] = rec.backend_calls;
        s["cache_hits"] = rec.cache_hits;
        s["partial"] = rec.partial;
        s["notes"] = rec.notes;
        doc_["stages"][rec.stage] = s;
    }

    // Every artifact write goes through here so the digest can never go stale.
    void write_artifact(const std::filesystem::path& file, const std::string& content) {
        std::filesystem::create_directories(file.parent_path());
        io::atomic_write(file, content);
        add_artifact(file);
    }

    void save() { io::atomic_write(path_, doc_.dump(2) + "\n"); }

    const nlohmann::json& doc() const { return doc_; }
    const std::filesystem::path& out_dir() const { return out_dir_; }

    // Completeness check: every file under the output directory (except the
    // manifest itself) is listed with a matching digest.
    std::vector<std::string> verify() const {
        std::vector<std::string> problems;
        namespace fs = std::filesystem;
        for (const auto& entry : fs::recursive_directory_iterator(out_dir_)) {
            if (!entry.is_regular_file()) continue;
            const auto rel = fs::relative(entry.path(), out_dir_).generic_string();
            if (rel == "manifest.json") continue;
            if (!doc_["artifacts"].contains(rel)) {
                problems.push_back("unlisted artifact: " + rel);
                continue;
            }
            const std::string want = doc_["artifacts"][rel]["sha256"].get<std::string>();
            const std::string got = io::sha256_file_hex(entry.path());
            if (want != got) problems.push_back("digest mismatch: " + rel);
        }
        return problems;
    }

private:
    std::filesystem::path out_dir_;
    std::filesystem::path path_;
    nlohmann::json doc_;
};

}  // namespace redsim::cli
