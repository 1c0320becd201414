#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "redsim/common.hpp"
#include "redsim/io.hpp"
#include "redsim/scenario.hpp"
#include "redsim/textstats.hpp"

namespace redsim::gateway {

using json = nlohmann::json;

class BackendUnavailableError : public Error { public: using Error::Error; };
class AuthError : public Error { public: using Error::Error; };
class BudgetExceededError : public Error { public: using Error::Error; };
class EmptyTextError : public Error { public: using Error::Error; };
// Retryable failure (timeouts, 429, 5xx). Converted to BackendUnavailableError
// once the retry budget is spent.
class TransientBackendError : public Error { public: using Error::Error; };

struct GenerationRequest {
    scenario::PromptBundle prompt;
    scenario::GenerationParams params;
    int run_index = 0;
};

struct GeneratedComment {
    std::string tree_ref;
    std::string target_ref;
    std::string author;
    scenario::Kind scenario = scenario::Kind::NoHistory;
    scenario::Candidate candidate = scenario::Candidate::Trump;
    int run_index = 0;
    double temperature = 0.0;
    int token_estimate = 0;  // prompt size estimate, carried for length binning
    std::string text;
    std::string backend_id;
    bool cached = false;
};

struct EmbeddingVector {
    std::vector<double> values;
    std::string model_id;

    int dim() const { return static_cast<int>(values.size()); }
};

// --- backend interfaces ----------------------------------------------------

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual std::string id() const = 0;
    // seed is derived from (prompt, params, run_index) and the master seed;
    // live backends ignore it.
    virtual std::string complete(const std::string& prompt_text, const scenario::GenerationParams& params,
                                 std::uint64_t seed) = 0;

    std::size_t calls() const { return calls_.load(); }

protected:
    std::atomic<std::size_t> calls_{0};
};

class EmbedBackend {
public:
    virtual ~EmbedBackend() = default;
    virtual std::string id() const = 0;
    virtual int dim() const = 0;
    virtual std::vector<double> embed(const std::string& text) = 0;

    std::size_t calls() const { return calls_.load(); }

protected:
    std::atomic<std::size_t> calls_{0};
};

// --- scripted mock backends -------------------------------------------------
// The mock generator plants a cue phrase per scenario and the mock classifier
// keys off the same cues, so the end-to-end pipeline has known ground truth.

inline constexpr const char* kMockSupportCue = "has my full support";
inline constexpr const char* kMockOpposeCue = "is not the answer for this country";

namespace detail {

inline const std::array<const char*, 64>& filler_lexicon() {
    static const std::array<const char*, 64> words = {
        "ballots",   "debates",  "turnout",   "polling",   "pundits",  "caucus",   "primaries", "delegates",
        "platform",  "rallies",  "canvassing", "precinct", "swing",    "margins",  "runoff",    "recount",
        "approval",  "mandate",  "coalition", "grassroots", "incumbent", "challenger", "momentum", "optics",
        "spin",      "issues",   "pledges",   "promises",  "speeches", "slogans",  "airwaves",  "headlines",
        "districts", "counties", "statewide", "national",  "midterms", "register", "absentee",  "earlyvote",
        "doorstep",  "townhall", "debate",    "factcheck", "undecided", "leaning",  "moderate",  "partisan",
        "platforms", "policy",   "economy",   "security",  "healthcare", "education", "taxes",   "trade",
        "energy",    "housing",  "infrastructure", "reform", "veterans", "families", "workers",  "seniors"};
    return words;
}

// (stance, candidate) detected from the fictitious history planted in the
// prompt; anything else reads as neutral.
struct DetectedStance {
    enum class Kind { Pro, Anti, Neutral } kind = Kind::Neutral;
    scenario::Candidate candidate = scenario::Candidate::Trump;
};

inline DetectedStance detect_stance(const std::string& prompt) {
    using scenario::Candidate;
    DetectedStance d;
    if (prompt.find(scenario::kProTrumpComment) != std::string::npos) {
        d.kind = DetectedStance::Kind::Pro;
        d.candidate = Candidate::Trump;
    } else if (prompt.find(scenario::kProClintonComment) != std::string::npos) {
        d.kind = DetectedStance::Kind::Pro;
        d.candidate = Candidate::Clinton;
    } else if (prompt.find(scenario::kAntiTrumpComment) != std::string::npos) {
        d.kind = DetectedStance::Kind::Anti;
        d.candidate = Candidate::Trump;
    } else if (prompt.find(scenario::kAntiClintonComment) != std::string::npos) {
        d.kind = DetectedStance::Kind::Anti;
        d.candidate = Candidate::Clinton;
    }
    return d;
}

inline std::string seeded_filler(std::uint64_t seed) {
    SplitMix rng(splitmix64(seed));
    const auto& words = filler_lexicon();
    std::string out = "Anyway,";
    for (int i = 0; i < 6; ++i) {
        out += ' ';
        out += words[rng.next_below(words.size())];
    }
    out += '.';
    return out;
}

}  // namespace detail

class MockGenerator : public ChatBackend {
public:
    std::string id() const override { return "mock-gen"; }

    std::string complete(const std::string& prompt_text, const scenario::GenerationParams&,
                         std::uint64_t seed) override {
        ++calls_;
        const auto d = detail::detect_stance(prompt_text);
        std::string text;
        switch (d.kind) {
            case detail::DetectedStance::Kind::Pro:
                text = std::string("I could not agree more, ") + scenario::full_name(d.candidate) + " " +
                       kMockSupportCue + ". ";
                break;
            case detail::DetectedStance::Kind::Anti:
                text = std::string("I strongly disagree, ") + scenario::full_name(d.candidate) + " " +
                       kMockOpposeCue + ". ";
                break;
            case detail::DetectedStance::Kind::Neutral:
                text = "It is hard to say where this discussion lands. ";
                break;
        }
        text += detail::seeded_filler(seed);
        return text;
    }
};

class MockClassifier : public ChatBackend {
public:
    std::string id() const override { return "mock-classify"; }

    std::string complete(const std::string& prompt_text, const scenario::GenerationParams&, std::uint64_t) override {
        ++calls_;
        // Pull the comment out of the classification prompt.
        static const std::string marker = "Continue classifying the following comment: ";
        std::string text = prompt_text;
        if (auto pos = prompt_text.find(marker); pos != std::string::npos) {
            auto end = prompt_text.rfind("\nAssistant:");
            text = prompt_text.substr(pos + marker.size(),
                                      end == std::string::npos ? std::string::npos : end - pos - marker.size());
        }
        if (text.find(kMockSupportCue) != std::string::npos) return "1, 1, 0";
        if (text.find(kMockOpposeCue) != std::string::npos) return "-1, -1, 0";
        return "0, 0, 0";
    }
};

// Hashed bag-of-words embedder: each token lands in one of `dim` buckets with
// a hash-derived sign, then the vector is L2-normalized. Deterministic, and
// texts sharing tokens land near each other.
class MockEmbedder : public EmbedBackend {
public:
    explicit MockEmbedder(int dim = 384) : dim_(dim) {}

    std::string id() const override { return "hashed-bow-" + std::to_string(dim_); }
    int dim() const override { return dim_; }

    std::vector<double> embed(const std::string& text) override {
        ++calls_;
        std::vector<double> v(static_cast<std::size_t>(dim_), 0.0);
        const auto tokens = textstats::tokenize(text);
        for (const auto& tok : tokens) {
            const std::uint64_t h = fnv1a64(tok);
            const auto bucket = static_cast<std::size_t>(h % static_cast<std::uint64_t>(dim_));
            v[bucket] += (splitmix64(h) & 1) ? 1.0 : -1.0;
        }
        double norm2 = 0.0;
        for (double x : v) norm2 += x * x;
        if (norm2 == 0.0) {
            // No tokens (or full cancellation): fall back to a byte hash so the
            // vector is still usable downstream.
            v[static_cast<std::size_t>(fnv1a64(text) % static_cast<std::uint64_t>(dim_))] = 1.0;
            norm2 = 1.0;
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (double& x : v) x *= inv;
        return v;
    }

private:
    int dim_;
};

// A chat backend that always fails; handy for exercising retry exhaustion.
class FailingBackend : public ChatBackend {
public:
    explicit FailingBackend(int fail_first_n = -1) : fail_first_n_(fail_first_n) {}

    std::string id() const override { return "failing"; }

    std::string complete(const std::string&, const scenario::GenerationParams&, std::uint64_t) override {
        const auto n = ++calls_;
        if (fail_first_n_ < 0 || n <= static_cast<std::size_t>(fail_first_n_)) {
            throw TransientBackendError("synthetic transient failure");
        }
        return "recovered";
    }

private:
    int fail_first_n_;
};

// --- clock / rate limiting ---------------------------------------------------

struct Clock {
    std::function<double()> now = [] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
    };
    std::function<void(double)> sleep = [](double seconds) {
        std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
    };
};

// Deterministic clock for tests: sleeping advances time.
struct FakeClock {
    std::shared_ptr<double> t = std::make_shared<double>(0.0);
    std::shared_ptr<std::vector<double>> sleeps = std::make_shared<std::vector<double>>();

    Clock clock() const {
        auto tt = t;
        auto ss = sleeps;
        Clock c;
        c.now = [tt] { return *tt; };
        c.sleep = [tt, ss](double s) {
            *tt += s;
            ss->push_back(s);
        };
        return c;
    }
};

// Bounds concurrent requests and requests per minute. acquire() blocks until
// both constraints allow another call.
class RateLimiter {
public:
    RateLimiter(int max_in_flight, int per_minute, Clock clock = {})
        : max_in_flight_(max_in_flight), per_minute_(per_minute), clock_(std::move(clock)) {}

    class Ticket {
    public:
        Ticket(RateLimiter* rl) : rl_(rl) {}
        Ticket(Ticket&& o) noexcept : rl_(o.rl_) { o.rl_ = nullptr; }
        Ticket(const Ticket&) = delete;
        ~Ticket() {
            if (rl_) rl_->release();
        }

    private:
        RateLimiter* rl_;
    };

    Ticket acquire() {
        std::unique_lock<std::mutex> lock(mu_);
        if (max_in_flight_ > 0) {
            cv_.wait(lock, [&] { return in_flight_ < max_in_flight_; });
        }
        if (per_minute_ > 0) {
            for (;;) {
                const double now = clock_.now();
                while (!starts_.empty() && starts_.front() <= now - 60.0) starts_.pop_front();
                if (static_cast<int>(starts_.size()) < per_minute_) break;
                const double wait = starts_.front() + 60.0 - now;
                lock.unlock();
                clock_.sleep(wait);
                lock.lock();
            }
            starts_.push_back(clock_.now());
        }
        ++in_flight_;
        peak_in_flight_ = std::max(peak_in_flight_, in_flight_);
        return Ticket(this);
    }

    int peak_in_flight() const {
        std::lock_guard<std::mutex> lock(mu_);
        return peak_in_flight_;
    }

private:
    void release() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            --in_flight_;
        }
        cv_.notify_one();
    }

    int max_in_flight_;
    int per_minute_;
    Clock clock_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    int in_flight_ = 0;
    int peak_in_flight_ = 0;
    std::deque<double> starts_;
};

// --- response cache ----------------------------------------------------------
// Append-only JSONL keyed by request hash, so interrupted runs resume without
// repeating backend calls. Concurrent readers, serialized writers.

class ResponseCache {
public:
    ResponseCache() = default;

    explicit ResponseCache(std::filesystem::path file) : file_(std::move(file)) {
        namespace fs = std::filesystem;
        if (fs::exists(*file_)) {
            std::ifstream in(*file_);
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                json j = json::parse(line, nullptr, false);
                if (j.is_discarded() || !j.contains("key_hash") || !j["key_hash"].is_string() ||
                    !j.contains("response")) {
                    continue;
                }
                entries_[j["key_hash"].get<std::string>()] = j["response"];
            }
        } else if (file_->has_parent_path()) {
            fs::create_directories(file_->parent_path());
        }
    }

    std::optional<json> lookup(const std::string& key_hash) const {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = entries_.find(key_hash);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void store(const std::string& key_hash, const std::string& request_digest, json response) {
        std::lock_guard<std::mutex> lock(mu_);
        if (file_) {
            std::ofstream out(*file_, std::ios::app);
            json line;
            line["key_hash"] = key_hash;
            line["request_digest"] = request_digest;
            line["response"] = response;
            out << line.dump() << '\n';
            out.flush();
        }
        entries_[key_hash] = std::move(response);
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> lock(mu_);
        return entries_.size();
    }

private:
    std::optional<std::filesystem::path> file_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, json> entries_;
};

// --- gateway ------------------------------------------------------------------

struct RetryPolicy {
    int max_attempts = 5;
    double base_delay_s = 1.0;
    double jitter = 0.1;  // +-10% of the delay
};

struct GatewayOptions {
    std::uint64_t seed = 0;
    RetryPolicy retry;
    int max_in_flight = 4;
    int per_minute = 0;       // 0 = unlimited
    std::int64_t max_calls = 0;  // 0 = unlimited; counts actual backend calls
    bool cache_enabled = true;
    std::optional<std::filesystem::path> cache_file;
    Clock clock;
};

class Gateway {
public:
    Gateway(std::shared_ptr<ChatBackend> generator, std::shared_ptr<ChatBackend> classifier,
            std::shared_ptr<EmbedBackend> embedder, GatewayOptions opts = {})
        : generator_(std::move(generator)),
          classifier_(std::move(classifier)),
          embedder_(std::move(embedder)),
          opts_(std::move(opts)),
          cache_(opts_.cache_file ? ResponseCache(*opts_.cache_file) : ResponseCache()),
          limiter_(opts_.max_in_flight, opts_.per_minute, opts_.clock),
          jitter_rng_(derive_seed(opts_.seed, 0x9a7e)) {}

    GeneratedComment generate(const GenerationRequest& req) {
        const std::string canonical = cache_key("gen", generator_->id(), req.prompt.text, req.params, req.run_index);
        const std::string key = io::sha256_hex(canonical);
        GeneratedComment out;
        out.tree_ref = req.prompt.tree_ref;
        out.target_ref = req.prompt.target_ref;
        out.author = req.prompt.author;
        out.scenario = req.prompt.scenario;
        out.candidate = req.prompt.candidate;
        out.run_index = req.run_index;
        out.temperature = req.params.temperature;
        out.token_estimate = req.prompt.token_estimate;
        out.backend_id = generator_->id();

        if (opts_.cache_enabled) {
            if (auto hit = cache_.lookup(key)) {
                ++cache_hits_;
                out.text = (*hit)["text"].get<std::string>();
                out.cached = true;
                return out;
            }
        }
        const std::string text =
            call_chat(*generator_, req.prompt.text, req.params, derive_seed(opts_.seed, fnv1a64(canonical)));
        if (opts_.cache_enabled) {
            cache_.store(key, io::sha256_hex(req.prompt.text), json{{"text", text}});
        }
        out.text = text;
        out.cached = false;
        return out;
    }

    // Classification goes through the same cache/retry/budget machinery.
    std::string classify(const std::string& prompt_text, const scenario::GenerationParams& params, int run_index,
                         bool* was_cached = nullptr) {
        const std::string canonical = cache_key("cls", classifier_->id(), prompt_text, params, run_index);
        const std::string key = io::sha256_hex(canonical);
        if (opts_.cache_enabled) {
            if (auto hit = cache_.lookup(key)) {
                ++cache_hits_;
                if (was_cached) *was_cached = true;
                return (*hit)["text"].get<std::string>();
            }
        }
        const std::string text =
            call_chat(*classifier_, prompt_text, params, derive_seed(opts_.seed, fnv1a64(canonical)));
        if (opts_.cache_enabled) {
            cache_.store(key, io::sha256_hex(prompt_text), json{{"text", text}});
        }
        if (was_cached) *was_cached = false;
        return text;
    }

    EmbeddingVector embed(const std::string& text) {
        if (text.empty()) throw EmptyTextError("cannot embed empty text");
        const std::string canonical = "emb\x1f" + embedder_->id() + "\x1f" + text;
        const std::string key = io::sha256_hex(canonical);
        EmbeddingVector out;
        out.model_id = embedder_->id();
        if (opts_.cache_enabled) {
            if (auto hit = cache_.lookup(key)) {
                ++cache_hits_;
                out.values = (*hit)["vector"].get<std::vector<double>>();
                return out;
            }
        }
        std::vector<double> v = with_retries([&] {
            auto ticket = limiter_.acquire();
            consume_budget();
            return embedder_->embed(text);
        });
        if (opts_.cache_enabled) {
            cache_.store(key, io::sha256_hex(text), json{{"vector", v}});
        }
        out.values = std::move(v);
        return out;
    }

    std::int64_t backend_calls() const { return backend_calls_.load(); }
    std::int64_t cache_hits() const { return cache_hits_.load(); }
    const RateLimiter& limiter() const { return limiter_; }

private:
    static std::string cache_key(const char* kind, const std::string& backend_id, const std::string& prompt,
                                 const scenario::GenerationParams& params, int run_index) {
        std::string s = kind;
        s += '\x1f';
        s += backend_id;
        s += '\x1f';
        s += params.model_name;
        s += '\x1f';
        s += io::fmt_double(params.temperature);
        s += '\x1f';
        s += io::fmt_double(params.top_p);
        s += '\x1f';
        s += std::to_string(run_index);
        s += '\x1f';
        s += prompt;
        return s;
    }

    void consume_budget() {
        if (opts_.max_calls > 0) {
            const std::int64_t used = backend_calls_.fetch_add(1) + 1;
            if (used > opts_.max_calls) {
                backend_calls_.fetch_sub(1);
                throw BudgetExceededError("configured max backend calls (" + std::to_string(opts_.max_calls) +
                                          ") exhausted");
            }
        } else {
            backend_calls_.fetch_add(1);
        }
    }

    std::string call_chat(ChatBackend& backend, const std::string& prompt, const scenario::GenerationParams& params,
                          std::uint64_t seed) {
        return with_retries([&] {
            auto ticket = limiter_.acquire();
            consume_budget();
            return backend.complete(prompt, params, seed);
        });
    }

    template <typename Fn>
    auto with_retries(Fn&& fn) -> decltype(fn()) {
        std::string last_error;
        for (int attempt = 0; attempt < opts_.retry.max_attempts; ++attempt) {
            try {
                return fn();
            } catch (const TransientBackendError& e) {
                last_error = e.what();
                if (attempt + 1 == opts_.retry.max_attempts) break;
                double jitter_scale;
                {
                    std::lock_guard<std::mutex> lock(jitter_mu_);
                    jitter_scale = 1.0 + opts_.retry.jitter * (2.0 * jitter_rng_.next_double() - 1.0);
                }
                const double delay = opts_.retry.base_delay_s * static_cast<double>(1ull << attempt) * jitter_scale;
                opts_.clock.sleep(delay);
            }
        }
        throw BackendUnavailableError("backend unavailable after " + std::to_string(opts_.retry.max_attempts) +
                                      " attempts: " + last_error);
    }

    std::shared_ptr<ChatBackend> generator_;
    std::shared_ptr<ChatBackend> classifier_;
    std::shared_ptr<EmbedBackend> embedder_;
    GatewayOptions opts_;
    ResponseCache cache_;
    RateLimiter limiter_;
    std::atomic<std::int64_t> backend_calls_{0};
    std::atomic<std::int64_t> cache_hits_{0};
    std::mutex jitter_mu_;
    SplitMix jitter_rng_;
};

inline json generated_to_json(const GeneratedComment& g) {
    json j;
    j["tree_ref"] = g.tree_ref;
    j["target_ref"] = g.target_ref;
    j["author"] = g.author;
    j["scenario"] = scenario::to_string(g.scenario);
    j["candidate"] = scenario::to_string(g.candidate);
    j["run_index"] = g.run_index;
    j["temperature"] = g.temperature;
    j["token_estimate"] = g.token_estimate;
    j["text"] = g.text;
    j["backend_id"] = g.backend_id;
    j["cached"] = g.cached;
    return j;
}

inline GeneratedComment generated_from_json(const json& j) {
    GeneratedComment g;
    g.tree_ref = j.at("tree_ref").get<std::string>();
    g.target_ref = j.at("target_ref").get<std::string>();
    g.author = j.at("author").get<std::string>();
    g.scenario = scenario::kind_from_string(j.at("scenario").get<std::string>());
    g.candidate = scenario::candidate_from_string(j.at("candidate").get<std::string>());
    g.run_index = j.at("run_index").get<int>();
    g.temperature = j.at("temperature").get<double>();
    g.token_estimate = j.value("token_estimate", 0);
    g.text = j.at("text").get<std::string>();
    g.backend_id = j.value("backend_id", "");
    g.cached = j.value("cached", false);
    return g;
}

}  // namespace redsim::gateway
