// Tests for classification prompts, reply parsing, score aggregation,
// shares, user-mean histograms, length bins, and cross-tabulation.
#include <catch_amalgamated.hpp>

#include <algorithm>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "redsim/classify.hpp"
#include "redsim/gateway.hpp"
#include "test_util.hpp"

using namespace redsim;
using Catch::Approx;

namespace {

classify::AveragedScore score_with_modal(int party, int sentiment, int violence, int n_runs = 1) {
    classify::AveragedScore s;
    s.modal = classify::ClassificationTriple{party, sentiment, violence};
    s.party_mean = party;
    s.sentiment_mean = sentiment;
    s.violence_rate = violence;
    s.n_runs = n_runs;
    return s;
}

// Classifier that returns a malformed reply on its first call only.
class FlakyClassifier : public gateway::ChatBackend {
public:
    std::string id() const override { return "flaky-classify"; }
    std::string complete(const std::string&, const scenario::GenerationParams&, std::uint64_t) override {
        return ++calls_ == 1 ? "sorry, I cannot do that" : "1, 0, 0";
    }
};

class AlwaysMalformedClassifier : public gateway::ChatBackend {
public:
    std::string id() const override { return "malformed-classify"; }
    std::string complete(const std::string&, const scenario::GenerationParams&, std::uint64_t) override {
        ++calls_;
        return "no labels here";
    }
};

gateway::Gateway gateway_with_classifier(std::shared_ptr<gateway::ChatBackend> classifier,
                                         gateway::GatewayOptions opts = {}) {
    return gateway::Gateway(std::make_shared<gateway::MockGenerator>(), std::move(classifier),
                            std::make_shared<gateway::MockEmbedder>(), std::move(opts));
}

}  // namespace

TEST_CASE("classification prompts match the frozen goldens byte for byte") {
    const std::string text = "I can't believe this thread.";
    REQUIRE(classify::build_classification_prompt(text, scenario::Candidate::Trump) ==
            testutil::golden("classify_trump.txt"));
    REQUIRE(classify::build_classification_prompt(text, scenario::Candidate::Clinton) ==
            testutil::golden("classify_clinton.txt"));
}

TEST_CASE("parse_classification accepts valid triples in any layout") {
    auto t = classify::parse_classification("-1, -1, 1");
    REQUIRE(t.party == -1);
    REQUIRE(t.sentiment == -1);
    REQUIRE(t.violence == 1);

    REQUIRE(classify::parse_classification("1, 1, 0") == classify::ClassificationTriple{1, 1, 0});
    REQUIRE(classify::parse_classification("0,0,0") == classify::ClassificationTriple{0, 0, 0});
    REQUIRE(classify::parse_classification("1 -1 0") == classify::ClassificationTriple{1, -1, 0});
    REQUIRE(classify::parse_classification("1\n0\n1") == classify::ClassificationTriple{1, 0, 1});
    REQUIRE(classify::parse_classification(" Sure: 1, 0, 0.") == classify::ClassificationTriple{1, 0, 0});
    REQUIRE(classify::parse_classification("[-1] [0] [1]") == classify::ClassificationTriple{-1, 0, 1});
}

TEST_CASE("parse_classification rejects malformed replies") {
    REQUIRE_THROWS_AS(classify::parse_classification(""), classify::MalformedReplyError);
    REQUIRE_THROWS_AS(classify::parse_classification("no numbers at all"), classify::MalformedReplyError);
    REQUIRE_THROWS_AS(classify::parse_classification("1, 1"), classify::MalformedReplyError);
    REQUIRE_THROWS_AS(classify::parse_classification("1, 1, 0, 0"), classify::MalformedReplyError);
    REQUIRE_THROWS_AS(classify::parse_classification("2, 0, 0"), classify::MalformedReplyError);
    REQUIRE_THROWS_AS(classify::parse_classification("-2, 0, 0"), classify::MalformedReplyError);
    REQUIRE_THROWS_AS(classify::parse_classification("0, 0, -1"), classify::MalformedReplyError);
    REQUIRE_THROWS_AS(classify::parse_classification("0, 0, 2"), classify::MalformedReplyError);
    REQUIRE_THROWS_AS(classify::parse_classification("- , - , -"), classify::MalformedReplyError);
}

TEST_CASE("modal_label takes the majority and resolves ties to neutral") {
    REQUIRE(classify::modal_label({1, 1, -1}) == 1);
    REQUIRE(classify::modal_label({-1, -1, 1}) == -1);
    REQUIRE(classify::modal_label({0}) == 0);
    REQUIRE(classify::modal_label({1, -1}) == 0);
    REQUIRE(classify::modal_label({1, -1, 1, -1}) == 0);
    REQUIRE(classify::modal_label({0, 0, 1}) == 0);
}

TEST_CASE("average_runs computes means, rates, and modal labels") {
    std::vector<classify::ClassificationTriple> runs = {{1, 1, 0}, {-1, 1, 1}};
    auto s = classify::average_runs(runs, 1);
    REQUIRE(s.party_mean == Approx(0.0));
    REQUIRE(s.sentiment_mean == Approx(1.0));
    REQUIRE(s.violence_rate == Approx(0.5));
    REQUIRE(s.modal.party == 0);      // 1 vs -1 tie
    REQUIRE(s.modal.sentiment == 1);
    REQUIRE(s.modal.violence == 0);   // 0 vs 1 tie
    REQUIRE(s.n_runs == 2);
    REQUIRE(s.n_failed_runs == 1);
    REQUIRE_FALSE(s.unclassified());

    auto empty = classify::average_runs({}, 3);
    REQUIRE(empty.unclassified());
    REQUIRE(empty.n_failed_runs == 3);
}

TEST_CASE("classify_corpus scores cue-bearing texts through the mock gateway") {
    auto gw = gateway_with_classifier(std::make_shared<gateway::MockClassifier>());
    const std::vector<std::string> texts = {
        std::string("Donald Trump ") + gateway::kMockSupportCue + ". More words.",
        std::string("Donald Trump ") + gateway::kMockOpposeCue + ". More words.",
        "Nothing notable happened here.",
    };
    auto scores = classify::classify_corpus(gw, texts, scenario::Candidate::Trump, 3);
    REQUIRE(scores.size() == 3);
    REQUIRE(scores[0].modal == classify::ClassificationTriple{1, 1, 0});
    REQUIRE(scores[0].party_mean == Approx(1.0));
    REQUIRE(scores[0].n_runs == 3);
    REQUIRE(scores[1].modal == classify::ClassificationTriple{-1, -1, 0});
    REQUIRE(scores[2].modal == classify::ClassificationTriple{0, 0, 0});
    REQUIRE(scores[2].violence_rate == Approx(0.0));
}

TEST_CASE("a malformed reply is re-queried once") {
    auto flaky = std::make_shared<FlakyClassifier>();
    auto gw = gateway_with_classifier(flaky);
    auto scores = classify::classify_corpus(gw, {"whatever"}, scenario::Candidate::Trump, 1);
    REQUIRE(scores.size() == 1);
    REQUIRE(scores[0].n_runs == 1);
    REQUIRE(scores[0].n_failed_runs == 0);
    REQUIRE(scores[0].modal == classify::ClassificationTriple{1, 0, 0});
    REQUIRE(flaky->calls() == 2);
}

TEST_CASE("a run that stays malformed is dropped and counted") {
    auto gw = gateway_with_classifier(std::make_shared<AlwaysMalformedClassifier>());
    auto scores = classify::classify_corpus(gw, {"whatever"}, scenario::Candidate::Trump, 2);
    REQUIRE(scores[0].unclassified());
    REQUIRE(scores[0].n_runs == 0);
    REQUIRE(scores[0].n_failed_runs == 2);
    REQUIRE_FALSE(scores[0].error.empty());

    REQUIRE_THROWS_AS(classify::aggregate_shares(scores, classify::Axis::Party), classify::EmptyInputError);
}

TEST_CASE("backend failures are recorded per text instead of aborting") {
    gateway::FakeClock fake;
    gateway::GatewayOptions opts;
    opts.clock = fake.clock();
    opts.retry.max_attempts = 2;
    auto gw = gateway_with_classifier(std::make_shared<gateway::FailingBackend>(-1), opts);
    auto scores = classify::classify_corpus(gw, {"one", "two"}, scenario::Candidate::Clinton, 1);
    REQUIRE(scores.size() == 2);
    REQUIRE(scores[0].unclassified());
    REQUIRE(scores[0].error.find("unavailable") != std::string::npos);
    REQUIRE(scores[1].unclassified());
}

TEST_CASE("an exhausted budget aborts classification") {
    gateway::GatewayOptions opts;
    opts.max_calls = 1;
    auto gw = gateway_with_classifier(std::make_shared<gateway::MockClassifier>(), opts);
    REQUIRE_THROWS_AS(classify::classify_corpus(gw, {"first", "second"}, scenario::Candidate::Trump, 1),
                      gateway::BudgetExceededError);
}

TEST_CASE("aggregate_shares partitions modal labels per axis") {
    std::vector<classify::AveragedScore> scores = {
        score_with_modal(1, 1, 0),
        score_with_modal(1, -1, 0),
        score_with_modal(0, 0, 1),
        score_with_modal(-1, -1, 0),
        classify::AveragedScore{},  // unclassified
    };

    auto party = classify::aggregate_shares(scores, classify::Axis::Party);
    REQUIRE(party.pro == Approx(0.5));
    REQUIRE(party.neutral == Approx(0.25));
    REQUIRE(party.anti == Approx(0.25));
    REQUIRE(party.n_counted == 4);
    REQUIRE(party.n_unclassified == 1);

    auto sentiment = classify::aggregate_shares(scores, classify::Axis::Sentiment);
    REQUIRE(sentiment.pro == Approx(0.25));
    REQUIRE(sentiment.neutral == Approx(0.25));
    REQUIRE(sentiment.anti == Approx(0.5));

    auto violence = classify::aggregate_shares(scores, classify::Axis::Violence);
    REQUIRE(violence.pro == Approx(0.25));      // violent share
    REQUIRE(violence.neutral == Approx(0.75));  // non-violent share
    REQUIRE(violence.anti == 0.0);

    REQUIRE_THROWS_AS(classify::aggregate_shares({}, classify::Axis::Party), classify::EmptyInputError);
}

TEST_CASE("shares sum to one on randomized label sets") {
    std::mt19937_64 rng(20161108);
    std::uniform_int_distribution<int> label(-1, 1);
    std::uniform_int_distribution<int> flag(0, 1);
    std::uniform_int_distribution<int> size(1, 40);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<classify::AveragedScore> scores;
        const int n = size(rng);
        for (int i = 0; i < n; ++i) scores.push_back(score_with_modal(label(rng), label(rng), flag(rng)));
        for (auto axis : {classify::Axis::Party, classify::Axis::Sentiment, classify::Axis::Violence}) {
            auto b = classify::aggregate_shares(scores, axis);
            REQUIRE(std::abs(b.pro + b.neutral + b.anti - 1.0) < 1e-9);
            REQUIRE(b.pro >= 0.0);
            REQUIRE(b.neutral >= 0.0);
            REQUIRE(b.anti >= 0.0);
        }
    }
}

TEST_CASE("user_mean_distribution averages per author and bins over [-1,1]") {
    std::vector<std::pair<std::string, double>> comment_means = {
        {"bob", -1.0}, {"amy", 1.0}, {"amy", 0.0}};
    auto d = classify::user_mean_distribution(comment_means, 4);
    REQUIRE(d.user_means.size() == 2);
    REQUIRE(d.user_means[0].first == "amy");
    REQUIRE(d.user_means[0].second == Approx(0.5));
    REQUIRE(d.user_means[1].first == "bob");
    REQUIRE(d.user_means[1].second == Approx(-1.0));

    REQUIRE(d.bin_edges.size() == 5);
    REQUIRE(d.bin_edges.front() == Approx(-1.0));
    REQUIRE(d.bin_edges.back() == Approx(1.0));
    REQUIRE(d.counts == std::vector<std::size_t>{1, 0, 0, 1});

    // +1 exactly lands in the last bin rather than overflowing.
    auto top = classify::user_mean_distribution({{"zed", 1.0}}, 21);
    REQUIRE(top.counts.back() == 1);

    REQUIRE_THROWS_AS(classify::user_mean_distribution(comment_means, 0), Error);
}

TEST_CASE("bin_by_prompt_length groups scores by token estimate") {
    std::vector<double> means = {0.5, -0.5, 1.0};
    std::vector<int> tokens = {10, 260, 20};
    auto bins = classify::bin_by_prompt_length(means, tokens, 250);
    REQUIRE(bins.size() == 2);
    REQUIRE(bins[0].lo == 0);
    REQUIRE(bins[0].hi == 250);
    REQUIRE(bins[0].count == 2);
    REQUIRE(bins[0].has_mean);
    REQUIRE(bins[0].mean_party == Approx(0.75));
    REQUIRE(bins[1].lo == 250);
    REQUIRE(bins[1].count == 1);
    REQUIRE(bins[1].mean_party == Approx(-0.5));

    auto sparse = classify::bin_by_prompt_length({1.0, -1.0}, {0, 510}, 250);
    REQUIRE(sparse.size() == 3);
    REQUIRE(sparse[1].count == 0);
    REQUIRE_FALSE(sparse[1].has_mean);

    // permutation invariance
    std::vector<double> means_shuffled = {1.0, -0.5, 0.5};
    std::vector<int> tokens_shuffled = {20, 260, 10};
    auto bins2 = classify::bin_by_prompt_length(means_shuffled, tokens_shuffled, 250);
    REQUIRE(bins2[0].mean_party == bins[0].mean_party);
    REQUIRE(bins2[0].count == bins[0].count);

    REQUIRE_THROWS_AS(classify::bin_by_prompt_length({1.0}, {1, 2}, 250), Error);
    REQUIRE_THROWS_AS(classify::bin_by_prompt_length(means, tokens, 0), Error);
    REQUIRE(classify::bin_by_prompt_length({}, {}, 250).empty());
}

TEST_CASE("cross_tab counts pairs and normalizes rows") {
    std::vector<int> conditioner = {1, 1, 0, -1, 1};
    std::vector<int> outcome = {1, -1, 0, -1, 1};
    auto t = classify::cross_tab(conditioner, outcome);
    REQUIRE(t.counts[2][2] == 2);  // cond=1, out=1
    REQUIRE(t.counts[2][0] == 1);  // cond=1, out=-1
    REQUIRE(t.counts[1][1] == 1);  // cond=0, out=0
    REQUIRE(t.counts[0][0] == 1);  // cond=-1, out=-1
    REQUIRE(t.fractions[2][2] == Approx(2.0 / 3.0));
    REQUIRE_FALSE(t.row_empty[0]);
    REQUIRE_FALSE(t.row_empty[1]);
    REQUIRE_FALSE(t.row_empty[2]);

    auto one_row = classify::cross_tab({1, 1}, {0, 1});
    REQUIRE(one_row.row_empty[0]);
    REQUIRE(one_row.row_empty[1]);
    REQUIRE_FALSE(one_row.row_empty[2]);
    REQUIRE(one_row.fractions[0][0] == 0.0);

    REQUIRE_THROWS_AS(classify::cross_tab({1}, {1, 0}), Error);
    REQUIRE_THROWS_AS(classify::cross_tab({2}, {0}), Error);
}

TEST_CASE("cross_tab rows are stochastic on randomized inputs") {
    std::mt19937_64 rng(777);
    std::uniform_int_distribution<int> label(-1, 1);
    std::uniform_int_distribution<int> size(1, 60);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = size(rng);
        std::vector<int> cond, out;
        for (int i = 0; i < n; ++i) {
            cond.push_back(label(rng));
            out.push_back(label(rng));
        }
        auto t = classify::cross_tab(cond, out);
        for (std::size_t r = 0; r < 3; ++r) {
            double row_sum = t.fractions[r][0] + t.fractions[r][1] + t.fractions[r][2];
            if (t.row_empty[r]) {
                REQUIRE(row_sum == 0.0);
            } else {
                REQUIRE(std::abs(row_sum - 1.0) < 1e-9);
            }
        }
    }
}

TEST_CASE("averaged score json round trip") {
    auto s = score_with_modal(-1, 0, 1, 3);
    s.party_mean = -0.6666666666666666;
    s.n_failed_runs = 1;
    s.error = "one run stayed malformed";
    auto back = classify::score_from_json(classify::score_to_json(s));
    REQUIRE(back.party_mean == s.party_mean);
    REQUIRE(back.sentiment_mean == s.sentiment_mean);
    REQUIRE(back.violence_rate == s.violence_rate);
    REQUIRE(back.modal == s.modal);
    REQUIRE(back.n_runs == 3);
    REQUIRE(back.n_failed_runs == 1);
    REQUIRE(back.error == s.error);
}
