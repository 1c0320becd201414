#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "redsim/common.hpp"

namespace redsim::detector {

class NonFiniteError : public Error { public: using Error::Error; };
class EmptyTestSetError : public Error { public: using Error::Error; };
class ClassTooSmallError : public Error { public: using Error::Error; };

using Vec = std::vector<double>;

struct Dataset {
    std::vector<Vec> X;
    std::vector<int> y;  // labels 0..n_classes-1
    int n_classes = 0;
    std::vector<std::string> class_names;  // optional, size n_classes when set
};

inline void validate_dataset(const Dataset& ds) {
    if (ds.X.size() != ds.y.size()) throw Error("dataset: |X| != |y|");
    if (ds.X.empty()) throw Error("dataset: empty");
    if (ds.n_classes < 2) throw Error("dataset: need at least 2 classes");
    const std::size_t d = ds.X[0].size();
    std::vector<std::size_t> per_class(static_cast<std::size_t>(ds.n_classes), 0);
    for (std::size_t i = 0; i < ds.X.size(); ++i) {
        if (ds.X[i].size() != d) throw Error("dataset: ragged feature rows");
        if (ds.y[i] < 0 || ds.y[i] >= ds.n_classes) throw Error("dataset: label out of range");
        ++per_class[static_cast<std::size_t>(ds.y[i])];
        for (double v : ds.X[i]) {
            if (!std::isfinite(v)) throw NonFiniteError("dataset contains a non-finite feature value");
        }
    }
    for (int c = 0; c < ds.n_classes; ++c) {
        if (per_class[static_cast<std::size_t>(c)] < 2) {
            throw ClassTooSmallError("class " + std::to_string(c) +
                                     " has fewer than 2 members; stratified splitting is impossible");
        }
    }
}

// --- model -------------------------------------------------------------------

struct SvmModel {
    // One weight vector per class over bias-augmented features: the last
    // entry of each is the bias term.
    std::vector<Vec> weights;
    double c = 1.0;
    int epochs_run = 0;
    bool converged = true;
};

inline double class_score(const SvmModel& m, const Vec& x, int cls) {
    const Vec& w = m.weights[static_cast<std::size_t>(cls)];
    double s = 0.0;
    for (std::size_t a = 0; a < x.size(); ++a) s += w[a] * x[a];
    s += w[x.size()];  // bias times the implicit augmented 1
    return s;
}

// Argmax over class scores; ties go to the smaller class index.
inline int predict(const SvmModel& m, const Vec& x) {
    int best = 0;
    double best_score = class_score(m, x, 0);
    for (int c = 1; c < static_cast<int>(m.weights.size()); ++c) {
        const double s = class_score(m, x, c);
        if (s > best_score) {
            best_score = s;
            best = c;
        }
    }
    return best;
}

// One-vs-rest linear SVM trained by dual coordinate descent on the
// L2-regularized L1-loss (hinge) objective, with the bias folded in as an
// always-1 feature. Deterministic: epoch order comes from the seed.
inline SvmModel train_linear_svm(const std::vector<Vec>& X, const std::vector<int>& y, int n_classes,
                                 double regularization_c = 1.0, int max_epochs = 1000, double tol = 1e-4,
                                 std::uint64_t seed = 0) {
    if (X.empty() || X.size() != y.size()) throw Error("train_linear_svm: bad input sizes");
    if (regularization_c <= 0.0) throw Error("train_linear_svm: regularization_C must be > 0");
    const std::size_t n = X.size();
    const std::size_t d = X[0].size();
    for (const auto& row : X) {
        if (row.size() != d) throw Error("train_linear_svm: ragged rows");
        for (double v : row) {
            if (!std::isfinite(v)) throw NonFiniteError("train_linear_svm: non-finite feature");
        }
    }

    // Squared norms of the bias-augmented rows.
    std::vector<double> qii(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 1.0;  // augmented constant feature
        for (double v : X[i]) s += v * v;
        qii[i] = s;
    }

    SvmModel model;
    model.c = regularization_c;
    model.weights.assign(static_cast<std::size_t>(n_classes), Vec(d + 1, 0.0));
    model.converged = true;

    std::vector<std::size_t> order(n);
    for (int cls = 0; cls < n_classes; ++cls) {
        Vec& w = model.weights[static_cast<std::size_t>(cls)];
        std::vector<double> alpha(n, 0.0);
        std::vector<double> sign(n);
        for (std::size_t i = 0; i < n; ++i) sign[i] = y[i] == cls ? 1.0 : -1.0;

        SplitMix rng(derive_seed(seed, 0x57A0 + static_cast<std::uint64_t>(cls)));
        int epoch = 0;
        bool class_converged = false;
        for (; epoch < max_epochs; ++epoch) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            rng.shuffle(order);
            double max_violation = 0.0;
            for (const std::size_t i : order) {
                double margin = w[d];
                for (std::size_t a = 0; a < d; ++a) margin += w[a] * X[i][a];
                const double grad = sign[i] * margin - 1.0;
                double projected = grad;
                if (alpha[i] <= 0.0) projected = std::min(grad, 0.0);
                if (alpha[i] >= regularization_c) projected = std::max(grad, 0.0);
                max_violation = std::max(max_violation, std::abs(projected));
                if (projected == 0.0) continue;
                const double old = alpha[i];
                alpha[i] = std::min(std::max(old - grad / qii[i], 0.0), regularization_c);
                const double delta = (alpha[i] - old) * sign[i];
                if (delta != 0.0) {
                    for (std::size_t a = 0; a < d; ++a) w[a] += delta * X[i][a];
                    w[d] += delta;
                }
            }
            if (max_violation < tol) {
                class_converged = true;
                break;
            }
        }
        model.epochs_run = std::max(model.epochs_run, class_converged ? epoch + 1 : epoch);
        if (!class_converged) model.converged = false;
    }
    return model;
}

// --- evaluation ----------------------------------------------------------------

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool precision_defined = false;  // some prediction of this class exists
    bool recall_defined = false;     // class present in y_test
    bool f1_defined = false;
    std::size_t support = 0;
};

struct Evaluation {
    std::vector<ClassMetrics> per_class;
    double accuracy = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

inline Evaluation evaluate(const SvmModel& model, const std::vector<Vec>& x_test, const std::vector<int>& y_test) {
    if (x_test.empty()) throw EmptyTestSetError("evaluate: empty test set");
    if (x_test.size() != y_test.size()) throw Error("evaluate: test sizes differ");
    const auto k = static_cast<std::size_t>(model.weights.size());
    Evaluation ev;
    ev.confusion.assign(k, std::vector<std::size_t>(k, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < x_test.size(); ++i) {
        const int pred = predict(model, x_test[i]);
        const int truth = y_test[i];
        if (truth < 0 || truth >= static_cast<int>(k)) throw Error("evaluate: label out of range");
        ++ev.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)];
        if (pred == truth) ++correct;
    }
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(x_test.size());
    ev.per_class.assign(k, ClassMetrics{});
    for (std::size_t c = 0; c < k; ++c) {
        ClassMetrics& m = ev.per_class[c];
        const std::size_t tp = ev.confusion[c][c];
        std::size_t fn = 0;
        std::size_t fp = 0;
        for (std::size_t o = 0; o < k; ++o) {
            if (o == c) continue;
            fn += ev.confusion[c][o];
            fp += ev.confusion[o][c];
        }
        m.support = tp + fn;
        if (tp + fp > 0) {
            m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
            m.precision_defined = true;
        }
        if (m.support > 0) {
            m.recall = static_cast<double>(tp) / static_cast<double>(m.support);
            m.recall_defined = true;
        }
        if (m.precision_defined && m.recall_defined && m.precision + m.recall > 0.0) {
            m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
            m.f1_defined = true;
        }
    }
    return ev;
}

// --- repeated stratified holdout ----------------------------------------------------

struct MetricSummary {
    double mean = 0.0;
    double std_dev = 0.0;  // population standard deviation across runs
    std::size_t n = 0;
};

struct DetectorReport {
    std::vector<MetricSummary> precision;  // per class
    std::vector<MetricSummary> recall;
    std::vector<MetricSummary> f1;
    MetricSummary accuracy;
    std::vector<std::vector<std::size_t>> confusion_sum;
    int runs = 0;
    double split_fraction = 0.8;
    double regularization_c = 1.0;
    bool l2_normalized = true;
    std::uint64_t seed = 0;
    std::vector<std::string> class_names;
};

namespace detail {

inline MetricSummary summarize(const std::vector<double>& xs) {
    MetricSummary s;
    s.n = xs.size();
    if (xs.empty()) return s;
    double sum = 0.0;
    for (double x : xs) sum += x;
    s.mean = sum / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std_dev = std::sqrt(ss / static_cast<double>(xs.size()));
    return s;
}

inline Vec l2_normalized_row(const Vec& row) {
    double n2 = 0.0;
    for (double v : row) n2 += v * v;
    if (n2 == 0.0) return row;
    Vec out(row.size());
    const double inv = 1.0 / std::sqrt(n2);
    for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] * inv;
    return out;
}

}  // namespace detail

struct ExperimentOptions {
    double split_fraction = 0.8;
    int runs = 10;
    std::uint64_t seed = 0;
    double regularization_c = 1.0;
    int max_epochs = 1000;
    double tol = 1e-4;
    bool l2_normalize = true;
};

/// Repeated stratified holdout: each run draws its own seeded split, trains on
// the `split_fraction` side, evaluates on the rest. Per-run metrics are
// aggregated as mean and population standard deviation; confusion matrices
// are summed.
inline DetectorReport run_experiment(const Dataset& ds, const ExperimentOptions& opts = {}) {
    validate_dataset(ds);
    if (opts.split_fraction <= 0.0 || opts.split_fraction >= 1.0) {
        throw Error("run_experiment: split_fraction must be inside (0,1)");
    }
    if (opts.runs < 1) throw Error("run_experiment: runs must be >= 1");

    std::vector<Vec> rows;
    rows.reserve(ds.X.size());
    if (opts.l2_normalize) {
        for (const auto& r : ds.X) rows.push_back(detail::l2_normalized_row(r));
    } else {
        rows = ds.X;
    }

    std::vector<std::vector<std::size_t>> class_members(static_cast<std::size_t>(ds.n_classes));
    for (std::size_t i = 0; i < ds.y.size(); ++i) {
        class_members[static_cast<std::size_t>(ds.y[i])].push_back(i);
    }

    const auto k = static_cast<std::size_t>(ds.n_classes);
    DetectorReport report;
    report.runs = opts.runs;
    report.split_fraction = opts.split_fraction;
    report.regularization_c = opts.regularization_c;
    report.l2_normalized = opts.l2_normalize;
    report.seed = opts.seed;
    report.class_names = ds.class_names;
    report.confusion_sum.assign(k, std::vector<std::size_t>(k, 0));

    std::vector<double> accuracies;
    std::vector<std::vector<double>> precisions(k), recalls(k), f1s(k);

    for (int run = 0; run < opts.runs; ++run) {
        const std::uint64_t run_seed = derive_seed(opts.seed, static_cast<std::uint64_t>(run));
        SplitMix rng(derive_seed(run_seed, 0x5B17));
        std::vector<std::size_t> train_idx, test_idx;
        for (auto members : class_members) {
            rng.shuffle(members);
            auto n_train = static_cast<std::size_t>(std::floor(opts.split_fraction * static_cast<double>(members.size())));
            n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
            for (std::size_t i = 0; i < members.size(); ++i) {
                (i < n_train ? train_idx : test_idx).push_back(members[i]);
            }
        }
        std::sort(train_idx.begin(), train_idx.end());
        std::sort(test_idx.begin(), test_idx.end());

        std::vector<Vec> x_train, x_test;
        std::vector<int> y_train, y_test;
        for (std::size_t i : train_idx) {
            x_train.push_back(rows[i]);
            y_train.push_back(ds.y[i]);
        }
        for (std::size_t i : test_idx) {
            x_test.push_back(rows[i]);
            y_test.push_back(ds.y[i]);
        }

        const SvmModel model = train_linear_svm(x_train, y_train, ds.n_classes, opts.regularization_c,
                                                opts.max_epochs, opts.tol, derive_seed(run_seed, 0x7318));
        const Evaluation ev = evaluate(model, x_test, y_test);
        accuracies.push_back(ev.accuracy);
        for (std::size_t c = 0; c < k; ++c) {
            if (ev.per_class[c].precision_defined) precisions[c].push_back(ev.per_class[c].precision);
            if (ev.per_class[c].recall_defined) recalls[c].push_back(ev.per_class[c].recall);
            if (ev.per_class[c].f1_defined) f1s[c].push_back(ev.per_class[c].f1);
            for (std::size_t o = 0; o < k; ++o) report.confusion_sum[c][o] += ev.confusion[c][o];
        }
    }

    report.accuracy = detail::summarize(accuracies);
    for (std::size_t c = 0; c < k; ++c) {
        report.precision.push_back(detail::summarize(precisions[c]));
        report.recall.push_back(detail::summarize(recalls[c]));
        report.f1.push_back(detail::summarize(f1s[c]));
    }
    return report;
}

// --- serialization --------------------------------------------------------------------

inline nlohmann::json report_to_json(const DetectorReport& r) {
    nlohmann::json j;
    j["runs"] = r.runs;
    j["split_fraction"] = r.split_fraction;
    j["regularization_c"] = r.regularization_c;
    j["l2_normalized"] = r.l2_normalized;
    j["seed"] = r.seed;
    j["accuracy"] = {{"mean", r.accuracy.mean}, {"std", r.accuracy.std_dev}, {"n", r.accuracy.n}};
    nlohmann::json per_class = nlohmann::json::array();
    for (std::size_t c = 0; c < r.f1.size(); ++c) {
        nlohmann::json e;
        e["class"] = c < r.class_names.size() ? r.class_names[c] : std::to_string(c);
        e["precision"] = {{"mean", r.precision[c].mean}, {"std", r.precision[c].std_dev}, {"n", r.precision[c].n}};
        e["recall"] = {{"mean", r.recall[c].mean}, {"std", r.recall[c].std_dev}, {"n", r.recall[c].n}};
        e["f1"] = {{"mean", r.f1[c].mean}, {"std", r.f1[c].std_dev}, {"n", r.f1[c].n}};
        per_class.push_back(e);
    }
    j["per_class"] = per_class;
    j["confusion_sum"] = r.confusion_sum;
    return j;
}

}  // namespace redsim::detector
