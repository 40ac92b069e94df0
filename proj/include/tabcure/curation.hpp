#pragma once

// Embedding-space curation: hyperparameter search for the GBT classifier
// (seeded random search over a fixed domain, warm-started from a reference
// configuration), distinguishability of two dataset populations via
// stratified out-of-fold classification, and selection of the top-k
// target-like synthetic tasks by predicted class probability.

#include <string>
#include <vector>

#include "tabcure/gbt.hpp"
#include "tabcure/io.hpp"

namespace tabcure::curation {

// Reference operating point for the embedding classifier; also trial 0 of
// every hyperparameter search.
inline gbt::GbtConfig warm_start_config() {
    gbt::GbtConfig c;
    c.n_estimators = 1700;
    c.learning_rate = 0.0158;
    c.max_depth = 7;
    c.subsample = 0.903;
    c.colsample_bytree = 0.622;
    c.min_child_weight = 3.84;
    c.reg_lambda = 3.12;
    c.gamma = 0.630;
    c.reg_alpha = 0.00406;
    return c;
}

struct HpoTrial {
    int trial = 0;
    gbt::GbtConfig config;
    double cv_balanced_accuracy = 0.0;
};

struct HpoResult {
    gbt::GbtConfig best;
    std::vector<HpoTrial> trials;
};

namespace detail {

inline gbt::GbtConfig sample_config(Rng& rng) {
    gbt::GbtConfig c;
    c.n_estimators = 300 + 100 * static_cast<int>(rng.range(0, 17));  // [300, 2000] step 100
    c.learning_rate = rng.log_uniform(0.01, 0.2);
    c.max_depth = static_cast<int>(rng.range(3, 10));
    c.subsample = rng.uniform(0.6, 1.0);
    c.colsample_bytree = rng.uniform(0.6, 1.0);
    c.min_child_weight = rng.log_uniform(1.0, 20.0);
    c.reg_lambda = rng.log_uniform(1e-3, 50.0);
    c.gamma = rng.uniform(0.0, 2.0);
    c.reg_alpha = rng.log_uniform(1e-4, 10.0);
    return c;
}

}  // namespace detail

// Stratified k-fold CV balanced accuracy of a config on (embeddings, labels).
inline double cv_balanced_accuracy(const MatD& embeddings, const std::vector<int>& labels,
                                   gbt::GbtConfig config, int folds, uint64_t seed) {
    const std::vector<int> fold_of = gbt::stratified_folds(labels, folds, seed);
    int n_classes = 0;
    for (int y : labels) n_classes = std::max(n_classes, y + 1);
    std::vector<int> y_true, y_pred;
    for (int fold = 0; fold < folds; ++fold) {
        std::vector<size_t> train_rows, test_rows;
        for (size_t i = 0; i < labels.size(); ++i)
            (fold_of[i] == fold ? test_rows : train_rows).push_back(i);
        MatD x_train(train_rows.size(), embeddings.cols());
        std::vector<int> l_train(train_rows.size());
        for (size_t i = 0; i < train_rows.size(); ++i) {
            for (size_t c = 0; c < embeddings.cols(); ++c) x_train(i, c) = embeddings(train_rows[i], c);
            l_train[i] = labels[train_rows[i]];
        }
        config.seed = mix_seed(seed, 0xCF01D + static_cast<uint64_t>(fold));
        const gbt::GbtEnsemble model = gbt::train_gbt(x_train, l_train, config);
        for (size_t row : test_rows) {
            std::vector<double> x(embeddings.cols());
            for (size_t c = 0; c < embeddings.cols(); ++c) x[c] = embeddings(row, c);
            const std::vector<double> p = gbt::predict_proba(model, x);
            y_true.push_back(labels[row]);
            y_pred.push_back(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
        }
    }
    std::vector<std::string> names(static_cast<size_t>(n_classes));
    for (int k = 0; k < n_classes; ++k) names[static_cast<size_t>(k)] = std::to_string(k);
    return gbt::make_confusion(y_true, y_pred, names).balanced_accuracy;
}

inline HpoResult hpo_search(const MatD& embeddings, const std::vector<int>& labels, int trials = 50,
                            int folds = 5, uint64_t seed = 0) {
    if (trials < 1) throw Error("hpo_search: trials must be >= 1");
    HpoResult result;
    double best_score = -1.0;
    for (int t = 0; t < trials; ++t) {
        gbt::GbtConfig config;
        if (t == 0) {
            config = warm_start_config();
        } else {
            Rng rng = Rng::stream(seed, 0x490 + static_cast<uint64_t>(t));
            config = detail::sample_config(rng);
        }
        const double score =
            cv_balanced_accuracy(embeddings, labels, config, folds, mix_seed(seed, 0xCF));
        result.trials.push_back({t, config, score});
        if (score > best_score) {
            best_score = score;
            result.best = config;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Distinguishability
// ---------------------------------------------------------------------------

// Out-of-fold two-class separability of embedding populations a (class 0)
// and b (class 1). Chance-level balanced accuracy means the populations are
// indistinguishable under this representation.
inline gbt::ConfusionMatrix distinguishability(const std::vector<std::vector<double>>& a,
                                               const std::vector<std::vector<double>>& b,
                                               int folds = 5, uint64_t seed = 0,
                                               const gbt::GbtConfig& config = warm_start_config(),
                                               const std::string& name_a = "a",
                                               const std::string& name_b = "b") {
    if (a.empty() || b.empty()) throw Error("distinguishability: both sets must be non-empty");
    const size_t width = a.front().size();
    MatD x(a.size() + b.size(), width);
    std::vector<int> labels(a.size() + b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].size() != width) throw Error("distinguishability: ragged embeddings");
        for (size_t c = 0; c < width; ++c) x(i, c) = a[i][c];
        labels[i] = 0;
    }
    for (size_t i = 0; i < b.size(); ++i) {
        if (b[i].size() != width) throw Error("distinguishability: ragged embeddings");
        for (size_t c = 0; c < width; ++c) x(a.size() + i, c) = b[i][c];
        labels[a.size() + i] = 1;
    }
    const std::vector<int> fold_of = gbt::stratified_folds(labels, folds, seed);
    std::vector<int> y_true, y_pred;
    for (int fold = 0; fold < folds; ++fold) {
        std::vector<size_t> train_rows, test_rows;
        for (size_t i = 0; i < labels.size(); ++i)
            (fold_of[i] == fold ? test_rows : train_rows).push_back(i);
        MatD x_train(train_rows.size(), width);
        std::vector<int> l_train(train_rows.size());
        for (size_t i = 0; i < train_rows.size(); ++i) {
            for (size_t c = 0; c < width; ++c) x_train(i, c) = x(train_rows[i], c);
            l_train[i] = labels[train_rows[i]];
        }
        gbt::GbtConfig fold_config = config;
        fold_config.seed = mix_seed(seed, 0xD157 + static_cast<uint64_t>(fold));
        const gbt::GbtEnsemble model = gbt::train_gbt(x_train, l_train, fold_config);
        for (size_t row : test_rows) {
            std::vector<double> xr(width);
            for (size_t c = 0; c < width; ++c) xr[c] = x(row, c);
            const std::vector<double> p = gbt::predict_proba(model, xr);
            y_true.push_back(labels[row]);
            y_pred.push_back(p[1] >= p[0] ? 1 : 0);
        }
    }
    return gbt::make_confusion(y_true, y_pred, {name_a, name_b});
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

struct ScoredTask {
    uint64_t task_id = 0;
    double engineering_probability = 0.0;
};

struct SelectionReport {
    std::vector<ScoredTask> scored;       // every non-training synthetic task
    std::vector<uint64_t> selected_ids;   // k highest probabilities
    size_t synthetic_train = 0;
    double target_train_fraction = 0.0;
    uint64_t seed = 0;
};

// Trains engineering(1) vs synthetic(0) on a seeded subset and scores the
// remaining synthetic tasks; the selected set is disjoint from the training
// synthetics by construction. Ties break toward the lower task id.
inline SelectionReport select_engineering_like(
    const std::vector<std::pair<uint64_t, std::vector<double>>>& synthetic,
    const std::vector<std::vector<double>>& target, size_t k = 200, size_t n_syn_train = 250,
    double target_train_fraction = 0.7, const gbt::GbtConfig& config = warm_start_config(),
    uint64_t seed = 0) {
    if (synthetic.size() <= n_syn_train)
        throw Error("select_engineering_like: need more synthetic tasks than n_syn_train");
    if (target.size() < 2) throw Error("select_engineering_like: need at least 2 target embeddings");
    if (k > synthetic.size() - n_syn_train)
        throw Error("select_engineering_like: k exceeds the scored pool");

    const size_t width = target.front().size();
    Rng rng = Rng::stream(seed, 0x5E1EC7);
    const std::vector<size_t> syn_train_idx = rng.sample_without_replacement(synthetic.size(), n_syn_train);
    const auto target_take = static_cast<size_t>(
        std::ceil(target_train_fraction * static_cast<double>(target.size())));
    const std::vector<size_t> target_train_idx =
        rng.sample_without_replacement(target.size(), std::max<size_t>(1, target_take));

    MatD x(n_syn_train + target_train_idx.size(), width);
    std::vector<int> labels(x.rows());
    for (size_t i = 0; i < syn_train_idx.size(); ++i) {
        const auto& emb = synthetic[syn_train_idx[i]].second;
        if (emb.size() != width) throw Error("select_engineering_like: ragged embeddings");
        for (size_t c = 0; c < width; ++c) x(i, c) = emb[c];
        labels[i] = 0;
    }
    for (size_t i = 0; i < target_train_idx.size(); ++i) {
        const auto& emb = target[target_train_idx[i]];
        if (emb.size() != width) throw Error("select_engineering_like: ragged embeddings");
        for (size_t c = 0; c < width; ++c) x(n_syn_train + i, c) = emb[c];
        labels[n_syn_train + i] = 1;
    }
    gbt::GbtConfig train_config = config;
    train_config.seed = mix_seed(seed, 0x6B7);
    const gbt::GbtEnsemble model = gbt::train_gbt(x, labels, train_config);

    std::vector<bool> in_train(synthetic.size(), false);
    for (size_t idx : syn_train_idx) in_train[idx] = true;

    SelectionReport report;
    report.synthetic_train = n_syn_train;
    report.target_train_fraction = target_train_fraction;
    report.seed = seed;
    for (size_t i = 0; i < synthetic.size(); ++i) {
        if (in_train[i]) continue;
        const std::vector<double> p = gbt::predict_proba(model, synthetic[i].second);
        report.scored.push_back({synthetic[i].first, p[1]});
    }
    std::vector<size_t> order(report.scored.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t lhs, size_t rhs) {
        const auto& l = report.scored[lhs];
        const auto& r = report.scored[rhs];
        if (l.engineering_probability != r.engineering_probability)
            return l.engineering_probability > r.engineering_probability;
        return l.task_id < r.task_id;
    });
    for (size_t i = 0; i < k; ++i) report.selected_ids.push_back(report.scored[order[i]].task_id);
    return report;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline io::json selection_to_json(const SelectionReport& report) {
    io::json j;
    j["selected_ids"] = report.selected_ids;
    j["train_composition"] = {{"synthetic_train", report.synthetic_train},
                              {"target_train_fraction", report.target_train_fraction}};
    j["seed"] = report.seed;
    io::json scored = io::json::array();
    for (const auto& s : report.scored)
        scored.push_back({{"task_id", s.task_id}, {"engineering_probability", s.engineering_probability}});
    j["scored"] = std::move(scored);
    return j;
}

inline SelectionReport selection_from_json(const io::json& j) {
    SelectionReport report;
    report.selected_ids = j.at("selected_ids").get<std::vector<uint64_t>>();
    report.synthetic_train = j.at("train_composition").at("synthetic_train").get<size_t>();
    report.target_train_fraction =
        j.at("train_composition").at("target_train_fraction").get<double>();
    report.seed = j.at("seed").get<uint64_t>();
    for (const auto& s : j.at("scored"))
        report.scored.push_back(
            {s.at("task_id").get<uint64_t>(), s.at("engineering_probability").get<double>()});
    return report;
}

// Reports both plain and balanced accuracy below the count matrix.
inline void confusion_to_csv(const gbt::ConfusionMatrix& cm, io::CsvWriter& csv) {
    std::vector<std::string> header{"class"};
    for (const auto& c : cm.classes) header.push_back("pred_" + c);
    csv.row(header);
    size_t total = 0, correct = 0;
    for (size_t r = 0; r < cm.classes.size(); ++r) {
        std::vector<std::string> row{cm.classes[r]};
        for (size_t c = 0; c < cm.classes.size(); ++c) {
            row.push_back(std::to_string(cm.counts[r][c]));
            total += cm.counts[r][c];
            if (r == c) correct += cm.counts[r][c];
        }
        csv.row(row);
    }
    csv.row({"accuracy",
             io::format_number(total ? static_cast<double>(correct) / static_cast<double>(total)
                                     : 0.0)});
    csv.row({"balanced_accuracy", io::format_number(cm.balanced_accuracy)});
}

inline void hpo_trace_to_csv(const HpoResult& result, io::CsvWriter& csv) {
    csv.row({"trial", "n_estimators", "learning_rate", "max_depth", "subsample", "colsample_bytree",
             "min_child_weight", "reg_lambda", "gamma", "reg_alpha", "cv_balanced_accuracy"});
    for (const auto& t : result.trials) {
        csv.row({std::to_string(t.trial), std::to_string(t.config.n_estimators),
                 io::format_number(t.config.learning_rate), std::to_string(t.config.max_depth),
                 io::format_number(t.config.subsample), io::format_number(t.config.colsample_bytree),
                 io::format_number(t.config.min_child_weight), io::format_number(t.config.reg_lambda),
                 io::format_number(t.config.gamma), io::format_number(t.config.reg_alpha),
                 io::format_number(t.cv_balanced_accuracy)});
    }
}

}  // namespace tabcure::curation
