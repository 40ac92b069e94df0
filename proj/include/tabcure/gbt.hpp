#pragma once

// Gradient-boosted decision trees over dense features, XGBoost-style:
// second-order (gradient + hessian) softmax objective, histogram split
// finding on quantile bins, depth-wise growth, row/column subsampling,
// L1/L2-regularized leaf values with a gamma split penalty and a hessian
// floor per child. Also hosts the classification metrics used by the
// curation module (confusion matrix, balanced accuracy, stratified folds).

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "tabcure/matrix.hpp"

namespace tabcure::gbt {

constexpr int kHistogramBins = 256;

struct GbtConfig {
    int n_estimators = 1700;
    double learning_rate = 0.0158;
    int max_depth = 7;
    double subsample = 0.903;
    double colsample_bytree = 0.622;
    double min_child_weight = 3.84;
    double reg_lambda = 3.12;
    double gamma = 0.630;
    double reg_alpha = 0.00406;
    uint64_t seed = 0;

    void validate() const {
        if (n_estimators < 0) throw ConfigError("n_estimators must be >= 0");
        if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
        if (max_depth < 1) throw ConfigError("max_depth must be >= 1");
        if (subsample <= 0.0 || subsample > 1.0) throw ConfigError("subsample must be in (0,1]");
        if (colsample_bytree <= 0.0 || colsample_bytree > 1.0)
            throw ConfigError("colsample_bytree must be in (0,1]");
        if (min_child_weight <= 0.0) throw ConfigError("min_child_weight must be positive");
        if (reg_lambda < 0.0 || gamma < 0.0 || reg_alpha < 0.0)
            throw ConfigError("regularization terms must be nonnegative");
    }
};

struct TreeNode {
    int feature = -1;       // -1 => leaf
    double threshold = 0.0; // go left when x[feature] <= threshold
    int left = -1;
    int right = -1;
    double leaf_value = 0.0;
};

struct Tree {
    std::vector<TreeNode> nodes;

    double predict(const double* x) const {
        int idx = 0;
        while (nodes[static_cast<size_t>(idx)].feature >= 0) {
            const TreeNode& nd = nodes[static_cast<size_t>(idx)];
            idx = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
        }
        return nodes[static_cast<size_t>(idx)].leaf_value;
    }

    int depth() const { return depth_of(0); }

private:
    int depth_of(int idx) const {
        const TreeNode& nd = nodes[static_cast<size_t>(idx)];
        if (nd.feature < 0) return 0;
        return 1 + std::max(depth_of(nd.left), depth_of(nd.right));
    }
};

struct GbtEnsemble {
    int n_classes = 0;
    size_t feature_width = 0;
    double base_score = 0.0;  // uniform class margins
    GbtConfig config;
    std::vector<std::vector<Tree>> rounds;  // [round][class]

    std::vector<double> predict_margin(const double* x) const {
        std::vector<double> margin(static_cast<size_t>(n_classes), base_score);
        for (const auto& round : rounds)
            for (int k = 0; k < n_classes; ++k)
                margin[static_cast<size_t>(k)] += round[static_cast<size_t>(k)].predict(x);
        return margin;
    }
};

namespace detail {

inline void softmax_inplace(std::vector<double>& v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : v) x /= sum;
}

// L1 soft threshold used in both split gain and leaf values.
inline double threshold_l1(double g, double alpha) {
    if (g > alpha) return g - alpha;
    if (g < -alpha) return g + alpha;
    return 0.0;
}

inline double score(double g, double h, double lambda, double alpha) {
    const double t = threshold_l1(g, alpha);
    return t * t / (h + lambda);
}

struct FeatureBins {
    std::vector<double> cuts;  // ascending; bin(x) = first cut >= x, else cuts.size()
    int bin_count() const { return static_cast<int>(cuts.size()) + 1; }

    int bin(double x) const {
        return static_cast<int>(std::lower_bound(cuts.begin(), cuts.end(), x) - cuts.begin());
    }
};

inline FeatureBins build_bins(const MatD& x, size_t col) {
    std::vector<double> values(x.rows());
    for (size_t r = 0; r < x.rows(); ++r) values[r] = x(r, col);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    FeatureBins fb;
    const size_t d = values.size();
    if (d <= 1) return fb;  // constant column: single bin, never splittable
    if (d <= kHistogramBins) {
        fb.cuts.resize(d - 1);
        for (size_t i = 0; i + 1 < d; ++i) fb.cuts[i] = 0.5 * (values[i] + values[i + 1]);
        return fb;
    }
    fb.cuts.reserve(kHistogramBins - 1);
    for (int j = 1; j < kHistogramBins; ++j) {
        const size_t pos = static_cast<size_t>(j) * d / kHistogramBins;
        const double cut = 0.5 * (values[pos - 1] + values[pos]);
        if (fb.cuts.empty() || cut > fb.cuts.back()) fb.cuts.push_back(cut);
    }
    return fb;
}

struct HistEntry {
    double g = 0.0;
    double h = 0.0;
    uint32_t count = 0;
};

struct TreeBuilder {
    const Mat<uint8_t>& binned;
    const std::vector<FeatureBins>& bins;
    const std::vector<double>& grad;
    const std::vector<double>& hess;
    const std::vector<int>& features;  // column subset for this tree
    const GbtConfig& cfg;

    Tree tree;
    std::vector<uint32_t> rows;  // partitioned in place per node

    Tree build(std::vector<uint32_t> initial_rows) {
        rows = std::move(initial_rows);
        tree.nodes.clear();
        grow(0, rows.size(), 0);
        return std::move(tree);
    }

private:
    int grow(size_t begin, size_t end, int depth) {
        double g_sum = 0.0, h_sum = 0.0;
        for (size_t i = begin; i < end; ++i) {
            g_sum += grad[rows[i]];
            h_sum += hess[rows[i]];
        }
        const int node_idx = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();

        int best_feature = -1, best_bin = -1;
        double best_gain = 0.0;
        if (depth < cfg.max_depth && end - begin >= 2) {
            const double parent_score = score(g_sum, h_sum, cfg.reg_lambda, cfg.reg_alpha);
            std::vector<HistEntry> hist;
            for (int f : features) {
                const FeatureBins& fb = bins[static_cast<size_t>(f)];
                const int nb = fb.bin_count();
                if (nb < 2) continue;
                hist.assign(static_cast<size_t>(nb), HistEntry{});
                for (size_t i = begin; i < end; ++i) {
                    const uint32_t r = rows[i];
                    HistEntry& e = hist[binned(r, static_cast<size_t>(f))];
                    e.g += grad[r];
                    e.h += hess[r];
                    e.count += 1;
                }
                double gl = 0.0, hl = 0.0;
                uint32_t cl = 0;
                for (int b = 0; b + 1 < nb; ++b) {
                    gl += hist[static_cast<size_t>(b)].g;
                    hl += hist[static_cast<size_t>(b)].h;
                    cl += hist[static_cast<size_t>(b)].count;
                    if (cl == 0 || cl == end - begin) continue;
                    const double hr = h_sum - hl;
                    if (hl < cfg.min_child_weight || hr < cfg.min_child_weight) continue;
                    const double gain = 0.5 * (score(gl, hl, cfg.reg_lambda, cfg.reg_alpha) +
                                               score(g_sum - gl, hr, cfg.reg_lambda, cfg.reg_alpha) -
                                               parent_score) -
                                        cfg.gamma;
                    if (gain > best_gain) {
                        best_gain = gain;
                        best_feature = f;
                        best_bin = b;
                    }
                }
            }
        }

        if (best_feature < 0) {
            tree.nodes[static_cast<size_t>(node_idx)].leaf_value =
                -cfg.learning_rate * threshold_l1(g_sum, cfg.reg_alpha) / (h_sum + cfg.reg_lambda);
            return node_idx;
        }

        // Partition rows: bins <= best_bin go left.
        size_t mid = begin;
        for (size_t i = begin; i < end; ++i) {
            if (binned(rows[i], static_cast<size_t>(best_feature)) <= best_bin) {
                std::swap(rows[i], rows[mid]);
                ++mid;
            }
        }
        const int left = grow(begin, mid, depth + 1);
        const int right = grow(mid, end, depth + 1);
        TreeNode& nd = tree.nodes[static_cast<size_t>(node_idx)];
        nd.feature = best_feature;
        nd.threshold = bins[static_cast<size_t>(best_feature)].cuts[static_cast<size_t>(best_bin)];
        nd.left = left;
        nd.right = right;
        return node_idx;
    }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

inline GbtEnsemble train_gbt(const MatD& features, const std::vector<int>& labels,
                             const GbtConfig& config) {
    config.validate();
    const size_t n = features.rows();
    const size_t width = features.cols();
    if (n == 0 || labels.size() != n) throw Error("train_gbt: rows/labels mismatch");
    for (size_t i = 0; i < features.size(); ++i)
        if (!std::isfinite(features.data()[i])) throw Error("train_gbt: non-finite feature");

    int n_classes = 0;
    for (int y : labels) {
        if (y < 0) throw Error("train_gbt: negative label");
        n_classes = std::max(n_classes, y + 1);
    }
    {
        std::vector<uint32_t> counts(static_cast<size_t>(n_classes), 0);
        for (int y : labels) counts[static_cast<size_t>(y)]++;
        int present = 0;
        for (uint32_t c : counts) present += c > 0 ? 1 : 0;
        if (present < 2) throw Error("train_gbt: need at least 2 classes");
    }

    GbtEnsemble model;
    model.n_classes = n_classes;
    model.feature_width = width;
    model.config = config;

    std::vector<detail::FeatureBins> bins(width);
    Mat<uint8_t> binned(n, width);
    for (size_t c = 0; c < width; ++c) {
        bins[c] = detail::build_bins(features, c);
        for (size_t r = 0; r < n; ++r)
            binned(r, c) = static_cast<uint8_t>(bins[c].bin(features(r, c)));
    }

    MatD margins(n, static_cast<size_t>(n_classes), model.base_score);
    std::vector<double> grad(n), hess(n), prob(static_cast<size_t>(n_classes));
    const size_t col_take =
        std::max<size_t>(1, static_cast<size_t>(std::llround(config.colsample_bytree *
                                                             static_cast<double>(width))));

    MatD probs(n, static_cast<size_t>(n_classes));
    for (int round = 0; round < config.n_estimators; ++round) {
        for (size_t r = 0; r < n; ++r) {
            for (int k = 0; k < n_classes; ++k) prob[static_cast<size_t>(k)] = margins(r, static_cast<size_t>(k));
            detail::softmax_inplace(prob);
            for (int k = 0; k < n_classes; ++k) probs(r, static_cast<size_t>(k)) = prob[static_cast<size_t>(k)];
        }
        std::vector<Tree> round_trees;
        round_trees.reserve(static_cast<size_t>(n_classes));
        for (int k = 0; k < n_classes; ++k) {
            Rng rng = Rng::stream(config.seed, static_cast<uint64_t>(round) * static_cast<uint64_t>(n_classes) +
                                                   static_cast<uint64_t>(k));
            for (size_t r = 0; r < n; ++r) {
                const double p = probs(r, static_cast<size_t>(k));
                grad[r] = p - (labels[r] == k ? 1.0 : 0.0);
                hess[r] = std::max(p * (1.0 - p), 1e-16);
            }
            std::vector<uint32_t> sampled;
            sampled.reserve(n);
            if (config.subsample >= 1.0) {
                for (size_t r = 0; r < n; ++r) sampled.push_back(static_cast<uint32_t>(r));
            } else {
                for (size_t r = 0; r < n; ++r)
                    if (rng.uniform() < config.subsample) sampled.push_back(static_cast<uint32_t>(r));
                if (sampled.empty()) sampled.push_back(static_cast<uint32_t>(rng.below(n)));
            }
            std::vector<int> feature_subset;
            if (col_take >= width) {
                feature_subset.resize(width);
                std::iota(feature_subset.begin(), feature_subset.end(), 0);
            } else {
                const auto pick = rng.sample_without_replacement(width, col_take);
                feature_subset.assign(pick.begin(), pick.end());
            }
            detail::TreeBuilder builder{binned, bins, grad, hess, feature_subset, config, {}, {}};
            round_trees.push_back(builder.build(std::move(sampled)));
        }
        for (size_t r = 0; r < n; ++r)
            for (int k = 0; k < n_classes; ++k)
                margins(r, static_cast<size_t>(k)) +=
                    round_trees[static_cast<size_t>(k)].predict(features.row(r));
        model.rounds.push_back(std::move(round_trees));
    }
    return model;
}

inline std::vector<double> predict_proba(const GbtEnsemble& model, const std::vector<double>& x) {
    if (x.size() != model.feature_width)
        throw Error("predict_proba: feature width mismatch (" + std::to_string(x.size()) + " vs " +
                    std::to_string(model.feature_width) + ")");
    std::vector<double> margin = model.predict_margin(x.data());
    detail::softmax_inplace(margin);
    return margin;
}

inline std::vector<std::vector<double>> predict_proba_rows(const GbtEnsemble& model, const MatD& x) {
    if (x.cols() != model.feature_width) throw Error("predict_proba: feature width mismatch");
    std::vector<std::vector<double>> out(x.rows());
    for (size_t r = 0; r < x.rows(); ++r) {
        std::vector<double> margin = model.predict_margin(x.row(r));
        detail::softmax_inplace(margin);
        out[r] = std::move(margin);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics and folds
// ---------------------------------------------------------------------------

struct ConfusionMatrix {
    std::vector<std::string> classes;
    std::vector<std::vector<size_t>> counts;  // counts[true][pred]
    double balanced_accuracy = 0.0;
};

inline ConfusionMatrix make_confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                                      std::vector<std::string> class_names) {
    const size_t k = class_names.size();
    ConfusionMatrix cm;
    cm.classes = std::move(class_names);
    cm.counts.assign(k, std::vector<size_t>(k, 0));
    for (size_t i = 0; i < y_true.size(); ++i)
        cm.counts[static_cast<size_t>(y_true[i])][static_cast<size_t>(y_pred[i])]++;
    double recall_sum = 0.0;
    size_t present = 0;
    for (size_t c = 0; c < k; ++c) {
        size_t row_total = 0;
        for (size_t p = 0; p < k; ++p) row_total += cm.counts[c][p];
        if (row_total == 0) continue;
        recall_sum += static_cast<double>(cm.counts[c][c]) / static_cast<double>(row_total);
        ++present;
    }
    cm.balanced_accuracy = present ? recall_sum / static_cast<double>(present) : 0.0;
    return cm;
}

// Seeded round-robin assignment within each class; every fold gets within
// one member per class of every other fold.
inline std::vector<int> stratified_folds(const std::vector<int>& labels, int folds, uint64_t seed) {
    if (folds < 2) throw Error("stratified_folds: folds must be >= 2");
    int n_classes = 0;
    for (int y : labels) n_classes = std::max(n_classes, y + 1);
    std::vector<std::vector<size_t>> by_class(static_cast<size_t>(n_classes));
    for (size_t i = 0; i < labels.size(); ++i) by_class[static_cast<size_t>(labels[i])].push_back(i);
    std::vector<int> assignment(labels.size(), -1);
    for (size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        if (members.empty()) continue;
        if (members.size() < static_cast<size_t>(folds))
            throw Error("class " + std::to_string(c) + " smaller than fold count");
        Rng rng = Rng::stream(seed, 0xF01D + c);
        rng.shuffle(members);
        for (size_t i = 0; i < members.size(); ++i)
            assignment[members[i]] = static_cast<int>(i % static_cast<size_t>(folds));
    }
    return assignment;
}

}  // namespace tabcure::gbt
