#pragma once

// Model-agnostic evaluation: learning-curve sweeps with k-fold CV inside the
// 70% training partition, piecewise-linear inversion of a performance curve
// ("how much data to reach this error"), additive/multiplicative data
// efficiency, win/loss summaries, and the in-repo reference regressors
// (k-NN, ridge, depth-limited tree).

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tabcure/io.hpp"
#include "tabcure/tabular.hpp"

namespace tabcure::evalharness {

// Behavioral contract: fit_or_condition then predict; stateless across
// datasets (use clone() for an independent instance per fold/thread);
// deterministic for a fixed seed.
class RegressorAdapter {
public:
    virtual ~RegressorAdapter() = default;
    virtual std::string id() const = 0;
    virtual std::unique_ptr<RegressorAdapter> clone() const = 0;
    virtual void fit_or_condition(const MatD& x, std::span<const double> y, uint64_t seed) = 0;
    virtual std::vector<double> predict(const MatD& x) const = 0;
};

struct CurvePoint {
    size_t train_size = 0;
    double mse_mean = 0.0;
    double mse_std = 0.0;
    int folds = 0;
    double fraction = 0.0;
};

struct PerformanceCurve {
    std::vector<CurvePoint> points;  // train_size strictly increasing
    std::string dataset;
    std::string model;
};

struct EfficiencyResult {
    double d_ref = 0.0;
    double d_new = 0.0;
    double e_add = 0.0;   // d_ref - d_new
    double e_mult = 1.0;  // d_ref / d_new
    bool extrapolated = false;
    double target_error = 0.0;
};

inline double mse(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw Error("mse: length mismatch");
    double s = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        s += d * d;
    }
    return pred.empty() ? 0.0 : s / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// sweep_curve
// ---------------------------------------------------------------------------

inline std::vector<double> default_fractions() {
    return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
}

namespace detail {

inline MatD gather_rows(const MatD& src, std::span<const size_t> rows) {
    MatD out(rows.size(), src.cols());
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t c = 0; c < src.cols(); ++c) out(i, c) = src(rows[i], c);
    return out;
}

inline std::vector<double> gather(const std::vector<double>& src, std::span<const size_t> rows) {
    std::vector<double> out(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) out[i] = src[rows[i]];
    return out;
}

}  // namespace detail

inline PerformanceCurve sweep_curve(const RegressorAdapter& adapter, const Dataset& dataset,
                                    const SplitIndex& split,
                                    const std::vector<double>& fractions = default_fractions(),
                                    int folds = 10, uint64_t seed = 0, int jobs = 1) {
    if (dataset.meta.duplicated_for_embedding)
        throw Error("sweep_curve: dataset was duplicated for embedding");
    if (folds < 2) throw Error("sweep_curve: folds must be >= 2");
    const std::vector<size_t>& train_partition = split.train_rows;
    const size_t n = train_partition.size();
    if (n < static_cast<size_t>(folds)) throw Error("sweep_curve: too few training rows");

    // Seeded fold assignment over the training partition only; the test
    // partition is never touched here.
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    {
        Rng rng = Rng::stream(seed, 0xF01D5);
        rng.shuffle(order);
    }
    std::vector<int> fold_of(n);
    for (size_t i = 0; i < n; ++i) fold_of[order[i]] = static_cast<int>(i % static_cast<size_t>(folds));

    struct FoldResult {
        std::vector<double> mse_per_fraction;
    };
    std::vector<FoldResult> results(static_cast<size_t>(folds));

    parallel_for(static_cast<size_t>(folds), jobs, [&](size_t fold) {
        std::vector<size_t> fit_pool, eval_rows;
        for (size_t i = 0; i < n; ++i) {
            if (fold_of[i] == static_cast<int>(fold))
                eval_rows.push_back(train_partition[i]);
            else
                fit_pool.push_back(train_partition[i]);
        }
        const MatD x_eval = detail::gather_rows(dataset.features, eval_rows);
        const std::vector<double> y_eval = detail::gather(dataset.target, eval_rows);

        FoldResult& fr = results[fold];
        fr.mse_per_fraction.resize(fractions.size());
        for (size_t fi = 0; fi < fractions.size(); ++fi) {
            const double f = fractions[fi];
            const auto take = static_cast<size_t>(
                std::llround(f * static_cast<double>(fit_pool.size())));
            if (take < 2)
                throw Error("sweep_curve: fraction " + io::format_number(f) +
                            " yields fewer than 2 training rows");
            Rng rng = Rng::stream(seed, 0xF2AC + fold * 1000 + fi);
            const auto pick = rng.sample_without_replacement(fit_pool.size(), take);
            std::vector<size_t> fit_rows(take);
            for (size_t i = 0; i < take; ++i) fit_rows[i] = fit_pool[pick[i]];
            const MatD x_fit = detail::gather_rows(dataset.features, fit_rows);
            const std::vector<double> y_fit = detail::gather(dataset.target, fit_rows);

            auto inst = adapter.clone();
            inst->fit_or_condition(x_fit, y_fit, mix_seed(seed, 0xF17 + fold));
            fr.mse_per_fraction[fi] = mse(inst->predict(x_eval), y_eval);
        }
    });

    PerformanceCurve curve;
    curve.dataset = dataset.meta.name;
    curve.model = adapter.id();
    const double nominal_pool =
        static_cast<double>(n) * static_cast<double>(folds - 1) / static_cast<double>(folds);
    for (size_t fi = 0; fi < fractions.size(); ++fi) {
        double sum = 0.0;
        for (int fold = 0; fold < folds; ++fold) sum += results[static_cast<size_t>(fold)].mse_per_fraction[fi];
        const double mean = sum / folds;
        double sq = 0.0;
        for (int fold = 0; fold < folds; ++fold) {
            const double d = results[static_cast<size_t>(fold)].mse_per_fraction[fi] - mean;
            sq += d * d;
        }
        const double sd = folds > 1 ? std::sqrt(sq / (folds - 1)) : 0.0;
        CurvePoint pt;
        pt.train_size = static_cast<size_t>(std::llround(fractions[fi] * nominal_pool));
        pt.mse_mean = mean;
        pt.mse_std = sd;
        pt.folds = folds;
        pt.fraction = fractions[fi];
        curve.points.push_back(pt);
    }
    return curve;
}

// ---------------------------------------------------------------------------
// required_data / data_efficiency
// ---------------------------------------------------------------------------

constexpr double kExtrapolationCap = 10.0;  // times the largest observed size

struct RequiredData {
    double d = 0.0;
    bool extrapolated = false;
};

inline RequiredData required_data(const PerformanceCurve& curve, double target_error) {
    const auto& pts = curve.points;
    if (pts.size() < 2) throw Error("required_data: need at least 2 curve points");
    if (pts.front().mse_mean <= target_error)
        return {static_cast<double>(pts.front().train_size), false};
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
        const double e0 = pts[i].mse_mean, e1 = pts[i + 1].mse_mean;
        const auto s0 = static_cast<double>(pts[i].train_size);
        const auto s1 = static_cast<double>(pts[i + 1].train_size);
        if (e1 <= target_error) {
            // first downward crossing of the target within this segment
            const double t = (e0 - target_error) / (e0 - e1);
            return {s0 + t * (s1 - s0), false};
        }
    }
    // Never reached: extrapolate the final segment linearly, clipped.
    const size_t m = pts.size();
    const double e0 = pts[m - 2].mse_mean, e1 = pts[m - 1].mse_mean;
    const auto s0 = static_cast<double>(pts[m - 2].train_size);
    const auto s1 = static_cast<double>(pts[m - 1].train_size);
    const double cap = kExtrapolationCap * s1;
    const double slope = (e1 - e0) / (s1 - s0);
    if (slope >= 0.0) return {cap, true};  // degenerate: never crosses
    const double d = s1 + (target_error - e1) / slope;
    return {std::min(d, cap), true};
}

inline double error_at(const PerformanceCurve& curve, double size) {
    const auto& pts = curve.points;
    if (pts.empty()) throw Error("error_at: empty curve");
    if (size <= static_cast<double>(pts.front().train_size)) return pts.front().mse_mean;
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
        const auto s0 = static_cast<double>(pts[i].train_size);
        const auto s1 = static_cast<double>(pts[i + 1].train_size);
        if (size <= s1) {
            const double t = (size - s0) / (s1 - s0);
            return pts[i].mse_mean + t * (pts[i + 1].mse_mean - pts[i].mse_mean);
        }
    }
    return pts.back().mse_mean;
}

inline const CurvePoint& point_at_fraction(const PerformanceCurve& curve, double fraction) {
    for (const auto& pt : curve.points)
        if (std::fabs(pt.fraction - fraction) < 1e-12) return pt;
    throw Error("curve has no point at fraction " + io::format_number(fraction));
}

inline EfficiencyResult data_efficiency(const PerformanceCurve& ref_curve,
                                        const PerformanceCurve& new_curve,
                                        double ref_fraction = 0.9) {
    const CurvePoint& anchor = point_at_fraction(ref_curve, ref_fraction);
    const auto d_ref = static_cast<double>(anchor.train_size);
    const double target = anchor.mse_mean;

    EfficiencyResult res;
    const RequiredData needed = required_data(new_curve, target);
    if (!needed.extrapolated) {
        res.d_ref = d_ref;
        res.d_new = needed.d;
        res.target_error = target;
        res.extrapolated = false;
    } else {
        // The new model never reaches the reference target in its observed
        // range; anchor on the new model's error at d_ref instead and ask how
        // much data the reference model would need to match it.
        const double new_error_at_ref = error_at(new_curve, d_ref);
        const RequiredData ref_needed = required_data(ref_curve, new_error_at_ref);
        res.d_ref = ref_needed.d;
        res.d_new = d_ref;
        res.target_error = new_error_at_ref;
        res.extrapolated = true;
    }
    res.e_add = res.d_ref - res.d_new;
    res.e_mult = res.d_ref / res.d_new;
    return res;
}

// ---------------------------------------------------------------------------
// Win matrix
// ---------------------------------------------------------------------------

struct WinEntry {
    std::string baseline;
    size_t wins = 0;
    size_t total = 0;
    double fraction = 0.0;
};

struct TestResult {
    std::string dataset;
    std::string model;
    double test_mse = 0.0;
};

// Candidate wins where its test MSE is strictly lower than the baseline's.
inline std::vector<WinEntry> win_matrix(const std::vector<TestResult>& results,
                                        const std::string& candidate) {
    std::map<std::string, std::map<std::string, double>> by_dataset;  // dataset -> model -> mse
    std::set<std::string> models;
    for (const auto& r : results) {
        by_dataset[r.dataset][r.model] = r.test_mse;
        models.insert(r.model);
    }
    if (by_dataset.empty()) throw Error("win_matrix: no results");
    std::vector<WinEntry> entries;
    for (const auto& baseline : models) {
        if (baseline == candidate) continue;
        WinEntry e;
        e.baseline = baseline;
        for (const auto& [dataset, scores] : by_dataset) {
            auto ci = scores.find(candidate);
            auto bi = scores.find(baseline);
            if (ci == scores.end() || bi == scores.end()) continue;
            e.total += 1;
            if (ci->second < bi->second) e.wins += 1;
        }
        e.fraction = e.total ? static_cast<double>(e.wins) / static_cast<double>(e.total) : 0.0;
        entries.push_back(std::move(e));
    }
    return entries;
}

// ---------------------------------------------------------------------------
// Reference regressors
// ---------------------------------------------------------------------------

class KnnRegressor final : public RegressorAdapter {
public:
    explicit KnnRegressor(int k = 5) : k_(k) {}

    std::string id() const override { return "knn" + std::to_string(k_); }
    std::unique_ptr<RegressorAdapter> clone() const override {
        return std::make_unique<KnnRegressor>(k_);
    }

    void fit_or_condition(const MatD& x, std::span<const double> y, uint64_t) override {
        x_ = x;
        y_.assign(y.begin(), y.end());
    }

    std::vector<double> predict(const MatD& x) const override {
        const size_t n = x_.rows();
        const size_t k = std::min<size_t>(static_cast<size_t>(k_), n);
        std::vector<double> out(x.rows());
        std::vector<std::pair<double, size_t>> dist(n);
        for (size_t q = 0; q < x.rows(); ++q) {
            for (size_t i = 0; i < n; ++i) {
                double d2 = 0.0;
                for (size_t c = 0; c < x.cols(); ++c) {
                    const double d = x(q, c) - x_(i, c);
                    d2 += d * d;
                }
                dist[i] = {d2, i};
            }
            std::partial_sort(dist.begin(), dist.begin() + static_cast<ptrdiff_t>(k), dist.end());
            // Exact matches dominate: average their targets directly.
            double zero_sum = 0.0;
            size_t zero_count = 0;
            for (size_t j = 0; j < k; ++j) {
                if (dist[j].first == 0.0) {
                    zero_sum += y_[dist[j].second];
                    ++zero_count;
                }
            }
            if (zero_count > 0) {
                out[q] = zero_sum / static_cast<double>(zero_count);
                continue;
            }
            double wsum = 0.0, vsum = 0.0;
            for (size_t j = 0; j < k; ++j) {
                const double w = 1.0 / std::sqrt(dist[j].first);
                wsum += w;
                vsum += w * y_[dist[j].second];
            }
            out[q] = vsum / wsum;
        }
        return out;
    }

private:
    int k_;
    MatD x_;
    std::vector<double> y_;
};

class RidgeRegressor final : public RegressorAdapter {
public:
    explicit RidgeRegressor(double lambda = 1.0) : lambda_(lambda) {}

    std::string id() const override { return "ridge"; }
    std::unique_ptr<RegressorAdapter> clone() const override {
        return std::make_unique<RidgeRegressor>(lambda_);
    }

    void fit_or_condition(const MatD& x, std::span<const double> y, uint64_t) override {
        const size_t n = x.rows();
        const size_t f = x.cols();
        // Center features and target; the intercept is not penalized.
        mean_.assign(f, 0.0);
        for (size_t r = 0; r < n; ++r)
            for (size_t c = 0; c < f; ++c) mean_[c] += x(r, c);
        for (double& m : mean_) m /= static_cast<double>(n);
        y_mean_ = 0.0;
        for (double v : y) y_mean_ += v;
        y_mean_ /= static_cast<double>(n);

        MatD a(f, f, 0.0);
        std::vector<double> b(f, 0.0);
        for (size_t r = 0; r < n; ++r) {
            for (size_t i = 0; i < f; ++i) {
                const double xi = x(r, i) - mean_[i];
                b[i] += xi * (y[r] - y_mean_);
                for (size_t j = i; j < f; ++j) a(i, j) += xi * (x(r, j) - mean_[j]);
            }
        }
        for (size_t i = 0; i < f; ++i) {
            a(i, i) += lambda_;
            for (size_t j = 0; j < i; ++j) a(i, j) = a(j, i);
        }
        weights_ = solve_spd(a, b);
    }

    std::vector<double> predict(const MatD& x) const override {
        std::vector<double> out(x.rows(), y_mean_);
        for (size_t r = 0; r < x.rows(); ++r)
            for (size_t c = 0; c < x.cols(); ++c)
                out[r] += weights_[c] * (x(r, c) - mean_[c]);
        return out;
    }

private:
    // Cholesky solve with a tiny jitter retry for near-singular systems.
    static std::vector<double> solve_spd(MatD a, std::vector<double> b) {
        const size_t n = a.rows();
        for (int attempt = 0; attempt < 2; ++attempt) {
            MatD l = a;
            bool ok = true;
            for (size_t i = 0; i < n && ok; ++i) {
                for (size_t j = 0; j <= i; ++j) {
                    double s = l(i, j);
                    for (size_t p = 0; p < j; ++p) s -= l(i, p) * l(j, p);
                    if (i == j) {
                        if (s <= 0.0) {
                            ok = false;
                            break;
                        }
                        l(i, i) = std::sqrt(s);
                    } else {
                        l(i, j) = s / l(j, j);
                    }
                }
            }
            if (!ok) {
                for (size_t i = 0; i < n; ++i) a(i, i) += 1e-8;
                continue;
            }
            std::vector<double> z(n);
            for (size_t i = 0; i < n; ++i) {
                double s = b[i];
                for (size_t p = 0; p < i; ++p) s -= l(i, p) * z[p];
                z[i] = s / l(i, i);
            }
            std::vector<double> w(n);
            for (size_t ii = n; ii-- > 0;) {
                double s = z[ii];
                for (size_t p = ii + 1; p < n; ++p) s -= l(p, ii) * w[p];
                w[ii] = s / l(ii, ii);
            }
            return w;
        }
        throw Error("ridge: normal equations not positive definite");
    }

    double lambda_;
    std::vector<double> mean_;
    double y_mean_ = 0.0;
    std::vector<double> weights_;
};

// Exact (non-histogram) variance-reduction regression tree; this also serves
// as the in-repo oracle regressor for signal checks on synthetic tasks.
class TreeRegressor final : public RegressorAdapter {
public:
    explicit TreeRegressor(int max_depth = 6, size_t min_leaf = 2)
        : max_depth_(max_depth), min_leaf_(min_leaf) {}

    std::string id() const override { return "tree" + std::to_string(max_depth_); }
    std::unique_ptr<RegressorAdapter> clone() const override {
        return std::make_unique<TreeRegressor>(max_depth_, min_leaf_);
    }

    void fit_or_condition(const MatD& x, std::span<const double> y, uint64_t) override {
        nodes_.clear();
        std::vector<size_t> rows(x.rows());
        std::iota(rows.begin(), rows.end(), size_t{0});
        grow(x, y, rows, 0);
    }

    std::vector<double> predict(const MatD& x) const override {
        std::vector<double> out(x.rows());
        for (size_t r = 0; r < x.rows(); ++r) {
            size_t idx = 0;
            while (nodes_[idx].feature >= 0) {
                idx = x(r, static_cast<size_t>(nodes_[idx].feature)) <= nodes_[idx].threshold
                          ? nodes_[idx].left
                          : nodes_[idx].right;
            }
            out[r] = nodes_[idx].value;
        }
        return out;
    }

private:
    struct Node {
        int feature = -1;
        double threshold = 0.0;
        size_t left = 0, right = 0;
        double value = 0.0;
    };

    size_t grow(const MatD& x, std::span<const double> y, std::vector<size_t>& rows, int depth) {
        double sum = 0.0;
        for (size_t r : rows) sum += y[r];
        const double mean = sum / static_cast<double>(rows.size());

        const size_t idx = nodes_.size();
        nodes_.emplace_back();
        nodes_[idx].value = mean;
        if (depth >= max_depth_ || rows.size() < 2 * min_leaf_) return idx;

        double base_sse = 0.0;
        for (size_t r : rows) base_sse += (y[r] - mean) * (y[r] - mean);

        int best_feature = -1;
        double best_threshold = 0.0, best_sse = base_sse;
        std::vector<std::pair<double, size_t>> sorted(rows.size());
        for (size_t c = 0; c < x.cols(); ++c) {
            for (size_t i = 0; i < rows.size(); ++i) sorted[i] = {x(rows[i], c), rows[i]};
            std::sort(sorted.begin(), sorted.end());
            double left_sum = 0.0, left_sq = 0.0;
            double right_sum = 0.0, right_sq = 0.0;
            for (const auto& [v, r] : sorted) {
                right_sum += y[r];
                right_sq += y[r] * y[r];
            }
            for (size_t i = 0; i + 1 < sorted.size(); ++i) {
                const double yi = y[sorted[i].second];
                left_sum += yi;
                left_sq += yi * yi;
                right_sum -= yi;
                right_sq -= yi * yi;
                if (sorted[i].first == sorted[i + 1].first) continue;
                const size_t nl = i + 1, nr = sorted.size() - nl;
                if (nl < min_leaf_ || nr < min_leaf_) continue;
                const double sse = (left_sq - left_sum * left_sum / static_cast<double>(nl)) +
                                   (right_sq - right_sum * right_sum / static_cast<double>(nr));
                if (sse < best_sse - 1e-12) {
                    best_sse = sse;
                    best_feature = static_cast<int>(c);
                    best_threshold = 0.5 * (sorted[i].first + sorted[i + 1].first);
                }
            }
        }
        if (best_feature < 0) return idx;

        std::vector<size_t> left_rows, right_rows;
        for (size_t r : rows) {
            if (x(r, static_cast<size_t>(best_feature)) <= best_threshold)
                left_rows.push_back(r);
            else
                right_rows.push_back(r);
        }
        const size_t li = grow(x, y, left_rows, depth + 1);
        const size_t ri = grow(x, y, right_rows, depth + 1);
        nodes_[idx].feature = best_feature;
        nodes_[idx].threshold = best_threshold;
        nodes_[idx].left = li;
        nodes_[idx].right = ri;
        return idx;
    }

    int max_depth_;
    size_t min_leaf_;
    std::vector<Node> nodes_;
};

inline std::vector<std::unique_ptr<RegressorAdapter>> reference_regressors() {
    std::vector<std::unique_ptr<RegressorAdapter>> out;
    out.push_back(std::make_unique<KnnRegressor>(5));
    out.push_back(std::make_unique<RidgeRegressor>(1.0));
    out.push_back(std::make_unique<TreeRegressor>(6));
    return out;
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

inline void curves_to_csv(const std::vector<PerformanceCurve>& curves, io::CsvWriter& csv) {
    csv.row({"dataset", "model", "train_size", "mse_mean", "mse_std"});
    for (const auto& curve : curves) {
        for (const auto& pt : curve.points) {
            csv.row({curve.dataset, curve.model, std::to_string(pt.train_size),
                     io::format_number(pt.mse_mean), io::format_number(pt.mse_std)});
        }
    }
}

struct EfficiencyRow {
    std::string dataset;
    std::string ref_model;
    std::string new_model;
    EfficiencyResult result;
};

inline void efficiency_to_csv(const std::vector<EfficiencyRow>& rows, io::CsvWriter& csv) {
    csv.row({"dataset", "ref", "new", "D_ref", "D_new", "E_add", "E_mult", "extrapolated"});
    for (const auto& row : rows) {
        csv.row({row.dataset, row.ref_model, row.new_model, io::format_number(row.result.d_ref),
                 io::format_number(row.result.d_new), io::format_number(row.result.e_add),
                 io::format_number(row.result.e_mult), row.result.extrapolated ? "1" : "0"});
    }
}

}  // namespace tabcure::evalharness
