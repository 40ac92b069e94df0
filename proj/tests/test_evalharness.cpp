#include <gtest/gtest.h>

#include <mutex>

#include "helpers.hpp"
#include "tabcure/evalharness.hpp"

using namespace tabcure;
using namespace tabcure::evalharness;

namespace {

// Hand-built curve; fractions spread evenly and end at 0.9 so the 0.9-point
// is always the last one.
PerformanceCurve make_curve(const std::vector<size_t>& sizes, const std::vector<double>& errors,
                            const std::string& model = "m", const std::string& dataset = "d") {
    PerformanceCurve c;
    c.dataset = dataset;
    c.model = model;
    for (size_t i = 0; i < sizes.size(); ++i) {
        CurvePoint pt;
        pt.train_size = sizes[i];
        pt.mse_mean = errors[i];
        pt.folds = 10;
        pt.fraction = 0.9 - 0.1 * static_cast<double>(sizes.size() - 1 - i);
        c.points.push_back(pt);
    }
    return c;
}

class ConstantMeanAdapter final : public RegressorAdapter {
public:
    std::string id() const override { return "const-mean"; }
    std::unique_ptr<RegressorAdapter> clone() const override {
        return std::make_unique<ConstantMeanAdapter>();
    }
    void fit_or_condition(const MatD&, std::span<const double> y, uint64_t) override {
        mean_ = 0.0;
        for (double v : y) mean_ += v;
        mean_ /= static_cast<double>(y.size());
    }
    std::vector<double> predict(const MatD& x) const override {
        return std::vector<double>(x.rows(), mean_);
    }

private:
    double mean_ = 0.0;
};

// Records every value of feature column 0 it is shown, in fit and predict.
class TracingAdapter final : public RegressorAdapter {
public:
    explicit TracingAdapter(std::shared_ptr<std::set<double>> seen) : seen_(std::move(seen)) {}
    std::string id() const override { return "tracing"; }
    std::unique_ptr<RegressorAdapter> clone() const override {
        return std::make_unique<TracingAdapter>(seen_);
    }
    void fit_or_condition(const MatD& x, std::span<const double>, uint64_t) override { record(x); }
    std::vector<double> predict(const MatD& x) const override {
        record(x);
        return std::vector<double>(x.rows(), 0.0);
    }

private:
    void record(const MatD& x) const {
        static std::mutex mu;
        std::lock_guard<std::mutex> lock(mu);
        for (size_t r = 0; r < x.rows(); ++r) seen_->insert(x(r, 0));
    }
    std::shared_ptr<std::set<double>> seen_;
};

Dataset linear_dataset(size_t rows, size_t cols, uint64_t seed) {
    Rng rng(seed);
    MatD x(rows, cols);
    std::vector<double> y(rows);
    for (size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (size_t c = 0; c < cols; ++c) {
            x(r, c) = rng.normal();
            s += (static_cast<double>(c) + 1.0) * x(r, c);
        }
        y[r] = s;
    }
    return testutil::make_dataset(std::move(x), std::move(y));
}

}  // namespace

TEST(RequiredData, LinearInterpolationMidpoint) {
    const PerformanceCurve c = make_curve({100, 900}, {1.0, 0.2});
    const RequiredData r = required_data(c, 0.6);
    EXPECT_FALSE(r.extrapolated);
    EXPECT_NEAR(r.d, 500.0, 1e-9);
}

TEST(RequiredData, TargetAtLargestSizeIsEndpoint) {
    const PerformanceCurve c = make_curve({100, 900}, {1.0, 0.2});
    const RequiredData r = required_data(c, 0.2);
    EXPECT_FALSE(r.extrapolated);
    EXPECT_NEAR(r.d, 900.0, 1e-9);
}

TEST(RequiredData, ExtrapolatesTheFinalSegment) {
    // slope = (0.4 - 1.0) / 800 = -0.00075 per sample -> D = 1100
    const PerformanceCurve c = make_curve({100, 900}, {1.0, 0.4});
    const RequiredData r = required_data(c, 0.25);
    EXPECT_TRUE(r.extrapolated);
    EXPECT_NEAR(r.d, 1100.0, 1e-9);
}

TEST(RequiredData, ExtrapolationIsClippedAtTenTimesMax) {
    const PerformanceCurve c = make_curve({100, 900}, {1.0, 0.99});
    const RequiredData r = required_data(c, 0.0);
    EXPECT_TRUE(r.extrapolated);
    EXPECT_NEAR(r.d, 9000.0, 1e-9);

    const PerformanceCurve flat = make_curve({100, 900}, {1.0, 1.0});
    const RequiredData rf = required_data(flat, 0.5);  // non-decreasing tail: no crossing
    EXPECT_TRUE(rf.extrapolated);
    EXPECT_NEAR(rf.d, 9000.0, 1e-9);
}

TEST(RequiredData, FirstPointAlreadyGoodEnough) {
    const PerformanceCurve c = make_curve({100, 900}, {1.0, 0.2});
    const RequiredData r = required_data(c, 1.5);
    EXPECT_FALSE(r.extrapolated);
    EXPECT_NEAR(r.d, 100.0, 1e-9);
}

TEST(RequiredData, FirstCrossingWinsOnNonMonotoneCurves) {
    const PerformanceCurve c = make_curve({100, 300, 500, 700, 900}, {1.0, 0.4, 0.8, 0.3, 0.25});
    const RequiredData r = required_data(c, 0.5);
    EXPECT_FALSE(r.extrapolated);
    // first crossing inside (100, 300): 100 + 200 * (1.0 - 0.5) / 0.6
    EXPECT_NEAR(r.d, 100.0 + 200.0 * (0.5 / 0.6), 1e-9);
}

TEST(RequiredData, MonotonicityUnderPointwiseDominance) {
    // Within the observed size range a pointwise-lower curve never needs
    // more data for the same target. (Linear extrapolation beyond the range
    // depends on the final slope, not the level, so the property is
    // restricted to targets both curves reach.)
    Rng rng(8);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<size_t> sizes{100, 200, 400, 600, 900};
        std::vector<double> hi(5), lo(5);
        double level = 2.0 + rng.uniform();
        for (size_t i = 0; i < 5; ++i) {
            level *= 0.5 + 0.45 * rng.uniform();
            hi[i] = level;
            lo[i] = level * (0.3 + 0.6 * rng.uniform());
        }
        const double target = rng.uniform(hi.back(), hi.front());
        const RequiredData rh = required_data(make_curve(sizes, hi), target);
        const RequiredData rl = required_data(make_curve(sizes, lo), target);
        ASSERT_FALSE(rh.extrapolated);
        ASSERT_FALSE(rl.extrapolated);
        EXPECT_LE(rl.d, rh.d + 1e-9);
    }
}

TEST(DataEfficiency, IdenticalCurvesAreNeutral) {
    const PerformanceCurve c = make_curve({100, 300, 500, 700, 900}, {1.0, 0.7, 0.5, 0.35, 0.2});
    const EfficiencyResult r = data_efficiency(c, c);
    EXPECT_DOUBLE_EQ(r.e_add, 0.0);
    EXPECT_DOUBLE_EQ(r.e_mult, 1.0);
    EXPECT_FALSE(r.extrapolated);
}

TEST(DataEfficiency, HalvedDataRequirementDoublesEfficiency) {
    // ref reaches 0.2 at 900; new reaches 0.2 at 450.
    const PerformanceCurve ref = make_curve({100, 900}, {1.0, 0.2});
    const PerformanceCurve better = make_curve({100, 450, 900}, {0.9, 0.2, 0.1});
    const EfficiencyResult r = data_efficiency(ref, better);
    EXPECT_FALSE(r.extrapolated);
    EXPECT_NEAR(r.d_ref, 900.0, 1e-9);
    EXPECT_NEAR(r.d_new, 450.0, 1e-9);
    EXPECT_NEAR(r.e_add, 450.0, 1e-9);
    EXPECT_NEAR(r.e_mult, 2.0, 1e-9);
    EXPECT_NEAR(r.target_error, 0.2, 1e-12);
}

TEST(DataEfficiency, AnchorSwapWhenNewModelNeverReachesTarget) {
    // new stays above the ref target; anchor on new@900 (= 0.5) and ask how
    // much data ref needs for 0.5: crossing of ref at D = 600.
    const PerformanceCurve ref = make_curve({100, 900}, {1.0, 0.2});
    const PerformanceCurve worse = make_curve({100, 900}, {1.5, 0.5});
    const EfficiencyResult r = data_efficiency(ref, worse);
    EXPECT_TRUE(r.extrapolated);
    EXPECT_NEAR(r.d_ref, 600.0, 1e-9);
    EXPECT_NEAR(r.d_new, 900.0, 1e-9);
    EXPECT_NEAR(r.e_add, -300.0, 1e-9);
    EXPECT_NEAR(r.e_mult, 600.0 / 900.0, 1e-12);
    EXPECT_NEAR(r.target_error, 0.5, 1e-12);
}

TEST(DataEfficiency, IdentitiesHoldExactly) {
    Rng rng(31);
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<size_t> sizes{100, 300, 500, 700, 900};
        auto decreasing = [&]() {
            std::vector<double> e(5);
            double level = 1.0 + rng.uniform();
            for (auto& v : e) {
                level *= 0.55 + 0.4 * rng.uniform();
                v = level;
            }
            return e;
        };
        const EfficiencyResult r = data_efficiency(make_curve(sizes, decreasing()),
                                                   make_curve(sizes, decreasing()));
        EXPECT_DOUBLE_EQ(r.e_add, r.d_ref - r.d_new);
        EXPECT_DOUBLE_EQ(r.e_mult, r.d_ref / r.d_new);
        EXPECT_GT(r.d_new, 0.0);
    }
}

TEST(DataEfficiency, MultiplicativeAntisymmetry) {
    // Swapping ref and new inverts E_mult whenever neither direction needs
    // extrapolation. For strictly decreasing curves that regime requires the
    // final errors to coincide (otherwise the better model's final error is
    // unreachable for the other), so pairs share their last value.
    Rng rng(37);
    int checked = 0;
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<size_t> sizes{100, 300, 500, 700, 900};
        auto decreasing = [&](double final_error) {
            std::vector<double> e(5);
            double level = 1.5 + rng.uniform();
            for (auto& v : e) {
                level *= 0.5 + 0.4 * rng.uniform();
                v = level;
            }
            const double shift = final_error - e.back();
            for (auto& v : e) v += shift;
            return e;
        };
        const double shared_final = rng.uniform(0.05, 0.5);
        const PerformanceCurve a = make_curve(sizes, decreasing(shared_final));
        const PerformanceCurve b = make_curve(sizes, decreasing(shared_final));
        const EfficiencyResult ab = data_efficiency(a, b);
        const EfficiencyResult ba = data_efficiency(b, a);
        if (ab.extrapolated || ba.extrapolated) continue;
        ++checked;
        EXPECT_NEAR(ab.e_mult, 1.0 / ba.e_mult, 1e-9);
    }
    EXPECT_GT(checked, 0);
}

TEST(DataEfficiency, MissingReferencePointIsAnError) {
    PerformanceCurve ref = make_curve({100, 900}, {1.0, 0.2});
    ref.points.back().fraction = 0.8;  // no 0.9 point any more
    const PerformanceCurve other = make_curve({100, 900}, {1.0, 0.3});
    EXPECT_THROW(data_efficiency(ref, other), Error);
}

TEST(SweepCurve, NinePointsWithMemorizingAdapter) {
    const Dataset d = linear_dataset(300, 3, 5);
    const SplitIndex split = split_70_30(d, 2);
    const RidgeRegressor near_exact(1e-10);
    const PerformanceCurve curve = sweep_curve(near_exact, d, split, default_fractions(), 10, 3);
    ASSERT_EQ(curve.points.size(), 9u);
    for (size_t i = 1; i < curve.points.size(); ++i)
        EXPECT_GT(curve.points[i].train_size, curve.points[i - 1].train_size);
    for (const auto& pt : curve.points) EXPECT_LE(pt.mse_mean, 1e-10);
}

TEST(SweepCurve, ConstantMeanAdapterSitsAtUnitMse) {
    Rng rng(3);
    MatD x(400, 2);
    std::vector<double> y(400);
    for (size_t r = 0; r < 400; ++r) {
        x(r, 0) = rng.normal();
        x(r, 1) = rng.normal();
        y[r] = rng.normal();
    }
    const Dataset d = testutil::make_dataset(std::move(x), std::move(y));
    const SplitIndex split = split_70_30(d, 4);
    const ConstantMeanAdapter adapter;
    const PerformanceCurve curve = sweep_curve(adapter, d, split, default_fractions(), 10, 5);
    for (const auto& pt : curve.points) EXPECT_NEAR(pt.mse_mean, 1.0, 0.15);
}

TEST(SweepCurve, DeterministicAcrossJobCounts) {
    const Dataset d = linear_dataset(200, 3, 9);
    const SplitIndex split = split_70_30(d, 1);
    const KnnRegressor knn(5);
    const PerformanceCurve a = sweep_curve(knn, d, split, {0.2, 0.5, 0.9}, 5, 7, 1);
    const PerformanceCurve b = sweep_curve(knn, d, split, {0.2, 0.5, 0.9}, 5, 7, 4);
    ASSERT_EQ(a.points.size(), b.points.size());
    for (size_t i = 0; i < a.points.size(); ++i) {
        EXPECT_DOUBLE_EQ(a.points[i].mse_mean, b.points[i].mse_mean);
        EXPECT_DOUBLE_EQ(a.points[i].mse_std, b.points[i].mse_std);
    }
}

TEST(SweepCurve, TinyFractionIsAnError) {
    const Dataset d = linear_dataset(50, 2, 11);
    const SplitIndex split = split_70_30(d, 1);
    const KnnRegressor knn(5);
    EXPECT_THROW(sweep_curve(knn, d, split, {0.01}, 10, 0), Error);
}

TEST(SweepCurve, NeverTouchesTheTestPartition) {
    // Feature 0 is a unique per-row tag; collect every tag the adapter sees
    // and check the test partition's tags never appear.
    const size_t n = 200;
    MatD x(n, 2);
    std::vector<double> y(n);
    Rng rng(13);
    for (size_t r = 0; r < n; ++r) {
        x(r, 0) = static_cast<double>(r);
        x(r, 1) = rng.normal();
        y[r] = rng.normal();
    }
    const Dataset d = testutil::make_dataset(std::move(x), std::move(y));
    const SplitIndex split = split_70_30(d, 21);
    auto seen = std::make_shared<std::set<double>>();
    const TracingAdapter adapter(seen);
    sweep_curve(adapter, d, split, {0.3, 0.9}, 5, 2, 2);
    std::set<double> test_tags;
    for (size_t r : split.test_rows) test_tags.insert(d.features(r, 0));
    for (double tag : *seen) EXPECT_FALSE(test_tags.count(tag)) << "leaked row tag " << tag;
    EXPECT_FALSE(seen->empty());
}

TEST(WinMatrix, CountsStrictWins) {
    std::vector<TestResult> results;
    results.push_back({"d1", "cand", 0.5});
    results.push_back({"d1", "base", 0.6});
    results.push_back({"d2", "cand", 0.7});
    results.push_back({"d2", "base", 0.6});
    results.push_back({"d3", "cand", 0.1});
    results.push_back({"d3", "base", 0.4});
    const auto wins = win_matrix(results, "cand");
    ASSERT_EQ(wins.size(), 1u);
    EXPECT_EQ(wins[0].baseline, "base");
    EXPECT_EQ(wins[0].wins, 2u);
    EXPECT_EQ(wins[0].total, 3u);
    EXPECT_NEAR(wins[0].fraction, 2.0 / 3.0, 1e-12);
}

TEST(WinMatrix, SelfComparisonYieldsNoWins) {
    std::vector<TestResult> results;
    results.push_back({"d1", "cand", 0.5});
    results.push_back({"d1", "base", 0.5});  // tie: strict inequality -> no win
    const auto wins = win_matrix(results, "cand");
    ASSERT_EQ(wins.size(), 1u);
    EXPECT_EQ(wins[0].wins, 0u);
}

TEST(ReferenceRegressors, RidgeSolvesLinearData) {
    const Dataset d = linear_dataset(600, 4, 17);
    const SplitIndex split = split_70_30(d, 3);
    RidgeRegressor ridge(1.0);
    const MatD x_train = evalharness::detail::gather_rows(d.features, split.train_rows);
    const auto y_train = evalharness::detail::gather(d.target, split.train_rows);
    ridge.fit_or_condition(x_train, y_train, 0);
    const MatD x_test = evalharness::detail::gather_rows(d.features, split.test_rows);
    const auto y_test = evalharness::detail::gather(d.target, split.test_rows);
    EXPECT_LE(mse(ridge.predict(x_test), y_test), 1e-4);
}

TEST(ReferenceRegressors, KnnMemorizesTrainingPoints) {
    const Dataset d = linear_dataset(100, 3, 19);
    KnnRegressor knn(5);
    knn.fit_or_condition(d.features, d.target, 0);
    EXPECT_NEAR(mse(knn.predict(d.features), d.target), 0.0, 1e-24);
}

TEST(ReferenceRegressors, StumpCannotSolveXorRegression) {
    // XOR-structured target: no single axis split helps. The brute-force
    // oracle confirms the bound, and the depth-1 tree matches it.
    const size_t n = 400;
    MatD x(n, 2);
    std::vector<double> y(n);
    Rng rng(23);
    for (size_t r = 0; r < n; ++r) {
        x(r, 0) = rng.normal();
        x(r, 1) = rng.normal();
        y[r] = (x(r, 0) > 0) == (x(r, 1) > 0) ? 1.0 : -1.0;
    }
    const Dataset d = testutil::make_dataset(std::move(x), std::move(y));
    const double oracle = testutil::best_stump_mse(d.features, d.target);
    EXPECT_GE(oracle, 0.5);

    TreeRegressor stump(1);
    stump.fit_or_condition(d.features, d.target, 0);
    EXPECT_GE(mse(stump.predict(d.features), d.target), 0.5);

    // depth 6 solves it
    TreeRegressor deep(6);
    deep.fit_or_condition(d.features, d.target, 0);
    EXPECT_LE(mse(deep.predict(d.features), d.target), 0.2);
}

TEST(ReferenceRegressors, ProvidesThreeSeededAdapters) {
    const auto adapters = reference_regressors();
    ASSERT_EQ(adapters.size(), 3u);
    EXPECT_EQ(adapters[0]->id(), "knn5");
    EXPECT_EQ(adapters[1]->id(), "ridge");
    EXPECT_EQ(adapters[2]->id(), "tree6");
}

TEST(CsvExport, PinnedHeaders) {
    io::CsvWriter curves;
    curves_to_csv({make_curve({100, 900}, {1.0, 0.2})}, curves);
    EXPECT_EQ(curves.str().substr(0, curves.str().find('\n')),
              "dataset,model,train_size,mse_mean,mse_std");

    io::CsvWriter eff;
    EfficiencyRow row;
    row.dataset = "d";
    row.ref_model = "a";
    row.new_model = "b";
    row.result = data_efficiency(make_curve({100, 900}, {1.0, 0.2}),
                                 make_curve({100, 900}, {1.0, 0.2}));
    efficiency_to_csv({row}, eff);
    EXPECT_EQ(eff.str().substr(0, eff.str().find('\n')),
              "dataset,ref,new,D_ref,D_new,E_add,E_mult,extrapolated");
    // exported identities hold exactly
    EXPECT_NE(eff.str().find("900,900,0,1,0"), std::string::npos);
}
