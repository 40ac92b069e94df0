#include <gtest/gtest.h>

#include "helpers.hpp"
#include "tabcure/tabular.hpp"

using namespace tabcure;
using testutil::TempDir;
using testutil::write_text;

namespace {

RawTable numeric_table(size_t rows, size_t cols, uint64_t seed) {
    Rng rng(seed);
    RawTable t;
    t.row_count = rows;
    for (size_t c = 0; c < cols; ++c) {
        RawColumn col;
        col.name = "c" + std::to_string(c);
        col.numeric.resize(rows);
        for (auto& v : col.numeric) v = rng.normal();
        t.columns.push_back(std::move(col));
    }
    return t;
}

}  // namespace

TEST(LoadCsv, ParsesNumericColumns) {
    TempDir dir("csv");
    write_text(dir.path() / "t.csv", "a,b,c\n1,2,3\n4,5,6\n7,8,9\n1.5,2.5,3.5\n-1,-2,-3\n");
    const RawTable t = load_csv(dir.path() / "t.csv");
    ASSERT_EQ(t.columns.size(), 3u);
    EXPECT_EQ(t.row_count, 5u);
    for (const auto& c : t.columns) EXPECT_FALSE(c.categorical);
    EXPECT_DOUBLE_EQ(t.columns[1].numeric[3], 2.5);
}

TEST(LoadCsv, InfersCategoricalFromNonNumericCells) {
    TempDir dir("csv");
    write_text(dir.path() / "t.csv", "color,x\nred,1\nblue,2\nred,3\n");
    const RawTable t = load_csv(dir.path() / "t.csv");
    ASSERT_TRUE(t.columns[0].categorical);
    std::set<std::string> levels(t.columns[0].levels.begin(), t.columns[0].levels.end());
    EXPECT_EQ(levels.size(), 2u);
}

TEST(LoadCsv, RowWidthMismatchIsAnError) {
    TempDir dir("csv");
    write_text(dir.path() / "t.csv", "a,b\n1,2\n3\n");
    try {
        load_csv(dir.path() / "t.csv");
        FAIL() << "expected row width mismatch";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("row width mismatch"), std::string::npos);
    }
}

TEST(LoadCsv, MissingFileAndMissingRows) {
    TempDir dir("csv");
    EXPECT_THROW(load_csv(dir.path() / "absent.csv"), Error);
    write_text(dir.path() / "na.csv", "a,b\n1,NA\n2,3\n,4\n");
    const RawTable t = load_csv(dir.path() / "na.csv");
    EXPECT_EQ(t.row_count, 1u);  // rows with missing cells are dropped
    EXPECT_EQ(t.dropped_rows, 2u);
    write_text(dir.path() / "empty.csv", "a,b\nNA,1\n");
    EXPECT_THROW(load_csv(dir.path() / "empty.csv"), Error);
}

TEST(LoadCsv, SemicolonDelimiter) {
    TempDir dir("csv");
    write_text(dir.path() / "t.csv", "a;b\n1;2\n3;4\n");
    const RawTable t = load_csv(dir.path() / "t.csv");
    ASSERT_EQ(t.columns.size(), 2u);
    EXPECT_EQ(t.row_count, 2u);
}

TEST(Preprocess, ZScoreMatchesAnalyticValues) {
    RawTable t;
    t.row_count = 3;
    RawColumn a{"a", false, {1.0, 2.0, 3.0}, {}};
    RawColumn b{"b", false, {10.0, 20.0, 60.0}, {}};
    RawColumn y{"y", false, {5.0, 1.0, 9.0}, {}};
    t.columns = {a, b, y};
    const Dataset d = preprocess(t, "y", 0, false);
    // population variance: [1,2,3] -> +-sqrt(3/2)
    EXPECT_NEAR(d.features(0, 0), -1.22474487, 1e-6);
    EXPECT_NEAR(d.features(1, 0), 0.0, 1e-9);
    EXPECT_NEAR(d.features(2, 0), 1.22474487, 1e-6);
    for (size_t c = 0; c < d.feature_count(); ++c) {
        double mu, var;
        column_moments(d.features, c, mu, var);
        EXPECT_NEAR(mu, 0.0, 1e-6);
        EXPECT_NEAR(var, 1.0, 1e-5);
    }
}

TEST(Preprocess, RowCapAt1024) {
    const RawTable t = numeric_table(1500, 4, 1);
    const Dataset d = preprocess(t, std::nullopt, 7, false);
    EXPECT_EQ(d.rows(), 1024u);
    EXPECT_FALSE(d.meta.duplicated_for_embedding);
    EXPECT_EQ(d.meta.original_rows, 1500u);
}

TEST(Preprocess, DuplicationOnlyForEmbedding) {
    const RawTable t = numeric_table(700, 4, 2);
    const Dataset embed = preprocess(t, std::nullopt, 7, true);
    EXPECT_EQ(embed.rows(), 1024u);
    EXPECT_TRUE(embed.meta.duplicated_for_embedding);
    const Dataset bench = preprocess(t, std::nullopt, 7, false);
    EXPECT_EQ(bench.rows(), 700u);
    EXPECT_FALSE(bench.meta.duplicated_for_embedding);
}

TEST(Preprocess, RejectsMoreThan100FeaturesAfterEncoding) {
    // 40 numeric features + one categorical with 70 levels -> 110 > 100.
    RawTable t = numeric_table(200, 41, 3);
    RawColumn cat;
    cat.name = "cat";
    cat.categorical = true;
    for (size_t r = 0; r < 200; ++r) cat.levels.push_back("lv" + std::to_string(r % 70));
    t.columns.push_back(cat);
    try {
        preprocess(t, "c40", 0, false);
        FAIL() << "expected feature-count rejection";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("too many features"), std::string::npos);
    }
}

TEST(Preprocess, OneHotIndicatorsSumToOnePerRow) {
    RawTable t;
    t.row_count = 6;
    RawColumn cat{"cat", true, {}, {"a", "b", "c", "a", "b", "c"}};
    RawColumn x{"x", false, {1, 2, 3, 4, 5, 6}, {}};
    RawColumn y{"y", false, {1, 4, 2, 8, 5, 7}, {}};
    t.columns = {cat, x, y};
    const MatD encoded = detail::encode_features(t, "y");
    ASSERT_EQ(encoded.cols(), 4u);  // 3 indicators + x
    for (size_t r = 0; r < encoded.rows(); ++r) {
        double s = 0.0;
        for (size_t c = 0; c < 3; ++c) s += encoded(r, c);
        EXPECT_DOUBLE_EQ(s, 1.0);
    }
}

TEST(Preprocess, RandomTargetChoiceIsSeeded) {
    const RawTable t = numeric_table(50, 5, 4);
    const Dataset a = preprocess(t, std::nullopt, 11, false);
    const Dataset b = preprocess(t, std::nullopt, 11, false);
    EXPECT_EQ(a.meta.content_hash, b.meta.content_hash);
}

TEST(Preprocess, ConstantTargetIsAnError) {
    RawTable t;
    t.row_count = 5;
    RawColumn a{"a", false, {1, 2, 3, 4, 5}, {}};
    RawColumn b{"b", false, {2, 4, 6, 8, 10}, {}};
    RawColumn y{"y", false, {3, 3, 3, 3, 3}, {}};
    t.columns = {a, b, y};
    EXPECT_THROW(preprocess(t, "y", 0, false), Error);
}

TEST(Preprocess, ConstantFeatureBecomesZeros) {
    RawTable t;
    t.row_count = 4;
    RawColumn a{"a", false, {5, 5, 5, 5}, {}};
    RawColumn b{"b", false, {1, 2, 3, 4}, {}};
    RawColumn y{"y", false, {0, 1, 4, 9}, {}};
    t.columns = {a, b, y};
    const Dataset d = preprocess(t, "y", 0, false);
    for (size_t r = 0; r < d.rows(); ++r) EXPECT_DOUBLE_EQ(d.features(r, 0), 0.0);
}

TEST(Preprocess, IdempotentUpToTolerance) {
    const RawTable t = numeric_table(300, 6, 5);
    const Dataset once = preprocess(t, "c5", 3, false);
    // Feed the standardized values back through z-scoring.
    MatD again = once.features;
    std::vector<double> target = once.target;
    const Dataset twice = testutil::make_dataset(again, target);
    for (size_t r = 0; r < once.rows(); ++r) {
        for (size_t c = 0; c < once.feature_count(); ++c)
            EXPECT_NEAR(once.features(r, c), twice.features(r, c), 1e-6);
        EXPECT_NEAR(once.target[r], twice.target[r], 1e-6);
    }
}

TEST(Dedupe, KeepsFirstOccurrence) {
    const RawTable t1 = numeric_table(40, 3, 6);
    const RawTable t2 = numeric_table(40, 3, 99);
    Dataset a = preprocess(t1, "c2", 0, false, "a");
    Dataset b = preprocess(t2, "c2", 0, false, "b");
    Dataset a2 = preprocess(t1, "c2", 0, false, "a-copy");
    const auto out = dedupe({a, b, a2});
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].meta.name, "a");
    EXPECT_EQ(out[1].meta.name, "b");
    EXPECT_TRUE(dedupe({}).empty());
}

TEST(Dedupe, OneCellDifferenceKeepsBoth) {
    const RawTable t1 = numeric_table(40, 3, 6);
    RawTable t2 = t1;
    t2.columns[0].numeric[0] += 0.5;
    Dataset a = preprocess(t1, "c2", 0, false);
    Dataset b = preprocess(t2, "c2", 0, false);
    EXPECT_EQ(dedupe({a, b}).size(), 2u);
}

TEST(Control, ShapeLabelAndDeterminism) {
    const Dataset a = generate_control(2, 1024, 7);
    EXPECT_EQ(a.rows(), 1024u);
    EXPECT_EQ(a.feature_count(), 2u);
    EXPECT_EQ(a.meta.label, Label::Control);
    const Dataset b = generate_control(2, 1024, 7);
    EXPECT_EQ(a.features, b.features);
    EXPECT_EQ(a.target, b.target);
    EXPECT_THROW(generate_control(1, 100, 0), Error);
    EXPECT_THROW(generate_control(101, 100, 0), Error);
}

TEST(Control, FeatureTargetCorrelationStaysSmall) {
    // Oracle: direct Pearson correlation; |r| < 0.15 at n=1024 for pure noise.
    for (uint64_t seed = 0; seed < 20; ++seed) {
        const Dataset d = generate_control(3, 1024, seed);
        for (size_t c = 0; c < d.feature_count(); ++c) {
            std::vector<double> col(d.rows());
            for (size_t r = 0; r < d.rows(); ++r) col[r] = d.features(r, c);
            EXPECT_LT(std::fabs(testutil::pearson(col, d.target)), 0.15)
                << "seed " << seed << " col " << c;
        }
    }
}

TEST(Split, SeventyThirty) {
    const RawTable t = numeric_table(1000, 3, 8);
    const Dataset d = preprocess(t, "c2", 0, false);
    const SplitIndex s = split_70_30(d, 5);
    EXPECT_EQ(s.train_rows.size(), 700u);
    EXPECT_EQ(s.test_rows.size(), 300u);
    std::set<size_t> all(s.train_rows.begin(), s.train_rows.end());
    all.insert(s.test_rows.begin(), s.test_rows.end());
    EXPECT_EQ(all.size(), 1000u);  // disjoint and exhaustive
    const SplitIndex again = split_70_30(d, 5);
    EXPECT_EQ(s.train_rows, again.train_rows);
}

TEST(Split, SmallAndInvalidCases) {
    const RawTable t = numeric_table(10, 3, 9);
    const Dataset d = preprocess(t, "c2", 0, false);
    const SplitIndex s = split_70_30(d, 1);
    EXPECT_EQ(s.train_rows.size(), 7u);
    EXPECT_EQ(s.test_rows.size(), 3u);

    const RawTable t2 = numeric_table(9, 3, 9);
    const Dataset d2 = preprocess(t2, "c2", 0, false);
    EXPECT_THROW(split_70_30(d2, 1), Error);

    const RawTable t3 = numeric_table(500, 3, 10);
    const Dataset dup = preprocess(t3, "c2", 0, true);
    EXPECT_THROW(split_70_30(dup, 1), Error);
}

TEST(CanonicalFile, BitExactRoundTrip) {
    TempDir dir("tcds");
    const RawTable t = numeric_table(333, 7, 12);
    Dataset d = preprocess(t, "c6", 3, false, "roundtrip", Label::Engineering);
    const auto p1 = dir.path() / "a.tcds";
    const auto p2 = dir.path() / "b.tcds";
    save_dataset(p1, d, "m-1");
    const Dataset loaded = load_dataset(p1);
    EXPECT_EQ(loaded.meta.name, "roundtrip");
    EXPECT_EQ(loaded.meta.label, Label::Engineering);
    EXPECT_EQ(loaded.meta.content_hash, d.meta.content_hash);
    EXPECT_EQ(loaded.rows(), d.rows());
    save_dataset(p2, loaded, "m-1");
    EXPECT_EQ(io::read_file(p1), io::read_file(p2));  // save(load(x)) == x
}

TEST(CanonicalFile, CorruptionIsDetected) {
    TempDir dir("tcds");
    const RawTable t = numeric_table(50, 3, 13);
    Dataset d = preprocess(t, "c2", 3, false);
    const auto p = dir.path() / "a.tcds";
    save_dataset(p, d);
    std::string bytes = io::read_file(p);
    bytes[bytes.size() - 5] ^= 0x40;  // flip a bit inside the blob
    io::atomic_write(p, bytes);
    EXPECT_THROW(load_dataset(p), Error);
}

TEST(Sidecar, OverridesColumnKindAndLabel) {
    TempDir dir("sc");
    write_text(dir.path() / "t.csv", "grade,x,y\n1,0.5,2\n2,1.5,4\n3,2.5,6\n1,3.5,8\n2,4.5,9\n");
    write_text(dir.path() / "t.schema.json",
               R"({"columns": {"grade": "categorical"}, "label": "engineering", "target": "y"})");
    const SidecarSchema schema = load_sidecar(dir.path() / "t.schema.json");
    EXPECT_EQ(schema.label, Label::Engineering);
    EXPECT_EQ(schema.target_column, "y");
    const RawTable t = load_csv(dir.path() / "t.csv", schema.target_column, 0, &schema);
    EXPECT_TRUE(t.columns[0].categorical);
    EXPECT_EQ(t.columns[0].levels.size(), 5u);
}
