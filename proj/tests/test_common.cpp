#include <gtest/gtest.h>

#include <set>

#include "tabcure/common.hpp"

using namespace tabcure;

TEST(Rng, DeterministicAcrossInstances) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, StreamsAreIndependent) {
    Rng a = Rng::stream(7, 0);
    Rng b = Rng::stream(7, 1);
    int equal = 0;
    for (int i = 0; i < 64; ++i) equal += a.next_u64() == b.next_u64() ? 1 : 0;
    EXPECT_EQ(equal, 0);
}

TEST(Rng, UniformInRange) {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
    }
}

TEST(Rng, NormalMoments) {
    Rng rng(11);
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    EXPECT_NEAR(mean, 0.0, 0.02);
    EXPECT_NEAR(var, 1.0, 0.03);
}

TEST(Rng, BelowIsBoundedAndCoversRange) {
    Rng rng(5);
    std::set<uint64_t> seen;
    for (int i = 0; i < 400; ++i) seen.insert(rng.below(7));
    EXPECT_EQ(seen.size(), 7u);
    EXPECT_EQ(*seen.rbegin(), 6u);
}

TEST(Rng, SampleWithoutReplacementIsSortedAndDistinct) {
    Rng rng(9);
    const auto idx = rng.sample_without_replacement(100, 30);
    ASSERT_EQ(idx.size(), 30u);
    for (size_t i = 1; i < idx.size(); ++i) EXPECT_LT(idx[i - 1], idx[i]);
    EXPECT_LT(idx.back(), 100u);
}

TEST(Hashing, IncrementalMatchesOneShot) {
    const std::string payload = "The quick brown fox jumps over the lazy dog, twice over.";
    Hasher one;
    one.update(payload.data(), payload.size());
    Hasher parts;
    parts.update(payload.data(), 10);
    parts.update(payload.data() + 10, 3);
    parts.update(payload.data() + 13, payload.size() - 13);
    EXPECT_EQ(one.digest(), parts.digest());
}

TEST(Hashing, DistinctInputsDiffer) {
    const Digest128 a = hash_bytes("abc", 3);
    const Digest128 b = hash_bytes("abd", 3);
    EXPECT_FALSE(a == b);
    EXPECT_EQ(a.hex().size(), 32u);
}

TEST(ParallelFor, ResultIndependentOfJobCount) {
    std::vector<double> one(500), four(500);
    parallel_for(500, 1, [&](size_t i) { one[i] = std::sqrt(static_cast<double>(i)); });
    parallel_for(500, 4, [&](size_t i) { four[i] = std::sqrt(static_cast<double>(i)); });
    EXPECT_EQ(one, four);
}

TEST(ParallelFor, PropagatesFirstException) {
    EXPECT_THROW(
        parallel_for(100, 4, [&](size_t i) {
            if (i == 17) throw Error("boom");
        }),
        Error);
}

TEST(InverseNormalCdf, MatchesKnownQuantiles) {
    EXPECT_NEAR(inverse_normal_cdf(0.5), 0.0, 1e-9);
    EXPECT_NEAR(inverse_normal_cdf(0.975), 1.959964, 1e-4);
    EXPECT_NEAR(inverse_normal_cdf(0.025), -1.959964, 1e-4);
    EXPECT_NEAR(inverse_normal_cdf(0.8413447460685429), 1.0, 1e-4);
}
