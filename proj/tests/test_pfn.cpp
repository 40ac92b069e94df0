#include <gtest/gtest.h>

#include "helpers.hpp"
#include "tabcure/pfn.hpp"

using namespace tabcure;
using namespace tabcure::pfn;

namespace {

PfnConfig tiny_config() {
    PfnConfig cfg;
    cfg.d_model = 8;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.ffn_mult = 2;
    cfg.buckets = 4;
    cfg.max_features = 6;
    cfg.context_rows = 5;
    cfg.query_rows = 3;
    cfg.seed = 0xACE;
    return cfg;
}

PfnConfig small_config() {
    PfnConfig cfg;
    cfg.d_model = 32;
    cfg.layers = 2;
    cfg.heads = 4;
    cfg.buckets = 8;
    cfg.max_features = 12;
    cfg.context_rows = 24;
    cfg.query_rows = 8;
    cfg.learning_rate = 3e-3;
    cfg.steps = 3;
    cfg.batch_tasks = 2;
    cfg.seed = 0xBEE;
    return cfg;
}

procgen::PriorConfig small_prior() {
    procgen::PriorConfig prior;
    prior.feature_count_range = {2, 8};
    prior.rows = 64;
    return prior;
}

struct Batch {
    MatD ctx_x;
    std::vector<double> ctx_y;
    MatD qry_x;
    std::vector<double> qry_y;
};

Batch random_batch(const PfnConfig& cfg, size_t width, uint64_t seed) {
    Rng rng(seed);
    Batch b;
    b.ctx_x = MatD(static_cast<size_t>(cfg.context_rows), width);
    b.ctx_y.resize(static_cast<size_t>(cfg.context_rows));
    for (size_t r = 0; r < b.ctx_x.rows(); ++r) {
        for (size_t c = 0; c < width; ++c) b.ctx_x(r, c) = rng.normal();
        b.ctx_y[r] = rng.normal();
    }
    b.qry_x = MatD(static_cast<size_t>(cfg.query_rows), width);
    b.qry_y.resize(static_cast<size_t>(cfg.query_rows));
    for (size_t r = 0; r < b.qry_x.rows(); ++r) {
        for (size_t c = 0; c < width; ++c) b.qry_x(r, c) = rng.normal();
        b.qry_y[r] = rng.normal();
    }
    return b;
}

}  // namespace

TEST(Init, ParameterCountMatchesShapeArithmetic) {
    const PfnConfig cfg;  // defaults: d=192, layers=2, heads=4, ffn 2x, B=32, F=100
    const PfnModel model = init(cfg);
    const size_t d = 192, fm = 100, f = 384, b = 32, layers = 2;
    const size_t encoder = d * fm + d + d * d + d + d + d;  // enc mlp + y_embed + query_token
    const size_t per_layer = 2 * d                          // ln1
                             + 4 * (d * d + d)              // qkvo
                             + 2 * d                        // ln2
                             + f * d + f + d * f + d;       // ffn
    const size_t head = 2 * d + b * d + b;                  // final ln + bucket head
    EXPECT_EQ(model.weights.param_count(), encoder + layers * per_layer + head);
}

TEST(Init, DeterministicAndShapeChecked) {
    const PfnModel a = init(tiny_config());
    const PfnModel b = init(tiny_config());
    EXPECT_EQ(weights_hash(a), weights_hash(b));

    PfnConfig bad = tiny_config();
    bad.d_model = 192;
    bad.heads = 5;  // 192 % 5 != 0
    EXPECT_THROW(init(bad), ConfigError);
}

TEST(GradCheck, AnalyticMatchesCentralDifferences) {
    const GradCheckReport report = grad_check(tiny_config());
    EXPECT_LE(report.max_rel_error, 1e-4) << "worst tensor: "
                                          << std::max_element(report.tensor_errors.begin(),
                                                              report.tensor_errors.end(),
                                                              [](const auto& x, const auto& y) {
                                                                  return x.second < y.second;
                                                              })
                                                 ->first;
    EXPECT_THROW(grad_check(small_config()), ConfigError);  // not tiny
}

TEST(GradCheck, HeadBiasGradientIsSoftmaxResidual) {
    // For softmax cross-entropy, dL/d(head_b)[k] = mean over queries of
    // (p_k - 1[target bucket == k]).
    const PfnConfig cfg = tiny_config();
    ModelT<double> model = init_model<double>(cfg);
    const Batch batch = random_batch(cfg, 4, 99);

    pfn::detail::Workspace<double> ws;
    pfn::detail::forward_core(model, batch.ctx_x, batch.ctx_y, batch.qry_x, ws, true);
    std::vector<int> targets;
    pfn::detail::loss_from_workspace(ws, batch.qry_y, cfg, &targets);
    Weights<double> grads = pfn::detail::make_grads(model);
    pfn::detail::zero_grads(grads);
    pfn::detail::backward_core(model, ws, targets, 1.0, grads);

    const int b = cfg.buckets;
    for (int k = 0; k < b; ++k) {
        double expected = 0.0;
        for (int qi = 0; qi < cfg.query_rows; ++qi) {
            expected += ws.probs[static_cast<size_t>(qi) * b + k];
            if (targets[static_cast<size_t>(qi)] == k) expected -= 1.0;
        }
        expected /= cfg.query_rows;
        EXPECT_NEAR(grads.head_b.v[static_cast<size_t>(k)], expected, 1e-12);
    }
}

TEST(GradCheck, GradientsScaleLinearlyWithLossScale) {
    const PfnConfig cfg = tiny_config();
    ModelT<double> model = init_model<double>(cfg);
    const Batch batch = random_batch(cfg, 4, 7);

    pfn::detail::Workspace<double> ws;
    pfn::detail::forward_core(model, batch.ctx_x, batch.ctx_y, batch.qry_x, ws, true);
    std::vector<int> targets;
    pfn::detail::loss_from_workspace(ws, batch.qry_y, cfg, &targets);
    Weights<double> g1 = pfn::detail::make_grads(model);
    Weights<double> g2 = pfn::detail::make_grads(model);
    pfn::detail::zero_grads(g1);
    pfn::detail::zero_grads(g2);
    pfn::detail::backward_core(model, ws, targets, 1.0, g1);
    pfn::detail::backward_core(model, ws, targets, 2.0, g2);

    std::vector<Tensor<double>*> t1, t2;
    g1.for_each([&](const std::string&, Tensor<double>& t) { t1.push_back(&t); });
    g2.for_each([&](const std::string&, Tensor<double>& t) { t2.push_back(&t); });
    for (size_t k = 0; k < t1.size(); ++k)
        for (size_t i = 0; i < t1[k]->size(); ++i)
            EXPECT_NEAR(t2[k]->v[i], 2.0 * t1[k]->v[i], 1e-9 * (1.0 + std::fabs(t1[k]->v[i])));
}

TEST(Forward, BucketProbabilitiesSumToOne) {
    const PfnConfig cfg = small_config();
    const PfnModel model = init(cfg);
    const Batch batch = random_batch(cfg, 10, 4);
    const ForwardResult res = forward(model, batch.ctx_x, batch.ctx_y, batch.qry_x);
    ASSERT_EQ(res.distributions.size(), static_cast<size_t>(cfg.query_rows));
    for (const auto& dist : res.distributions) {
        double sum = 0.0;
        for (double p : dist.probabilities) sum += p;
        EXPECT_NEAR(sum, 1.0, 1e-6);
        for (size_t e = 1; e < dist.bucket_edges.size(); ++e)
            EXPECT_LT(dist.bucket_edges[e - 1], dist.bucket_edges[e]);
    }
    EXPECT_EQ(res.row_embeddings.rows(),
              static_cast<size_t>(cfg.context_rows + cfg.query_rows));
}

TEST(Forward, InvariantToContextPermutation) {
    const PfnConfig cfg = small_config();
    const PfnModel model = init(cfg);
    const Batch batch = random_batch(cfg, 10, 5);

    Rng rng(17);
    std::vector<size_t> perm(batch.ctx_x.rows());
    std::iota(perm.begin(), perm.end(), size_t{0});
    rng.shuffle(perm);
    MatD ctx_perm(batch.ctx_x.rows(), batch.ctx_x.cols());
    std::vector<double> y_perm(batch.ctx_y.size());
    for (size_t i = 0; i < perm.size(); ++i) {
        for (size_t c = 0; c < batch.ctx_x.cols(); ++c) ctx_perm(i, c) = batch.ctx_x(perm[i], c);
        y_perm[i] = batch.ctx_y[perm[i]];
    }

    const ForwardResult a = forward(model, batch.ctx_x, batch.ctx_y, batch.qry_x);
    const ForwardResult p = forward(model, ctx_perm, y_perm, batch.qry_x);
    for (size_t qi = 0; qi < a.distributions.size(); ++qi)
        for (size_t k = 0; k < a.distributions[qi].probabilities.size(); ++k)
            EXPECT_NEAR(a.distributions[qi].probabilities[k],
                        p.distributions[qi].probabilities[k], 1e-5);
}

TEST(Forward, QueryRowsAreIndependentOfEachOther) {
    const PfnConfig cfg = small_config();
    const PfnModel model = init(cfg);
    const Batch batch = random_batch(cfg, 10, 6);

    // Reverse the query order; each query's own distribution must not move.
    MatD qry_rev(batch.qry_x.rows(), batch.qry_x.cols());
    for (size_t r = 0; r < batch.qry_x.rows(); ++r)
        for (size_t c = 0; c < batch.qry_x.cols(); ++c)
            qry_rev(r, c) = batch.qry_x(batch.qry_x.rows() - 1 - r, c);

    const ForwardResult a = forward(model, batch.ctx_x, batch.ctx_y, batch.qry_x);
    const ForwardResult b = forward(model, batch.ctx_x, batch.ctx_y, qry_rev);
    const size_t nq = batch.qry_x.rows();
    for (size_t qi = 0; qi < nq; ++qi)
        for (size_t k = 0; k < a.distributions[qi].probabilities.size(); ++k)
            EXPECT_NEAR(a.distributions[qi].probabilities[k],
                        b.distributions[nq - 1 - qi].probabilities[k], 1e-5);
}

TEST(Forward, WidthAndContextValidation) {
    const PfnConfig cfg = small_config();
    const PfnModel model = init(cfg);
    Batch batch = random_batch(cfg, cfg.max_features + 1, 8);
    EXPECT_THROW(forward(model, batch.ctx_x, batch.ctx_y, batch.qry_x), Error);
    const Batch ok = random_batch(cfg, 4, 8);
    EXPECT_THROW(forward(model, MatD(0, 4), std::vector<double>{}, ok.qry_x), Error);
}

TEST(PointEstimate, TrivialCases) {
    PredictiveDistribution dist;
    dist.bucket_edges = {0.0, 1.0};
    dist.probabilities = {1.0};
    EXPECT_DOUBLE_EQ(point_estimate(dist), 0.5);

    dist.bucket_edges = {-2.0, -1.0, 1.0, 2.0};
    dist.probabilities = {0.25, 0.5, 0.25};
    EXPECT_DOUBLE_EQ(point_estimate(dist), 0.0);  // symmetric about zero

    dist.bucket_edges = {-1.5, -0.5, 0.5, 1.5};
    dist.probabilities = {0.25, 0.0, 0.75};
    EXPECT_DOUBLE_EQ(point_estimate(dist), 0.25 * -1.0 + 0.75 * 1.0);
}

TEST(Embed, DimensionAndRowCountGate) {
    PfnConfig cfg;  // default d_model = 192
    cfg.layers = 1;
    cfg.heads = 4;
    const PfnModel model = init(cfg);
    procgen::PriorConfig prior;
    prior.feature_count_range = {3, 3};
    const auto task = procgen::materialize(procgen::sample_spec(prior, 3));
    const DatasetEmbedding emb = embed_dataset(model, task.dataset);
    EXPECT_EQ(emb.values.size(), 192u);
    for (double v : emb.values) EXPECT_TRUE(std::isfinite(v));

    procgen::PriorConfig small = prior;
    small.rows = 512;
    const auto short_task = procgen::materialize(procgen::sample_spec(small, 3));
    EXPECT_THROW(embed_dataset(model, short_task.dataset), Error);
}

TEST(Embed, RowPermutationInvariance) {
    PfnConfig cfg = small_config();
    const PfnModel model = init(cfg);
    procgen::PriorConfig prior;
    prior.feature_count_range = {4, 4};
    prior.rows = kStandardRows;
    const auto task = procgen::materialize(procgen::sample_spec(prior, 11));

    Dataset shuffled = task.dataset;
    Rng rng(5);
    std::vector<size_t> perm(shuffled.rows());
    std::iota(perm.begin(), perm.end(), size_t{0});
    rng.shuffle(perm);
    for (size_t i = 0; i < perm.size(); ++i) {
        for (size_t c = 0; c < shuffled.feature_count(); ++c)
            shuffled.features(i, c) = task.dataset.features(perm[i], c);
        shuffled.target[i] = task.dataset.target[perm[i]];
    }
    const DatasetEmbedding a = embed_dataset(model, task.dataset);
    const DatasetEmbedding b = embed_dataset(model, shuffled);
    for (size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-5);
}

TEST(Embed, DuplicationLayoutInvariance) {
    // 1024 rows made of two copies of 512 rows embed identically regardless
    // of how the copies are arranged (mean pooling + context-permutation
    // equivariance).
    const PfnConfig cfg = small_config();
    const PfnModel model = init(cfg);
    Rng rng(23);
    const size_t half = kStandardRows / 2;
    MatD block(half, 4);
    std::vector<double> target(half);
    for (size_t r = 0; r < half; ++r) {
        for (size_t c = 0; c < 4; ++c) block(r, c) = rng.normal();
        target[r] = rng.normal();
    }
    MatD stacked(kStandardRows, 4);
    std::vector<double> y_stacked(kStandardRows);
    MatD interleaved(kStandardRows, 4);
    std::vector<double> y_inter(kStandardRows);
    for (size_t r = 0; r < half; ++r) {
        for (size_t c = 0; c < 4; ++c) {
            stacked(r, c) = block(r, c);
            stacked(half + r, c) = block(r, c);
            interleaved(2 * r, c) = block(r, c);
            interleaved(2 * r + 1, c) = block(r, c);
        }
        y_stacked[r] = y_stacked[half + r] = target[r];
        y_inter[2 * r] = y_inter[2 * r + 1] = target[r];
    }
    const Dataset a = testutil::make_dataset(stacked, y_stacked);
    const Dataset b = testutil::make_dataset(interleaved, y_inter);
    const DatasetEmbedding ea = embed_dataset(model, a);
    const DatasetEmbedding eb = embed_dataset(model, b);
    for (size_t i = 0; i < ea.values.size(); ++i) EXPECT_NEAR(ea.values[i], eb.values[i], 1e-5);
}

TEST(Checkpoint, BitExactRoundTrip) {
    testutil::TempDir dir("ckpt");
    PfnConfig cfg = small_config();
    cfg.steps = 2;
    const PretrainResult trained = pretrain(cfg, small_prior());
    const auto p1 = dir.path() / "model.ckpt";
    const auto p2 = dir.path() / "model2.ckpt";
    save_checkpoint(p1, trained.model, "m-42");
    const PfnModel loaded = load_checkpoint(p1);
    EXPECT_EQ(weights_hash(loaded), weights_hash(trained.model));
    EXPECT_EQ(loaded.provenance.kind, "base-pretrain");
    save_checkpoint(p2, loaded, "m-42");
    EXPECT_EQ(io::read_file(p1), io::read_file(p2));
}

TEST(Pretrain, ZeroStepsReturnsInitializedModel) {
    PfnConfig cfg = small_config();
    cfg.steps = 0;
    const PretrainResult result = pretrain(cfg, small_prior());
    EXPECT_EQ(weights_hash(result.model), weights_hash(init(cfg)));
    EXPECT_TRUE(result.loss_trace.empty());
}

TEST(Pretrain, DeterministicAcrossRuns) {
    PfnConfig cfg = small_config();
    const PretrainResult a = pretrain(cfg, small_prior());
    const PretrainResult b = pretrain(cfg, small_prior());
    EXPECT_EQ(weights_hash(a.model), weights_hash(b.model));
    EXPECT_EQ(a.loss_trace, b.loss_trace);
    EXPECT_EQ(a.loss_trace.size(), 3u);
}

TEST(ContinuedPretrain, EpochZeroIsIdentityAndInputUntouched) {
    PfnConfig cfg = small_config();
    cfg.steps = 1;
    const PretrainResult base = pretrain(cfg, small_prior());
    const Digest128 base_hash = weights_hash(base.model);
    const auto tasks = procgen::generate_batch(small_prior(), 3, 77);

    const PfnModel same = continued_pretrain(base.model, tasks, 0);
    EXPECT_EQ(weights_hash(same), base_hash);
    EXPECT_EQ(same.provenance.kind, "continued-pretrain");
    EXPECT_TRUE(same.provenance.synthetic_only);

    const PfnModel adapted = continued_pretrain(base.model, tasks, 1);
    EXPECT_FALSE(weights_hash(adapted) == base_hash);
    EXPECT_EQ(weights_hash(base.model), base_hash);  // input unmodified
    EXPECT_EQ(adapted.provenance.finetune_tasks, 3);

    EXPECT_THROW(continued_pretrain(base.model, std::vector<procgen::SyntheticTask>{}, 1), Error);
}

TEST(QueryMse, ConstantPredictorBaselineIsAboutOne) {
    // On z-scored targets the constant-mean predictor has MSE ~ 1; an
    // untrained model should not be wildly off that scale either.
    PfnConfig cfg = small_config();
    const PfnModel model = init(cfg);
    const auto task = procgen::materialize(procgen::sample_spec(small_prior(), 5));
    const double mse = query_mse(model, task.dataset, 3);
    EXPECT_TRUE(std::isfinite(mse));
    EXPECT_LT(mse, 25.0);
}
