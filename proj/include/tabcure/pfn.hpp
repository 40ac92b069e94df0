#pragma once

// A miniature prior-data-fitted network for in-context tabular regression.
//
// Rows (feature vectors zero-padded to max_features) are encoded by a shared
// MLP; context rows additionally add y * y_embed, query rows add a learned
// placeholder vector. A pre-LN transformer stack attends with a mask where
// context rows see all context rows and query rows see the context plus
// themselves, which keeps query predictions mutually independent and
// permutation-equivariant over the context. A bucket head maps each query's
// final representation to a categorical distribution over target intervals
// whose edges are empirical quantiles of the context targets. Dataset
// embeddings are the mean over rows of the final-layer representations.
//
// Everything is templated on the scalar type: the production model stores
// float32 parameters (checkpoints round-trip bit-exactly) while the gradient
// check instantiates the identical code in double precision. Reductions that
// feed invariants (softmax sums, LayerNorm statistics, attention averaging,
// mean pooling, losses) always accumulate in double.

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tabcure/evalharness.hpp"
#include "tabcure/procgen.hpp"

namespace tabcure::pfn {

struct PfnConfig {
    int d_model = 192;
    int layers = 2;
    int heads = 4;
    int ffn_mult = 2;
    int buckets = 32;
    int max_features = 100;
    int context_rows = 256;
    int query_rows = 128;
    double learning_rate = 1e-3;
    int steps = 2000;
    int batch_tasks = 2;
    uint64_t seed = 0x5EED;

    int head_dim() const { return d_model / heads; }
    int ffn_dim() const { return d_model * ffn_mult; }

    void validate() const {
        if (d_model < 1 || layers < 1 || heads < 1 || ffn_mult < 1)
            throw ConfigError("pfn: dimensions must be positive");
        if (d_model % heads != 0) throw ConfigError("pfn: d_model must be divisible by heads");
        if (buckets < 2) throw ConfigError("pfn: buckets must be >= 2");
        if (max_features < 1) throw ConfigError("pfn: max_features must be >= 1");
        if (context_rows < 1 || query_rows < 0)
            throw ConfigError("pfn: context_rows must be >= 1");
        if (context_rows + query_rows > static_cast<int>(kStandardRows))
            throw ConfigError("pfn: context_rows + query_rows must be <= 1024");
        if (learning_rate <= 0.0) throw ConfigError("pfn: learning_rate must be positive");
        if (steps < 0 || batch_tasks < 1) throw ConfigError("pfn: bad training settings");
    }
};

struct Provenance {
    std::string kind = "base-pretrain";  // or "continued-pretrain"
    long pretrain_steps = 0;
    long finetune_epochs = 0;
    long finetune_tasks = 0;
    uint64_t pretrain_seed = 0;
    uint64_t finetune_seed = 0;
    bool synthetic_only = true;  // no real data is ever used to update weights
};

template <typename S>
struct Tensor {
    std::vector<int> shape;
    std::vector<S> v;

    void init(std::vector<int> dims) {
        shape = std::move(dims);
        size_t total = 1;
        for (int d : shape) total *= static_cast<size_t>(d);
        v.assign(total, S(0));
    }

    size_t size() const { return v.size(); }
    S* data() { return v.data(); }
    const S* data() const { return v.data(); }
    // Row pointer for 2-D tensors stored row-major.
    S* row(size_t r) { return v.data() + r * static_cast<size_t>(shape[1]); }
    const S* row(size_t r) const { return v.data() + r * static_cast<size_t>(shape[1]); }
};

template <typename S>
struct LayerWeights {
    Tensor<S> ln1_g, ln1_b;
    Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<S> ln2_g, ln2_b;
    Tensor<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <typename S>
struct Weights {
    Tensor<S> enc_w1, enc_b1, enc_w2, enc_b2;
    Tensor<S> y_embed, query_token;
    std::vector<LayerWeights<S>> layers;
    Tensor<S> lnf_g, lnf_b;
    Tensor<S> head_w, head_b;

    template <typename Fn>
    void for_each(Fn&& fn) {
        fn("enc_w1", enc_w1);
        fn("enc_b1", enc_b1);
        fn("enc_w2", enc_w2);
        fn("enc_b2", enc_b2);
        fn("y_embed", y_embed);
        fn("query_token", query_token);
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            auto& lw = layers[l];
            fn(p + "ln1_g", lw.ln1_g);
            fn(p + "ln1_b", lw.ln1_b);
            fn(p + "wq", lw.wq);
            fn(p + "bq", lw.bq);
            fn(p + "wk", lw.wk);
            fn(p + "bk", lw.bk);
            fn(p + "wv", lw.wv);
            fn(p + "bv", lw.bv);
            fn(p + "wo", lw.wo);
            fn(p + "bo", lw.bo);
            fn(p + "ln2_g", lw.ln2_g);
            fn(p + "ln2_b", lw.ln2_b);
            fn(p + "ffn_w1", lw.ffn_w1);
            fn(p + "ffn_b1", lw.ffn_b1);
            fn(p + "ffn_w2", lw.ffn_w2);
            fn(p + "ffn_b2", lw.ffn_b2);
        }
        fn("lnf_g", lnf_g);
        fn("lnf_b", lnf_b);
        fn("head_w", head_w);
        fn("head_b", head_b);
    }

    template <typename Fn>
    void for_each(Fn&& fn) const {
        const_cast<Weights*>(this)->for_each(
            [&](const std::string& name, Tensor<S>& t) { fn(name, static_cast<const Tensor<S>&>(t)); });
    }

    size_t param_count() const {
        size_t total = 0;
        for_each([&](const std::string&, const Tensor<S>& t) { total += t.size(); });
        return total;
    }
};

template <typename S>
struct ModelT {
    PfnConfig config;
    Weights<S> weights;
    Provenance provenance;
};

using PfnModel = ModelT<float>;

struct PredictiveDistribution {
    std::vector<double> bucket_edges;    // buckets + 1, strictly ascending
    std::vector<double> probabilities;   // buckets, sums to 1
};

inline double point_estimate(const PredictiveDistribution& dist) {
    double s = 0.0;
    for (size_t b = 0; b < dist.probabilities.size(); ++b)
        s += dist.probabilities[b] * 0.5 * (dist.bucket_edges[b] + dist.bucket_edges[b + 1]);
    return s;
}

struct ForwardResult {
    std::vector<PredictiveDistribution> distributions;  // one per query row
    MatD row_embeddings;                                // all rows (context then query)
};

struct DatasetEmbedding {
    std::vector<double> values;
    Digest128 dataset_hash;
    std::string model_id;
};

// ---------------------------------------------------------------------------
// Init
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void fill_normal(Tensor<S>& t, Rng& rng, double scale) {
    for (auto& v : t.v) v = static_cast<S>(rng.normal() * scale);
}

}  // namespace detail

template <typename S>
ModelT<S> init_model(const PfnConfig& cfg) {
    cfg.validate();
    const int d = cfg.d_model, fm = cfg.max_features, f = cfg.ffn_dim(), b = cfg.buckets;
    ModelT<S> m;
    m.config = cfg;
    Weights<S>& w = m.weights;
    w.enc_w1.init({d, fm});
    w.enc_b1.init({d});
    w.enc_w2.init({d, d});
    w.enc_b2.init({d});
    w.y_embed.init({d});
    w.query_token.init({d});
    w.layers.resize(static_cast<size_t>(cfg.layers));
    for (auto& lw : w.layers) {
        lw.ln1_g.init({d});
        lw.ln1_b.init({d});
        lw.wq.init({d, d});
        lw.bq.init({d});
        lw.wk.init({d, d});
        lw.bk.init({d});
        lw.wv.init({d, d});
        lw.bv.init({d});
        lw.wo.init({d, d});
        lw.bo.init({d});
        lw.ln2_g.init({d});
        lw.ln2_b.init({d});
        lw.ffn_w1.init({f, d});
        lw.ffn_b1.init({f});
        lw.ffn_w2.init({d, f});
        lw.ffn_b2.init({d});
    }
    w.lnf_g.init({d});
    w.lnf_b.init({d});
    w.head_w.init({b, d});
    w.head_b.init({b});

    Rng rng = Rng::stream(cfg.seed, 0x1417);
    const double residual_scale = 1.0 / std::sqrt(2.0 * cfg.layers);
    detail::fill_normal(w.enc_w1, rng, 1.0 / std::sqrt(static_cast<double>(fm)));
    detail::fill_normal(w.enc_w2, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    detail::fill_normal(w.y_embed, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    detail::fill_normal(w.query_token, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    for (auto& lw : w.layers) {
        std::fill(lw.ln1_g.v.begin(), lw.ln1_g.v.end(), S(1));
        std::fill(lw.ln2_g.v.begin(), lw.ln2_g.v.end(), S(1));
        const double proj = 1.0 / std::sqrt(static_cast<double>(d));
        detail::fill_normal(lw.wq, rng, proj);
        detail::fill_normal(lw.wk, rng, proj);
        detail::fill_normal(lw.wv, rng, proj);
        detail::fill_normal(lw.wo, rng, proj * residual_scale);
        detail::fill_normal(lw.ffn_w1, rng, proj);
        detail::fill_normal(lw.ffn_w2, rng, residual_scale / std::sqrt(static_cast<double>(f)));
    }
    std::fill(w.lnf_g.v.begin(), w.lnf_g.v.end(), S(1));
    detail::fill_normal(w.head_w, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    return m;
}

inline PfnModel init(const PfnConfig& cfg) { return init_model<float>(cfg); }

// ---------------------------------------------------------------------------
// Bucket edges from context-target quantiles
// ---------------------------------------------------------------------------

inline std::vector<double> bucket_edges_from_context(std::span<const double> context_targets,
                                                     int buckets) {
    if (context_targets.empty()) throw Error("bucket edges need a non-empty context");
    std::vector<double> sorted(context_targets.begin(), context_targets.end());
    std::sort(sorted.begin(), sorted.end());
    const size_t n = sorted.size();
    std::vector<double> edges(static_cast<size_t>(buckets) + 1);
    for (int j = 0; j <= buckets; ++j) {
        const double pos = static_cast<double>(j) / buckets * static_cast<double>(n - 1);
        const auto lo = static_cast<size_t>(pos);
        const size_t hi = std::min(lo + 1, n - 1);
        const double frac = pos - static_cast<double>(lo);
        edges[static_cast<size_t>(j)] = sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
    }
    // Widen the outer edges so extreme context values sit strictly inside,
    // then force strict ascent through tied quantiles.
    const double span = edges.back() - edges.front();
    const double margin = 0.5 * span / buckets + 1e-9;
    edges.front() -= margin;
    edges.back() += margin;
    for (size_t j = 1; j < edges.size(); ++j) {
        const double min_gap = 1e-9 + 1e-7 * std::max(1.0, std::fabs(edges[j - 1]));
        if (edges[j] <= edges[j - 1] + min_gap) edges[j] = edges[j - 1] + min_gap;
    }
    return edges;
}

inline int bucket_of(const std::vector<double>& edges, double y) {
    const int buckets = static_cast<int>(edges.size()) - 1;
    if (y <= edges.front()) return 0;
    if (y >= edges.back()) return buckets - 1;
    const auto it = std::upper_bound(edges.begin(), edges.end(), y);
    int idx = static_cast<int>(it - edges.begin()) - 1;
    return std::clamp(idx, 0, buckets - 1);
}

// ---------------------------------------------------------------------------
// Forward / backward core
// ---------------------------------------------------------------------------

namespace detail {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476)); }

inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865476));
    const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
    return cdf + x * pdf;
}

// Dot product over eight independent lanes with a fixed reduction tree: the
// summation order is deterministic and the lanes vectorize (a plain running
// sum cannot be reassociated under strict FP semantics). The float overload
// uses GCC/Clang vector extensions; the generic version keeps the identical
// lane/reduction order.
#if defined(__GNUC__) || defined(__clang__)
inline float dot(const float* a, const float* b, int n) {
    using vf8 = float __attribute__((vector_size(32)));
    vf8 acc = {0, 0, 0, 0, 0, 0, 0, 0};
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        vf8 va, vb;
        std::memcpy(&va, a + i, sizeof(va));
        std::memcpy(&vb, b + i, sizeof(vb));
        acc += va * vb;
    }
    float tail = 0.0f;
    for (; i < n; ++i) tail += a[i] * b[i];
    return (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) +
           tail;
}
#endif

template <typename S>
inline S dot(const S* a, const S* b, int n) {
    S acc[8] = {};
    int i = 0;
    for (; i + 8 <= n; i += 8)
        for (int k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
    S tail = S(0);
    for (; i < n; ++i) tail += a[i] * b[i];
    return (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) +
           tail;
}

// out[r,:] = w * in[r,:] + b, with w [rows_out x cols_in] row-major.
template <typename S>
void linear(const Tensor<S>& w, const Tensor<S>& b, const S* in, S* out, int n, int cols_in,
            int rows_out) {
    for (int r = 0; r < n; ++r) {
        const S* x = in + static_cast<size_t>(r) * cols_in;
        S* y = out + static_cast<size_t>(r) * rows_out;
        for (int o = 0; o < rows_out; ++o)
            y[o] = b.data()[o] + dot(w.data() + static_cast<size_t>(o) * cols_in, x, cols_in);
    }
}

// Backward of the linear above: accumulates dW, dB and writes d_in.
template <typename S>
void linear_backward(const Tensor<S>& w, const S* in, const S* d_out, int n, int cols_in,
                     int rows_out, Tensor<double>& d_w, Tensor<double>& d_b, S* d_in) {
    for (int r = 0; r < n; ++r) {
        const S* x = in + static_cast<size_t>(r) * cols_in;
        const S* dy = d_out + static_cast<size_t>(r) * rows_out;
        for (int o = 0; o < rows_out; ++o) {
            const double g = static_cast<double>(dy[o]);
            if (g == 0.0) continue;
            double* dwr = d_w.data() + static_cast<size_t>(o) * cols_in;
            for (int i = 0; i < cols_in; ++i) dwr[i] += g * static_cast<double>(x[i]);
            d_b.data()[o] += g;
        }
    }
    if (!d_in) return;
    for (int r = 0; r < n; ++r) {
        const S* dy = d_out + static_cast<size_t>(r) * rows_out;
        S* dx = d_in + static_cast<size_t>(r) * cols_in;
        std::fill(dx, dx + cols_in, S(0));
        for (int o = 0; o < rows_out; ++o) {
            const S g = dy[o];
            if (g == S(0)) continue;
            const S* wr = w.data() + static_cast<size_t>(o) * cols_in;
            for (int i = 0; i < cols_in; ++i) dx[i] += g * wr[i];
        }
    }
}

// LayerNorm with double statistics; stores xhat and 1/sd for backward.
template <typename S>
void layernorm(const Tensor<S>& g, const Tensor<S>& b, const S* in, S* out, S* xhat, double* istd,
               int n, int d) {
    for (int r = 0; r < n; ++r) {
        const S* x = in + static_cast<size_t>(r) * d;
        double mu = 0.0;
        for (int i = 0; i < d; ++i) mu += static_cast<double>(x[i]);
        mu /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) {
            const double dev = static_cast<double>(x[i]) - mu;
            var += dev * dev;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        istd[r] = inv;
        S* xh = xhat + static_cast<size_t>(r) * d;
        S* y = out + static_cast<size_t>(r) * d;
        for (int i = 0; i < d; ++i) {
            const double h = (static_cast<double>(x[i]) - mu) * inv;
            xh[i] = static_cast<S>(h);
            y[i] = static_cast<S>(h * static_cast<double>(g.data()[i]) +
                                  static_cast<double>(b.data()[i]));
        }
    }
}

template <typename S>
void layernorm_backward(const Tensor<S>& g, const S* xhat, const double* istd, const S* d_out,
                        int n, int d, Tensor<double>& d_g, Tensor<double>& d_b, S* d_in_accum) {
    for (int r = 0; r < n; ++r) {
        const S* xh = xhat + static_cast<size_t>(r) * d;
        const S* dy = d_out + static_cast<size_t>(r) * d;
        double m1 = 0.0, m2 = 0.0;
        for (int i = 0; i < d; ++i) {
            const double dxh = static_cast<double>(dy[i]) * static_cast<double>(g.data()[i]);
            m1 += dxh;
            m2 += dxh * static_cast<double>(xh[i]);
            d_g.data()[i] += static_cast<double>(dy[i]) * static_cast<double>(xh[i]);
            d_b.data()[i] += static_cast<double>(dy[i]);
        }
        m1 /= d;
        m2 /= d;
        S* dx = d_in_accum + static_cast<size_t>(r) * d;
        for (int i = 0; i < d; ++i) {
            const double dxh = static_cast<double>(dy[i]) * static_cast<double>(g.data()[i]);
            dx[i] += static_cast<S>(istd[r] * (dxh - m1 - static_cast<double>(xh[i]) * m2));
        }
    }
}

// Per-layer activation stash for one forward pass.
template <typename S>
struct LayerCache {
    std::vector<S> u1, q, k, v, ctx, h_res1, xhat1, xhat2, u2, p1, a2;
    std::vector<double> istd1, istd2;
    std::vector<S> attn;  // [heads][n][n], zero at masked entries (training only)
};

template <typename S>
struct Workspace {
    int n = 0, n_ctx = 0, n_qry = 0, width = 0;
    std::vector<S> x;          // [n x F] raw input copy
    std::vector<double> y_ctx;
    std::vector<S> pre1, a1, h;
    std::vector<LayerCache<S>> layers;
    std::vector<S> xhatf;
    std::vector<double> istdf;
    std::vector<S> rep;        // final representations [n x d]
    std::vector<double> logits, probs;  // [n_qry x B]
    std::vector<double> edges;
};

// The attention mask: row i attends to all context rows, plus itself when it
// is a query row.
template <typename S>
void forward_core(const ModelT<S>& model, const MatD& ctx_x, std::span<const double> ctx_y,
                  const MatD& qry_x, Workspace<S>& ws, bool keep_attn) {
    const PfnConfig& cfg = model.config;
    const Weights<S>& w = model.weights;
    const int n_ctx = static_cast<int>(ctx_x.rows());
    const int n_qry = static_cast<int>(qry_x.rows());
    const int n = n_ctx + n_qry;
    const int width = static_cast<int>(ctx_x.cols());
    const int d = cfg.d_model, heads = cfg.heads, hd = cfg.head_dim(), f = cfg.ffn_dim();

    if (n_ctx == 0) throw Error("pfn forward: empty context");
    if (width > cfg.max_features)
        throw Error("pfn forward: feature width " + std::to_string(width) + " exceeds max " +
                    std::to_string(cfg.max_features));
    if (n_qry > 0 && static_cast<int>(qry_x.cols()) != width)
        throw Error("pfn forward: context/query width mismatch");
    if (static_cast<int>(ctx_y.size()) != n_ctx)
        throw Error("pfn forward: context target length mismatch");

    ws.n = n;
    ws.n_ctx = n_ctx;
    ws.n_qry = n_qry;
    ws.width = width;
    ws.x.assign(static_cast<size_t>(n) * width, S(0));
    for (int r = 0; r < n_ctx; ++r)
        for (int c = 0; c < width; ++c)
            ws.x[static_cast<size_t>(r) * width + c] = static_cast<S>(ctx_x(r, c));
    for (int r = 0; r < n_qry; ++r)
        for (int c = 0; c < width; ++c)
            ws.x[static_cast<size_t>(n_ctx + r) * width + c] = static_cast<S>(qry_x(r, c));
    ws.y_ctx.assign(ctx_y.begin(), ctx_y.end());

    // Row encoder. enc_w1 is [d x max_features]; zero padding means only the
    // first `width` columns contribute.
    ws.pre1.assign(static_cast<size_t>(n) * d, S(0));
    for (int r = 0; r < n; ++r) {
        const S* x = ws.x.data() + static_cast<size_t>(r) * width;
        S* y = ws.pre1.data() + static_cast<size_t>(r) * d;
        for (int o = 0; o < d; ++o)
            y[o] = w.enc_b1.data()[o] +
                   dot(w.enc_w1.data() + static_cast<size_t>(o) * cfg.max_features, x, width);
    }
    ws.a1.resize(ws.pre1.size());
    for (size_t i = 0; i < ws.pre1.size(); ++i)
        ws.a1[i] = static_cast<S>(gelu(static_cast<double>(ws.pre1[i])));
    ws.h.assign(static_cast<size_t>(n) * d, S(0));
    linear(w.enc_w2, w.enc_b2, ws.a1.data(), ws.h.data(), n, d, d);
    for (int r = 0; r < n; ++r) {
        S* h = ws.h.data() + static_cast<size_t>(r) * d;
        if (r < n_ctx) {
            const S y = static_cast<S>(ws.y_ctx[static_cast<size_t>(r)]);
            for (int i = 0; i < d; ++i) h[i] += y * w.y_embed.data()[i];
        } else {
            for (int i = 0; i < d; ++i) h[i] += w.query_token.data()[i];
        }
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    ws.layers.resize(w.layers.size());
    std::vector<double> escore(static_cast<size_t>(n_ctx) + 1);
    std::vector<double> acc(static_cast<size_t>(hd));
    for (size_t l = 0; l < w.layers.size(); ++l) {
        const LayerWeights<S>& lw = w.layers[l];
        LayerCache<S>& lc = ws.layers[l];
        const size_t nd = static_cast<size_t>(n) * d;
        lc.u1.resize(nd);
        lc.xhat1.resize(nd);
        lc.istd1.resize(static_cast<size_t>(n));
        layernorm(lw.ln1_g, lw.ln1_b, ws.h.data(), lc.u1.data(), lc.xhat1.data(), lc.istd1.data(), n, d);

        lc.q.resize(nd);
        lc.k.resize(nd);
        lc.v.resize(nd);
        linear(lw.wq, lw.bq, lc.u1.data(), lc.q.data(), n, d, d);
        linear(lw.wk, lw.bk, lc.u1.data(), lc.k.data(), n, d, d);
        linear(lw.wv, lw.bv, lc.u1.data(), lc.v.data(), n, d, d);

        lc.ctx.assign(nd, S(0));
        if (keep_attn)
            lc.attn.assign(static_cast<size_t>(heads) * n * n, S(0));
        for (int head = 0; head < heads; ++head) {
            const int off = head * hd;
            for (int i = 0; i < n; ++i) {
                const S* qi = lc.q.data() + static_cast<size_t>(i) * d + off;
                const int self = i >= n_ctx ? i : -1;  // context rows are already in [0, n_ctx)
                const int m = n_ctx + (self >= 0 ? 1 : 0);
                // scores over allowed keys
                double smax = -1e300;
                for (int jj = 0; jj < m; ++jj) {
                    const int j = jj < n_ctx ? jj : self;
                    const S* kj = lc.k.data() + static_cast<size_t>(j) * d + off;
                    const double s = static_cast<double>(dot(qi, kj, hd)) * scale;
                    escore[static_cast<size_t>(jj)] = s;
                    smax = std::max(smax, s);
                }
                double esum = 0.0;
                for (int jj = 0; jj < m; ++jj) {
                    const double e = std::exp(escore[static_cast<size_t>(jj)] - smax);
                    escore[static_cast<size_t>(jj)] = e;
                    esum += e;
                }
                const double inv_sum = 1.0 / esum;
                std::fill(acc.begin(), acc.end(), 0.0);
                for (int jj = 0; jj < m; ++jj) {
                    const int j = jj < n_ctx ? jj : self;
                    const double a = escore[static_cast<size_t>(jj)] * inv_sum;
                    if (keep_attn)
                        lc.attn[(static_cast<size_t>(head) * n + i) * n + j] = static_cast<S>(a);
                    const S* vj = lc.v.data() + static_cast<size_t>(j) * d + off;
                    for (int t = 0; t < hd; ++t) acc[static_cast<size_t>(t)] += a * static_cast<double>(vj[t]);
                }
                S* out = lc.ctx.data() + static_cast<size_t>(i) * d + off;
                for (int t = 0; t < hd; ++t) out[t] = static_cast<S>(acc[static_cast<size_t>(t)]);
            }
        }

        lc.h_res1.resize(nd);
        {
            std::vector<S> o(nd);
            linear(lw.wo, lw.bo, lc.ctx.data(), o.data(), n, d, d);
            for (size_t i = 0; i < nd; ++i) lc.h_res1[i] = ws.h[i] + o[i];
        }

        lc.u2.resize(nd);
        lc.xhat2.resize(nd);
        lc.istd2.resize(static_cast<size_t>(n));
        layernorm(lw.ln2_g, lw.ln2_b, lc.h_res1.data(), lc.u2.data(), lc.xhat2.data(),
                  lc.istd2.data(), n, d);
        lc.p1.resize(static_cast<size_t>(n) * f);
        linear(lw.ffn_w1, lw.ffn_b1, lc.u2.data(), lc.p1.data(), n, d, f);
        lc.a2.resize(lc.p1.size());
        for (size_t i = 0; i < lc.p1.size(); ++i)
            lc.a2[i] = static_cast<S>(gelu(static_cast<double>(lc.p1[i])));
        {
            std::vector<S> p2(nd);
            linear(lw.ffn_w2, lw.ffn_b2, lc.a2.data(), p2.data(), n, f, d);
            for (size_t i = 0; i < nd; ++i) ws.h[i] = lc.h_res1[i] + p2[i];
        }
    }

    ws.xhatf.resize(static_cast<size_t>(n) * d);
    ws.istdf.resize(static_cast<size_t>(n));
    ws.rep.resize(static_cast<size_t>(n) * d);
    layernorm(w.lnf_g, w.lnf_b, ws.h.data(), ws.rep.data(), ws.xhatf.data(), ws.istdf.data(), n, d);

    // Bucket head over query rows.
    const int b = cfg.buckets;
    ws.edges = bucket_edges_from_context(ws.y_ctx, b);
    ws.logits.assign(static_cast<size_t>(n_qry) * b, 0.0);
    ws.probs.assign(static_cast<size_t>(n_qry) * b, 0.0);
    for (int qi = 0; qi < n_qry; ++qi) {
        const S* r = ws.rep.data() + static_cast<size_t>(n_ctx + qi) * d;
        double* lg = ws.logits.data() + static_cast<size_t>(qi) * b;
        for (int o = 0; o < b; ++o) {
            const S* wr = w.head_w.data() + static_cast<size_t>(o) * d;
            double a2 = static_cast<double>(w.head_b.data()[o]);
            for (int i = 0; i < d; ++i) a2 += static_cast<double>(wr[i]) * static_cast<double>(r[i]);
            lg[o] = a2;
        }
        double mx = lg[0];
        for (int o = 1; o < b; ++o) mx = std::max(mx, lg[o]);
        double sum = 0.0;
        double* pr = ws.probs.data() + static_cast<size_t>(qi) * b;
        for (int o = 0; o < b; ++o) {
            pr[o] = std::exp(lg[o] - mx);
            sum += pr[o];
        }
        for (int o = 0; o < b; ++o) pr[o] /= sum;
    }
}

// Cross-entropy of query targets under the bucket distributions.
template <typename S>
double loss_from_workspace(const Workspace<S>& ws, std::span<const double> qry_y,
                           const PfnConfig& cfg, std::vector<int>* target_buckets = nullptr) {
    const int b = cfg.buckets;
    if (static_cast<int>(qry_y.size()) != ws.n_qry) throw Error("pfn loss: query target mismatch");
    double loss = 0.0;
    if (target_buckets) target_buckets->resize(static_cast<size_t>(ws.n_qry));
    for (int qi = 0; qi < ws.n_qry; ++qi) {
        const int t = bucket_of(ws.edges, qry_y[static_cast<size_t>(qi)]);
        if (target_buckets) (*target_buckets)[static_cast<size_t>(qi)] = t;
        loss -= std::log(std::max(ws.probs[static_cast<size_t>(qi) * b + t], 1e-300));
    }
    return loss / std::max(1, ws.n_qry);
}

template <typename S>
void backward_core(const ModelT<S>& model, Workspace<S>& ws, std::span<const int> target_buckets,
                   double loss_scale, Weights<double>& grads) {
    const PfnConfig& cfg = model.config;
    const Weights<S>& w = model.weights;
    const int n = ws.n, n_ctx = ws.n_ctx, n_qry = ws.n_qry;
    const int d = cfg.d_model, heads = cfg.heads, hd = cfg.head_dim(), f = cfg.ffn_dim();
    const int b = cfg.buckets;
    const size_t nd = static_cast<size_t>(n) * d;

    // d(loss)/d(logits) = (softmax - onehot) * loss_scale / n_qry
    std::vector<S> dlogits(static_cast<size_t>(n_qry) * b);
    const double inv_q = loss_scale / std::max(1, n_qry);
    for (int qi = 0; qi < n_qry; ++qi) {
        for (int o = 0; o < b; ++o) {
            double g = ws.probs[static_cast<size_t>(qi) * b + o] * inv_q;
            if (o == target_buckets[static_cast<size_t>(qi)]) g -= inv_q;
            dlogits[static_cast<size_t>(qi) * b + o] = static_cast<S>(g);
        }
    }

    std::vector<S> drep(nd, S(0));
    for (int qi = 0; qi < n_qry; ++qi) {
        const S* r = ws.rep.data() + static_cast<size_t>(n_ctx + qi) * d;
        S* dr = drep.data() + static_cast<size_t>(n_ctx + qi) * d;
        const S* dl = dlogits.data() + static_cast<size_t>(qi) * b;
        for (int o = 0; o < b; ++o) {
            const double g = static_cast<double>(dl[o]);
            if (g == 0.0) continue;
            double* dwr = grads.head_w.data() + static_cast<size_t>(o) * d;
            const S* wr = w.head_w.data() + static_cast<size_t>(o) * d;
            for (int i = 0; i < d; ++i) {
                dwr[i] += g * static_cast<double>(r[i]);
                dr[i] += static_cast<S>(g * static_cast<double>(wr[i]));
            }
            grads.head_b.data()[o] += g;
        }
    }

    std::vector<S> dh(nd, S(0));
    layernorm_backward(w.lnf_g, ws.xhatf.data(), ws.istdf.data(), drep.data(), n, d, grads.lnf_g,
                       grads.lnf_b, dh.data());

    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<S> du2(nd), dp1(static_cast<size_t>(n) * f), da2(static_cast<size_t>(n) * f);
    std::vector<S> dres1(nd), dattn_out(nd), dctx(nd), dq(nd), dk(nd), dv(nd), du1(nd);
    std::vector<double> dattn_row(static_cast<size_t>(n));
    for (size_t li = w.layers.size(); li-- > 0;) {
        const LayerWeights<S>& lw = w.layers[li];
        LayerWeights<double>& gw = grads.layers[li];
        LayerCache<S>& lc = ws.layers[li];

        // FFN branch: h_out = h_res1 + ffn_w2 * gelu(ffn_w1 * LN2(h_res1))
        linear_backward(lw.ffn_w2, lc.a2.data(), dh.data(), n, f, d, gw.ffn_w2, gw.ffn_b2, da2.data());
        for (size_t i = 0; i < dp1.size(); ++i)
            dp1[i] = static_cast<S>(static_cast<double>(da2[i]) *
                                    gelu_grad(static_cast<double>(lc.p1[i])));
        linear_backward(lw.ffn_w1, lc.u2.data(), dp1.data(), n, d, f, gw.ffn_w1, gw.ffn_b1, du2.data());
        dres1 = dh;  // residual path
        layernorm_backward(lw.ln2_g, lc.xhat2.data(), lc.istd2.data(), du2.data(), n, d, gw.ln2_g,
                           gw.ln2_b, dres1.data());

        // Attention branch: h_res1 = h_in + wo * ctx
        linear_backward(lw.wo, lc.ctx.data(), dres1.data(), n, d, d, gw.wo, gw.bo, dctx.data());
        std::fill(dq.begin(), dq.end(), S(0));
        std::fill(dk.begin(), dk.end(), S(0));
        std::fill(dv.begin(), dv.end(), S(0));
        for (int head = 0; head < heads; ++head) {
            const int off = head * hd;
            const S* attn = lc.attn.data() + static_cast<size_t>(head) * n * n;
            for (int i = 0; i < n; ++i) {
                const int self = i >= n_ctx ? i : -1;
                const int m = n_ctx + (self >= 0 ? 1 : 0);
                const S* dci = dctx.data() + static_cast<size_t>(i) * d + off;
                const S* ai = attn + static_cast<size_t>(i) * n;
                // dA_ij and the softmax Jacobian
                double sdot = 0.0;
                for (int jj = 0; jj < m; ++jj) {
                    const int j = jj < n_ctx ? jj : self;
                    const S* vj = lc.v.data() + static_cast<size_t>(j) * d + off;
                    const double da = static_cast<double>(dot(dci, vj, hd));
                    dattn_row[static_cast<size_t>(jj)] = da;
                    sdot += da * static_cast<double>(ai[j]);
                }
                const S* qi = lc.q.data() + static_cast<size_t>(i) * d + off;
                S* dqi = dq.data() + static_cast<size_t>(i) * d + off;
                for (int jj = 0; jj < m; ++jj) {
                    const int j = jj < n_ctx ? jj : self;
                    const double a = static_cast<double>(ai[j]);
                    const double ds = a * (dattn_row[static_cast<size_t>(jj)] - sdot) * scale;
                    const S* kj = lc.k.data() + static_cast<size_t>(j) * d + off;
                    S* dkj = dk.data() + static_cast<size_t>(j) * d + off;
                    S* dvj = dv.data() + static_cast<size_t>(j) * d + off;
                    const S ds_s = static_cast<S>(ds);
                    const S a_s = static_cast<S>(a);
                    for (int t = 0; t < hd; ++t) {
                        dqi[t] += ds_s * kj[t];
                        dkj[t] += ds_s * qi[t];
                        dvj[t] += a_s * dci[t];
                    }
                }
            }
        }
        std::fill(du1.begin(), du1.end(), S(0));
        {
            std::vector<S> tmp(nd);
            linear_backward(lw.wq, lc.u1.data(), dq.data(), n, d, d, gw.wq, gw.bq, tmp.data());
            for (size_t i = 0; i < nd; ++i) du1[i] += tmp[i];
            linear_backward(lw.wk, lc.u1.data(), dk.data(), n, d, d, gw.wk, gw.bk, tmp.data());
            for (size_t i = 0; i < nd; ++i) du1[i] += tmp[i];
            linear_backward(lw.wv, lc.u1.data(), dv.data(), n, d, d, gw.wv, gw.bv, tmp.data());
            for (size_t i = 0; i < nd; ++i) du1[i] += tmp[i];
        }
        dh = dres1;  // residual into h_in
        layernorm_backward(lw.ln1_g, lc.xhat1.data(), lc.istd1.data(), du1.data(), n, d, gw.ln1_g,
                           gw.ln1_b, dh.data());
    }

    // Encoder backward.
    for (int r = 0; r < n; ++r) {
        const S* dh0 = dh.data() + static_cast<size_t>(r) * d;
        if (r < n_ctx) {
            const double y = ws.y_ctx[static_cast<size_t>(r)];
            for (int i = 0; i < d; ++i)
                grads.y_embed.data()[i] += y * static_cast<double>(dh0[i]);
        } else {
            for (int i = 0; i < d; ++i)
                grads.query_token.data()[i] += static_cast<double>(dh0[i]);
        }
    }
    std::vector<S> da1(nd);
    linear_backward(w.enc_w2, ws.a1.data(), dh.data(), n, d, d, grads.enc_w2, grads.enc_b2, da1.data());
    std::vector<S> dpre1(nd);
    for (size_t i = 0; i < nd; ++i)
        dpre1[i] = static_cast<S>(static_cast<double>(da1[i]) *
                                  gelu_grad(static_cast<double>(ws.pre1[i])));
    // enc_w1 is [d x max_features] but the input is only `width` wide.
    const int width = ws.width;
    for (int r = 0; r < n; ++r) {
        const S* x = ws.x.data() + static_cast<size_t>(r) * width;
        const S* dy = dpre1.data() + static_cast<size_t>(r) * d;
        for (int o = 0; o < d; ++o) {
            const double g = static_cast<double>(dy[o]);
            if (g == 0.0) continue;
            double* dwr = grads.enc_w1.data() + static_cast<size_t>(o) * cfg.max_features;
            for (int i = 0; i < width; ++i) dwr[i] += g * static_cast<double>(x[i]);
            grads.enc_b1.data()[o] += g;
        }
    }
}

template <typename S>
Weights<double> make_grads(const ModelT<S>& model) {
    Weights<double> g;
    g.enc_w1.init(model.weights.enc_w1.shape);
    g.enc_b1.init(model.weights.enc_b1.shape);
    g.enc_w2.init(model.weights.enc_w2.shape);
    g.enc_b2.init(model.weights.enc_b2.shape);
    g.y_embed.init(model.weights.y_embed.shape);
    g.query_token.init(model.weights.query_token.shape);
    g.layers.resize(model.weights.layers.size());
    for (size_t l = 0; l < g.layers.size(); ++l) {
        const auto& src = model.weights.layers[l];
        auto& dst = g.layers[l];
        dst.ln1_g.init(src.ln1_g.shape);
        dst.ln1_b.init(src.ln1_b.shape);
        dst.wq.init(src.wq.shape);
        dst.bq.init(src.bq.shape);
        dst.wk.init(src.wk.shape);
        dst.bk.init(src.bk.shape);
        dst.wv.init(src.wv.shape);
        dst.bv.init(src.bv.shape);
        dst.wo.init(src.wo.shape);
        dst.bo.init(src.bo.shape);
        dst.ln2_g.init(src.ln2_g.shape);
        dst.ln2_b.init(src.ln2_b.shape);
        dst.ffn_w1.init(src.ffn_w1.shape);
        dst.ffn_b1.init(src.ffn_b1.shape);
        dst.ffn_w2.init(src.ffn_w2.shape);
        dst.ffn_b2.init(src.ffn_b2.shape);
    }
    g.lnf_g.init(model.weights.lnf_g.shape);
    g.lnf_b.init(model.weights.lnf_b.shape);
    g.head_w.init(model.weights.head_w.shape);
    g.head_b.init(model.weights.head_b.shape);
    return g;
}

inline void zero_grads(Weights<double>& g) {
    g.for_each([](const std::string&, Tensor<double>& t) { std::fill(t.v.begin(), t.v.end(), 0.0); });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public forward / embedding
// ---------------------------------------------------------------------------

template <typename S>
ForwardResult forward(const ModelT<S>& model, const MatD& ctx_x, std::span<const double> ctx_y,
                      const MatD& qry_x) {
    detail::Workspace<S> ws;
    detail::forward_core(model, ctx_x, ctx_y, qry_x, ws, /*keep_attn=*/false);
    ForwardResult res;
    const int b = model.config.buckets;
    res.distributions.resize(static_cast<size_t>(ws.n_qry));
    for (int qi = 0; qi < ws.n_qry; ++qi) {
        PredictiveDistribution& dist = res.distributions[static_cast<size_t>(qi)];
        dist.bucket_edges = ws.edges;
        dist.probabilities.assign(ws.probs.begin() + static_cast<ptrdiff_t>(qi) * b,
                                  ws.probs.begin() + static_cast<ptrdiff_t>(qi + 1) * b);
    }
    res.row_embeddings = MatD(static_cast<size_t>(ws.n), static_cast<size_t>(model.config.d_model));
    for (int r = 0; r < ws.n; ++r)
        for (int c = 0; c < model.config.d_model; ++c)
            res.row_embeddings(static_cast<size_t>(r), static_cast<size_t>(c)) =
                static_cast<double>(ws.rep[static_cast<size_t>(r) * model.config.d_model + c]);
    return res;
}

template <typename S>
Digest128 weights_hash(const ModelT<S>& model) {
    Hasher h;
    model.weights.for_each([&](const std::string& name, const Tensor<S>& t) {
        h.update_string(name);
        for (const S v : t.v) h.update_value<float>(static_cast<float>(v));
    });
    return h.digest();
}

template <typename S>
std::string model_id(const ModelT<S>& model) {
    return "pfn-" + model.provenance.kind + "-" + weights_hash(model).hex8();
}

template <typename S>
DatasetEmbedding embed_dataset(const ModelT<S>& model, const Dataset& dataset) {
    if (dataset.rows() != kStandardRows)
        throw Error("embed_dataset: dataset must have exactly " + std::to_string(kStandardRows) +
                    " rows (got " + std::to_string(dataset.rows()) + ")");
    detail::Workspace<S> ws;
    detail::forward_core(model, dataset.features, dataset.target, MatD(0, dataset.feature_count()),
                         ws, /*keep_attn=*/false);
    const int d = model.config.d_model;
    DatasetEmbedding emb;
    emb.values.assign(static_cast<size_t>(d), 0.0);
    for (int r = 0; r < ws.n; ++r)
        for (int c = 0; c < d; ++c)
            emb.values[static_cast<size_t>(c)] +=
                static_cast<double>(ws.rep[static_cast<size_t>(r) * d + c]);
    for (double& v : emb.values) v /= static_cast<double>(ws.n);
    emb.dataset_hash = dataset.meta.content_hash;
    emb.model_id = model_id(model);
    return emb;
}

// ---------------------------------------------------------------------------
// Optimizer and training
// ---------------------------------------------------------------------------

namespace detail {

struct AdamState {
    Weights<double> m;
    Weights<double> v;
    long t = 0;

    template <typename S>
    explicit AdamState(const ModelT<S>& model) : m(make_grads(model)), v(make_grads(model)) {}

    template <typename S>
    void step(Weights<S>& params, Weights<double>& grads, double lr) {
        ++t;
        constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        std::vector<Tensor<S>*> pt;
        std::vector<Tensor<double>*> gt, mt, vt;
        params.for_each([&](const std::string&, Tensor<S>& ten) { pt.push_back(&ten); });
        grads.for_each([&](const std::string&, Tensor<double>& ten) { gt.push_back(&ten); });
        m.for_each([&](const std::string&, Tensor<double>& ten) { mt.push_back(&ten); });
        v.for_each([&](const std::string&, Tensor<double>& ten) { vt.push_back(&ten); });
        for (size_t k = 0; k < pt.size(); ++k) {
            auto& p = pt[k]->v;
            auto& g = gt[k]->v;
            auto& mm = mt[k]->v;
            auto& vv = vt[k]->v;
            for (size_t i = 0; i < p.size(); ++i) {
                mm[i] = beta1 * mm[i] + (1.0 - beta1) * g[i];
                vv[i] = beta2 * vv[i] + (1.0 - beta2) * g[i] * g[i];
                const double mhat = mm[i] / bc1;
                const double vhat = vv[i] / bc2;
                p[i] = static_cast<S>(static_cast<double>(p[i]) -
                                      lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

inline double lr_schedule(double base, int step, int total_steps) {
    const int warmup = std::max(1, std::min(100, total_steps / 10));
    if (step < warmup) return base * static_cast<double>(step + 1) / warmup;
    if (total_steps <= warmup) return base;
    const double progress = static_cast<double>(step - warmup) / std::max(1, total_steps - warmup);
    const double floor_lr = 0.1 * base;
    return floor_lr + 0.5 * (base - floor_lr) * (1.0 + std::cos(progress * 3.14159265358979323846));
}

// Splits a task's rows into a seeded (context, query) pair and runs one
// forward/backward, accumulating gradients. Returns the CE loss.
template <typename S>
double task_step(const ModelT<S>& model, const Dataset& dataset, uint64_t split_seed,
                 double loss_scale, Workspace<S>& ws, Weights<double>* grads) {
    const PfnConfig& cfg = model.config;
    const size_t rows = dataset.rows();
    const auto n_ctx = static_cast<size_t>(cfg.context_rows);
    const auto n_qry = static_cast<size_t>(cfg.query_rows);
    if (rows < n_ctx + n_qry)
        throw Error("task has too few rows for the context/query split");
    std::vector<size_t> idx(rows);
    std::iota(idx.begin(), idx.end(), size_t{0});
    Rng rng(split_seed);
    rng.shuffle(idx);

    MatD ctx_x(n_ctx, dataset.feature_count());
    std::vector<double> ctx_y(n_ctx);
    for (size_t i = 0; i < n_ctx; ++i) {
        for (size_t c = 0; c < dataset.feature_count(); ++c)
            ctx_x(i, c) = dataset.features(idx[i], c);
        ctx_y[i] = dataset.target[idx[i]];
    }
    MatD qry_x(n_qry, dataset.feature_count());
    std::vector<double> qry_y(n_qry);
    for (size_t i = 0; i < n_qry; ++i) {
        for (size_t c = 0; c < dataset.feature_count(); ++c)
            qry_x(i, c) = dataset.features(idx[n_ctx + i], c);
        qry_y[i] = dataset.target[idx[n_ctx + i]];
    }

    forward_core(model, ctx_x, ctx_y, qry_x, ws, /*keep_attn=*/grads != nullptr);
    std::vector<int> targets;
    const double loss = loss_from_workspace(ws, qry_y, cfg, &targets);
    if (grads) backward_core(model, ws, targets, loss_scale, *grads);
    return loss;
}

}  // namespace detail

struct PretrainResult {
    PfnModel model;
    std::vector<double> loss_trace;
};

inline PretrainResult pretrain(const PfnConfig& cfg, const procgen::PriorConfig& prior) {
    cfg.validate();
    prior.validate();
    if (prior.rows < static_cast<size_t>(cfg.context_rows + cfg.query_rows))
        throw ConfigError("prior rows smaller than context + query rows");

    PretrainResult result;
    result.model = init_model<float>(cfg);
    result.model.provenance.kind = "base-pretrain";
    result.model.provenance.pretrain_steps = cfg.steps;
    result.model.provenance.pretrain_seed = cfg.seed;

    detail::AdamState opt(result.model);
    Weights<double> grads = detail::make_grads(result.model);
    detail::Workspace<float> ws;
    const double loss_scale = 1.0 / cfg.batch_tasks;

    for (int step = 0; step < cfg.steps; ++step) {
        detail::zero_grads(grads);
        double step_loss = 0.0;
        for (int item = 0; item < cfg.batch_tasks; ++item) {
            const uint64_t stream =
                static_cast<uint64_t>(step) * static_cast<uint64_t>(cfg.batch_tasks) +
                static_cast<uint64_t>(item);
            const uint64_t task_seed = mix_seed(cfg.seed ^ 0x7EA17A5CULL, stream);
            const procgen::SyntheticTask task =
                procgen::materialize(procgen::sample_spec(prior, task_seed));
            step_loss += detail::task_step(result.model, task.dataset,
                                           mix_seed(cfg.seed ^ 0x5F117ULL, stream), loss_scale, ws,
                                           &grads);
        }
        step_loss /= cfg.batch_tasks;
        if (!std::isfinite(step_loss))
            throw Error("pretrain: non-finite loss at step " + std::to_string(step));
        opt.step(result.model.weights, grads, detail::lr_schedule(cfg.learning_rate, step, cfg.steps));
        result.loss_trace.push_back(step_loss);
    }
    return result;
}

inline PfnModel continued_pretrain(const PfnModel& base, std::span<const procgen::SyntheticTask> tasks,
                                   int epochs = 5) {
    if (tasks.empty()) throw Error("continued_pretrain: empty task list");
    if (epochs < 0) throw Error("continued_pretrain: negative epochs");
    PfnModel model = base;  // the input model is left unmodified
    model.provenance.kind = "continued-pretrain";
    model.provenance.finetune_epochs = epochs;
    model.provenance.finetune_tasks = static_cast<long>(tasks.size());
    model.provenance.finetune_seed = mix_seed(base.config.seed, 0xF17E);
    model.provenance.synthetic_only = true;
    if (epochs == 0) return model;

    const double lr = 0.1 * model.config.learning_rate;  // reduced rate for continued pre-training
    detail::AdamState opt(model);
    Weights<double> grads = detail::make_grads(model);
    detail::Workspace<float> ws;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<size_t> order(tasks.size());
        std::iota(order.begin(), order.end(), size_t{0});
        Rng rng = Rng::stream(model.provenance.finetune_seed, static_cast<uint64_t>(epoch));
        rng.shuffle(order);
        for (size_t pos = 0; pos < order.size(); ++pos) {
            detail::zero_grads(grads);
            const uint64_t split_seed =
                mix_seed(model.provenance.finetune_seed ^ 0xC0117ULL,
                         static_cast<uint64_t>(epoch) * tasks.size() + order[pos]);
            const double loss =
                detail::task_step(model, tasks[order[pos]].dataset, split_seed, 1.0, ws, &grads);
            if (!std::isfinite(loss))
                throw Error("continued_pretrain: non-finite loss at epoch " + std::to_string(epoch));
            opt.step(model.weights, grads, lr);
        }
    }
    return model;
}

// Mean query MSE of point estimates on a dataset under a seeded
// context/query split; the shared evaluation probe for learning checks.
inline double query_mse(const PfnModel& model, const Dataset& dataset, uint64_t seed) {
    detail::Workspace<float> ws;
    const PfnConfig& cfg = model.config;
    const auto n_ctx = static_cast<size_t>(cfg.context_rows);
    const auto n_qry = static_cast<size_t>(cfg.query_rows);
    if (dataset.rows() < n_ctx + n_qry) throw Error("query_mse: dataset too small");
    std::vector<size_t> idx(dataset.rows());
    std::iota(idx.begin(), idx.end(), size_t{0});
    Rng rng(mix_seed(seed, 0xE7A1));
    rng.shuffle(idx);
    MatD ctx_x(n_ctx, dataset.feature_count());
    std::vector<double> ctx_y(n_ctx);
    for (size_t i = 0; i < n_ctx; ++i) {
        for (size_t c = 0; c < dataset.feature_count(); ++c) ctx_x(i, c) = dataset.features(idx[i], c);
        ctx_y[i] = dataset.target[idx[i]];
    }
    MatD qry_x(n_qry, dataset.feature_count());
    std::vector<double> qry_y(n_qry);
    for (size_t i = 0; i < n_qry; ++i) {
        for (size_t c = 0; c < dataset.feature_count(); ++c)
            qry_x(i, c) = dataset.features(idx[n_ctx + i], c);
        qry_y[i] = dataset.target[idx[n_ctx + i]];
    }
    const ForwardResult res = forward(model, ctx_x, ctx_y, qry_x);
    double se = 0.0;
    for (size_t i = 0; i < n_qry; ++i) {
        const double d = point_estimate(res.distributions[i]) - qry_y[i];
        se += d * d;
    }
    return se / static_cast<double>(n_qry);
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::vector<std::pair<std::string, double>> tensor_errors;
};

inline GradCheckReport grad_check(const PfnConfig& cfg, uint64_t seed = 0xC4EC4) {
    if (cfg.d_model > 16 || cfg.context_rows + cfg.query_rows > 8)
        throw ConfigError("grad_check expects a tiny config (d_model <= 16, <= 8 rows)");
    ModelT<double> model = init_model<double>(cfg);

    Rng rng(mix_seed(seed, 1));
    const int width = std::min(cfg.max_features, 4);
    MatD ctx_x(static_cast<size_t>(cfg.context_rows), static_cast<size_t>(width));
    std::vector<double> ctx_y(static_cast<size_t>(cfg.context_rows));
    for (size_t r = 0; r < ctx_x.rows(); ++r) {
        for (size_t c = 0; c < ctx_x.cols(); ++c) ctx_x(r, c) = rng.normal();
        ctx_y[r] = rng.normal();
    }
    MatD qry_x(static_cast<size_t>(cfg.query_rows), static_cast<size_t>(width));
    std::vector<double> qry_y(static_cast<size_t>(cfg.query_rows));
    for (size_t r = 0; r < qry_x.rows(); ++r) {
        for (size_t c = 0; c < qry_x.cols(); ++c) qry_x(r, c) = rng.normal();
        qry_y[r] = rng.normal();
    }

    detail::Workspace<double> ws;
    detail::forward_core(model, ctx_x, ctx_y, qry_x, ws, /*keep_attn=*/true);
    std::vector<int> targets;
    detail::loss_from_workspace(ws, qry_y, cfg, &targets);
    Weights<double> grads = detail::make_grads(model);
    detail::zero_grads(grads);
    detail::backward_core(model, ws, targets, 1.0, grads);

    auto loss_at = [&]() {
        detail::Workspace<double> w2;
        detail::forward_core(model, ctx_x, ctx_y, qry_x, w2, /*keep_attn=*/false);
        return detail::loss_from_workspace(w2, qry_y, cfg, nullptr);
    };

    const double h = 1e-4;
    GradCheckReport report;
    std::vector<Tensor<double>*> param_tensors;
    std::vector<std::string> names;
    model.weights.for_each([&](const std::string& name, Tensor<double>& t) {
        param_tensors.push_back(&t);
        names.push_back(name);
    });
    std::vector<Tensor<double>*> grad_tensors;
    grads.for_each([&](const std::string&, Tensor<double>& t) { grad_tensors.push_back(&t); });

    for (size_t k = 0; k < param_tensors.size(); ++k) {
        double tensor_max = 0.0;
        auto& p = param_tensors[k]->v;
        const auto& g = grad_tensors[k]->v;
        for (size_t i = 0; i < p.size(); ++i) {
            const double saved = p[i];
            p[i] = saved + h;
            const double lp = loss_at();
            p[i] = saved - h;
            const double lm = loss_at();
            p[i] = saved;
            const double numeric = (lp - lm) / (2.0 * h);
            const double denom = std::max(std::fabs(g[i]) + std::fabs(numeric), 1e-3);
            tensor_max = std::max(tensor_max, std::fabs(g[i] - numeric) / denom);
        }
        report.tensor_errors.emplace_back(names[k], tensor_max);
        report.max_rel_error = std::max(report.max_rel_error, tensor_max);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline io::json config_to_json(const PfnConfig& c) {
    return io::json{{"d_model", c.d_model},
                    {"layers", c.layers},
                    {"heads", c.heads},
                    {"ffn_mult", c.ffn_mult},
                    {"buckets", c.buckets},
                    {"max_features", c.max_features},
                    {"context_rows", c.context_rows},
                    {"query_rows", c.query_rows},
                    {"learning_rate", c.learning_rate},
                    {"steps", c.steps},
                    {"batch_tasks", c.batch_tasks},
                    {"seed", c.seed}};
}

inline PfnConfig config_from_json(const io::json& j) {
    PfnConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.buckets = j.value("buckets", c.buckets);
    c.max_features = j.value("max_features", c.max_features);
    c.context_rows = j.value("context_rows", c.context_rows);
    c.query_rows = j.value("query_rows", c.query_rows);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.steps = j.value("steps", c.steps);
    c.batch_tasks = j.value("batch_tasks", c.batch_tasks);
    c.seed = j.value("seed", c.seed);
    return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const PfnModel& model,
                            const std::string& manifest_id = "") {
    io::json manifest;
    manifest["kind"] = "pfn-checkpoint";
    manifest["config"] = config_to_json(model.config);
    manifest["provenance"] = {{"kind", model.provenance.kind},
                              {"pretrain_steps", model.provenance.pretrain_steps},
                              {"finetune_epochs", model.provenance.finetune_epochs},
                              {"finetune_tasks", model.provenance.finetune_tasks},
                              {"pretrain_seed", model.provenance.pretrain_seed},
                              {"finetune_seed", model.provenance.finetune_seed},
                              {"synthetic_only", model.provenance.synthetic_only}};
    io::json tensors = io::json::array();
    std::vector<float> blob;
    model.weights.for_each([&](const std::string& name, const Tensor<float>& t) {
        tensors.push_back({{"name", name}, {"shape", t.shape}, {"offset", blob.size()}});
        blob.insert(blob.end(), t.v.begin(), t.v.end());
    });
    manifest["tensors"] = std::move(tensors);
    manifest["blob_floats"] = blob.size();
    manifest["weights_hash"] = weights_hash(model).hex();
    if (!manifest_id.empty()) manifest["manifest_id"] = manifest_id;
    io::write_container(path, manifest, blob.data(), blob.size());
}

inline PfnModel load_checkpoint(const std::filesystem::path& path) {
    const io::Container c = io::read_container(path);
    if (c.manifest.at("kind").get<std::string>() != "pfn-checkpoint")
        throw Error("not a pfn checkpoint: " + path.string());
    PfnModel model = init_model<float>(config_from_json(c.manifest.at("config")));
    const auto& prov = c.manifest.at("provenance");
    model.provenance.kind = prov.at("kind").get<std::string>();
    model.provenance.pretrain_steps = prov.at("pretrain_steps").get<long>();
    model.provenance.finetune_epochs = prov.at("finetune_epochs").get<long>();
    model.provenance.finetune_tasks = prov.at("finetune_tasks").get<long>();
    model.provenance.pretrain_seed = prov.at("pretrain_seed").get<uint64_t>();
    model.provenance.finetune_seed = prov.at("finetune_seed").get<uint64_t>();
    model.provenance.synthetic_only = prov.at("synthetic_only").get<bool>();

    size_t cursor = 0;
    model.weights.for_each([&](const std::string& name, Tensor<float>& t) {
        const auto& tj = c.manifest.at("tensors").at(cursor);
        if (tj.at("name").get<std::string>() != name)
            throw Error("checkpoint tensor order mismatch at " + name);
        if (tj.at("shape").get<std::vector<int>>() != t.shape)
            throw Error("checkpoint tensor shape mismatch at " + name);
        const size_t offset = tj.at("offset").get<size_t>();
        std::copy(c.blob.begin() + static_cast<ptrdiff_t>(offset),
                  c.blob.begin() + static_cast<ptrdiff_t>(offset + t.size()), t.v.begin());
        ++cursor;
    });
    const std::string recorded = c.manifest.at("weights_hash").get<std::string>();
    if (recorded != weights_hash(model).hex())
        throw Error("checkpoint weight hash mismatch: " + path.string());
    model.weights.for_each([&](const std::string& name, const Tensor<float>& t) {
        for (float v : t.v)
            if (!std::isfinite(v)) throw Error("non-finite weight in tensor " + name);
    });
    return model;
}

// ---------------------------------------------------------------------------
// Evaluation adapter
// ---------------------------------------------------------------------------

class PfnRegressor final : public evalharness::RegressorAdapter {
public:
    PfnRegressor(std::shared_ptr<const PfnModel> model, std::string id_tag)
        : model_(std::move(model)), id_(std::move(id_tag)) {}

    std::string id() const override { return id_; }
    std::unique_ptr<evalharness::RegressorAdapter> clone() const override {
        return std::make_unique<PfnRegressor>(model_, id_);
    }

    void fit_or_condition(const MatD& x, std::span<const double> y, uint64_t) override {
        ctx_x_ = x;
        ctx_y_.assign(y.begin(), y.end());
    }

    std::vector<double> predict(const MatD& x) const override {
        const ForwardResult res = forward(*model_, ctx_x_, ctx_y_, x);
        std::vector<double> out(x.rows());
        for (size_t i = 0; i < out.size(); ++i) out[i] = point_estimate(res.distributions[i]);
        return out;
    }

private:
    std::shared_ptr<const PfnModel> model_;
    std::string id_;
    MatD ctx_x_;
    std::vector<double> ctx_y_;
};

}  // namespace tabcure::pfn
