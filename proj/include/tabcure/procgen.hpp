#pragma once

// Procedural generation of synthetic tabular regression tasks from a
// structural-causal-model prior: a random sparse DAG whose non-root nodes
// are small random-weight MLPs of their parents plus Gaussian noise, root
// nodes drawn from a mixture of base distributions, and optional per-column
// warps (quantile binning / rank-gaussianization) to mimic ordinal and
// heavy-tailed real-world columns. Materialization is bit-reproducible from
// the sampled spec alone.

#include <cmath>
#include <string>
#include <vector>

#include "tabcure/tabular.hpp"

namespace tabcure::procgen {

struct IntRange {
    int lo = 0;
    int hi = 0;
    bool valid() const { return lo <= hi; }
};

struct RealRange {
    double lo = 0.0;
    double hi = 0.0;
    bool valid() const { return lo <= hi; }
};

enum class Activation { Identity, Tanh, Relu, Sine, Absolute };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Tanh: return "tanh";
        case Activation::Relu: return "relu";
        case Activation::Sine: return "sine";
        case Activation::Absolute: return "absolute";
    }
    throw Error("unknown activation");
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "identity") return Activation::Identity;
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    if (s == "sine") return Activation::Sine;
    if (s == "absolute") return Activation::Absolute;
    throw Error("unknown activation: " + s);
}

struct PriorConfig {
    IntRange feature_count_range{2, 100};
    size_t rows = kStandardRows;
    IntRange extra_nodes_range{1, 8};   // node_count = feature_count + extra
    IntRange mlp_width_range{4, 16};
    IntRange mlp_depth_range{1, 3};
    std::vector<Activation> activation_set{Activation::Identity, Activation::Tanh,
                                           Activation::Relu, Activation::Sine,
                                           Activation::Absolute};
    RealRange noise_scale_range{0.01, 0.5};
    double warp_probability = 0.3;
    uint64_t seed = 0;

    void validate() const {
        if (!feature_count_range.valid() || feature_count_range.lo < 2 ||
            feature_count_range.hi > static_cast<int>(kMaxFeatures))
            throw ConfigError("feature_count_range must be within [2,100]");
        if (rows < 2) throw ConfigError("rows must be >= 2");
        if (!extra_nodes_range.valid() || extra_nodes_range.lo < 1)
            throw ConfigError("extra_nodes_range must be >= 1");
        if (!mlp_width_range.valid() || mlp_width_range.lo < 1)
            throw ConfigError("mlp_width_range invalid");
        if (!mlp_depth_range.valid() || mlp_depth_range.lo < 1)
            throw ConfigError("mlp_depth_range invalid");
        if (activation_set.empty()) throw ConfigError("activation_set empty");
        if (!noise_scale_range.valid() || noise_scale_range.lo <= 0.0)
            throw ConfigError("noise_scale_range must be positive");
        if (warp_probability < 0.0 || warp_probability > 1.0)
            throw ConfigError("warp_probability must be in [0,1]");
    }
};

constexpr int kMaxFanIn = 3;

enum class RootDist { Normal, Uniform, Mixture3 };

struct RootSpec {
    RootDist dist = RootDist::Normal;
    // Mixture3 parameters (unused otherwise).
    std::array<double, 3> means{};
    std::array<double, 3> sds{};
    std::array<double, 3> weights{};
};

struct NodeFunction {
    std::vector<int> parents;                        // empty => root node
    std::vector<MatD> layer_weights;                 // [out x in] per layer
    std::vector<std::vector<double>> layer_biases;
    Activation activation = Activation::Identity;
    double noise_scale = 0.0;
    RootSpec root;
};

struct Warp {
    enum class Kind { None, Quantize, RankGauss };
    Kind kind = Kind::None;
    int bins = 0;  // Quantize only
};

struct ScmSpec {
    int node_count = 0;
    std::vector<NodeFunction> nodes;   // index order is topological
    std::vector<int> feature_nodes;
    int target_node = -1;
    std::vector<Warp> warps;           // per output column: features then target
    size_t rows = kStandardRows;
    uint64_t seed = 0;
};

struct SyntheticTask {
    Dataset dataset;
    ScmSpec spec;
};

// ---------------------------------------------------------------------------
// sample_spec
// ---------------------------------------------------------------------------

inline ScmSpec sample_spec(const PriorConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(mix_seed(seed, 0x5C3));

    ScmSpec spec;
    spec.rows = config.rows;
    spec.seed = seed;

    const int feature_count =
        static_cast<int>(rng.range(config.feature_count_range.lo, config.feature_count_range.hi));
    const int extra = static_cast<int>(rng.range(config.extra_nodes_range.lo, config.extra_nodes_range.hi));
    spec.node_count = feature_count + extra;

    spec.nodes.resize(spec.node_count);
    for (int i = 0; i < spec.node_count; ++i) {
        NodeFunction& node = spec.nodes[i];
        if (i == 0) {
            // node 0 is always a root
        } else {
            const int fan_in = static_cast<int>(rng.range(1, std::min(kMaxFanIn, i)));
            const auto parents = rng.sample_without_replacement(static_cast<size_t>(i),
                                                                static_cast<size_t>(fan_in));
            node.parents.assign(parents.begin(), parents.end());
        }
        if (node.parents.empty()) {
            const int which = static_cast<int>(rng.range(0, 2));
            node.root.dist = which == 0   ? RootDist::Normal
                             : which == 1 ? RootDist::Uniform
                                          : RootDist::Mixture3;
            if (node.root.dist == RootDist::Mixture3) {
                double wsum = 0.0;
                for (int k = 0; k < 3; ++k) {
                    node.root.means[k] = rng.normal();
                    node.root.sds[k] = rng.uniform(0.2, 0.7);
                    node.root.weights[k] = rng.uniform(0.1, 1.0);
                    wsum += node.root.weights[k];
                }
                for (int k = 0; k < 3; ++k) node.root.weights[k] /= wsum;
            }
        } else {
            const int depth = static_cast<int>(rng.range(config.mlp_depth_range.lo, config.mlp_depth_range.hi));
            const int width = static_cast<int>(rng.range(config.mlp_width_range.lo, config.mlp_width_range.hi));
            node.activation = config.activation_set[rng.below(config.activation_set.size())];
            node.noise_scale = rng.log_uniform(config.noise_scale_range.lo, config.noise_scale_range.hi);
            int in_dim = static_cast<int>(node.parents.size());
            for (int layer = 0; layer < depth; ++layer) {
                const int out_dim = (layer == depth - 1) ? 1 : width;
                MatD w(static_cast<size_t>(out_dim), static_cast<size_t>(in_dim));
                const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
                for (size_t r = 0; r < w.rows(); ++r)
                    for (size_t c = 0; c < w.cols(); ++c) w(r, c) = rng.normal() * scale;
                std::vector<double> b(static_cast<size_t>(out_dim));
                for (auto& v : b) v = rng.normal() * 0.1;
                node.layer_weights.push_back(std::move(w));
                node.layer_biases.push_back(std::move(b));
                in_dim = out_dim;
            }
        }
    }

    // Emitted columns: feature_count distinct nodes plus a target node that
    // prefers having at least one selected feature among its ancestors.
    auto chosen = rng.sample_without_replacement(static_cast<size_t>(spec.node_count),
                                                 static_cast<size_t>(feature_count));
    spec.feature_nodes.assign(chosen.begin(), chosen.end());
    std::vector<bool> is_feature(spec.node_count, false);
    for (int fnode : spec.feature_nodes) is_feature[static_cast<size_t>(fnode)] = true;

    std::vector<bool> touches_feature(spec.node_count, false);
    for (int i = 0; i < spec.node_count; ++i) {
        if (is_feature[static_cast<size_t>(i)]) touches_feature[static_cast<size_t>(i)] = true;
        for (int p : spec.nodes[i].parents)
            if (touches_feature[static_cast<size_t>(p)]) touches_feature[static_cast<size_t>(i)] = true;
    }
    std::vector<int> preferred, fallback;
    for (int i = 0; i < spec.node_count; ++i) {
        if (is_feature[static_cast<size_t>(i)]) continue;
        if (touches_feature[static_cast<size_t>(i)] && !spec.nodes[i].parents.empty())
            preferred.push_back(i);
        else
            fallback.push_back(i);
    }
    const std::vector<int>& pool = preferred.empty() ? fallback : preferred;
    spec.target_node = pool[rng.below(pool.size())];

    spec.warps.resize(static_cast<size_t>(feature_count) + 1);
    for (auto& warp : spec.warps) {
        if (rng.uniform() < config.warp_probability) {
            if (rng.uniform() < 0.5) {
                warp.kind = Warp::Kind::Quantize;
                warp.bins = static_cast<int>(rng.range(2, 10));
            } else {
                warp.kind = Warp::Kind::RankGauss;
            }
        }
    }
    return spec;
}

// ---------------------------------------------------------------------------
// materialize
// ---------------------------------------------------------------------------

namespace detail {

inline double apply_activation(Activation a, double x) {
    switch (a) {
        case Activation::Identity: return x;
        case Activation::Tanh: return std::tanh(x);
        case Activation::Relu: return x > 0.0 ? x : 0.0;
        case Activation::Sine: return std::sin(x);
        case Activation::Absolute: return std::fabs(x);
    }
    throw Error("unknown activation");
}

inline double sample_root(const RootSpec& root, Rng& rng) {
    switch (root.dist) {
        case RootDist::Normal: return rng.normal();
        case RootDist::Uniform: {
            constexpr double sqrt3 = 1.7320508075688772;
            return rng.uniform(-sqrt3, sqrt3);
        }
        case RootDist::Mixture3: {
            const double u = rng.uniform();
            int k = 0;
            double acc = root.weights[0];
            while (k < 2 && u >= acc) acc += root.weights[++k];
            return root.means[static_cast<size_t>(k)] +
                   root.sds[static_cast<size_t>(k)] * rng.normal();
        }
    }
    throw Error("unknown root distribution");
}

// Evaluates one node's MLP for a single row of parent values.
inline double eval_node(const NodeFunction& node, const std::vector<double>& parent_values) {
    std::vector<double> cur = parent_values;
    std::vector<double> next;
    const size_t depth = node.layer_weights.size();
    for (size_t layer = 0; layer < depth; ++layer) {
        const MatD& w = node.layer_weights[layer];
        const auto& b = node.layer_biases[layer];
        next.assign(w.rows(), 0.0);
        for (size_t r = 0; r < w.rows(); ++r) {
            double s = b[r];
            for (size_t c = 0; c < w.cols(); ++c) s += w(r, c) * cur[c];
            next[r] = apply_activation(node.activation, s);
        }
        cur.swap(next);
    }
    return cur[0];
}

inline void apply_warp(const Warp& warp, std::vector<double>& column) {
    const size_t n = column.size();
    if (warp.kind == Warp::Kind::None || n == 0) return;
    // Stable rank order so ties resolve by row index.
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return column[a] < column[b]; });
    if (warp.kind == Warp::Kind::RankGauss) {
        std::vector<double> out(n);
        for (size_t pos = 0; pos < n; ++pos) {
            const double p = (static_cast<double>(pos) + 0.5) / static_cast<double>(n);
            out[order[pos]] = inverse_normal_cdf(p);
        }
        column = std::move(out);
    } else {
        // Quantize: replace each value with its quantile-bin index.
        std::vector<double> out(n);
        for (size_t pos = 0; pos < n; ++pos) {
            const auto bin = static_cast<size_t>(pos * static_cast<size_t>(warp.bins) / n);
            out[order[pos]] = static_cast<double>(bin);
        }
        column = std::move(out);
    }
}

inline bool propagate(const ScmSpec& spec, uint64_t noise_stream, MatD& values) {
    Rng rng(mix_seed(spec.seed, noise_stream));
    const size_t n = spec.rows;
    values = MatD(n, static_cast<size_t>(spec.node_count));
    std::vector<double> parent_values;
    for (int node_idx = 0; node_idx < spec.node_count; ++node_idx) {
        const NodeFunction& node = spec.nodes[static_cast<size_t>(node_idx)];
        for (size_t r = 0; r < n; ++r) {
            double v;
            if (node.parents.empty()) {
                v = sample_root(node.root, rng);
            } else {
                parent_values.clear();
                for (int p : node.parents) parent_values.push_back(values(r, static_cast<size_t>(p)));
                v = eval_node(node, parent_values) + node.noise_scale * rng.normal();
            }
            if (!std::isfinite(v)) return false;
            values(r, node_idx) = v;
        }
    }
    return true;
}

}  // namespace detail

inline SyntheticTask materialize(const ScmSpec& spec) {
    MatD values;
    // One resample of the noise stream before giving up on a degenerate spec.
    if (!detail::propagate(spec, 0xA015E, values) &&
        !detail::propagate(spec, 0xA015F, values)) {
        throw Error("non-finite propagation in SCM materialization");
    }

    const size_t n = spec.rows;
    const size_t f = spec.feature_nodes.size();
    MatD features(n, f);
    std::vector<double> target(n);
    std::vector<double> column(n);
    for (size_t c = 0; c < f; ++c) {
        for (size_t r = 0; r < n; ++r) column[r] = values(r, static_cast<size_t>(spec.feature_nodes[c]));
        detail::apply_warp(spec.warps[c], column);
        for (size_t r = 0; r < n; ++r) features(r, c) = column[r];
    }
    for (size_t r = 0; r < n; ++r) column[r] = values(r, static_cast<size_t>(spec.target_node));
    detail::apply_warp(spec.warps[f], column);
    target = column;

    DatasetMeta meta;
    meta.name = "syn-" + std::to_string(spec.seed);
    meta.label = Label::Synthetic;
    meta.original_rows = n;
    meta.seed = spec.seed;
    SyntheticTask task;
    task.dataset = finalize_dataset(std::move(features), std::move(target), std::move(meta));
    task.spec = spec;
    return task;
}

inline std::vector<SyntheticTask> generate_batch(const PriorConfig& config, size_t count,
                                                 uint64_t seed, int jobs = 1) {
    if (count < 1) throw Error("generate_batch: count must be >= 1");
    config.validate();
    std::vector<SyntheticTask> tasks(count);
    parallel_for(count, jobs, [&](size_t i) {
        const uint64_t task_seed = mix_seed(seed, i);
        try {
            tasks[i] = materialize(sample_spec(config, task_seed));
        } catch (const Error& e) {
            throw Error("task " + std::to_string(i) + ": " + e.what());
        }
    });
    return tasks;
}

// ---------------------------------------------------------------------------
// Spec (de)serialization — sidecar for bit-exact regeneration
// ---------------------------------------------------------------------------

inline io::json spec_to_json(const ScmSpec& spec) {
    io::json j;
    j["node_count"] = spec.node_count;
    j["rows"] = spec.rows;
    j["seed"] = spec.seed;
    j["feature_nodes"] = spec.feature_nodes;
    j["target_node"] = spec.target_node;
    io::json nodes = io::json::array();
    for (const auto& node : spec.nodes) {
        io::json nj;
        nj["parents"] = node.parents;
        if (node.parents.empty()) {
            nj["root_dist"] = static_cast<int>(node.root.dist);
            nj["root_means"] = node.root.means;
            nj["root_sds"] = node.root.sds;
            nj["root_weights"] = node.root.weights;
        } else {
            nj["activation"] = to_string(node.activation);
            nj["noise_scale"] = node.noise_scale;
            io::json layers = io::json::array();
            for (size_t l = 0; l < node.layer_weights.size(); ++l) {
                const MatD& w = node.layer_weights[l];
                io::json lj;
                lj["out"] = w.rows();
                lj["in"] = w.cols();
                std::vector<double> flat(w.data(), w.data() + w.size());
                lj["w"] = flat;
                lj["b"] = node.layer_biases[l];
                layers.push_back(std::move(lj));
            }
            nj["layers"] = std::move(layers);
        }
        nodes.push_back(std::move(nj));
    }
    j["nodes"] = std::move(nodes);
    io::json warps = io::json::array();
    for (const auto& warp : spec.warps) {
        warps.push_back({{"kind", static_cast<int>(warp.kind)}, {"bins", warp.bins}});
    }
    j["warps"] = std::move(warps);
    return j;
}

inline ScmSpec spec_from_json(const io::json& j) {
    ScmSpec spec;
    spec.node_count = j.at("node_count").get<int>();
    spec.rows = j.at("rows").get<size_t>();
    spec.seed = j.at("seed").get<uint64_t>();
    spec.feature_nodes = j.at("feature_nodes").get<std::vector<int>>();
    spec.target_node = j.at("target_node").get<int>();
    for (const auto& nj : j.at("nodes")) {
        NodeFunction node;
        node.parents = nj.at("parents").get<std::vector<int>>();
        if (node.parents.empty()) {
            node.root.dist = static_cast<RootDist>(nj.at("root_dist").get<int>());
            node.root.means = nj.at("root_means").get<std::array<double, 3>>();
            node.root.sds = nj.at("root_sds").get<std::array<double, 3>>();
            node.root.weights = nj.at("root_weights").get<std::array<double, 3>>();
        } else {
            node.activation = activation_from_string(nj.at("activation").get<std::string>());
            node.noise_scale = nj.at("noise_scale").get<double>();
            for (const auto& lj : nj.at("layers")) {
                const size_t out = lj.at("out").get<size_t>();
                const size_t in = lj.at("in").get<size_t>();
                MatD w(out, in);
                const auto flat = lj.at("w").get<std::vector<double>>();
                if (flat.size() != out * in) throw Error("bad layer weight size in spec json");
                std::copy(flat.begin(), flat.end(), w.data());
                node.layer_weights.push_back(std::move(w));
                node.layer_biases.push_back(lj.at("b").get<std::vector<double>>());
            }
        }
        spec.nodes.push_back(std::move(node));
    }
    for (const auto& wj : j.at("warps")) {
        Warp warp;
        warp.kind = static_cast<Warp::Kind>(wj.at("kind").get<int>());
        warp.bins = wj.at("bins").get<int>();
        spec.warps.push_back(warp);
    }
    return spec;
}

}  // namespace tabcure::procgen
