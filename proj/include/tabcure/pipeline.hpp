#pragma once

// Pipeline orchestration: a single config file drives ingest -> synthetic
// generation -> base pretraining -> embedding -> curation -> continued
// pretraining -> evaluation -> efficiency reporting, with every stage
// persisted under the artifact directory and keyed by a hash of its resolved
// inputs so re-runs skip completed work. All stage seeds derive from the
// master seed; two runs with the same config produce byte-identical
// artifacts.

#include <chrono>
#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tabcure/curation.hpp"
#include "tabcure/pfn.hpp"

namespace tabcure::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "tabcure 0.1.0";

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

struct SelectionConfig {
    size_t k = 200;
    size_t n_syn_train = 250;
    double target_train_fraction = 0.7;
};

struct EvalConfig {
    std::vector<double> fractions = evalharness::default_fractions();
    int folds = 10;
    double split = 0.7;
};

struct PipelineConfig {
    fs::path data_dir = "data";
    fs::path artifact_dir = "artifacts";
    uint64_t master_seed = 1234;
    size_t synthetic_count = 10000;
    size_t distinguish_sample = 500;  // synthetic-side cap for the distinguish command
    procgen::PriorConfig prior;
    pfn::PfnConfig pfn;
    bool gbt_search = false;  // "search" runs HPO inside curate
    gbt::GbtConfig gbt = curation::warm_start_config();
    int hpo_trials = 50;
    int hpo_folds = 5;
    SelectionConfig selection;
    int finetune_epochs = 5;
    EvalConfig eval;

    // Derived per-stage seeds.
    uint64_t ingest_seed() const { return mix_seed(master_seed, 1); }
    uint64_t synthetic_seed() const { return mix_seed(master_seed, 2); }
    uint64_t pretrain_seed() const { return mix_seed(master_seed, 3); }
    uint64_t curation_seed() const { return mix_seed(master_seed, 4); }
    uint64_t eval_seed() const { return mix_seed(master_seed, 5); }

    void validate() const {
        prior.validate();
        pfn::PfnConfig p = pfn;
        p.validate();
        gbt.validate();
        if (synthetic_count <= selection.n_syn_train)
            throw ConfigError("synthetic_count must exceed selection.n_syn_train");
        if (selection.k > synthetic_count - selection.n_syn_train)
            throw ConfigError("selection.k exceeds the scored pool");
        if (selection.target_train_fraction <= 0.0 || selection.target_train_fraction > 1.0)
            throw ConfigError("selection.target_train_fraction must be in (0,1]");
        if (eval.folds < 2) throw ConfigError("eval.folds must be >= 2");
        if (eval.split <= 0.0 || eval.split >= 1.0) throw ConfigError("eval.split must be in (0,1)");
        if (finetune_epochs < 0) throw ConfigError("finetune_epochs must be >= 0");
        if (hpo_trials < 1 || hpo_folds < 2) throw ConfigError("bad hpo settings");
    }
};

inline io::json prior_to_json(const procgen::PriorConfig& p) {
    io::json j;
    j["feature_count_range"] = {p.feature_count_range.lo, p.feature_count_range.hi};
    j["rows"] = p.rows;
    j["extra_nodes_range"] = {p.extra_nodes_range.lo, p.extra_nodes_range.hi};
    j["mlp_width_range"] = {p.mlp_width_range.lo, p.mlp_width_range.hi};
    j["mlp_depth_range"] = {p.mlp_depth_range.lo, p.mlp_depth_range.hi};
    std::vector<std::string> acts;
    for (auto a : p.activation_set) acts.push_back(procgen::to_string(a));
    j["activation_set"] = acts;
    j["noise_scale_range"] = {p.noise_scale_range.lo, p.noise_scale_range.hi};
    j["warp_probability"] = p.warp_probability;
    return j;
}

inline procgen::PriorConfig prior_from_json(const io::json& j, procgen::PriorConfig base = {}) {
    auto range = [&](const char* key, procgen::IntRange cur) {
        if (!j.contains(key)) return cur;
        const auto v = j.at(key).get<std::vector<int>>();
        if (v.size() != 2) throw ConfigError(std::string("range ") + key + " needs [lo, hi]");
        return procgen::IntRange{v[0], v[1]};
    };
    base.feature_count_range = range("feature_count_range", base.feature_count_range);
    base.rows = j.value("rows", base.rows);
    base.extra_nodes_range = range("extra_nodes_range", base.extra_nodes_range);
    base.mlp_width_range = range("mlp_width_range", base.mlp_width_range);
    base.mlp_depth_range = range("mlp_depth_range", base.mlp_depth_range);
    if (j.contains("activation_set")) {
        base.activation_set.clear();
        for (const auto& a : j.at("activation_set"))
            base.activation_set.push_back(procgen::activation_from_string(a.get<std::string>()));
    }
    if (j.contains("noise_scale_range")) {
        const auto v = j.at("noise_scale_range").get<std::vector<double>>();
        if (v.size() != 2) throw ConfigError("noise_scale_range needs [lo, hi]");
        base.noise_scale_range = {v[0], v[1]};
    }
    base.warp_probability = j.value("warp_probability", base.warp_probability);
    return base;
}

inline io::json gbt_to_json(const gbt::GbtConfig& c) {
    return io::json{{"n_estimators", c.n_estimators},
                    {"learning_rate", c.learning_rate},
                    {"max_depth", c.max_depth},
                    {"subsample", c.subsample},
                    {"colsample_bytree", c.colsample_bytree},
                    {"min_child_weight", c.min_child_weight},
                    {"reg_lambda", c.reg_lambda},
                    {"gamma", c.gamma},
                    {"reg_alpha", c.reg_alpha}};
}

inline gbt::GbtConfig gbt_from_json(const io::json& j, gbt::GbtConfig base = curation::warm_start_config()) {
    base.n_estimators = j.value("n_estimators", base.n_estimators);
    base.learning_rate = j.value("learning_rate", base.learning_rate);
    base.max_depth = j.value("max_depth", base.max_depth);
    base.subsample = j.value("subsample", base.subsample);
    base.colsample_bytree = j.value("colsample_bytree", base.colsample_bytree);
    base.min_child_weight = j.value("min_child_weight", base.min_child_weight);
    base.reg_lambda = j.value("reg_lambda", base.reg_lambda);
    base.gamma = j.value("gamma", base.gamma);
    base.reg_alpha = j.value("reg_alpha", base.reg_alpha);
    return base;
}

inline io::json config_to_json(const PipelineConfig& c) {
    io::json j;
    j["paths"] = {{"data_dir", c.data_dir.string()}, {"artifact_dir", c.artifact_dir.string()}};
    j["master_seed"] = c.master_seed;
    j["synthetic_count"] = c.synthetic_count;
    j["distinguish_sample"] = c.distinguish_sample;
    j["prior"] = prior_to_json(c.prior);
    j["pfn"] = pfn::config_to_json(c.pfn);
    if (c.gbt_search)
        j["gbt"] = "search";
    else
        j["gbt"] = gbt_to_json(c.gbt);
    j["hpo"] = {{"trials", c.hpo_trials}, {"folds", c.hpo_folds}};
    j["selection"] = {{"k", c.selection.k},
                      {"n_syn_train", c.selection.n_syn_train},
                      {"target_train_fraction", c.selection.target_train_fraction}};
    j["finetune_epochs"] = c.finetune_epochs;
    j["eval"] = {{"fractions", c.eval.fractions}, {"folds", c.eval.folds}, {"split", c.eval.split}};
    return j;
}

inline PipelineConfig config_from_json(const io::json& j) {
    PipelineConfig c;
    try {
        if (j.contains("paths")) {
            c.data_dir = j.at("paths").value("data_dir", c.data_dir.string());
            c.artifact_dir = j.at("paths").value("artifact_dir", c.artifact_dir.string());
        }
        c.master_seed = j.value("master_seed", c.master_seed);
        c.synthetic_count = j.value("synthetic_count", c.synthetic_count);
        c.distinguish_sample = j.value("distinguish_sample", c.distinguish_sample);
        if (j.contains("prior")) c.prior = prior_from_json(j.at("prior"));
        if (j.contains("pfn")) c.pfn = pfn::config_from_json(j.at("pfn"));
        if (j.contains("gbt")) {
            if (j.at("gbt").is_string()) {
                if (j.at("gbt").get<std::string>() != "search")
                    throw ConfigError("gbt must be a config object or \"search\"");
                c.gbt_search = true;
            } else {
                c.gbt = gbt_from_json(j.at("gbt"));
            }
        }
        if (j.contains("hpo")) {
            c.hpo_trials = j.at("hpo").value("trials", c.hpo_trials);
            c.hpo_folds = j.at("hpo").value("folds", c.hpo_folds);
        }
        if (j.contains("selection")) {
            c.selection.k = j.at("selection").value("k", c.selection.k);
            c.selection.n_syn_train = j.at("selection").value("n_syn_train", c.selection.n_syn_train);
            c.selection.target_train_fraction =
                j.at("selection").value("target_train_fraction", c.selection.target_train_fraction);
        }
        c.finetune_epochs = j.value("finetune_epochs", c.finetune_epochs);
        if (j.contains("eval")) {
            if (j.at("eval").contains("fractions"))
                c.eval.fractions = j.at("eval").at("fractions").get<std::vector<double>>();
            c.eval.folds = j.at("eval").value("folds", c.eval.folds);
            c.eval.split = j.at("eval").value("split", c.eval.split);
        }
    } catch (const io::json::exception& e) {
        throw ConfigError(std::string("config parse: ") + e.what());
    }
    // seeds flow from the master seed
    PipelineConfig seeded = c;
    seeded.prior.seed = c.synthetic_seed();
    seeded.pfn.seed = c.pretrain_seed();
    seeded.gbt.seed = c.curation_seed();
    return seeded;
}

inline PipelineConfig load_config(const fs::path& path) {
    io::json j;
    try {
        j = io::load_json(path);
    } catch (const io::json::exception& e) {
        throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    PipelineConfig c = config_from_json(j);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Stage manifests and resume
// ---------------------------------------------------------------------------

struct StageManifest {
    std::string stage;
    std::string manifest_id;
    std::string inputs_hash;
    std::vector<std::pair<std::string, std::string>> outputs;  // relative path, hash
    std::vector<std::string> inputs_read;                      // file-access audit
    long wall_ms = 0;
};

inline fs::path manifest_path(const fs::path& artifact_dir, const std::string& stage) {
    return artifact_dir / "manifests" / (stage + ".json");
}

inline void save_manifest(const fs::path& artifact_dir, const StageManifest& m,
                          const io::json& config_snapshot) {
    io::json j;
    j["stage"] = m.stage;
    j["manifest_id"] = m.manifest_id;
    j["inputs_hash"] = m.inputs_hash;
    io::json outs = io::json::array();
    for (const auto& [path, hash] : m.outputs) outs.push_back({{"path", path}, {"hash", hash}});
    j["outputs"] = std::move(outs);
    j["inputs_read"] = m.inputs_read;
    j["wall_ms"] = m.wall_ms;
    j["tool_version"] = kToolVersion;
    j["config"] = config_snapshot;
    io::save_json(manifest_path(artifact_dir, m.stage), j);
}

inline std::optional<StageManifest> load_manifest(const fs::path& artifact_dir,
                                                  const std::string& stage) {
    const fs::path p = manifest_path(artifact_dir, stage);
    if (!fs::exists(p)) return std::nullopt;
    const io::json j = io::load_json(p);
    StageManifest m;
    m.stage = j.at("stage").get<std::string>();
    m.manifest_id = j.at("manifest_id").get<std::string>();
    m.inputs_hash = j.at("inputs_hash").get<std::string>();
    for (const auto& o : j.at("outputs"))
        m.outputs.emplace_back(o.at("path").get<std::string>(), o.at("hash").get<std::string>());
    if (j.contains("inputs_read")) m.inputs_read = j.at("inputs_read").get<std::vector<std::string>>();
    m.wall_ms = j.value("wall_ms", 0L);
    return m;
}

// Combined digest of a stage's outputs; downstream stages hash this into
// their own inputs_hash.
inline std::string outputs_digest(const StageManifest& m) {
    Hasher h;
    for (const auto& [path, hash] : m.outputs) {
        h.update_string(path);
        h.update_string(hash);
    }
    return h.digest().hex();
}

// Single-writer guard on the artifact directory.
class DirectoryLock {
public:
    explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
        fs::create_directories(dir);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw Error("artifact directory is locked by another run: " + path_.string());
        const std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] ssize_t n = ::write(fd_, pid.data(), pid.size());
    }
    ~DirectoryLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            std::error_code ec;
            fs::remove(path_, ec);
        }
    }
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

struct StageRunner {
    const PipelineConfig& cfg;
    bool force = false;
    int jobs = 1;
    std::vector<std::string>* log = nullptr;

    void note(const std::string& msg) const {
        if (log) log->push_back(msg);
    }

    // Runs `stage` unless a manifest with the same inputs hash and intact
    // outputs already exists. `body` receives the (deterministic) manifest id
    // and returns the produced files (relative to the artifact dir) plus the
    // files it read.
    StageManifest run(const std::string& stage, const std::string& inputs_hash,
                      const std::function<std::pair<std::vector<std::string>,
                                                    std::vector<std::string>>(const std::string&)>&
                          body) const {
        if (!force) {
            if (auto existing = load_manifest(cfg.artifact_dir, stage)) {
                if (existing->inputs_hash == inputs_hash) {
                    bool intact = true;
                    for (const auto& [rel, hash] : existing->outputs)
                        if (!fs::exists(cfg.artifact_dir / rel)) {
                            intact = false;
                            break;
                        }
                    if (intact) {
                        note("stage " + stage + ": up to date, skipped");
                        return *existing;
                    }
                }
            }
        }
        note("stage " + stage + ": running");
        const auto t0 = std::chrono::steady_clock::now();
        StageManifest m;
        m.stage = stage;
        m.inputs_hash = inputs_hash;
        {
            Hasher h;
            h.update_string(stage);
            h.update_string(inputs_hash);
            m.manifest_id = h.digest().hex();
        }
        try {
            auto [outputs, reads] = body(m.manifest_id);
            for (const auto& rel : outputs)
                m.outputs.emplace_back(rel, io::hash_file(cfg.artifact_dir / rel).hex());
            m.inputs_read = std::move(reads);
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            throw Error("stage " + stage + ": " + e.what());
        }
        m.wall_ms = static_cast<long>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                          std::chrono::steady_clock::now() - t0)
                                          .count());
        save_manifest(cfg.artifact_dir, m, config_to_json(cfg));
        return m;
    }
};

inline std::string config_subtree_hash(const io::json& j) {
    const std::string s = j.dump();
    return hash_bytes(s.data(), s.size()).hex();
}

// CSV/text artifacts cannot embed the manifest id without breaking their
// pinned formats, so they get a JSON sidecar pointing back at it.
inline std::string write_meta(const fs::path& artifact_dir, const std::string& rel,
                              const std::string& manifest_id) {
    const std::string meta_rel = rel + ".meta.json";
    io::save_json(artifact_dir / meta_rel,
                  io::json{{"artifact", rel}, {"manifest_id", manifest_id}});
    return meta_rel;
}

// ---------------------------------------------------------------------------
// Ingest
// ---------------------------------------------------------------------------

struct IngestEntry {
    std::string name;
    Label label = Label::NonEngineering;
    std::string bench_file;
    std::string embed_file;
    std::string content_hash;  // bench variant
    size_t original_rows = 0;
};

struct IngestSummary {
    std::vector<IngestEntry> datasets;
    std::vector<std::pair<std::string, std::string>> rejections;  // file, reason
};

inline io::json ingest_to_json(const IngestSummary& s, const std::string& manifest_id) {
    io::json j;
    j["manifest_id"] = manifest_id;
    io::json ds = io::json::array();
    for (const auto& e : s.datasets) {
        ds.push_back({{"name", e.name},
                      {"label", to_string(e.label)},
                      {"bench_file", e.bench_file},
                      {"embed_file", e.embed_file},
                      {"content_hash", e.content_hash},
                      {"original_rows", e.original_rows}});
    }
    j["datasets"] = std::move(ds);
    io::json rj = io::json::array();
    for (const auto& [file, reason] : s.rejections) rj.push_back({{"file", file}, {"reason", reason}});
    j["rejections"] = std::move(rj);
    return j;
}

inline IngestSummary ingest_from_json(const io::json& j) {
    IngestSummary s;
    for (const auto& e : j.at("datasets")) {
        IngestEntry entry;
        entry.name = e.at("name").get<std::string>();
        entry.label = label_from_string(e.at("label").get<std::string>());
        entry.bench_file = e.at("bench_file").get<std::string>();
        entry.embed_file = e.at("embed_file").get<std::string>();
        entry.content_hash = e.at("content_hash").get<std::string>();
        entry.original_rows = e.at("original_rows").get<size_t>();
        s.datasets.push_back(std::move(entry));
    }
    for (const auto& r : j.at("rejections"))
        s.rejections.emplace_back(r.at("file").get<std::string>(), r.at("reason").get<std::string>());
    return s;
}

inline StageManifest stage_ingest(const StageRunner& runner) {
    const PipelineConfig& cfg = runner.cfg;
    if (!fs::exists(cfg.data_dir)) throw Error("ingest: data directory missing: " + cfg.data_dir.string());
    std::vector<fs::path> csvs;
    for (const auto& entry : fs::directory_iterator(cfg.data_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".csv") csvs.push_back(entry.path());
    std::sort(csvs.begin(), csvs.end());
    if (csvs.empty()) throw Error("ingest: no CSV files in " + cfg.data_dir.string());

    Hasher inputs;
    inputs.update_string("ingest");
    inputs.update_value(cfg.ingest_seed());
    std::vector<fs::path> sidecars;
    for (const auto& p : csvs) {
        inputs.update_string(p.filename().string());
        inputs.update_string(io::hash_file(p).hex());
        fs::path sc = p;
        sc.replace_extension(".schema.json");
        sidecars.push_back(sc);
        if (fs::exists(sc)) inputs.update_string(io::hash_file(sc).hex());
    }

    return runner.run("ingest", inputs.digest().hex(), [&](const std::string& manifest_id) {
        IngestSummary summary;
        std::vector<std::string> outputs, reads;
        std::set<std::string> seen_hashes;
        for (size_t i = 0; i < csvs.size(); ++i) {
            const fs::path& p = csvs[i];
            const std::string name = p.stem().string();
            reads.push_back(p.string());
            SidecarSchema schema;
            const SidecarSchema* schema_ptr = nullptr;
            if (fs::exists(sidecars[i])) {
                schema = load_sidecar(sidecars[i]);
                schema_ptr = &schema;
                reads.push_back(sidecars[i].string());
            }
            const Label label = schema.label.value_or(Label::NonEngineering);
            const uint64_t seed = mix_seed(cfg.ingest_seed(),
                                           hash_bytes(name.data(), name.size()).lo);
            try {
                const RawTable raw = load_csv(p, schema.target_column, seed, schema_ptr);
                Dataset bench = preprocess(raw, schema.target_column, seed, /*for_embedding=*/false,
                                           name, label);
                Dataset embed = preprocess(raw, schema.target_column, seed, /*for_embedding=*/true,
                                           name, label);
                const std::string bench_hash = bench.meta.content_hash.hex();
                if (!seen_hashes.insert(bench_hash).second) {
                    summary.rejections.emplace_back(p.filename().string(), "duplicate dataset");
                    continue;
                }
                IngestEntry entry;
                entry.name = name;
                entry.label = label;
                entry.bench_file = "datasets/" + name + ".bench.tcds";
                entry.embed_file = "datasets/" + name + ".embed.tcds";
                entry.content_hash = bench_hash;
                entry.original_rows = raw.row_count;
                save_dataset(cfg.artifact_dir / entry.bench_file, bench, manifest_id);
                save_dataset(cfg.artifact_dir / entry.embed_file, embed, manifest_id);
                outputs.push_back(entry.bench_file);
                outputs.push_back(entry.embed_file);
                summary.datasets.push_back(std::move(entry));
            } catch (const Error& e) {
                summary.rejections.emplace_back(p.filename().string(), e.what());
            }
        }
        if (summary.datasets.empty() && summary.rejections.empty())
            throw Error("ingest: nothing ingested");
        io::save_json(cfg.artifact_dir / "ingest_registry.json",
                      ingest_to_json(summary, manifest_id));
        outputs.push_back("ingest_registry.json");
        for (const auto& [file, reason] : summary.rejections)
            runner.note("ingest: rejected " + file + " (" + reason + ")");
        runner.note("ingest: " + std::to_string(summary.datasets.size()) + " datasets, " +
                    std::to_string(summary.rejections.size()) + " rejections");
        return std::make_pair(outputs, reads);
    });
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

inline std::string synthetic_task_file(size_t index) {
    return "synthetic/task-" + std::to_string(index) + ".tcds";
}

inline StageManifest stage_gen_synthetic(const StageRunner& runner) {
    const PipelineConfig& cfg = runner.cfg;
    io::json key;
    key["prior"] = prior_to_json(cfg.prior);
    key["count"] = cfg.synthetic_count;
    key["seed"] = cfg.synthetic_seed();
    return runner.run("gen-synthetic", config_subtree_hash(key), [&](const std::string& manifest_id) {
        const size_t count = cfg.synthetic_count;
        std::vector<std::string> hashes(count);
        fs::create_directories(cfg.artifact_dir / "synthetic");
        // Streamed: each task is generated, written, and dropped. Per-task
        // seeds match procgen::generate_batch's derivation.
        parallel_for(count, runner.jobs, [&](size_t i) {
            const uint64_t task_seed = mix_seed(cfg.synthetic_seed(), i);
            procgen::SyntheticTask task;
            try {
                task = procgen::materialize(procgen::sample_spec(cfg.prior, task_seed));
            } catch (const Error& e) {
                throw Error("task " + std::to_string(i) + ": " + e.what());
            }
            task.dataset.meta.name = "syn-" + std::to_string(i);
            const std::string file = synthetic_task_file(i);
            save_dataset(cfg.artifact_dir / file, task.dataset, manifest_id);
            io::json spec_json = procgen::spec_to_json(task.spec);
            spec_json["manifest_id"] = manifest_id;
            io::save_json(cfg.artifact_dir / ("synthetic/task-" + std::to_string(i) + ".spec.json"),
                          spec_json);
            hashes[i] = task.dataset.meta.content_hash.hex();
        });
        io::json registry;
        registry["manifest_id"] = manifest_id;
        registry["count"] = count;
        registry["seed"] = cfg.synthetic_seed();
        registry["hashes"] = hashes;
        io::save_json(cfg.artifact_dir / "synthetic_registry.json", registry);
        runner.note("gen-synthetic: " + std::to_string(count) + " tasks");
        // Only the registry is hashed into the manifest; the per-task files
        // are covered by the content hashes it records.
        return std::make_pair(std::vector<std::string>{"synthetic_registry.json"},
                              std::vector<std::string>{});
    });
}

inline StageManifest stage_gen_control(const StageRunner& runner, size_t count) {
    const PipelineConfig& cfg = runner.cfg;
    io::json key;
    key["count"] = count;
    key["rows"] = cfg.prior.rows;
    key["seed"] = mix_seed(cfg.master_seed, 7);
    return runner.run("gen-control", config_subtree_hash(key), [&](const std::string& manifest_id) {
        fs::create_directories(cfg.artifact_dir / "control");
        std::vector<std::string> outputs(count);
        parallel_for(count, runner.jobs, [&](size_t i) {
            const uint64_t seed = mix_seed(mix_seed(cfg.master_seed, 7), i);
            Rng rng(seed);
            const auto f = static_cast<size_t>(rng.range(2, static_cast<int64_t>(kMaxFeatures)));
            Dataset d = generate_control(f, cfg.prior.rows, seed);
            d.meta.name = "control-" + std::to_string(i);
            const std::string file = "control/control-" + std::to_string(i) + ".tcds";
            save_dataset(cfg.artifact_dir / file, d, manifest_id);
            outputs[i] = file;
        });
        runner.note("gen-control: " + std::to_string(count) + " datasets");
        return std::make_pair(outputs, std::vector<std::string>{});
    });
}

// ---------------------------------------------------------------------------
// Pretrain / embed / curate / finetune
// ---------------------------------------------------------------------------

inline StageManifest stage_pretrain(const StageRunner& runner) {
    const PipelineConfig& cfg = runner.cfg;
    io::json key;
    key["pfn"] = pfn::config_to_json(cfg.pfn);
    key["prior"] = prior_to_json(cfg.prior);
    return runner.run("pretrain", config_subtree_hash(key), [&](const std::string& manifest_id) {
        pfn::PretrainResult result = pfn::pretrain(cfg.pfn, cfg.prior);
        pfn::save_checkpoint(cfg.artifact_dir / "models/base.ckpt", result.model, manifest_id);
        io::CsvWriter trace;
        trace.row({"step", "loss"});
        for (size_t i = 0; i < result.loss_trace.size(); ++i)
            trace.row({std::to_string(i), io::format_number(result.loss_trace[i])});
        trace.save(cfg.artifact_dir / "models/base_loss.csv");
        runner.note("pretrain: " + std::to_string(cfg.pfn.steps) + " steps, final loss " +
                    (result.loss_trace.empty() ? "n/a"
                                               : io::format_number(result.loss_trace.back())));
        return std::make_pair(
            std::vector<std::string>{"models/base.ckpt", "models/base_loss.csv",
                                     write_meta(cfg.artifact_dir, "models/base_loss.csv", manifest_id)},
            std::vector<std::string>{});
    });
}

inline void write_embedding_csv(const fs::path& path,
                                const std::vector<std::pair<std::string, pfn::DatasetEmbedding>>& rows,
                                int d_model) {
    io::CsvWriter csv;
    std::vector<std::string> header{"dataset", "model_id"};
    for (int i = 0; i < d_model; ++i) header.push_back("e" + std::to_string(i));
    csv.row(header);
    for (const auto& [name, emb] : rows) {
        std::vector<std::string> row{name, emb.model_id};
        for (double v : emb.values) row.push_back(io::format_number(v));
        csv.row(row);
    }
    csv.save(path);
}

struct EmbeddingTable {
    std::vector<std::string> names;
    std::vector<std::vector<double>> vectors;
};

inline EmbeddingTable read_embedding_csv(const fs::path& path) {
    const std::string bytes = io::read_file(path);
    EmbeddingTable table;
    size_t pos = 0;
    bool header = true;
    while (pos < bytes.size()) {
        size_t nl = bytes.find('\n', pos);
        if (nl == std::string::npos) nl = bytes.size();
        const std::string line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        const auto fields = io::split_csv_line(line, ',');
        if (fields.size() < 3) throw Error("embedding csv: short row in " + path.string());
        table.names.push_back(fields[0]);
        std::vector<double> vec(fields.size() - 2);
        for (size_t i = 2; i < fields.size(); ++i) {
            auto [p, ec] = std::from_chars(fields[i].data(), fields[i].data() + fields[i].size(), vec[i - 2]);
            if (ec != std::errc()) throw Error("embedding csv: bad number in " + path.string());
        }
        table.vectors.push_back(std::move(vec));
    }
    return table;
}

inline StageManifest stage_embed(const StageRunner& runner, const StageManifest& pretrain_m,
                                 const StageManifest& synth_m, const StageManifest& ingest_m) {
    const PipelineConfig& cfg = runner.cfg;
    Hasher inputs;
    inputs.update_string(outputs_digest(pretrain_m));
    inputs.update_string(outputs_digest(synth_m));
    inputs.update_string(outputs_digest(ingest_m));
    return runner.run("embed", inputs.digest().hex(), [&](const std::string& manifest_id) {
        std::vector<std::string> reads{(cfg.artifact_dir / "models/base.ckpt").string()};
        const pfn::PfnModel model = pfn::load_checkpoint(cfg.artifact_dir / "models/base.ckpt");

        std::vector<std::pair<std::string, pfn::DatasetEmbedding>> syn_rows(cfg.synthetic_count);
        parallel_for(cfg.synthetic_count, runner.jobs, [&](size_t i) {
            const Dataset d = load_dataset(cfg.artifact_dir / synthetic_task_file(i));
            syn_rows[i] = {"syn-" + std::to_string(i), pfn::embed_dataset(model, d)};
        });
        write_embedding_csv(cfg.artifact_dir / "embeddings/synthetic.csv", syn_rows, cfg.pfn.d_model);

        const IngestSummary ingest =
            ingest_from_json(io::load_json(cfg.artifact_dir / "ingest_registry.json"));
        std::vector<std::pair<std::string, pfn::DatasetEmbedding>> target_rows(ingest.datasets.size());
        parallel_for(ingest.datasets.size(), runner.jobs, [&](size_t i) {
            const auto& entry = ingest.datasets[i];
            const Dataset d = load_dataset(cfg.artifact_dir / entry.embed_file);
            target_rows[i] = {entry.name, pfn::embed_dataset(model, d)};
        });
        for (const auto& entry : ingest.datasets)
            reads.push_back((cfg.artifact_dir / entry.embed_file).string());
        write_embedding_csv(cfg.artifact_dir / "embeddings/target.csv", target_rows, cfg.pfn.d_model);
        runner.note("embed: " + std::to_string(syn_rows.size()) + " synthetic + " +
                    std::to_string(target_rows.size()) + " target datasets");
        return std::make_pair(
            std::vector<std::string>{
                "embeddings/synthetic.csv", "embeddings/target.csv",
                write_meta(cfg.artifact_dir, "embeddings/synthetic.csv", manifest_id),
                write_meta(cfg.artifact_dir, "embeddings/target.csv", manifest_id)},
            reads);
    });
}

// Engineering-labeled ingested datasets are the curation/evaluation targets.
inline std::vector<IngestEntry> engineering_entries(const IngestSummary& ingest) {
    std::vector<IngestEntry> out;
    for (const auto& e : ingest.datasets)
        if (e.label == Label::Engineering) out.push_back(e);
    return out;
}

inline StageManifest stage_curate(const StageRunner& runner, const StageManifest& embed_m) {
    const PipelineConfig& cfg = runner.cfg;
    Hasher inputs;
    inputs.update_string(outputs_digest(embed_m));
    io::json key;
    key["selection"] = {{"k", cfg.selection.k},
                        {"n_syn_train", cfg.selection.n_syn_train},
                        {"target_train_fraction", cfg.selection.target_train_fraction}};
    key["gbt"] = cfg.gbt_search ? io::json("search") : gbt_to_json(cfg.gbt);
    key["hpo"] = {{"trials", cfg.hpo_trials}, {"folds", cfg.hpo_folds}};
    key["seed"] = cfg.curation_seed();
    inputs.update_string(config_subtree_hash(key));
    return runner.run("curate", inputs.digest().hex(), [&](const std::string& manifest_id) {
        std::vector<std::string> outputs, reads;
        const fs::path syn_csv = cfg.artifact_dir / "embeddings/synthetic.csv";
        const fs::path tgt_csv = cfg.artifact_dir / "embeddings/target.csv";
        reads.push_back(syn_csv.string());
        reads.push_back(tgt_csv.string());
        const EmbeddingTable syn = read_embedding_csv(syn_csv);
        const EmbeddingTable tgt_all = read_embedding_csv(tgt_csv);

        const IngestSummary ingest =
            ingest_from_json(io::load_json(cfg.artifact_dir / "ingest_registry.json"));
        std::set<std::string> engineering;
        for (const auto& e : engineering_entries(ingest)) engineering.insert(e.name);
        std::vector<std::vector<double>> target;
        for (size_t i = 0; i < tgt_all.names.size(); ++i)
            if (engineering.count(tgt_all.names[i])) target.push_back(tgt_all.vectors[i]);
        if (target.size() < 2)
            throw Error("curate: need at least 2 engineering-labeled target datasets");

        std::vector<std::pair<uint64_t, std::vector<double>>> synthetic(syn.names.size());
        for (size_t i = 0; i < syn.names.size(); ++i) synthetic[i] = {i, syn.vectors[i]};

        gbt::GbtConfig classifier = cfg.gbt;
        if (cfg.gbt_search) {
            // Tune on the same class composition the selection classifier
            // trains on: a seeded n_syn_train-sized synthetic draw vs the
            // target embeddings.
            Rng hpo_rng = Rng::stream(cfg.curation_seed(), 0x490AB);
            const size_t syn_take = std::min(cfg.selection.n_syn_train, synthetic.size());
            const auto syn_pick = hpo_rng.sample_without_replacement(synthetic.size(), syn_take);
            MatD x(syn_take + target.size(), synthetic.front().second.size());
            std::vector<int> labels(x.rows());
            for (size_t i = 0; i < syn_take; ++i) {
                for (size_t c = 0; c < x.cols(); ++c) x(i, c) = synthetic[syn_pick[i]].second[c];
                labels[i] = 0;
            }
            for (size_t i = 0; i < target.size(); ++i) {
                for (size_t c = 0; c < x.cols(); ++c) x(syn_take + i, c) = target[i][c];
                labels[syn_take + i] = 1;
            }
            const curation::HpoResult hpo = curation::hpo_search(x, labels, cfg.hpo_trials,
                                                                 cfg.hpo_folds, cfg.curation_seed());
            classifier = hpo.best;
            io::CsvWriter trace;
            curation::hpo_trace_to_csv(hpo, trace);
            trace.save(cfg.artifact_dir / "curation/hpo_trace.csv");
            outputs.push_back("curation/hpo_trace.csv");
            outputs.push_back(write_meta(cfg.artifact_dir, "curation/hpo_trace.csv", manifest_id));
        }

        const curation::SelectionReport report = curation::select_engineering_like(
            synthetic, target, cfg.selection.k, cfg.selection.n_syn_train,
            cfg.selection.target_train_fraction, classifier, cfg.curation_seed());
        io::json sj = curation::selection_to_json(report);
        sj["manifest_id"] = manifest_id;
        io::save_json(cfg.artifact_dir / "curation/selection.json", sj);
        outputs.push_back("curation/selection.json");
        runner.note("curate: selected " + std::to_string(report.selected_ids.size()) + " of " +
                    std::to_string(report.scored.size()) + " scored tasks");
        return std::make_pair(outputs, reads);
    });
}

inline StageManifest stage_finetune(const StageRunner& runner, const StageManifest& pretrain_m,
                                    const StageManifest& curate_m) {
    const PipelineConfig& cfg = runner.cfg;
    Hasher inputs;
    inputs.update_string(outputs_digest(pretrain_m));
    inputs.update_string(outputs_digest(curate_m));
    inputs.update_value(cfg.finetune_epochs);
    return runner.run("finetune", inputs.digest().hex(), [&](const std::string& manifest_id) {
        std::vector<std::string> reads;
        const pfn::PfnModel base = pfn::load_checkpoint(cfg.artifact_dir / "models/base.ckpt");
        reads.push_back((cfg.artifact_dir / "models/base.ckpt").string());
        const curation::SelectionReport report = curation::selection_from_json(
            io::load_json(cfg.artifact_dir / "curation/selection.json"));
        std::vector<procgen::SyntheticTask> tasks(report.selected_ids.size());
        parallel_for(report.selected_ids.size(), runner.jobs, [&](size_t i) {
            const std::string file = synthetic_task_file(report.selected_ids[i]);
            tasks[i].dataset = load_dataset(cfg.artifact_dir / file);
        });
        for (uint64_t id : report.selected_ids)
            reads.push_back((cfg.artifact_dir / synthetic_task_file(id)).string());
        const pfn::PfnModel adapted = pfn::continued_pretrain(base, tasks, cfg.finetune_epochs);
        pfn::save_checkpoint(cfg.artifact_dir / "models/adapted.ckpt", adapted, manifest_id);
        runner.note("finetune: " + std::to_string(cfg.finetune_epochs) + " epochs over " +
                    std::to_string(tasks.size()) + " tasks");
        return std::make_pair(std::vector<std::string>{"models/adapted.ckpt"}, reads);
    });
}

// ---------------------------------------------------------------------------
// Evaluation and efficiency
// ---------------------------------------------------------------------------

struct EvalAdapters {
    std::vector<std::unique_ptr<evalharness::RegressorAdapter>> adapters;
    std::string candidate_id;
};

inline EvalAdapters make_eval_adapters(std::shared_ptr<const pfn::PfnModel> base,
                                       std::shared_ptr<const pfn::PfnModel> adapted) {
    EvalAdapters out;
    out.adapters.push_back(std::make_unique<pfn::PfnRegressor>(base, "pfn-base"));
    out.adapters.push_back(std::make_unique<pfn::PfnRegressor>(adapted, "pfn-adapted"));
    for (auto& ref : evalharness::reference_regressors()) out.adapters.push_back(std::move(ref));
    out.candidate_id = "pfn-adapted";
    return out;
}

inline StageManifest stage_eval(const StageRunner& runner, const StageManifest& ingest_m,
                                const StageManifest& finetune_m) {
    const PipelineConfig& cfg = runner.cfg;
    Hasher inputs;
    inputs.update_string(outputs_digest(ingest_m));
    inputs.update_string(outputs_digest(finetune_m));
    io::json key;
    key["fractions"] = cfg.eval.fractions;
    key["folds"] = cfg.eval.folds;
    key["split"] = cfg.eval.split;
    key["seed"] = cfg.eval_seed();
    inputs.update_string(config_subtree_hash(key));
    return runner.run("eval", inputs.digest().hex(), [&](const std::string& manifest_id) {
        std::vector<std::string> reads;
        auto base = std::make_shared<const pfn::PfnModel>(
            pfn::load_checkpoint(cfg.artifact_dir / "models/base.ckpt"));
        auto adapted = std::make_shared<const pfn::PfnModel>(
            pfn::load_checkpoint(cfg.artifact_dir / "models/adapted.ckpt"));
        reads.push_back((cfg.artifact_dir / "models/base.ckpt").string());
        reads.push_back((cfg.artifact_dir / "models/adapted.ckpt").string());
        const EvalAdapters adapters = make_eval_adapters(base, adapted);

        const IngestSummary ingest =
            ingest_from_json(io::load_json(cfg.artifact_dir / "ingest_registry.json"));
        const std::vector<IngestEntry> targets = engineering_entries(ingest);
        if (targets.empty()) throw Error("eval: no engineering-labeled datasets ingested");

        std::vector<evalharness::PerformanceCurve> curves;
        std::vector<evalharness::TestResult> test_results;
        for (size_t ti = 0; ti < targets.size(); ++ti) {
            const Dataset d = load_dataset(cfg.artifact_dir / targets[ti].bench_file);
            reads.push_back((cfg.artifact_dir / targets[ti].bench_file).string());
            const uint64_t ds_seed = mix_seed(cfg.eval_seed(), ti);
            const SplitIndex split = split_70_30(d, ds_seed);
            const MatD x_train = evalharness::detail::gather_rows(d.features, split.train_rows);
            const std::vector<double> y_train = evalharness::detail::gather(d.target, split.train_rows);
            const MatD x_test = evalharness::detail::gather_rows(d.features, split.test_rows);
            const std::vector<double> y_test = evalharness::detail::gather(d.target, split.test_rows);
            for (const auto& adapter : adapters.adapters) {
                curves.push_back(evalharness::sweep_curve(*adapter, d, split, cfg.eval.fractions,
                                                          cfg.eval.folds, ds_seed, runner.jobs));
                auto inst = adapter->clone();
                inst->fit_or_condition(x_train, y_train, mix_seed(ds_seed, 0x7E57));
                test_results.push_back(
                    {d.meta.name, adapter->id(), evalharness::mse(inst->predict(x_test), y_test)});
            }
            runner.note("eval: " + d.meta.name + " done");
        }
        io::CsvWriter curve_csv;
        evalharness::curves_to_csv(curves, curve_csv);
        curve_csv.save(cfg.artifact_dir / "eval/curves.csv");

        // Full-resolution curve store for the efficiency stage.
        io::json cj;
        cj["manifest_id"] = manifest_id;
        io::json curve_list = io::json::array();
        for (const auto& curve : curves) {
            io::json pts = io::json::array();
            for (const auto& pt : curve.points)
                pts.push_back({{"train_size", pt.train_size},
                               {"mse_mean", pt.mse_mean},
                               {"mse_std", pt.mse_std},
                               {"folds", pt.folds},
                               {"fraction", pt.fraction}});
            curve_list.push_back({{"dataset", curve.dataset}, {"model", curve.model}, {"points", pts}});
        }
        cj["curves"] = std::move(curve_list);
        io::save_json(cfg.artifact_dir / "eval/curves.json", cj);

        io::CsvWriter test_csv;
        test_csv.row({"dataset", "model", "test_mse"});
        for (const auto& r : test_results)
            test_csv.row({r.dataset, r.model, io::format_number(r.test_mse)});
        test_csv.save(cfg.artifact_dir / "eval/test_mse.csv");
        return std::make_pair(
            std::vector<std::string>{
                "eval/curves.csv", "eval/curves.json", "eval/test_mse.csv",
                write_meta(cfg.artifact_dir, "eval/curves.csv", manifest_id),
                write_meta(cfg.artifact_dir, "eval/test_mse.csv", manifest_id)},
            reads);
    });
}

inline std::vector<evalharness::PerformanceCurve> load_curves(const fs::path& path) {
    const io::json j = io::load_json(path);
    std::vector<evalharness::PerformanceCurve> curves;
    for (const auto& cj : j.at("curves")) {
        evalharness::PerformanceCurve curve;
        curve.dataset = cj.at("dataset").get<std::string>();
        curve.model = cj.at("model").get<std::string>();
        for (const auto& pj : cj.at("points")) {
            evalharness::CurvePoint pt;
            pt.train_size = pj.at("train_size").get<size_t>();
            pt.mse_mean = pj.at("mse_mean").get<double>();
            pt.mse_std = pj.at("mse_std").get<double>();
            pt.folds = pj.at("folds").get<int>();
            pt.fraction = pj.at("fraction").get<double>();
            curve.points.push_back(pt);
        }
        curves.push_back(std::move(curve));
    }
    return curves;
}

inline StageManifest stage_efficiency(const StageRunner& runner, const StageManifest& eval_m) {
    const PipelineConfig& cfg = runner.cfg;
    Hasher inputs;
    inputs.update_string(outputs_digest(eval_m));
    return runner.run("efficiency", inputs.digest().hex(), [&](const std::string& manifest_id) {
        std::vector<std::string> reads{(cfg.artifact_dir / "eval/curves.json").string(),
                                       (cfg.artifact_dir / "eval/test_mse.csv").string()};
        const std::vector<evalharness::PerformanceCurve> curves =
            load_curves(cfg.artifact_dir / "eval/curves.json");
        std::map<std::string, std::map<std::string, const evalharness::PerformanceCurve*>> by_dataset;
        for (const auto& c : curves) by_dataset[c.dataset][c.model] = &c;

        const std::string candidate = "pfn-adapted";
        std::vector<evalharness::EfficiencyRow> rows;
        for (const auto& [dataset, models] : by_dataset) {
            auto ci = models.find(candidate);
            if (ci == models.end()) continue;
            for (const auto& [model, curve] : models) {
                if (model == candidate) continue;
                evalharness::EfficiencyRow row;
                row.dataset = dataset;
                row.ref_model = model;
                row.new_model = candidate;
                row.result = evalharness::data_efficiency(*curve, *ci->second);
                rows.push_back(std::move(row));
            }
        }
        io::CsvWriter eff_csv;
        evalharness::efficiency_to_csv(rows, eff_csv);
        eff_csv.save(cfg.artifact_dir / "eval/efficiency.csv");

        // Win matrix from the 70/30 test errors.
        std::vector<evalharness::TestResult> test_results;
        {
            const std::string bytes = io::read_file(cfg.artifact_dir / "eval/test_mse.csv");
            size_t pos = 0;
            bool header = true;
            while (pos < bytes.size()) {
                size_t nl = bytes.find('\n', pos);
                if (nl == std::string::npos) nl = bytes.size();
                const std::string line = bytes.substr(pos, nl - pos);
                pos = nl + 1;
                if (line.empty()) continue;
                if (header) {
                    header = false;
                    continue;
                }
                const auto fields = io::split_csv_line(line, ',');
                double v = 0.0;
                std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), v);
                test_results.push_back({fields[0], fields[1], v});
            }
        }
        const std::vector<evalharness::WinEntry> wins =
            evalharness::win_matrix(test_results, candidate);
        // Aggregate E_mult per baseline both ways (mean and median).
        std::map<std::string, std::vector<double>> e_mult_by_ref;
        for (const auto& row : rows) e_mult_by_ref[row.ref_model].push_back(row.result.e_mult);
        io::json wj;
        wj["manifest_id"] = manifest_id;
        wj["candidate"] = candidate;
        io::json entries = io::json::array();
        for (const auto& w : wins) {
            io::json entry{{"baseline", w.baseline},
                           {"wins", w.wins},
                           {"total", w.total},
                           {"fraction", w.fraction}};
            auto it = e_mult_by_ref.find(w.baseline);
            if (it != e_mult_by_ref.end() && !it->second.empty()) {
                std::vector<double> v = it->second;
                std::sort(v.begin(), v.end());
                double sum = 0.0;
                for (double x : v) sum += x;
                entry["e_mult_mean"] = sum / static_cast<double>(v.size());
                entry["e_mult_median"] = v.size() % 2 ? v[v.size() / 2]
                                                      : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
            }
            entries.push_back(std::move(entry));
        }
        wj["entries"] = std::move(entries);
        io::save_json(cfg.artifact_dir / "eval/win_matrix.json", wj);

        std::string txt = "win matrix (candidate: " + candidate + ")\n";
        size_t name_width = 0;
        for (const auto& w : wins) name_width = std::max(name_width, w.baseline.size());
        for (const auto& w : wins) {
            char line[160];
            std::snprintf(line, sizeof(line), "  vs %-*s  %3zu/%-3zu  %6.1f%%\n",
                          static_cast<int>(name_width), w.baseline.c_str(), w.wins, w.total,
                          100.0 * w.fraction);
            txt += line;
        }
        io::atomic_write(cfg.artifact_dir / "eval/win_matrix.txt", txt);
        runner.note("efficiency: " + std::to_string(rows.size()) + " comparisons");
        return std::make_pair(
            std::vector<std::string>{
                "eval/efficiency.csv", "eval/win_matrix.json", "eval/win_matrix.txt",
                write_meta(cfg.artifact_dir, "eval/efficiency.csv", manifest_id),
                write_meta(cfg.artifact_dir, "eval/win_matrix.txt", manifest_id)},
            reads);
    });
}

// ---------------------------------------------------------------------------
// Distinguish (standalone command)
// ---------------------------------------------------------------------------

inline StageManifest stage_distinguish(const StageRunner& runner, const StageManifest& embed_m) {
    const PipelineConfig& cfg = runner.cfg;
    Hasher inputs;
    inputs.update_string(outputs_digest(embed_m));
    inputs.update_value(cfg.distinguish_sample);
    return runner.run("distinguish", inputs.digest().hex(), [&](const std::string& manifest_id) {
        std::vector<std::string> reads{(cfg.artifact_dir / "embeddings/synthetic.csv").string(),
                                       (cfg.artifact_dir / "embeddings/target.csv").string()};
        const EmbeddingTable syn = read_embedding_csv(cfg.artifact_dir / "embeddings/synthetic.csv");
        const EmbeddingTable tgt = read_embedding_csv(cfg.artifact_dir / "embeddings/target.csv");
        const IngestSummary ingest =
            ingest_from_json(io::load_json(cfg.artifact_dir / "ingest_registry.json"));
        std::set<std::string> engineering;
        for (const auto& e : engineering_entries(ingest)) engineering.insert(e.name);

        std::vector<std::vector<double>> syn_set = syn.vectors;
        if (syn_set.size() > cfg.distinguish_sample) {
            Rng rng = Rng::stream(cfg.curation_seed(), 0xD15);
            const auto pick = rng.sample_without_replacement(syn_set.size(), cfg.distinguish_sample);
            std::vector<std::vector<double>> subset;
            for (size_t i : pick) subset.push_back(syn_set[i]);
            syn_set = std::move(subset);
        }
        std::vector<std::vector<double>> tgt_set;
        for (size_t i = 0; i < tgt.names.size(); ++i)
            if (engineering.count(tgt.names[i])) tgt_set.push_back(tgt.vectors[i]);

        const gbt::ConfusionMatrix cm = curation::distinguishability(
            syn_set, tgt_set, 5, cfg.curation_seed(), cfg.gbt, "synthetic", "engineering");
        io::CsvWriter csv;
        curation::confusion_to_csv(cm, csv);
        csv.save(cfg.artifact_dir / "curation/distinguishability.csv");
        runner.note("distinguish: balanced accuracy " + io::format_number(cm.balanced_accuracy));
        return std::make_pair(
            std::vector<std::string>{
                "curation/distinguishability.csv",
                write_meta(cfg.artifact_dir, "curation/distinguishability.csv", manifest_id)},
            reads);
    });
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

inline std::vector<std::string> pipeline_stage_names() {
    return {"ingest", "gen-synthetic", "pretrain", "embed", "curate", "finetune", "eval", "efficiency"};
}

inline void run_pipeline(const PipelineConfig& cfg, int jobs, const std::string& stage_from,
                         std::vector<std::string>* log) {
    cfg.validate();
    DirectoryLock lock(cfg.artifact_dir);
    const std::vector<std::string> stages = pipeline_stage_names();
    size_t from_index = 0;
    if (!stage_from.empty()) {
        const auto it = std::find(stages.begin(), stages.end(), stage_from);
        if (it == stages.end()) throw ConfigError("unknown stage: " + stage_from);
        from_index = static_cast<size_t>(it - stages.begin());
    }
    auto runner_for = [&](size_t stage_index) {
        StageRunner r{cfg, /*force=*/!stage_from.empty() && stage_index >= from_index, jobs, log};
        return r;
    };
    const StageManifest ingest_m = stage_ingest(runner_for(0));
    const StageManifest synth_m = stage_gen_synthetic(runner_for(1));
    const StageManifest pretrain_m = stage_pretrain(runner_for(2));
    const StageManifest embed_m = stage_embed(runner_for(3), pretrain_m, synth_m, ingest_m);
    const StageManifest curate_m = stage_curate(runner_for(4), embed_m);
    const StageManifest finetune_m = stage_finetune(runner_for(5), pretrain_m, curate_m);
    const StageManifest eval_m = stage_eval(runner_for(6), ingest_m, finetune_m);
    stage_efficiency(runner_for(7), eval_m);
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline std::vector<std::string> cmd_export(const PipelineConfig& cfg, const std::string& what,
                                           const fs::path& out) {
    auto copy_artifact = [&](const fs::path& rel) {
        const fs::path src = cfg.artifact_dir / rel;
        if (!fs::exists(src)) throw Error("no artifact: " + src.string());
        fs::create_directories(out);
        const fs::path dst = out / rel.filename();
        fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
        return dst.string();
    };
    std::vector<std::string> written;
    if (what == "embeddings") {
        written.push_back(copy_artifact("embeddings/synthetic.csv"));
        written.push_back(copy_artifact("embeddings/target.csv"));
    } else if (what == "curves") {
        written.push_back(copy_artifact("eval/curves.csv"));
    } else if (what == "efficiency") {
        written.push_back(copy_artifact("eval/efficiency.csv"));
        written.push_back(copy_artifact("eval/win_matrix.json"));
        written.push_back(copy_artifact("eval/win_matrix.txt"));
    } else if (what == "selection") {
        written.push_back(copy_artifact("curation/selection.json"));
    } else if (what == "config") {
        fs::create_directories(out);
        const fs::path dst = out / "config.json";
        io::save_json(dst, config_to_json(cfg));
        written.push_back(dst.string());
    } else {
        throw ConfigError("export: unknown artifact kind: " + what);
    }
    return written;
}

}  // namespace tabcure::pipeline
