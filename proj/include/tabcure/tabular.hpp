#pragma once

// Tabular ingestion and standardization: CSV loading with type inference,
// one-hot encoding, the 1024-row cap / duplication rule, the 100-feature
// filter, per-column z-scoring, duplicate dropping, control (pure noise)
// generation, and the 70/30 split. Also owns the canonical on-disk dataset
// format (JSON manifest + float32 blob).

#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tabcure/io.hpp"
#include "tabcure/matrix.hpp"

namespace tabcure {

constexpr size_t kMaxFeatures = 100;
constexpr size_t kStandardRows = 1024;
constexpr double kZeroVarianceEps = 1e-12;

enum class Label { Engineering, NonEngineering, Synthetic, Control };

inline std::string to_string(Label l) {
    switch (l) {
        case Label::Engineering: return "engineering";
        case Label::NonEngineering: return "non_engineering";
        case Label::Synthetic: return "synthetic";
        case Label::Control: return "control";
    }
    throw Error("unknown label");
}

inline Label label_from_string(const std::string& s) {
    if (s == "engineering") return Label::Engineering;
    if (s == "non_engineering") return Label::NonEngineering;
    if (s == "synthetic") return Label::Synthetic;
    if (s == "control") return Label::Control;
    throw Error("unknown label: " + s);
}

struct DatasetMeta {
    std::string name;
    Label label = Label::Synthetic;
    size_t original_rows = 0;
    bool duplicated_for_embedding = false;
    uint64_t seed = 0;
    Digest128 content_hash;
};

struct Dataset {
    MatD features;
    std::vector<double> target;
    DatasetMeta meta;

    size_t rows() const { return features.rows(); }
    size_t feature_count() const { return features.cols(); }
};

// Hash over the float32-quantized values, so a dataset hashes identically
// before and after a round trip through the canonical file format.
inline Digest128 dataset_content_hash(const MatD& features, const std::vector<double>& target) {
    Hasher h;
    h.update_value<uint64_t>(features.rows());
    h.update_value<uint64_t>(features.cols());
    for (size_t r = 0; r < features.rows(); ++r) {
        for (size_t c = 0; c < features.cols(); ++c) {
            h.update_value<float>(static_cast<float>(features(r, c)));
        }
    }
    for (double y : target) h.update_value<float>(static_cast<float>(y));
    return h.digest();
}

struct SplitIndex {
    std::vector<size_t> train_rows;
    std::vector<size_t> test_rows;
};

// ---------------------------------------------------------------------------
// Raw tables
// ---------------------------------------------------------------------------

struct RawColumn {
    std::string name;
    bool categorical = false;
    std::vector<double> numeric;       // valid when !categorical
    std::vector<std::string> levels;   // valid when categorical
};

struct RawTable {
    std::vector<RawColumn> columns;
    size_t row_count = 0;
    size_t dropped_rows = 0;

    const RawColumn* find(const std::string& name) const {
        for (const auto& c : columns)
            if (c.name == name) return &c;
        return nullptr;
    }
};

// Sidecar schema: explicit column kinds plus the dataset's domain label.
struct SidecarSchema {
    std::map<std::string, bool> categorical_override;  // column -> is_categorical
    std::optional<Label> label;
    std::optional<std::string> target_column;
};

inline SidecarSchema load_sidecar(const std::filesystem::path& path) {
    const io::json j = io::load_json(path);
    SidecarSchema s;
    if (j.contains("columns")) {
        for (auto it = j.at("columns").begin(); it != j.at("columns").end(); ++it) {
            const std::string kind = it.value().get<std::string>();
            if (kind != "numeric" && kind != "categorical")
                throw Error("sidecar column kind must be numeric|categorical, got " + kind);
            s.categorical_override[it.key()] = (kind == "categorical");
        }
    }
    if (j.contains("label")) s.label = label_from_string(j.at("label").get<std::string>());
    if (j.contains("target")) s.target_column = j.at("target").get<std::string>();
    return s;
}

namespace detail {

inline bool is_missing_token(std::string t) {
    for (auto& ch : t) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return t.empty() || t == "na" || t == "n/a" || t == "nan" || t == "null" || t == "?";
}

inline bool parse_numeric(const std::string& t, double& out) {
    if (t.empty()) return false;
    const char* begin = t.data();
    const char* end = t.data() + t.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(*begin))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(end[-1]))) --end;
    if (begin == end) return false;
    auto [p, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && p == end && std::isfinite(out);
}

inline char detect_delimiter(const std::string& header) {
    size_t best_count = 0;
    char best = ',';
    for (char cand : {',', ';', '\t'}) {
        const size_t n = static_cast<size_t>(std::count(header.begin(), header.end(), cand));
        if (n > best_count) {
            best_count = n;
            best = cand;
        }
    }
    return best;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// load_csv
// ---------------------------------------------------------------------------

inline RawTable load_csv(const std::filesystem::path& path,
                         const std::optional<std::string>& target_column = std::nullopt,
                         uint64_t seed = 0, const SidecarSchema* sidecar = nullptr) {
    (void)seed;  // reserved; parsing itself is deterministic
    std::ifstream in(path);
    if (!in) throw Error("missing file: " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw Error("empty file: " + path.string());
    const char delim = detail::detect_delimiter(line);
    const std::vector<std::string> header = io::split_csv_line(line, delim);
    const size_t width = header.size();
    if (width < 2) throw Error("need at least 2 columns: " + path.string());

    std::vector<std::vector<std::string>> cells(width);
    size_t dropped = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const std::vector<std::string> fields = io::split_csv_line(line, delim);
        if (fields.size() != width) throw Error("row width mismatch in " + path.string());
        bool missing = false;
        for (const auto& f : fields) {
            if (detail::is_missing_token(f)) {
                missing = true;
                break;
            }
        }
        if (missing) {
            ++dropped;
            continue;
        }
        for (size_t c = 0; c < width; ++c) cells[c].push_back(fields[c]);
    }
    const size_t rows = cells[0].size();
    if (rows == 0) throw Error("zero usable rows: " + path.string());

    RawTable table;
    table.row_count = rows;
    table.dropped_rows = dropped;
    table.columns.resize(width);
    for (size_t c = 0; c < width; ++c) {
        RawColumn& col = table.columns[c];
        col.name = header[c];
        std::vector<double> parsed(rows);
        bool all_numeric = true;
        for (size_t r = 0; r < rows; ++r) {
            if (!detail::parse_numeric(cells[c][r], parsed[r])) {
                all_numeric = false;
                break;
            }
        }
        bool categorical = !all_numeric;
        if (sidecar) {
            auto it = sidecar->categorical_override.find(col.name);
            if (it != sidecar->categorical_override.end()) {
                if (it->second) {
                    categorical = true;
                } else if (!all_numeric) {
                    throw Error("sidecar marks non-numeric column as numeric: " + col.name);
                }
            }
        }
        col.categorical = categorical;
        if (categorical) {
            col.levels = std::move(cells[c]);
        } else {
            col.numeric = std::move(parsed);
        }
    }
    if (target_column && !table.find(*target_column))
        throw Error("target column not found: " + *target_column);
    return table;
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

namespace detail {

// One-hot encodes the feature columns of a raw table (target excluded).
// Level order is lexicographic so the encoding is input-order independent.
inline MatD encode_features(const RawTable& raw, const std::string& target_name) {
    std::vector<std::vector<double>> encoded;  // column-major during assembly
    const size_t n = raw.row_count;
    for (const auto& col : raw.columns) {
        if (col.name == target_name) continue;
        if (!col.categorical) {
            encoded.push_back(col.numeric);
            continue;
        }
        std::set<std::string> level_set(col.levels.begin(), col.levels.end());
        for (const auto& level : level_set) {
            std::vector<double> indicator(n, 0.0);
            for (size_t r = 0; r < n; ++r)
                if (col.levels[r] == level) indicator[r] = 1.0;
            encoded.push_back(std::move(indicator));
        }
    }
    MatD m(n, encoded.size());
    for (size_t c = 0; c < encoded.size(); ++c)
        for (size_t r = 0; r < n; ++r) m(r, c) = encoded[c][r];
    return m;
}

inline void zscore_column(MatD& m, size_t col) {
    double mu, var;
    column_moments(m, col, mu, var);
    if (var <= kZeroVarianceEps) {
        for (size_t r = 0; r < m.rows(); ++r) m(r, col) = 0.0;  // constant column: centered zeros
        return;
    }
    const double inv_sd = 1.0 / std::sqrt(var);
    for (size_t r = 0; r < m.rows(); ++r) m(r, col) = (m(r, col) - mu) * inv_sd;
}

inline void zscore_target(std::vector<double>& y) {
    double mu, var;
    vector_moments(y, mu, var);
    if (var <= kZeroVarianceEps) throw Error("target column is constant");
    const double inv_sd = 1.0 / std::sqrt(var);
    for (double& v : y) v = (v - mu) * inv_sd;
}

}  // namespace detail

inline Dataset finalize_dataset(MatD features, std::vector<double> target, DatasetMeta meta) {
    for (size_t c = 0; c < features.cols(); ++c) detail::zscore_column(features, c);
    detail::zscore_target(target);
    for (size_t r = 0; r < features.rows(); ++r)
        for (size_t c = 0; c < features.cols(); ++c)
            if (!std::isfinite(features(r, c))) throw Error("non-finite feature value");
    for (double y : target)
        if (!std::isfinite(y)) throw Error("non-finite target value");
    meta.content_hash = dataset_content_hash(features, target);
    Dataset d;
    d.features = std::move(features);
    d.target = std::move(target);
    d.meta = std::move(meta);
    return d;
}

inline Dataset preprocess(const RawTable& raw, const std::optional<std::string>& target_column,
                          uint64_t seed, bool for_embedding, const std::string& name = "",
                          Label label = Label::NonEngineering) {
    Rng rng(mix_seed(seed, 0x7AB7E));

    // Target choice: explicit, else the unique numeric column, else a seeded
    // uniform pick among numeric candidates.
    std::string target_name;
    if (target_column) {
        const RawColumn* col = raw.find(*target_column);
        if (!col) throw Error("target column not found: " + *target_column);
        if (col->categorical) throw Error("target column is categorical: " + *target_column);
        target_name = *target_column;
    } else {
        std::vector<const RawColumn*> numeric;
        for (const auto& c : raw.columns)
            if (!c.categorical) numeric.push_back(&c);
        if (numeric.empty()) throw Error("no numeric column available as target");
        target_name = numeric.size() == 1 ? numeric[0]->name
                                          : numeric[rng.below(numeric.size())]->name;
    }
    std::vector<double> target = raw.find(target_name)->numeric;

    MatD features = detail::encode_features(raw, target_name);
    if (features.cols() > kMaxFeatures)
        throw Error("too many features after encoding: " + std::to_string(features.cols()));
    if (features.cols() < 2)
        throw Error("fewer than 2 features after encoding");

    const size_t original_rows = raw.row_count;
    std::vector<size_t> keep;
    if (original_rows > kStandardRows) {
        keep = rng.sample_without_replacement(original_rows, kStandardRows);
    } else {
        keep.resize(original_rows);
        std::iota(keep.begin(), keep.end(), size_t{0});
    }
    bool duplicated = false;
    if (original_rows < kStandardRows && for_embedding) {
        // Keep every original row, then pad with seeded draws (with replacement).
        while (keep.size() < kStandardRows) keep.push_back(rng.below(original_rows));
        duplicated = true;
    }

    MatD sampled(keep.size(), features.cols());
    std::vector<double> sampled_target(keep.size());
    for (size_t i = 0; i < keep.size(); ++i) {
        for (size_t c = 0; c < features.cols(); ++c) sampled(i, c) = features(keep[i], c);
        sampled_target[i] = target[keep[i]];
    }

    DatasetMeta meta;
    meta.name = name;
    meta.label = label;
    meta.original_rows = original_rows;
    meta.duplicated_for_embedding = duplicated;
    meta.seed = seed;
    return finalize_dataset(std::move(sampled), std::move(sampled_target), std::move(meta));
}

// ---------------------------------------------------------------------------
// dedupe / control / split
// ---------------------------------------------------------------------------

inline std::vector<Dataset> dedupe(std::vector<Dataset> datasets) {
    std::set<Digest128> seen;
    std::vector<Dataset> out;
    out.reserve(datasets.size());
    for (auto& d : datasets) {
        if (seen.insert(d.meta.content_hash).second) out.push_back(std::move(d));
    }
    return out;
}

inline Dataset generate_control(size_t feature_count, size_t rows, uint64_t seed) {
    if (feature_count < 2 || feature_count > kMaxFeatures)
        throw Error("control feature_count must be in [2,100]");
    Rng rng(mix_seed(seed, 0xC0117801));
    MatD features(rows, feature_count);
    std::vector<double> target(rows);
    for (size_t r = 0; r < rows; ++r) {
        for (size_t c = 0; c < feature_count; ++c) features(r, c) = rng.normal();
        target[r] = rng.normal();
    }
    DatasetMeta meta;
    meta.name = "control-" + std::to_string(seed);
    meta.label = Label::Control;
    meta.original_rows = rows;
    meta.seed = seed;
    return finalize_dataset(std::move(features), std::move(target), std::move(meta));
}

inline SplitIndex split_70_30(const Dataset& dataset, uint64_t seed) {
    if (dataset.meta.duplicated_for_embedding)
        throw Error("cannot split a dataset duplicated for embedding");
    const size_t n = dataset.rows();
    if (n < 10) throw Error("need at least 10 rows to split");
    const auto train_n = static_cast<size_t>(std::llround(0.7 * static_cast<double>(n)));
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    Rng rng(mix_seed(seed, 0x57117));
    rng.shuffle(idx);
    SplitIndex split;
    split.train_rows.assign(idx.begin(), idx.begin() + static_cast<ptrdiff_t>(train_n));
    split.test_rows.assign(idx.begin() + static_cast<ptrdiff_t>(train_n), idx.end());
    std::sort(split.train_rows.begin(), split.train_rows.end());
    std::sort(split.test_rows.begin(), split.test_rows.end());
    return split;
}

// ---------------------------------------------------------------------------
// Canonical dataset file
// ---------------------------------------------------------------------------

inline void save_dataset(const std::filesystem::path& path, const Dataset& d,
                         const std::string& manifest_id = "") {
    const size_t n = d.rows();
    const size_t f = d.feature_count();
    std::vector<float> blob;
    blob.reserve(n * f + n);
    for (size_t r = 0; r < n; ++r)
        for (size_t c = 0; c < f; ++c) blob.push_back(static_cast<float>(d.features(r, c)));
    for (double y : d.target) blob.push_back(static_cast<float>(y));

    io::json manifest;
    manifest["kind"] = "dataset";
    manifest["name"] = d.meta.name;
    manifest["label"] = to_string(d.meta.label);
    manifest["rows"] = n;
    manifest["columns"] = f;
    manifest["original_rows"] = d.meta.original_rows;
    manifest["duplicated_for_embedding"] = d.meta.duplicated_for_embedding;
    manifest["seed"] = d.meta.seed;
    manifest["content_hash"] = d.meta.content_hash.hex();
    manifest["features_offset_bytes"] = 0;
    manifest["target_offset_bytes"] = n * f * sizeof(float);
    if (!manifest_id.empty()) manifest["manifest_id"] = manifest_id;
    io::write_container(path, manifest, blob.data(), blob.size());
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    const io::Container c = io::read_container(path);
    if (c.manifest.at("kind").get<std::string>() != "dataset")
        throw Error("not a dataset container: " + path.string());
    const size_t n = c.manifest.at("rows").get<size_t>();
    const size_t f = c.manifest.at("columns").get<size_t>();
    if (c.blob.size() != n * f + n) throw Error("dataset blob size mismatch: " + path.string());
    Dataset d;
    d.features = MatD(n, f);
    d.target.resize(n);
    const size_t target_off = c.manifest.at("target_offset_bytes").get<size_t>() / sizeof(float);
    for (size_t r = 0; r < n; ++r)
        for (size_t col = 0; col < f; ++col) d.features(r, col) = c.blob[r * f + col];
    for (size_t r = 0; r < n; ++r) d.target[r] = c.blob[target_off + r];
    d.meta.name = c.manifest.at("name").get<std::string>();
    d.meta.label = label_from_string(c.manifest.at("label").get<std::string>());
    d.meta.original_rows = c.manifest.at("original_rows").get<size_t>();
    d.meta.duplicated_for_embedding = c.manifest.at("duplicated_for_embedding").get<bool>();
    d.meta.seed = c.manifest.at("seed").get<uint64_t>();
    d.meta.content_hash = dataset_content_hash(d.features, d.target);
    const std::string recorded = c.manifest.at("content_hash").get<std::string>();
    if (recorded != d.meta.content_hash.hex())
        throw Error("dataset content hash mismatch: " + path.string());
    return d;
}

}  // namespace tabcure
