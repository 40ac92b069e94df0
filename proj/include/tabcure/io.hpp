#pragma once

// On-disk formats. Two kinds of artifacts share one container layout:
//
//   TABC1 <manifest-bytes>\n
//   <manifest JSON, UTF-8>
//   <raw little-endian float32 blob>
//
// Blob offsets recorded in the manifest are relative to the blob start, so
// the manifest can be serialized before the header is emitted. All numeric
// text output goes through std::to_chars (shortest round-trip form), which
// keeps CSV artifacts byte-stable across runs.

#include <bit>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabcure/common.hpp"

namespace tabcure::io {

using json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "artifact blobs are little-endian; big-endian hosts need byte swaps");

inline std::string format_number(double v) {
    char buf[40];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw Error("format_number failed");
    return std::string(buf, end);
}

inline std::string format_number(float v) {
    char buf[40];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw Error("format_number failed");
    return std::string(buf, end);
}

inline void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open for writing: " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("short write: " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline Digest128 hash_file(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    return hash_bytes(bytes.data(), bytes.size());
}

inline constexpr const char* kContainerMagic = "TABC1";

inline void write_container(const std::filesystem::path& path, const json& manifest,
                            const float* blob, size_t count) {
    const std::string m = manifest.dump();
    std::string bytes;
    bytes.reserve(m.size() + count * sizeof(float) + 32);
    bytes += kContainerMagic;
    bytes += ' ';
    bytes += std::to_string(m.size());
    bytes += '\n';
    bytes += m;
    bytes.append(reinterpret_cast<const char*>(blob), count * sizeof(float));
    atomic_write(path, bytes);
}

struct Container {
    json manifest;
    std::vector<float> blob;
};

inline Container read_container(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    const size_t nl = bytes.find('\n');
    if (nl == std::string::npos) throw Error("corrupt container (no header): " + path.string());
    const std::string header = bytes.substr(0, nl);
    const size_t sp = header.find(' ');
    if (sp == std::string::npos || header.substr(0, sp) != kContainerMagic)
        throw Error("bad container magic: " + path.string());
    size_t manifest_len = 0;
    {
        const std::string len_str = header.substr(sp + 1);
        auto [p, ec] = std::from_chars(len_str.data(), len_str.data() + len_str.size(), manifest_len);
        if (ec != std::errc()) throw Error("bad container header: " + path.string());
    }
    const size_t manifest_begin = nl + 1;
    if (manifest_begin + manifest_len > bytes.size())
        throw Error("truncated container manifest: " + path.string());
    Container c;
    c.manifest = json::parse(bytes.substr(manifest_begin, manifest_len));
    const size_t blob_begin = manifest_begin + manifest_len;
    const size_t blob_bytes = bytes.size() - blob_begin;
    if (blob_bytes % sizeof(float) != 0) throw Error("misaligned container blob: " + path.string());
    c.blob.resize(blob_bytes / sizeof(float));
    if (blob_bytes > 0) std::memcpy(c.blob.data(), bytes.data() + blob_begin, blob_bytes);
    return c;
}

// Minimal CSV writer; fields are assumed to be comma-free (all our headers
// and identifiers are).
class CsvWriter {
public:
    CsvWriter& row(const std::vector<std::string>& fields) {
        for (size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ += ',';
            out_ += fields[i];
        }
        out_ += '\n';
        return *this;
    }

    const std::string& str() const { return out_; }

    void save(const std::filesystem::path& path) const { atomic_write(path, out_); }

private:
    std::string out_;
};

inline std::vector<std::string> split_csv_line(const std::string& line, char delim) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == delim) {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

inline json load_json(const std::filesystem::path& path) {
    return json::parse(read_file(path));
}

inline void save_json(const std::filesystem::path& path, const json& j) {
    atomic_write(path, j.dump(2) + "\n");
}

}  // namespace tabcure::io
