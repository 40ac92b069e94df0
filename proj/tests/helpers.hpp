#pragma once

// Test-only oracles and fixtures. These stay independent of the code paths
// they check: ordinary least squares by normal equations, direct Pearson
// correlation, brute-force split search, and small dataset builders.

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "tabcure/tabular.hpp"

namespace testutil {

using tabcure::Dataset;
using tabcure::MatD;

// In-sample R^2 of an ordinary least-squares fit (with intercept), solved by
// Gaussian elimination on the normal equations.
inline double ols_r2(const MatD& x, const std::vector<double>& y) {
    const size_t n = x.rows();
    const size_t f = x.cols() + 1;  // intercept first
    std::vector<std::vector<double>> a(f, std::vector<double>(f + 1, 0.0));
    for (size_t r = 0; r < n; ++r) {
        std::vector<double> row(f);
        row[0] = 1.0;
        for (size_t c = 0; c < x.cols(); ++c) row[c + 1] = x(r, c);
        for (size_t i = 0; i < f; ++i) {
            for (size_t j = 0; j < f; ++j) a[i][j] += row[i] * row[j];
            a[i][f] += row[i] * y[r];
        }
    }
    for (size_t i = 0; i < f; ++i) a[i][i] += 1e-10;
    for (size_t col = 0; col < f; ++col) {
        size_t pivot = col;
        for (size_t r = col + 1; r < f; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
        std::swap(a[col], a[pivot]);
        for (size_t r = 0; r < f; ++r) {
            if (r == col || a[col][col] == 0.0) continue;
            const double m = a[r][col] / a[col][col];
            for (size_t j = col; j <= f; ++j) a[r][j] -= m * a[col][j];
        }
    }
    std::vector<double> w(f, 0.0);
    for (size_t i = 0; i < f; ++i)
        if (a[i][i] != 0.0) w[i] = a[i][f] / a[i][i];

    double y_mean = 0.0;
    for (double v : y) y_mean += v;
    y_mean /= static_cast<double>(n);
    double ss_res = 0.0, ss_tot = 0.0;
    for (size_t r = 0; r < n; ++r) {
        double pred = w[0];
        for (size_t c = 0; c < x.cols(); ++c) pred += w[c + 1] * x(r, c);
        ss_res += (y[r] - pred) * (y[r] - pred);
        ss_tot += (y[r] - y_mean) * (y[r] - y_mean);
    }
    return ss_tot == 0.0 ? 0.0 : 1.0 - ss_res / ss_tot;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double num = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    return num / std::sqrt(va * vb);
}

// Best achievable single-split MSE (depth-1 tree), found by brute force over
// every feature/threshold pair.
inline double best_stump_mse(const MatD& x, const std::vector<double>& y) {
    const size_t n = x.rows();
    double y_mean = 0.0;
    for (double v : y) y_mean += v;
    y_mean /= static_cast<double>(n);
    double best_sse = 0.0;
    for (double v : y) best_sse += (v - y_mean) * (v - y_mean);
    for (size_t c = 0; c < x.cols(); ++c) {
        std::vector<std::pair<double, double>> pairs(n);
        for (size_t r = 0; r < n; ++r) pairs[r] = {x(r, c), y[r]};
        std::sort(pairs.begin(), pairs.end());
        double ls = 0.0, lq = 0.0, rs = 0.0, rq = 0.0;
        for (const auto& [xv, yv] : pairs) {
            rs += yv;
            rq += yv * yv;
        }
        for (size_t i = 0; i + 1 < n; ++i) {
            ls += pairs[i].second;
            lq += pairs[i].second * pairs[i].second;
            rs -= pairs[i].second;
            rq -= pairs[i].second * pairs[i].second;
            if (pairs[i].first == pairs[i + 1].first) continue;
            const double nl = static_cast<double>(i + 1);
            const double nr = static_cast<double>(n - i - 1);
            const double sse = (lq - ls * ls / nl) + (rq - rs * rs / nr);
            best_sse = std::min(best_sse, sse);
        }
    }
    return best_sse / static_cast<double>(n);
}

// A dataset wrapper for hand-built matrices (already standardized or not).
inline Dataset make_dataset(MatD features, std::vector<double> target,
                            tabcure::Label label = tabcure::Label::Synthetic,
                            const std::string& name = "test") {
    tabcure::DatasetMeta meta;
    meta.name = name;
    meta.label = label;
    meta.original_rows = features.rows();
    return tabcure::finalize_dataset(std::move(features), std::move(target), std::move(meta));
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("tabcure-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p);
    out << content;
}

}  // namespace testutil
