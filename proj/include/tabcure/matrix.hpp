#pragma once

#include <cstddef>
#include <vector>

#include "tabcure/common.hpp"

namespace tabcure {

// Dense row-major matrix. Deliberately minimal; the heavy lifting lives in
// the call sites where loop order matters.
template <typename T>
class Mat {
public:
    Mat() = default;
    Mat(size_t rows, size_t cols, T fill = T(0)) : rows_(rows), cols_(cols), v_(rows * cols, fill) {}

    size_t rows() const { return rows_; }
    size_t cols() const { return cols_; }
    size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    T& operator()(size_t r, size_t c) { return v_[r * cols_ + c]; }
    const T& operator()(size_t r, size_t c) const { return v_[r * cols_ + c]; }

    T* row(size_t r) { return v_.data() + r * cols_; }
    const T* row(size_t r) const { return v_.data() + r * cols_; }

    T* data() { return v_.data(); }
    const T* data() const { return v_.data(); }

    void fill(T value) { std::fill(v_.begin(), v_.end(), value); }

    bool operator==(const Mat&) const = default;

private:
    size_t rows_ = 0;
    size_t cols_ = 0;
    std::vector<T> v_;
};

using MatD = Mat<double>;
using MatF = Mat<float>;

// Column mean/population-variance with 64-bit accumulation.
inline void column_moments(const MatD& m, size_t col, double& mean, double& var) {
    const size_t n = m.rows();
    double s = 0.0;
    for (size_t r = 0; r < n; ++r) s += m(r, col);
    mean = s / static_cast<double>(n);
    double sq = 0.0;
    for (size_t r = 0; r < n; ++r) {
        const double d = m(r, col) - mean;
        sq += d * d;
    }
    var = sq / static_cast<double>(n);
}

inline void vector_moments(const std::vector<double>& v, double& mean, double& var) {
    const size_t n = v.size();
    double s = 0.0;
    for (double x : v) s += x;
    mean = n ? s / static_cast<double>(n) : 0.0;
    double sq = 0.0;
    for (double x : v) {
        const double d = x - mean;
        sq += d * d;
    }
    var = n ? sq / static_cast<double>(n) : 0.0;
}

}  // namespace tabcure
