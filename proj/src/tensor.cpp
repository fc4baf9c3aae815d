#include "objdino/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace objdino {

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw std::invalid_argument("matrix data length " + std::to_string(data_.size()) +
                                    " does not match " + std::to_string(rows) + "x" +
                                    std::to_string(cols));
    }
}

Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
    return m;
}

double dot(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
    return acc;
}

Matrix l2_normalize_rows(const Matrix& m) {
    if (m.empty()) throw std::invalid_argument("empty matrix");
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto src = m.row(r);
        const double norm = std::sqrt(dot(src, src));
        if (norm == 0.0) continue;
        auto dst = out.row(r);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] = float(double(src[c]) / norm);
    }
    return out;
}

Matrix row_softmax(const Matrix& m, double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("invalid temperature");
    if (m.empty()) throw std::invalid_argument("empty matrix");
    Matrix out(m.rows(), m.cols());
    std::vector<double> scratch(m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto src = m.row(r);
        const double peak = *std::max_element(src.begin(), src.end());
        double total = 0.0;
        for (std::size_t c = 0; c < src.size(); ++c) {
            scratch[c] = std::exp((double(src[c]) - peak) / tau);
            total += scratch[c];
        }
        auto dst = out.row(r);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] = float(scratch[c] / total);
    }
    return out;
}

Matrix matmul_transpose(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw std::invalid_argument("column mismatch: " + std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.cols()));
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ai = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = float(dot(ai, b.row(j)));
    }
    return out;
}

std::vector<double> row_sums(const Matrix& m) {
    std::vector<double> sums(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (float v : m.row(r)) sums[r] += v;
    return sums;
}

std::vector<double> column_means(const Matrix& m) {
    std::vector<double> means(m.cols(), 0.0);
    if (m.rows() == 0) return means;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) means[c] += row[c];
    }
    for (auto& v : means) v /= double(m.rows());
    return means;
}

bool all_finite(const Matrix& m) {
    return std::all_of(m.data().begin(), m.data().end(), [](float v) { return std::isfinite(v); });
}

}  // namespace objdino
