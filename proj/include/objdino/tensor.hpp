#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace objdino {

// Dense row-major float matrix. Reductions accumulate in double.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return rows_ == 0 || cols_ == 0; }

    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

Matrix identity(std::size_t n);

double dot(std::span<const float> a, std::span<const float> b);

// Rows scaled to unit Euclidean norm; all-zero rows stay zero.
Matrix l2_normalize_rows(const Matrix& m);

// Row-wise softmax of m / tau, computed with max subtraction.
Matrix row_softmax(const Matrix& m, double tau);

// a * b^T, i.e. out(i, j) = dot(a.row(i), b.row(j)).
Matrix matmul_transpose(const Matrix& a, const Matrix& b);

std::vector<double> row_sums(const Matrix& m);
std::vector<double> column_means(const Matrix& m);

bool all_finite(const Matrix& m);

}  // namespace objdino
