#pragma once

#include <cstddef>
#include <vector>

namespace objdino {

// Dense row-major symmetric matrix in double precision.
struct SymmetricMatrix {
    std::size_t n = 0;
    std::vector<double> a;

    explicit SymmetricMatrix(std::size_t size = 0) : n(size), a(size * size, 0.0) {}
    double& operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

struct EigenDecomposition {
    std::vector<double> values;                // ascending
    std::vector<std::vector<double>> vectors;  // vectors[k] pairs with values[k], unit norm
};

// Householder reduction to tridiagonal form followed by implicit-shift QL iterations.
// Throws std::runtime_error("eigensolver did not converge") past the iteration cap.
EigenDecomposition symmetric_eigen(const SymmetricMatrix& m);

}  // namespace objdino
