#pragma once

#include <cstddef>
#include <vector>

namespace tvmerge::linalg {

// Dense row-major matrix of doubles. Vectors are stored as n x 1 matrices.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) {
    return data[i * cols + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data[i * cols + j];
  }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
  bool operator==(const Matrix& o) const = default;
};

Matrix identity(std::size_t n);
Matrix transpose(const Matrix& a);
Matrix matmul(const Matrix& a, const Matrix& b);

// Elementwise sum of products over the flattened entries.
double dot(const Matrix& a, const Matrix& b);

// y += alpha * x
void axpy(double alpha, const Matrix& x, Matrix& y);

void scale_inplace(Matrix& a, double s);

double frobenius_norm(const Matrix& a);

bool all_finite(const Matrix& a);

// Thin SVD: a = U * diag(singular_values) * V^T with orthonormal columns
// and nonincreasing singular values.
struct SvdResult {
  Matrix u;
  std::vector<double> singular_values;
  Matrix v;
};

// One-sided Jacobi SVD. Deterministic; column signs are fixed so the
// largest-magnitude entry of each column of U is positive. Throws
// std::runtime_error if the sweep cap (100 * min(rows, cols)) is hit.
SvdResult svd(const Matrix& a);

// Gaussian blur with kernel radius ceil(3*sigma) and per-cell
// renormalization at the boundary, so constant grids are fixed points.
// sigma == 0 returns the input unchanged.
Matrix gaussian_smooth_2d(const Matrix& grid, double sigma);

}  // namespace tvmerge::linalg
