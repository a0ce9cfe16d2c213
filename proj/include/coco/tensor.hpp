#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace coco {

// Dense row-major matrix of doubles. Vectors are 1×n matrices.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  static Matrix identity(std::size_t n);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  std::vector<double> column(std::size_t c) const;
  std::size_t size() const { return data.size(); }

  bool operator==(const Matrix&) const = default;
};

// Summation over the inner dimension runs left to right, so results are
// bit-stable run to run.
Matrix matmul(const Matrix& a, const Matrix& b);

// a · bᵀ without materializing the transpose.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);

Matrix softmax_rows(const Matrix& m);

double l2_dist(std::span<const double> u, std::span<const double> v);
double l1_norm(const Matrix& m);
double l2_norm(std::span<const double> v);

bool all_finite(const Matrix& m);

}  // namespace coco
