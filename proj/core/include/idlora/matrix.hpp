#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "idlora/errors.hpp"

namespace idlora {

// Dense row-major matrix of doubles. The single carrier type for every
// numeric interface in the library. Entries must be finite; constructors
// taking external data enforce this, operations preserve it.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  // Takes ownership of `data` (row-major, rows*cols entries); rejects
  // non-finite entries and size mismatches.
  static Matrix from_data(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& values() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Throws ParameterError when any value is not finite.
void check_finite(std::span<const double> values, const char* what);
void check_finite(const Matrix& m, const char* what);

Matrix matmul(const Matrix& a, const Matrix& b);
std::vector<double> matvec(const Matrix& m, std::span<const double> v);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scaled(const Matrix& m, double factor);

double frobenius_norm(const Matrix& m);
double dot(std::span<const double> a, std::span<const double> b);

// Rows of `m` selected by `indices`, in the given order.
Matrix take_rows(const Matrix& m, std::span<const std::size_t> indices);
// Columns of `m` selected by `indices`, in the given order.
Matrix take_cols(const Matrix& m, std::span<const std::size_t> indices);

}  // namespace idlora
