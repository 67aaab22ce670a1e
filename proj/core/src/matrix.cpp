#include "idlora/matrix.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

namespace idlora {

namespace {

using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EigenRowMajor>;
using MutMap = Eigen::Map<EigenRowMajor>;

ConstMap as_eigen(const Matrix& m) {
  return ConstMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                  static_cast<Eigen::Index>(m.cols()));
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

}  // namespace

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw ParameterError(std::string(what) + ": non-finite entry");
    }
  }
}

void check_finite(const Matrix& m, const char* what) {
  check_finite(std::span<const double>(m.values()), what);
}

Matrix Matrix::from_data(std::size_t rows, std::size_t cols, std::vector<double> data) {
  if (data.size() != rows * cols) {
    throw ShapeError("Matrix::from_data: expected " + std::to_string(rows * cols) +
                     " values, got " + std::to_string(data.size()));
  }
  check_finite(std::span<const double>(data), "Matrix::from_data");
  Matrix m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.data_ = std::move(data);
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()));
  }
  Matrix out(a.rows(), b.cols());
  MutMap(out.data(), static_cast<Eigen::Index>(out.rows()),
         static_cast<Eigen::Index>(out.cols())) = as_eigen(a) * as_eigen(b);
  check_finite(out, "matmul");
  return out;
}

std::vector<double> matvec(const Matrix& m, std::span<const double> v) {
  if (m.cols() != v.size()) {
    throw ShapeError("matvec: " + std::to_string(m.cols()) + " cols vs vector of " +
                     std::to_string(v.size()));
  }
  std::vector<double> out(m.rows(), 0.0);
  Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size())) =
      as_eigen(m) * Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  check_finite(std::span<const double>(out), "matvec");
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "sub");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

Matrix scaled(const Matrix& m, double factor) {
  if (!std::isfinite(factor)) throw ParameterError("scaled: non-finite factor");
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = m.data()[i] * factor;
  return out;
}

double frobenius_norm(const Matrix& m) {
  return as_eigen(m).norm();
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

Matrix take_rows(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= m.rows()) {
      throw IndexError("take_rows: row " + std::to_string(indices[i]) + " out of " +
                       std::to_string(m.rows()));
    }
    auto src = m.row(indices[i]);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) dst[j] = src[j];
  }
  return out;
}

Matrix take_cols(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(m.rows(), indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (indices[j] >= m.cols()) {
      throw IndexError("take_cols: col " + std::to_string(indices[j]) + " out of " +
                       std::to_string(m.cols()));
    }
    for (std::size_t i = 0; i < m.rows(); ++i) out(i, j) = m(i, indices[j]);
  }
  return out;
}

}  // namespace idlora
