#include "idlora/linalg.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

namespace idlora {

namespace {

using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

EigenRowMajor to_eigen(const Matrix& m) {
  return Eigen::Map<const EigenRowMajor>(m.data(), static_cast<Eigen::Index>(m.rows()),
                                         static_cast<Eigen::Index>(m.cols()));
}

Matrix from_eigen(const EigenRowMajor& e) {
  Matrix m(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
  Eigen::Map<EigenRowMajor>(m.data(), e.rows(), e.cols()) = e;
  return m;
}

// Full thin SVD with the sign convention applied: for each pair, the right
// vector's largest-magnitude entry (ties to the lowest index) is positive.
struct ThinSvd {
  EigenRowMajor u;
  Eigen::VectorXd sigma;
  EigenRowMajor v;
};

ThinSvd thin_svd(const Matrix& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m), Eigen::ComputeThinU | Eigen::ComputeThinV);
  ThinSvd out;
  out.u = svd.matrixU();
  out.sigma = svd.singularValues();
  out.v = svd.matrixV();
  for (Eigen::Index j = 0; j < out.v.cols(); ++j) {
    Eigen::Index pivot = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < out.v.rows(); ++i) {
      double mag = std::abs(out.v(i, j));
      if (mag > best) {
        best = mag;
        pivot = i;
      }
    }
    if (out.v(pivot, j) < 0.0) {
      out.v.col(j) = -out.v.col(j);
      out.u.col(j) = -out.u.col(j);
    }
  }
  return out;
}

}  // namespace

SvdResult truncated_svd(const Matrix& m, std::size_t t) {
  const std::size_t max_rank = std::min(m.rows(), m.cols());
  if (t > max_rank) {
    throw ParameterError("truncated_svd: rank " + std::to_string(t) + " exceeds min(rows, cols) = " +
                         std::to_string(max_rank));
  }
  ThinSvd f = thin_svd(m);
  const auto ti = static_cast<Eigen::Index>(t);
  SvdResult out;
  out.u = from_eigen(EigenRowMajor(f.u.leftCols(ti)));
  out.v = from_eigen(EigenRowMajor(f.v.leftCols(ti)));
  out.singular_values.assign(f.sigma.data(), f.sigma.data() + ti);
  return out;
}

Matrix svd_reconstruct(const SvdResult& f) {
  const auto t = static_cast<Eigen::Index>(f.singular_values.size());
  EigenRowMajor u = to_eigen(f.u);
  EigenRowMajor v = to_eigen(f.v);
  Eigen::Map<const Eigen::VectorXd> s(f.singular_values.data(), t);
  return from_eigen(EigenRowMajor(u * s.asDiagonal() * v.transpose()));
}

Matrix pseudo_inverse(const Matrix& m, double tol) {
  if (!(tol >= 0.0) || !std::isfinite(tol)) {
    throw ParameterError("pseudo_inverse: tolerance must be finite and non-negative");
  }
  ThinSvd f = thin_svd(m);
  const double cutoff = f.sigma.size() > 0 ? tol * f.sigma(0) : 0.0;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(f.sigma.size());
  for (Eigen::Index i = 0; i < f.sigma.size(); ++i) {
    if (f.sigma(i) > cutoff && f.sigma(i) > 0.0) inv(i) = 1.0 / f.sigma(i);
  }
  return from_eigen(EigenRowMajor(f.v * inv.asDiagonal() * f.u.transpose()));
}

Matrix least_squares_right(const Matrix& g, const Matrix& y, double tol) {
  if (g.cols() != y.cols()) {
    throw ShapeError("least_squares_right: g has " + std::to_string(g.cols()) +
                     " cols, y has " + std::to_string(y.cols()));
  }
  return matmul(y, pseudo_inverse(g, tol));
}

std::size_t numerical_rank(const Matrix& m, double tol) {
  if (!(tol >= 0.0) || !std::isfinite(tol)) {
    throw ParameterError("numerical_rank: tolerance must be finite and non-negative");
  }
  if (m.rows() == 0 || m.cols() == 0) return 0;
  ThinSvd f = thin_svd(m);
  const double cutoff = tol * f.sigma(0);
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < f.sigma.size(); ++i) {
    if (f.sigma(i) > cutoff && f.sigma(i) > 0.0) ++rank;
  }
  return rank;
}

}  // namespace idlora
