#pragma once

#include <cstddef>
#include <vector>

#include "idlora/matrix.hpp"

namespace idlora {

// Relative singular-value cutoff shared by pseudo_inverse, numerical_rank
// and least_squares_right.
inline constexpr double kDefaultRankTol = 1e-9;

// Thin SVD factors: m ~= u * diag(singular_values) * v^T. Columns of u and v
// are orthonormal; singular values are non-increasing and non-negative. Signs
// follow a fixed convention: each right vector's largest-magnitude entry
// (ties to the lowest index) is positive.
struct SvdResult {
  Matrix u;                            // rows(m) x t
  std::vector<double> singular_values; // t, non-increasing
  Matrix v;                            // cols(m) x t
};

// Best rank-t approximation factors in the Frobenius norm.
// Throws ParameterError when t > min(rows, cols).
SvdResult truncated_svd(const Matrix& m, std::size_t t);

// u * diag(s) * v^T.
Matrix svd_reconstruct(const SvdResult& f);

// Moore-Penrose pseudoinverse; singular values <= tol * sigma_max are dropped.
Matrix pseudo_inverse(const Matrix& m, double tol = kDefaultRankTol);

// X minimizing ||X * g - y||_F, computed as y * pinv(g): the minimum-norm
// solution under rank deficiency. Requires cols(g) == cols(y).
Matrix least_squares_right(const Matrix& g, const Matrix& y, double tol = kDefaultRankTol);

// Number of singular values above tol * sigma_max. Zero matrix has rank 0.
std::size_t numerical_rank(const Matrix& m, double tol = kDefaultRankTol);

}  // namespace idlora
