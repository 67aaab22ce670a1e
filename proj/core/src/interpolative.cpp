#include "idlora/interpolative.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>

namespace idlora {

void validate_pivots(const PivotSet& pivots, std::size_t n, const char* what) {
  std::vector<char> seen(n, 0);
  for (std::size_t idx : pivots.indices) {
    if (idx >= n) {
      throw IndexError(std::string(what) + ": pivot " + std::to_string(idx) + " out of " +
                       std::to_string(n));
    }
    if (seen[idx]) {
      throw IndexError(std::string(what) + ": duplicate pivot " + std::to_string(idx));
    }
    seen[idx] = 1;
  }
}

MidResult mid_fit(const Matrix& w, const PivotSet& pivots, const Matrix& delta_w, double tol) {
  if (pivots.axis != PivotAxis::rows) {
    throw ParameterError("mid_fit: pivots must index rows");
  }
  if (pivots.indices.empty()) throw ParameterError("mid_fit: empty pivot set");
  validate_pivots(pivots, w.rows(), "mid_fit");
  if (delta_w.cols() != w.cols()) {
    throw ShapeError("mid_fit: delta_w has " + std::to_string(delta_w.cols()) +
                     " cols, w has " + std::to_string(w.cols()));
  }
  const Matrix skeleton = take_rows(w, pivots.indices);
  MidResult out;
  out.b = least_squares_right(skeleton, delta_w, tol);
  out.residual = frobenius_norm(sub(matmul(out.b, skeleton), delta_w));
  return out;
}

CurResult cur_decompose(const Matrix& w, const PivotSet& row_pivots, const PivotSet& col_pivots,
                        double tol) {
  if (row_pivots.axis != PivotAxis::rows || col_pivots.axis != PivotAxis::cols) {
    throw ParameterError("cur_decompose: pivot sets must be (rows, cols)");
  }
  if (row_pivots.indices.empty() || col_pivots.indices.empty()) {
    throw ParameterError("cur_decompose: empty pivot set");
  }
  validate_pivots(row_pivots, w.rows(), "cur_decompose rows");
  validate_pivots(col_pivots, w.cols(), "cur_decompose cols");

  CurResult out;
  out.c = take_cols(w, col_pivots.indices);
  out.r = take_rows(w, row_pivots.indices);
  out.u = matmul(matmul(pseudo_inverse(out.c, tol), w), pseudo_inverse(out.r, tol));
  out.residual = frobenius_norm(sub(w, matmul(matmul(out.c, out.u), out.r)));
  return out;
}

PivotSet sample_pivots_uniform(std::size_t n, std::size_t count, std::uint64_t seed,
                               PivotAxis axis) {
  if (count > n) {
    throw ParameterError("sample_pivots_uniform: count " + std::to_string(count) +
                         " exceeds " + std::to_string(n));
  }
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first `count` slots become the sample.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  PivotSet out;
  out.axis = axis;
  out.indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(out.indices.begin(), out.indices.end());
  return out;
}

PivotSet sample_pivots_local(const ClusterModel& model, std::size_t cluster, std::size_t count,
                             std::uint64_t seed, PivotAxis axis, double eps_dist) {
  const std::vector<std::size_t> members = model.members(cluster);
  if (count > members.size()) {
    throw ParameterError("sample_pivots_local: count " + std::to_string(count) +
                         " exceeds cluster size " + std::to_string(members.size()));
  }
  std::vector<double> weights = build_pivot_distribution(model, cluster, eps_dist);

  // Sequential weighted draws without replacement.
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> picked;
  picked.reserve(count);
  std::vector<char> used(members.size(), 0);
  for (std::size_t draw = 0; draw < count; ++draw) {
    double total = 0.0;
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (!used[i]) total += weights[i];
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double target = unit(rng) * total;
    std::size_t chosen = members.size();
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (used[i]) continue;
      target -= weights[i];
      if (target <= 0.0) {
        chosen = i;
        break;
      }
    }
    if (chosen == members.size()) {  // roundoff: last unused slot
      for (std::size_t i = members.size(); i-- > 0;) {
        if (!used[i]) {
          chosen = i;
          break;
        }
      }
    }
    used[chosen] = 1;
    picked.push_back(members[chosen]);
  }
  PivotSet out;
  out.axis = axis;
  out.indices = std::move(picked);
  std::sort(out.indices.begin(), out.indices.end());
  return out;
}

}  // namespace idlora
