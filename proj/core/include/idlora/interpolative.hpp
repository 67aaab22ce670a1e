#pragma once

#include <cstdint>
#include <vector>

#include "idlora/clustering.hpp"
#include "idlora/linalg.hpp"
#include "idlora/matrix.hpp"

namespace idlora {

enum class PivotAxis : std::uint8_t { rows = 0, cols = 1 };

// Distinct indices into one axis of a matrix, kept sorted ascending.
struct PivotSet {
  PivotAxis axis = PivotAxis::rows;
  std::vector<std::size_t> indices;

  bool operator==(const PivotSet&) const = default;
};

// Validates range [0, n) and distinctness.
void validate_pivots(const PivotSet& pivots, std::size_t n, const char* what);

struct MidResult {
  Matrix b;         // delta_w.rows x |pivots|
  double residual;  // ||b * w[pivots,:] - delta_w||_F
};

// Matrix interpolative decomposition fit: B minimizing
// ||B * w[pivots,:] - delta_w||_F over the row skeleton of w.
MidResult mid_fit(const Matrix& w, const PivotSet& pivots, const Matrix& delta_w,
                  double tol = kDefaultRankTol);

struct CurResult {
  Matrix c;         // w columns at col pivots
  Matrix u;         // pinv(c) * w * pinv(r)
  Matrix r;         // w rows at row pivots
  double residual;  // ||w - c*u*r||_F
};

// CUR skeleton approximation; U is the Frobenius-optimal core for the given
// slices, making c*u*r the projection of w onto span(c) and rowspan(r).
CurResult cur_decompose(const Matrix& w, const PivotSet& row_pivots, const PivotSet& col_pivots,
                        double tol = kDefaultRankTol);

// `count` indices drawn uniformly without replacement from [0, n),
// deterministic per seed, sorted ascending.
PivotSet sample_pivots_uniform(std::size_t n, std::size_t count, std::uint64_t seed,
                               PivotAxis axis = PivotAxis::rows);

// `count` member indices of one cluster drawn without replacement from the
// build_pivot_distribution weights, deterministic per seed, sorted ascending.
PivotSet sample_pivots_local(const ClusterModel& model, std::size_t cluster, std::size_t count,
                             std::uint64_t seed, PivotAxis axis = PivotAxis::rows,
                             double eps_dist = 1e-6);

}  // namespace idlora
