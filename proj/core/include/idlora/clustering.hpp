#pragma once

#include <cstdint>
#include <vector>

#include "idlora/matrix.hpp"

namespace idlora {

struct ClusterOptions {
  std::size_t max_iter = 100;
  double tol = 1e-8;            // converged when no centroid moves further than this
  bool flow_assignment = true;  // exact min-cost-flow assignment; greedy repair when false
};

// Result of size-constrained k-means over the rows of a point matrix.
struct ClusterModel {
  std::size_t k = 0;
  std::size_t min_size = 0;
  std::vector<std::size_t> assignments;  // point -> cluster
  Matrix centroids;                      // k x dim
  std::vector<double> distances;         // point -> Euclidean distance to its centroid
  std::size_t iterations_run = 0;
  bool converged = false;

  // Member point indices of one cluster, ascending.
  std::vector<std::size_t> members(std::size_t cluster) const;
  std::size_t cluster_size(std::size_t cluster) const;
};

// Lloyd iterations with k-means++ seeding; every cluster keeps at least
// min_size points. Deterministic for a fixed seed. Assignment is an exact
// minimum-cost matching under the size constraints (or a greedy repair pass
// when opts.flow_assignment is off).
ClusterModel constrained_kmeans(const Matrix& points, std::size_t k, std::size_t min_size,
                                std::uint64_t seed, const ClusterOptions& opts = {});

// Sum of squared point-to-assigned-centroid distances.
double kmeans_objective(const ClusterModel& model);

// Frozen basis rows extracted per cluster: for each cluster the r rows of the
// source matrix nearest its centroid (ties to the lower row index), stacked in
// ascending row-index order and copied verbatim.
struct BasisSet {
  std::size_t k = 0;
  std::size_t r = 0;
  std::size_t source_cols = 0;                        // d_in
  std::vector<std::vector<std::size_t>> row_indices;  // k lists of r ascending indices
  std::vector<Matrix> bases;                          // k matrices, r x source_cols

  bool operator==(const BasisSet&) const = default;
};

// Requires a model fit on the rows of w and every cluster to hold at least r
// members (CapacityError names the offending cluster otherwise).
BasisSet select_basis(const Matrix& w, const ClusterModel& model, std::size_t r);

// Sampling weights over the members of a cluster (aligned with
// model.members(cluster)), proportional to 1/(distance-to-centroid + eps_dist)
// and normalized to sum 1.
std::vector<double> build_pivot_distribution(const ClusterModel& model, std::size_t cluster,
                                             double eps_dist = 1e-6);

}  // namespace idlora
