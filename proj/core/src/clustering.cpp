#include "idlora/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "mincostflow.hpp"

namespace idlora {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

// k-means++ seeding; returns k row indices of `points`.
std::vector<std::size_t> seed_centroids(const Matrix& points, std::size_t k,
                                        std::mt19937_64& rng) {
  const std::size_t n = points.rows();
  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  std::uniform_int_distribution<std::size_t> uniform(0, n - 1);
  chosen.push_back(uniform(rng));

  std::vector<double> best_sq(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  taken[chosen[0]] = 1;
  while (chosen.size() < k) {
    const auto last = points.row(chosen.back());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      best_sq[i] = std::min(best_sq[i], sq_dist(points.row(i), last));
      if (!taken[i]) total += best_sq[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      double target = unit(rng) * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i]) continue;
        target -= best_sq[i];
        if (target <= 0.0) {
          pick = i;
          break;
        }
      }
    }
    if (pick == n) {  // duplicates or roundoff: lowest untaken index
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i]) {
          pick = i;
          break;
        }
      }
    }
    taken[pick] = 1;
    chosen.push_back(pick);
  }
  return chosen;
}

std::vector<std::size_t> assign_flow(const Matrix& points, const Matrix& centroids,
                                     std::size_t min_size) {
  const std::size_t n = points.rows();
  const std::size_t k = centroids.rows();
  // source -> each point (cap 1); point -> each cluster (cap 1, cost d^2);
  // cluster -> sink (cap min_size); cluster -> overflow (cap n);
  // overflow -> sink (cap n - k*min_size). Sink capacity totals exactly n,
  // so a max flow saturates every reserved cluster slot.
  const std::size_t source = 0;
  const std::size_t point0 = 1;
  const std::size_t cluster0 = point0 + n;
  const std::size_t overflow = cluster0 + k;
  const std::size_t sink = overflow + 1;
  detail::MinCostFlow flow(sink + 1);

  std::vector<std::vector<std::size_t>> edge_ids(n, std::vector<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) {
    flow.add_edge(source, point0 + i, 1, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      edge_ids[i][c] = flow.add_edge(point0 + i, cluster0 + c, 1,
                                     sq_dist(points.row(i), centroids.row(c)));
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    flow.add_edge(cluster0 + c, sink, static_cast<long long>(min_size), 0.0);
    flow.add_edge(cluster0 + c, overflow, static_cast<long long>(n), 0.0);
  }
  flow.add_edge(overflow, sink, static_cast<long long>(n - k * min_size), 0.0);

  flow.solve(source, sink, static_cast<long long>(n));

  std::vector<std::size_t> assignments(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      if (flow.flow_on(edge_ids[i][c]) > 0) {
        assignments[i] = c;
        break;
      }
    }
  }
  return assignments;
}

std::vector<std::size_t> assign_greedy(const Matrix& points, const Matrix& centroids,
                                       std::size_t min_size) {
  const std::size_t n = points.rows();
  const std::size_t k = centroids.rows();
  std::vector<std::size_t> assignments(n);
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double d = sq_dist(points.row(i), centroids.row(c));
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    assignments[i] = best;
    ++sizes[best];
  }
  // Repair: repeatedly move the cheapest point from a cluster with spare
  // capacity into an undersized one.
  while (true) {
    std::size_t under = k;
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] < min_size) {
        under = c;
        break;
      }
    }
    if (under == k) break;
    double best_inc = std::numeric_limits<double>::infinity();
    std::size_t best_point = n;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t cur = assignments[i];
      if (cur == under || sizes[cur] <= min_size) continue;
      const double inc = sq_dist(points.row(i), centroids.row(under)) -
                         sq_dist(points.row(i), centroids.row(cur));
      if (inc < best_inc) {
        best_inc = inc;
        best_point = i;
      }
    }
    --sizes[assignments[best_point]];
    assignments[best_point] = under;
    ++sizes[under];
  }
  return assignments;
}

}  // namespace

std::vector<std::size_t> ClusterModel::members(std::size_t cluster) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] == cluster) out.push_back(i);
  }
  return out;
}

std::size_t ClusterModel::cluster_size(std::size_t cluster) const {
  std::size_t count = 0;
  for (std::size_t a : assignments) {
    if (a == cluster) ++count;
  }
  return count;
}

ClusterModel constrained_kmeans(const Matrix& points, std::size_t k, std::size_t min_size,
                                std::uint64_t seed, const ClusterOptions& opts) {
  const std::size_t n = points.rows();
  if (k < 1) throw ParameterError("constrained_kmeans: k must be at least 1");
  if (n == 0) throw ParameterError("constrained_kmeans: no points");
  if (k > n) {
    throw ParameterError("constrained_kmeans: k = " + std::to_string(k) + " exceeds " +
                         std::to_string(n) + " points");
  }
  if (opts.max_iter < 1) throw ParameterError("constrained_kmeans: max_iter must be at least 1");
  if (!(opts.tol >= 0.0)) throw ParameterError("constrained_kmeans: tol must be non-negative");
  if (k * min_size > n) {
    throw ConstraintError("constrained_kmeans: k * min_size = " + std::to_string(k * min_size) +
                          " exceeds " + std::to_string(n) + " points");
  }
  check_finite(points, "constrained_kmeans");

  const std::size_t dim = points.cols();
  std::mt19937_64 rng(seed);
  Matrix centroids(k, dim);
  {
    const std::vector<std::size_t> seeds = seed_centroids(points, k, rng);
    for (std::size_t c = 0; c < k; ++c) {
      auto src = points.row(seeds[c]);
      auto dst = centroids.row(c);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

  auto assign = [&](const Matrix& cents) {
    return opts.flow_assignment ? assign_flow(points, cents, min_size)
                                : assign_greedy(points, cents, min_size);
  };

  ClusterModel model;
  model.k = k;
  model.min_size = min_size;
  model.assignments = assign(centroids);
  model.iterations_run = 0;
  model.converged = false;

  for (std::size_t iter = 0; iter < opts.max_iter; ++iter) {
    // Means of the current assignment; empty clusters (possible only when
    // min_size == 0) are re-seeded to the point farthest from its centroid.
    Matrix next(k, dim);
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = model.assignments[i];
      ++sizes[c];
      auto dst = next.row(c);
      auto src = points.row(i);
      for (std::size_t j = 0; j < dim; ++j) dst[j] += src[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] == 0) continue;
      auto dst = next.row(c);
      for (std::size_t j = 0; j < dim; ++j) dst[j] /= static_cast<double>(sizes[c]);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] > 0) continue;
      std::size_t farthest = 0;
      double worst = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = sq_dist(points.row(i), next.row(model.assignments[i]));
        if (d > worst) {
          worst = d;
          farthest = i;
        }
      }
      auto dst = next.row(c);
      auto src = points.row(farthest);
      std::copy(src.begin(), src.end(), dst.begin());
    }

    double moved = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      moved = std::max(moved, std::sqrt(sq_dist(centroids.row(c), next.row(c))));
    }
    centroids = std::move(next);
    model.assignments = assign(centroids);
    ++model.iterations_run;
    if (moved <= opts.tol) {
      model.converged = true;
      break;
    }
  }

  model.centroids = std::move(centroids);
  model.distances.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    model.distances[i] =
        std::sqrt(sq_dist(points.row(i), model.centroids.row(model.assignments[i])));
  }
  return model;
}

double kmeans_objective(const ClusterModel& model) {
  double acc = 0.0;
  for (double d : model.distances) acc += d * d;
  return acc;
}

BasisSet select_basis(const Matrix& w, const ClusterModel& model, std::size_t r) {
  if (r < 1) throw ParameterError("select_basis: r must be at least 1");
  if (model.assignments.size() != w.rows()) {
    throw ShapeError("select_basis: model covers " + std::to_string(model.assignments.size()) +
                     " rows, matrix has " + std::to_string(w.rows()));
  }
  if (model.centroids.cols() != w.cols()) {
    throw ShapeError("select_basis: centroid dim " + std::to_string(model.centroids.cols()) +
                     " vs matrix cols " + std::to_string(w.cols()));
  }

  BasisSet basis;
  basis.k = model.k;
  basis.r = r;
  basis.source_cols = w.cols();
  basis.row_indices.resize(model.k);
  basis.bases.reserve(model.k);
  for (std::size_t c = 0; c < model.k; ++c) {
    std::vector<std::size_t> members = model.members(c);
    if (members.size() < r) {
      throw CapacityError("select_basis: cluster " + std::to_string(c) + " holds " +
                          std::to_string(members.size()) + " rows, needs " + std::to_string(r));
    }
    // r members nearest the centroid, distance ties to the lower row index.
    std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      if (model.distances[a] != model.distances[b]) {
        return model.distances[a] < model.distances[b];
      }
      return a < b;
    });
    members.resize(r);
    std::sort(members.begin(), members.end());
    basis.row_indices[c] = members;
    basis.bases.push_back(take_rows(w, members));
  }
  return basis;
}

std::vector<double> build_pivot_distribution(const ClusterModel& model, std::size_t cluster,
                                             double eps_dist) {
  if (cluster >= model.k) {
    throw IndexError("build_pivot_distribution: cluster " + std::to_string(cluster) +
                     " out of " + std::to_string(model.k));
  }
  if (!(eps_dist > 0.0)) {
    throw ParameterError("build_pivot_distribution: eps_dist must be positive");
  }
  const std::vector<std::size_t> members = model.members(cluster);
  std::vector<double> weights(members.size());
  double total = 0.0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    weights[i] = 1.0 / (model.distances[members[i]] + eps_dist);
    total += weights[i];
  }
  for (double& w : weights) w /= total;
  return weights;
}

}  // namespace idlora
