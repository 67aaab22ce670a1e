#include "idlora/theory.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "idlora/clustering.hpp"
#include "idlora/errors.hpp"
#include "idlora/interpolative.hpp"
#include "idlora/linalg.hpp"
#include "idlora/parallel.hpp"
#include "planted.hpp"

namespace idlora {

TaskEnsemble generate_ensemble(const EnsembleConfig& config, std::uint64_t seed) {
  detail::PlantedConfig planted;
  planted.rows = config.d1;
  planted.cols = config.d2;
  planted.tasks = config.tasks;
  planted.clusters = config.clusters;
  planted.intra_rank = config.intra_rank;
  planted.global_rank = config.global_rank;
  planted.noise = config.noise;
  planted.center_scale = config.center_scale;
  planted.intra_scale = config.intra_scale;
  planted.rare_cluster = config.rare_cluster;
  planted.rare_cols = config.rare_cols;
  detail::PlantedFamily family = detail::make_planted_family(planted, seed);

  TaskEnsemble ensemble;
  ensemble.config = config;
  ensemble.tasks = std::move(family.tasks);
  ensemble.true_labels = std::move(family.labels);
  ensemble.shared_b = std::move(family.b_true);
  ensemble.per_task_a = std::move(family.per_task_a);
  ensemble.cluster_base_a = std::move(family.cluster_base_a);

  // Assumption checks: same-cluster differences stay within the intra rank
  // budget, and every task sits within the residual budget of its planted
  // low-rank description.
  for (std::size_t i = 0; i < ensemble.tasks.size(); ++i) {
    for (std::size_t j = i + 1; j < ensemble.tasks.size(); ++j) {
      if (ensemble.true_labels[i] != ensemble.true_labels[j]) continue;
      const std::size_t rank = numerical_rank(sub(ensemble.tasks[i], ensemble.tasks[j]));
      if (rank > config.intra_rank) {
        throw ConstraintError("generate_ensemble: tasks " + std::to_string(i) + " and " +
                              std::to_string(j) + " differ with rank " + std::to_string(rank) +
                              " > intra_rank " + std::to_string(config.intra_rank));
      }
    }
  }
  for (std::size_t i = 0; i < ensemble.tasks.size(); ++i) {
    const Matrix resid = sub(ensemble.tasks[i], matmul(ensemble.shared_b, ensemble.per_task_a[i]));
    const double sq = frobenius_norm(resid) * frobenius_norm(resid);
    const double budget = config.noise + 1e-12;
    if (sq > budget) {
      throw ConstraintError("generate_ensemble: task " + std::to_string(i) + " residual " +
                            std::to_string(sq) + " exceeds noise budget " +
                            std::to_string(config.noise));
    }
  }
  return ensemble;
}

Matrix planted_center(const TaskEnsemble& ensemble, std::size_t cluster) {
  if (cluster >= ensemble.config.clusters) {
    throw IndexError("planted_center: cluster " + std::to_string(cluster) + " out of " +
                     std::to_string(ensemble.config.clusters));
  }
  return matmul(ensemble.shared_b, ensemble.cluster_base_a[cluster]);
}

double planted_separation(const TaskEnsemble& ensemble) {
  const std::size_t k = ensemble.config.clusters;
  if (k < 2) return 0.0;
  double best = 0.0;
  bool first = true;
  for (std::size_t a = 0; a < k; ++a) {
    const Matrix ca = planted_center(ensemble, a);
    for (std::size_t b = a + 1; b < k; ++b) {
      const double dist = frobenius_norm(sub(ca, planted_center(ensemble, b)));
      if (first || dist < best) {
        best = dist;
        first = false;
      }
    }
  }
  return best;
}

double planted_spread(const TaskEnsemble& ensemble) {
  double worst = 0.0;
  std::vector<Matrix> centers;
  centers.reserve(ensemble.config.clusters);
  for (std::size_t l = 0; l < ensemble.config.clusters; ++l) {
    centers.push_back(planted_center(ensemble, l));
  }
  for (std::size_t i = 0; i < ensemble.tasks.size(); ++i) {
    worst = std::max(worst,
                     frobenius_norm(sub(ensemble.tasks[i], centers[ensemble.true_labels[i]])));
  }
  return worst;
}

namespace {

// Tasks as points: row i of the result is the row-major flattening of W_i.
Matrix vectorize_tasks(const TaskEnsemble& ensemble) {
  const std::size_t dim = ensemble.config.d1 * ensemble.config.d2;
  Matrix points(ensemble.tasks.size(), dim);
  for (std::size_t i = 0; i < ensemble.tasks.size(); ++i) {
    const double* src = ensemble.tasks[i].data();
    std::copy(src, src + dim, points.row(i).data());
  }
  return points;
}

std::vector<Matrix> member_mean_matrices(const TaskEnsemble& ensemble,
                                         const std::vector<std::size_t>& assignments,
                                         std::size_t k) {
  std::vector<Matrix> means(k, Matrix(ensemble.config.d1, ensemble.config.d2));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < ensemble.tasks.size(); ++i) {
    const std::size_t l = assignments[i];
    counts[l] += 1;
    const double* src = ensemble.tasks[i].data();
    double* dst = means[l].data();
    for (std::size_t v = 0; v < means[l].size(); ++v) dst[v] += src[v];
  }
  for (std::size_t l = 0; l < k; ++l) {
    if (counts[l] == 0) continue;
    double* dst = means[l].data();
    const double inv = 1.0 / static_cast<double>(counts[l]);
    for (std::size_t v = 0; v < means[l].size(); ++v) dst[v] *= inv;
  }
  return means;
}

DecompositionModel decompose_with_assignments(const TaskEnsemble& ensemble,
                                              std::vector<std::size_t> assignments, std::size_t k,
                                              std::size_t r) {
  if (r < 1 || r > std::min(ensemble.config.d1, ensemble.config.d2)) {
    throw ParameterError("decompose: rank " + std::to_string(r) + " out of range for " +
                         std::to_string(ensemble.config.d1) + "x" +
                         std::to_string(ensemble.config.d2) + " tasks");
  }
  DecompositionModel model;
  model.k = k;
  model.r = r;
  model.assignments = std::move(assignments);
  model.centroids = member_mean_matrices(ensemble, model.assignments, k);

  // Per-cluster right factor: top-r right singular vectors of the centroid.
  model.a.reserve(k);
  for (std::size_t l = 0; l < k; ++l) {
    const SvdResult svd = truncated_svd(model.centroids[l], r);
    model.a.push_back(transpose(svd.v));
  }

  // Shared left factor: least squares over all tasks at once,
  // min_B || [W_1 .. W_m] - B [A_{l(1)} .. A_{l(m)}] ||_F.
  const std::size_t m = ensemble.tasks.size();
  const std::size_t d2 = ensemble.config.d2;
  Matrix stacked_a(r, m * d2);
  Matrix stacked_w(ensemble.config.d1, m * d2);
  for (std::size_t i = 0; i < m; ++i) {
    const Matrix& a_i = model.a[model.assignments[i]];
    for (std::size_t row = 0; row < r; ++row) {
      std::copy(a_i.row(row).begin(), a_i.row(row).end(),
                stacked_a.row(row).data() + i * d2);
    }
    for (std::size_t row = 0; row < ensemble.config.d1; ++row) {
      std::copy(ensemble.tasks[i].row(row).begin(), ensemble.tasks[i].row(row).end(),
                stacked_w.row(row).data() + i * d2);
    }
  }
  model.b = least_squares_right(stacked_a, stacked_w);

  model.task_errors.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const Matrix approx = matmul(model.b, model.a[model.assignments[i]]);
    const double err = frobenius_norm(sub(ensemble.tasks[i], approx));
    model.task_errors.push_back(err * err);
    model.total_error += err * err;
  }
  return model;
}

}  // namespace

DecompositionModel cluster_low_rank_decompose(const TaskEnsemble& ensemble, std::size_t k,
                                              std::size_t r_l, std::uint64_t seed) {
  if (k < 1 || k > ensemble.tasks.size()) {
    throw ParameterError("cluster_low_rank_decompose: k must lie in [1, tasks]");
  }
  const Matrix points = vectorize_tasks(ensemble);
  const ClusterModel clusters = constrained_kmeans(points, k, 1, seed);
  return decompose_with_assignments(ensemble, clusters.assignments, k, r_l);
}

DecompositionModel global_low_rank_decompose(const TaskEnsemble& ensemble, std::size_t r_g) {
  return decompose_with_assignments(
      ensemble, std::vector<std::size_t>(ensemble.tasks.size(), 0), 1, r_g);
}

ReconstructionReport verify_theorem1(const TaskEnsemble& ensemble, std::size_t k, std::size_t r_l,
                                     std::size_t r_g, std::uint64_t seed) {
  if (r_l != r_g) {
    throw ConfigError("verify_theorem1: factor ranks must match (got " + std::to_string(r_l) +
                      " and " + std::to_string(r_g) + "); the improvement term compares "
                      "factors of one common rank");
  }
  const DecompositionModel clustered = cluster_low_rank_decompose(ensemble, k, r_l, seed);
  const DecompositionModel global = global_low_rank_decompose(ensemble, r_g);

  ReconstructionReport report;
  report.clustered_errors = clustered.task_errors;
  report.global_errors = global.task_errors;
  report.clustered_total = clustered.total_error;
  report.global_total = global.total_error;
  for (std::size_t i = 0; i < ensemble.tasks.size(); ++i) {
    const Matrix diff = sub(clustered.a[clustered.assignments[i]], global.a[0]);
    const double gain = frobenius_norm(matmul(clustered.b, diff));
    report.delta += gain * gain;
  }
  report.inequality_holds = report.clustered_total <= report.global_total + 1e-9;
  report.strict = report.delta > 1e-6 && report.clustered_total < report.global_total;
  report.theorem_margin = report.global_total - report.delta - report.clustered_total;
  report.separation = planted_separation(ensemble);
  report.intra_spread = planted_spread(ensemble);
  return report;
}

namespace {

struct AxisGroups {
  ClusterModel model;  // diversity groups over one axis of a centroid matrix
};

// Row/column diversity groups of each recovered cluster's centroid. Drawing
// one pivot per group spreads the skeleton across the centroid's distinct
// row/column profiles instead of letting dominant rows crowd out rare ones.
AxisGroups make_axis_groups(const Matrix& centroid, PivotAxis axis, std::size_t groups,
                            std::uint64_t seed) {
  const Matrix points = axis == PivotAxis::rows ? centroid : transpose(centroid);
  return {constrained_kmeans(points, groups, 1, seed)};
}

PivotSet draw_local_pivots(const AxisGroups& groups, PivotAxis axis, std::uint64_t seed) {
  std::vector<std::size_t> indices;
  indices.reserve(groups.model.k);
  for (std::size_t g = 0; g < groups.model.k; ++g) {
    const PivotSet one = sample_pivots_local(groups.model, g, 1, detail::mix_seed(seed, g), axis);
    indices.push_back(one.indices[0]);
  }
  std::sort(indices.begin(), indices.end());
  return {axis, std::move(indices)};
}

double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

PivotStudyReport pivot_stability_study(const TaskEnsemble& ensemble, std::size_t pivot_count,
                                       std::size_t trials, std::uint64_t seed) {
  const std::size_t d1 = ensemble.config.d1;
  const std::size_t d2 = ensemble.config.d2;
  if (pivot_count < 1 || pivot_count > std::min(d1, d2)) {
    throw ParameterError("pivot_stability_study: pivot_count must lie in [1, min(d1, d2)]");
  }
  if (trials < 1) throw ParameterError("pivot_stability_study: trials must be at least 1");

  // Recover the cluster structure once; both policies and the dispersion
  // diagnostics work off the recovered assignment, not the planted labels.
  const std::size_t k = ensemble.config.clusters;
  const Matrix points = vectorize_tasks(ensemble);
  const ClusterModel recovered = constrained_kmeans(points, k, 1, seed);
  const std::vector<Matrix> centroids = member_mean_matrices(ensemble, recovered.assignments, k);

  std::vector<AxisGroups> row_groups;
  std::vector<AxisGroups> col_groups;
  row_groups.reserve(k);
  col_groups.reserve(k);
  for (std::size_t l = 0; l < k; ++l) {
    row_groups.push_back(make_axis_groups(centroids[l], PivotAxis::rows, pivot_count,
                                          detail::mix_seed(seed, 2 * l)));
    col_groups.push_back(make_axis_groups(centroids[l], PivotAxis::cols, pivot_count,
                                          detail::mix_seed(seed, 2 * l + 1)));
  }

  PivotStudyReport report;
  report.trials = trials;
  report.pivot_count = pivot_count;
  report.global_max_err.assign(trials, 0.0);
  report.local_max_err.assign(trials, 0.0);

  parallel_for(trials, [&](std::size_t trial) {
    const std::uint64_t base = seed + trial;
    const PivotSet grows = sample_pivots_uniform(d1, pivot_count, detail::mix_seed(base, 1000),
                                                 PivotAxis::rows);
    const PivotSet gcols = sample_pivots_uniform(d2, pivot_count, detail::mix_seed(base, 1001),
                                                 PivotAxis::cols);
    std::vector<PivotSet> lrows, lcols;
    lrows.reserve(k);
    lcols.reserve(k);
    for (std::size_t l = 0; l < k; ++l) {
      lrows.push_back(draw_local_pivots(row_groups[l], PivotAxis::rows,
                                        detail::mix_seed(base, 2000 + l)));
      lcols.push_back(draw_local_pivots(col_groups[l], PivotAxis::cols,
                                        detail::mix_seed(base, 3000 + l)));
    }
    double worst_global = 0.0;
    double worst_local = 0.0;
    for (std::size_t i = 0; i < ensemble.tasks.size(); ++i) {
      const std::size_t l = recovered.assignments[i];
      worst_global = std::max(worst_global,
                              cur_decompose(ensemble.tasks[i], grows, gcols).residual);
      worst_local = std::max(worst_local,
                             cur_decompose(ensemble.tasks[i], lrows[l], lcols[l]).residual);
    }
    report.global_max_err[trial] = worst_global;
    report.local_max_err[trial] = worst_local;
  });

  std::vector<double> diffs(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    report.mean_global += report.global_max_err[t];
    report.mean_local += report.local_max_err[t];
    diffs[t] = report.global_max_err[t] - report.local_max_err[t];
  }
  report.mean_global /= static_cast<double>(trials);
  report.mean_local /= static_cast<double>(trials);
  report.mean_diff = report.mean_global - report.mean_local;

  // Percentile bootstrap over trials for the mean difference.
  constexpr std::size_t kResamples = 1000;
  std::vector<double> resampled(kResamples);
  std::mt19937_64 rng(detail::mix_seed(seed, 0xb00f));
  std::uniform_int_distribution<std::size_t> pick(0, trials - 1);
  for (std::size_t b = 0; b < kResamples; ++b) {
    double mean = 0.0;
    for (std::size_t t = 0; t < trials; ++t) mean += diffs[pick(rng)];
    resampled[b] = mean / static_cast<double>(trials);
  }
  std::sort(resampled.begin(), resampled.end());
  report.ci_low = resampled[static_cast<std::size_t>(0.025 * (kResamples - 1))];
  report.ci_high = resampled[static_cast<std::size_t>(0.975 * (kResamples - 1) + 0.5)];

  const double local_median = median_of(report.local_max_err);
  std::size_t bad = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    if (report.global_max_err[t] > 5.0 * local_median) bad += 1;
  }
  report.bad_pivot_fraction = static_cast<double>(bad) / static_cast<double>(trials);

  report.delta_l.assign(k, 0.0);
  report.diam.assign(k, 0.0);
  for (std::size_t i = 0; i < ensemble.tasks.size(); ++i) {
    const std::size_t l = recovered.assignments[i];
    report.delta_l[l] = std::max(report.delta_l[l],
                                 frobenius_norm(sub(ensemble.tasks[i], centroids[l])));
    for (std::size_t j = i + 1; j < ensemble.tasks.size(); ++j) {
      if (recovered.assignments[j] != l) continue;
      report.diam[l] = std::max(report.diam[l],
                                frobenius_norm(sub(ensemble.tasks[i], ensemble.tasks[j])));
    }
  }
  report.pivot_distribution =
      "local: per recovered cluster, " + std::to_string(pivot_count) +
      " diversity groups per axis (constrained k-means on centroid rows/cols, min_size=1), "
      "one inverse-distance draw per group; global: uniform without replacement";
  return report;
}

}  // namespace idlora
