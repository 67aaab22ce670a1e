#include "planted.hpp"

#include <cmath>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "idlora/errors.hpp"

namespace idlora::detail {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

namespace {

Matrix orthonormal_columns(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  Eigen::MatrixXd g(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = unit(rng);
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
  const Eigen::MatrixXd rfac = qr.matrixQR().topRows(g.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (rfac(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = q(static_cast<Eigen::Index>(i),
                                                        static_cast<Eigen::Index>(j));
  }
  return out;
}

void validate(const PlantedConfig& c) {
  if (c.rows < 1 || c.cols < 1 || c.tasks < 1 || c.clusters < 1) {
    throw ParameterError("planted family: rows, cols, tasks and clusters must be at least 1");
  }
  if (c.tasks < c.clusters) {
    throw ParameterError("planted family: need at least one task per cluster");
  }
  const std::size_t block = std::max<std::size_t>(1, c.intra_rank);
  if (c.clusters * block > c.global_rank) {
    throw ParameterError("planted family: clusters * max(1, intra_rank) = " +
                         std::to_string(c.clusters * block) + " exceeds global_rank " +
                         std::to_string(c.global_rank));
  }
  if (c.global_rank > c.rows) {
    throw ParameterError("planted family: global_rank exceeds row count");
  }
  if (c.noise < 0.0 || c.center_scale < 0.0 || c.intra_scale < 0.0) {
    throw ParameterError("planted family: scales must be non-negative");
  }
  if (c.rare_cluster && (c.rare_cols < 1 || c.rare_cols > c.cols)) {
    throw ParameterError("planted family: rare_cols must lie in [1, cols]");
  }
}

}  // namespace

PlantedFamily make_planted_family(const PlantedConfig& config, std::uint64_t seed) {
  validate(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t block = std::max<std::size_t>(1, config.intra_rank);

  PlantedFamily family;
  family.b_true = orthonormal_columns(config.rows, config.global_rank, rng);

  family.labels.resize(config.tasks);
  for (std::size_t i = 0; i < config.tasks; ++i) family.labels[i] = i % config.clusters;

  auto support_cols = [&](std::size_t cluster) {
    return (config.rare_cluster && cluster == 0) ? config.rare_cols : config.cols;
  };

  family.cluster_base_a.reserve(config.clusters);
  for (std::size_t l = 0; l < config.clusters; ++l) {
    Matrix base(config.global_rank, config.cols);
    const double scale = config.center_scale * (1.0 + 0.15 * static_cast<double>(l));
    for (std::size_t q = l * block; q < (l + 1) * block; ++q) {
      for (std::size_t j = 0; j < support_cols(l); ++j) base(q, j) = scale * unit(rng);
    }
    family.cluster_base_a.push_back(std::move(base));
  }

  std::vector<Matrix> residuals;
  residuals.reserve(config.clusters);
  for (std::size_t l = 0; l < config.clusters; ++l) {
    Matrix e(config.rows, config.cols);
    if (config.noise > 0.0) {
      for (std::size_t i = 0; i < e.size(); ++i) e.data()[i] = unit(rng);
      const double norm = frobenius_norm(e);
      const double target = std::sqrt(0.95 * config.noise);
      for (std::size_t i = 0; i < e.size(); ++i) e.data()[i] *= target / norm;
    }
    residuals.push_back(std::move(e));
  }

  family.per_task_a.reserve(config.tasks);
  family.tasks.reserve(config.tasks);
  for (std::size_t i = 0; i < config.tasks; ++i) {
    const std::size_t l = family.labels[i];
    Matrix a = family.cluster_base_a[l];
    if (config.intra_rank >= 1 && config.intra_scale > 0.0) {
      for (std::size_t q = l * block; q < l * block + config.intra_rank; ++q) {
        for (std::size_t j = 0; j < support_cols(l); ++j) {
          a(q, j) += config.intra_scale * unit(rng);
        }
      }
    }
    family.tasks.push_back(add(matmul(family.b_true, a), residuals[l]));
    family.per_task_a.push_back(std::move(a));
  }
  return family;
}

}  // namespace idlora::detail
