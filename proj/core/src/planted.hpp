#pragma once

#include <cstdint>
#include <vector>

#include "idlora/matrix.hpp"

namespace idlora::detail {

// Shared construction behind the task ensembles: W_i = B A_i + E_{cluster(i)}
// with one orthonormal-column B, per-cluster factor blocks that occupy
// disjoint rows of A (so cluster centers are mutually far), within-cluster
// deviations confined to the owning block (so same-cluster differences have
// rank <= intra_rank exactly), and one shared residual per cluster scaled to
// ||E||_F^2 = 0.95 * noise.
struct PlantedConfig {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t tasks = 0;
  std::size_t clusters = 1;
  std::size_t intra_rank = 1;
  std::size_t global_rank = 1;
  double noise = 0.0;
  double center_scale = 1.0;
  double intra_scale = 0.0;
  bool rare_cluster = false;  // restrict cluster 0 to its first rare_cols columns
  std::size_t rare_cols = 0;
};

struct PlantedFamily {
  std::vector<Matrix> tasks;
  std::vector<std::size_t> labels;     // round-robin task -> cluster
  Matrix b_true;                       // rows x global_rank, orthonormal columns
  std::vector<Matrix> per_task_a;      // global_rank x cols
  std::vector<Matrix> cluster_base_a;  // global_rank x cols
};

PlantedFamily make_planted_family(const PlantedConfig& config, std::uint64_t seed);

// splitmix64 step; used wherever several independent streams derive from one seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace idlora::detail
