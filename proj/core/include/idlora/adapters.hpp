#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "idlora/clustering.hpp"
#include "idlora/matrix.hpp"
#include "idlora/registry.hpp"

namespace idlora {

// dora exists only for parameter counting; it has no layer type here.
enum class AdapterMethod : std::uint8_t { lora = 1, moelora = 2, idlora = 3, dora = 4 };

const char* method_name(AdapterMethod method);
AdapterMethod parse_method(std::string_view name);  // throws ConfigError

struct AdapterConfig {
  AdapterMethod method = AdapterMethod::lora;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::size_t r = 0;   // adapter rank
  std::size_t k = 1;   // idlora bases / moelora experts
  std::size_t s = 1;   // idlora output splits
  double alpha = 0.0;  // update scale is alpha / r

  bool operator==(const AdapterConfig&) const = default;
};

// Throws ConfigError: r >= 1, r <= d_in, k >= 1, alpha finite; for idlora
// additionally s >= 1, s | r, s | d_out, and k * r <= d_out so the bases can
// be drawn from disjoint rows of w.
void validate(const AdapterConfig& config);

// u = W h + (alpha/r) B A h; A random, B zero at init.
struct LoraLayer {
  AdapterConfig config;
  Matrix w;  // frozen, d_out x d_in
  Matrix a;  // trainable, r x d_in
  Matrix b;  // trainable, d_out x r

  bool operator==(const LoraLayer&) const = default;
};

// u = W h + (alpha/r) sum_i softmax(gate h)_i B_i A_i h.
struct MoeLoraLayer {
  AdapterConfig config;
  Matrix w;                      // frozen
  Matrix gate;                   // trainable, k x d_in
  std::vector<Matrix> expert_a;  // trainable, k of r x d_in
  std::vector<Matrix> expert_b;  // trainable, k of d_out x r

  bool operator==(const MoeLoraLayer&) const = default;
};

// u = W h + (alpha/r) sum_i alpha_i(h) concat_j(B x_i^(j)) with x_i = A_i h,
// alpha_i = T . x_i. The bases A_i are frozen rows of W; only B and T train.
struct IdLoraLayer {
  AdapterConfig config;
  Matrix w;                      // frozen
  BasisSet bases;                // frozen, k bases of r rows each
  Matrix b;                      // trainable, (d_out/s) x (r/s), zero at init
  std::vector<double> router_t;  // trainable, r, ones at init

  bool operator==(const IdLoraLayer&) const = default;
};

using Adapter = std::variant<LoraLayer, MoeLoraLayer, IdLoraLayer>;

LoraLayer build_lora(Matrix w, std::size_t r, double alpha, std::uint64_t seed);
MoeLoraLayer build_moelora(Matrix w, std::size_t r, std::size_t k, double alpha,
                           std::uint64_t seed);
// Clusters the rows of w (min cluster size r) and freezes the r rows nearest
// each centroid as bases. B starts at zero, the router at all ones.
IdLoraLayer build_idlora(Matrix w, std::size_t r, std::size_t k, std::size_t s, double alpha,
                         std::uint64_t seed, const ClusterOptions& opts = {});

std::vector<double> lora_forward(const LoraLayer& layer, std::span<const double> h);
std::vector<double> moelora_forward(const MoeLoraLayer& layer, std::span<const double> h);
std::vector<double> idlora_forward(const IdLoraLayer& layer, std::span<const double> h);

std::vector<double> adapter_forward(const Adapter& adapter, std::span<const double> h);
const AdapterConfig& adapter_config(const Adapter& adapter);

// Router weights alpha_i(h) = T . (A_i h).
std::vector<double> idlora_alphas(const IdLoraLayer& layer, std::span<const double> h);

// The adapter update materialized with the router frozen at `weights`:
// (alpha/r) sum_i weights[i] * stack_j(B A_i^(j)), a d_out x d_in matrix.
Matrix assemble_operator(const IdLoraLayer& layer, std::span<const double> weights);

// Trainable parameters contributed by one adapted d_out x d_in matrix.
std::uint64_t count_trainable_site(AdapterMethod method, std::size_t d_out, std::size_t d_in,
                                   std::size_t r, std::size_t k, std::size_t s);

// Exact total over every adapted matrix of every layer of the architecture.
std::uint64_t count_trainable(AdapterMethod method, const ArchitectureDescriptor& arch,
                              std::size_t r, std::size_t k, std::size_t s);

// Millions with one decimal: 20971520 -> "21.0M".
std::string format_millions(std::uint64_t count);

// Coverage note attached to idlora counts: this counter tallies the B and T
// blocks only, while totals quoted elsewhere for the same configuration fold
// in rank-independent per-site coordinates on top of them.
std::string idlora_count_note();

}  // namespace idlora
