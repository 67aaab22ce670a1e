#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "idlora/adapters.hpp"
#include "idlora/matrix.hpp"

namespace idlora {

// --- analytic gradients of <upstream, forward(h)> w.r.t. the trainable blocks ---

struct IdLoraGrads {
  Matrix b;               // (d_out/s) x (r/s)
  std::vector<double> t;  // r
  std::vector<double> h;  // d_in, gradient through the full forward
};
IdLoraGrads idlora_grads(const IdLoraLayer& layer, std::span<const double> h,
                         std::span<const double> upstream);

struct LoraGrads {
  Matrix a;
  Matrix b;
  std::vector<double> h;
};
LoraGrads lora_grads(const LoraLayer& layer, std::span<const double> h,
                     std::span<const double> upstream);

struct MoeLoraGrads {
  Matrix gate;
  std::vector<Matrix> expert_a;
  std::vector<Matrix> expert_b;
  std::vector<double> h;
};
MoeLoraGrads moelora_grads(const MoeLoraLayer& layer, std::span<const double> h,
                           std::span<const double> upstream);

// --- finite-difference verification ---

struct GradCheckBlock {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Central differences with the given step on every trainable coordinate of
// the adapter. Per coordinate the error is |a - f| divided by
// max(|a|, |f|, 1e-4 * max|a| over the block, 1e-12): relative for
// coordinates that carry weight, absolute against the block scale for the
// few whose true gradient is accidentally tiny (where the difference
// quotient is pure cancellation noise). Pass means every block stays below
// tol.
GradCheckReport finite_diff_check(const Adapter& adapter, std::span<const double> h,
                                  std::span<const double> upstream, double step = 1e-4,
                                  double tol = 1e-5);

// Fills every trainable block with N(0, scale^2) draws. Freshly built
// adapters start with zero B blocks, which silences most gradient paths;
// checks call this first so every formula is exercised.
void randomize_trainable(Adapter& adapter, std::uint64_t seed, double scale = 1.0);

// --- synthetic multi-task data ---

enum class InputMode : std::uint8_t {
  standard,         // inputs ~ N(0, I)
  cluster_shifted,  // inputs ~ N(mu_cluster, I) with mu_cluster on a coordinate axis
  cluster_aligned,  // like cluster_shifted, but mu_cluster points along the
                    // cluster's own planted center direction, so the shift is
                    // visible through the task maps regardless of the draw
};

struct MultitaskConfig {
  std::size_t d_in = 16;
  std::size_t d_out = 16;
  std::size_t tasks = 6;
  std::size_t clusters = 3;      // k_true
  std::size_t intra_rank = 1;    // r_l: rank budget of within-cluster deviations
  std::size_t global_rank = 6;   // r_g: rank of the shared planted factor
  double noise = 0.0;            // matrix residual budget (||E||_F^2 <= noise)
  double center_scale = 2.0;
  double intra_scale = 0.0;
  std::size_t samples_per_task = 32;
  double obs_noise = 0.0;        // target observation noise stddev
  InputMode input_mode = InputMode::standard;
  double input_shift = 4.0;      // cluster mean magnitude for cluster_shifted
};

struct SyntheticTaskSet {
  MultitaskConfig config;
  std::vector<Matrix> task_w;            // planted maps, d_out x d_in
  std::vector<std::size_t> labels;       // task -> planted cluster
  Matrix shared_b;                       // d_out x r_g
  std::vector<Matrix> per_task_a;        // r_g x d_in
  std::vector<Matrix> inputs;            // per task: samples x d_in
  std::vector<Matrix> targets;           // per task: samples x d_out
};

// Plants cluster-center maps plus rank-bounded within-cluster deviations so
// same-cluster differences have rank <= intra_rank exactly, and draws sample
// pairs (x, task_w x + obs noise).
SyntheticTaskSet make_multitask_data(const MultitaskConfig& config, std::uint64_t seed);

// --- optimization ---

// `als` alternates exact full-batch least-squares solves over the two
// trainable factors (lora: A/B, idlora: B/T); each step is one sweep, the
// loss is monotone non-increasing, and lr / batch / adam_* are ignored.
// MoELoRA's softmax gate has no closed-form block solve, so als rejects it.
enum class OptimizerKind : std::uint8_t { sgd, adam, als };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 1e-2;
  std::size_t steps = 500;
  std::size_t batch = 0;  // 0 = full batch
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
};

struct StepRecord {
  std::size_t step;
  double loss;  // minibatch MSE (per component)
};

struct TrainResult {
  std::vector<StepRecord> history;
  double final_loss = 0.0;
};

// Minimizes pooled MSE over all task samples; only trainable blocks move,
// frozen blocks stay bit-identical. Deterministic per config.seed. Throws
// TrainingError naming the step when the loss leaves the finite range.
TrainResult train(Adapter& adapter, const SyntheticTaskSet& data, const TrainConfig& config);

struct EvalReport {
  std::vector<double> per_task_mse;
  double mean_mse = 0.0;
};

// Mean squared residual per component, per task and averaged over tasks.
EvalReport evaluate(const Adapter& adapter, const SyntheticTaskSet& data);

// CSV with header: step,loss,seed,method,trainable_params.
void write_loss_history_csv(std::ostream& out, const TrainResult& result, std::uint64_t seed,
                            AdapterMethod method, std::uint64_t trainable_params);

// Total trainable coordinates of a built adapter (sum of block sizes).
std::uint64_t trainable_parameter_count(const Adapter& adapter);

}  // namespace idlora
