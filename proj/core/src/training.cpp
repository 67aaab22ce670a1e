#include "idlora/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <string>

#include "idlora/errors.hpp"
#include "idlora/linalg.hpp"
#include "planted.hpp"

namespace idlora {

namespace {

void require_pair(const AdapterConfig& config, std::span<const double> h,
                  std::span<const double> upstream, const char* what) {
  if (h.size() != config.d_in) {
    throw ShapeError(std::string(what) + ": input size " + std::to_string(h.size()) +
                     " does not match d_in " + std::to_string(config.d_in));
  }
  if (upstream.size() != config.d_out) {
    throw ShapeError(std::string(what) + ": upstream size " + std::to_string(upstream.size()) +
                     " does not match d_out " + std::to_string(config.d_out));
  }
  check_finite(h, what);
  check_finite(upstream, what);
}

}  // namespace

IdLoraGrads idlora_grads(const IdLoraLayer& layer, std::span<const double> h,
                         std::span<const double> upstream) {
  require_pair(layer.config, h, upstream, "idlora_grads");
  const std::size_t r = layer.config.r;
  const std::size_t s = layer.config.s;
  const std::size_t chunk_in = r / s;
  const std::size_t chunk_out = layer.config.d_out / s;
  const double scale = layer.config.alpha / static_cast<double>(r);

  IdLoraGrads grads;
  grads.b = Matrix(chunk_out, chunk_in);
  grads.t.assign(r, 0.0);
  grads.h = matvec(transpose(layer.w), upstream);

  for (std::size_t i = 0; i < layer.config.k; ++i) {
    const Matrix& a_i = layer.bases.bases[i];
    const std::vector<double> x = matvec(a_i, h);
    const double alpha_i = dot(layer.router_t, x);

    // gc = <upstream, concat_j(B x^(j))>, z = concat_j(B^T upstream^(j)).
    double gc = 0.0;
    std::vector<double> z(r, 0.0);
    for (std::size_t j = 0; j < s; ++j) {
      const double* gj = upstream.data() + j * chunk_out;
      const double* xj = x.data() + j * chunk_in;
      for (std::size_t a = 0; a < chunk_out; ++a) {
        const double ga = gj[a];
        for (std::size_t b = 0; b < chunk_in; ++b) {
          gc += ga * layer.b(a, b) * xj[b];
          z[j * chunk_in + b] += layer.b(a, b) * ga;
          grads.b(a, b) += scale * alpha_i * ga * xj[b];
        }
      }
    }
    for (std::size_t q = 0; q < r; ++q) grads.t[q] += scale * gc * x[q];

    // through-input term: scale * A_i^T (gc * t + alpha_i * z)
    std::vector<double> v(r);
    for (std::size_t q = 0; q < r; ++q) v[q] = gc * layer.router_t[q] + alpha_i * z[q];
    for (std::size_t q = 0; q < r; ++q) {
      const double vq = scale * v[q];
      auto row = a_i.row(q);
      for (std::size_t d = 0; d < row.size(); ++d) grads.h[d] += vq * row[d];
    }
  }
  return grads;
}

LoraGrads lora_grads(const LoraLayer& layer, std::span<const double> h,
                     std::span<const double> upstream) {
  require_pair(layer.config, h, upstream, "lora_grads");
  const double scale = layer.config.alpha / static_cast<double>(layer.config.r);
  const std::vector<double> ah = matvec(layer.a, h);
  const std::vector<double> btg = matvec(transpose(layer.b), upstream);

  LoraGrads grads;
  grads.a = Matrix(layer.config.r, layer.config.d_in);
  grads.b = Matrix(layer.config.d_out, layer.config.r);
  for (std::size_t q = 0; q < layer.config.r; ++q) {
    for (std::size_t d = 0; d < layer.config.d_in; ++d) grads.a(q, d) = scale * btg[q] * h[d];
  }
  for (std::size_t o = 0; o < layer.config.d_out; ++o) {
    for (std::size_t q = 0; q < layer.config.r; ++q) grads.b(o, q) = scale * upstream[o] * ah[q];
  }
  grads.h = matvec(transpose(layer.w), upstream);
  const std::vector<double> atbtg = matvec(transpose(layer.a), btg);
  for (std::size_t d = 0; d < grads.h.size(); ++d) grads.h[d] += scale * atbtg[d];
  return grads;
}

MoeLoraGrads moelora_grads(const MoeLoraLayer& layer, std::span<const double> h,
                           std::span<const double> upstream) {
  require_pair(layer.config, h, upstream, "moelora_grads");
  const std::size_t k = layer.config.k;
  const double scale = layer.config.alpha / static_cast<double>(layer.config.r);

  std::vector<double> p = matvec(layer.gate, h);
  double peak = p[0];
  for (double v : p) peak = std::max(peak, v);
  double total = 0.0;
  for (double& v : p) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : p) v /= total;

  std::vector<std::vector<double>> ah(k);
  std::vector<double> q(k);
  for (std::size_t i = 0; i < k; ++i) {
    ah[i] = matvec(layer.expert_a[i], h);
    const std::vector<double> bah = matvec(layer.expert_b[i], ah[i]);
    q[i] = dot(upstream, bah);
  }
  double qbar = 0.0;
  for (std::size_t i = 0; i < k; ++i) qbar += p[i] * q[i];
  std::vector<double> dlogit(k);
  for (std::size_t i = 0; i < k; ++i) dlogit[i] = scale * p[i] * (q[i] - qbar);

  MoeLoraGrads grads;
  grads.gate = Matrix(k, layer.config.d_in);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t d = 0; d < layer.config.d_in; ++d) grads.gate(i, d) = dlogit[i] * h[d];
  }
  grads.h = matvec(transpose(layer.w), upstream);
  for (std::size_t i = 0; i < k; ++i) {
    const std::vector<double> btg = matvec(transpose(layer.expert_b[i]), upstream);

    Matrix ga(layer.config.r, layer.config.d_in);
    for (std::size_t row = 0; row < layer.config.r; ++row) {
      for (std::size_t d = 0; d < layer.config.d_in; ++d) {
        ga(row, d) = scale * p[i] * btg[row] * h[d];
      }
    }
    grads.expert_a.push_back(std::move(ga));

    Matrix gb(layer.config.d_out, layer.config.r);
    for (std::size_t o = 0; o < layer.config.d_out; ++o) {
      for (std::size_t row = 0; row < layer.config.r; ++row) {
        gb(o, row) = scale * p[i] * upstream[o] * ah[i][row];
      }
    }
    grads.expert_b.push_back(std::move(gb));

    const std::vector<double> atbtg = matvec(transpose(layer.expert_a[i]), btg);
    for (std::size_t d = 0; d < grads.h.size(); ++d) grads.h[d] += scale * p[i] * atbtg[d];
  }
  const std::vector<double> gtd = matvec(transpose(layer.gate), dlogit);
  for (std::size_t d = 0; d < grads.h.size(); ++d) grads.h[d] += gtd[d];
  return grads;
}

namespace {

// Mutable views over the trainable coordinates, in a fixed per-method order.
struct BlockRef {
  std::string name;
  double* data;
  std::size_t size;
};

std::vector<BlockRef> trainable_blocks(Adapter& adapter) {
  std::vector<BlockRef> blocks;
  if (auto* lora = std::get_if<LoraLayer>(&adapter)) {
    blocks.push_back({"a", lora->a.data(), lora->a.size()});
    blocks.push_back({"b", lora->b.data(), lora->b.size()});
  } else if (auto* moe = std::get_if<MoeLoraLayer>(&adapter)) {
    blocks.push_back({"gate", moe->gate.data(), moe->gate.size()});
    for (std::size_t i = 0; i < moe->config.k; ++i) {
      blocks.push_back({"expert_a[" + std::to_string(i) + "]", moe->expert_a[i].data(),
                        moe->expert_a[i].size()});
      blocks.push_back({"expert_b[" + std::to_string(i) + "]", moe->expert_b[i].data(),
                        moe->expert_b[i].size()});
    }
  } else {
    auto& id = std::get<IdLoraLayer>(adapter);
    blocks.push_back({"b", id.b.data(), id.b.size()});
    blocks.push_back({"t", id.router_t.data(), id.router_t.size()});
  }
  return blocks;
}

// Analytic gradients flattened in the same order as trainable_blocks.
std::vector<std::vector<double>> analytic_block_grads(const Adapter& adapter,
                                                      std::span<const double> h,
                                                      std::span<const double> upstream) {
  std::vector<std::vector<double>> out;
  if (const auto* lora = std::get_if<LoraLayer>(&adapter)) {
    const LoraGrads g = lora_grads(*lora, h, upstream);
    out.push_back(g.a.values());
    out.push_back(g.b.values());
  } else if (const auto* moe = std::get_if<MoeLoraLayer>(&adapter)) {
    const MoeLoraGrads g = moelora_grads(*moe, h, upstream);
    out.push_back(g.gate.values());
    for (std::size_t i = 0; i < moe->config.k; ++i) {
      out.push_back(g.expert_a[i].values());
      out.push_back(g.expert_b[i].values());
    }
  } else {
    const auto& id = std::get<IdLoraLayer>(adapter);
    IdLoraGrads g = idlora_grads(id, h, upstream);
    out.push_back(g.b.values());
    out.push_back(std::move(g.t));
  }
  return out;
}

}  // namespace

GradCheckReport finite_diff_check(const Adapter& adapter, std::span<const double> h,
                                  std::span<const double> upstream, double step, double tol) {
  if (step <= 0.0 || tol <= 0.0) {
    throw ParameterError("finite_diff_check: step and tol must be positive");
  }
  Adapter probe = adapter;
  const std::vector<BlockRef> blocks = trainable_blocks(probe);
  const std::vector<std::vector<double>> analytic = analytic_block_grads(adapter, h, upstream);

  GradCheckReport report;
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    GradCheckBlock block{blocks[bi].name, 0.0, 0};
    double block_scale = 0.0;
    for (const double a : analytic[bi]) block_scale = std::max(block_scale, std::abs(a));
    const double floor = std::max(1e-4 * block_scale, 1e-12);
    for (std::size_t c = 0; c < blocks[bi].size; ++c) {
      const double saved = blocks[bi].data[c];
      blocks[bi].data[c] = saved + step;
      const std::vector<double> plus = adapter_forward(probe, h);
      blocks[bi].data[c] = saved - step;
      const std::vector<double> minus = adapter_forward(probe, h);
      blocks[bi].data[c] = saved;
      // Difference the outputs before the upstream dot: the loss difference
      // would cancel |loss|-sized terms, the output difference only
      // |u|-sized ones.
      double fd = 0.0;
      for (std::size_t o = 0; o < plus.size(); ++o) {
        fd += upstream[o] * (plus[o] - minus[o]);
      }
      fd /= 2.0 * step;
      const double a = analytic[bi][c];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor});
      if (rel > block.max_rel_err) {
        block.max_rel_err = rel;
        block.worst_index = c;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, block.max_rel_err);
    report.blocks.push_back(std::move(block));
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

void randomize_trainable(Adapter& adapter, std::uint64_t seed, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw ParameterError("randomize_trainable: scale must be positive and finite");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  // Gate rows keep the builder's 1/sqrt(d_in) magnitude so the softmax stays
  // in its responsive range; a saturated softmax zeroes most expert paths.
  const double gate_scale = scale / std::sqrt(static_cast<double>(adapter_config(adapter).d_in));
  for (const BlockRef& block : trainable_blocks(adapter)) {
    const double block_scale = block.name == "gate" ? gate_scale : scale;
    for (std::size_t c = 0; c < block.size; ++c) block.data[c] = block_scale * unit(rng);
  }
}

SyntheticTaskSet make_multitask_data(const MultitaskConfig& config, std::uint64_t seed) {
  if (config.samples_per_task < 1) {
    throw ParameterError("make_multitask_data: samples_per_task must be at least 1");
  }
  if (config.obs_noise < 0.0) {
    throw ParameterError("make_multitask_data: obs_noise must be non-negative");
  }
  if (config.input_mode == InputMode::cluster_shifted && config.clusters > config.d_in) {
    throw ConfigError("make_multitask_data: cluster_shifted needs clusters <= d_in");
  }

  detail::PlantedConfig planted;
  planted.rows = config.d_out;
  planted.cols = config.d_in;
  planted.tasks = config.tasks;
  planted.clusters = config.clusters;
  planted.intra_rank = config.intra_rank;
  planted.global_rank = config.global_rank;
  planted.noise = config.noise;
  planted.center_scale = config.center_scale;
  planted.intra_scale = config.intra_scale;
  detail::PlantedFamily family = detail::make_planted_family(planted, seed);

  SyntheticTaskSet data;
  data.config = config;
  data.task_w = std::move(family.tasks);
  data.labels = std::move(family.labels);
  data.shared_b = std::move(family.b_true);
  data.per_task_a = std::move(family.per_task_a);

  // Unit cluster-mean directions: the mean of the cluster's planted factor
  // block, so the shift always projects strongly onto that cluster's own
  // feature directions (a coordinate axis can land in a blind spot of the
  // planted maps when the center draw is small there).
  std::vector<std::vector<double>> aligned(config.input_mode == InputMode::cluster_aligned
                                               ? config.clusters
                                               : 0);
  if (!aligned.empty()) {
    const std::size_t block = std::max<std::size_t>(1, config.intra_rank);
    for (std::size_t c = 0; c < config.clusters; ++c) {
      std::vector<double> dir(config.d_in, 0.0);
      for (std::size_t br = 0; br < block; ++br) {
        for (std::size_t col = 0; col < config.d_in; ++col) {
          dir[col] += family.cluster_base_a[c](c * block + br, col);
        }
      }
      double norm = 0.0;
      for (double v : dir) norm += v * v;
      norm = std::sqrt(norm);
      if (!(norm > 0.0)) {
        throw ConfigError("make_multitask_data: cluster_aligned needs a nonzero center_scale");
      }
      for (double& v : dir) v /= norm;
      aligned[c] = std::move(dir);
    }
  }

  std::mt19937_64 rng(detail::mix_seed(seed, 0x5a)); // separate stream from the family
  std::normal_distribution<double> unit(0.0, 1.0);
  data.inputs.reserve(config.tasks);
  data.targets.reserve(config.tasks);
  for (std::size_t t = 0; t < config.tasks; ++t) {
    Matrix x(config.samples_per_task, config.d_in);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = unit(rng);
    if (config.input_mode == InputMode::cluster_shifted) {
      // cluster mean = input_shift * e_cluster: unit directions, pairwise orthogonal
      const std::size_t axis = data.labels[t];
      for (std::size_t row = 0; row < x.rows(); ++row) x(row, axis) += config.input_shift;
    } else if (config.input_mode == InputMode::cluster_aligned) {
      const std::vector<double>& dir = aligned[data.labels[t]];
      for (std::size_t row = 0; row < x.rows(); ++row) {
        for (std::size_t col = 0; col < config.d_in; ++col) {
          x(row, col) += config.input_shift * dir[col];
        }
      }
    }
    Matrix y(config.samples_per_task, config.d_out);
    for (std::size_t row = 0; row < x.rows(); ++row) {
      const std::vector<double> u = matvec(data.task_w[t], x.row(row));
      for (std::size_t o = 0; o < config.d_out; ++o) {
        y(row, o) = u[o] + (config.obs_noise > 0.0 ? config.obs_noise * unit(rng) : 0.0);
      }
    }
    data.inputs.push_back(std::move(x));
    data.targets.push_back(std::move(y));
  }
  return data;
}

namespace {

struct SampleIndex {
  std::size_t task;
  std::size_t row;
};

std::vector<SampleIndex> flatten_samples(const SyntheticTaskSet& data) {
  std::vector<SampleIndex> samples;
  for (std::size_t t = 0; t < data.inputs.size(); ++t) {
    for (std::size_t row = 0; row < data.inputs[t].rows(); ++row) samples.push_back({t, row});
  }
  return samples;
}

// Accumulates scaled analytic gradients for one sample into the flat buffer.
void accumulate_grads(const Adapter& adapter, std::span<const double> h,
                      std::span<const double> upstream, std::vector<double>& flat) {
  const std::vector<std::vector<double>> grads = analytic_block_grads(adapter, h, upstream);
  std::size_t offset = 0;
  for (const std::vector<double>& g : grads) {
    for (std::size_t i = 0; i < g.size(); ++i) flat[offset + i] += g[i];
    offset += g.size();
  }
}

double pooled_mse(const Adapter& adapter, const SyntheticTaskSet& data,
                  const std::vector<SampleIndex>& samples) {
  const AdapterConfig& ac = adapter_config(adapter);
  const double inv =
      1.0 / (static_cast<double>(samples.size()) * static_cast<double>(ac.d_out));
  double loss = 0.0;
  for (const SampleIndex& idx : samples) {
    const std::vector<double> u = adapter_forward(adapter, data.inputs[idx.task].row(idx.row));
    const auto y = data.targets[idx.task].row(idx.row);
    for (std::size_t o = 0; o < u.size(); ++o) {
      const double diff = u[o] - y[o];
      loss += inv * diff * diff;
    }
  }
  return loss;
}

// Exact block-coordinate descent: the update is linear in each trainable
// factor with the other held fixed, so every half-sweep is a closed-form
// least-squares solve and the full-batch loss never increases.
TrainResult als_train(Adapter& adapter, const SyntheticTaskSet& data, const TrainConfig& config,
                      const std::vector<SampleIndex>& samples) {
  if (config.batch != 0) throw ParameterError("train: als is full-batch; set batch to 0");
  if (std::holds_alternative<MoeLoraLayer>(adapter)) {
    throw ConfigError("train: als supports lora and idlora; the moelora gate has no "
                      "closed-form block solve");
  }

  const AdapterConfig& ac = adapter_config(adapter);
  const std::size_t n = samples.size();
  const Matrix& w = std::visit([](const auto& l) -> const Matrix& { return l.w; }, adapter);

  // Inputs and residual targets y - W h, one column per sample.
  Matrix x_cols(ac.d_in, n);
  Matrix res(ac.d_out, n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto h = data.inputs[samples[j].task].row(samples[j].row);
    const auto y = data.targets[samples[j].task].row(samples[j].row);
    const std::vector<double> wh = matvec(w, h);
    for (std::size_t i = 0; i < ac.d_in; ++i) x_cols(i, j) = h[i];
    for (std::size_t o = 0; o < ac.d_out; ++o) res(o, j) = y[o] - wh[o];
  }

  TrainResult result;
  result.history.reserve(config.steps);
  const double scale = ac.alpha / static_cast<double>(ac.r);

  if (auto* lora = std::get_if<LoraLayer>(&adapter)) {
    const Matrix xt = transpose(x_cols);
    const Matrix res_xt_pinv = matmul(matmul(res, xt), pseudo_inverse(matmul(x_cols, xt)));
    for (std::size_t step = 1; step <= config.steps; ++step) {
      result.history.push_back({step, pooled_mse(adapter, data, samples)});
      Matrix ax = matmul(lora->a, x_cols);
      for (std::size_t i = 0; i < ax.size(); ++i) ax.data()[i] *= scale;
      lora->b = least_squares_right(ax, res);
      // A = (1/scale) pinv(B'B) B' R X' pinv(XX') from the normal equations.
      const Matrix bt = transpose(lora->b);
      Matrix a_new =
          matmul(matmul(pseudo_inverse(matmul(bt, lora->b)), bt), res_xt_pinv);
      for (std::size_t i = 0; i < a_new.size(); ++i) a_new.data()[i] /= scale;
      lora->a = std::move(a_new);
    }
  } else {
    auto& idl = std::get<IdLoraLayer>(adapter);
    const std::size_t r = ac.r, s = ac.s, k = ac.k;
    const std::size_t rc = r / s;
    const std::size_t oc = ac.d_out / s;
    std::vector<Matrix> proj(k);  // x_i = A_i h for every sample, r x n each
    for (std::size_t i = 0; i < k; ++i) proj[i] = matmul(idl.bases.bases[i], x_cols);

    Matrix gains(k, n);
    Matrix gb(rc, n * s), yb(oc, n * s);
    Matrix gt(r, n * ac.d_out), yt(1, n * ac.d_out);
    for (std::size_t step = 1; step <= config.steps; ++step) {
      result.history.push_back({step, pooled_mse(adapter, data, samples)});
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double dot = 0.0;
          for (std::size_t q = 0; q < r; ++q) dot += idl.router_t[q] * proj[i](q, j);
          gains(i, j) = dot;
        }
      }
      // B solve: per output chunk, res^(c) ~ B (scale sum_i gains_i x_i^(c)).
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t c = 0; c < s; ++c) {
          const std::size_t col = j * s + c;
          for (std::size_t q = 0; q < rc; ++q) {
            double acc = 0.0;
            for (std::size_t i = 0; i < k; ++i) acc += gains(i, j) * proj[i](c * rc + q, j);
            gb(q, col) = scale * acc;
          }
          for (std::size_t o = 0; o < oc; ++o) yb(o, col) = res(c * oc + o, j);
        }
      }
      idl.b = least_squares_right(gb, yb);
      // T solve: res_n ~ M_n t with M_n = scale sum_i concat_c(B x_i^(c)) x_i'.
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t o = 0; o < ac.d_out; ++o) {
          const std::size_t col = j * ac.d_out + o;
          for (std::size_t q = 0; q < r; ++q) gt(q, col) = 0.0;
          yt(0, col) = res(o, j);
        }
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t c = 0; c < s; ++c) {
            for (std::size_t o = 0; o < oc; ++o) {
              double ci = 0.0;
              for (std::size_t q = 0; q < rc; ++q) ci += idl.b(o, q) * proj[i](c * rc + q, j);
              const std::size_t col = j * ac.d_out + c * oc + o;
              for (std::size_t q = 0; q < r; ++q) gt(q, col) += scale * ci * proj[i](q, j);
            }
          }
        }
      }
      const Matrix t_row = least_squares_right(gt, yt);
      idl.router_t.assign(t_row.data(), t_row.data() + r);
    }
  }

  result.final_loss = pooled_mse(adapter, data, samples);
  return result;
}

}  // namespace

TrainResult train(Adapter& adapter, const SyntheticTaskSet& data, const TrainConfig& config) {
  if (config.steps < 1) throw ParameterError("train: steps must be at least 1");
  if (!(config.lr >= 0.0) || !std::isfinite(config.lr)) {
    throw ParameterError("train: lr must be finite and non-negative");
  }
  const AdapterConfig& ac = adapter_config(adapter);
  if (data.config.d_in != ac.d_in || data.config.d_out != ac.d_out) {
    throw ShapeError("train: adapter is " + std::to_string(ac.d_out) + "x" +
                     std::to_string(ac.d_in) + " but data is " + std::to_string(data.config.d_out) +
                     "x" + std::to_string(data.config.d_in));
  }
  const std::vector<SampleIndex> samples = flatten_samples(data);
  if (samples.empty()) throw ParameterError("train: data has no samples");
  if (config.batch > samples.size()) {
    throw ParameterError("train: batch " + std::to_string(config.batch) + " exceeds sample count " +
                         std::to_string(samples.size()));
  }
  if (config.optimizer == OptimizerKind::als) return als_train(adapter, data, config, samples);

  const std::vector<BlockRef> blocks = trainable_blocks(adapter);
  std::size_t total = 0;
  for (const BlockRef& b : blocks) total += b.size;

  std::vector<double> grad(total), m1, m2;
  if (config.optimizer == OptimizerKind::adam) {
    m1.assign(total, 0.0);
    m2.assign(total, 0.0);
  }
  std::mt19937_64 rng(config.seed);
  std::vector<SampleIndex> batch;
  const std::size_t batch_size = config.batch == 0 ? samples.size() : config.batch;
  const double inv = 1.0 / (static_cast<double>(batch_size) * static_cast<double>(ac.d_out));

  TrainResult result;
  result.history.reserve(config.steps);
  std::vector<double> upstream(ac.d_out);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    if (config.batch == 0) {
      batch = samples;
    } else {
      batch.clear();
      std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
      for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(samples[pick(rng)]);
    }

    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (const SampleIndex& idx : batch) {
      const auto h = data.inputs[idx.task].row(idx.row);
      const auto y = data.targets[idx.task].row(idx.row);
      const std::vector<double> u = adapter_forward(adapter, h);
      for (std::size_t o = 0; o < u.size(); ++o) {
        const double diff = u[o] - y[o];
        loss += inv * diff * diff;
        upstream[o] = 2.0 * inv * diff;
      }
      accumulate_grads(adapter, h, upstream, grad);
    }
    if (!std::isfinite(loss)) {
      throw TrainingError("loss diverged at step " + std::to_string(step));
    }
    result.history.push_back({step, loss});

    std::size_t offset = 0;
    for (const BlockRef& block : blocks) {
      for (std::size_t c = 0; c < block.size; ++c) {
        const double g = grad[offset + c];
        if (config.optimizer == OptimizerKind::sgd) {
          block.data[c] -= config.lr * g;
        } else {
          double& m = m1[offset + c];
          double& v = m2[offset + c];
          m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * g;
          v = config.adam_beta2 * v + (1.0 - config.adam_beta2) * g * g;
          const double mhat = m / (1.0 - std::pow(config.adam_beta1, static_cast<double>(step)));
          const double vhat = v / (1.0 - std::pow(config.adam_beta2, static_cast<double>(step)));
          block.data[c] -= config.lr * mhat / (std::sqrt(vhat) + config.adam_eps);
        }
      }
      offset += block.size;
    }
  }

  // Final loss over the full pooled sample set, after the last update.
  result.final_loss = pooled_mse(adapter, data, samples);
  return result;
}

EvalReport evaluate(const Adapter& adapter, const SyntheticTaskSet& data) {
  const AdapterConfig& ac = adapter_config(adapter);
  EvalReport report;
  report.per_task_mse.reserve(data.inputs.size());
  for (std::size_t t = 0; t < data.inputs.size(); ++t) {
    double task_loss = 0.0;
    for (std::size_t row = 0; row < data.inputs[t].rows(); ++row) {
      const std::vector<double> u = adapter_forward(adapter, data.inputs[t].row(row));
      const auto y = data.targets[t].row(row);
      for (std::size_t o = 0; o < u.size(); ++o) {
        const double diff = u[o] - y[o];
        task_loss += diff * diff;
      }
    }
    const double denom = static_cast<double>(data.inputs[t].rows()) * static_cast<double>(ac.d_out);
    report.per_task_mse.push_back(task_loss / denom);
  }
  double mean = 0.0;
  for (double v : report.per_task_mse) mean += v;
  report.mean_mse = report.per_task_mse.empty() ? 0.0 : mean / static_cast<double>(report.per_task_mse.size());
  return report;
}

void write_loss_history_csv(std::ostream& out, const TrainResult& result, std::uint64_t seed,
                            AdapterMethod method, std::uint64_t trainable_params) {
  out << "step,loss,seed,method,trainable_params\n";
  char buf[64];
  for (const StepRecord& rec : result.history) {
    std::snprintf(buf, sizeof(buf), "%.17g", rec.loss);
    out << rec.step << ',' << buf << ',' << seed << ',' << method_name(method) << ','
        << trainable_params << '\n';
  }
}

std::uint64_t trainable_parameter_count(const Adapter& adapter) {
  if (const auto* lora = std::get_if<LoraLayer>(&adapter)) {
    return lora->a.size() + lora->b.size();
  }
  if (const auto* moe = std::get_if<MoeLoraLayer>(&adapter)) {
    std::uint64_t total = moe->gate.size();
    for (std::size_t i = 0; i < moe->config.k; ++i) {
      total += moe->expert_a[i].size() + moe->expert_b[i].size();
    }
    return total;
  }
  const auto& id = std::get<IdLoraLayer>(adapter);
  return id.b.size() + id.router_t.size();
}

}  // namespace idlora
