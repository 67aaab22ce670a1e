#include "idlora/adapters.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <string>

namespace idlora {

namespace {

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

void require_input(const AdapterConfig& config, std::span<const double> h, const char* what) {
  if (h.size() != config.d_in) {
    throw ShapeError(std::string(what) + ": input length " + std::to_string(h.size()) +
                     ", expected " + std::to_string(config.d_in));
  }
  check_finite(h, what);
}

}  // namespace

const char* method_name(AdapterMethod method) {
  switch (method) {
    case AdapterMethod::lora: return "lora";
    case AdapterMethod::moelora: return "moelora";
    case AdapterMethod::idlora: return "idlora";
    case AdapterMethod::dora: return "dora";
  }
  throw ConfigError("unknown adapter method");
}

AdapterMethod parse_method(std::string_view name) {
  if (name == "lora") return AdapterMethod::lora;
  if (name == "moelora") return AdapterMethod::moelora;
  if (name == "idlora") return AdapterMethod::idlora;
  if (name == "dora") return AdapterMethod::dora;
  throw ConfigError("unknown adapter method '" + std::string(name) + "'");
}

void validate(const AdapterConfig& config) {
  if (config.d_in < 1 || config.d_out < 1) {
    throw ConfigError("adapter: d_in and d_out must be at least 1");
  }
  if (config.r < 1) throw ConfigError("adapter: rank must be at least 1");
  if (config.r > config.d_in) {
    throw ConfigError("adapter: rank " + std::to_string(config.r) + " exceeds d_in " +
                      std::to_string(config.d_in));
  }
  if (config.k < 1) throw ConfigError("adapter: k must be at least 1");
  if (!std::isfinite(config.alpha)) throw ConfigError("adapter: alpha must be finite");
  if (config.method == AdapterMethod::idlora) {
    if (config.s < 1) throw ConfigError("idlora: s must be at least 1");
    if (config.r % config.s != 0) {
      throw ConfigError("idlora: s = " + std::to_string(config.s) + " must divide r = " +
                        std::to_string(config.r));
    }
    if (config.d_out % config.s != 0) {
      throw ConfigError("idlora: s = " + std::to_string(config.s) + " must divide d_out = " +
                        std::to_string(config.d_out));
    }
    if (config.k * config.r > config.d_out) {
      throw ConfigError("idlora: k * r = " + std::to_string(config.k * config.r) +
                        " exceeds d_out = " + std::to_string(config.d_out) +
                        " rows available for bases");
    }
  }
}

LoraLayer build_lora(Matrix w, std::size_t r, double alpha, std::uint64_t seed) {
  LoraLayer layer;
  layer.config = {AdapterMethod::lora, w.cols(), w.rows(), r, 1, 1, alpha};
  validate(layer.config);
  std::mt19937_64 rng(seed);
  layer.a = gaussian_matrix(r, w.cols(), 1.0 / std::sqrt(static_cast<double>(w.cols())), rng);
  layer.b = Matrix(w.rows(), r);
  layer.w = std::move(w);
  return layer;
}

MoeLoraLayer build_moelora(Matrix w, std::size_t r, std::size_t k, double alpha,
                           std::uint64_t seed) {
  MoeLoraLayer layer;
  layer.config = {AdapterMethod::moelora, w.cols(), w.rows(), r, k, 1, alpha};
  validate(layer.config);
  std::mt19937_64 rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(w.cols()));
  layer.gate = gaussian_matrix(k, w.cols(), stddev, rng);
  layer.expert_a.reserve(k);
  layer.expert_b.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    layer.expert_a.push_back(gaussian_matrix(r, w.cols(), stddev, rng));
    layer.expert_b.emplace_back(w.rows(), r);
  }
  layer.w = std::move(w);
  return layer;
}

IdLoraLayer build_idlora(Matrix w, std::size_t r, std::size_t k, std::size_t s, double alpha,
                         std::uint64_t seed, const ClusterOptions& opts) {
  IdLoraLayer layer;
  layer.config = {AdapterMethod::idlora, w.cols(), w.rows(), r, k, s, alpha};
  validate(layer.config);
  const ClusterModel model = constrained_kmeans(w, k, r, seed, opts);
  layer.bases = select_basis(w, model, r);
  layer.b = Matrix(w.rows() / s, r / s);
  layer.router_t.assign(r, 1.0);
  layer.w = std::move(w);
  return layer;
}

std::vector<double> lora_forward(const LoraLayer& layer, std::span<const double> h) {
  require_input(layer.config, h, "lora_forward");
  std::vector<double> u = matvec(layer.w, h);
  const std::vector<double> ah = matvec(layer.a, h);
  const std::vector<double> bah = matvec(layer.b, ah);
  const double scale = layer.config.alpha / static_cast<double>(layer.config.r);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] += scale * bah[i];
  return u;
}

std::vector<double> moelora_forward(const MoeLoraLayer& layer, std::span<const double> h) {
  require_input(layer.config, h, "moelora_forward");
  std::vector<double> u = matvec(layer.w, h);
  std::vector<double> logits = matvec(layer.gate, h);
  double peak = logits[0];
  for (double v : logits) peak = std::max(peak, v);
  double total = 0.0;
  for (double& v : logits) {
    v = std::exp(v - peak);
    total += v;
  }
  const double scale = layer.config.alpha / static_cast<double>(layer.config.r);
  for (std::size_t i = 0; i < layer.config.k; ++i) {
    const double gate_i = logits[i] / total;
    const std::vector<double> ah = matvec(layer.expert_a[i], h);
    const std::vector<double> bah = matvec(layer.expert_b[i], ah);
    for (std::size_t j = 0; j < u.size(); ++j) u[j] += scale * gate_i * bah[j];
  }
  return u;
}

std::vector<double> idlora_alphas(const IdLoraLayer& layer, std::span<const double> h) {
  require_input(layer.config, h, "idlora_alphas");
  std::vector<double> alphas(layer.config.k);
  for (std::size_t i = 0; i < layer.config.k; ++i) {
    const std::vector<double> x = matvec(layer.bases.bases[i], h);
    alphas[i] = dot(layer.router_t, x);
  }
  return alphas;
}

std::vector<double> idlora_forward(const IdLoraLayer& layer, std::span<const double> h) {
  require_input(layer.config, h, "idlora_forward");
  const std::size_t r = layer.config.r;
  const std::size_t s = layer.config.s;
  const std::size_t chunk_in = r / s;
  const std::size_t chunk_out = layer.config.d_out / s;
  const double scale = layer.config.alpha / static_cast<double>(r);

  std::vector<double> u = matvec(layer.w, h);
  for (std::size_t i = 0; i < layer.config.k; ++i) {
    const std::vector<double> x = matvec(layer.bases.bases[i], h);
    const double alpha_i = dot(layer.router_t, x);
    for (std::size_t j = 0; j < s; ++j) {
      const std::span<const double> xj(x.data() + j * chunk_in, chunk_in);
      const std::vector<double> yj = matvec(layer.b, xj);
      double* dst = u.data() + j * chunk_out;
      for (std::size_t t = 0; t < chunk_out; ++t) dst[t] += scale * alpha_i * yj[t];
    }
  }
  return u;
}

std::vector<double> adapter_forward(const Adapter& adapter, std::span<const double> h) {
  return std::visit(
      [&](const auto& layer) {
        using T = std::decay_t<decltype(layer)>;
        if constexpr (std::is_same_v<T, LoraLayer>) {
          return lora_forward(layer, h);
        } else if constexpr (std::is_same_v<T, MoeLoraLayer>) {
          return moelora_forward(layer, h);
        } else {
          return idlora_forward(layer, h);
        }
      },
      adapter);
}

const AdapterConfig& adapter_config(const Adapter& adapter) {
  return std::visit([](const auto& layer) -> const AdapterConfig& { return layer.config; },
                    adapter);
}

Matrix assemble_operator(const IdLoraLayer& layer, std::span<const double> weights) {
  if (weights.size() != layer.config.k) {
    throw ShapeError("assemble_operator: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(layer.config.k) + " bases");
  }
  check_finite(weights, "assemble_operator");
  const std::size_t s = layer.config.s;
  const std::size_t chunk_in = layer.config.r / s;
  const std::size_t chunk_out = layer.config.d_out / s;
  const double scale = layer.config.alpha / static_cast<double>(layer.config.r);

  Matrix out(layer.config.d_out, layer.config.d_in);
  for (std::size_t i = 0; i < layer.config.k; ++i) {
    if (weights[i] == 0.0) continue;
    for (std::size_t j = 0; j < s; ++j) {
      std::vector<std::size_t> rows(chunk_in);
      for (std::size_t t = 0; t < chunk_in; ++t) rows[t] = j * chunk_in + t;
      const Matrix block = matmul(layer.b, take_rows(layer.bases.bases[i], rows));
      for (std::size_t rr = 0; rr < chunk_out; ++rr) {
        auto dst = out.row(j * chunk_out + rr);
        auto src = block.row(rr);
        for (std::size_t cc = 0; cc < out.cols(); ++cc) {
          dst[cc] += scale * weights[i] * src[cc];
        }
      }
    }
  }
  return out;
}

std::uint64_t count_trainable_site(AdapterMethod method, std::size_t d_out, std::size_t d_in,
                                   std::size_t r, std::size_t k, std::size_t s) {
  if (d_out < 1 || d_in < 1 || r < 1) {
    throw ConfigError("count_trainable: dimensions and rank must be at least 1");
  }
  const auto out64 = static_cast<std::uint64_t>(d_out);
  const auto in64 = static_cast<std::uint64_t>(d_in);
  const auto r64 = static_cast<std::uint64_t>(r);
  switch (method) {
    case AdapterMethod::lora:
      return r64 * (in64 + out64);
    case AdapterMethod::dora:
      return r64 * (in64 + out64) + out64;
    case AdapterMethod::moelora: {
      if (k < 1) throw ConfigError("count_trainable: moelora needs k >= 1");
      const auto k64 = static_cast<std::uint64_t>(k);
      return k64 * r64 * (in64 + out64) + k64 * in64;
    }
    case AdapterMethod::idlora: {
      if (s < 1) throw ConfigError("count_trainable: idlora needs s >= 1");
      if (r % s != 0 || d_out % s != 0) {
        throw ConfigError("count_trainable: idlora needs s | r and s | d_out");
      }
      const auto s64 = static_cast<std::uint64_t>(s);
      return (out64 * r64) / (s64 * s64) + r64;
    }
  }
  throw ConfigError("count_trainable: unknown method");
}

std::uint64_t count_trainable(AdapterMethod method, const ArchitectureDescriptor& arch,
                              std::size_t r, std::size_t k, std::size_t s) {
  std::uint64_t per_layer = 0;
  for (const SiteShape& site : arch.sites) {
    per_layer += count_trainable_site(method, site.d_out, site.d_in, r, k, s);
  }
  return per_layer * static_cast<std::uint64_t>(arch.layers);
}

std::string idlora_count_note() {
  return "idlora counts cover the trainable blocks only: the shared B "
         "(d_out*r/s^2 per site) and the router T (r per site). Totals quoted "
         "elsewhere for llama3-8b at r=8, s=2 (about 7.7M) additionally fold "
         "in roughly 5.0M rank-independent per-site coordinates that are not "
         "part of this parameterization; the blocks counted here come to "
         "2,754,304 for that configuration.";
}

std::string format_millions(std::uint64_t count) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1fM", static_cast<double>(count) / 1e6);
  return buf;
}

}  // namespace idlora
