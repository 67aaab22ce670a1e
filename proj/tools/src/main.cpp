#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "idlora/idlora.hpp"

namespace {

using nlohmann::ordered_json;
using namespace idlora;

std::string with_commas(std::uint64_t value) {
  std::string digits = std::to_string(value);
  std::string out;
  out.reserve(digits.size() + digits.size() / 3);
  std::size_t lead = digits.size() % 3 == 0 ? 3 : digits.size() % 3;
  out.append(digits, 0, lead);
  for (std::size_t i = lead; i < digits.size(); i += 3) {
    out.push_back(',');
    out.append(digits, i, 3);
  }
  return out;
}

ordered_json base_report(const std::string& command, std::uint64_t seed, ordered_json config) {
  ordered_json report;
  report["tool"] = "idlora";
  report["version"] = std::string(kVersion);
  report["command"] = command;
  report["seed"] = seed;
  report["config"] = std::move(config);
  return report;
}

void write_json(const std::string& path, const ordered_json& report) {
  write_file_atomic(path, report.dump(2) + "\n");
}

ArchitectureDescriptor resolve_arch(const std::string& spec) {
  try {
    return find_architecture(spec);
  } catch (const ConfigError&) {
    if (std::filesystem::exists(spec)) return load_architecture(spec);
    throw;
  }
}

std::string fmt(const char* format, double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, value);
  return buf;
}

// ---------------------------------------------------------------- count-params

struct CountOpts {
  std::string arch = "llama3-8b";
  std::string method = "all";
  std::vector<std::size_t> ranks = {8, 16, 32, 64, 128};
  std::size_t k = 4;
  std::size_t s = 2;
  std::string json_path;
};

int run_count(const CountOpts& opts) {
  const ArchitectureDescriptor arch = resolve_arch(opts.arch);
  std::vector<AdapterMethod> methods;
  if (opts.method == "all") {
    methods = {AdapterMethod::lora, AdapterMethod::dora, AdapterMethod::moelora,
               AdapterMethod::idlora};
  } else {
    methods = {parse_method(opts.method)};
  }

  std::printf("architecture %s: %zu layers, %zu adapted matrices per layer\n",
              arch.name.c_str(), arch.layers, arch.sites.size());
  std::printf("%-10s %5s %5s %5s %16s %10s\n", "method", "r", "k", "s", "trainable", "display");
  ordered_json rows = ordered_json::array();
  bool has_idlora = false;
  for (const AdapterMethod method : methods) {
    for (const std::size_t r : opts.ranks) {
      const std::uint64_t count = count_trainable(method, arch, r, opts.k, opts.s);
      const bool uses_k = method == AdapterMethod::moelora || method == AdapterMethod::idlora;
      const bool uses_s = method == AdapterMethod::idlora;
      has_idlora = has_idlora || method == AdapterMethod::idlora;
      std::printf("%-10s %5zu %5s %5s %16s %10s\n", method_name(method), r,
                  uses_k ? std::to_string(opts.k).c_str() : "-",
                  uses_s ? std::to_string(opts.s).c_str() : "-", with_commas(count).c_str(),
                  format_millions(count).c_str());
      ordered_json row;
      row["method"] = method_name(method);
      row["r"] = r;
      if (uses_k) row["k"] = opts.k;
      if (uses_s) row["s"] = opts.s;
      row["trainable"] = count;
      row["display"] = format_millions(count);
      rows.push_back(std::move(row));
    }
  }
  if (has_idlora) std::printf("note: %s\n", idlora_count_note().c_str());

  if (!opts.json_path.empty()) {
    ordered_json config;
    config["arch"] = arch.name;
    config["method"] = opts.method;
    config["ranks"] = opts.ranks;
    config["k"] = opts.k;
    config["s"] = opts.s;
    ordered_json report = base_report("count-params", 0, std::move(config));
    report["result"]["rows"] = std::move(rows);
    if (has_idlora) report["result"]["idlora_note"] = idlora_count_note();
    write_json(opts.json_path, report);
  }
  return 0;
}

// ------------------------------------------------------------------ gen-matrix

struct GenOpts {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t clusters = 0;  // 0 = plain gaussian
  double scale = 1.0;
  double spread = 0.1;
  std::uint64_t seed = 1;
  std::string out;
};

int run_gen(const GenOpts& opts) {
  if (opts.clusters > opts.rows) {
    throw ParameterError("gen-matrix: clusters cannot exceed rows");
  }
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  Matrix m(opts.rows, opts.cols);
  if (opts.clusters == 0) {
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = opts.scale * unit(rng);
  } else {
    Matrix centers(opts.clusters, opts.cols);
    for (std::size_t i = 0; i < centers.size(); ++i) centers.data()[i] = opts.scale * unit(rng);
    for (std::size_t i = 0; i < opts.rows; ++i) {
      const auto center = centers.row(i % opts.clusters);
      auto dst = m.row(i);
      for (std::size_t j = 0; j < opts.cols; ++j) dst[j] = center[j] + opts.spread * unit(rng);
    }
  }
  save_matrix(opts.out, m);
  std::printf("wrote %zux%zu matrix to %s\n", opts.rows, opts.cols, opts.out.c_str());
  return 0;
}

// --------------------------------------------------------------------- cluster

struct ClusterCmdOpts {
  std::string in;
  std::size_t k = 0;
  std::size_t min_size = 1;
  std::uint64_t seed = 1;
  std::size_t max_iter = 100;
  double tol = 1e-8;
  bool greedy = false;
  std::string json_path;
};

int run_cluster(const ClusterCmdOpts& opts) {
  const Matrix points = load_matrix(opts.in);
  ClusterOptions copts;
  copts.max_iter = opts.max_iter;
  copts.tol = opts.tol;
  copts.flow_assignment = !opts.greedy;
  const ClusterModel model = constrained_kmeans(points, opts.k, opts.min_size, opts.seed, copts);

  std::printf("clustered %zu points into %zu groups (min_size %zu): objective=%s iterations=%zu converged=%s\n",
              points.rows(), model.k, model.min_size, fmt("%.6g", kmeans_objective(model)).c_str(),
              model.iterations_run, model.converged ? "yes" : "no");
  for (std::size_t l = 0; l < model.k; ++l) {
    std::printf("cluster %zu: %zu points\n", l, model.cluster_size(l));
  }

  if (!opts.json_path.empty()) {
    ordered_json config;
    config["in"] = opts.in;
    config["k"] = opts.k;
    config["min_size"] = opts.min_size;
    config["max_iter"] = opts.max_iter;
    config["tol"] = opts.tol;
    config["assignment"] = opts.greedy ? "greedy" : "flow";
    ordered_json report = base_report("cluster", opts.seed, std::move(config));
    report["result"]["assignments"] = model.assignments;
    ordered_json sizes = ordered_json::array();
    for (std::size_t l = 0; l < model.k; ++l) sizes.push_back(model.cluster_size(l));
    report["result"]["sizes"] = std::move(sizes);
    report["result"]["objective"] = kmeans_objective(model);
    report["result"]["iterations"] = model.iterations_run;
    report["result"]["converged"] = model.converged;
    write_json(opts.json_path, report);
  }
  return 0;
}

// ----------------------------------------------------------------------- basis

struct BasisOpts {
  std::string in;
  std::size_t k = 0;
  std::size_t r = 0;
  std::uint64_t seed = 1;
  bool greedy = false;
  std::string out;
  std::string json_path;
};

int run_basis(const BasisOpts& opts) {
  const Matrix w = load_matrix(opts.in);
  ClusterOptions copts;
  copts.flow_assignment = !opts.greedy;
  const ClusterModel model = constrained_kmeans(w, opts.k, opts.r, opts.seed, copts);
  const BasisSet basis = select_basis(w, model, opts.r);

  for (std::size_t l = 0; l < basis.k; ++l) {
    std::string line = "cluster " + std::to_string(l) + " basis rows:";
    for (std::size_t idx : basis.row_indices[l]) line += " " + std::to_string(idx);
    std::printf("%s\n", line.c_str());
  }
  if (!opts.out.empty()) {
    save_basis_set(opts.out, basis);
    std::printf("wrote basis set (k=%zu, r=%zu) to %s\n", basis.k, basis.r, opts.out.c_str());
  }

  if (!opts.json_path.empty()) {
    ordered_json config;
    config["in"] = opts.in;
    config["k"] = opts.k;
    config["r"] = opts.r;
    config["assignment"] = opts.greedy ? "greedy" : "flow";
    ordered_json report = base_report("basis", opts.seed, std::move(config));
    report["result"]["row_indices"] = basis.row_indices;
    write_json(opts.json_path, report);
  }
  return 0;
}

// ------------------------------------------------------------- verify-theorem1

struct Theorem1Opts {
  std::size_t d1 = 32, d2 = 24, tasks = 12, clusters = 3;
  std::size_t intra_rank = 2, global_rank = 8;
  double noise = 0.0, center_scale = 4.0, intra_scale = 0.2;
  std::size_t k = 0;     // 0 = same as planted clusters
  std::size_t rank = 0;  // 0 = same as global_rank
  std::size_t ensembles = 20;
  std::uint64_t seed = 1;
  std::string json_path;
};

int run_theorem1(const Theorem1Opts& opts) {
  EnsembleConfig cfg;
  cfg.d1 = opts.d1;
  cfg.d2 = opts.d2;
  cfg.tasks = opts.tasks;
  cfg.clusters = opts.clusters;
  cfg.intra_rank = opts.intra_rank;
  cfg.global_rank = opts.global_rank;
  cfg.noise = opts.noise;
  cfg.center_scale = opts.center_scale;
  cfg.intra_scale = opts.intra_scale;
  const std::size_t k = opts.k == 0 ? opts.clusters : opts.k;
  const std::size_t rank = opts.rank == 0 ? opts.global_rank : opts.rank;

  std::size_t hold = 0;
  std::size_t strict = 0;
  ordered_json rows = ordered_json::array();
  for (std::size_t e = 0; e < opts.ensembles; ++e) {
    const std::uint64_t es = opts.seed + e;
    const TaskEnsemble ensemble = generate_ensemble(cfg, es);
    const ReconstructionReport rep = verify_theorem1(ensemble, k, rank, rank, es);
    hold += rep.inequality_holds ? 1 : 0;
    strict += rep.strict ? 1 : 0;
    std::printf("seed=%" PRIu64 " clustered=%s global=%s delta=%s margin=%s %s\n", es,
                fmt("%.6g", rep.clustered_total).c_str(), fmt("%.6g", rep.global_total).c_str(),
                fmt("%.6g", rep.delta).c_str(), fmt("%.6g", rep.theorem_margin).c_str(),
                rep.inequality_holds ? "holds" : "VIOLATED");
    ordered_json row;
    row["seed"] = es;
    row["clustered_total"] = rep.clustered_total;
    row["global_total"] = rep.global_total;
    row["delta"] = rep.delta;
    row["theorem_margin"] = rep.theorem_margin;
    row["separation"] = rep.separation;
    row["intra_spread"] = rep.intra_spread;
    row["inequality_holds"] = rep.inequality_holds;
    row["strict"] = rep.strict;
    rows.push_back(std::move(row));
  }
  const bool all_hold = hold == opts.ensembles;
  std::printf("ensembles=%zu hold=%zu strict=%zu -> %s\n", opts.ensembles, hold, strict,
              all_hold ? "PASS" : "FAIL");

  if (!opts.json_path.empty()) {
    ordered_json config;
    config["d1"] = opts.d1;
    config["d2"] = opts.d2;
    config["tasks"] = opts.tasks;
    config["clusters"] = opts.clusters;
    config["intra_rank"] = opts.intra_rank;
    config["global_rank"] = opts.global_rank;
    config["noise"] = opts.noise;
    config["center_scale"] = opts.center_scale;
    config["intra_scale"] = opts.intra_scale;
    config["k"] = k;
    config["rank"] = rank;
    config["ensembles"] = opts.ensembles;
    ordered_json report = base_report("verify-theorem1", opts.seed, std::move(config));
    report["result"]["ensembles"] = std::move(rows);
    report["result"]["hold_count"] = hold;
    report["result"]["strict_count"] = strict;
    report["result"]["all_hold"] = all_hold;
    write_json(opts.json_path, report);
  }
  return all_hold ? 0 : 1;
}

// ------------------------------------------------------------- verify-theorem2

struct Theorem2Opts {
  std::size_t d1 = 32, d2 = 24, tasks = 12, clusters = 3;
  std::size_t intra_rank = 2, global_rank = 8;
  double noise = 0.0, center_scale = 4.0, intra_scale = 0.2;
  bool rare = true;
  std::size_t rare_cols = 3;
  std::size_t pivots = 4;
  std::size_t trials = 500;
  std::size_t ensembles = 1;
  std::uint64_t seed = 1;
  std::string json_path;
};

int run_theorem2(const Theorem2Opts& opts) {
  EnsembleConfig cfg;
  cfg.d1 = opts.d1;
  cfg.d2 = opts.d2;
  cfg.tasks = opts.tasks;
  cfg.clusters = opts.clusters;
  cfg.intra_rank = opts.intra_rank;
  cfg.global_rank = opts.global_rank;
  cfg.noise = opts.noise;
  cfg.center_scale = opts.center_scale;
  cfg.intra_scale = opts.intra_scale;
  cfg.rare_cluster = opts.rare;
  cfg.rare_cols = opts.rare_cols;

  bool all_pass = true;
  ordered_json reports = ordered_json::array();
  for (std::size_t e = 0; e < opts.ensembles; ++e) {
    const std::uint64_t es = opts.seed + e;
    const TaskEnsemble ensemble = generate_ensemble(cfg, es);
    const PivotStudyReport rep = pivot_stability_study(ensemble, opts.pivots, opts.trials, es);
    const bool pass = rep.mean_diff >= 0.0 && rep.ci_low > 0.0;
    all_pass = all_pass && pass;
    std::printf(
        "seed=%" PRIu64 " trials=%zu mean_global=%s mean_local=%s diff=%s ci=[%s, %s] "
        "bad_pivot_fraction=%s %s\n",
        es, rep.trials, fmt("%.6g", rep.mean_global).c_str(), fmt("%.6g", rep.mean_local).c_str(),
        fmt("%.6g", rep.mean_diff).c_str(), fmt("%.6g", rep.ci_low).c_str(),
        fmt("%.6g", rep.ci_high).c_str(), fmt("%.4g", rep.bad_pivot_fraction).c_str(),
        pass ? "holds" : "VIOLATED");

    ordered_json jr;
    jr["seed"] = es;
    jr["trials"] = rep.trials;
    jr["pivot_count"] = rep.pivot_count;
    jr["mean_global"] = rep.mean_global;
    jr["mean_local"] = rep.mean_local;
    jr["mean_diff"] = rep.mean_diff;
    jr["ci_low"] = rep.ci_low;
    jr["ci_high"] = rep.ci_high;
    jr["bad_pivot_fraction"] = rep.bad_pivot_fraction;
    jr["delta_l"] = rep.delta_l;
    jr["diam"] = rep.diam;
    jr["pivot_distribution"] = rep.pivot_distribution;
    jr["global_max_err"] = rep.global_max_err;
    jr["local_max_err"] = rep.local_max_err;
    jr["pass"] = pass;
    reports.push_back(std::move(jr));
  }
  std::printf("ensembles=%zu -> %s\n", opts.ensembles, all_pass ? "PASS" : "FAIL");

  if (!opts.json_path.empty()) {
    ordered_json config;
    config["d1"] = opts.d1;
    config["d2"] = opts.d2;
    config["tasks"] = opts.tasks;
    config["clusters"] = opts.clusters;
    config["intra_rank"] = opts.intra_rank;
    config["global_rank"] = opts.global_rank;
    config["noise"] = opts.noise;
    config["center_scale"] = opts.center_scale;
    config["intra_scale"] = opts.intra_scale;
    config["rare_cluster"] = opts.rare;
    config["rare_cols"] = opts.rare_cols;
    config["pivots"] = opts.pivots;
    config["trials"] = opts.trials;
    config["ensembles"] = opts.ensembles;
    ordered_json report = base_report("verify-theorem2", opts.seed, std::move(config));
    report["result"]["ensembles"] = std::move(reports);
    report["result"]["all_pass"] = all_pass;
    write_json(opts.json_path, report);
  }
  return all_pass ? 0 : 1;
}

// ------------------------------------------------------------------ train/eval

struct DataOpts {
  std::size_t d_in = 16, d_out = 16, tasks = 6, clusters = 3;
  std::size_t intra_rank = 1, global_rank = 6;
  double matrix_noise = 0.0, center_scale = 2.0, intra_scale = 0.0;
  std::size_t samples = 32;
  double obs_noise = 0.0;
  std::string input_mode = "standard";
  double input_shift = 4.0;
  std::uint64_t data_seed = 1;
};

void add_data_flags(CLI::App* sc, DataOpts& d) {
  sc->add_option("--d-in", d.d_in, "input width")->capture_default_str();
  sc->add_option("--d-out", d.d_out, "output width")->capture_default_str();
  sc->add_option("--tasks", d.tasks, "planted task count")->capture_default_str();
  sc->add_option("--clusters", d.clusters, "planted cluster count")->capture_default_str();
  sc->add_option("--intra-rank", d.intra_rank, "within-cluster deviation rank")
      ->capture_default_str();
  sc->add_option("--global-rank", d.global_rank, "shared factor rank")->capture_default_str();
  sc->add_option("--matrix-noise", d.matrix_noise, "residual budget on planted maps")
      ->capture_default_str();
  sc->add_option("--center-scale", d.center_scale, "cluster center magnitude")
      ->capture_default_str();
  sc->add_option("--intra-scale", d.intra_scale, "within-cluster deviation magnitude")
      ->capture_default_str();
  sc->add_option("--samples", d.samples, "samples per task")->capture_default_str();
  sc->add_option("--obs-noise", d.obs_noise, "target noise stddev")->capture_default_str();
  sc->add_option("--input-mode", d.input_mode, "input distribution")
      ->check(CLI::IsMember({"standard", "cluster-shifted", "cluster-aligned"}))
      ->capture_default_str();
  sc->add_option("--input-shift", d.input_shift, "cluster mean magnitude for cluster-shifted")
      ->capture_default_str();
  sc->add_option("--data-seed", d.data_seed, "data generator seed")->capture_default_str();
}

MultitaskConfig to_config(const DataOpts& d) {
  MultitaskConfig mc;
  mc.d_in = d.d_in;
  mc.d_out = d.d_out;
  mc.tasks = d.tasks;
  mc.clusters = d.clusters;
  mc.intra_rank = d.intra_rank;
  mc.global_rank = d.global_rank;
  mc.noise = d.matrix_noise;
  mc.center_scale = d.center_scale;
  mc.intra_scale = d.intra_scale;
  mc.samples_per_task = d.samples;
  mc.obs_noise = d.obs_noise;
  mc.input_mode = d.input_mode == "standard"          ? InputMode::standard
                  : d.input_mode == "cluster-aligned" ? InputMode::cluster_aligned
                                                      : InputMode::cluster_shifted;
  mc.input_shift = d.input_shift;
  return mc;
}

ordered_json data_json(const DataOpts& d) {
  ordered_json j;
  j["d_in"] = d.d_in;
  j["d_out"] = d.d_out;
  j["tasks"] = d.tasks;
  j["clusters"] = d.clusters;
  j["intra_rank"] = d.intra_rank;
  j["global_rank"] = d.global_rank;
  j["matrix_noise"] = d.matrix_noise;
  j["center_scale"] = d.center_scale;
  j["intra_scale"] = d.intra_scale;
  j["samples"] = d.samples;
  j["obs_noise"] = d.obs_noise;
  j["input_mode"] = d.input_mode;
  j["input_shift"] = d.input_shift;
  j["data_seed"] = d.data_seed;
  return j;
}

Matrix mean_task_map(const SyntheticTaskSet& data) {
  Matrix mean(data.config.d_out, data.config.d_in);
  for (const Matrix& w : data.task_w) {
    for (std::size_t i = 0; i < mean.size(); ++i) mean.data()[i] += w.data()[i];
  }
  const double inv = 1.0 / static_cast<double>(data.task_w.size());
  for (std::size_t i = 0; i < mean.size(); ++i) mean.data()[i] *= inv;
  return mean;
}

struct TrainOpts {
  DataOpts data;
  std::string method = "idlora";
  std::size_t r = 4, k = 2, s = 1;
  double alpha = 0.0;  // 0 = 2r
  double init_scale = 0.0;
  std::uint64_t adapter_seed = 7;
  std::string base = "mean";
  std::string optimizer = "adam";
  double lr = 1e-2;
  std::size_t steps = 500;
  std::size_t batch = 0;
  std::uint64_t train_seed = 3;
  std::string csv_path;
  std::string json_path;
  std::string save_adapter_path;
  std::string save_w_path;
};

Adapter build_adapter(const std::string& method, Matrix w, std::size_t r, std::size_t k,
                      std::size_t s, double alpha, std::uint64_t seed) {
  const AdapterMethod m = parse_method(method);
  switch (m) {
    case AdapterMethod::lora:
      return build_lora(std::move(w), r, alpha, seed);
    case AdapterMethod::moelora:
      return build_moelora(std::move(w), r, k, alpha, seed);
    case AdapterMethod::idlora:
      return build_idlora(std::move(w), r, k, s, alpha, seed);
    default:
      throw ConfigError("method '" + method + "' cannot be instantiated as a layer");
  }
}

int run_train(const TrainOpts& opts) {
  const SyntheticTaskSet data = make_multitask_data(to_config(opts.data), opts.data.data_seed);
  Matrix w = opts.base == "mean" ? mean_task_map(data)
                                 : Matrix(opts.data.d_out, opts.data.d_in);
  const double alpha = opts.alpha > 0.0 ? opts.alpha : 2.0 * static_cast<double>(opts.r);
  Adapter adapter =
      build_adapter(opts.method, std::move(w), opts.r, opts.k, opts.s, alpha, opts.adapter_seed);
  if (opts.init_scale > 0.0) randomize_trainable(adapter, opts.adapter_seed, opts.init_scale);

  TrainConfig tc;
  tc.optimizer = opts.optimizer == "sgd"    ? OptimizerKind::sgd
                 : opts.optimizer == "als"  ? OptimizerKind::als
                                            : OptimizerKind::adam;
  tc.lr = opts.lr;
  tc.steps = opts.steps;
  tc.batch = opts.batch;
  tc.seed = opts.train_seed;
  const TrainResult result = train(adapter, data, tc);
  const EvalReport eval = evaluate(adapter, data);
  const std::uint64_t params = trainable_parameter_count(adapter);

  std::printf("method=%s trainable_params=%" PRIu64 " steps=%zu final_loss=%s mean_mse=%s\n",
              opts.method.c_str(), params, opts.steps, fmt("%.6g", result.final_loss).c_str(),
              fmt("%.6g", eval.mean_mse).c_str());

  if (!opts.csv_path.empty()) {
    std::ostringstream csv;
    write_loss_history_csv(csv, result, opts.train_seed, parse_method(opts.method), params);
    write_file_atomic(opts.csv_path, csv.str());
  }
  if (!opts.save_w_path.empty()) {
    save_matrix(opts.save_w_path, std::visit([](const auto& l) -> const Matrix& { return l.w; },
                                             adapter));
  }
  if (!opts.save_adapter_path.empty()) save_adapter(opts.save_adapter_path, adapter);

  if (!opts.json_path.empty()) {
    ordered_json config;
    config["data"] = data_json(opts.data);
    config["adapter"] = {{"method", opts.method}, {"r", opts.r},          {"k", opts.k},
                         {"s", opts.s},           {"alpha", alpha},       {"seed", opts.adapter_seed},
                         {"init_scale", opts.init_scale},                 {"base", opts.base}};
    config["train"] = {{"optimizer", opts.optimizer},
                       {"lr", opts.lr},
                       {"steps", opts.steps},
                       {"batch", opts.batch},
                       {"seed", opts.train_seed}};
    ordered_json report = base_report("train", opts.train_seed, std::move(config));
    report["result"]["trainable_params"] = params;
    report["result"]["final_loss"] = result.final_loss;
    report["result"]["per_task_mse"] = eval.per_task_mse;
    report["result"]["mean_mse"] = eval.mean_mse;
    write_json(opts.json_path, report);
  }
  return 0;
}

struct EvalOpts {
  DataOpts data;
  std::string adapter_path;
  std::string w_path;
  std::string json_path;
};

int run_eval(const EvalOpts& opts) {
  Matrix w = load_matrix(opts.w_path);
  const Adapter adapter = load_adapter(opts.adapter_path, std::move(w));
  const SyntheticTaskSet data = make_multitask_data(to_config(opts.data), opts.data.data_seed);
  const EvalReport eval = evaluate(adapter, data);

  for (std::size_t t = 0; t < eval.per_task_mse.size(); ++t) {
    std::printf("task %zu: mse=%s\n", t, fmt("%.6g", eval.per_task_mse[t]).c_str());
  }
  std::printf("mean_mse=%s\n", fmt("%.6g", eval.mean_mse).c_str());

  if (!opts.json_path.empty()) {
    ordered_json config;
    config["adapter"] = opts.adapter_path;
    config["w"] = opts.w_path;
    config["data"] = data_json(opts.data);
    ordered_json report = base_report("eval", opts.data.data_seed, std::move(config));
    report["result"]["per_task_mse"] = eval.per_task_mse;
    report["result"]["mean_mse"] = eval.mean_mse;
    write_json(opts.json_path, report);
  }
  return 0;
}

// ------------------------------------------------------------------- gradcheck

struct GradOpts {
  std::string method = "idlora";
  std::size_t d_in = 12, d_out = 12;
  std::size_t r = 4, k = 2, s = 1;
  double alpha = 0.0;
  std::size_t layers = 10;
  std::uint64_t seed = 1;
  double step = 1e-4;
  double tol = 1e-5;
  std::string json_path;
};

int run_gradcheck(const GradOpts& opts) {
  const double alpha = opts.alpha > 0.0 ? opts.alpha : 2.0 * static_cast<double>(opts.r);
  std::mt19937_64 master(opts.seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  bool all_pass = true;
  double overall = 0.0;
  ordered_json rows = ordered_json::array();
  for (std::size_t layer = 0; layer < opts.layers; ++layer) {
    const std::uint64_t build_seed = master();
    const std::uint64_t block_seed = master();

    Matrix w(opts.d_out, opts.d_in);
    const double wscale = 1.0 / std::sqrt(static_cast<double>(opts.d_in));
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = wscale * unit(master);
    Adapter adapter =
        build_adapter(opts.method, std::move(w), opts.r, opts.k, opts.s, alpha, build_seed);
    randomize_trainable(adapter, block_seed);

    std::vector<double> h(opts.d_in), upstream(opts.d_out);
    for (double& v : h) v = unit(master);
    for (double& v : upstream) v = unit(master);

    const GradCheckReport rep = finite_diff_check(adapter, h, upstream, opts.step, opts.tol);
    all_pass = all_pass && rep.pass;
    overall = std::max(overall, rep.max_rel_err);
    std::string worst = "-";
    for (const GradCheckBlock& block : rep.blocks) {
      if (block.max_rel_err == rep.max_rel_err) worst = block.name;
    }
    std::printf("layer %zu [%s]: max_rel_err=%s worst_block=%s %s\n", layer, opts.method.c_str(),
                fmt("%.3e", rep.max_rel_err).c_str(), worst.c_str(),
                rep.pass ? "pass" : "FAIL");

    ordered_json row;
    row["layer"] = layer;
    row["max_rel_err"] = rep.max_rel_err;
    row["pass"] = rep.pass;
    ordered_json blocks = ordered_json::array();
    for (const GradCheckBlock& block : rep.blocks) {
      blocks.push_back({{"name", block.name},
                        {"max_rel_err", block.max_rel_err},
                        {"worst_index", block.worst_index}});
    }
    row["blocks"] = std::move(blocks);
    rows.push_back(std::move(row));
  }
  std::printf("layers=%zu max_rel_err=%s tol=%s -> %s\n", opts.layers,
              fmt("%.3e", overall).c_str(), fmt("%.1e", opts.tol).c_str(),
              all_pass ? "PASS" : "FAIL");

  if (!opts.json_path.empty()) {
    ordered_json config;
    config["method"] = opts.method;
    config["d_in"] = opts.d_in;
    config["d_out"] = opts.d_out;
    config["r"] = opts.r;
    config["k"] = opts.k;
    config["s"] = opts.s;
    config["alpha"] = alpha;
    config["layers"] = opts.layers;
    config["step"] = opts.step;
    config["tol"] = opts.tol;
    ordered_json report = base_report("gradcheck", opts.seed, std::move(config));
    report["result"]["layers"] = std::move(rows);
    report["result"]["max_rel_err"] = overall;
    report["result"]["pass"] = all_pass;
    write_json(opts.json_path, report);
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"clustered interpolative low-rank adapters"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from an INI/TOML file");
  app.set_version_flag("--version", std::string(kVersion));

  int rc = 0;

  CountOpts count_opts;
  auto* count_cmd = app.add_subcommand("count-params", "trainable parameter counts per method");
  count_cmd->add_option("--arch", count_opts.arch, "builtin architecture name or descriptor file")
      ->capture_default_str();
  count_cmd->add_option("--method", count_opts.method, "lora, dora, moelora, idlora or all")
      ->check(CLI::IsMember({"lora", "dora", "moelora", "idlora", "all"}))
      ->capture_default_str();
  count_cmd->add_option("--ranks", count_opts.ranks, "adapter ranks")
      ->delimiter(',')
      ->capture_default_str();
  count_cmd->add_option("--k", count_opts.k, "experts (moelora) / bases (idlora)")
      ->capture_default_str();
  count_cmd->add_option("--s", count_opts.s, "idlora output splits")->capture_default_str();
  count_cmd->add_option("--json", count_opts.json_path, "write a JSON report here");
  count_cmd->callback([&] { rc = run_count(count_opts); });

  GenOpts gen_opts;
  auto* gen_cmd = app.add_subcommand("gen-matrix", "write a random matrix file");
  gen_cmd->add_option("--rows", gen_opts.rows, "row count")->required();
  gen_cmd->add_option("--cols", gen_opts.cols, "column count")->required();
  gen_cmd->add_option("--clusters", gen_opts.clusters, "group rows around this many centers")
      ->capture_default_str();
  gen_cmd->add_option("--scale", gen_opts.scale, "entry (or center) scale")->capture_default_str();
  gen_cmd->add_option("--spread", gen_opts.spread, "within-group spread")->capture_default_str();
  gen_cmd->add_option("--seed", gen_opts.seed, "generator seed")->capture_default_str();
  gen_cmd->add_option("--out", gen_opts.out, "output path")->required();
  gen_cmd->callback([&] { rc = run_gen(gen_opts); });

  ClusterCmdOpts cluster_opts;
  auto* cluster_cmd = app.add_subcommand("cluster", "size-constrained k-means over matrix rows");
  cluster_cmd->add_option("--in", cluster_opts.in, "matrix file")->required();
  cluster_cmd->add_option("--k", cluster_opts.k, "cluster count")->required();
  cluster_cmd->add_option("--min-size", cluster_opts.min_size, "minimum cluster size")
      ->capture_default_str();
  cluster_cmd->add_option("--seed", cluster_opts.seed, "seeding")->capture_default_str();
  cluster_cmd->add_option("--max-iter", cluster_opts.max_iter, "iteration cap")
      ->capture_default_str();
  cluster_cmd->add_option("--tol", cluster_opts.tol, "convergence tolerance")
      ->capture_default_str();
  cluster_cmd->add_flag("--greedy", cluster_opts.greedy,
                        "greedy repair assignment instead of min-cost flow");
  cluster_cmd->add_option("--json", cluster_opts.json_path, "write a JSON report here");
  cluster_cmd->callback([&] { rc = run_cluster(cluster_opts); });

  BasisOpts basis_opts;
  auto* basis_cmd = app.add_subcommand("basis", "extract per-cluster basis rows from a matrix");
  basis_cmd->add_option("--in", basis_opts.in, "matrix file")->required();
  basis_cmd->add_option("--k", basis_opts.k, "cluster count")->required();
  basis_cmd->add_option("--r", basis_opts.r, "rows per basis")->required();
  basis_cmd->add_option("--seed", basis_opts.seed, "seeding")->capture_default_str();
  basis_cmd->add_flag("--greedy", basis_opts.greedy,
                      "greedy repair assignment instead of min-cost flow");
  basis_cmd->add_option("--out", basis_opts.out, "basis file to write");
  basis_cmd->add_option("--json", basis_opts.json_path, "write a JSON report here");
  basis_cmd->callback([&] { rc = run_basis(basis_opts); });

  Theorem1Opts t1_opts;
  auto* t1_cmd = app.add_subcommand(
      "verify-theorem1", "clustered vs global shared-factor reconstruction on planted ensembles");
  t1_cmd->add_option("--d1", t1_opts.d1, "task rows")->capture_default_str();
  t1_cmd->add_option("--d2", t1_opts.d2, "task cols")->capture_default_str();
  t1_cmd->add_option("--tasks", t1_opts.tasks, "tasks per ensemble")->capture_default_str();
  t1_cmd->add_option("--clusters", t1_opts.clusters, "planted clusters")->capture_default_str();
  t1_cmd->add_option("--intra-rank", t1_opts.intra_rank, "within-cluster deviation rank")
      ->capture_default_str();
  t1_cmd->add_option("--global-rank", t1_opts.global_rank, "planted shared factor rank")
      ->capture_default_str();
  t1_cmd->add_option("--noise", t1_opts.noise, "residual budget")->capture_default_str();
  t1_cmd->add_option("--center-scale", t1_opts.center_scale, "cluster center magnitude")
      ->capture_default_str();
  t1_cmd->add_option("--intra-scale", t1_opts.intra_scale, "within-cluster deviation magnitude")
      ->capture_default_str();
  t1_cmd->add_option("--k", t1_opts.k, "fit clusters (0 = planted count)")->capture_default_str();
  t1_cmd->add_option("--rank", t1_opts.rank, "fit factor rank (0 = planted global rank)")
      ->capture_default_str();
  t1_cmd->add_option("--ensembles", t1_opts.ensembles, "seeded ensembles to run")
      ->capture_default_str();
  t1_cmd->add_option("--seed", t1_opts.seed, "base seed")->capture_default_str();
  t1_cmd->add_option("--json", t1_opts.json_path, "write a JSON report here");
  t1_cmd->callback([&] { rc = run_theorem1(t1_opts); });

  Theorem2Opts t2_opts;
  auto* t2_cmd = app.add_subcommand(
      "verify-theorem2", "global vs cluster-local pivot stability for CUR reconstruction");
  t2_cmd->add_option("--d1", t2_opts.d1, "task rows")->capture_default_str();
  t2_cmd->add_option("--d2", t2_opts.d2, "task cols")->capture_default_str();
  t2_cmd->add_option("--tasks", t2_opts.tasks, "tasks per ensemble")->capture_default_str();
  t2_cmd->add_option("--clusters", t2_opts.clusters, "planted clusters")->capture_default_str();
  t2_cmd->add_option("--intra-rank", t2_opts.intra_rank, "within-cluster deviation rank")
      ->capture_default_str();
  t2_cmd->add_option("--global-rank", t2_opts.global_rank, "planted shared factor rank")
      ->capture_default_str();
  t2_cmd->add_option("--noise", t2_opts.noise, "residual budget")->capture_default_str();
  t2_cmd->add_option("--center-scale", t2_opts.center_scale, "cluster center magnitude")
      ->capture_default_str();
  t2_cmd->add_option("--intra-scale", t2_opts.intra_scale, "within-cluster deviation magnitude")
      ->capture_default_str();
  t2_cmd->add_flag("--rare,!--no-rare", t2_opts.rare,
                   "concentrate cluster 0 on its first --rare-cols columns");
  t2_cmd->add_option("--rare-cols", t2_opts.rare_cols, "columns carrying the rare cluster")
      ->capture_default_str();
  t2_cmd->add_option("--pivots", t2_opts.pivots, "pivots per axis")->capture_default_str();
  t2_cmd->add_option("--trials", t2_opts.trials, "pivot draws per ensemble")
      ->capture_default_str();
  t2_cmd->add_option("--ensembles", t2_opts.ensembles, "seeded ensembles to run")
      ->capture_default_str();
  t2_cmd->add_option("--seed", t2_opts.seed, "base seed")->capture_default_str();
  t2_cmd->add_option("--json", t2_opts.json_path, "write a JSON report here");
  t2_cmd->callback([&] { rc = run_theorem2(t2_opts); });

  TrainOpts train_opts;
  auto* train_cmd = app.add_subcommand("train", "fit an adapter on planted multi-task data");
  add_data_flags(train_cmd, train_opts.data);
  train_cmd->add_option("--method", train_opts.method, "adapter method")
      ->check(CLI::IsMember({"lora", "moelora", "idlora"}))
      ->capture_default_str();
  train_cmd->add_option("--r", train_opts.r, "adapter rank")->capture_default_str();
  train_cmd->add_option("--k", train_opts.k, "experts / bases")->capture_default_str();
  train_cmd->add_option("--s", train_opts.s, "idlora output splits")->capture_default_str();
  train_cmd->add_option("--alpha", train_opts.alpha, "update scale numerator (0 = 2r)")
      ->capture_default_str();
  train_cmd->add_option("--adapter-seed", train_opts.adapter_seed, "adapter init seed")
      ->capture_default_str();
  train_cmd->add_option("--init-scale", train_opts.init_scale,
                        "randomize trainable blocks at this scale before training (0 = keep "
                        "the method's zero init)")
      ->capture_default_str();
  train_cmd->add_option("--base", train_opts.base, "frozen base map")
      ->check(CLI::IsMember({"mean", "zero"}))
      ->capture_default_str();
  train_cmd->add_option("--optimizer", train_opts.optimizer, "optimizer")
      ->check(CLI::IsMember({"adam", "sgd", "als"}))
      ->capture_default_str();
  train_cmd->add_option("--lr", train_opts.lr, "learning rate")->capture_default_str();
  train_cmd->add_option("--steps", train_opts.steps, "optimization steps")->capture_default_str();
  train_cmd->add_option("--batch", train_opts.batch, "minibatch size (0 = full batch)")
      ->capture_default_str();
  train_cmd->add_option("--train-seed", train_opts.train_seed, "minibatch sampling seed")
      ->capture_default_str();
  train_cmd->add_option("--csv", train_opts.csv_path, "write the loss history CSV here");
  train_cmd->add_option("--json", train_opts.json_path, "write a JSON report here");
  train_cmd->add_option("--save-adapter", train_opts.save_adapter_path,
                        "write the trained adapter here");
  train_cmd->add_option("--save-w", train_opts.save_w_path, "write the frozen base map here");
  train_cmd->callback([&] { rc = run_train(train_opts); });

  EvalOpts eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved adapter on planted data");
  eval_cmd->add_option("--adapter", eval_opts.adapter_path, "adapter file")->required();
  eval_cmd->add_option("--w", eval_opts.w_path, "frozen base map file")->required();
  add_data_flags(eval_cmd, eval_opts.data);
  eval_cmd->add_option("--json", eval_opts.json_path, "write a JSON report here");
  eval_cmd->callback([&] { rc = run_eval(eval_opts); });

  GradOpts grad_opts;
  auto* grad_cmd =
      app.add_subcommand("gradcheck", "finite-difference check of the analytic gradients");
  grad_cmd->add_option("--method", grad_opts.method, "adapter method")
      ->check(CLI::IsMember({"lora", "moelora", "idlora"}))
      ->capture_default_str();
  grad_cmd->add_option("--d-in", grad_opts.d_in, "input width")->capture_default_str();
  grad_cmd->add_option("--d-out", grad_opts.d_out, "output width")->capture_default_str();
  grad_cmd->add_option("--r", grad_opts.r, "adapter rank")->capture_default_str();
  grad_cmd->add_option("--k", grad_opts.k, "experts / bases")->capture_default_str();
  grad_cmd->add_option("--s", grad_opts.s, "idlora output splits")->capture_default_str();
  grad_cmd->add_option("--alpha", grad_opts.alpha, "update scale numerator (0 = 2r)")
      ->capture_default_str();
  grad_cmd->add_option("--layers", grad_opts.layers, "random layers to check")
      ->capture_default_str();
  grad_cmd->add_option("--seed", grad_opts.seed, "base seed")->capture_default_str();
  grad_cmd->add_option("--step", grad_opts.step, "central difference step")
      ->capture_default_str();
  grad_cmd->add_option("--tol", grad_opts.tol, "relative error tolerance")
      ->capture_default_str();
  grad_cmd->add_option("--json", grad_opts.json_path, "write a JSON report here");
  grad_cmd->callback([&] { rc = run_gradcheck(grad_opts); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 3;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return rc;
}
