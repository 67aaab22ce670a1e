// Acceptance gate: one line per criterion, nonzero exit if any fail.
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "idlora/idlora.hpp"

namespace {

using namespace idlora;
using Clock = std::chrono::steady_clock;

int failures = 0;

std::string strfmt(const char* format, ...) {
  char buf[768];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

void report(int index, const char* name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s -- %s\n", pass ? "PASS" : "FAIL", index, name,
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double elapsed_s(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * unit(rng);
  return m;
}

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = unit(rng);
  return v;
}

// --- criteria 1 and 2: full-model trainable counts over the rank grid ---

void check_count_table(int index, const char* name, AdapterMethod method,
                       const std::vector<std::uint64_t>& want,
                       const std::vector<std::string>& want_display) {
  const auto start = Clock::now();
  const ArchitectureDescriptor arch = find_architecture("llama3-8b");
  const std::vector<std::size_t> ranks{8, 16, 32, 64, 128};
  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    const std::uint64_t count = count_trainable(method, arch, ranks[i], 1, 1);
    const std::string display = format_millions(count);
    ok = ok && count == want[i] && display == want_display[i];
    detail += strfmt("%sr=%zu:%llu(%s)", i == 0 ? "" : " ", ranks[i],
                     static_cast<unsigned long long>(count), display.c_str());
  }
  const double secs = elapsed_s(start);
  ok = ok && secs < 1.0;
  report(index, name, ok, detail + strfmt(", %.3fs", secs));
}

void criterion_1() {
  check_count_table(1, "lora trainable counts, llama3-8b rank grid", AdapterMethod::lora,
                    {20971520ull, 41943040ull, 83886080ull, 167772160ull, 335544320ull},
                    {"21.0M", "41.9M", "83.9M", "167.8M", "335.5M"});
}

void criterion_2() {
  check_count_table(2, "dora trainable counts, llama3-8b rank grid", AdapterMethod::dora,
                    {22347776ull, 43319296ull, 85262336ull, 169148416ull, 336920576ull},
                    {"22.3M", "43.3M", "85.3M", "169.1M", "336.9M"});
}

// --- criterion 3: idlora per-site counts plus the coverage note ---

void criterion_3() {
  const std::uint64_t site_lora = count_trainable_site(AdapterMethod::lora, 4096, 4096, 8, 1, 1);
  const std::uint64_t site_id = count_trainable_site(AdapterMethod::idlora, 4096, 4096, 8, 4, 2);
  const ArchitectureDescriptor arch = find_architecture("llama3-8b");
  const std::uint64_t full_id = count_trainable(AdapterMethod::idlora, arch, 8, 4, 2);
  const std::string note = idlora_count_note();
  // The B/T tally lands far below the roughly 7.7M quoted elsewhere for this
  // configuration; the library documents the gap instead of reproducing it.
  const bool ok = site_lora == 65536ull && site_id == 8200ull && full_id == 2754304ull &&
                  !note.empty() && full_id < 7'700'000ull / 2;
  report(3, "idlora per-site counts and coverage note", ok,
         strfmt("site lora=%llu idlora=%llu, full model=%llu (%s) vs ~7.7M quoted elsewhere; "
                "note attached",
                static_cast<unsigned long long>(site_lora),
                static_cast<unsigned long long>(site_id),
                static_cast<unsigned long long>(full_id), format_millions(full_id).c_str()));
}

// --- criterion 4: clustered vs global shared-factor reconstruction ---

void criterion_4() {
  const auto start = Clock::now();
  struct Shape {
    std::size_t d1, d2, tasks, clusters, intra_rank, count;
  };
  const std::vector<Shape> shapes{
      {32, 24, 12, 3, 1, 34}, {48, 32, 18, 3, 2, 33}, {64, 24, 24, 4, 1, 33}};
  std::size_t hold = 0, total = 0;
  bool floor_ok = true;
  std::size_t separated = 0, strict = 0;
  for (std::size_t c = 0; c < shapes.size(); ++c) {
    const Shape& sh = shapes[c];
    EnsembleConfig cfg;
    cfg.d1 = sh.d1;
    cfg.d2 = sh.d2;
    cfg.tasks = sh.tasks;
    cfg.clusters = sh.clusters;
    cfg.intra_rank = sh.intra_rank;
    cfg.global_rank = 8;
    cfg.center_scale = 4.0;
    cfg.intra_scale = 0.2;
    for (std::size_t i = 0; i < sh.count; ++i) {
      const std::uint64_t seed = 1000 * c + i;
      const TaskEnsemble e = generate_ensemble(cfg, seed);
      const ReconstructionReport rep = verify_theorem1(e, cfg.clusters, 8, 8, seed);
      ++total;
      hold += rep.inequality_holds ? 1 : 0;
      floor_ok = floor_ok && rep.delta >= -1e-9;
      if (rep.separation >= 10.0 * rep.intra_spread) {
        ++separated;
        strict += rep.delta > 1e-6 ? 1 : 0;
      }
    }
  }
  const double secs = elapsed_s(start);
  const bool ok = total == 100 && hold == total && floor_ok && strict == separated && secs < 120.0;
  report(4, "clustered vs global reconstruction on planted ensembles", ok,
         strfmt("hold=%zu/%zu, delta floor ok=%d, strict=%zu/%zu separated, %.1fs", hold, total,
                floor_ok ? 1 : 0, strict, separated, secs));
}

// --- criterion 5: pivot stability on a rare-direction ensemble ---

void criterion_5() {
  const auto start = Clock::now();
  EnsembleConfig cfg;
  cfg.rare_cluster = true;
  const TaskEnsemble e = generate_ensemble(cfg, 1);
  const PivotStudyReport rep = pivot_stability_study(e, 4, 500, 1);
  const double secs = elapsed_s(start);
  const bool ok = rep.trials == 500 && rep.mean_global >= rep.mean_local && rep.ci_low > 0.0 &&
                  secs < 300.0;
  report(5, "cluster-local pivots beat uniform global pivots", ok,
         strfmt("trials=%zu mean_global=%.4g mean_local=%.4g ci=[%.4g, %.4g] "
                "bad_pivot_fraction=%.3f, %.1fs",
                rep.trials, rep.mean_global, rep.mean_local, rep.ci_low, rep.ci_high,
                rep.bad_pivot_fraction, secs));
}

// --- criterion 6: analytic gradients vs tight central differences ---

void criterion_6() {
  const auto start = Clock::now();
  const double step = 1e-6;
  const double tol = 1e-5;
  bool all_pass = true;
  double worst = 0.0;
  const char* methods[] = {"idlora", "lora", "moelora"};
  for (int m = 0; m < 3; ++m) {
    std::mt19937_64 master(11 + m);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (int layer = 0; layer < 10; ++layer) {
      const std::uint64_t build_seed = master();
      const std::uint64_t block_seed = master();
      Matrix w(12, 12);
      for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = unit(master) / std::sqrt(12.0);
      Adapter adapter = m == 0   ? Adapter(build_idlora(std::move(w), 4, 2, 2, 8.0, build_seed))
                        : m == 1 ? Adapter(build_lora(std::move(w), 4, 8.0, build_seed))
                                 : Adapter(build_moelora(std::move(w), 4, 2, 8.0, build_seed));
      randomize_trainable(adapter, block_seed);
      std::vector<double> h(12), upstream(12);
      for (double& v : h) v = unit(master);
      for (double& v : upstream) v = unit(master);
      const GradCheckReport rep = finite_diff_check(adapter, h, upstream, step, tol);
      all_pass = all_pass && rep.pass;
      worst = std::max(worst, rep.max_rel_err);
    }
  }
  const double secs = elapsed_s(start);
  const bool ok = all_pass && worst < tol && secs < 60.0;
  report(6, "analytic gradients match central differences at step 1e-6", ok,
         strfmt("30 layers (10 per method: %s/%s/%s), max_rel_err=%.3e < %.0e, %.1fs", methods[0],
                methods[1], methods[2], worst, tol, secs));
}

// --- criterion 7: zero-initialized adapters are exact identities ---

void criterion_7() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix w = random_matrix(12, 10, 40 + seed, 0.5);
    const std::vector<double> h = random_vector(10, 70 + seed);
    const std::vector<double> base = matvec(w, h);
    const Adapter adapters[] = {Adapter(build_lora(w, 4, 8.0, seed)),
                                Adapter(build_moelora(w, 4, 2, 8.0, seed)),
                                Adapter(build_idlora(w, 4, 2, 2, 8.0, seed))};
    for (const Adapter& adapter : adapters) {
      const std::vector<double> out = adapter_forward(adapter, h);
      for (std::size_t i = 0; i < out.size(); ++i) {
        worst = std::max(worst, std::abs(out[i] - base[i]));
      }
    }
  }
  report(7, "zero-initialized adapters reproduce the base map", worst == 0.0,
         strfmt("max abs deviation over 5 draws x 3 methods = %g", worst));
}

// --- criterion 8: assembled idlora updates climb past a single adapter's rank ---

// The shared core B caps the assembled operator: every per-basis block stacks
// s copies of B, so any mixture has rank <= s*rank(B) <= r (the k*r bound is
// loose). The chunked mixture still multiplies the core rank by s, so the
// boost to verify is rank > rank(B) = r/s, generically equal to r itself.
void criterion_8() {
  bool within = true;
  std::size_t boosted = 0;
  std::size_t min_rank = 64, max_rank = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix w = random_matrix(64, 64, 100 + seed, 1.0);
    Adapter adapter = build_idlora(w, 8, 4, 2, 16.0, seed);
    randomize_trainable(adapter, 500 + seed);
    const IdLoraLayer& layer = std::get<IdLoraLayer>(adapter);
    const std::vector<double> weights(4, 1.0);
    const std::size_t rank = numerical_rank(assemble_operator(layer, weights));
    within = within && rank <= 8;
    boosted += rank >= 5 ? 1 : 0;
    min_rank = std::min(min_rank, rank);
    max_rank = std::max(max_rank, rank);
  }
  bool lora_ok = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix w = random_matrix(64, 64, 200 + seed, 1.0);
    Adapter adapter = build_lora(w, 8, 16.0, seed);
    randomize_trainable(adapter, 600 + seed);
    const LoraLayer& layer = std::get<LoraLayer>(adapter);
    const Matrix delta = scaled(matmul(layer.b, layer.a), 16.0 / 8.0);
    lora_ok = lora_ok && numerical_rank(delta) <= 8;
  }
  const bool ok = within && boosted >= 18 && lora_ok;
  report(8, "idlora update rank clears the core rank r/s within the s*rank(B) cap", ok,
         strfmt("20 instances (k=4, r=8, s=2, d=64): ranks in [%zu, %zu], all <= s*rank(B) = 8, "
                "rank > r/s = 4 on %zu/20; lora delta rank <= 8 on 10/10=%d",
                min_rank, max_rank, boosted, lora_ok ? 1 : 0));
}

// --- criterion 9: interpolative and cur reconstructions on constructed instances ---

void criterion_9() {
  std::size_t mid_ok = 0, cur_ok = 0;
  const std::size_t instances = 50;
  for (std::uint64_t seed = 0; seed < instances; ++seed) {
    const Matrix w = random_matrix(10, 8, 300 + seed, 1.0);
    const PivotSet pivots = sample_pivots_uniform(10, 3, seed);
    const Matrix mix = random_matrix(12, 3, 400 + seed, 1.0);
    const Matrix delta = matmul(mix, take_rows(w, pivots.indices));
    if (mid_fit(w, pivots, delta).residual < 1e-8) ++mid_ok;

    const std::size_t r = 1 + seed % 3;
    const Matrix low = matmul(random_matrix(9, r, 500 + seed, 1.0),
                              random_matrix(r, 7, 600 + seed, 1.0));
    PivotSet rows, cols;
    for (std::uint64_t attempt = 0; attempt < 50; ++attempt) {
      rows = sample_pivots_uniform(9, r, 2 * seed + attempt, PivotAxis::rows);
      cols = sample_pivots_uniform(7, r, 3 * seed + attempt, PivotAxis::cols);
      if (numerical_rank(take_cols(take_rows(low, rows.indices), cols.indices)) == r) break;
    }
    if (cur_decompose(low, rows, cols).residual < 1e-8) ++cur_ok;
  }
  const bool ok = mid_ok == instances && cur_ok == instances;
  report(9, "skeleton fits are exact on constructed instances", ok,
         strfmt("interpolative %zu/%zu, cur %zu/%zu below 1e-8", mid_ok, instances, cur_ok,
                instances));
}

// --- criterion 10: matched-budget training comparison ---

void criterion_10() {
  const auto start = Clock::now();
  MultitaskConfig mc;
  mc.d_in = 32;
  mc.d_out = 32;
  mc.tasks = 6;
  mc.clusters = 3;
  mc.intra_rank = 1;
  mc.global_rank = 6;
  mc.center_scale = 2.0;
  mc.intra_scale = 0.0;
  mc.samples_per_task = 64;
  mc.input_mode = InputMode::cluster_aligned;
  mc.input_shift = 4.0;

  TrainConfig tc;
  tc.optimizer = OptimizerKind::als;
  tc.steps = 60;
  tc.batch = 0;

  bool ok = true;
  std::uint64_t lora_params = 0, id_params = 0;
  std::string ratios;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const SyntheticTaskSet data = make_multitask_data(mc, seed);
    Matrix base(mc.d_out, mc.d_in);
    for (const Matrix& task : data.task_w) {
      for (std::size_t i = 0; i < base.size(); ++i) base.data()[i] += task.data()[i];
    }
    for (std::size_t i = 0; i < base.size(); ++i) base.data()[i] /= double(data.task_w.size());
    tc.seed = seed;

    Adapter lora = build_lora(base, 4, 8.0, 7);
    const TrainResult lora_fit = train(lora, data, tc);
    const double lora_mse = evaluate(lora, data).mean_mse;
    lora_params = trainable_parameter_count(lora);

    Adapter id = build_idlora(base, 4, 4, 1, 8.0, 7);
    const TrainResult id_fit = train(id, data, tc);
    const double id_mse = evaluate(id, data).mean_mse;
    id_params = trainable_parameter_count(id);

    ok = ok && id_mse <= 1.05 * lora_mse;
    ratios += strfmt(" seed%llu=%.3f", static_cast<unsigned long long>(seed),
                     id_mse / lora_mse);

    std::ofstream lora_csv(strfmt("acceptance_budget_lora_seed%llu.csv",
                                  static_cast<unsigned long long>(seed)));
    write_loss_history_csv(lora_csv, lora_fit, seed, AdapterMethod::lora, lora_params);
    std::ofstream id_csv(strfmt("acceptance_budget_idlora_seed%llu.csv",
                                static_cast<unsigned long long>(seed)));
    write_loss_history_csv(id_csv, id_fit, seed, AdapterMethod::idlora, id_params);
  }
  ok = ok && id_params * 100 <= lora_params * 55;

  // The emitted histories must carry the parameter budgets.
  std::ifstream check("acceptance_budget_idlora_seed1.csv");
  std::string header, row;
  const bool header_ok = static_cast<bool>(std::getline(check, header)) &&
                         header == "step,loss,seed,method,trainable_params";
  bool rows_ok = static_cast<bool>(std::getline(check, row));
  rows_ok = rows_ok && row.find(",idlora,132") != std::string::npos;
  ok = ok && header_ok && rows_ok;

  const double secs = elapsed_s(start);
  report(10, "idlora at ~52% of the lora budget matches lora's final mse", ok,
         strfmt("params %llu vs %llu, mse ratios%s (gate 1.05), histories emitted, %.1fs",
                static_cast<unsigned long long>(id_params),
                static_cast<unsigned long long>(lora_params), ratios.c_str(), secs));
}

// --- criterion 11: serialized adapter storage ---

void criterion_11() {
  const auto start = Clock::now();
  const Matrix w = random_matrix(4096, 4096, 77, 1.0 / 64.0);
  ClusterOptions copts;
  copts.max_iter = 10;
  copts.flow_assignment = false;  // byte sizes do not depend on the assignment path

  const auto serialized_bytes = [&](AdapterMethod method) -> std::size_t {
    Matrix copy = w;
    Adapter adapter = method == AdapterMethod::lora
                          ? Adapter(build_lora(std::move(copy), 32, 64.0, 3))
                      : method == AdapterMethod::moelora
                          ? Adapter(build_moelora(std::move(copy), 32, 4, 64.0, 3))
                          : Adapter(build_idlora(std::move(copy), 32, 4, 2, 64.0, 3, copts));
    std::ostringstream out;
    write_adapter(out, adapter);
    return out.str().size();
  };

  const std::size_t id_bytes = serialized_bytes(AdapterMethod::idlora);
  const std::size_t lora_bytes = serialized_bytes(AdapterMethod::lora);
  const std::size_t moe_bytes = serialized_bytes(AdapterMethod::moelora);
  const double vs_lora = double(id_bytes) / double(lora_bytes);
  const double vs_moe = double(id_bytes) / double(moe_bytes);
  const double secs = elapsed_s(start);
  const bool ok = vs_lora <= 0.55 && vs_moe <= 0.15;
  report(11, "idlora adapter files stay far below the alternatives", ok,
         strfmt("d=4096 r=32: idlora=%zuB lora=%zuB moelora=%zuB, ratios %.3f (<=0.55) and "
                "%.3f (<=0.15), %.1fs",
                id_bytes, lora_bytes, moe_bytes, vs_lora, vs_moe, secs));
}

template <typename F>
void guarded(int index, const char* name, F f) {
  try {
    f();
  } catch (const std::exception& e) {
    report(index, name, false, strfmt("unhandled exception: %s", e.what()));
  }
}

}  // namespace

int main() {
  std::printf("acceptance checks\n");
  guarded(1, "lora trainable counts, llama3-8b rank grid", criterion_1);
  guarded(2, "dora trainable counts, llama3-8b rank grid", criterion_2);
  guarded(3, "idlora per-site counts and coverage note", criterion_3);
  guarded(4, "clustered vs global reconstruction on planted ensembles", criterion_4);
  guarded(5, "cluster-local pivots beat uniform global pivots", criterion_5);
  guarded(6, "analytic gradients match central differences at step 1e-6", criterion_6);
  guarded(7, "zero-initialized adapters reproduce the base map", criterion_7);
  guarded(8, "idlora update rank clears the core rank r/s within the s*rank(B) cap", criterion_8);
  guarded(9, "skeleton fits are exact on constructed instances", criterion_9);
  guarded(10, "idlora at ~52% of the lora budget matches lora's final mse", criterion_10);
  guarded(11, "idlora adapter files stay far below the alternatives", criterion_11);
  std::printf("%d/11 criteria passed\n", 11 - failures);
  return failures == 0 ? 0 : 1;
}
