#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "idlora/clustering.hpp"
#include "idlora/matrix.hpp"
#include "idlora/serialization.hpp"

using nlohmann::json;

namespace {

namespace fs = std::filesystem;

const fs::path& work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "idlora-cli-tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (work_dir() / name).string(); }

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  const std::string capture = path("capture.txt");
  const std::string cmd = std::string(IDLORA_CLI_PATH) + " " + args + " > " + capture + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult result;
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(capture);
  std::ostringstream buf;
  buf << in.rdbuf();
  result.out = buf.str();
  return result;
}

std::string read_file(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json read_json(const std::string& p) { return json::parse(read_file(p)); }

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("--version exits cleanly") {
  const CliResult r = run_cli("--version");
  CHECK(r.code == 0);
  CHECK_FALSE(r.out.empty());
}

TEST_CASE("count-params reproduces the published per-rank counts") {
  const CliResult lora = run_cli("count-params --arch llama3-8b --method lora --ranks 8");
  CHECK(lora.code == 0);
  CHECK(contains(lora.out, "20,971,520"));
  CHECK(contains(lora.out, "21.0M"));

  const CliResult dora = run_cli("count-params --arch llama3-8b --method dora --ranks 16");
  CHECK(dora.code == 0);
  CHECK(contains(dora.out, "43,319,296"));
  CHECK(contains(dora.out, "43.3M"));
}

TEST_CASE("count-params annotates the non-derivable published counts") {
  const std::string report = path("count.json");
  const CliResult r = run_cli("count-params --arch llama3-8b --method idlora --ranks 8 --k 4 --s 2 --json " + report);
  CHECK(r.code == 0);
  CHECK(contains(r.out, "2,754,304"));
  CHECK(contains(r.out, "note:"));
  const json j = read_json(report);
  CHECK(j["result"]["rows"][0]["trainable"].get<std::uint64_t>() == 2754304u);
  CHECK_FALSE(j["result"]["idlora_note"].get<std::string>().empty());
}

TEST_CASE("count-params rejects unknown architectures with the config exit code") {
  const CliResult r = run_cli("count-params --arch gpt-5 --method lora --ranks 8");
  CHECK(r.code == 3);
  CHECK(contains(r.out, "error:"));
}

TEST_CASE("gen-matrix is deterministic per seed") {
  const std::string a = path("gen_a.idlm");
  const std::string b = path("gen_b.idlm");
  const CliResult r1 = run_cli("gen-matrix --rows 12 --cols 3 --clusters 3 --seed 5 --out " + a);
  const CliResult r2 = run_cli("gen-matrix --rows 12 --cols 3 --clusters 3 --seed 5 --out " + b);
  CHECK(r1.code == 0);
  CHECK(r2.code == 0);
  CHECK(contains(r1.out, "wrote 12x3 matrix"));
  CHECK(read_file(a) == read_file(b));
}

TEST_CASE("cluster reports groups and writes byte-stable JSON") {
  const std::string pts = path("points.idlm");
  REQUIRE(run_cli("gen-matrix --rows 12 --cols 3 --clusters 3 --spread 0.05 --seed 5 --out " + pts).code == 0);

  const std::string ja = path("cluster_a.json");
  const std::string jb = path("cluster_b.json");
  const std::string base = "cluster --in " + pts + " --k 3 --min-size 2 --seed 2 --json ";
  const CliResult r1 = run_cli(base + ja);
  const CliResult r2 = run_cli(base + jb);
  CHECK(r1.code == 0);
  CHECK(r2.code == 0);
  CHECK(contains(r1.out, "clustered 12 points into 3 groups"));
  CHECK(read_file(ja) == read_file(jb));

  const json j = read_json(ja);
  std::size_t total = 0;
  for (const auto& size : j["result"]["sizes"]) {
    CHECK(size.get<std::size_t>() >= 2);
    total += size.get<std::size_t>();
  }
  CHECK(total == 12);
  CHECK(j["result"]["assignments"].size() == 12);
}

TEST_CASE("cluster on a corrupt matrix file exits with the format code") {
  const std::string junk = path("junk.idlm");
  std::ofstream(junk, std::ios::binary) << "JUNKJUNKJUNKJUNK";
  const CliResult r = run_cli("cluster --in " + junk + " --k 2");
  CHECK(r.code == 2);
  CHECK(contains(r.out, "error:"));
}

TEST_CASE("basis on the identity picks four disjoint rows, deterministically") {
  const std::string id = path("identity.idlm");
  idlora::save_matrix(id, idlora::Matrix::identity(8));

  const std::string ja = path("basis_a.json");
  const std::string jb = path("basis_b.json");
  const std::string out = path("basis.idlb");
  const std::string base = "basis --in " + id + " --k 2 --r 2 --seed 0 --out " + out + " --json ";
  const CliResult r1 = run_cli(base + ja);
  const CliResult r2 = run_cli(base + jb);
  CHECK(r1.code == 0);
  CHECK(r2.code == 0);
  CHECK(read_file(ja) == read_file(jb));

  const json j = read_json(ja);
  const auto& groups = j["result"]["row_indices"];
  REQUIRE(groups.size() == 2);
  std::set<std::size_t> seen;
  for (const auto& group : groups) {
    REQUIRE(group.size() == 2);
    for (const auto& idx : group) {
      const auto v = idx.get<std::size_t>();
      CHECK(v < 8);
      seen.insert(v);
    }
  }
  CHECK(seen.size() == 4);

  const idlora::BasisSet basis = idlora::load_basis_set(out);
  CHECK(basis.k == 2);
  CHECK(basis.r == 2);
}

TEST_CASE("basis with one cluster keeps the rows nearest the mean") {
  idlora::Matrix m = idlora::Matrix::from_data(
      5, 2, {1.0, 0.0, -1.0, 0.0, 9.0, 9.0, -9.0, 9.0, 0.0, -18.0});
  const std::string p = path("nearmean.idlm");
  idlora::save_matrix(p, m);
  const std::string report = path("nearmean.json");
  const CliResult r = run_cli("basis --in " + p + " --k 1 --r 2 --seed 0 --json " + report);
  CHECK(r.code == 0);
  const json j = read_json(report);
  const auto rows = j["result"]["row_indices"][0].get<std::vector<std::size_t>>();
  CHECK(rows == std::vector<std::size_t>{0, 1});
}

TEST_CASE("verify-theorem1 passes on a small planted family") {
  const CliResult r = run_cli(
      "verify-theorem1 --d1 12 --d2 10 --tasks 6 --clusters 2 --intra-rank 1 "
      "--global-rank 4 --intra-scale 0.1 --ensembles 5 --seed 1");
  CHECK(r.code == 0);
  CHECK(contains(r.out, "hold=5"));
  CHECK(contains(r.out, "PASS"));
}

TEST_CASE("verify-theorem1 reports delta zero for a single cluster") {
  const std::string report = path("t1_single.json");
  const CliResult r = run_cli(
      "verify-theorem1 --d1 10 --d2 8 --tasks 4 --clusters 1 --intra-rank 1 "
      "--global-rank 3 --k 1 --rank 2 --ensembles 3 --seed 1 --json " + report);
  CHECK(r.code == 0);
  const json j = read_json(report);
  for (const auto& row : j["result"]["ensembles"]) {
    CHECK(row["delta"].get<double>() == 0.0);
    CHECK(row["inequality_holds"].get<bool>());
  }
}

TEST_CASE("verify-theorem2 passes on a rare-direction ensemble") {
  const CliResult r = run_cli(
      "verify-theorem2 --d1 12 --d2 10 --tasks 6 --clusters 2 --intra-rank 1 "
      "--global-rank 4 --intra-scale 0 --rare --rare-cols 2 --pivots 2 --trials 60 --seed 1");
  CHECK(r.code == 0);
  CHECK(contains(r.out, "PASS"));
  CHECK(contains(r.out, "ci=["));
}

TEST_CASE("verify-theorem2 rejects zero trials with the parameter exit code") {
  const CliResult r = run_cli(
      "verify-theorem2 --d1 12 --d2 10 --tasks 6 --clusters 2 --intra-rank 1 "
      "--global-rank 4 --pivots 2 --trials 0");
  CHECK(r.code == 3);
  CHECK(contains(r.out, "error:"));
}

TEST_CASE("train with a zero learning rate leaves the loss flat") {
  const std::string csv = path("flat.csv");
  const CliResult r = run_cli(
      "train --method lora --r 2 --optimizer sgd --lr 0 --steps 5 --d-in 6 --d-out 6 "
      "--tasks 2 --clusters 1 --global-rank 2 --samples 8 --init-scale 0.5 --csv " + csv);
  CHECK(r.code == 0);
  CHECK(contains(r.out, "method=lora"));

  std::ifstream in(csv);
  std::string header;
  REQUIRE(std::getline(in, header));
  CHECK(header == "step,loss,seed,method,trainable_params");
  std::string line;
  std::string first_loss;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    const std::size_t a = line.find(',');
    const std::size_t b = line.find(',', a + 1);
    const std::string loss = line.substr(a + 1, b - a - 1);
    if (rows == 0) first_loss = loss;
    CHECK(loss == first_loss);
    CHECK(contains(line, ",lora,"));
    ++rows;
  }
  CHECK(rows >= 2);
}

TEST_CASE("a trained adapter round-trips through eval") {
  const std::string data_flags =
      " --d-in 8 --d-out 8 --tasks 4 --clusters 2 --intra-rank 1 --global-rank 4 "
      "--samples 16 --data-seed 1";
  const std::string adapter = path("fit.idla");
  const std::string w = path("fit_w.idlm");
  const std::string train_json = path("fit_train.json");
  const std::string eval_json = path("fit_eval.json");

  const CliResult t = run_cli(
      "train --method idlora --r 4 --k 2 --s 1 --optimizer als --steps 10" + data_flags +
      " --save-adapter " + adapter + " --save-w " + w + " --json " + train_json);
  CHECK(t.code == 0);
  CHECK(contains(t.out, "trainable_params="));

  const CliResult e = run_cli("eval --adapter " + adapter + " --w " + w + data_flags +
                              " --json " + eval_json);
  CHECK(e.code == 0);
  CHECK(contains(e.out, "mean_mse="));

  const double trained = read_json(train_json)["result"]["mean_mse"].get<double>();
  const double evaled = read_json(eval_json)["result"]["mean_mse"].get<double>();
  CHECK(evaled == doctest::Approx(trained).epsilon(1e-12));
}

TEST_CASE("gradcheck passes for every method at the default tolerance") {
  CHECK(run_cli("gradcheck --layers 3 --seed 4").code == 0);
  CHECK(run_cli("gradcheck --method lora --layers 3 --seed 4").code == 0);
  const CliResult moe = run_cli("gradcheck --method moelora --layers 3 --seed 4");
  CHECK(moe.code == 0);
  CHECK(contains(moe.out, "-> PASS"));
}

TEST_CASE("parse failures use the usage exit code") {
  CHECK(run_cli("cluster").code == 3);            // missing required options
  CHECK(run_cli("no-such-command").code == 3);    // unknown subcommand
  CHECK(run_cli("train --optimizer warp").code == 3);
}
