#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "acssm/config.hpp"

using namespace acssm;

namespace {

#ifndef ACSSM_CLI_PATH
#define ACSSM_CLI_PATH "./acssm"
#endif

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ACSSM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

const char* kTinyLg = R"([data]
generator = lg
n_sequences = 12
lg_dim = 1
lg_k = 4
lg_sigma = 1.0
lg_horizon = 2.0
seed = 7

[model]
latent_dim = 4
n_base = 2
n_blocks = 1

[train]
epochs = 2
batch_size = 4
seed = 7

[task]
task = interpolate
)";

}  // namespace

TEST_CASE("config round trip: parse -> serialize -> parse is idempotent") {
  RunConfig rc = RunConfig::parse_string(kTinyLg);
  const std::string s1 = rc.serialize();
  RunConfig rc2 = RunConfig::parse_string(s1);
  CHECK(rc2.serialize() == s1);
  CHECK(rc.data.generator == "lg");
  CHECK(rc.data.lg_k == 4);
  CHECK(rc.train.latent_dim == 4);
  CHECK(rc.task.task == Task::kInterpolate);
}

TEST_CASE("final_learning_rate parses and round-trips") {
  RunConfig rc = RunConfig::parse_string(
      "[train]\nlearning_rate = 0.003\nfinal_learning_rate = 0.0002\n");
  CHECK(rc.train.final_learning_rate == 0.0002);
  RunConfig rc2 = RunConfig::parse_string(rc.serialize());
  CHECK(rc2.train.final_learning_rate == 0.0002);
}

TEST_CASE("config rejects unknown keys, sections, and bad values") {
  CHECK_THROWS_AS(RunConfig::parse_string("[data]\nbogus_key = 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse_string("[nope]\nseed = 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse_string("seed = 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse_string("[train]\nepochs = abc\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse_string("[train]\nepochs = 0\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse_string("[task]\ntask = dance\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse_file("does_not_exist.cfg"), ConfigError);
}

TEST_CASE("config enforces cross-field constraints") {
  std::string bad = kTinyLg;
  bad += "\n[task]\ntask = extrapolate\n";  // needs extrapolate_from for lg
  CHECK_THROWS_AS(RunConfig::parse_string(bad), ConfigError);
  bad += "\n[data]\nextrapolate_from = 1.0\n";
  CHECK_NOTHROW(RunConfig::parse_string(bad));
}

TEST_CASE("canonical lg system is valid and seed-deterministic") {
  DataConfig dc;
  dc.generator = "lg";
  dc.lg_dim = 2;
  dc.lg_k = 5;
  dc.seed = 3;
  LinearGaussianSSM a = canonical_lg_system(dc);
  LinearGaussianSSM b = canonical_lg_system(dc);
  CHECK((a.op.basis().array() == b.op.basis().array()).all());
  CHECK(a.grid.n_times() == 5);
  CHECK_NOTHROW(a.validate());
}

TEST_CASE("cli exit codes: 2 on config errors, 1 on runtime errors, 0 on success") {
  write_file("tiny_lg.cfg", kTinyLg);
  write_file("broken.cfg", "[data]\nnot_a_key = 1\n");

  CHECK(run_cli("generate --config broken.cfg --out cli_out") == 2);
  CHECK(run_cli("generate --config missing.cfg --out cli_out") == 2);
  CHECK(run_cli("generate") == 2);  // missing required option
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("generate --config tiny_lg.cfg --out cli_out") == 0);
  CHECK(read_file("cli_out/train_inputs.csv").rfind("t,y0", 0) == 0);
  // runtime failure: checkpoint file does not exist
  CHECK(run_cli("infer --config tiny_lg.cfg --checkpoint nope.ckpt --out cli_out") == 1);
  std::remove("tiny_lg.cfg");
  std::remove("broken.cfg");
}

TEST_CASE("cli generate is byte-deterministic for a fixed seed") {
  write_file("tiny_lg2.cfg", kTinyLg);
  REQUIRE(run_cli("generate --config tiny_lg2.cfg --out cli_det_a") == 0);
  REQUIRE(run_cli("generate --config tiny_lg2.cfg --out cli_det_b") == 0);
  CHECK(read_file("cli_det_a/test_inputs.csv") == read_file("cli_det_b/test_inputs.csv"));
  CHECK(read_file("cli_det_a/train_targets.csv") ==
        read_file("cli_det_b/train_targets.csv"));
  std::remove("tiny_lg2.cfg");
}

TEST_CASE("cli bench emits the expected CSV and validates the scan") {
  CHECK(run_cli("bench --K 64,257 --d 4 --workers 1,2 --out cli_bench.csv") == 0);
  std::ifstream in("cli_bench.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "K,d,workers,sequential_ns,parallel_ns,combine_depth");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);
  std::remove("cli_bench.csv");
}

TEST_CASE("cli oracle passes on a tiny preset and fails under fault injection") {
  write_file("tiny_oracle.cfg", kTinyLg);
  CHECK(run_cli("oracle --config tiny_oracle.cfg --quick") == 0);
  CHECK(run_cli("oracle --config tiny_oracle.cfg --quick --corrupt-h") == 1);
  std::remove("tiny_oracle.cfg");
}
