#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "fedsim/cli.hpp"
#include "fedsim/error.hpp"
#include "fedsim/format.hpp"
#include "fixture.hpp"

using namespace fedsim;
namespace fs = std::filesystem;

namespace {

const char* kSmall =
    "rounds = 3\n"
    "num_clients = 10\n"
    "data.train_per_class = 120\n"
    "data.test_per_class = 30\n"
    "model.hidden1 = 10\n"
    "model.hidden2 = 10\n";

struct Cli {
  std::ostringstream out;
  std::ostringstream err;
  int code = -1;

  explicit Cli(const std::vector<std::string>& args) { code = cli_main(args, out, err); }
};

std::string write_config(const std::string& dir, const std::string& extra) {
  const std::string path = dir + "/exp.cfg";
  std::ofstream(path) << kSmall << extra;
  return path;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("run writes one row per seed and round, reproducibly") {
  const std::string dir = testing::scratch_dir("cli_run");
  const std::string cfg = write_config(dir, "seeds = 1,2\n");
  ::setenv("FEDSIM_THREADS", "2", 1);
  const Cli first({"run", "--config", cfg, "--out", dir + "/a"});
  const Cli second({"run", "--config", cfg, "--out", dir + "/b"});
  ::unsetenv("FEDSIM_THREADS");
  REQUIRE_MESSAGE(first.code == kExitOk, first.err.str());
  REQUIRE(second.code == kExitOk);

  const CsvTable table = read_csv(dir + "/a/rounds.csv");
  CHECK(table.rows.size() == 6);
  CHECK(table.header.front() == "seed");
  CHECK(table.number(5, "seed") == 2.0);
  CHECK(table.number(5, "round") == 2.0);
  CHECK(slurp(dir + "/a/rounds.csv") == slurp(dir + "/b/rounds.csv"));

  const auto summary = nlohmann::json::parse(slurp(dir + "/a/summary.json"));
  CHECK(summary["seeds"].size() == 2);
  CHECK(summary["schema_version"] == kRoundsSchemaVersion);

  // The resolved config reproduces the run on its own.
  const Cli rerun({"run", "--config", dir + "/a/config_resolved.json", "--out", dir + "/c"});
  REQUIRE_MESSAGE(rerun.code == kExitOk, rerun.err.str());
  CHECK(slurp(dir + "/a/rounds.csv") == slurp(dir + "/c/rounds.csv"));
}

TEST_CASE("the seeds option overrides the config") {
  const std::string dir = testing::scratch_dir("cli_seeds");
  const Cli c({"run", "--config", write_config(dir, ""), "--out", dir + "/o", "--seeds", "4,5,6"});
  REQUIRE(c.code == kExitOk);
  CHECK(read_csv(dir + "/o/rounds.csv").rows.size() == 9);
}

TEST_CASE("sweep runs one experiment per value") {
  const std::string dir = testing::scratch_dir("cli_sweep");
  const std::string cfg = write_config(dir, "");
  const Cli c({"sweep", "--config", cfg, "--out", dir + "/s", "--axis", "beta", "--values",
               "0.1,0.5,1,5"});
  REQUIRE_MESSAGE(c.code == kExitOk, c.err.str());
  const CsvTable summary = read_csv(dir + "/s/sweep_summary.csv");
  CHECK(summary.rows.size() == 4);
  for (const auto& row : summary.rows) {
    CHECK(fs::exists(dir + "/s/" + row[summary.column("dir")] + "/rounds.csv"));
  }
  CHECK(Cli({"sweep", "--config", cfg, "--out", dir + "/e", "--axis", "beta", "--values", ""})
            .code == kExitConfig);
  CHECK(Cli({"sweep", "--config", cfg, "--out", dir + "/u", "--axis", "nope", "--values", "1"})
            .code == kExitConfig);
}

TEST_CASE("analyze surface writes the full grid") {
  const std::string dir = testing::scratch_dir("cli_surface");
  const std::string cfg = write_config(dir, "analysis.grid_steps = 3\n");
  const Cli c({"analyze", "--kind", "surface", "--config", cfg, "--out", dir + "/o"});
  REQUIRE_MESSAGE(c.code == kExitOk, c.err.str());
  const CsvTable t = read_csv(dir + "/o/surface.csv");
  CHECK(t.rows.size() == 9);
  CHECK(t.header == std::vector<std::string>{"a", "b", "accuracy"});
}

TEST_CASE("analyze similarity on an attack-free unweighted run shows equal similarities") {
  const std::string dir = testing::scratch_dir("cli_similarity");
  const std::string cfg =
      write_config(dir, "attacker_ratio = 0\naggregator.fedavg_weighted = false\n");
  const Cli c({"analyze", "--kind", "similarity", "--config", cfg, "--out", dir + "/o"});
  REQUIRE_MESSAGE(c.code == kExitOk, c.err.str());
  const CsvTable t = read_csv(dir + "/o/similarity.csv");
  REQUIRE(t.rows.size() == 3);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    CHECK(t.number(r, "clean_sim") == t.number(r, "corrupted_sim"));
  }
}

TEST_CASE("analyze recall sees a far STAT-OPT attacker excluded by norm bound") {
  const std::string dir = testing::scratch_dir("cli_recall");
  const std::string cfg = write_config(
      dir, "attack.kind = stat_opt\nattack.stat_gamma = 1000\naggregator.kind = norm_bound\n");
  REQUIRE(Cli({"run", "--config", cfg, "--out", dir + "/o"}).code == kExitOk);
  const Cli c({"analyze", "--kind", "recall", "--out", dir + "/o"});
  REQUIRE_MESSAGE(c.code == kExitOk, c.err.str());
  const CsvTable t = read_csv(dir + "/o/recall.csv");
  REQUIRE_FALSE(t.rows.empty());
  const CsvTable rounds = read_csv(dir + "/o/rounds.csv");
  for (std::size_t r = 0; r < rounds.rows.size(); ++r) {
    if (rounds.number(r, "malicious_sampled") > 0) {
      CHECK(rounds.number(r, "detection_recall") == 1.0);
    }
  }
}

TEST_CASE("oracle subcommand exit codes") {
  CHECK(Cli({"oracle", "attacks"}).code == kExitOk);
  CHECK(Cli({"oracle", "--kind", "aggregators"}).code == kExitOk);
  CHECK(Cli({"oracle", "nonsense"}).code == kExitConfig);
}

TEST_CASE("configuration and I/O failures map to exit codes") {
  const std::string dir = testing::scratch_dir("cli_errors");
  CHECK(Cli({"run", "--config", dir + "/missing.cfg", "--out", dir + "/o"}).code == kExitIo);
  std::ofstream(dir + "/bad.cfg") << "rounds = 3\nnot_a_key = 1\n";
  const Cli bad({"run", "--config", dir + "/bad.cfg", "--out", dir + "/o"});
  CHECK(bad.code == kExitConfig);
  CHECK(bad.err.str().find("bad.cfg:2") != std::string::npos);
  std::ofstream(dir + "/range.cfg") << "beta = -1\n";
  CHECK(Cli({"run", "--config", dir + "/range.cfg", "--out", dir + "/o"}).code == kExitConfig);
  std::ofstream(dir + "/blocker") << "x";
  const std::string cfg = write_config(dir, "");
  CHECK(Cli({"run", "--config", cfg, "--out", dir + "/blocker/sub"}).code == kExitIo);
  CHECK(Cli({"frobnicate"}).code == kExitConfig);

  ::setenv("FEDSIM_THREADS", "many", 1);
  CHECK(Cli({"run", "--config", cfg, "--out", dir + "/t"}).code == kExitConfig);
  ::unsetenv("FEDSIM_THREADS");
}

TEST_CASE("thread count from the environment") {
  ::setenv("FEDSIM_THREADS", "3", 1);
  CHECK(threads_from_env() == 3);
  ::setenv("FEDSIM_THREADS", "0", 1);
  CHECK(threads_from_env() == 0);
  ::setenv("FEDSIM_THREADS", "-2", 1);
  CHECK_THROWS_AS(threads_from_env(), ConfigError);
  ::unsetenv("FEDSIM_THREADS");
  CHECK(threads_from_env() >= 1);
}

TEST_CASE("number formatting is round-trippable") {
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(format_double(-2.5e-7) == "-2.4999999999999999e-07");
  CHECK(format_double(NAN) == "nan");
  for (double v : {0.1, 1.0 / 3.0, 123456.789, -1e-300}) {
    CHECK(std::stod(format_double(v)) == v);
  }
}

}  // TEST_SUITE
