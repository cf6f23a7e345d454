#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/cli.hpp"
#include "fedsim/error.hpp"
#include "fedsim/format.hpp"
#include "fedsim/oracle.hpp"
#include "fedsim/orchestrator.hpp"
#include "fixture.hpp"
#include "properties.hpp"

using namespace fedsim;
using namespace fedsim::testing;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream out;
  out.precision(digits);
  out << std::fixed << v;
  return out.str();
}

Outcome oracle_within(const std::string& suite, double budget) {
  const auto start = Clock::now();
  const OracleReport report = run_oracle_suite(suite);
  const double elapsed = seconds_since(start);
  std::string detail = std::to_string(report.checks.size()) + " checks";
  for (const OracleCheck& c : report.checks) {
    if (!c.passed) {
      detail += ", failed " + c.name + " (" + c.detail + ")";
      break;
    }
  }
  return {report.passed() && elapsed < budget,
          detail + ", " + fmt(elapsed, 2) + " s (limit " + fmt(budget, 0) + " s)"};
}

Outcome criterion_gradcheck() { return oracle_within("gradcheck", 5.0); }
Outcome criterion_aggregators() { return oracle_within("aggregators", 10.0); }
Outcome criterion_attacks() { return oracle_within("attacks", 10.0); }

ScenarioMeans flip_undefended;
ScenarioMeans flip_defended;

Outcome criterion_defense_gain() {
  const auto start = Clock::now();
  flip_undefended = run_scenario(AttackKind::kLabelFlip, AggKind::kFedAvg, false);
  flip_defended = run_scenario(AttackKind::kLabelFlip, AggKind::kFedAvg, true);
  const double elapsed = seconds_since(start);
  int wins = 0;
  for (std::size_t s = 0; s < kFixtureSeeds.size(); ++s) {
    wins += flip_defended.last5_per_seed[s] > flip_undefended.last5_per_seed[s];
  }
  const double gain = 100.0 * (flip_defended.last5 - flip_undefended.last5);
  return {wins >= 4 && gain >= 3.0 && elapsed < 180.0,
          "last-5 " + fmt(flip_undefended.last5) + " -> " + fmt(flip_defended.last5) + " (+" +
              fmt(gain, 2) + " pts), defended better in " + std::to_string(wins) +
              "/5 seeds, " + fmt(elapsed, 1) + " s"};
}

Outcome criterion_scenario2_gain() {
  const auto start = Clock::now();
  const ScenarioMeans krum = run_scenario(AttackKind::kDynOpt, AggKind::kMultiKrum, false);
  const ScenarioMeans both = run_scenario(AttackKind::kDynOpt, AggKind::kMultiKrum, true);
  const double elapsed = seconds_since(start);
  return {both.last5 >= krum.last5 && elapsed < 180.0,
          "DYN-OPT + multi_krum last-5 " + fmt(krum.last5) + " -> with FedDefender " +
              fmt(both.last5) + ", " + fmt(elapsed, 1) + " s"};
}

Outcome criterion_similarity() {
  // Reuses the defended label-flip fixture runs of the defense-gain check.
  return {flip_defended.sim_clean_final10 > flip_defended.sim_corrupted_final10,
          "final-10-round similarity to clean " + fmt(flip_defended.sim_clean_final10) +
              " vs corrupted " + fmt(flip_defended.sim_corrupted_final10)};
}

Outcome criterion_recall() {
  const auto start = Clock::now();
  const ScenarioMeans iid = run_scenario(AttackKind::kStatOpt, AggKind::kMultiKrum, false, 1.0);
  const ScenarioMeans skewed =
      run_scenario(AttackKind::kStatOpt, AggKind::kMultiKrum, false, 0.25);
  return {iid.recall >= skewed.recall,
          "STAT-OPT multi_krum recall beta=1.0 " + fmt(iid.recall) + " vs beta=0.25 " +
              fmt(skewed.recall) + ", " + fmt(seconds_since(start), 1) + " s"};
}

Outcome criterion_shadow_identity() {
  int rounds = 0;
  bool identical = true;
  for (const std::uint64_t seed : kFixtureSeeds) {
    SimConfig c = fixture_config(AttackKind::kLabelFlip, AggKind::kFedAvg, false, seed);
    c.attacker_ratio = 0.0;
    c.rounds = 10;
    c.aggregator.fedavg_weighted = false;
    const RunResult r = run(c, {1, true});
    for (std::size_t t = 0; t < r.global_trajectory.size(); ++t) {
      identical = identical && r.global_trajectory[t] == r.clean_trajectory[t];
      ++rounds;
    }
  }
  return {identical, std::to_string(rounds) + " parameter snapshots over 5 seeds compared bitwise"};
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome criterion_determinism() {
  const std::string dir = scratch_dir("acceptance_determinism");
  const std::string config = dir + "/exp.cfg";
  std::ofstream(config) << "seeds = 1,2\nrounds = 4\ndata.train_per_class = 300\n"
                           "attack.kind = lie\naggregator.kind = residual_base\n";
  std::vector<std::string> outputs;
  std::ostringstream sink;
  for (const char* threads : {"0", "4", "0", "4"}) {
    ::setenv("FEDSIM_THREADS", threads, 1);
    const std::string out = dir + "/run_" + std::to_string(outputs.size());
    if (cli_main({"run", "--config", config, "--out", out}, sink, sink) != 0) {
      return {false, "run failed: " + sink.str()};
    }
    outputs.push_back(read_file(out + "/rounds.csv"));
  }
  ::unsetenv("FEDSIM_THREADS");
  bool same = !outputs.front().empty();
  for (const auto& o : outputs) same = same && o == outputs.front();
  return {same, "4 executions (FEDSIM_THREADS 0, 4, 0, 4) produced " +
                    std::string(same ? "byte-identical" : "different") + " rounds.csv"};
}

Outcome criterion_invariants() {
  const PropertyResult results[] = {
      aggregator_permutation_invariance(1, 200), robust_weight_scaling_invariance(1, 200),
      refined_batch_simplex(1, 200), step1_isolation_replay(1, 200)};
  const char* names[] = {"permutation", "weight scaling", "simplex", "step-1 isolation"};
  bool ok = true;
  std::string detail;
  for (int i = 0; i < 4; ++i) {
    ok = ok && results[i].passed() && results[i].cases >= 100;
    detail += std::string(i ? ", " : "") + names[i] + " " +
              std::to_string(results[i].cases - results[i].failures) + "/" +
              std::to_string(results[i].cases);
    if (!results[i].passed()) detail += " (" + results[i].first_failure + ")";
  }
  return {ok, detail};
}

}  // namespace

int main() {
  set_warnings_enabled(false);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 gradient oracle", criterion_gradcheck},
      {"2 aggregator oracles", criterion_aggregators},
      {"3 attack closed forms", criterion_attacks},
      {"4 directional defense gain (label flip, FedAvg)", criterion_defense_gain},
      {"5 scenario-2 gain (DYN-OPT, Multi-Krum)", criterion_scenario2_gain},
      {"6 similarity contrast", criterion_similarity},
      {"7 detection-recall monotonicity", criterion_recall},
      {"8 shadow identity", criterion_shadow_identity},
      {"9 determinism across thread counts", criterion_determinism},
      {"10 invariant suites", criterion_invariants},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.passed;
    std::cout << (o.passed ? "PASS" : "FAIL") << "  criterion " << name << ": " << o.detail
              << std::endl;
  }
  std::cout << (failed == 0 ? "all acceptance criteria passed"
                            : std::to_string(failed) + " acceptance criteria failed")
            << std::endl;
  return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
