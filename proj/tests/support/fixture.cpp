#include "fixture.hpp"

#include <cmath>
#include <filesystem>

#include <unistd.h>

namespace fedsim::testing {

SimConfig fixture_config(AttackKind attack, AggKind aggregator, bool defended,
                         std::uint64_t seed, double beta) {
  SimConfig c;
  c.rounds = 40;
  c.beta = beta;
  c.attack.kind = attack;
  c.aggregator.kind = aggregator;
  c.defender.defense_enabled = defended;
  c.seed = seed;
  return c;
}

SyntheticSpec defender_fixture_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.noise_std = 0.7;
  s.seed = seed;
  return s;
}

ScenarioMeans run_scenario(AttackKind attack, AggKind aggregator, bool defended,
                           double beta) {
  ScenarioMeans m;
  const auto n = static_cast<double>(kFixtureSeeds.size());
  for (std::size_t s = 0; s < kFixtureSeeds.size(); ++s) {
    const RunResult r =
        run(fixture_config(attack, aggregator, defended, kFixtureSeeds[s], beta), {1, false});
    m.last5_per_seed[s] = r.summary.last5_accuracy;
    m.last5 += r.summary.last5_accuracy / n;

    double recall = 0.0;
    int contested = 0;
    for (const RoundReport& rep : r.reports) {
      if (rep.malicious_sampled > 0 && !std::isnan(rep.detection_recall)) {
        recall += rep.detection_recall;
        ++contested;
      }
    }
    m.recall += (contested > 0 ? recall / contested : NAN) / n;

    double clean = 0.0;
    double corrupted = 0.0;
    int rounds = 0;
    for (std::size_t t = r.reports.size() - 10; t < r.reports.size(); ++t) {
      if (std::isnan(r.reports[t].similarity_clean)) continue;
      clean += r.reports[t].similarity_clean;
      corrupted += r.reports[t].similarity_corrupted;
      ++rounds;
    }
    m.sim_clean_final10 += clean / rounds / n;
    m.sim_corrupted_final10 += corrupted / rounds / n;
  }
  return m;
}

std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("fedsim_test_" + std::to_string(::getpid())) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace fedsim::testing
