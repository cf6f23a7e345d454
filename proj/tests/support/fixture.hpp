#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "fedsim/aggregation.hpp"
#include "fedsim/attacks.hpp"
#include "fedsim/data.hpp"
#include "fedsim/orchestrator.hpp"

namespace fedsim::testing {

/// Repeat seeds of every multi-seed check.
inline constexpr std::array<std::uint64_t, 5> kFixtureSeeds{1, 2, 3, 4, 5};

/// Desk-scale simulation fixture: C=5, d=20, N=20, p_a=0.2, beta=0.5,
/// 40 rounds, MLP 20-32-32-5, class separation 2.5, noise 1.0,
/// 2000 training samples per class.
SimConfig fixture_config(AttackKind attack, AggKind aggregator, bool defended,
                         std::uint64_t seed, double beta = 0.5);

/// Defender-level fixture: same geometry with tighter clusters
/// (noise_std 0.7), where a trained backbone's k-NN label noise sits in the
/// 5-20% band.
SyntheticSpec defender_fixture_spec(std::uint64_t seed);

/// Five-seed means of one fixture scenario.
struct ScenarioMeans {
  double last5 = 0.0;
  double recall = 0.0;
  double sim_clean_final10 = 0.0;
  double sim_corrupted_final10 = 0.0;
  std::array<double, kFixtureSeeds.size()> last5_per_seed{};
};

ScenarioMeans run_scenario(AttackKind attack, AggKind aggregator, bool defended,
                           double beta = 0.5);

/// Fresh empty directory under the system temp dir.
std::string scratch_dir(const std::string& name);

}  // namespace fedsim::testing
