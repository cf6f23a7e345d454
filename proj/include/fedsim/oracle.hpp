#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedsim {

struct OracleCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct OracleReport {
  std::string suite;
  std::vector<OracleCheck> checks;

  bool passed() const;
};

/// Analytic gradients against central differences (epsilon 1e-5) on random
/// two-headed MLPs with every dimension <= 8 and random loss mixtures.
/// Relative error per coordinate <= 1e-4; coordinates below 1e-8 in
/// magnitude are compared absolutely.
OracleReport gradcheck_suite(std::uint64_t seed = 1, int instances = 20);

/// coord_median, trimmed_mean, norm_bound and multi_krum against brute-force
/// references on random instances (n <= 8, d <= 5), plus the hand-solved
/// residual_base cases. Inputs live on a dyadic grid so every sum is exact
/// and the comparison can demand bitwise equality.
OracleReport aggregator_suite(std::uint64_t seed = 1, int instances = 100);

/// Closed-form LIE, STAT-OPT and DYN-OPT cases.
OracleReport attack_suite();

/// Runs a suite by name: gradcheck, aggregators or attacks. Unknown names
/// throw ConfigError.
OracleReport run_oracle_suite(const std::string& name, std::uint64_t seed = 1);

}  // namespace fedsim
