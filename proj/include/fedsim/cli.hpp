#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedsim/config.hpp"
#include "fedsim/orchestrator.hpp"

namespace fedsim {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitIo = 3,
  kExitOracle = 4,
};

/// Column order of rounds.csv; bump when it changes.
inline constexpr int kRoundsSchemaVersion = 1;

/// Worker cap from FEDSIM_THREADS (0 = serial); hardware concurrency when
/// unset. Throws ConfigError on a malformed value.
int threads_from_env();

struct SeedRun {
  std::uint64_t seed = 0;
  RunResult result;
};

std::vector<SeedRun> run_experiment(const ExperimentConfig& cfg, int threads);

/// Mean recall over rounds where a malicious client was sampled and the
/// rule reports exclusions; NaN when there is no such round.
double mean_contested_recall(const std::vector<RoundReport>& reports);

void write_rounds_csv(std::ostream& out, const std::vector<SeedRun>& runs,
                      int num_classes);
/// rounds.csv, summary.json and config_resolved.json under `dir`.
void write_run_outputs(const ExperimentConfig& cfg, const std::vector<SeedRun>& runs,
                       const std::filesystem::path& dir);

/// Parsed rounds.csv: header plus one string row per line.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
  double number(std::size_t row, const std::string& name) const;
};
CsvTable read_csv(const std::filesystem::path& path);

/// The `fedsim` command line: run, sweep, analyze, oracle. Returns the exit
/// code; diagnostics go to `err`, progress to `out`.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fedsim
