#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <vector>

#include "fedsim/aggregation.hpp"
#include "fedsim/attacks.hpp"
#include "fedsim/data.hpp"
#include "fedsim/defender.hpp"
#include "fedsim/nn.hpp"

namespace fedsim {

struct SimConfig {
  int num_clients = 20;
  int rounds = 100;
  double sample_fraction = 0.5;
  double attacker_ratio = 0.2;
  double beta = 0.5;
  AttackConfig attack;
  AggConfig aggregator;
  DefenderConfig defender;
  /// input_dim and num_classes always follow `data`.
  ModelShape model;
  /// data.seed is overwritten by `seed` when a run starts.
  SyntheticSpec data;
  std::uint64_t seed = 1;

  int malicious_count() const;
  int clients_per_round() const;
  ModelShape resolved_model() const;
  /// f_expected: roster attacker count, capped to what the rule admits.
  int resolved_f_expected() const;
  /// Fills unset optional fields and syncs model/data dimensions.
  SimConfig resolved() const;
  void validate() const;
};

struct ClientRoster {
  std::set<int> benign;
  std::set<int> malicious;

  bool is_malicious(int id) const { return malicious.count(id) > 0; }
};

/// Seeded shuffle of client ids; the first floor(ratio * N) are malicious.
ClientRoster make_roster(int num_clients, double attacker_ratio,
                         std::uint64_t seed);

/// ceil(fraction * N) distinct ids in ascending order.
std::vector<int> sample_clients(int num_clients, double fraction, Rng& rng);

struct RoundReport {
  int round = 0;
  double global_accuracy = 0.0;
  double clean_accuracy = 0.0;
  /// NaN when the aggregator keeps everyone.
  double detection_recall = 0.0;
  /// Mean prediction similarity of benign local models to the corrupted and
  /// clean next-round global models; NaN when no benign client was sampled.
  double similarity_corrupted = 0.0;
  double similarity_clean = 0.0;
  Vector similarity_corrupted_by_class;
  Vector similarity_clean_by_class;
  std::vector<int> sampled;
  int malicious_sampled = 0;
};

struct RunSummary {
  double last5_accuracy = 0.0;
  double best5_accuracy = 0.0;
};

RunSummary summarize(const std::vector<RoundReport>& reports);

struct RunResult {
  std::vector<RoundReport> reports;
  RunSummary summary;
  MlpParams final_global;
  MlpParams final_clean;
  /// Global parameters entering each round plus the final ones
  /// (only filled when RunOptions::keep_trajectory is set).
  std::vector<MlpParams> global_trajectory;
  std::vector<MlpParams> clean_trajectory;
};

struct RunOptions {
  /// Worker threads for benign client training; 0 or 1 runs serially.
  int threads = 0;
  bool keep_trajectory = false;
};

RunResult run(const SimConfig& config, const RunOptions& options = {});

/// Unweighted mean of the benign updates; nullopt when none were sampled.
std::optional<Vector> shadow_clean_aggregate(const std::vector<Update>& updates,
                                             const ClientRoster& roster);

/// Mean cosine similarity of the two models' main-head probabilities.
double model_similarity(const MlpParams& a, const MlpParams& b,
                        const LabeledSet& data);
/// Same, averaged separately over the samples of each class.
Vector model_similarity_by_class(const MlpParams& a, const MlpParams& b,
                                 const LabeledSet& data, int num_classes);

/// Test accuracy over params + a X + b Y on a grid_steps x grid_steps grid
/// spanning [-radius, radius]^2. X and Y are seeded Gaussian directions with
/// every block rescaled to the norm of the matching parameter block.
/// Row index follows a, column index follows b.
Matrix accuracy_surface(const MlpParams& params, const LabeledSet& test,
                        double grid_radius, int grid_steps, std::uint64_t seed);
double surface_coordinate(double grid_radius, int grid_steps, int index);

/// Runs fn(0..count-1) on up to `threads` workers.
void parallel_for(std::size_t count, int threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace fedsim
