#pragma once

#include <string>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/defender.hpp"
#include "fedsim/update.hpp"

namespace fedsim {

enum class AttackKind { kLabelFlip, kLie, kStatOpt, kDynOpt };

const char* attack_name(AttackKind kind);
AttackKind parse_attack(const std::string& name);
/// Scenario-2 attacks craft deltas from the round's benign updates.
bool uses_benign_updates(AttackKind kind);

struct AttackConfig {
  AttackKind kind = AttackKind::kLabelFlip;
  double lie_z = 0.3;
  double stat_gamma = 10.0;
  double dyn_gamma_init = 10.0;
  double dyn_threshold = 1e-5;

  void validate() const;
};

/// Honest plain-CE training on a label-flipped copy of the shard.
Update label_flip_update(const MlpParams& global, const ClientDataset& dataset,
                         const DefenderConfig& training, Rng& rng);

/// Coordinate-wise mean and population standard deviation.
struct UpdateMoments {
  Vector mean;
  Vector stddev;
};
UpdateMoments update_moments(const std::vector<Update>& benign);

/// A little is enough: mean + z * stddev per coordinate.
Vector lie_update(const std::vector<Update>& benign, double z);

/// mean + gamma * (-mean / ||mean||). A zero mean has no direction; the mean
/// is returned unchanged with a warning.
Vector stat_opt_update(const std::vector<Update>& benign, double gamma);

struct DynOptResult {
  Vector delta;
  double gamma = 0.0;
  bool feasible = true;
};

/// True when max_k ||candidate - benign_k|| stays within the largest
/// pairwise distance between benign deltas.
bool dyn_opt_feasible(const std::vector<Update>& benign, const Vector& candidate);

/// Largest feasible gamma along -mean/||mean||, bisected down from gamma_init
/// until the step falls below `threshold`.
DynOptResult dyn_opt_update(const std::vector<Update>& benign,
                            double gamma_init, double threshold);

/// Scenario-2 delta for the configured attack. Fewer benign updates than an
/// attack needs degrade gracefully: none yields a zero delta of `dim`.
Vector craft_scenario2_delta(const AttackConfig& cfg,
                             const std::vector<Update>& benign,
                             Eigen::Index dim);

}  // namespace fedsim
