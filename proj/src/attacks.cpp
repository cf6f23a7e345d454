#include "fedsim/attacks.hpp"

#include <cmath>

#include "fedsim/error.hpp"

namespace fedsim {

namespace {

Vector mean_delta(const std::vector<Update>& benign) {
  if (benign.empty()) throw ConfigError("attack needs at least one benign update");
  Vector mean = Vector::Zero(benign.front().delta.size());
  for (const Update* u : sorted_by_client(benign)) mean += u->delta;
  return mean / static_cast<double>(benign.size());
}

double max_pairwise_distance(const std::vector<Update>& benign) {
  double best = 0.0;
  for (std::size_t i = 0; i < benign.size(); ++i) {
    for (std::size_t j = i + 1; j < benign.size(); ++j) {
      best = std::max(best, (benign[i].delta - benign[j].delta).norm());
    }
  }
  return best;
}

}  // namespace

const char* attack_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::kLabelFlip: return "label_flip";
    case AttackKind::kLie: return "lie";
    case AttackKind::kStatOpt: return "stat_opt";
    case AttackKind::kDynOpt: return "dyn_opt";
  }
  return "?";
}

AttackKind parse_attack(const std::string& name) {
  for (AttackKind k : {AttackKind::kLabelFlip, AttackKind::kLie,
                       AttackKind::kStatOpt, AttackKind::kDynOpt}) {
    if (name == attack_name(k)) return k;
  }
  throw ConfigError("unknown attack kind '" + name +
                    "' (expected label_flip, lie, stat_opt or dyn_opt)");
}

bool uses_benign_updates(AttackKind kind) {
  return kind != AttackKind::kLabelFlip;
}

void AttackConfig::validate() const {
  if (!(stat_gamma > 0.0)) throw ConfigError("attack.stat_gamma must be > 0");
  if (!(dyn_gamma_init > 0.0)) {
    throw ConfigError("attack.dyn_gamma_init must be > 0");
  }
  if (!(dyn_threshold > 0.0)) throw ConfigError("attack.dyn_threshold must be > 0");
  if (!std::isfinite(lie_z)) throw ConfigError("attack.lie_z must be finite");
}

Update label_flip_update(const MlpParams& global, const ClientDataset& dataset,
                         const DefenderConfig& training, Rng& rng) {
  DefenderConfig plain = training;
  plain.defense_enabled = false;
  const ClientDataset flipped =
      flip_labels(dataset, global.shape().num_classes, rng);
  OptimizerState opt = OptimizerState::create(
      global.shape(), plain.learning_rate, plain.momentum, plain.weight_decay);
  return local_train_epoch(global, flipped, global, plain, opt, rng);
}

UpdateMoments update_moments(const std::vector<Update>& benign) {
  UpdateMoments m{mean_delta(benign), {}};
  Vector var = Vector::Zero(m.mean.size());
  for (const Update* u : sorted_by_client(benign)) {
    var += (u->delta - m.mean).cwiseAbs2();
  }
  m.stddev = (var / static_cast<double>(benign.size())).cwiseSqrt();
  return m;
}

Vector lie_update(const std::vector<Update>& benign, double z) {
  const UpdateMoments m = update_moments(benign);
  return m.mean + z * m.stddev;
}

Vector stat_opt_update(const std::vector<Update>& benign, double gamma) {
  const Vector mean = mean_delta(benign);
  const double norm = mean.norm();
  if (norm == 0.0) {
    log_warning("STAT-OPT: benign mean is zero, no attack direction");
    return mean;
  }
  return mean - (gamma / norm) * mean;
}

bool dyn_opt_feasible(const std::vector<Update>& benign, const Vector& candidate) {
  const double bound = max_pairwise_distance(benign);
  for (const Update& u : benign) {
    if ((candidate - u.delta).norm() > bound) return false;
  }
  return true;
}

DynOptResult dyn_opt_update(const std::vector<Update>& benign,
                            double gamma_init, double threshold) {
  const Vector mean = mean_delta(benign);
  const double norm = mean.norm();
  if (norm == 0.0) {
    log_warning("DYN-OPT: benign mean is zero, no attack direction");
    return DynOptResult{mean, 0.0, dyn_opt_feasible(benign, mean)};
  }
  const Vector direction = -mean / norm;
  auto feasible = [&](double gamma) {
    return dyn_opt_feasible(benign, mean + gamma * direction);
  };

  if (!feasible(0.0)) {
    log_warning("DYN-OPT: benign mean already violates the distance bound");
    return DynOptResult{mean, 0.0, false};
  }
  if (feasible(gamma_init)) {
    return DynOptResult{mean + gamma_init * direction, gamma_init, true};
  }
  // Feasible gammas form an interval [0, gamma*]: bracket it and halve.
  double lo = 0.0;
  double hi = gamma_init;
  while (hi - lo >= threshold) {
    const double mid = 0.5 * (lo + hi);
    (feasible(mid) ? lo : hi) = mid;
  }
  return DynOptResult{mean + lo * direction, lo, true};
}

Vector craft_scenario2_delta(const AttackConfig& cfg,
                             const std::vector<Update>& benign,
                             Eigen::Index dim) {
  if (benign.empty()) {
    log_warning(std::string(attack_name(cfg.kind)) +
                ": no benign updates this round, sending a zero delta");
    return Vector::Zero(dim);
  }
  switch (cfg.kind) {
    case AttackKind::kLie:
      return lie_update(benign, cfg.lie_z);
    case AttackKind::kStatOpt:
      return stat_opt_update(benign, cfg.stat_gamma);
    case AttackKind::kDynOpt:
      return dyn_opt_update(benign, cfg.dyn_gamma_init, cfg.dyn_threshold).delta;
    case AttackKind::kLabelFlip:
      break;
  }
  throw ConfigError("label_flip does not craft deltas from benign updates");
}

}  // namespace fedsim
