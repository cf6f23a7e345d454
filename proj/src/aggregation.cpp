#include "fedsim/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fedsim/error.hpp"

namespace fedsim {

namespace {

constexpr double kMadScale = 1.4826;
constexpr double kScaleFloor = 1e-12;

void require_nonempty(const std::vector<Update>& updates, const char* rule) {
  if (updates.empty()) {
    throw ConfigError(std::string(rule) + " needs at least one update");
  }
  const Eigen::Index dim = updates.front().delta.size();
  for (const Update& u : updates) {
    if (u.delta.size() != dim) {
      throw ConfigError(std::string(rule) + ": update lengths differ");
    }
  }
}

std::vector<double> coordinate(const std::vector<const Update*>& sorted,
                               Eigen::Index j) {
  std::vector<double> column(sorted.size());
  for (std::size_t k = 0; k < sorted.size(); ++k) column[k] = sorted[k]->delta[j];
  return column;
}

Vector mean_of_selected(const std::vector<const Update*>& chosen) {
  Vector sum = Vector::Zero(chosen.front()->delta.size());
  for (const Update* u : chosen) sum += u->delta;
  return sum / static_cast<double>(chosen.size());
}

std::set<int> ids_of(const std::vector<const Update*>& chosen) {
  std::set<int> ids;
  for (const Update* u : chosen) ids.insert(u->client_id);
  return ids;
}

AggResult keep_all(Vector delta, const std::vector<const Update*>& sorted) {
  AggResult r{std::move(delta), {}, {}};
  for (const Update* u : sorted) r.per_client_weight[u->client_id] = 1.0;
  return r;
}

AggResult keep_subset(const std::vector<const Update*>& sorted,
                      const std::vector<const Update*>& chosen) {
  AggResult r{mean_of_selected(chosen), ids_of(chosen), {}};
  for (const Update* u : sorted) {
    r.per_client_weight[u->client_id] = r.kept_clients.count(u->client_id) ? 1.0 : 0.0;
  }
  return r;
}

}  // namespace

std::vector<const Update*> sorted_by_client(const std::vector<Update>& updates) {
  std::vector<const Update*> out;
  out.reserve(updates.size());
  for (const Update& u : updates) out.push_back(&u);
  std::stable_sort(out.begin(), out.end(), [](const Update* a, const Update* b) {
    return a->client_id < b->client_id;
  });
  return out;
}

const char* aggregator_name(AggKind kind) {
  switch (kind) {
    case AggKind::kFedAvg: return "fedavg";
    case AggKind::kMedian: return "median";
    case AggKind::kTrimmedMean: return "trimmed_mean";
    case AggKind::kNormBound: return "norm_bound";
    case AggKind::kMultiKrum: return "multi_krum";
    case AggKind::kResidualBase: return "residual_base";
  }
  return "?";
}

AggKind parse_aggregator(const std::string& name) {
  for (AggKind k : {AggKind::kFedAvg, AggKind::kMedian, AggKind::kTrimmedMean,
                    AggKind::kNormBound, AggKind::kMultiKrum,
                    AggKind::kResidualBase}) {
    if (name == aggregator_name(k)) return k;
  }
  throw ConfigError("unknown aggregator '" + name + "'");
}

bool reports_exclusions(AggKind kind) {
  return kind == AggKind::kNormBound || kind == AggKind::kMultiKrum ||
         kind == AggKind::kResidualBase;
}

void AggConfig::validate(int participants) const {
  if (participants < 1) throw ConfigError("aggregation needs participants");
  const int f = f_expected.value_or(0);
  if (f < 0) throw ConfigError("aggregator.f_expected must be >= 0");
  if (f >= participants) {
    throw ConfigError("aggregator.f_expected must be smaller than the " +
                      std::to_string(participants) + " participants per round");
  }
  switch (kind) {
    case AggKind::kTrimmedMean:
      if (participants <= 2 * f) {
        throw ConfigError("trimmed_mean needs participants > 2 * f_expected");
      }
      break;
    case AggKind::kMultiKrum: {
      if (participants - f - 2 < 1) {
        throw ConfigError("multi_krum needs participants - f_expected - 2 >= 1");
      }
      const int c = multikrum_c.value_or(participants - f);
      if (c < 1 || c > participants - f) {
        throw ConfigError("aggregator.multikrum_c must lie in [1, participants - f_expected]");
      }
      break;
    }
    case AggKind::kResidualBase:
      if (participants < 3) throw ConfigError("residual_base needs >= 3 participants");
      if (!(residual_ci > 0.0)) throw ConfigError("aggregator.residual_ci must be > 0");
      if (!(residual_clip >= 0.0 && residual_clip <= 1.0)) {
        throw ConfigError("aggregator.residual_clip must lie in [0, 1]");
      }
      break;
    default:
      break;
  }
}

Vector plain_mean(const std::vector<Update>& updates) {
  require_nonempty(updates, "mean");
  return mean_of_selected(sorted_by_client(updates));
}

AggResult fedavg(const std::vector<Update>& updates, bool weighted) {
  require_nonempty(updates, "fedavg");
  const auto sorted = sorted_by_client(updates);
  if (!weighted) return keep_all(mean_of_selected(sorted), sorted);

  double total = 0.0;
  for (const Update* u : sorted) total += u->weight;
  if (!(total > 0.0)) throw ConfigError("fedavg: total sample weight is zero");
  Vector delta = Vector::Zero(sorted.front()->delta.size());
  for (const Update* u : sorted) delta += (u->weight / total) * u->delta;
  AggResult r{std::move(delta), {}, {}};
  for (const Update* u : sorted) r.per_client_weight[u->client_id] = u->weight / total;
  return r;
}

double median_of(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median of an empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid),
                   values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower =
      *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

AggResult coord_median(const std::vector<Update>& updates) {
  require_nonempty(updates, "median");
  const auto sorted = sorted_by_client(updates);
  const Eigen::Index dim = sorted.front()->delta.size();
  Vector delta(dim);
  for (Eigen::Index j = 0; j < dim; ++j) delta[j] = median_of(coordinate(sorted, j));
  return keep_all(std::move(delta), sorted);
}

AggResult trimmed_mean(const std::vector<Update>& updates, int f) {
  require_nonempty(updates, "trimmed_mean");
  if (f < 0 || updates.size() <= 2 * static_cast<std::size_t>(f)) {
    throw ConfigError("trimmed_mean needs participants > 2f");
  }
  const auto sorted = sorted_by_client(updates);
  const Eigen::Index dim = sorted.front()->delta.size();
  const auto trim = static_cast<std::size_t>(f);
  Vector delta(dim);
  for (Eigen::Index j = 0; j < dim; ++j) {
    std::vector<double> column = coordinate(sorted, j);
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (std::size_t k = trim; k < column.size() - trim; ++k) sum += column[k];
    delta[j] = sum / static_cast<double>(column.size() - 2 * trim);
  }
  return keep_all(std::move(delta), sorted);
}

AggResult norm_bound(const std::vector<Update>& updates, int f) {
  require_nonempty(updates, "norm_bound");
  if (f < 0 || updates.size() <= static_cast<std::size_t>(f)) {
    throw ConfigError("norm_bound needs participants > f");
  }
  const auto sorted = sorted_by_client(updates);
  std::vector<const Update*> ranked = sorted;
  // stable: equal norms keep client-id order
  std::stable_sort(ranked.begin(), ranked.end(), [](const Update* a, const Update* b) {
    return a->delta.norm() < b->delta.norm();
  });
  ranked.resize(ranked.size() - static_cast<std::size_t>(f));
  std::sort(ranked.begin(), ranked.end(), [](const Update* a, const Update* b) {
    return a->client_id < b->client_id;
  });
  return keep_subset(sorted, ranked);
}

AggResult multi_krum(const std::vector<Update>& updates, int f, int c) {
  require_nonempty(updates, "multi_krum");
  const int n = static_cast<int>(updates.size());
  if (c < 1 || c > n) throw ConfigError("multi_krum: selection count out of range");
  if (f < 0) throw ConfigError("multi_krum: f must be >= 0");
  const auto sorted = sorted_by_client(updates);

  std::vector<std::vector<double>> dist2(sorted.size(), std::vector<double>(sorted.size()));
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    for (std::size_t j = i + 1; j < sorted.size(); ++j) {
      dist2[i][j] = dist2[j][i] = (sorted[i]->delta - sorted[j]->delta).squaredNorm();
    }
  }

  std::vector<std::size_t> pool(sorted.size());
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<const Update*> chosen;
  std::vector<double> neighbour;
  while (static_cast<int>(chosen.size()) < c) {
    // Neighbour count stays n - f - 2 as the pool shrinks (capped by what is
    // left); a shrinking count would let identical colluders score 0.
    const int remaining = static_cast<int>(pool.size());
    const int m = std::max(0, std::min(n - f - 2, remaining - 1));
    std::size_t best = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < pool.size(); ++p) {
      neighbour.clear();
      for (std::size_t q = 0; q < pool.size(); ++q) {
        if (q != p) neighbour.push_back(dist2[pool[p]][pool[q]]);
      }
      std::partial_sort(neighbour.begin(), neighbour.begin() + m, neighbour.end());
      const double score = std::accumulate(neighbour.begin(), neighbour.begin() + m, 0.0);
      if (score < best_score) {
        best_score = score;
        best = p;
      }
    }
    chosen.push_back(sorted[pool[best]]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
  }
  std::sort(chosen.begin(), chosen.end(), [](const Update* a, const Update* b) {
    return a->client_id < b->client_id;
  });
  return keep_subset(sorted, chosen);
}

LineFit repeated_median_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw ConfigError("repeated median needs >= 2 paired points");
  std::vector<double> point_slopes(n);
  std::vector<double> slopes;
  slopes.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    slopes.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = x[j] - x[i];
      slopes.push_back(dx == 0.0 ? 0.0 : (y[j] - y[i]) / dx);
    }
    point_slopes[i] = median_of(slopes);
  }
  LineFit fit;
  fit.slope = median_of(point_slopes);
  std::vector<double> intercepts(n);
  for (std::size_t i = 0; i < n; ++i) intercepts[i] = y[i] - fit.slope * x[i];
  fit.intercept = median_of(intercepts);
  return fit;
}

std::vector<double> residual_confidences(const std::vector<double>& values,
                                         double ci, double clip) {
  const std::size_t n = values.size();
  if (n < 3) throw ConfigError("residual confidences need >= 3 values");
  // Covariate: normalized rank of each value (ties by position).
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> x(n);
  std::vector<double> y(n);
  for (std::size_t r = 0; r < n; ++r) {
    x[r] = static_cast<double>(r) / static_cast<double>(n - 1);
    y[r] = values[order[r]];
  }
  const LineFit fit = repeated_median_fit(x, y);

  std::vector<double> residual(n);
  std::vector<double> abs_residual(n);
  for (std::size_t r = 0; r < n; ++r) {
    residual[r] = y[r] - (fit.slope * x[r] + fit.intercept);
    abs_residual[r] = std::abs(residual[r]);
  }
  const double scale = std::max(kMadScale * median_of(abs_residual), kScaleFloor);

  std::vector<double> confidence(n);
  for (std::size_t r = 0; r < n; ++r) {
    double c = std::clamp(1.0 - abs_residual[r] / (ci * scale), 0.0, 1.0);
    if (c < clip) c = 0.0;
    confidence[order[r]] = c;
  }
  return confidence;
}

AggResult residual_base(const std::vector<Update>& updates, double ci, double clip) {
  require_nonempty(updates, "residual_base");
  if (updates.size() < 3) throw ConfigError("residual_base needs >= 3 updates");
  const auto sorted = sorted_by_client(updates);
  const Eigen::Index dim = sorted.front()->delta.size();
  Vector delta(dim);
  std::vector<double> confidence_sum(sorted.size(), 0.0);
  for (Eigen::Index j = 0; j < dim; ++j) {
    const std::vector<double> column = coordinate(sorted, j);
    const std::vector<double> conf = residual_confidences(column, ci, clip);
    double weighted = 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < column.size(); ++k) {
      weighted += conf[k] * column[k];
      total += conf[k];
      confidence_sum[k] += conf[k];
    }
    delta[j] = total > 0.0 ? weighted / total : median_of(column);
  }
  AggResult r{std::move(delta), {}, {}};
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    const double w = confidence_sum[k] / static_cast<double>(dim);
    r.per_client_weight[sorted[k]->client_id] = w;
    if (w >= clip) r.kept_clients.insert(sorted[k]->client_id);
  }
  return r;
}

AggResult aggregate(const AggConfig& cfg, const std::vector<Update>& updates) {
  const int n = static_cast<int>(updates.size());
  const int f = cfg.f_expected.value_or(0);
  switch (cfg.kind) {
    case AggKind::kFedAvg: return fedavg(updates, cfg.fedavg_weighted);
    case AggKind::kMedian: return coord_median(updates);
    case AggKind::kTrimmedMean: return trimmed_mean(updates, f);
    case AggKind::kNormBound: return norm_bound(updates, f);
    case AggKind::kMultiKrum:
      return multi_krum(updates, f, cfg.multikrum_c.value_or(n - f));
    case AggKind::kResidualBase:
      return residual_base(updates, cfg.residual_ci, cfg.residual_clip);
  }
  throw ConfigError("unknown aggregator");
}

double detection_recall(const std::set<int>& excluded,
                        const std::set<int>& malicious_present) {
  if (malicious_present.empty()) return 1.0;
  std::size_t caught = 0;
  for (const int id : malicious_present) caught += excluded.count(id);
  return static_cast<double>(caught) / static_cast<double>(malicious_present.size());
}

std::set<int> excluded_clients(const AggConfig& cfg, const AggResult& result,
                               const std::vector<Update>& updates) {
  std::set<int> out;
  if (!reports_exclusions(cfg.kind)) return out;
  for (const Update& u : updates) {
    if (cfg.kind == AggKind::kResidualBase) {
      if (result.per_client_weight.at(u.client_id) < cfg.residual_clip) {
        out.insert(u.client_id);
      }
    } else if (!result.kept_clients.count(u.client_id)) {
      out.insert(u.client_id);
    }
  }
  return out;
}

}  // namespace fedsim
