#include "fedsim/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "fedsim/error.hpp"

namespace fedsim {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kSummaryWindow = 5;

// Stream tags for Rng::derive.
constexpr std::uint64_t kInitStream = 0x1A17;
constexpr std::uint64_t kRosterStream = 0x2057;
constexpr std::uint64_t kSampleStream = 0x5A3B;
constexpr std::uint64_t kClientStream = 0xC11E;
constexpr std::uint64_t kAttackStream = 0xA77C;
constexpr std::uint64_t kSurfaceStream = 0x5F2C;

double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  const double denom = a.norm() * b.norm();
  return denom > 0.0 ? a.dot(b) / denom : 0.0;
}

}  // namespace

int SimConfig::malicious_count() const {
  // Tolerance keeps e.g. 0.2 * 20 at 4 despite binary rounding.
  return static_cast<int>(std::floor(attacker_ratio * num_clients + 1e-9));
}

int SimConfig::clients_per_round() const {
  return std::clamp(
      static_cast<int>(std::ceil(sample_fraction * num_clients - 1e-9)), 1,
      num_clients);
}

ModelShape SimConfig::resolved_model() const {
  ModelShape s = model;
  s.input_dim = data.input_dim;
  s.num_classes = data.num_classes;
  return s;
}

int SimConfig::resolved_f_expected() const {
  if (aggregator.f_expected) return *aggregator.f_expected;
  const int m = clients_per_round();
  int cap = m - 1;
  switch (aggregator.kind) {
    case AggKind::kTrimmedMean: cap = (m - 1) / 2; break;
    case AggKind::kMultiKrum: cap = m - 3; break;
    default: break;
  }
  return std::max(0, std::min(malicious_count(), cap));
}

SimConfig SimConfig::resolved() const {
  SimConfig r = *this;
  r.model = resolved_model();
  r.data.seed = seed;
  r.aggregator.f_expected = resolved_f_expected();
  if (r.aggregator.kind == AggKind::kMultiKrum && !r.aggregator.multikrum_c) {
    r.aggregator.multikrum_c = clients_per_round() - *r.aggregator.f_expected;
  }
  return r;
}

void SimConfig::validate() const {
  if (num_clients < 1) throw ConfigError("num_clients must be >= 1");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) {
    throw ConfigError("sample_fraction must lie in (0, 1]");
  }
  if (!(attacker_ratio >= 0.0 && attacker_ratio < 1.0)) {
    throw ConfigError("attacker_ratio must lie in [0, 1)");
  }
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  data.validate();
  resolved_model().validate();
  defender.validate();
  attack.validate();
  const SimConfig r = resolved();
  r.aggregator.validate(clients_per_round());
}

ClientRoster make_roster(int num_clients, double attacker_ratio,
                         std::uint64_t seed) {
  std::vector<int> ids(static_cast<std::size_t>(num_clients));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng = Rng::derive({seed, kRosterStream});
  rng.shuffle(ids);
  const int bad = static_cast<int>(std::floor(attacker_ratio * num_clients + 1e-9));
  ClientRoster roster;
  for (int i = 0; i < num_clients; ++i) {
    (i < bad ? roster.malicious : roster.benign).insert(ids[static_cast<std::size_t>(i)]);
  }
  return roster;
}

std::vector<int> sample_clients(int num_clients, double fraction, Rng& rng) {
  const int m = std::clamp(static_cast<int>(std::ceil(fraction * num_clients - 1e-9)),
                           1, num_clients);
  std::vector<int> ids(static_cast<std::size_t>(num_clients));
  std::iota(ids.begin(), ids.end(), 0);
  rng.shuffle(ids);
  ids.resize(static_cast<std::size_t>(m));
  std::sort(ids.begin(), ids.end());
  return ids;
}

RunSummary summarize(const std::vector<RoundReport>& reports) {
  RunSummary s;
  if (reports.empty()) return s;
  std::vector<double> acc;
  acc.reserve(reports.size());
  for (const auto& r : reports) acc.push_back(r.global_accuracy);
  const std::size_t window = std::min<std::size_t>(kSummaryWindow, acc.size());
  s.last5_accuracy =
      std::accumulate(acc.end() - static_cast<std::ptrdiff_t>(window), acc.end(), 0.0) /
      static_cast<double>(window);
  std::sort(acc.begin(), acc.end(), std::greater<>());
  s.best5_accuracy =
      std::accumulate(acc.begin(), acc.begin() + static_cast<std::ptrdiff_t>(window), 0.0) /
      static_cast<double>(window);
  return s;
}

std::optional<Vector> shadow_clean_aggregate(const std::vector<Update>& updates,
                                             const ClientRoster& roster) {
  std::vector<Update> benign;
  for (const Update& u : updates) {
    if (!roster.is_malicious(u.client_id)) benign.push_back(u);
  }
  if (benign.empty()) return std::nullopt;
  return plain_mean(benign);
}

namespace {

struct SimilarityStats {
  double overall = 0.0;
  Vector by_class;
};

// Row-wise cosine between two probability matrices, averaged overall and
// per true class.
SimilarityStats prediction_similarity(const Matrix& pa, const Matrix& pb,
                                      const std::vector<int>& labels,
                                      int num_classes) {
  SimilarityStats s{0.0, Vector::Zero(num_classes)};
  Vector count = Vector::Zero(num_classes);
  for (Eigen::Index i = 0; i < pa.rows(); ++i) {
    const double c = cosine(pa.row(i), pb.row(i));
    const int label = labels[static_cast<std::size_t>(i)];
    s.overall += c;
    s.by_class[label] += c;
    count[label] += 1.0;
  }
  s.overall = pa.rows() > 0 ? s.overall / static_cast<double>(pa.rows()) : kNaN;
  for (int c = 0; c < num_classes; ++c) {
    s.by_class[c] = count[c] > 0.0 ? s.by_class[c] / count[c] : kNaN;
  }
  return s;
}

}  // namespace

double model_similarity(const MlpParams& a, const MlpParams& b,
                        const LabeledSet& data) {
  if (a.shape() != b.shape()) throw ConfigError("similarity: model shapes differ");
  if (data.empty()) return kNaN;
  return prediction_similarity(forward(a, data.x).main_probs,
                               forward(b, data.x).main_probs, data.y,
                               a.shape().num_classes)
      .overall;
}

Vector model_similarity_by_class(const MlpParams& a, const MlpParams& b,
                                 const LabeledSet& data, int num_classes) {
  if (a.shape() != b.shape()) throw ConfigError("similarity: model shapes differ");
  return prediction_similarity(forward(a, data.x).main_probs,
                               forward(b, data.x).main_probs, data.y, num_classes)
      .by_class;
}

double surface_coordinate(double grid_radius, int grid_steps, int index) {
  // Exactly 0 at the centre index of an odd grid; + 0.0 turns -0 into 0.
  return grid_radius * static_cast<double>(2 * index - (grid_steps - 1)) /
             static_cast<double>(grid_steps - 1) +
         0.0;
}

Matrix accuracy_surface(const MlpParams& params, const LabeledSet& test,
                        double grid_radius, int grid_steps, std::uint64_t seed) {
  if (grid_steps < 2) throw ConfigError("grid_steps must be >= 2");
  if (!(grid_radius >= 0.0)) throw ConfigError("grid_radius must be >= 0");
  Rng rng = Rng::derive({seed, kSurfaceStream});
  auto direction = [&]() {
    MlpParams d = MlpParams::zeros(params.shape());
    auto fill = [&](auto& block, const auto& reference) {
      for (Eigen::Index i = 0; i < block.size(); ++i) block.data()[i] = rng.normal();
      const double norm = block.norm();
      if (norm > 0.0) block *= reference.norm() / norm;
    };
    fill(d.W1, params.W1);
    fill(d.b1, params.b1);
    fill(d.W2, params.W2);
    fill(d.b2, params.b2);
    fill(d.W3, params.W3);
    fill(d.b3, params.b3);
    fill(d.Wa, params.Wa);
    fill(d.ba, params.ba);
    return d;
  };
  const MlpParams dir_x = direction();
  const MlpParams dir_y = direction();

  Matrix grid(grid_steps, grid_steps);
  for (int i = 0; i < grid_steps; ++i) {
    for (int j = 0; j < grid_steps; ++j) {
      MlpParams probe = params;
      probe.add_scaled(dir_x, surface_coordinate(grid_radius, grid_steps, i));
      probe.add_scaled(dir_y, surface_coordinate(grid_radius, grid_steps, j));
      grid(i, j) = accuracy(probe, test.x, test.y);
    }
  }
  return grid;
}

void parallel_for(std::size_t count, int threads,
                  const std::function<void(std::size_t)>& fn) {
  const std::size_t workers =
      std::min<std::size_t>(count, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

RunResult run(const SimConfig& config, const RunOptions& options) {
  config.validate();
  const SimConfig cfg = config.resolved();
  const ModelShape shape = cfg.model;

  const SyntheticData data = generate_synthetic(cfg.data);
  std::vector<ClientDataset> clients = dirichlet_partition(
      data.train, PartitionConfig{cfg.num_clients, cfg.beta, cfg.seed},
      shape.num_classes);
  const ClientRoster roster = make_roster(cfg.num_clients, cfg.attacker_ratio, cfg.seed);
  for (auto& c : clients) {
    c.role = roster.is_malicious(c.client_id) ? Role::kMalicious : Role::kBenign;
  }

  Rng init_rng = Rng::derive({cfg.seed, kInitStream});
  MlpParams global = MlpParams::init(shape, init_rng);
  MlpParams clean = global;

  RunResult result;
  for (int t = 0; t < cfg.rounds; ++t) {
    if (options.keep_trajectory) {
      result.global_trajectory.push_back(global);
      result.clean_trajectory.push_back(clean);
    }
    const auto round_key = static_cast<std::uint64_t>(t);
    Rng sample_rng = Rng::derive({cfg.seed, kSampleStream, round_key});
    const std::vector<int> sampled =
        sample_clients(cfg.num_clients, cfg.sample_fraction, sample_rng);

    std::vector<int> benign_ids;
    std::vector<int> malicious_ids;
    for (const int id : sampled) {
      (roster.is_malicious(id) ? malicious_ids : benign_ids).push_back(id);
    }

    // Benign clients and label-flipping attackers train independently.
    const bool crafted = uses_benign_updates(cfg.attack.kind);
    std::vector<int> trainers = benign_ids;
    if (!crafted) trainers.insert(trainers.end(), malicious_ids.begin(), malicious_ids.end());
    std::vector<Update> trained(trainers.size());
    parallel_for(trainers.size(), options.threads, [&](std::size_t i) {
      const int id = trainers[i];
      const ClientDataset& shard = clients[static_cast<std::size_t>(id)];
      const auto client_key = static_cast<std::uint64_t>(id);
      if (roster.is_malicious(id)) {
        Rng rng = Rng::derive({cfg.seed, kAttackStream, round_key, client_key});
        trained[i] = label_flip_update(global, shard, cfg.defender, rng);
      } else {
        Rng rng = Rng::derive({cfg.seed, kClientStream, round_key, client_key});
        OptimizerState opt = OptimizerState::create(
            shape, cfg.defender.learning_rate, cfg.defender.momentum,
            cfg.defender.weight_decay);
        trained[i] = local_train_epoch(global, shard, global, cfg.defender, opt, rng);
      }
      trained[i].round = t;
    });

    std::vector<Update> benign_updates(trained.begin(),
                                       trained.begin() + static_cast<std::ptrdiff_t>(benign_ids.size()));
    std::vector<Update> updates = trained;
    if (crafted && !malicious_ids.empty()) {
      // Barrier: Scenario-2 attackers see this round's benign deltas.
      const Vector delta = craft_scenario2_delta(
          cfg.attack, benign_updates, static_cast<Eigen::Index>(shape.parameter_count()));
      for (const int id : malicious_ids) {
        updates.push_back(Update{delta,
                                 static_cast<double>(clients[static_cast<std::size_t>(id)].size()),
                                 id, t});
      }
    }

    const AggResult agg = aggregate(cfg.aggregator, updates);
    const Vector base = global.flatten();
    const MlpParams next_global = MlpParams::from_flat(shape, base + agg.global_delta);
    if (const auto clean_delta = shadow_clean_aggregate(updates, roster)) {
      clean = MlpParams::from_flat(shape, base + *clean_delta);
    }

    RoundReport report;
    report.round = t;
    report.sampled = sampled;
    report.malicious_sampled = static_cast<int>(malicious_ids.size());
    report.global_accuracy = accuracy(next_global, data.test.x, data.test.y);
    report.clean_accuracy = accuracy(clean, data.test.x, data.test.y);
    report.detection_recall = kNaN;
    if (reports_exclusions(cfg.aggregator.kind)) {
      report.detection_recall = fedsim::detection_recall(
          excluded_clients(cfg.aggregator, agg, updates),
          std::set<int>(malicious_ids.begin(), malicious_ids.end()));
    }

    report.similarity_corrupted = kNaN;
    report.similarity_clean = kNaN;
    report.similarity_corrupted_by_class = Vector::Constant(shape.num_classes, kNaN);
    report.similarity_clean_by_class = Vector::Constant(shape.num_classes, kNaN);
    if (!benign_updates.empty()) {
      const Matrix corrupted_probs = forward(next_global, data.test.x).main_probs;
      const Matrix clean_probs = forward(clean, data.test.x).main_probs;
      SimilarityStats to_corrupted{0.0, Vector::Zero(shape.num_classes)};
      SimilarityStats to_clean{0.0, Vector::Zero(shape.num_classes)};
      for (const Update* u : sorted_by_client(benign_updates)) {
        const MlpParams local = MlpParams::from_flat(shape, base + u->delta);
        const Matrix local_probs = forward(local, data.test.x).main_probs;
        const SimilarityStats a = prediction_similarity(
            local_probs, corrupted_probs, data.test.y, shape.num_classes);
        const SimilarityStats b = prediction_similarity(
            local_probs, clean_probs, data.test.y, shape.num_classes);
        to_corrupted.overall += a.overall;
        to_corrupted.by_class += a.by_class;
        to_clean.overall += b.overall;
        to_clean.by_class += b.by_class;
      }
      const auto n = static_cast<double>(benign_updates.size());
      report.similarity_corrupted = to_corrupted.overall / n;
      report.similarity_clean = to_clean.overall / n;
      report.similarity_corrupted_by_class = to_corrupted.by_class / n;
      report.similarity_clean_by_class = to_clean.by_class / n;
    }

    global = next_global;
    result.reports.push_back(std::move(report));
  }
  if (options.keep_trajectory) {
    result.global_trajectory.push_back(global);
    result.clean_trajectory.push_back(clean);
  }
  result.summary = summarize(result.reports);
  result.final_global = global;
  result.final_clean = clean;
  return result;
}

}  // namespace fedsim
