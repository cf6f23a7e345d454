#include "fedsim/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

#include "fedsim/error.hpp"
#include "fedsim/format.hpp"

namespace fedsim {

namespace {

constexpr int kMaxPartitionRedraws = 100;

Matrix class_directions(const SyntheticSpec& spec, Rng& rng) {
  Matrix dirs(spec.num_classes, spec.input_dim);
  for (Eigen::Index i = 0; i < dirs.size(); ++i) dirs.data()[i] = rng.normal();
  if (spec.input_dim >= spec.num_classes) {
    // Modified Gram-Schmidt over the rows.
    for (int c = 0; c < spec.num_classes; ++c) {
      for (int prev = 0; prev < c; ++prev) {
        dirs.row(c) -= dirs.row(c).dot(dirs.row(prev)) * dirs.row(prev);
      }
      dirs.row(c).normalize();
    }
  } else {
    for (int c = 0; c < spec.num_classes; ++c) dirs.row(c).normalize();
  }
  return dirs;
}

LabeledSet draw_split(const SyntheticSpec& spec, const Matrix& dirs,
                      int per_class, Rng& rng) {
  LabeledSet set;
  set.x.resize(static_cast<Eigen::Index>(per_class) * spec.num_classes,
               spec.input_dim);
  set.y.reserve(static_cast<std::size_t>(per_class * spec.num_classes));
  Eigen::Index row = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    const Eigen::RowVectorXd mean = spec.class_separation * dirs.row(c);
    for (int i = 0; i < per_class; ++i, ++row) {
      for (int j = 0; j < spec.input_dim; ++j) {
        set.x(row, j) = mean[j] + spec.noise_std * rng.normal();
      }
      set.y.push_back(c);
    }
  }
  return set;
}

// Largest-remainder apportionment of `total` items by `proportions`.
std::vector<std::size_t> apportion(std::span<const double> proportions,
                                   std::size_t total) {
  const std::size_t n = proportions.size();
  std::vector<std::size_t> counts(n);
  std::vector<double> remainder(n);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double exact = proportions[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    remainder[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return remainder[a] > remainder[b];
  });
  for (std::size_t k = 0; assigned < total; k = (k + 1) % n, ++assigned) {
    ++counts[order[k]];
  }
  return counts;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ConfigError("data.num_classes must be >= 2");
  if (input_dim < 1) throw ConfigError("data.input_dim must be >= 1");
  if (train_per_class < 1 || test_per_class < 1) {
    throw ConfigError("per-class sample counts must be >= 1");
  }
  if (!(class_separation > 0.0)) {
    throw ConfigError("data.class_separation must be > 0");
  }
  if (!(noise_std > 0.0)) throw ConfigError("data.noise_std must be > 0");
}

void PartitionConfig::validate() const {
  if (num_clients < 1) throw ConfigError("num_clients must be >= 1");
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
}

Sample LabeledSet::sample(std::size_t i) const {
  return Sample{x.row(static_cast<Eigen::Index>(i)).transpose(), y[i]};
}

LabeledSet LabeledSet::select(std::span<const std::size_t> rows) const {
  LabeledSet out;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
  out.y.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) =
        x.row(static_cast<Eigen::Index>(rows[i]));
    out.y.push_back(y[rows[i]]);
  }
  return out;
}

const char* role_name(Role role) {
  return role == Role::kBenign ? "benign" : "malicious";
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng dir_rng = Rng::derive({spec.seed, 0xD1EC});
  Rng train_rng = Rng::derive({spec.seed, 0x7EA1});
  Rng test_rng = Rng::derive({spec.seed, 0x7E57});
  SyntheticData out;
  out.class_directions = class_directions(spec, dir_rng);
  out.train = draw_split(spec, out.class_directions, spec.train_per_class,
                         train_rng);
  out.test = draw_split(spec, out.class_directions, spec.test_per_class,
                        test_rng);
  return out;
}

std::vector<ClientDataset> dirichlet_partition(const LabeledSet& train,
                                               const PartitionConfig& cfg,
                                               int num_classes) {
  cfg.validate();
  if (train.empty()) throw ConfigError("cannot partition an empty dataset");
  const auto n_clients = static_cast<std::size_t>(cfg.num_clients);
  Rng rng = Rng::derive({cfg.seed, 0xD121});

  std::vector<std::vector<std::size_t>> by_class(
      static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < train.size(); ++i) {
    by_class[static_cast<std::size_t>(train.y[i])].push_back(i);
  }

  std::vector<std::vector<std::size_t>> shards;
  for (int attempt = 0; attempt < kMaxPartitionRedraws; ++attempt) {
    shards.assign(n_clients, {});
    for (const auto& members : by_class) {
      if (members.empty()) continue;
      std::vector<std::size_t> pool = members;
      rng.shuffle(pool);
      const std::vector<double> p = rng.dirichlet(n_clients, cfg.beta);
      const std::vector<std::size_t> counts = apportion(p, pool.size());
      std::size_t cursor = 0;
      for (std::size_t k = 0; k < n_clients; ++k) {
        for (std::size_t c = 0; c < counts[k]; ++c) {
          shards[k].push_back(pool[cursor++]);
        }
      }
    }
    const bool any_empty = std::any_of(shards.begin(), shards.end(),
                                       [](const auto& s) { return s.empty(); });
    if (!any_empty) break;
  }

  // Still empty after the re-draw budget: feed each empty shard one sample
  // from the current largest shard (lowest client id on ties).
  for (std::size_t k = 0; k < n_clients; ++k) {
    if (!shards[k].empty()) continue;
    std::size_t largest = 0;
    for (std::size_t j = 1; j < n_clients; ++j) {
      if (shards[j].size() > shards[largest].size()) largest = j;
    }
    if (shards[largest].size() < 2) {
      throw ConfigError("not enough training samples for " +
                        std::to_string(cfg.num_clients) + " clients");
    }
    shards[k].push_back(shards[largest].back());
    shards[largest].pop_back();
  }

  std::vector<ClientDataset> clients(n_clients);
  for (std::size_t k = 0; k < n_clients; ++k) {
    clients[k].client_id = static_cast<int>(k);
    clients[k].data = train.select(shards[k]);
  }
  return clients;
}

ClientDataset flip_labels(const ClientDataset& dataset, int num_classes,
                          Rng& rng) {
  if (num_classes < 2) throw ConfigError("label flipping needs >= 2 classes");
  ClientDataset out = dataset;
  for (int& label : out.data.y) {
    const auto shift =
        1 + static_cast<int>(rng.uniform_index(
                static_cast<std::uint64_t>(num_classes - 1)));
    label = (label + shift) % num_classes;
  }
  return out;
}

double mean_label_entropy(std::span<const ClientDataset> clients,
                          int num_classes) {
  if (clients.empty()) return 0.0;
  double total = 0.0;
  for (const auto& client : clients) {
    Vector hist = Vector::Zero(num_classes);
    for (const int label : client.data.y) hist[label] += 1.0;
    if (client.size() > 0) hist /= static_cast<double>(client.size());
    total += entropy(hist);
  }
  return total / static_cast<double>(clients.size());
}

void write_clients_csv(std::ostream& out,
                       std::span<const ClientDataset> clients) {
  const Eigen::Index dim = clients.empty() ? 0 : clients.front().data.x.cols();
  out << "client_id,role,y";
  for (Eigen::Index j = 0; j < dim; ++j) out << ",x" << j;
  out << '\n';
  for (const auto& client : clients) {
    for (std::size_t i = 0; i < client.size(); ++i) {
      out << client.client_id << ',' << role_name(client.role) << ','
          << client.data.y[i];
      for (Eigen::Index j = 0; j < dim; ++j) {
        out << ',' << format_double(client.data.x(static_cast<Eigen::Index>(i), j));
      }
      out << '\n';
    }
  }
}

}  // namespace fedsim
