#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "fedsim/nn.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

struct SyntheticSpec {
  int num_classes = 5;
  int input_dim = 20;
  int train_per_class = 2000;
  int test_per_class = 200;
  double class_separation = 2.5;
  double noise_std = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Sample {
  Vector x;
  int y = 0;
};

/// Row-major sample storage: row i of `x` is the feature vector of label y[i].
struct LabeledSet {
  Matrix x;
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
  bool empty() const { return y.empty(); }
  Sample sample(std::size_t i) const;
  /// Rows picked by index, in the given order.
  LabeledSet select(std::span<const std::size_t> rows) const;
};

enum class Role { kBenign, kMalicious };

const char* role_name(Role role);

struct ClientDataset {
  int client_id = 0;
  Role role = Role::kBenign;
  LabeledSet data;

  std::size_t size() const { return data.size(); }
};

struct PartitionConfig {
  int num_clients = 20;
  double beta = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticData {
  LabeledSet train;
  LabeledSet test;
  /// Unit direction of each class mean (C x input_dim).
  Matrix class_directions;
};

/// Gaussian class clusters around separation * u_c. The directions u_c are
/// orthonormal when input_dim >= num_classes, random unit vectors otherwise.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// Per-class Dirichlet(beta) proportions over clients, converted to integer
/// counts by largest-remainder rounding. Shards are disjoint and cover train.
///
/// A client left without samples triggers a re-draw of every class's
/// proportions (up to 100 attempts); after that, single samples are moved
/// from the largest shard into each empty one.
std::vector<ClientDataset> dirichlet_partition(const LabeledSet& train,
                                               const PartitionConfig& cfg,
                                               int num_classes);

/// Every label replaced by a uniformly chosen different class.
ClientDataset flip_labels(const ClientDataset& dataset, int num_classes,
                          Rng& rng);

/// Mean Shannon entropy of the per-client label histograms.
double mean_label_entropy(std::span<const ClientDataset> clients,
                          int num_classes);

/// CSV with header `client_id,role,y,x0..x{d-1}`.
void write_clients_csv(std::ostream& out,
                       std::span<const ClientDataset> clients);

}  // namespace fedsim
