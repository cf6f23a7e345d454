#pragma once

#include <vector>

#include "fedsim/nn.hpp"

namespace fedsim {

/// Flattened parameter delta a client sends to the server for one round.
struct Update {
  Vector delta;
  double weight = 1.0;  // |D_k|
  int client_id = 0;
  int round = 0;
};

/// Deltas ordered by client id (stable), the canonical order every
/// aggregation rule works in.
std::vector<const Update*> sorted_by_client(const std::vector<Update>& updates);

}  // namespace fedsim
