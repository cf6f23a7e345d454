#pragma once

#include <cstdint>
#include <string>

namespace fedsim::testing {

struct PropertyResult {
  int cases = 0;
  int failures = 0;
  std::string first_failure;

  bool passed() const { return cases > 0 && failures == 0; }
  void fail(int index, const std::string& what);
};

/// Every aggregator returns the same delta and kept set, bit for bit, for a
/// shuffled copy of the same updates.
PropertyResult aggregator_permutation_invariance(std::uint64_t seed, int cases);

/// Rescaling |D_k| leaves every robust rule's output unchanged.
PropertyResult robust_weight_scaling_invariance(std::uint64_t seed, int cases);

/// Refined labels stay on the probability simplex and equal
/// (1 - alpha) y + alpha * sharpen(global, tau).
PropertyResult refined_batch_simplex(std::uint64_t seed, int cases);

/// Replaying one defended batch: a fresh synthetic-label draw with the same
/// perturbed parameters reproduces the result exactly, while applying the
/// Step-1 gradient directly to theta does not.
PropertyResult step1_isolation_replay(std::uint64_t seed, int cases);

}  // namespace fedsim::testing
