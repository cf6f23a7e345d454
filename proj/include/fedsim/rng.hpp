#pragma once

#include <cstdint>
#include <initializer_list>
#include <utility>
#include <span>
#include <vector>

namespace fedsim {

/// xoshiro256** 1.0 (Blackman & Vigna), seeded through splitmix64.
///
/// All sampling in the simulator goes through this generator and the
/// distribution helpers below instead of <random> distributions, whose
/// output differs between standard library implementations. Every stream is
/// therefore bit-reproducible across platforms and compilers.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed);

  /// Stream keyed by an ordered list of integers, e.g. (seed, round, client).
  static Rng derive(std::initializer_list<std::uint64_t> keys);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next(); }

  std::uint64_t next();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, bound); rejection sampling, no modulo bias.
  std::uint64_t uniform_index(std::uint64_t bound);
  /// Standard normal via Box-Muller (one value per call, cached pair).
  double normal();
  /// Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 uses the boost trick.
  double gamma(double shape);
  /// Symmetric Dirichlet(concentration, ..., concentration) of size n.
  std::vector<double> dirichlet(std::size_t n, double concentration);

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }
  template <typename T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

 private:
  std::uint64_t s_[4];
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace fedsim
