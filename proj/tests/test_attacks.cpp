#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fedsim/attacks.hpp"
#include "fedsim/error.hpp"
#include "fedsim/oracle.hpp"

using namespace fedsim;

namespace {

std::vector<Update> updates(std::initializer_list<std::initializer_list<double>> deltas) {
  std::vector<Update> out;
  int id = 0;
  for (const auto& d : deltas) {
    Update u;
    u.delta = Vector(static_cast<Eigen::Index>(d.size()));
    Eigen::Index i = 0;
    for (double x : d) u.delta[i++] = x;
    u.client_id = id++;
    out.push_back(u);
  }
  return out;
}

std::vector<Update> random_updates(Rng& rng, int n, int dim) {
  std::vector<Update> out(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    out[static_cast<std::size_t>(k)].client_id = k;
    out[static_cast<std::size_t>(k)].delta = Vector(dim);
    for (int j = 0; j < dim; ++j) out[static_cast<std::size_t>(k)].delta[j] = 1.0 + rng.normal();
  }
  return out;
}

}  // namespace

TEST_SUITE("attacks") {

TEST_CASE("attack names round-trip") {
  for (AttackKind k : {AttackKind::kLabelFlip, AttackKind::kLie, AttackKind::kStatOpt,
                       AttackKind::kDynOpt}) {
    CHECK(parse_attack(attack_name(k)) == k);
  }
  CHECK_THROWS_AS(parse_attack("gaussian"), ConfigError);
  CHECK_FALSE(uses_benign_updates(AttackKind::kLabelFlip));
  CHECK(uses_benign_updates(AttackKind::kDynOpt));
}

TEST_CASE("LIE examples") {
  CHECK(lie_update(updates({{0}, {2}}), 0.3)[0] == doctest::Approx(1.3).epsilon(1e-12));
  const auto same = updates({{1.5, -2}, {1.5, -2}, {1.5, -2}});
  CHECK(lie_update(same, 0.3) == same[0].delta);
  const auto mixed = updates({{1, 4}, {3, 0}, {8, 2}});
  CHECK(lie_update(mixed, 0.0)[0] == doctest::Approx(4.0));
  CHECK(lie_update(mixed, 0.0)[1] == doctest::Approx(2.0));
  CHECK(lie_update(updates({{5, 6}}), 0.3) == updates({{5, 6}})[0].delta);
}

TEST_CASE("LIE is invariant to the order of benign updates") {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    auto u = random_updates(rng, 5, 4);
    const Vector a = lie_update(u, 0.3);
    rng.shuffle(u);
    CHECK(lie_update(u, 0.3) == a);
  }
}

TEST_CASE("STAT-OPT examples") {
  const auto mu = updates({{3, 4}});
  const Vector zero = stat_opt_update(mu, 5.0);
  CHECK(zero.cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(stat_opt_update(mu, 0.0) == mu[0].delta);
  const Vector flipped = stat_opt_update(mu, 10.0);
  CHECK((flipped + mu[0].delta).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("STAT-OPT with a zero mean returns the mean") {
  set_warnings_enabled(false);
  const Vector v = stat_opt_update(updates({{1, -1}, {-1, 1}}), 3.0);
  CHECK(v.isZero(0.0));
}

TEST_CASE("DYN-OPT closed form on two points") {
  const DynOptResult r = dyn_opt_update(updates({{0}, {2}}), 10.0, 1e-5);
  CHECK(std::abs(r.gamma - 1.0) <= 1e-5);
  CHECK(r.feasible);
  CHECK(std::abs(r.delta[0]) <= 1e-5);
}

TEST_CASE("DYN-OPT on identical updates stays at the mean") {
  const auto same = updates({{2, 2}, {2, 2}, {2, 2}});
  const DynOptResult r = dyn_opt_update(same, 10.0, 1e-5);
  CHECK(r.gamma <= 1e-5);
  CHECK((r.delta - same[0].delta).norm() <= 1e-5);
}

TEST_CASE("DYN-OPT keeps gamma_init when it is feasible") {
  const DynOptResult r = dyn_opt_update(updates({{0, 0}, {100, 0}, {50, 1}}), 0.5, 1e-5);
  CHECK(r.gamma == 0.5);
}

TEST_CASE("DYN-OPT result is feasible and tight on random instances") {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const auto u = random_updates(rng, 2 + static_cast<int>(rng.uniform_index(6)), 3);
    const double threshold = 1e-5;
    const DynOptResult r = dyn_opt_update(u, 10.0, threshold);
    if (!r.feasible) continue;
    CHECK(dyn_opt_feasible(u, r.delta));
    if (r.gamma < 10.0) {
      const Vector mean = update_moments(u).mean;
      const Vector beyond = mean - (r.gamma + 2 * threshold) * mean / mean.norm();
      CHECK_FALSE(dyn_opt_feasible(u, beyond));
    }
  }
}

TEST_CASE("STAT-OPT inside the DYN-OPT bound is a feasible point on the same ray") {
  const auto u = updates({{0}, {2}});
  CHECK(dyn_opt_feasible(u, stat_opt_update(u, 0.5)));
  CHECK_FALSE(dyn_opt_feasible(u, stat_opt_update(u, 1.5)));
}

TEST_CASE("scenario-2 dispatch") {
  const auto u = updates({{0}, {2}});
  AttackConfig cfg;
  cfg.kind = AttackKind::kLie;
  CHECK(craft_scenario2_delta(cfg, u, 1)[0] == doctest::Approx(1.3));
  cfg.kind = AttackKind::kStatOpt;
  cfg.stat_gamma = 1.0;
  CHECK(craft_scenario2_delta(cfg, u, 1)[0] == doctest::Approx(0.0));
  cfg.kind = AttackKind::kDynOpt;
  CHECK(std::abs(craft_scenario2_delta(cfg, u, 1)[0]) <= 1e-5);
  set_warnings_enabled(false);
  CHECK(craft_scenario2_delta(cfg, {}, 3).isZero(0.0));
  CHECK(craft_scenario2_delta(cfg, {}, 3).size() == 3);
  cfg.kind = AttackKind::kLabelFlip;
  CHECK_THROWS_AS(craft_scenario2_delta(cfg, u, 1), ConfigError);
  CHECK_THROWS_AS(lie_update({}, 0.3), ConfigError);
}

TEST_CASE("attack config validation") {
  AttackConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.stat_gamma = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = AttackConfig{};
  cfg.dyn_threshold = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = AttackConfig{};
  cfg.lie_z = NAN;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("label flip update: zero step and determinism") {
  const ModelShape s{4, 5, 5, 3};
  Rng rng(3);
  const MlpParams global = MlpParams::init(s, rng);
  ClientDataset ds{2, Role::kMalicious, LabeledSet{Matrix(40, 4), std::vector<int>(40)}};
  for (Eigen::Index i = 0; i < ds.data.x.size(); ++i) ds.data.x.data()[i] = rng.normal();
  for (auto& y : ds.data.y) y = static_cast<int>(rng.uniform_index(3));

  DefenderConfig training;
  Rng a(9), b(9);
  const Update ua = label_flip_update(global, ds, training, a);
  CHECK(ua.delta == label_flip_update(global, ds, training, b).delta);
  CHECK(ua.client_id == 2);
  CHECK_FALSE(ua.delta.isZero(0.0));

  training.learning_rate = 0.0;
  Rng c(9);
  CHECK(label_flip_update(global, ds, training, c).delta.isZero(0.0));
}

TEST_CASE("attack oracle suite passes") { CHECK(attack_suite().passed()); }

}  // TEST_SUITE
