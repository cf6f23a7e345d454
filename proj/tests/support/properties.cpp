#include "properties.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include "fedsim/aggregation.hpp"
#include "fedsim/defender.hpp"
#include "fedsim/nn.hpp"
#include "fedsim/rng.hpp"

namespace fedsim::testing {

namespace {

int draw_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
}

std::vector<Update> random_updates(Rng& rng, int n, int dim) {
  std::vector<int> ids(40);
  std::iota(ids.begin(), ids.end(), 0);
  rng.shuffle(ids);
  std::vector<Update> out;
  for (int k = 0; k < n; ++k) {
    Vector d(dim);
    for (int j = 0; j < dim; ++j) d[j] = rng.normal();
    // Duplicate an earlier delta now and then to exercise tie-breaks.
    if (k > 0 && rng.uniform() < 0.2) d = out[rng.uniform_index(out.size())].delta;
    out.push_back(Update{d, 1.0 + 99.0 * rng.uniform(), ids[static_cast<std::size_t>(k)], 0});
  }
  return out;
}

std::vector<AggConfig> configs_for(Rng& rng, int n) {
  std::vector<AggConfig> out;
  for (AggKind kind : {AggKind::kFedAvg, AggKind::kMedian, AggKind::kTrimmedMean,
                       AggKind::kNormBound, AggKind::kMultiKrum, AggKind::kResidualBase}) {
    AggConfig c;
    c.kind = kind;
    switch (kind) {
      case AggKind::kTrimmedMean: c.f_expected = draw_int(rng, 0, (n - 1) / 2); break;
      case AggKind::kNormBound: c.f_expected = draw_int(rng, 0, n - 1); break;
      case AggKind::kMultiKrum:
        c.f_expected = draw_int(rng, 0, n - 3);
        c.multikrum_c = draw_int(rng, 1, n - *c.f_expected);
        break;
      default: break;
    }
    out.push_back(c);
  }
  return out;
}

bool same(const AggResult& a, const AggResult& b) {
  return a.global_delta == b.global_delta && a.kept_clients == b.kept_clients &&
         a.per_client_weight == b.per_client_weight;
}

MlpParams random_params(const ModelShape& shape, Rng& rng, double scale) {
  MlpParams p = MlpParams::zeros(shape);
  p.add_scaled(MlpParams::init(shape, rng), scale);
  return p;
}

LabeledSet random_batch(Rng& rng, int rows, const ModelShape& shape) {
  LabeledSet b{Matrix(rows, shape.input_dim), std::vector<int>(static_cast<std::size_t>(rows))};
  for (Eigen::Index i = 0; i < b.x.size(); ++i) b.x.data()[i] = rng.normal();
  for (int& y : b.y) y = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(shape.num_classes)));
  return b;
}

ModelShape random_shape(Rng& rng) {
  return ModelShape{draw_int(rng, 2, 8), draw_int(rng, 2, 8), draw_int(rng, 2, 8),
                    draw_int(rng, 2, 6)};
}

}  // namespace

void PropertyResult::fail(int index, const std::string& what) {
  if (failures++ == 0) first_failure = "case " + std::to_string(index) + ": " + what;
}

PropertyResult aggregator_permutation_invariance(std::uint64_t seed, int cases) {
  PropertyResult r;
  Rng rng = Rng::derive({seed, 0x9E41});
  for (int t = 0; t < cases; ++t) {
    const int n = draw_int(rng, 3, 8);
    const auto updates = random_updates(rng, n, draw_int(rng, 1, 5));
    auto shuffled = updates;
    rng.shuffle(shuffled);
    for (const AggConfig& c : configs_for(rng, n)) {
      if (!same(aggregate(c, updates), aggregate(c, shuffled))) {
        r.fail(t, std::string(aggregator_name(c.kind)) + " changed under permutation");
      }
    }
    ++r.cases;
  }
  return r;
}

PropertyResult robust_weight_scaling_invariance(std::uint64_t seed, int cases) {
  PropertyResult r;
  Rng rng = Rng::derive({seed, 0x5CA1});
  for (int t = 0; t < cases; ++t) {
    const int n = draw_int(rng, 3, 8);
    const auto updates = random_updates(rng, n, draw_int(rng, 1, 5));
    auto scaled = updates;
    for (Update& u : scaled) u.weight *= 0.01 + 100.0 * rng.uniform();
    for (const AggConfig& c : configs_for(rng, n)) {
      if (c.kind == AggKind::kFedAvg) continue;
      const AggResult a = aggregate(c, updates);
      const AggResult b = aggregate(c, scaled);
      if (a.global_delta != b.global_delta || a.kept_clients != b.kept_clients) {
        r.fail(t, std::string(aggregator_name(c.kind)) + " depends on sample weights");
      }
    }
    ++r.cases;
  }
  return r;
}

PropertyResult refined_batch_simplex(std::uint64_t seed, int cases) {
  PropertyResult r;
  Rng rng = Rng::derive({seed, 0x51A9});
  for (int t = 0; t < cases; ++t) {
    const ModelShape shape = random_shape(rng);
    // Large scales push the global model towards saturated predictions.
    const MlpParams global = random_params(shape, rng, 1.0 + 20.0 * rng.uniform());
    const LabeledSet batch = random_batch(rng, draw_int(rng, 1, 16), shape);
    const double tau = 0.25 + 4.0 * rng.uniform();
    const RefinedBatch refined = refine_labels(global, batch, tau);
    const Matrix sharp = sharpen(forward(global, batch.x).main_logits, tau);
    const Matrix y = one_hot(batch.y, shape.num_classes);
    for (Eigen::Index i = 0; i < refined.targets.rows(); ++i) {
      const double a = refined.alpha[i];
      const Eigen::RowVectorXd expected = (1.0 - a) * y.row(i) + a * sharp.row(i);
      if (!(a >= 0.0 && a <= 1.0)) r.fail(t, "alpha outside [0, 1]");
      if (refined.targets.row(i).minCoeff() < 0.0) r.fail(t, "negative refined entry");
      if (std::abs(refined.targets.row(i).sum() - 1.0) > 1e-9) r.fail(t, "row does not sum to 1");
      if ((refined.targets.row(i) - expected).cwiseAbs().maxCoeff() > 1e-12) {
        r.fail(t, "not the alpha blend of label and sharpened prediction");
      }
    }
    ++r.cases;
  }
  return r;
}

PropertyResult step1_isolation_replay(std::uint64_t seed, int cases) {
  PropertyResult r;
  Rng rng = Rng::derive({seed, 0x1501});
  for (int t = 0; t < cases; ++t) {
    const ModelShape shape = random_shape(rng);
    const MlpParams theta = random_params(shape, rng, 1.5);
    const MlpParams global = random_params(shape, rng, 1.5);
    DefenderConfig cfg;
    cfg.k_neighbors = draw_int(rng, 1, 4);
    cfg.batch_size = 16;
    cfg.learning_rate = 0.05 + 0.2 * rng.uniform();
    const LabeledSet batch = random_batch(rng, draw_int(rng, cfg.k_neighbors + 1, 12), shape);
    const std::uint64_t stream = rng.next();
    OptimizerState opt = OptimizerState::create(shape, cfg.learning_rate, 0.9, 1e-5);

    OptimizerState run_opt = opt;
    Rng run_rng(stream);
    const MlpParams reference = train_batch(theta, batch, global, cfg, run_opt, run_rng);

    auto step2 = [&](const MlpParams& meta) {
      OptimizerState o = opt;
      const Batch b = distillation_batch(global, batch, cfg.tau, shape.num_classes);
      return sgd_step(meta, backward(meta, b, distillation_loss(cfg.tau)), o);
    };

    Rng replay_rng(stream);
    const NoisyBatch noisy = knn_synthetic_labels(theta, batch, cfg.k_neighbors, replay_rng);
    const MlpParams perturbed = perturb_step(theta, noisy, cfg.learning_rate);
    if (!(step2(meta_correction(theta, perturbed, batch, cfg.learning_rate)) == reference)) {
      r.fail(t, "replay with the same synthetic labels differs");
    }

    // A fresh label draw enters only through its own theta-tilde: the
    // defended batch equals the manual pipeline rebuilt from that point.
    OptimizerState fresh_opt = opt;
    Rng fresh_rng(stream ^ 0xF00D);
    const MlpParams fresh = train_batch(theta, batch, global, cfg, fresh_opt, fresh_rng);
    Rng fresh_replay(stream ^ 0xF00D);
    const NoisyBatch other = knn_synthetic_labels(theta, batch, cfg.k_neighbors, fresh_replay);
    const MlpParams other_perturbed = perturb_step(theta, other, cfg.learning_rate);
    if (!(step2(meta_correction(theta, other_perturbed, batch, cfg.learning_rate)) == fresh)) {
      r.fail(t, "fresh synthetic labels acted outside theta-tilde");
    }

    // Ablation: the Step-1 gradient applied straight to theta.
    if (step2(perturbed) == reference) {
      r.fail(t, "applying the perturbation gradient directly gave the same result");
    }
    ++r.cases;
  }
  return r;
}

}  // namespace fedsim::testing
