#include "fedsim/defender.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "fedsim/error.hpp"

namespace fedsim {

void DefenderConfig::validate() const {
  if (k_neighbors < 1) throw ConfigError("defender.k_neighbors must be >= 1");
  if (batch_size < 1) throw ConfigError("defender.batch_size must be >= 1");
  if (k_neighbors >= batch_size) {
    throw ConfigError("defender.k_neighbors must be smaller than batch_size");
  }
  if (!(tau > 0.0)) throw ConfigError("defender.tau must be > 0");
  if (!(learning_rate >= 0.0)) {
    throw ConfigError("defender.learning_rate must be >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("defender.momentum must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) {
    throw ConfigError("defender.weight_decay must be >= 0");
  }
  if (local_epochs < 1) throw ConfigError("defender.local_epochs must be >= 1");
}

NoisyBatch knn_synthetic_labels(const MlpParams& params, const LabeledSet& batch,
                                int k, Rng& rng) {
  const auto n = batch.size();
  if (k < 1 || static_cast<std::size_t>(k) >= n) {
    throw ConfigError("k-NN label synthesis needs batch size > k (batch " +
                      std::to_string(n) + ", k " + std::to_string(k) + ")");
  }
  const Matrix h = forward(params, batch.x).features;
  const Vector sq_norm = h.rowwise().squaredNorm();
  Matrix dist = -2.0 * h * h.transpose();
  dist.colwise() += sq_norm;
  dist.rowwise() += sq_norm.transpose();

  NoisyBatch out{batch.x, std::vector<int>(n)};
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    order.erase(order.begin() + static_cast<std::ptrdiff_t>(i));
    const auto row = static_cast<Eigen::Index>(i);
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double da = dist(row, static_cast<Eigen::Index>(a));
                        const double db = dist(row, static_cast<Eigen::Index>(b));
                        return da < db || (da == db && a < b);
                      });
    const std::size_t pick =
        order[rng.uniform_index(static_cast<std::uint64_t>(k))];
    out.labels[i] = batch.y[pick];
  }
  return out;
}

MlpParams perturb_step(const MlpParams& params, const NoisyBatch& noisy,
                       double learning_rate) {
  const Batch b{noisy.x, one_hot(noisy.labels, params.shape().num_classes), {}};
  const Gradients g = backward(params, b, LossSpec::main_only());
  MlpParams out = params;
  out.add_scaled(g, -learning_rate);
  return out;
}

MlpParams meta_correction(const MlpParams& params, const MlpParams& perturbed,
                          const LabeledSet& clean_batch, double learning_rate) {
  const Batch b{clean_batch.x,
                one_hot(clean_batch.y, params.shape().num_classes), {}};
  const Gradients g = backward(perturbed, b, LossSpec::main_only());
  MlpParams out = params;
  out.add_scaled(g, -learning_rate);
  return out;
}

RefinedBatch refine_labels(const MlpParams& global, const LabeledSet& batch,
                           double tau) {
  const ForwardTrace t = forward(global, batch.x);
  const Matrix sharpened = sharpen(t.main_logits, tau);
  const Eigen::Index n = t.main_probs.rows();
  const Eigen::Index classes = t.main_probs.cols();
  RefinedBatch out{Matrix(n, classes), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto label = static_cast<Eigen::Index>(batch.y[static_cast<std::size_t>(i)]);
    // cos(one_hot(y), p) = p_y / ||p||
    const double alpha = std::clamp(
        t.main_probs(i, label) / t.main_probs.row(i).norm(), 0.0, 1.0);
    out.alpha[i] = alpha;
    out.targets.row(i) = alpha * sharpened.row(i);
    out.targets(i, label) += 1.0 - alpha;
  }
  return out;
}

KdLosses kd_losses(const MlpParams& params, const MlpParams& global,
                   const LabeledSet& batch, double tau) {
  const RefinedBatch refined = refine_labels(global, batch, tau);
  const ForwardTrace t = forward(params, batch.x);
  const Matrix main_sharp = sharpen(t.main_logits, tau);
  const Matrix aux_sharp = sharpen(t.aux_logits, tau);
  KdLosses out;
  const auto n = static_cast<double>(batch.size());
  for (Eigen::Index i = 0; i < t.aux_probs.rows(); ++i) {
    out.global += cross_entropy(refined.targets.row(i).transpose(),
                                t.aux_probs.row(i).transpose());
    out.self += kl_div(main_sharp.row(i).transpose(),
                       aux_sharp.row(i).transpose());
  }
  out.global /= n;
  out.self /= n;
  return out;
}

Batch distillation_batch(const MlpParams& global, const LabeledSet& batch,
                         double tau, int num_classes) {
  return Batch{batch.x, one_hot(batch.y, num_classes),
               refine_labels(global, batch, tau).targets};
}

LossSpec distillation_loss(double tau) { return LossSpec{1.0, 1.0, 1.0, tau}; }

MlpParams train_batch(const MlpParams& local, const LabeledSet& batch,
                      const MlpParams& global, const DefenderConfig& cfg,
                      OptimizerState& opt, Rng& rng) {
  const int classes = local.shape().num_classes;
  if (!cfg.defense_enabled) {
    const Batch b{batch.x, one_hot(batch.y, classes), {}};
    return sgd_step(local, backward(local, b, LossSpec::main_only()), opt);
  }

  // Step 1: vaccinate against synthetic label noise. A batch too small for k
  // neighbours uses every other sample; a single sample has no neighbour and
  // keeps its own label.
  MlpParams theta = local;
  const int k = std::min<int>(cfg.k_neighbors, static_cast<int>(batch.size()) - 1);
  NoisyBatch noisy = k >= 1 ? knn_synthetic_labels(theta, batch, k, rng)
                            : NoisyBatch{batch.x, batch.y};
  const MlpParams perturbed = perturb_step(theta, noisy, cfg.learning_rate);
  theta = meta_correction(theta, perturbed, batch, cfg.learning_rate);

  // Step 2: distil the refined global knowledge, fresh forward pass at the
  // meta-updated parameters.
  const Batch b = distillation_batch(global, batch, cfg.tau, classes);
  return sgd_step(theta, backward(theta, b, distillation_loss(cfg.tau)), opt);
}

Update local_train_epoch(const MlpParams& local, const ClientDataset& dataset,
                         const MlpParams& global, const DefenderConfig& cfg,
                         OptimizerState& opt, Rng& rng) {
  cfg.validate();
  if (dataset.size() == 0) throw ConfigError("client dataset is empty");
  const std::size_t batch_size =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), dataset.size());

  MlpParams theta = local;
  std::vector<std::size_t> order(dataset.size());
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t stop = std::min(order.size(), start + batch_size);
      const LabeledSet batch = dataset.data.select(
          std::span<const std::size_t>(order).subspan(start, stop - start));
      theta = train_batch(theta, batch, global, cfg, opt, rng);
    }
  }
  return Update{theta.flatten() - global.flatten(),
                static_cast<double>(dataset.size()), dataset.client_id, 0};
}

}  // namespace fedsim
