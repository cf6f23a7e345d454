#pragma once

#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/nn.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/update.hpp"

namespace fedsim {

struct DefenderConfig {
  int k_neighbors = 10;
  double tau = 2.0;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  int batch_size = 64;
  int local_epochs = 1;
  /// Off: plain cross-entropy mini-batch SGD (the undefended client).
  bool defense_enabled = true;

  void validate() const;
};

/// Mini-batch with labels re-drawn from feature-space neighbours.
struct NoisyBatch {
  Matrix x;
  std::vector<int> labels;
};

/// Soft targets y_hat = (1 - alpha) y + alpha * sharpen(global(x), tau).
struct RefinedBatch {
  Matrix targets;  // B x C
  Vector alpha;    // B
};

struct KdLosses {
  double global = 0.0;  // CE(y_hat, aux head)
  double self = 0.0;    // KL(main(tau) || aux(tau))
  double total() const { return global + self; }
};

/// For every sample, pick one of its k nearest batch neighbours (Euclidean
/// distance between backbone features, self excluded, ties to the lower
/// index) uniformly at random and take that neighbour's label.
NoisyBatch knn_synthetic_labels(const MlpParams& params, const LabeledSet& batch,
                                int k, Rng& rng);

/// theta - lr * grad CE(noisy labels, main head); plain step, no momentum.
MlpParams perturb_step(const MlpParams& params, const NoisyBatch& noisy,
                       double learning_rate);

/// First-order meta update: the clean-batch CE gradient is evaluated at the
/// perturbed parameters and applied to the original ones.
MlpParams meta_correction(const MlpParams& params, const MlpParams& perturbed,
                          const LabeledSet& clean_batch, double learning_rate);

RefinedBatch refine_labels(const MlpParams& global, const LabeledSet& batch,
                           double tau);

KdLosses kd_losses(const MlpParams& params, const MlpParams& global,
                   const LabeledSet& batch, double tau);

/// Loss weights and targets of the Step-2 objective
/// L_CE + L_Global + L_Self for one batch.
Batch distillation_batch(const MlpParams& global, const LabeledSet& batch,
                         double tau, int num_classes);
LossSpec distillation_loss(double tau);

/// One mini-batch of local training. Defended: meta update, then one
/// optimizer step on the distillation objective. Undefended: one optimizer
/// step on plain cross-entropy.
MlpParams train_batch(const MlpParams& local, const LabeledSet& batch,
                      const MlpParams& global, const DefenderConfig& cfg,
                      OptimizerState& opt, Rng& rng);

/// `local_epochs` passes over shuffled mini-batches starting from `local`.
/// The returned delta is relative to `global`, weight = |D_k|.
Update local_train_epoch(const MlpParams& local, const ClientDataset& dataset,
                         const MlpParams& global, const DefenderConfig& cfg,
                         OptimizerState& opt, Rng& rng);

}  // namespace fedsim
