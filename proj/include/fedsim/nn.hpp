#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "fedsim/rng.hpp"

namespace fedsim {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ModelShape {
  int input_dim = 20;
  int hidden1 = 32;
  int hidden2 = 32;
  int num_classes = 5;

  void validate() const;
  /// Total number of scalars across all parameter blocks.
  std::size_t parameter_count() const;
  bool operator==(const ModelShape&) const = default;
};

/// The eight parameter blocks of the two-headed MLP.
///
///   backbone   h1 = relu(W1 x + b1)          (feature tap h_x)
///   deep       h2 = relu(W2 h1 + b2)
///   main head  z  = W3 h2 + b3
///   aux head   u  = Wa h1 + ba
///
/// The main classifier uses (W1, b1, W2, b2, W3, b3); the auxiliary
/// classifier shares the backbone and owns (Wa, ba).
struct ParamBlocks {
  Matrix W1;
  Vector b1;
  Matrix W2;
  Vector b2;
  Matrix W3;
  Vector b3;
  Matrix Wa;
  Vector ba;

  ModelShape shape() const;

  /// Visits every block in the canonical flattening order
  /// W1, b1, W2, b2, W3, b3, Wa, ba (matrices column-major).
  template <typename Fn>
  void for_each_block(Fn&& fn) {
    fn(W1); fn(b1); fn(W2); fn(b2); fn(W3); fn(b3); fn(Wa); fn(ba);
  }
  template <typename Fn>
  void for_each_block(Fn&& fn) const {
    fn(W1); fn(b1); fn(W2); fn(b2); fn(W3); fn(b3); fn(Wa); fn(ba);
  }

  std::size_t size() const;
  Vector flatten() const;
  /// Overwrites all blocks from a flat vector of matching length.
  void assign_flat(const Vector& flat);

  void set_zero();
  bool all_finite() const;

  bool operator==(const ParamBlocks& other) const;
};

struct MlpParams : ParamBlocks {
  static MlpParams zeros(const ModelShape& shape);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static MlpParams init(const ModelShape& shape, Rng& rng);
  static MlpParams from_flat(const ModelShape& shape, const Vector& flat);

  /// this += scale * direction (any congruent block set).
  void add_scaled(const ParamBlocks& direction, double scale);
};

struct Gradients : ParamBlocks {
  static Gradients zeros(const ModelShape& shape);
};

/// Activations cached by one forward pass over a batch (rows = samples).
struct ForwardTrace {
  Matrix pre1;       // W1 x + b1
  Matrix features;   // h_x = relu(pre1)
  Matrix pre2;
  Matrix hidden2;
  Matrix main_logits;
  Matrix aux_logits;
  Matrix main_probs;
  Matrix aux_probs;
};

ForwardTrace forward(const MlpParams& params, const Matrix& inputs);

/// Row-wise softmax(logits / tau).
Matrix sharpen(const Matrix& logits, double tau);
Vector sharpen(const Vector& logits, double tau);
Matrix softmax_rows(const Matrix& logits);

inline constexpr double kLogFloor = 1e-12;

/// -sum target_i log(max(predicted_i, 1e-12)).
double cross_entropy(const Vector& target, const Vector& predicted);
/// sum p_i log(p_i / q_i).
double kl_div(const Vector& p, const Vector& q);
double entropy(const Vector& p);

/// Which terms make up the scalar loss, each averaged over the batch:
///   main_ce * CE(main_targets, main head)
/// + aux_ce  * CE(aux_targets, aux head)
/// + self_kl * KL(main(tau) || aux(tau))
/// Targets are constants; nothing flows back into them.
struct LossSpec {
  double main_ce = 0.0;
  double aux_ce = 0.0;
  double self_kl = 0.0;
  double tau = 1.0;

  static LossSpec main_only() { return {1.0, 0.0, 0.0, 1.0}; }
};

struct Batch {
  Matrix inputs;        // B x input_dim
  Matrix main_targets;  // B x C, rows are probability vectors
  Matrix aux_targets;   // B x C; may be empty when aux_ce == 0

  Eigen::Index size() const { return inputs.rows(); }
};

/// One-hot rows for integer labels.
Matrix one_hot(std::span<const int> labels, int num_classes);

double loss(const MlpParams& params, const Batch& batch, const LossSpec& spec);
/// Analytic gradient of `loss` with respect to every block.
Gradients backward(const MlpParams& params, const Batch& batch,
                   const LossSpec& spec);
/// Same, reusing an existing forward trace computed from `params`.
Gradients backward(const MlpParams& params, const ForwardTrace& trace,
                   const Batch& batch, const LossSpec& spec);

/// Central differences, one coordinate at a time.
Gradients finite_diff_grad(const MlpParams& params, const Batch& batch,
                           const LossSpec& spec, double epsilon);
/// Central differences of an arbitrary scalar function of the parameters.
Gradients finite_diff_grad(const MlpParams& params,
                           const std::function<double(const MlpParams&)>& f,
                           double epsilon);

struct OptimizerState {
  ParamBlocks momentum_buffer;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-5;

  static OptimizerState create(const ModelShape& shape, double learning_rate,
                               double momentum, double weight_decay);
};

/// buffer = momentum * buffer + grad + weight_decay * param
/// param  = param - lr * buffer
MlpParams sgd_step(const MlpParams& params, const Gradients& grads,
                   OptimizerState& state);

/// Index of the largest main-head probability per row.
std::vector<int> predict(const MlpParams& params, const Matrix& inputs);
double accuracy(const MlpParams& params, const Matrix& inputs,
                std::span<const int> labels);

}  // namespace fedsim
