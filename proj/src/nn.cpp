#include "fedsim/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fedsim/error.hpp"

namespace fedsim {

namespace {

Matrix relu(const Matrix& m) { return m.cwiseMax(0.0); }

Matrix relu_mask(const Matrix& pre) {
  return (pre.array() > 0.0).cast<double>().matrix();
}

Matrix add_bias(Matrix m, const Vector& bias) {
  m.rowwise() += bias.transpose();
  return m;
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse =
        mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

void check_batch(const MlpParams& params, const Batch& batch,
                 const LossSpec& spec) {
  const ModelShape shape = params.shape();
  if (batch.size() == 0) throw ConfigError("empty batch");
  if (batch.inputs.cols() != shape.input_dim) {
    throw ConfigError("batch input width " +
                      std::to_string(batch.inputs.cols()) +
                      " does not match input_dim " +
                      std::to_string(shape.input_dim));
  }
  auto check_targets = [&](const Matrix& t, const char* name) {
    if (t.rows() != batch.size() || t.cols() != shape.num_classes) {
      throw ConfigError(std::string(name) + " targets have wrong shape");
    }
  };
  if (spec.main_ce != 0.0) check_targets(batch.main_targets, "main");
  if (spec.aux_ce != 0.0) check_targets(batch.aux_targets, "aux");
  if (spec.self_kl != 0.0 && !(spec.tau > 0.0)) {
    throw ConfigError("sharpening temperature must be positive");
  }
}

double ce_term(const Matrix& targets, const Matrix& log_probs) {
  const double floor = std::log(kLogFloor);
  return -(targets.array() * log_probs.array().max(floor)).sum();
}

}  // namespace

void ModelShape::validate() const {
  if (input_dim < 1 || hidden1 < 1 || hidden2 < 1) {
    throw ConfigError("model dimensions must be >= 1");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
}

std::size_t ModelShape::parameter_count() const {
  const auto d = static_cast<std::size_t>(input_dim);
  const auto h1 = static_cast<std::size_t>(hidden1);
  const auto h2 = static_cast<std::size_t>(hidden2);
  const auto c = static_cast<std::size_t>(num_classes);
  return h1 * d + h1 + h2 * h1 + h2 + c * h2 + c + c * h1 + c;
}

ModelShape ParamBlocks::shape() const {
  return ModelShape{static_cast<int>(W1.cols()), static_cast<int>(W1.rows()),
                    static_cast<int>(W2.rows()), static_cast<int>(W3.rows())};
}

std::size_t ParamBlocks::size() const {
  std::size_t n = 0;
  for_each_block([&](const auto& block) { n += block.size(); });
  return n;
}

Vector ParamBlocks::flatten() const {
  Vector flat(static_cast<Eigen::Index>(size()));
  Eigen::Index offset = 0;
  for_each_block([&](const auto& block) {
    flat.segment(offset, block.size()) =
        Eigen::Map<const Vector>(block.data(), block.size());
    offset += block.size();
  });
  return flat;
}

void ParamBlocks::assign_flat(const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != size()) {
    throw ConfigError("flat parameter vector has length " +
                      std::to_string(flat.size()) + ", expected " +
                      std::to_string(size()));
  }
  Eigen::Index offset = 0;
  for_each_block([&](auto& block) {
    Eigen::Map<Vector>(block.data(), block.size()) =
        flat.segment(offset, block.size());
    offset += block.size();
  });
}

void ParamBlocks::set_zero() {
  for_each_block([](auto& block) { block.setZero(); });
}

bool ParamBlocks::all_finite() const {
  bool finite = true;
  for_each_block([&](const auto& block) { finite = finite && block.allFinite(); });
  return finite;
}

bool ParamBlocks::operator==(const ParamBlocks& other) const {
  return W1 == other.W1 && b1 == other.b1 && W2 == other.W2 &&
         b2 == other.b2 && W3 == other.W3 && b3 == other.b3 &&
         Wa == other.Wa && ba == other.ba;
}

MlpParams MlpParams::zeros(const ModelShape& shape) {
  shape.validate();
  MlpParams p;
  p.W1 = Matrix::Zero(shape.hidden1, shape.input_dim);
  p.b1 = Vector::Zero(shape.hidden1);
  p.W2 = Matrix::Zero(shape.hidden2, shape.hidden1);
  p.b2 = Vector::Zero(shape.hidden2);
  p.W3 = Matrix::Zero(shape.num_classes, shape.hidden2);
  p.b3 = Vector::Zero(shape.num_classes);
  p.Wa = Matrix::Zero(shape.num_classes, shape.hidden1);
  p.ba = Vector::Zero(shape.num_classes);
  return p;
}

MlpParams MlpParams::init(const ModelShape& shape, Rng& rng) {
  MlpParams p = zeros(shape);
  auto fill = [&](auto& block, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < block.size(); ++i) {
      block.data()[i] = (2.0 * rng.uniform() - 1.0) * bound;
    }
  };
  fill(p.W1, shape.input_dim);
  fill(p.b1, shape.input_dim);
  fill(p.W2, shape.hidden1);
  fill(p.b2, shape.hidden1);
  fill(p.W3, shape.hidden2);
  fill(p.b3, shape.hidden2);
  fill(p.Wa, shape.hidden1);
  fill(p.ba, shape.hidden1);
  return p;
}

MlpParams MlpParams::from_flat(const ModelShape& shape, const Vector& flat) {
  MlpParams p = zeros(shape);
  p.assign_flat(flat);
  return p;
}

void MlpParams::add_scaled(const ParamBlocks& direction, double scale) {
  W1 += scale * direction.W1;
  b1 += scale * direction.b1;
  W2 += scale * direction.W2;
  b2 += scale * direction.b2;
  W3 += scale * direction.W3;
  b3 += scale * direction.b3;
  Wa += scale * direction.Wa;
  ba += scale * direction.ba;
}

Gradients Gradients::zeros(const ModelShape& shape) {
  Gradients g;
  static_cast<ParamBlocks&>(g) = MlpParams::zeros(shape);
  return g;
}

ForwardTrace forward(const MlpParams& params, const Matrix& inputs) {
  if (inputs.cols() != params.W1.cols()) {
    throw ConfigError("input has " + std::to_string(inputs.cols()) +
                      " columns, model expects " +
                      std::to_string(params.W1.cols()));
  }
  ForwardTrace t;
  t.pre1 = add_bias(inputs * params.W1.transpose(), params.b1);
  t.features = relu(t.pre1);
  t.pre2 = add_bias(t.features * params.W2.transpose(), params.b2);
  t.hidden2 = relu(t.pre2);
  t.main_logits = add_bias(t.hidden2 * params.W3.transpose(), params.b3);
  t.aux_logits = add_bias(t.features * params.Wa.transpose(), params.ba);
  t.main_probs = softmax_rows(t.main_logits);
  t.aux_probs = softmax_rows(t.aux_logits);
  return t;
}

Matrix softmax_rows(const Matrix& logits) {
  return log_softmax_rows(logits).array().exp().matrix();
}

Matrix sharpen(const Matrix& logits, double tau) {
  if (!(tau > 0.0)) throw ConfigError("sharpening temperature must be positive");
  return softmax_rows(logits / tau);
}

Vector sharpen(const Vector& logits, double tau) {
  const Matrix row = logits.transpose();
  return sharpen(row, tau).row(0).transpose();
}

double cross_entropy(const Vector& target, const Vector& predicted) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    if (target[i] == 0.0) continue;
    h -= target[i] * std::log(std::max(predicted[i], kLogFloor));
  }
  return h;
}

double kl_div(const Vector& p, const Vector& q) {
  double d = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) d += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(d, 0.0);
}

double entropy(const Vector& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  }
  return h;
}

Matrix one_hot(std::span<const int> labels, int num_classes) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return m;
}

double loss(const MlpParams& params, const Batch& batch, const LossSpec& spec) {
  check_batch(params, batch, spec);
  const ForwardTrace t = forward(params, batch.inputs);
  const double n = static_cast<double>(batch.size());
  double total = 0.0;
  if (spec.main_ce != 0.0) {
    total += spec.main_ce * ce_term(batch.main_targets,
                                    log_softmax_rows(t.main_logits)) / n;
  }
  if (spec.aux_ce != 0.0) {
    total += spec.aux_ce * ce_term(batch.aux_targets,
                                   log_softmax_rows(t.aux_logits)) / n;
  }
  if (spec.self_kl != 0.0) {
    const Matrix lp = log_softmax_rows(t.main_logits / spec.tau);
    const Matrix lq = log_softmax_rows(t.aux_logits / spec.tau);
    const double kl = (lp.array().exp() * (lp - lq).array()).sum();
    total += spec.self_kl * kl / n;
  }
  return total;
}

Gradients backward(const MlpParams& params, const Batch& batch,
                   const LossSpec& spec) {
  check_batch(params, batch, spec);
  return backward(params, forward(params, batch.inputs), batch, spec);
}

Gradients backward(const MlpParams& params, const ForwardTrace& t,
                   const Batch& batch, const LossSpec& spec) {
  check_batch(params, batch, spec);
  const double n = static_cast<double>(batch.size());

  Matrix d_main = Matrix::Zero(t.main_logits.rows(), t.main_logits.cols());
  Matrix d_aux = Matrix::Zero(t.aux_logits.rows(), t.aux_logits.cols());
  bool main_used = false;
  bool aux_used = false;

  if (spec.main_ce != 0.0) {
    const Vector mass = batch.main_targets.rowwise().sum();
    Matrix g = t.main_probs;
    g.array().colwise() *= mass.array();
    d_main += (spec.main_ce / n) * (g - batch.main_targets);
    main_used = true;
  }
  if (spec.aux_ce != 0.0) {
    const Vector mass = batch.aux_targets.rowwise().sum();
    Matrix g = t.aux_probs;
    g.array().colwise() *= mass.array();
    d_aux += (spec.aux_ce / n) * (g - batch.aux_targets);
    aux_used = true;
  }
  if (spec.self_kl != 0.0) {
    // KL(p || q), p = softmax(z / tau), q = softmax(u / tau).
    //   dKL/dz = p * (log p - log q - KL) / tau
    //   dKL/du = (q - p) / tau
    const Matrix lp = log_softmax_rows(t.main_logits / spec.tau);
    const Matrix lq = log_softmax_rows(t.aux_logits / spec.tau);
    const Matrix p = lp.array().exp().matrix();
    const Matrix q = lq.array().exp().matrix();
    const Matrix log_ratio = lp - lq;
    const Vector kl = (p.array() * log_ratio.array()).rowwise().sum();
    Matrix dz = log_ratio;
    dz.colwise() -= kl;
    dz = (p.array() * dz.array()).matrix();
    const double scale = spec.self_kl / (n * spec.tau);
    d_main += scale * dz;
    d_aux += scale * (q - p);
    main_used = true;
    aux_used = true;
  }

  Gradients g = Gradients::zeros(params.shape());
  Matrix d_features = Matrix::Zero(t.features.rows(), t.features.cols());
  if (main_used) {
    g.W3 = d_main.transpose() * t.hidden2;
    g.b3 = d_main.colwise().sum().transpose();
    const Matrix d_pre2 =
        ((d_main * params.W3).array() * relu_mask(t.pre2).array()).matrix();
    g.W2 = d_pre2.transpose() * t.features;
    g.b2 = d_pre2.colwise().sum().transpose();
    d_features += d_pre2 * params.W2;
  }
  if (aux_used) {
    g.Wa = d_aux.transpose() * t.features;
    g.ba = d_aux.colwise().sum().transpose();
    d_features += d_aux * params.Wa;
  }
  if (main_used || aux_used) {
    const Matrix d_pre1 =
        (d_features.array() * relu_mask(t.pre1).array()).matrix();
    g.W1 = d_pre1.transpose() * batch.inputs;
    g.b1 = d_pre1.colwise().sum().transpose();
  }
  return g;
}

Gradients finite_diff_grad(const MlpParams& params, const Batch& batch,
                           const LossSpec& spec, double epsilon) {
  return finite_diff_grad(
      params, [&](const MlpParams& p) { return loss(p, batch, spec); },
      epsilon);
}

Gradients finite_diff_grad(const MlpParams& params,
                           const std::function<double(const MlpParams&)>& f,
                           double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  const Vector base = params.flatten();
  Vector grad(base.size());
  MlpParams probe = params;
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    Vector shifted = base;
    shifted[i] = base[i] + epsilon;
    probe.assign_flat(shifted);
    const double up = f(probe);
    shifted[i] = base[i] - epsilon;
    probe.assign_flat(shifted);
    const double down = f(probe);
    grad[i] = (up - down) / (2.0 * epsilon);
  }
  Gradients g = Gradients::zeros(params.shape());
  g.assign_flat(grad);
  return g;
}

OptimizerState OptimizerState::create(const ModelShape& shape,
                                      double learning_rate, double momentum,
                                      double weight_decay) {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  OptimizerState s;
  s.momentum_buffer = MlpParams::zeros(shape);
  s.learning_rate = learning_rate;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  return s;
}

MlpParams sgd_step(const MlpParams& params, const Gradients& grads,
                   OptimizerState& state) {
  MlpParams out = params;
  auto step = [&](auto& p, const auto& g, auto& buf) {
    buf = state.momentum * buf + g + state.weight_decay * p;
    p -= state.learning_rate * buf;
  };
  auto& buf = state.momentum_buffer;
  step(out.W1, grads.W1, buf.W1);
  step(out.b1, grads.b1, buf.b1);
  step(out.W2, grads.W2, buf.W2);
  step(out.b2, grads.b2, buf.b2);
  step(out.W3, grads.W3, buf.W3);
  step(out.b3, grads.b3, buf.b3);
  step(out.Wa, grads.Wa, buf.Wa);
  step(out.ba, grads.ba, buf.ba);
  return out;
}

std::vector<int> predict(const MlpParams& params, const Matrix& inputs) {
  const ForwardTrace t = forward(params, inputs);
  std::vector<int> out(static_cast<std::size_t>(inputs.rows()));
  for (Eigen::Index r = 0; r < t.main_logits.rows(); ++r) {
    Eigen::Index best = 0;
    t.main_logits.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const MlpParams& params, const Matrix& inputs,
                std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  const std::vector<int> pred = predict(params, inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (pred[i] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace fedsim
