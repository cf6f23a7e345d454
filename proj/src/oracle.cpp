#include "fedsim/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "fedsim/aggregation.hpp"
#include "fedsim/attacks.hpp"
#include "fedsim/error.hpp"
#include "fedsim/format.hpp"
#include "fedsim/nn.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace {

constexpr double kGradEpsilon = 1e-5;
constexpr double kGradTolerance = 1e-4;
constexpr double kTinyGradient = 1e-8;
// Inputs closer than this to a ReLU kink are redrawn so the central
// difference never straddles it.
constexpr double kKinkMargin = 1e-4;

std::vector<double> softmax(const std::vector<double>& logits, double tau) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - top) / tau);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> affine(const Matrix& w, const Vector& b, const std::vector<double>& in,
                           bool relu) {
  std::vector<double> out(static_cast<std::size_t>(w.rows()));
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    double s = b[r];
    for (Eigen::Index c = 0; c < w.cols(); ++c) s += w(r, c) * in[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(r)] = relu ? std::max(0.0, s) : s;
  }
  return out;
}

// Scalar loop re-statement of the training loss, independent of nn.cpp.
double reference_loss(const MlpParams& p, const Batch& batch, const LossSpec& spec) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    std::vector<double> x(static_cast<std::size_t>(batch.inputs.cols()));
    for (Eigen::Index c = 0; c < batch.inputs.cols(); ++c) {
      x[static_cast<std::size_t>(c)] = batch.inputs(i, c);
    }
    const auto h1 = affine(p.W1, p.b1, x, true);
    const auto h2 = affine(p.W2, p.b2, h1, true);
    const auto z = affine(p.W3, p.b3, h2, false);
    const auto u = affine(p.Wa, p.ba, h1, false);
    const auto pz = softmax(z, 1.0);
    const auto pu = softmax(u, 1.0);
    const auto sz = softmax(z, spec.tau);
    const auto su = softmax(u, spec.tau);
    double ce_main = 0.0;
    double ce_aux = 0.0;
    double kl = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
      const auto col = static_cast<Eigen::Index>(k);
      if (spec.main_ce != 0.0) {
        ce_main -= batch.main_targets(i, col) * std::log(std::max(pz[k], kLogFloor));
      }
      if (spec.aux_ce != 0.0) {
        ce_aux -= batch.aux_targets(i, col) * std::log(std::max(pu[k], kLogFloor));
      }
      kl += sz[k] * std::log(sz[k] / su[k]);
    }
    total += spec.main_ce * ce_main + spec.aux_ce * ce_aux + spec.self_kl * kl;
  }
  return total / static_cast<double>(batch.size());
}

int draw_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
}

Matrix random_distributions(Rng& rng, Eigen::Index rows, int classes) {
  Matrix out(rows, classes);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (rng.uniform() < 0.5) {
      out.row(r).setZero();
      out(r, static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(classes)))) = 1.0;
    } else {
      const auto p = rng.dirichlet(static_cast<std::size_t>(classes), 1.0);
      for (int c = 0; c < classes; ++c) out(r, c) = p[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

double loss_weight(Rng& rng) { return rng.uniform() < 0.25 ? 0.0 : 0.25 + 1.75 * rng.uniform(); }

bool near_kink(const MlpParams& params, const Matrix& inputs) {
  const ForwardTrace t = forward(params, inputs);
  return t.pre1.cwiseAbs().minCoeff() < kKinkMargin ||
         t.pre2.cwiseAbs().minCoeff() < kKinkMargin;
}

std::string describe(const ModelShape& s, Eigen::Index batch, const LossSpec& spec) {
  std::ostringstream out;
  out << "shape " << s.input_dim << "-" << s.hidden1 << "-" << s.hidden2 << "-"
      << s.num_classes << ", batch " << batch << ", weights (" << format_double(spec.main_ce)
      << ", " << format_double(spec.aux_ce) << ", " << format_double(spec.self_kl)
      << "), tau " << format_double(spec.tau);
  return out.str();
}

// Dyadic values k/8 with |k| <= 32: every sum of at most eight of them, and
// every squared distance, is exact in double precision.
std::vector<Update> random_updates(Rng& rng, int n, int dim) {
  std::vector<int> ids(50);
  std::iota(ids.begin(), ids.end(), 0);
  rng.shuffle(ids);
  // A narrow value range now and then forces ties.
  const int span = rng.uniform() < 0.3 ? 2 : 32;
  std::vector<Update> out;
  for (int k = 0; k < n; ++k) {
    Vector d(dim);
    for (int j = 0; j < dim; ++j) d[j] = draw_int(rng, -span, span) / 8.0;
    out.push_back(Update{d, static_cast<double>(draw_int(rng, 1, 100)),
                         ids[static_cast<std::size_t>(k)], 0});
  }
  return out;
}

std::vector<const Update*> by_id(const std::vector<Update>& updates) {
  std::vector<const Update*> out;
  for (const Update& u : updates) out.push_back(&u);
  std::sort(out.begin(), out.end(),
            [](const Update* a, const Update* b) { return a->client_id < b->client_id; });
  return out;
}

Vector mean_of(const std::vector<const Update*>& chosen) {
  Vector sum = Vector::Zero(chosen.front()->delta.size());
  for (const Update* u : chosen) sum += u->delta;
  return sum / static_cast<double>(chosen.size());
}

Vector reference_median(const std::vector<Update>& updates) {
  const Eigen::Index dim = updates.front().delta.size();
  Vector out(dim);
  for (Eigen::Index j = 0; j < dim; ++j) {
    std::vector<double> col;
    for (const Update& u : updates) col.push_back(u.delta[j]);
    std::sort(col.begin(), col.end());
    const std::size_t n = col.size();
    out[j] = n % 2 == 1 ? col[n / 2] : (col[n / 2 - 1] + col[n / 2]) / 2.0;
  }
  return out;
}

Vector reference_trimmed_mean(const std::vector<Update>& updates, int f) {
  const Eigen::Index dim = updates.front().delta.size();
  Vector out(dim);
  for (Eigen::Index j = 0; j < dim; ++j) {
    std::multiset<double> col;
    for (const Update& u : updates) col.insert(u.delta[j]);
    for (int t = 0; t < f; ++t) {
      col.erase(col.begin());
      col.erase(std::prev(col.end()));
    }
    double sum = 0.0;
    for (double v : col) sum += v;
    out[j] = sum / static_cast<double>(col.size());
  }
  return out;
}

std::set<int> reference_norm_bound(const std::vector<Update>& updates, int f) {
  auto order = by_id(updates);
  std::stable_sort(order.begin(), order.end(), [](const Update* a, const Update* b) {
    return a->delta.squaredNorm() < b->delta.squaredNorm();
  });
  std::set<int> kept;
  for (std::size_t k = 0; k + static_cast<std::size_t>(f) < order.size(); ++k) {
    kept.insert(order[k]->client_id);
  }
  return kept;
}

std::set<int> reference_multi_krum(const std::vector<Update>& updates, int f, int c) {
  const int n = static_cast<int>(updates.size());
  std::vector<const Update*> pool = by_id(updates);
  std::set<int> chosen;
  for (int step = 0; step < c; ++step) {
    const int m = std::min(n - f - 2, static_cast<int>(pool.size()) - 1);
    std::vector<double> scores;
    for (const Update* a : pool) {
      std::vector<double> d;
      for (const Update* b : pool) {
        if (a != b) d.push_back((a->delta - b->delta).squaredNorm());
      }
      std::sort(d.begin(), d.end());
      double s = 0.0;
      for (int k = 0; k < m; ++k) s += d[static_cast<std::size_t>(k)];
      scores.push_back(s);
    }
    // First minimum wins: the pool is in client-id order.
    const auto best = static_cast<std::size_t>(
        std::min_element(scores.begin(), scores.end()) - scores.begin());
    chosen.insert(pool[best]->client_id);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return chosen;
}

Vector mean_of_ids(const std::vector<Update>& updates, const std::set<int>& ids) {
  std::vector<const Update*> chosen;
  for (const Update* u : by_id(updates)) {
    if (ids.count(u->client_id)) chosen.push_back(u);
  }
  return mean_of(chosen);
}

std::string ids_text(const std::set<int>& ids) {
  std::string out = "{";
  for (int id : ids) out += (out.size() > 1 ? "," : "") + std::to_string(id);
  return out + "}";
}

struct Tally {
  std::string name;
  int failures = 0;
  std::string first;

  void fail(int instance, const std::string& what) {
    if (failures++ == 0) first = "instance " + std::to_string(instance) + ": " + what;
  }
  OracleCheck result(int instances) const {
    return {name, failures == 0,
            failures == 0 ? std::to_string(instances) + " instances match"
                          : std::to_string(failures) + " mismatches, first " + first};
  }
};

OracleCheck expect(const std::string& name, bool ok, const std::string& detail) {
  return {name, ok, detail};
}

std::vector<Update> scalar_updates(std::initializer_list<double> values) {
  std::vector<Update> out;
  int id = 0;
  for (double v : values) out.push_back(Update{Vector::Constant(1, v), 1.0, id++, 0});
  return out;
}

}  // namespace

bool OracleReport::passed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const OracleCheck& c) { return c.passed; });
}

OracleReport gradcheck_suite(std::uint64_t seed, int instances) {
  OracleReport report{"gradcheck", {}};
  Rng rng = Rng::derive({seed, 0x6AAD});
  for (int t = 0; t < instances; ++t) {
    ModelShape shape{draw_int(rng, 1, 8), draw_int(rng, 1, 8), draw_int(rng, 1, 8),
                     draw_int(rng, 2, 8)};
    const Eigen::Index rows = draw_int(rng, 1, 6);
    LossSpec spec{loss_weight(rng), loss_weight(rng), loss_weight(rng), 0.5 + 3.5 * rng.uniform()};
    if (spec.main_ce == 0.0 && spec.aux_ce == 0.0 && spec.self_kl == 0.0) spec.main_ce = 1.0;

    MlpParams params;
    Matrix inputs(rows, shape.input_dim);
    int attempts = 0;
    do {
      params = MlpParams::zeros(shape);
      params.add_scaled(MlpParams::init(shape, rng), 2.0);
      for (Eigen::Index i = 0; i < inputs.size(); ++i) inputs.data()[i] = rng.normal();
    } while (near_kink(params, inputs) && ++attempts < 1000);

    const Batch batch{inputs, random_distributions(rng, rows, shape.num_classes),
                      random_distributions(rng, rows, shape.num_classes)};
    const Vector analytic = backward(params, batch, spec).flatten();
    const Vector numeric =
        finite_diff_grad(params,
                         [&](const MlpParams& p) { return reference_loss(p, batch, spec); },
                         kGradEpsilon)
            .flatten();

    double worst = 0.0;
    for (Eigen::Index j = 0; j < analytic.size(); ++j) {
      const double diff = std::abs(analytic[j] - numeric[j]);
      const double scale = std::max(std::abs(analytic[j]), std::abs(numeric[j]));
      worst = std::max(worst, scale < kTinyGradient ? diff : diff / scale);
    }
    const double value = loss(params, batch, spec);
    const double ref = reference_loss(params, batch, spec);
    const double loss_err = std::abs(value - ref) / std::max(1.0, std::abs(ref));
    const bool ok = worst <= kGradTolerance && loss_err <= 1e-12 && attempts < 1000;
    report.checks.push_back(expect(
        "instance " + std::to_string(t), ok,
        describe(shape, rows, spec) + ", max gradient error " + format_double(worst) +
            ", loss error " + format_double(loss_err)));
  }
  return report;
}

OracleReport aggregator_suite(std::uint64_t seed, int instances) {
  OracleReport report{"aggregators", {}};
  Rng rng = Rng::derive({seed, 0xA66E});
  Tally median{"coord_median vs sort reference", 0, {}};
  Tally trimmed{"trimmed_mean vs trim-by-removal reference", 0, {}};
  Tally bound{"norm_bound vs norm-ranking reference", 0, {}};
  Tally krum{"multi_krum vs exhaustive score reference", 0, {}};
  for (int t = 0; t < instances; ++t) {
    const int n = draw_int(rng, 1, 8);
    const auto updates = random_updates(rng, n, draw_int(rng, 1, 5));

    if (coord_median(updates).global_delta != reference_median(updates)) {
      median.fail(t, "n=" + std::to_string(n));
    }
    const int trim = draw_int(rng, 0, (n - 1) / 2);
    if (trimmed_mean(updates, trim).global_delta != reference_trimmed_mean(updates, trim)) {
      trimmed.fail(t, "n=" + std::to_string(n) + " f=" + std::to_string(trim));
    }
    const int drop = draw_int(rng, 0, n - 1);
    const AggResult nb = norm_bound(updates, drop);
    const std::set<int> nb_ref = reference_norm_bound(updates, drop);
    if (nb.kept_clients != nb_ref || nb.global_delta != mean_of_ids(updates, nb_ref)) {
      bound.fail(t, "kept " + ids_text(nb.kept_clients) + " expected " + ids_text(nb_ref));
    }

    // Multi-Krum needs at least one neighbour: n - f - 2 >= 1.
    const int kn = std::max(n, 3);
    const auto kupdates = kn == n ? updates : random_updates(rng, kn, 3);
    const int f = draw_int(rng, 0, kn - 3);
    const int c = draw_int(rng, 1, kn - f);
    const AggResult mk = multi_krum(kupdates, f, c);
    const std::set<int> mk_ref = reference_multi_krum(kupdates, f, c);
    if (mk.kept_clients != mk_ref || mk.global_delta != mean_of_ids(kupdates, mk_ref)) {
      krum.fail(t, "n=" + std::to_string(kn) + " f=" + std::to_string(f) + " c=" +
                       std::to_string(c) + " kept " + ids_text(mk.kept_clients) +
                       " expected " + ids_text(mk_ref));
    }
  }
  for (const Tally* tally : {&median, &trimmed, &bound, &krum}) {
    report.checks.push_back(tally->result(instances));
  }

  // Hand-solved: ranks 0, .25, .5, .75, 1; the repeated-median line through
  // the first four points is y = 4x + 1, so their residuals vanish, the MAD
  // scale hits its floor and 1000 gets confidence 0.
  const AggResult outlier = residual_base(scalar_updates({1, 2, 3, 4, 1000}), 2.0, 0.05);
  const bool outlier_ok = outlier.global_delta[0] == 2.5 &&
                          outlier.kept_clients == std::set<int>{0, 1, 2, 3} &&
                          outlier.per_client_weight.at(4) == 0.0;
  report.checks.push_back(expect("residual_base {1,2,3,4,1000}", outlier_ok,
                                 "value " + format_double(outlier.global_delta[0]) +
                                     ", expected 2.5 with client 4 at confidence 0"));

  const AggResult line = residual_base(scalar_updates({5, 1, 4, 2, 3}), 2.0, 0.05);
  bool line_ok = line.global_delta[0] == 3.0 && line.kept_clients.size() == 5;
  for (const auto& [id, w] : line.per_client_weight) line_ok = line_ok && w == 1.0;
  report.checks.push_back(expect("residual_base collinear ranks", line_ok,
                                 "value " + format_double(line.global_delta[0]) +
                                     ", expected 3 with every confidence 1"));

  const AggResult same = residual_base(scalar_updates({0.5, 0.5, 0.5, 0.5}), 2.0, 0.05);
  report.checks.push_back(expect("residual_base identical updates",
                                 same.global_delta[0] == 0.5,
                                 "value " + format_double(same.global_delta[0])));
  return report;
}

OracleReport attack_suite() {
  OracleReport report{"attacks", {}};
  const auto pair = scalar_updates({0.0, 2.0});

  const Vector lie = lie_update(pair, 0.3);
  report.checks.push_back(expect("LIE {[0],[2]}, z=0.3 -> [1.3]", lie[0] == 1.3,
                                 "got " + format_double(lie[0])));

  const Vector lie_zero = lie_update(pair, 0.0);
  report.checks.push_back(expect("LIE z=0 -> mean", lie_zero[0] == 1.0,
                                 "got " + format_double(lie_zero[0])));

  const std::vector<Update> same{Update{Vector::Constant(2, 0.75), 1.0, 0, 0},
                                 Update{Vector::Constant(2, 0.75), 1.0, 1, 0}};
  const Vector lie_same = lie_update(same, 0.3);
  report.checks.push_back(expect("LIE identical deltas -> that delta",
                                 lie_same == same[0].delta, "sigma must vanish"));

  const std::vector<Update> mu34{Update{(Vector(2) << 3.0, 4.0).finished(), 1.0, 0, 0}};
  const Vector stat = stat_opt_update(mu34, 5.0);
  report.checks.push_back(expect("STAT-OPT mu=[3,4], gamma=5 -> [0,0]",
                                 stat.cwiseAbs().maxCoeff() <= 1e-12,
                                 "got [" + format_double(stat[0]) + ", " +
                                     format_double(stat[1]) + "]"));

  const Vector stat_zero = stat_opt_update(mu34, 0.0);
  report.checks.push_back(expect("STAT-OPT gamma=0 -> mu", stat_zero == mu34[0].delta,
                                 "direction must not move the mean"));

  const Vector stat_flip = stat_opt_update(mu34, 10.0);
  report.checks.push_back(expect("STAT-OPT gamma=2|mu| -> -mu",
                                 (stat_flip + mu34[0].delta).cwiseAbs().maxCoeff() <= 1e-12,
                                 "got [" + format_double(stat_flip[0]) + ", " +
                                     format_double(stat_flip[1]) + "]"));

  const double threshold = 1e-5;
  const DynOptResult dyn = dyn_opt_update(pair, 10.0, threshold);
  report.checks.push_back(expect("DYN-OPT {[0],[2]} -> gamma 1", std::abs(dyn.gamma - 1.0) <= 1e-5,
                                 "gamma " + format_double(dyn.gamma)));
  const Vector past = Vector::Constant(1, 1.0 - (dyn.gamma + 2.0 * threshold));
  const bool bracket = dyn.feasible && dyn_opt_feasible(pair, dyn.delta) &&
                       !dyn_opt_feasible(pair, past);
  report.checks.push_back(expect("DYN-OPT bracket", bracket,
                                 "gamma feasible, gamma + 2 * threshold infeasible"));

  const DynOptResult dyn_same = dyn_opt_update(same, 10.0, threshold);
  report.checks.push_back(expect("DYN-OPT identical deltas -> gamma <= threshold",
                                 dyn_same.gamma <= threshold,
                                 "gamma " + format_double(dyn_same.gamma)));
  return report;
}

OracleReport run_oracle_suite(const std::string& name, std::uint64_t seed) {
  if (name == "gradcheck") return gradcheck_suite(seed);
  if (name == "aggregators") return aggregator_suite(seed);
  if (name == "attacks") return attack_suite();
  throw ConfigError("unknown oracle suite '" + name +
                    "' (expected gradcheck, aggregators or attacks)");
}

}  // namespace fedsim
