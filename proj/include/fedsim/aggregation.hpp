#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedsim/update.hpp"

namespace fedsim {

enum class AggKind {
  kFedAvg,
  kMedian,
  kTrimmedMean,
  kNormBound,
  kMultiKrum,
  kResidualBase,
};

const char* aggregator_name(AggKind kind);
AggKind parse_aggregator(const std::string& name);
/// Rules that report an explicit kept set, so detection recall is defined.
bool reports_exclusions(AggKind kind);

struct AggConfig {
  AggKind kind = AggKind::kFedAvg;
  /// Server-side upper bound on attackers per round; unset means "derive
  /// from the roster".
  std::optional<int> f_expected;
  /// Multi-Krum selections; unset means participants - f.
  std::optional<int> multikrum_c;
  double residual_ci = 2.0;
  double residual_clip = 0.05;
  /// FedAvg only: weight by |D_k| (false gives the plain mean).
  bool fedavg_weighted = true;

  /// Checks the rule's participant constraints for a round of `participants`.
  void validate(int participants) const;
};

struct AggResult {
  Vector global_delta;
  /// Empty for coordinate-wise rules, which keep everyone.
  std::set<int> kept_clients;
  std::map<int, double> per_client_weight;
};

/// Unweighted coordinate mean in client-id order.
Vector plain_mean(const std::vector<Update>& updates);

AggResult fedavg(const std::vector<Update>& updates, bool weighted = true);
AggResult coord_median(const std::vector<Update>& updates);
AggResult trimmed_mean(const std::vector<Update>& updates, int f);
AggResult norm_bound(const std::vector<Update>& updates, int f);
AggResult multi_krum(const std::vector<Update>& updates, int f, int c);
AggResult residual_base(const std::vector<Update>& updates, double ci,
                        double clip);

/// Median of a scratch copy (mean of the two middle values for even sizes).
double median_of(std::vector<double> values);

/// Repeated-median line fit y = slope * x + intercept.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};
LineFit repeated_median_fit(const std::vector<double>& x,
                            const std::vector<double>& y);

/// Per-point confidences of one coordinate under the residual rule.
std::vector<double> residual_confidences(const std::vector<double>& values,
                                         double ci, double clip);

AggResult aggregate(const AggConfig& cfg, const std::vector<Update>& updates);

/// Fraction of sampled malicious clients the rule excluded; 1 when none
/// were sampled.
double detection_recall(const std::set<int>& excluded,
                        const std::set<int>& malicious_present);

/// Clients a rule excluded: participants outside kept_clients, or (for
/// residual_base) clients whose mean confidence fell below `clip`.
std::set<int> excluded_clients(const AggConfig& cfg, const AggResult& result,
                               const std::vector<Update>& updates);

}  // namespace fedsim
