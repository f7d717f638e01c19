#include "cacs/metrics.hpp"

#include <cmath>
#include <cstdio>

namespace cacs {

ConfusionCounts confusion(const MaskVolume& pred, const MaskVolume& gt) {
  if (!pred.same_shape(gt)) throw ValidationError("confusion: mask shape mismatch");
  ConfusionCounts counts;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const bool p = pred.voxels()[i] != 0;
    const bool g = gt.voxels()[i] != 0;
    if (p && g) {
      ++counts.tp;
    } else if (p && !g) {
      ++counts.fp;
    } else if (!p && g) {
      ++counts.fn;
    } else {
      ++counts.tn;
    }
  }
  return counts;
}

F1Result f1_from_counts(const ConfusionCounts& counts) {
  F1Result r;
  r.precision = counts.tp + counts.fp > 0
                    ? static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fp)
                    : 0.0;
  r.recall = counts.tp + counts.fn > 0
                 ? static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fn)
                 : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                      : 0.0;
  return r;
}

F1Result f1_score(const MaskVolume& pred, const MaskVolume& gt) {
  return f1_from_counts(confusion(pred, gt));
}

CohortResult cohort_counts(const std::vector<PatientRiskOutcome>& outcomes) {
  CohortResult result;
  result.n_patients = static_cast<std::int64_t>(outcomes.size());
  for (const PatientRiskOutcome& outcome : outcomes) {
    if (outcome.raw == outcome.truth) ++result.n_correct_raw;
    if (outcome.filtered == outcome.truth) ++result.n_correct_filtered;
  }
  return result;
}

double cac_rate(const std::vector<PatientRiskOutcome>& outcomes, bool filtered) {
  if (outcomes.empty()) throw ValidationError("cac_rate: empty cohort");
  const CohortResult counts = cohort_counts(outcomes);
  const std::int64_t correct = filtered ? counts.n_correct_filtered : counts.n_correct_raw;
  return static_cast<double>(correct) / static_cast<double>(counts.n_patients);
}

std::string format_rate(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", rate);
  return buf;
}

}  // namespace cacs
