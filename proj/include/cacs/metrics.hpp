#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cacs/scoring.hpp"
#include "cacs/volume.hpp"

namespace cacs {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::int64_t total() const { return tp + fp + fn + tn; }
};

struct F1Result {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

ConfusionCounts confusion(const MaskVolume& pred, const MaskVolume& gt);

/// Pixel-level precision/recall/F1; any 0/0 quotient resolves to 0.
F1Result f1_score(const MaskVolume& pred, const MaskVolume& gt);
F1Result f1_from_counts(const ConfusionCounts& counts);

/// Risk predictions for one patient from the raw (no size filter) and
/// filtered scoring paths, against the reference category.
struct PatientRiskOutcome {
  std::string id;
  RiskCategory truth = RiskCategory::zero;
  RiskCategory raw = RiskCategory::zero;
  RiskCategory filtered = RiskCategory::zero;
};

struct CohortResult {
  std::int64_t n_patients = 0;
  std::int64_t n_correct_raw = 0;
  std::int64_t n_correct_filtered = 0;
};

CohortResult cohort_counts(const std::vector<PatientRiskOutcome>& outcomes);

/// Fraction of patients whose predicted risk category matches the reference;
/// `filtered` selects which scoring path's prediction is judged.
double cac_rate(const std::vector<PatientRiskOutcome>& outcomes, bool filtered);

/// Two-decimal presentation used in cohort reports (113/144 -> "0.78").
std::string format_rate(double rate);

}  // namespace cacs
