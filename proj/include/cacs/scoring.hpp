#pragma once

#include <string>
#include <vector>

#include "cacs/volume.hpp"

namespace cacs {

struct VoxelIndex {
  Eigen::Index slice = 0, row = 0, col = 0;
  bool operator==(const VoxelIndex&) const = default;
};

/// One connected calcification candidate with its per-slice statistics.
struct LesionSliceStats {
  Eigen::Index slice = 0;
  Eigen::Index n_pixels = 0;
  double area_mm2 = 0.0;
  int peak_hu = 0;
};

struct Lesion {
  int id = 0;
  std::vector<VoxelIndex> voxels;
  std::vector<LesionSliceStats> per_slice;
  double total_volume_mm3 = 0.0;
};

enum class RiskCategory { zero, minimal, mild, moderate, severe };

std::string risk_name(RiskCategory risk);
RiskCategory parse_risk(const std::string& name);

/// Standard risk bands: 0 / (0,10] / (10,100] / (100,400] / (400,inf).
RiskCategory risk_category(double total_score);

struct LesionScore {
  int lesion_id = 0;
  Eigen::Index n_voxels = 0;
  double volume_mm3 = 0.0;
  double score = 0.0;
};

struct AgatstonResult {
  std::vector<LesionScore> lesions;
  double total = 0.0;
  RiskCategory risk = RiskCategory::zero;
};

enum class Connectivity {
  c26,    // full 3-D neighborhood
  c8_2d,  // in-plane only; candidates never span slices
};

struct ScoringOptions {
  double prob_threshold = 0.5;
  int hu_threshold = kCalciumHuThreshold;
  double min_lesion_mm2 = 1.0;  // 0 disables the size filter
  Connectivity connectivity = Connectivity::c26;
};

/// probability >= threshold becomes foreground (ties are foreground).
MaskVolume binarize(const ProbVolume& probs, double thresh = 0.5);

/// Keeps mask voxels whose HU is at or above the threshold. Idempotent.
MaskVolume hu_gate(const MaskVolume& mask, const CtVolume& vol,
                   int hu_threshold = kCalciumHuThreshold);

/// Deterministic connected-component labeling (components ordered by their
/// first voxel in scan order). Components whose largest per-slice area falls
/// below min_lesion_mm2 on every slice are discarded. Expects a HU-gated
/// mask so that per-slice peaks are at least 130 HU.
std::vector<Lesion> connected_components(const MaskVolume& mask, const CtVolume& vol,
                                         const ScoringOptions& options = {});

/// Density factor from the per-slice peak HU: 1 for [130,200), 2 for
/// [200,300), 3 for [300,400), 4 for >= 400.
int agatston_weight(double peak_hu);

/// Per slice and lesion: weight(peak) * area_mm2 * (slice_spacing_mm / 3),
/// summed. The spacing factor corrects for non-3mm slice spacing.
AgatstonResult agatston_score(const std::vector<Lesion>& lesions, const CtVolume& vol);

/// binarize -> hu_gate -> connected_components -> agatston_score.
AgatstonResult score_pipeline(const ProbVolume& probs, const CtVolume& vol,
                              const ScoringOptions& options = {});

/// Human-readable report: one "lesion_id,n_voxels,volume_mm3,score" line per
/// lesion plus total/risk footer lines.
std::string format_score_report(const AgatstonResult& result);

/// Machine-readable key-value variant (format cacs-score-v1).
std::string format_score_kv(const AgatstonResult& result);

}  // namespace cacs
