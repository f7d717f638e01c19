#include "cacs/scoring.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

namespace cacs {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

// Disjoint-set over provisional labels; path-halving find.
struct UnionFind {
  std::vector<int> parent;
  int make() {
    parent.push_back(static_cast<int>(parent.size()));
    return parent.back();
  }
  int find(int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

std::string risk_name(RiskCategory risk) {
  switch (risk) {
    case RiskCategory::zero: return "zero";
    case RiskCategory::minimal: return "minimal";
    case RiskCategory::mild: return "mild";
    case RiskCategory::moderate: return "moderate";
    case RiskCategory::severe: return "severe";
  }
  return "unknown";
}

RiskCategory parse_risk(const std::string& name) {
  if (name == "zero") return RiskCategory::zero;
  if (name == "minimal") return RiskCategory::minimal;
  if (name == "mild") return RiskCategory::mild;
  if (name == "moderate") return RiskCategory::moderate;
  if (name == "severe") return RiskCategory::severe;
  throw ValidationError("unknown risk category: " + name);
}

RiskCategory risk_category(double total_score) {
  check(total_score >= 0.0, "score must be non-negative");
  if (total_score == 0.0) return RiskCategory::zero;
  if (total_score <= 10.0) return RiskCategory::minimal;
  if (total_score <= 100.0) return RiskCategory::mild;
  if (total_score <= 400.0) return RiskCategory::moderate;
  return RiskCategory::severe;
}

MaskVolume binarize(const ProbVolume& probs, double thresh) {
  check(!probs.empty(), "binarize: empty probability volume");
  MaskVolume mask(probs.n_slices(), probs.n_rows(), probs.n_cols(), probs.spacing(),
                  MaskRole::prediction);
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    mask.voxels()[i] = probs.voxels()[i] >= thresh ? 1 : 0;
  }
  return mask;
}

MaskVolume hu_gate(const MaskVolume& mask, const CtVolume& vol, int hu_threshold) {
  check(mask.same_shape(vol), "hu_gate: mask/volume shape mismatch");
  MaskVolume out = mask;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (out.voxels()[i] != 0 && vol.voxels()[i] < hu_threshold) out.voxels()[i] = 0;
  }
  return out;
}

std::vector<Lesion> connected_components(const MaskVolume& mask, const CtVolume& vol,
                                         const ScoringOptions& options) {
  check(mask.same_shape(vol), "connected_components: mask/volume shape mismatch");
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    check(mask.voxels()[i] <= 1, "connected_components: mask must be binary");
  }

  const Eigen::Index ns = mask.n_slices(), nr = mask.n_rows(), nc = mask.n_cols();
  std::vector<int> labels(static_cast<size_t>(mask.size()), -1);
  UnionFind uf;

  // first pass: scan order, union with already-visited neighbors
  for (Eigen::Index s = 0; s < ns; ++s) {
    for (Eigen::Index r = 0; r < nr; ++r) {
      for (Eigen::Index c = 0; c < nc; ++c) {
        const Eigen::Index idx = mask.flat(s, r, c);
        if (mask.voxels()[idx] == 0) continue;
        int label = -1;
        auto visit = [&](Eigen::Index s2, Eigen::Index r2, Eigen::Index c2) {
          if (s2 < 0 || s2 >= ns || r2 < 0 || r2 >= nr || c2 < 0 || c2 >= nc) return;
          const int other = labels[static_cast<size_t>(mask.flat(s2, r2, c2))];
          if (other < 0) return;
          if (label < 0) {
            label = other;
          } else {
            uf.unite(label, other);
          }
        };
        if (options.connectivity == Connectivity::c26) {
          // the 13 neighbors that precede (s,r,c) in scan order
          for (Eigen::Index dr = -1; dr <= 1; ++dr) {
            for (Eigen::Index dc = -1; dc <= 1; ++dc) visit(s - 1, r + dr, c + dc);
          }
          visit(s, r - 1, c - 1);
          visit(s, r - 1, c);
          visit(s, r - 1, c + 1);
          visit(s, r, c - 1);
        } else {
          visit(s, r - 1, c - 1);
          visit(s, r - 1, c);
          visit(s, r - 1, c + 1);
          visit(s, r, c - 1);
        }
        if (label < 0) label = uf.make();
        labels[static_cast<size_t>(idx)] = label;
      }
    }
  }

  // second pass: resolve roots; component order follows first voxel in scan order
  std::map<int, int> root_to_component;
  std::vector<Lesion> lesions;
  const double pixel_area = mask.spacing().row_mm * mask.spacing().col_mm;
  const double voxel_volume = pixel_area * mask.spacing().slice_mm;
  for (Eigen::Index s = 0; s < ns; ++s) {
    for (Eigen::Index r = 0; r < nr; ++r) {
      for (Eigen::Index c = 0; c < nc; ++c) {
        const Eigen::Index idx = mask.flat(s, r, c);
        if (labels[static_cast<size_t>(idx)] < 0) continue;
        const int root = uf.find(labels[static_cast<size_t>(idx)]);
        auto [it, inserted] = root_to_component.try_emplace(root, static_cast<int>(lesions.size()));
        if (inserted) {
          Lesion lesion;
          lesion.id = static_cast<int>(lesions.size()) + 1;
          lesions.push_back(std::move(lesion));
        }
        Lesion& lesion = lesions[static_cast<size_t>(it->second)];
        lesion.voxels.push_back({s, r, c});
        if (lesion.per_slice.empty() || lesion.per_slice.back().slice != s) {
          lesion.per_slice.push_back({s, 0, 0.0, 0});
        }
        LesionSliceStats& stats = lesion.per_slice.back();
        stats.n_pixels += 1;
        stats.peak_hu = std::max(stats.peak_hu, static_cast<int>(vol(s, r, c)));
      }
    }
  }

  for (Lesion& lesion : lesions) {
    for (LesionSliceStats& stats : lesion.per_slice) {
      stats.area_mm2 = static_cast<double>(stats.n_pixels) * pixel_area;
    }
    lesion.total_volume_mm3 = static_cast<double>(lesion.voxels.size()) * voxel_volume;
  }

  if (options.min_lesion_mm2 > 0.0) {
    std::erase_if(lesions, [&](const Lesion& lesion) {
      double max_area = 0.0;
      for (const LesionSliceStats& stats : lesion.per_slice) {
        max_area = std::max(max_area, stats.area_mm2);
      }
      return max_area < options.min_lesion_mm2;
    });
    for (size_t i = 0; i < lesions.size(); ++i) lesions[i].id = static_cast<int>(i) + 1;
  }
  return lesions;
}

int agatston_weight(double peak_hu) {
  check(peak_hu >= 130.0, "agatston_weight: peak below 130 HU");
  if (peak_hu >= 400.0) return 4;
  if (peak_hu >= 300.0) return 3;
  if (peak_hu >= 200.0) return 2;
  return 1;
}

AgatstonResult agatston_score(const std::vector<Lesion>& lesions, const CtVolume& vol) {
  check(vol.spacing().valid(), "agatston_score: volume spacing missing");
  const double spacing_factor = vol.spacing().slice_mm / 3.0;
  AgatstonResult result;
  for (const Lesion& lesion : lesions) {
    LesionScore score;
    score.lesion_id = lesion.id;
    score.n_voxels = static_cast<Eigen::Index>(lesion.voxels.size());
    score.volume_mm3 = lesion.total_volume_mm3;
    for (const LesionSliceStats& stats : lesion.per_slice) {
      score.score += agatston_weight(stats.peak_hu) * stats.area_mm2 * spacing_factor;
    }
    result.total += score.score;
    result.lesions.push_back(score);
  }
  result.risk = risk_category(result.total);
  return result;
}

AgatstonResult score_pipeline(const ProbVolume& probs, const CtVolume& vol,
                              const ScoringOptions& options) {
  check(probs.same_shape(vol), "score_pipeline: probability/volume shape mismatch");
  const MaskVolume candidates =
      hu_gate(binarize(probs, options.prob_threshold), vol, options.hu_threshold);
  return agatston_score(connected_components(candidates, vol, options), vol);
}

std::string format_score_report(const AgatstonResult& result) {
  std::ostringstream out;
  out << "lesion_id,n_voxels,volume_mm3,score\n";
  for (const LesionScore& lesion : result.lesions) {
    out << lesion.lesion_id << "," << lesion.n_voxels << "," << format_double(lesion.volume_mm3)
        << "," << format_double(lesion.score) << "\n";
  }
  out << "total_score," << format_double(result.total) << "\n";
  out << "risk_category," << risk_name(result.risk) << "\n";
  return out.str();
}

std::string format_score_kv(const AgatstonResult& result) {
  std::ostringstream out;
  out << "format cacs-score-v1\n";
  out << "n_lesions " << result.lesions.size() << "\n";
  for (const LesionScore& lesion : result.lesions) {
    out << "lesion_" << lesion.lesion_id << "_n_voxels " << lesion.n_voxels << "\n";
    out << "lesion_" << lesion.lesion_id << "_volume_mm3 " << format_double(lesion.volume_mm3)
        << "\n";
    out << "lesion_" << lesion.lesion_id << "_score " << format_double(lesion.score) << "\n";
  }
  out << "total_score " << format_double(result.total) << "\n";
  out << "risk " << risk_name(result.risk) << "\n";
  return out.str();
}

}  // namespace cacs
