#include "cacs/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace cacs {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

// Deliberate duplicates of the scoring module's tables: the oracle must not
// share a code path with what it verifies.
int oracle_weight(int hu) {
  if (hu >= 400) return 4;
  if (hu >= 300) return 3;
  if (hu >= 200) return 2;
  return 1;
}

RiskCategory oracle_risk(double total) {
  if (total == 0.0) return RiskCategory::zero;
  if (total <= 10.0) return RiskCategory::minimal;
  if (total <= 100.0) return RiskCategory::mild;
  if (total <= 400.0) return RiskCategory::moderate;
  return RiskCategory::severe;
}

struct RasterLesion {
  std::vector<VoxelIndex> voxels;
  std::map<Eigen::Index, Eigen::Index> pixels_per_slice;
  int hu = 0;
};

}  // namespace

GeneratedPhantom generate(const PhantomSpec& spec) {
  check(spec.noise_sigma >= 0.0, "noise_sigma must be non-negative");
  check(spec.background_hu + 3.0 * spec.noise_sigma < 130.0,
        "background noise may not reach the 130 HU gate");
  check(spec.background_hu - 3.0 * spec.noise_sigma >= static_cast<double>(kHuMin),
        "background noise leaves the HU range");
  for (const PhantomLesion& lesion : spec.lesions) {
    check(lesion.hu_value >= 130 && lesion.hu_value <= kHuMax,
          "lesion HU must lie in [130, 4095]");
    check(lesion.radius_px >= 0.0, "lesion radius must be non-negative");
    check(lesion.center.slice >= 0 && lesion.center.slice < spec.n_slices &&
              lesion.center.row >= 0 && lesion.center.row < spec.n_rows &&
              lesion.center.col >= 0 && lesion.center.col < spec.n_cols,
          "lesion center outside the volume");
  }

  GeneratedPhantom out;
  out.volume = CtVolume(spec.n_slices, spec.n_rows, spec.n_cols, spec.spacing);
  out.mask = MaskVolume(spec.n_slices, spec.n_rows, spec.n_cols, spec.spacing,
                        MaskRole::ground_truth);

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
  for (Eigen::Index i = 0; i < out.volume.size(); ++i) {
    double hu = spec.background_hu;
    if (spec.noise_sigma > 0.0) {
      hu += std::clamp(noise(rng), -3.0 * spec.noise_sigma, 3.0 * spec.noise_sigma);
    }
    out.volume.voxels()[i] = static_cast<std::int16_t>(std::llround(hu));
  }

  // rasterize balls in index space; every slice cross-section is a disc
  std::vector<int> owner(static_cast<size_t>(out.volume.size()), -1);
  std::vector<RasterLesion> raster(spec.lesions.size());
  for (size_t li = 0; li < spec.lesions.size(); ++li) {
    const PhantomLesion& lesion = spec.lesions[li];
    raster[li].hu = lesion.hu_value;
    const Eigen::Index reach = static_cast<Eigen::Index>(std::floor(lesion.radius_px));
    const double r2 = lesion.radius_px * lesion.radius_px;
    for (Eigen::Index ds = -reach; ds <= reach; ++ds) {
      const Eigen::Index s = lesion.center.slice + ds;
      if (s < 0 || s >= spec.n_slices) continue;
      for (Eigen::Index dr = -reach; dr <= reach; ++dr) {
        const Eigen::Index r = lesion.center.row + dr;
        if (r < 0 || r >= spec.n_rows) continue;
        for (Eigen::Index dc = -reach; dc <= reach; ++dc) {
          const Eigen::Index c = lesion.center.col + dc;
          if (c < 0 || c >= spec.n_cols) continue;
          if (static_cast<double>(ds * ds + dr * dr + dc * dc) > r2) continue;
          // pairwise non-adjacency: no foreign lesion voxel in the 26-neighborhood
          for (Eigen::Index as = std::max<Eigen::Index>(0, s - 1);
               as <= std::min(spec.n_slices - 1, s + 1); ++as) {
            for (Eigen::Index ar = std::max<Eigen::Index>(0, r - 1);
                 ar <= std::min(spec.n_rows - 1, r + 1); ++ar) {
              for (Eigen::Index ac = std::max<Eigen::Index>(0, c - 1);
                   ac <= std::min(spec.n_cols - 1, c + 1); ++ac) {
                const int o = owner[static_cast<size_t>(out.volume.flat(as, ar, ac))];
                check(o < 0 || o == static_cast<int>(li),
                      "phantom lesions overlap or touch under 26-connectivity");
              }
            }
          }
          owner[static_cast<size_t>(out.volume.flat(s, r, c))] = static_cast<int>(li);
          out.volume(s, r, c) = static_cast<std::int16_t>(lesion.hu_value);
          out.mask(s, r, c) = 1;
          raster[li].voxels.push_back({s, r, c});
          raster[li].pixels_per_slice[s] += 1;
        }
      }
    }
  }

  // expected scores by direct per-pixel summation
  const double pixel_area = spec.spacing.row_mm * spec.spacing.col_mm;
  const double voxel_volume = pixel_area * spec.spacing.slice_mm;
  const double spacing_factor = spec.spacing.slice_mm / 3.0;
  auto build = [&](bool filtered) {
    AgatstonResult result;
    int next_id = 1;
    for (const RasterLesion& lesion : raster) {
      if (lesion.voxels.empty()) continue;
      if (filtered) {
        Eigen::Index max_pixels = 0;
        for (const auto& [slice, count] : lesion.pixels_per_slice) {
          max_pixels = std::max(max_pixels, count);
        }
        if (static_cast<double>(max_pixels) * pixel_area < spec.min_lesion_mm2) continue;
      }
      LesionScore score;
      score.lesion_id = next_id++;
      score.n_voxels = static_cast<Eigen::Index>(lesion.voxels.size());
      score.volume_mm3 = static_cast<double>(lesion.voxels.size()) * voxel_volume;
      for (const auto& [slice, count] : lesion.pixels_per_slice) {
        score.score +=
            oracle_weight(lesion.hu) * static_cast<double>(count) * pixel_area * spacing_factor;
      }
      result.total += score.score;
      result.lesions.push_back(score);
    }
    result.risk = oracle_risk(result.total);
    return result;
  };
  out.expected_raw = build(false);
  out.expected_filtered = build(true);
  return out;
}

std::vector<GeneratedPhantom> make_training_set(int n, const PhantomRanges& ranges,
                                                std::uint64_t seed) {
  check(n >= 1, "make_training_set needs n >= 1");
  std::mt19937_64 rng(seed);
  std::vector<GeneratedPhantom> out;
  out.reserve(static_cast<size_t>(n));

  for (int i = 0; i < n; ++i) {
    PhantomSpec spec;
    spec.n_slices =
        std::uniform_int_distribution<Eigen::Index>(ranges.min_slices, ranges.max_slices)(rng);
    spec.n_rows =
        std::uniform_int_distribution<Eigen::Index>(ranges.min_side, ranges.max_side)(rng);
    spec.n_cols = spec.n_rows;
    spec.spacing.slice_mm =
        std::uniform_real_distribution<double>(ranges.min_slice_mm, ranges.max_slice_mm)(rng);
    const double pixel_mm =
        std::uniform_real_distribution<double>(ranges.min_pixel_mm, ranges.max_pixel_mm)(rng);
    spec.spacing.row_mm = pixel_mm;
    spec.spacing.col_mm = pixel_mm;
    spec.noise_sigma = ranges.noise_sigma;
    spec.seed = rng();

    const int want =
        std::uniform_int_distribution<int>(ranges.min_lesions, ranges.max_lesions)(rng);
    for (int li = 0; li < want; ++li) {
      // up to 50 placements; drop the lesion if the volume stays too crowded
      for (int attempt = 0; attempt < 50; ++attempt) {
        PhantomLesion lesion;
        lesion.radius_px =
            std::uniform_real_distribution<double>(ranges.min_radius, ranges.max_radius)(rng);
        lesion.hu_value = std::uniform_int_distribution<int>(ranges.min_hu, ranges.max_hu)(rng);
        lesion.center.slice =
            std::uniform_int_distribution<Eigen::Index>(0, spec.n_slices - 1)(rng);
        lesion.center.row = std::uniform_int_distribution<Eigen::Index>(0, spec.n_rows - 1)(rng);
        lesion.center.col = std::uniform_int_distribution<Eigen::Index>(0, spec.n_cols - 1)(rng);

        const auto separated = [&](const PhantomLesion& other) {
          const Eigen::Index cheb =
              std::max({std::abs(lesion.center.slice - other.center.slice),
                        std::abs(lesion.center.row - other.center.row),
                        std::abs(lesion.center.col - other.center.col)});
          return cheb >= static_cast<Eigen::Index>(std::floor(lesion.radius_px)) +
                             static_cast<Eigen::Index>(std::floor(other.radius_px)) + 2;
        };
        if (std::ranges::all_of(spec.lesions, separated)) {
          spec.lesions.push_back(lesion);
          break;
        }
      }
    }
    out.push_back(generate(spec));
  }
  return out;
}

}  // namespace cacs
