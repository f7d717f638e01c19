#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "cacs/scoring.hpp"
#include "cacs/volume.hpp"

namespace cacs {

/// One synthetic lesion: a ball in index space (per-slice discs), constant HU.
struct PhantomLesion {
  VoxelIndex center;
  double radius_px = 1.0;
  int hu_value = 300;
};

struct PhantomSpec {
  Eigen::Index n_slices = 8, n_rows = 32, n_cols = 32;
  Spacing spacing{3.0, 0.7, 0.7};
  double background_hu = -50.0;  // soft tissue
  std::vector<PhantomLesion> lesions;
  double noise_sigma = 0.0;  // clamped at 3 sigma; background + 3 sigma must stay below 130
  std::uint64_t seed = 0;
  double min_lesion_mm2 = 1.0;  // size-filter setting mirrored by expected_filtered
};

/// A generated phantom with its ground truth. The expected scores come from
/// direct per-pixel summation over the known lesion rasterization - a code
/// path fully independent of the scoring module's component analysis.
struct GeneratedPhantom {
  CtVolume volume;
  MaskVolume mask;
  AgatstonResult expected_raw;       // no size filter
  AgatstonResult expected_filtered;  // lesions below spec.min_lesion_mm2 on every slice dropped
};

/// Rasterizes the lesions onto a noisy background. Rejects specs whose
/// lesions sit below 130 HU, touch under 26-connectivity, or whose noise
/// could reach the calcium threshold.
GeneratedPhantom generate(const PhantomSpec& spec);

struct PhantomRanges {
  Eigen::Index min_slices = 6, max_slices = 12;
  Eigen::Index min_side = 24, max_side = 48;
  double min_slice_mm = 1.0, max_slice_mm = 3.0;
  double min_pixel_mm = 0.5, max_pixel_mm = 1.0;
  int min_lesions = 0, max_lesions = 4;
  double min_radius = 0.0, max_radius = 3.5;
  int min_hu = 130, max_hu = 1000;
  double noise_sigma = 15.0;
};

/// n randomized phantoms, deterministic under the seed. Lesion placement is
/// rejection-sampled so the pairwise separation invariant always holds.
std::vector<GeneratedPhantom> make_training_set(int n, const PhantomRanges& ranges,
                                                std::uint64_t seed);

}  // namespace cacs
