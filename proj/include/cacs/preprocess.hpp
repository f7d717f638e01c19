#pragma once

#include <Eigen/Core>

#include <array>
#include <optional>
#include <random>

#include "cacs/tensor.hpp"
#include "cacs/volume.hpp"

namespace cacs {

using Image = Eigen::ArrayXXd;  // (row, col)
using LabelImage = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Square crop window; applied identically to every channel of a stack and
/// its label so the geometry stays paired.
struct CropSpec {
  Eigen::Index row0 = 0;
  Eigen::Index col0 = 0;
  Eigen::Index side = 0;
};

/// Nine adjacent slices (normalized intensities) centered on one slice,
/// paired with that slice's binary label.
struct SliceStack {
  static constexpr int kChannels = 9;
  std::array<Image, kChannels> channels;
  LabelImage label;
  Eigen::Index center_index = 0;
};

/// Bilinear resize with corner-aligned sampling; exact identity when the
/// output dims equal the input dims.
Image resize_slice(const Image& img, Eigen::Index out_h, Eigen::Index out_w);

/// Nearest-neighbor resize, used for labels so {0,1} values survive.
LabelImage resize_label(const LabelImage& img, Eigen::Index out_h, Eigen::Index out_w);

/// Extracts spec's square window and scales it back to the input dims.
Image random_crop_resize(const Image& img, const CropSpec& spec);
LabelImage random_crop_resize(const LabelImage& img, const CropSpec& spec);

/// Uniform square side in [image_side/4, image_side/2] at a uniform
/// position; [128, 256] for the standard 512-pixel working resolution.
CropSpec sample_crop_spec(std::mt19937_64& rng, Eigen::Index image_side);

/// Linear map of [-1000, 3000] HU onto [0,1], clipped. Keeps the calcium
/// threshold (130 HU -> 0.2825) well inside the linear range.
Image normalize_hu(const Image& hu);

/// Zeroes every positive label whose voxel is below 130 HU. Idempotent and
/// monotone: never creates positives.
LabelImage apply_hu_label_floor(const LabelImage& label, const Image& hu_slice);

/// Raw HU slice as a double image.
Image slice_as_image(const CtVolume& vol, Eigen::Index slice);
LabelImage slice_as_label(const MaskVolume& mask, Eigen::Index slice);

/// Builds the 9-channel input for one center slice: channels are slices
/// center-4 .. center+4 (edge-replicated at the volume boundary), normalized,
/// resized to out_side, with an optional shared crop. The label is the center
/// slice's mask after the 130 HU floor, resized nearest-neighbor.
SliceStack make_stack(const CtVolume& vol, const MaskVolume& labels, Eigen::Index center,
                      const std::optional<CropSpec>& crop = std::nullopt,
                      Eigen::Index out_side = 512);

/// Stack as a [1, 9, H, W] tensor; label as [1, 1, H, W].
Tensor stack_to_tensor(const SliceStack& stack);
Tensor label_to_tensor(const SliceStack& stack);

}  // namespace cacs
