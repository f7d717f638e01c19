#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>

#include "cacs/errors.hpp"

namespace cacs {

/// Physical voxel spacing in millimetres. The slice spacing is the quantity
/// that scales the Agatston score (spacing_mm / 3 correction).
struct Spacing {
  double slice_mm = 0.0;
  double row_mm = 0.0;
  double col_mm = 0.0;

  bool valid() const { return slice_mm > 0.0 && row_mm > 0.0 && col_mm > 0.0; }
  bool operator==(const Spacing&) const = default;
};

constexpr std::int16_t kHuMin = -1024;  // 12-bit CT range
constexpr std::int16_t kHuMax = 4095;
constexpr int kCalciumHuThreshold = 130;

/// Dense 3-D voxel grid indexed [slice][row][col], flat row-major storage.
/// Immutable by convention once filled; share freely across threads read-only.
template <typename Scalar>
class VolumeGrid {
public:
  VolumeGrid() = default;

  VolumeGrid(Eigen::Index n_slices, Eigen::Index n_rows, Eigen::Index n_cols, Spacing spacing,
             Scalar fill = Scalar{0})
      : n_slices_(n_slices), n_rows_(n_rows), n_cols_(n_cols), spacing_(spacing) {
    if (n_slices <= 0 || n_rows <= 0 || n_cols <= 0) {
      throw ValidationError("volume dims must be positive");
    }
    if (!spacing.valid()) throw ValidationError("volume spacing must be positive");
    voxels_ = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Constant(n_slices * n_rows * n_cols, fill);
  }

  Eigen::Index n_slices() const { return n_slices_; }
  Eigen::Index n_rows() const { return n_rows_; }
  Eigen::Index n_cols() const { return n_cols_; }
  Eigen::Index size() const { return voxels_.size(); }
  bool empty() const { return voxels_.size() == 0; }
  const Spacing& spacing() const { return spacing_; }
  void set_spacing(const Spacing& s) {
    if (!s.valid()) throw ValidationError("volume spacing must be positive");
    spacing_ = s;
  }

  Eigen::Index flat(Eigen::Index s, Eigen::Index r, Eigen::Index c) const {
    return (s * n_rows_ + r) * n_cols_ + c;
  }
  Scalar& operator()(Eigen::Index s, Eigen::Index r, Eigen::Index c) {
    return voxels_[flat(s, r, c)];
  }
  Scalar operator()(Eigen::Index s, Eigen::Index r, Eigen::Index c) const {
    return voxels_[flat(s, r, c)];
  }

  Eigen::Array<Scalar, Eigen::Dynamic, 1>& voxels() { return voxels_; }
  const Eigen::Array<Scalar, Eigen::Dynamic, 1>& voxels() const { return voxels_; }

  template <typename Other>
  bool same_shape(const VolumeGrid<Other>& o) const {
    return n_slices_ == o.n_slices() && n_rows_ == o.n_rows() && n_cols_ == o.n_cols();
  }

private:
  Eigen::Index n_slices_ = 0, n_rows_ = 0, n_cols_ = 0;
  Spacing spacing_;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> voxels_;
};

/// CT volume in Hounsfield units, clamped to [-1024, 4095] on ingestion.
using CtVolume = VolumeGrid<std::int16_t>;

enum class MaskRole { ground_truth, prediction };

/// Binary segmentation mask paired (by shape and spacing) with a CtVolume.
struct MaskVolume : VolumeGrid<std::uint8_t> {
  MaskVolume() = default;
  MaskVolume(Eigen::Index s, Eigen::Index r, Eigen::Index c, Spacing spacing,
             MaskRole role = MaskRole::ground_truth)
      : VolumeGrid<std::uint8_t>(s, r, c, spacing, 0), role(role) {}
  MaskRole role = MaskRole::ground_truth;
};

/// Per-voxel foreground probabilities in [0, 1].
using ProbVolume = VolumeGrid<float>;

// On-disk container: text header (magic, dims, spacing, dtype) followed by a
// raw little-endian payload in [slice][row][col] order.
//
//   CACVOL1
//   dims <n_slices> <n_rows> <n_cols>
//   spacing <slice_mm> <row_mm> <col_mm>
//   dtype int16|uint8|float32
//   data
//   <payload>

CtVolume read_volume(const std::filesystem::path& path);
void write_volume(const CtVolume& vol, const std::filesystem::path& path);

MaskVolume read_mask(const std::filesystem::path& path, MaskRole role = MaskRole::ground_truth);
void write_mask(const MaskVolume& mask, const std::filesystem::path& path);

ProbVolume read_prob(const std::filesystem::path& path);
void write_prob(const ProbVolume& probs, const std::filesystem::path& path);

/// Reads whichever of prob/mask the header declares; masks become 0/1
/// probabilities. Lets the scorer accept either input kind.
ProbVolume read_prob_or_mask(const std::filesystem::path& path);

/// Shortest decimal form that parses back to the same double, with a ".0"
/// suffix for integral values ("1.0 0.5 0.5").
std::string format_double(double v);

}  // namespace cacs
