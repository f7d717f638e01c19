#include "cacs/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace cacs {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

// Corner-aligned source coordinate for output index i.
inline double src_coord(Eigen::Index i, Eigen::Index in_n, Eigen::Index out_n) {
  if (out_n == 1 || in_n == 1) return 0.0;
  return static_cast<double>(i) * static_cast<double>(in_n - 1) / static_cast<double>(out_n - 1);
}

void validate_crop(const CropSpec& spec, Eigen::Index h, Eigen::Index w) {
  check(spec.side >= 1, "crop side must be >= 1");
  check(spec.row0 >= 0 && spec.col0 >= 0, "crop origin must be non-negative");
  check(spec.row0 + spec.side <= h && spec.col0 + spec.side <= w,
        "crop window outside the image");
}

}  // namespace

Image resize_slice(const Image& img, Eigen::Index out_h, Eigen::Index out_w) {
  check(img.rows() >= 1 && img.cols() >= 1, "resize input must be non-empty");
  check(out_h >= 1 && out_w >= 1, "resize output dims must be positive");
  const Eigen::Index h = img.rows(), w = img.cols();
  Image out(out_h, out_w);
  for (Eigen::Index i = 0; i < out_h; ++i) {
    const double y = src_coord(i, h, out_h);
    const Eigen::Index y0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(y), h - 1);
    const Eigen::Index y1 = std::min<Eigen::Index>(y0 + 1, h - 1);
    const double fy = y - static_cast<double>(y0);
    for (Eigen::Index j = 0; j < out_w; ++j) {
      const double x = src_coord(j, w, out_w);
      const Eigen::Index x0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(x), w - 1);
      const Eigen::Index x1 = std::min<Eigen::Index>(x0 + 1, w - 1);
      const double fx = x - static_cast<double>(x0);
      // nested lerps: exact for constant images and identity resizes
      const double top = img(y0, x0) + fx * (img(y0, x1) - img(y0, x0));
      const double bottom = img(y1, x0) + fx * (img(y1, x1) - img(y1, x0));
      out(i, j) = top + fy * (bottom - top);
    }
  }
  return out;
}

LabelImage resize_label(const LabelImage& img, Eigen::Index out_h, Eigen::Index out_w) {
  check(img.rows() >= 1 && img.cols() >= 1, "resize input must be non-empty");
  check(out_h >= 1 && out_w >= 1, "resize output dims must be positive");
  const Eigen::Index h = img.rows(), w = img.cols();
  LabelImage out(out_h, out_w);
  for (Eigen::Index i = 0; i < out_h; ++i) {
    const Eigen::Index si =
        std::min<Eigen::Index>(static_cast<Eigen::Index>(std::llround(src_coord(i, h, out_h))), h - 1);
    for (Eigen::Index j = 0; j < out_w; ++j) {
      const Eigen::Index sj =
          std::min<Eigen::Index>(static_cast<Eigen::Index>(std::llround(src_coord(j, w, out_w))), w - 1);
      out(i, j) = img(si, sj);
    }
  }
  return out;
}

Image random_crop_resize(const Image& img, const CropSpec& spec) {
  validate_crop(spec, img.rows(), img.cols());
  const Image window = img.block(spec.row0, spec.col0, spec.side, spec.side);
  return resize_slice(window, img.rows(), img.cols());
}

LabelImage random_crop_resize(const LabelImage& img, const CropSpec& spec) {
  validate_crop(spec, img.rows(), img.cols());
  const LabelImage window = img.block(spec.row0, spec.col0, spec.side, spec.side);
  return resize_label(window, img.rows(), img.cols());
}

CropSpec sample_crop_spec(std::mt19937_64& rng, Eigen::Index image_side) {
  check(image_side >= 4, "image side too small to crop");
  const Eigen::Index lo = image_side / 4, hi = image_side / 2;
  CropSpec spec;
  spec.side = std::uniform_int_distribution<Eigen::Index>(lo, hi)(rng);
  spec.row0 = std::uniform_int_distribution<Eigen::Index>(0, image_side - spec.side)(rng);
  spec.col0 = std::uniform_int_distribution<Eigen::Index>(0, image_side - spec.side)(rng);
  return spec;
}

Image normalize_hu(const Image& hu) {
  return ((hu + 1000.0) / 4000.0).min(1.0).max(0.0);
}

LabelImage apply_hu_label_floor(const LabelImage& label, const Image& hu_slice) {
  check(label.rows() == hu_slice.rows() && label.cols() == hu_slice.cols(),
        "label/HU shape mismatch");
  LabelImage out = label;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      if (hu_slice(i, j) < static_cast<double>(kCalciumHuThreshold)) out(i, j) = 0;
    }
  }
  return out;
}

Image slice_as_image(const CtVolume& vol, Eigen::Index slice) {
  check(slice >= 0 && slice < vol.n_slices(), "slice index out of range");
  Image img(vol.n_rows(), vol.n_cols());
  for (Eigen::Index r = 0; r < vol.n_rows(); ++r) {
    for (Eigen::Index c = 0; c < vol.n_cols(); ++c) {
      img(r, c) = static_cast<double>(vol(slice, r, c));
    }
  }
  return img;
}

LabelImage slice_as_label(const MaskVolume& mask, Eigen::Index slice) {
  check(slice >= 0 && slice < mask.n_slices(), "slice index out of range");
  LabelImage img(mask.n_rows(), mask.n_cols());
  for (Eigen::Index r = 0; r < mask.n_rows(); ++r) {
    for (Eigen::Index c = 0; c < mask.n_cols(); ++c) {
      img(r, c) = mask(slice, r, c);
    }
  }
  return img;
}

SliceStack make_stack(const CtVolume& vol, const MaskVolume& labels, Eigen::Index center,
                      const std::optional<CropSpec>& crop, Eigen::Index out_side) {
  check(!vol.empty(), "empty volume");
  check(vol.same_shape(labels), "volume/label shape mismatch");
  check(center >= 0 && center < vol.n_slices(), "center slice out of range");
  check(out_side >= 1, "output side must be positive");

  SliceStack stack;
  stack.center_index = center;
  const int half = SliceStack::kChannels / 2;
  for (int k = 0; k < SliceStack::kChannels; ++k) {
    const Eigen::Index s =
        std::clamp<Eigen::Index>(center + k - half, 0, vol.n_slices() - 1);
    Image channel = resize_slice(normalize_hu(slice_as_image(vol, s)), out_side, out_side);
    if (crop) channel = random_crop_resize(channel, *crop);
    stack.channels[static_cast<size_t>(k)] = std::move(channel);
  }

  // floor the label against raw HU at native resolution, then resample
  LabelImage label = apply_hu_label_floor(slice_as_label(labels, center),
                                          slice_as_image(vol, center));
  label = resize_label(label, out_side, out_side);
  if (crop) label = random_crop_resize(label, *crop);
  stack.label = std::move(label);
  return stack;
}

Tensor stack_to_tensor(const SliceStack& stack) {
  const Eigen::Index h = stack.channels[0].rows(), w = stack.channels[0].cols();
  Array data(static_cast<Index>(SliceStack::kChannels) * h * w);
  Index pos = 0;
  for (const Image& ch : stack.channels) {
    for (Eigen::Index i = 0; i < h; ++i) {
      for (Eigen::Index j = 0; j < w; ++j) data[pos++] = ch(i, j);
    }
  }
  return Tensor::from_array({1, SliceStack::kChannels, h, w}, std::move(data));
}

Tensor label_to_tensor(const SliceStack& stack) {
  const Eigen::Index h = stack.label.rows(), w = stack.label.cols();
  Array data(h * w);
  Index pos = 0;
  for (Eigen::Index i = 0; i < h; ++i) {
    for (Eigen::Index j = 0; j < w; ++j) data[pos++] = static_cast<double>(stack.label(i, j));
  }
  return Tensor::from_array({1, 1, h, w}, std::move(data));
}

}  // namespace cacs
