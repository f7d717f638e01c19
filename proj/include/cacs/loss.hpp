#pragma once

#include "cacs/tensor.hpp"

namespace cacs {

/// Hard-negative selection threshold and the class trade-off weights.
/// Operating defaults: t = 0.9, alpha = 8, beta = 1.
struct BootstrapParams {
  double t = 0.9;
  double alpha = 8.0;
  double beta = 1.0;
};

struct LossReport {
  double bootstrap = 0.0;
  double iou = 0.0;
  double total = 0.0;
  Index n_hard_neg = 0;
  Index n_pos = 0;
};

/// Differentiable loss terms plus the scalar-valued summary. `total` is the
/// graph node to call backward() on; total == bootstrap + iou.
struct LossTerms {
  Tensor bootstrap;
  Tensor iou;
  Tensor total;
  Index n_hard_neg = 0;
  Index n_pos = 0;
  LossReport report() const;
};

/// Class-balanced cross entropy restricted to hard negatives:
///
///   -[ alpha * mean_{y=0, 1-p < t} log(1-p) + beta * mean_{y=1} log(p) ]
///
/// A negative with background probability 1-p already at or above t is
/// considered easy and dropped; positives are always kept. An empty selection
/// contributes 0. The selection itself is treated as constant under
/// differentiation, and probabilities are clipped to [1e-7, 1-1e-7] before
/// the logs.
Tensor bootstrap_loss(const Tensor& p, const Tensor& y, const BootstrapParams& params,
                      Index* n_hard_neg = nullptr, Index* n_pos = nullptr);

/// Exponential soft-IoU loss:
///
///   -ln( (sum p*g + eps) / (sum p + sum g - sum p*g + eps) ),  eps = 1e-7
///
/// Zero (within eps) for a perfect binary prediction, including the
/// degenerate all-empty case.
Tensor iou_loss(const Tensor& p, const Tensor& g);

/// total = bootstrap + iou, with the per-term report populated.
LossTerms combined_loss(const Tensor& p, const Tensor& y, const BootstrapParams& params);

}  // namespace cacs
