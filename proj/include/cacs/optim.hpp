#pragma once

#include <cstdint>
#include <vector>

#include "cacs/loss.hpp"
#include "cacs/nn.hpp"
#include "cacs/preprocess.hpp"
#include "cacs/tensor.hpp"

namespace cacs::optim {

/// SGD with momentum: v <- momentum*v + grad; p <- p - lr(iter)*v.
struct SgdState {
  double lr0 = 0.001;
  double momentum = 0.9;
  std::int64_t iteration = 0;
  std::vector<Array> velocity;  // lazily sized to match params
};

/// Step-decay schedule: lr0 * 0.99^floor(iter / 2000).
double lr_at(std::int64_t iter, double lr0);

/// One update over all parameters; reads accumulated gradients and advances
/// the iteration counter. Every parameter must carry a gradient.
void sgd_step(std::vector<Tensor>& params, SgdState& state);

struct TrainToyOptions {
  BootstrapParams loss_params;
  int epochs = 25;
  std::int64_t max_iterations = -1;  // <0: run all epochs
  double lr0 = 0.001;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

struct IterationRecord {
  std::int64_t iteration = 0;
  double bootstrap = 0.0;
  double iou = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

/// Mini-batch-size-1 training over a stack dataset; the sample order is
/// reshuffled each epoch from the seeded generator, so runs are reproducible.
std::vector<IterationRecord> train_toy(nn::DenseRauNet& net,
                                       const std::vector<SliceStack>& dataset,
                                       const TrainToyOptions& options);

/// Loss curve as "iteration,bootstrap,iou,total,lr" lines.
std::string loss_curve_csv(const std::vector<IterationRecord>& records);

}  // namespace cacs::optim
