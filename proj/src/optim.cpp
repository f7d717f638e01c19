#include "cacs/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cacs/volume.hpp"

namespace cacs::optim {

double lr_at(std::int64_t iter, double lr0) {
  if (iter < 0) throw ValidationError("iteration must be non-negative");
  return lr0 * std::pow(0.99, static_cast<double>(iter / 2000));
}

void sgd_step(std::vector<Tensor>& params, SgdState& state) {
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const Tensor& p : params) state.velocity.push_back(Array::Zero(p.size()));
  }
  if (state.velocity.size() != params.size()) {
    throw ValidationError("optimizer state does not match parameter list");
  }
  const double lr = lr_at(state.iteration, state.lr0);
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) throw ValidationError("sgd_step: parameter is missing its gradient");
    Array& v = state.velocity[i];
    v = state.momentum * v + p.grad();
    p.values() -= lr * v;
  }
  state.iteration += 1;
}

std::vector<IterationRecord> train_toy(nn::DenseRauNet& net,
                                       const std::vector<SliceStack>& dataset,
                                       const TrainToyOptions& options) {
  if (dataset.empty()) throw ValidationError("train_toy: empty dataset");
  if (options.epochs < 1) throw ValidationError("train_toy: epochs must be >= 1");

  std::mt19937_64 rng(options.seed);
  auto params = nn::parameters(net);
  SgdState state;
  state.lr0 = options.lr0;
  state.momentum = options.momentum;

  std::vector<IterationRecord> records;
  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t pick : order) {
      if (options.max_iterations >= 0 && state.iteration >= options.max_iterations) {
        return records;
      }
      const SliceStack& sample = dataset[pick];
      const Tensor input = stack_to_tensor(sample);
      const Tensor target = label_to_tensor(sample);

      nn::zero_grad(params);
      const Tensor probs = nn::denseraunet_forward(net, input, nn::Mode::train);
      const LossTerms loss = combined_loss(probs, target, options.loss_params);
      const double lr = lr_at(state.iteration, state.lr0);
      backward(loss.total);
      sgd_step(params, state);

      const LossReport report = loss.report();
      records.push_back({state.iteration - 1, report.bootstrap, report.iou, report.total, lr});
    }
  }
  return records;
}

std::string loss_curve_csv(const std::vector<IterationRecord>& records) {
  std::ostringstream out;
  out << "iteration,bootstrap,iou,total,lr\n";
  for (const IterationRecord& r : records) {
    out << r.iteration << "," << format_double(r.bootstrap) << "," << format_double(r.iou) << ","
        << format_double(r.total) << "," << format_double(r.lr) << "\n";
  }
  return out.str();
}

}  // namespace cacs::optim
