#include "cacs/loss.hpp"

namespace cacs {

namespace {

constexpr double kProbClip = 1e-7;
constexpr double kIouEps = 1e-7;

void check(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

void validate_pair(const Tensor& p, const Tensor& labels) {
  check(p.defined() && labels.defined(), "loss inputs undefined");
  check(same_shape(p.shape(), labels.shape()),
        "probability/label shape mismatch: " + shape_str(p.shape()) + " vs " +
            shape_str(labels.shape()));
  for (Index i = 0; i < labels.size(); ++i) {
    const double v = labels.at(i);
    check(v == 0.0 || v == 1.0, "labels must be exactly 0 or 1");
  }
}

}  // namespace

LossReport LossTerms::report() const {
  return LossReport{bootstrap.value(), iou.value(), total.value(), n_hard_neg, n_pos};
}

Tensor bootstrap_loss(const Tensor& p, const Tensor& y, const BootstrapParams& params,
                      Index* n_hard_neg, Index* n_pos) {
  validate_pair(p, y);
  check(params.t > 0.0 && params.t < 1.0, "bootstrap t must lie in (0,1)");
  check(params.alpha >= 0.0 && params.beta >= 0.0, "bootstrap weights must be non-negative");

  // selection masks are constants: the indicator carries no gradient
  Array hard_neg(p.size());
  Array positive(p.size());
  Index hn = 0, np = 0;
  for (Index i = 0; i < p.size(); ++i) {
    const bool pos = y.at(i) == 1.0;
    const bool hard = !pos && (1.0 - p.at(i)) < params.t;
    positive[i] = pos ? 1.0 : 0.0;
    hard_neg[i] = hard ? 1.0 : 0.0;
    hn += hard ? 1 : 0;
    np += pos ? 1 : 0;
  }
  if (n_hard_neg != nullptr) *n_hard_neg = hn;
  if (n_pos != nullptr) *n_pos = np;

  const Tensor pc = clip(p, kProbClip, 1.0 - kProbClip);
  Tensor loss = Tensor::scalar(0.0);
  if (hn > 0) {
    const Tensor mask = Tensor::from_array(p.shape(), hard_neg);
    const Tensor term = sum(mul(log(1.0 - pc), mask)) / static_cast<double>(hn);
    loss = loss + params.alpha * term;
  }
  if (np > 0) {
    const Tensor mask = Tensor::from_array(p.shape(), positive);
    const Tensor term = sum(mul(log(pc), mask)) / static_cast<double>(np);
    loss = loss + params.beta * term;
  }
  return neg(loss);
}

Tensor iou_loss(const Tensor& p, const Tensor& g) {
  validate_pair(p, g);
  for (Index i = 0; i < p.size(); ++i) {
    check(p.at(i) >= 0.0 && p.at(i) <= 1.0, "iou_loss probabilities must lie in [0,1]");
  }
  const Tensor inter = sum(mul(p, g));
  const Tensor uni = sum(p) + sum(g) - inter;
  return neg(log((inter + kIouEps) / (uni + kIouEps)));
}

LossTerms combined_loss(const Tensor& p, const Tensor& y, const BootstrapParams& params) {
  LossTerms terms;
  terms.bootstrap = bootstrap_loss(p, y, params, &terms.n_hard_neg, &terms.n_pos);
  terms.iou = iou_loss(p, y);
  terms.total = terms.bootstrap + terms.iou;
  return terms;
}

}  // namespace cacs
