#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cacs {

struct GradCheckResult {
  std::string block;
  int n_seeds = 0;
  long n_elements = 0;     // leaf elements compared
  double max_abs_err = 0;  // worst |analytic - finite difference|
  double max_violation = 0;  // worst |a-f| / (atol + rtol*max(|a|,|f|)); pass iff <= 1
  bool pass = false;
};

/// Finite-difference verification of every differentiable block: plain and
/// dilated convolutions (rates 2/4/8), the transposed convolution, train-mode
/// batch norm, the dense block, the residual atrous unit, scSE, the extra
/// dense block, a full decoder module, and both loss terms. Each block is
/// rebuilt n_seeds times from fresh random fixtures.
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed, int n_seeds,
                                                double rtol = 1e-4, double atol = 1e-6);

}  // namespace cacs
