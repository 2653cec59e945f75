#pragma once
// Binary L2-regularized logistic regression, the building block of the
// one-vs-rest classifier in eval.hpp.

#include <span>
#include <vector>

#include "tpm/common.hpp"

namespace tpm {

struct OptimizerOptions {
  std::size_t max_iters = 1000;
  double grad_tol = 1e-5;
  std::size_t history = 10;  // L-BFGS memory
};

// f(w, b) = 0.5 ||w||^2 + C sum_i log(1 + exp(-t_i (w . x_i + b))),
// t_i in {-1, +1}. params = [w_0 .. w_{k-1}, b]. Fills grad when non-empty.
double logistic_objective(const Matrix& x, std::span<const double> targets, double c,
                          std::span<const double> params, std::span<double> grad);

struct BinaryFit {
  std::vector<double> params;  // k weights then the bias
  double objective = 0.0;
  double grad_inf_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

// L-BFGS with backtracking (Armijo) line search from `init` (zeros when
// empty). Deterministic.
BinaryFit fit_binary_logistic(const Matrix& x, std::span<const double> targets, double c,
                              const OptimizerOptions& options, std::span<const double> init = {});

}  // namespace tpm
