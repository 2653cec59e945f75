#include "tpm/logreg.hpp"

#include <deque>

#include "tpm/kernels.hpp"

namespace tpm {

namespace {

// log(1 + exp(u))
double softplus(double u) { return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u)); }

// 1 / (1 + exp(-u))
double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double inf_norm(std::span<const double> v) {
  double out = 0.0;
  for (double x : v) out = std::max(out, std::abs(x));
  return out;
}

double dot_plain(std::span<const double> a, std::span<const double> b) { return kernels::dot(a, b); }

}  // namespace

double logistic_objective(const Matrix& x, std::span<const double> targets, double c,
                          std::span<const double> params, std::span<double> grad) {
  const std::size_t k = x.cols;
  if (params.size() != k + 1) throw DimensionError("parameter vector must hold k weights and a bias");
  if (targets.size() != x.rows) throw DimensionError("target count differs from row count");
  const std::span<const double> w = params.first(k);
  const double bias = params[k];
  const bool want_grad = !grad.empty();
  if (want_grad) {
    if (grad.size() != k + 1) throw DimensionError("gradient buffer must hold k + 1 entries");
    std::copy(w.begin(), w.end(), grad.begin());
    grad[k] = 0.0;
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double z = kernels::dot(w, x.row(i)) + bias;
    const double margin = targets[i] * z;
    loss += softplus(-margin);
    if (want_grad) {
      const double coef = -c * targets[i] * sigmoid(-margin);
      kernels::axpy(coef, x.row(i), grad.first(k));
      grad[k] += coef;
    }
  }
  return 0.5 * kernels::dot(w, w) + c * loss;
}

BinaryFit fit_binary_logistic(const Matrix& x, std::span<const double> targets, double c,
                              const OptimizerOptions& options, std::span<const double> init) {
  if (!(c > 0.0)) throw ArgumentError("regularization C must be > 0");
  const std::size_t dim = x.cols + 1;
  std::vector<double> params(dim, 0.0);
  if (!init.empty()) {
    if (init.size() != dim) throw DimensionError("initial point has the wrong length");
    std::copy(init.begin(), init.end(), params.begin());
  }
  std::vector<double> grad(dim), trial(dim), trial_grad(dim), direction(dim), alpha_hist;
  double f = logistic_objective(x, targets, c, params, grad);

  struct Pair {
    std::vector<double> s, y;
    double rho;
  };
  std::deque<Pair> history;

  BinaryFit fit;
  std::size_t iter = 0;
  for (; iter < options.max_iters; ++iter) {
    if (inf_norm(grad) < options.grad_tol) {
      fit.converged = true;
      break;
    }
    // Two-loop recursion: direction = -H grad.
    for (std::size_t i = 0; i < dim; ++i) direction[i] = -grad[i];
    alpha_hist.assign(history.size(), 0.0);
    for (std::size_t h = history.size(); h-- > 0;) {
      alpha_hist[h] = history[h].rho * dot_plain(history[h].s, direction);
      kernels::axpy(-alpha_hist[h], history[h].y, direction);
    }
    double scale = 1.0;
    if (!history.empty()) {
      const auto& last = history.back();
      scale = dot_plain(last.s, last.y) / dot_plain(last.y, last.y);
    } else {
      scale = 1.0 / std::max(1.0, inf_norm(grad));
    }
    for (double& d : direction) d *= scale;
    for (std::size_t h = 0; h < history.size(); ++h) {
      const double beta = history[h].rho * dot_plain(history[h].y, direction);
      kernels::axpy(alpha_hist[h] - beta, history[h].s, direction);
    }
    double slope = dot_plain(grad, direction);
    if (!(slope < 0.0)) {
      history.clear();
      const double g_scale = 1.0 / std::max(1.0, inf_norm(grad));
      for (std::size_t i = 0; i < dim; ++i) direction[i] = -grad[i] * g_scale;
      slope = dot_plain(grad, direction);
    }

    // Backtracking line search. Near the optimum the Armijo decrease can fall
    // below rounding noise in f; a unit step that does not raise f beyond
    // that noise and shrinks the gradient is accepted as well.
    double step = 1.0;
    bool accepted = false;
    double f_trial = f;
    for (int tries = 0; tries < 60; ++tries) {
      for (std::size_t i = 0; i < dim; ++i) trial[i] = params[i] + step * direction[i];
      f_trial = logistic_objective(x, targets, c, trial, trial_grad);
      if (f_trial <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      if (tries == 0 && f_trial <= f + 1e-14 * std::abs(f) && inf_norm(trial_grad) < inf_norm(grad)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (history.empty()) break;
      history.clear();
      continue;
    }
    Pair pair{std::vector<double>(dim), std::vector<double>(dim), 0.0};
    for (std::size_t i = 0; i < dim; ++i) {
      pair.s[i] = trial[i] - params[i];
      pair.y[i] = trial_grad[i] - grad[i];
    }
    const double sy = dot_plain(pair.s, pair.y);
    if (sy > 1e-12 * std::sqrt(dot_plain(pair.s, pair.s) * dot_plain(pair.y, pair.y))) {
      pair.rho = 1.0 / sy;
      history.push_back(std::move(pair));
      if (history.size() > options.history) history.pop_front();
    }
    params.swap(trial);
    grad.swap(trial_grad);
    f = f_trial;
  }
  if (!fit.converged && inf_norm(grad) < options.grad_tol) fit.converged = true;
  fit.params = std::move(params);
  fit.objective = f;
  fit.grad_inf_norm = inf_norm(grad);
  fit.iterations = iter;
  return fit;
}

}  // namespace tpm
