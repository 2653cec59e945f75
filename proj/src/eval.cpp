#include "tpm/eval.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "tpm/kernels.hpp"

namespace tpm {

Standardizer Standardizer::fit(const Matrix& x) {
  Standardizer s;
  const std::size_t k = x.cols;
  s.floor_value.assign(k, 0.0);
  s.mean.assign(k, 0.0);
  s.stddev.assign(k, 1.0);
  for (std::size_t j = 0; j < k; ++j) {
    double lowest = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double v = x(i, j);
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
        throw ArgumentError("feature matrix contains NaN or +inf");
      }
      if (v != kNegInf) lowest = std::min(lowest, v);
    }
    s.floor_value[j] = (std::isinf(lowest) ? 0.0 : lowest) - 10.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) sum += x(i, j) == kNegInf ? s.floor_value[j] : x(i, j);
    const double mean = x.rows ? sum / static_cast<double>(x.rows) : 0.0;
    double sq = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double d = (x(i, j) == kNegInf ? s.floor_value[j] : x(i, j)) - mean;
      sq += d * d;
    }
    const double sd = x.rows ? std::sqrt(sq / static_cast<double>(x.rows)) : 0.0;
    s.mean[j] = mean;
    s.stddev[j] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (x.cols != mean.size()) throw DimensionError("feature count differs from the fitted standardizer");
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) {
      double v = x(i, j);
      if (std::isnan(v)) throw ArgumentError("feature matrix contains NaN");
      if (v == kNegInf) v = floor_value[j];
      out(i, j) = (v - mean[j]) / stddev[j];
    }
  }
  return out;
}

Matrix LogisticModel::scores(const Matrix& standardized) const {
  Matrix out(standardized.rows, num_classes);
  for (std::size_t i = 0; i < standardized.rows; ++i) {
    for (std::size_t c = 0; c < num_classes; ++c) {
      out(i, c) = kernels::dot(weights[c], standardized.row(i)) + biases[c];
    }
  }
  return out;
}

std::vector<std::uint32_t> LogisticModel::predict(const Matrix& x) const {
  const Matrix s = scores(standardizer.apply(x));
  std::vector<std::uint32_t> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    std::uint32_t best = 0;
    for (std::uint32_t c = 1; c < num_classes; ++c) {
      if (s(i, c) > s(i, best)) best = c;
    }
    out[i] = best;
  }
  return out;
}

LogisticModel train_logreg_ovr(const Matrix& x, std::span<const std::uint32_t> y, double c,
                               const OptimizerOptions& options, std::size_t workers) {
  if (!(c > 0.0)) throw ArgumentError("regularization C must be > 0");
  if (y.size() != x.rows) throw DimensionError("label count differs from row count");
  const std::set<std::uint32_t> distinct(y.begin(), y.end());
  if (distinct.size() < 2) throw ArgumentError("training labels contain a single class");
  LogisticModel model;
  model.num_classes = *distinct.rbegin() + 1;
  if (x.rows < model.num_classes) throw ArgumentError("fewer samples than classes");
  model.c = c;
  model.standardizer = Standardizer::fit(x);
  const Matrix z = model.standardizer.apply(x);
  model.weights.resize(model.num_classes);
  model.biases.resize(model.num_classes);
  std::vector<char> converged(model.num_classes, 1);
  parallel_for(model.num_classes, workers, [&](std::size_t cls) {
    std::vector<double> targets(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) targets[i] = y[i] == cls ? 1.0 : -1.0;
    const BinaryFit fit = fit_binary_logistic(z, targets, c, options);
    model.weights[cls].assign(fit.params.begin(), fit.params.end() - 1);
    model.biases[cls] = fit.params.back();
    converged[cls] = fit.converged;
  });
  model.converged = std::all_of(converged.begin(), converged.end(), [](char v) { return v != 0; });
  return model;
}

double accuracy(const LogisticModel& model, const Matrix& x, std::span<const std::uint32_t> y) {
  if (x.cols != model.num_features()) throw DimensionError("feature count differs from the model");
  if (y.size() != x.rows) throw DimensionError("label count differs from row count");
  if (x.rows == 0) return 0.0;
  const auto predicted = model.predict(x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hits += predicted[i] == y[i];
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

SelectionResult select_c(LabeledMatrix train, LabeledMatrix valid, std::span<const double> grid,
                         const OptimizerOptions& options, std::size_t workers) {
  if (grid.empty()) throw ArgumentError("C grid is empty");
  std::vector<LogisticModel> models(grid.size());
  std::vector<double> scores(grid.size());
  parallel_for(grid.size(), workers, [&](std::size_t g) {
    models[g] = train_logreg_ovr(*train.x, train.y, grid[g], options);
    scores[g] = accuracy(models[g], *valid.x, valid.y);
  });
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (scores[g] > scores[best] || (scores[g] == scores[best] && grid[g] < grid[best])) best = g;
  }
  return {grid[best], scores[best], std::move(models[best])};
}

CurveResult feature_curve(const CurveInputs& in, std::size_t step, std::span<const double> grid,
                          const OptimizerOptions& options, std::size_t workers) {
  if (step < 1) throw ArgumentError("curve step must be >= 1");
  const std::size_t k = in.train.x->cols;
  if (in.valid.x->cols != k || in.test.x->cols != k) throw DimensionError("embedding splits differ in width");
  std::vector<std::size_t> counts;
  for (std::size_t j = step; j <= k; j += step) counts.push_back(j);
  if (counts.empty() || counts.back() != k) {
    if (k > 0) counts.push_back(k);
  }

  CurveResult result;
  result.points.resize(counts.size());
  // Task counts.size() is the raw baseline.
  parallel_for(counts.size() + 1, workers, [&](std::size_t t) {
    if (t == counts.size()) {
      const auto sel = select_c(in.raw_train, in.raw_valid, grid, options);
      result.baseline = {in.raw_train.x->cols, sel.c, sel.valid_accuracy,
                         accuracy(sel.model, *in.raw_test.x, in.raw_test.y)};
      return;
    }
    const std::size_t j = counts[t];
    const Matrix train = j == k ? *in.train.x : in.train.x->leading_columns(j);
    const Matrix valid = j == k ? *in.valid.x : in.valid.x->leading_columns(j);
    const Matrix test = j == k ? *in.test.x : in.test.x->leading_columns(j);
    const auto sel = select_c({&train, in.train.y}, {&valid, in.valid.y}, grid, options);
    result.points[t] = {j, sel.c, sel.valid_accuracy, accuracy(sel.model, test, in.test.y)};
  });
  return result;
}

std::string format_curve_csv(const CurveResult& curve) {
  std::string out = "features,C,valid_acc,test_acc\n";
  char buf[128];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof buf, "%zu,%g,%.6f,%.6f\n", p.features, p.c, p.valid_accuracy, p.test_accuracy);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "baseline,%g,%.6f,%.6f\n", curve.baseline.c, curve.baseline.valid_accuracy,
                curve.baseline.test_accuracy);
  out += buf;
  return out;
}

void save_curve_csv(const CurveResult& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write curve file " + path.string());
  out << format_curve_csv(curve);
}

}  // namespace tpm
