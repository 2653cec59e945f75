#pragma once
// One-vs-rest logistic regression over embeddings, C selection on a
// validation split, and accuracy-vs-feature-count curves.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tpm/common.hpp"
#include "tpm/logreg.hpp"

namespace tpm {

// Per-feature affine map fit on the training split: -inf cells are replaced
// by (column min finite value - 10), then (x - mean) / std, with std = 1 for
// constant columns.
struct Standardizer {
  std::vector<double> floor_value;
  std::vector<double> mean;
  std::vector<double> stddev;

  static Standardizer fit(const Matrix& x);
  Matrix apply(const Matrix& x) const;
  std::size_t num_features() const { return mean.size(); }
};

struct LogisticModel {
  std::size_t num_classes = 0;
  double c = 1.0;
  std::vector<std::vector<double>> weights;  // per class, length k
  std::vector<double> biases;
  Standardizer standardizer;
  bool converged = true;

  std::size_t num_features() const { return standardizer.num_features(); }
  // Class scores for already standardized rows.
  Matrix scores(const Matrix& standardized) const;
  std::vector<std::uint32_t> predict(const Matrix& x) const;
};

LogisticModel train_logreg_ovr(const Matrix& x, std::span<const std::uint32_t> y, double c,
                               const OptimizerOptions& options = {}, std::size_t workers = 1);

// Fraction of rows whose argmax class (ties to the smaller id) equals y.
double accuracy(const LogisticModel& model, const Matrix& x, std::span<const std::uint32_t> y);

inline const std::vector<double> kDefaultCGrid{0.0001, 0.001, 0.01, 0.1, 1.0};

struct LabeledMatrix {
  const Matrix* x = nullptr;
  std::span<const std::uint32_t> y;
};

struct SelectionResult {
  double c = 0.0;
  double valid_accuracy = 0.0;
  LogisticModel model;
};

// Exact validation ties go to the smaller C.
SelectionResult select_c(LabeledMatrix train, LabeledMatrix valid, std::span<const double> grid,
                         const OptimizerOptions& options = {}, std::size_t workers = 1);

struct CurvePoint {
  std::size_t features = 0;
  double c = 0.0;
  double valid_accuracy = 0.0;
  double test_accuracy = 0.0;
  bool operator==(const CurvePoint&) const = default;
};

struct CurveResult {
  std::vector<CurvePoint> points;
  CurvePoint baseline;  // raw-input logistic regression
  bool operator==(const CurveResult&) const = default;
};

struct CurveInputs {
  LabeledMatrix train, valid, test;                     // embeddings
  LabeledMatrix raw_train, raw_valid, raw_test;         // original samples
};

// Points at step, 2 step, ..., k (k appended when not a multiple of step),
// each from select_c on the leading columns; baseline from select_c on the
// raw samples.
CurveResult feature_curve(const CurveInputs& inputs, std::size_t step, std::span<const double> grid,
                          const OptimizerOptions& options = {}, std::size_t workers = 1);

// features,C,valid_acc,test_acc rows, then a `baseline` row.
std::string format_curve_csv(const CurveResult& curve);
void save_curve_csv(const CurveResult& curve, const std::filesystem::path& path);

}  // namespace tpm
