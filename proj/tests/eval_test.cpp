#include <random>

#include "doctest.h"
#include "tpm/eval.hpp"

using namespace tpm;

namespace {

struct Blobs {
  Matrix x;
  std::vector<std::uint32_t> y;
};

// Gaussian blobs, one per class, centered on a ring of radius `spread`.
Blobs blobs(std::size_t m, std::size_t k, std::size_t classes, double spread, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Blobs b{Matrix(m, k), std::vector<std::uint32_t>(m)};
  for (std::size_t i = 0; i < m; ++i) {
    const auto c = static_cast<std::uint32_t>(i % classes);
    b.y[i] = c;
    for (std::size_t j = 0; j < k; ++j) {
      const double center = j < 2 ? spread * (j == 0 ? std::cos(2.0 * c) : std::sin(2.0 * c)) : 0.0;
      b.x(i, j) = center + noise(rng);
    }
  }
  return b;
}

std::vector<double> pm_targets(std::span<const std::uint32_t> y) {
  std::vector<double> t(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) t[i] = y[i] == 0 ? 1.0 : -1.0;
  return t;
}

}  // namespace

TEST_CASE("gradient matches central finite differences") {
  const auto data = blobs(120, 6, 2, 1.5, 4);
  const auto t = pm_targets(data.y);
  std::mt19937_64 rng(10);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int point = 0; point < 20; ++point) {
    const double c = point % 2 ? 1.0 : 0.01;
    std::vector<double> w(7), g(7);
    for (double& v : w) v = dist(rng);
    logistic_objective(data.x, t, c, w, g);
    std::vector<double> fd(7);
    for (std::size_t i = 0; i < 7; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(w[i]));
      auto up = w, down = w;
      up[i] += h;
      down[i] -= h;
      fd[i] = (logistic_objective(data.x, t, c, up, {}) - logistic_objective(data.x, t, c, down, {})) / (2 * h);
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < 7; ++i) {
      num += (g[i] - fd[i]) * (g[i] - fd[i]);
      den += g[i] * g[i];
    }
    CHECK(std::sqrt(num) / std::max(std::sqrt(den), 1e-12) < 1e-4);
  }
}

TEST_CASE("optimizer reaches the same objective from different starts") {
  const auto data = blobs(300, 10, 2, 1.0, 5);
  const auto t = pm_targets(data.y);
  for (double c : {0.001, 0.1, 1.0}) {
    const auto a = fit_binary_logistic(data.x, t, c, {});
    std::vector<double> init(11, 3.0);
    const auto b = fit_binary_logistic(data.x, t, c, {}, init);
    CHECK(a.converged);
    CHECK(b.converged);
    CHECK(std::abs(a.objective - b.objective) <= 1e-6 * std::abs(a.objective));
  }
}

TEST_CASE("separable clusters are fit perfectly") {
  const auto data = blobs(200, 2, 2, 8.0, 6);
  const auto model = train_logreg_ovr(data.x, data.y, 1.0);
  CHECK(accuracy(model, data.x, data.y) == 1.0);
  std::vector<std::uint32_t> flipped(data.y.size());
  for (std::size_t i = 0; i < flipped.size(); ++i) flipped[i] = 1 - data.y[i];
  CHECK(accuracy(model, data.x, flipped) == 0.0);
}

TEST_CASE("constant predictor scores chance on random labels") {
  const std::size_t m = 10000;
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::uint32_t> label(0, 2);
  Matrix x(m, 1);
  std::vector<std::uint32_t> y(m);
  for (auto& v : y) v = label(rng);
  LogisticModel constant;
  constant.num_classes = 3;
  constant.weights.assign(3, std::vector<double>{0.0});
  constant.biases = {1.0, 0.0, 0.0};
  constant.standardizer = Standardizer::fit(x);
  CHECK(std::abs(accuracy(constant, x, y) - 1.0 / 3.0) < 0.02);
}

TEST_CASE("training argument checks") {
  const auto data = blobs(30, 2, 2, 3.0, 1);
  CHECK_THROWS_AS(train_logreg_ovr(data.x, data.y, 0.0), ArgumentError);
  const std::vector<std::uint32_t> one_class(30, 1);
  CHECK_THROWS_AS(train_logreg_ovr(data.x, one_class, 1.0), ArgumentError);
  const std::vector<std::uint32_t> short_y(10, 0);
  CHECK_THROWS_AS(train_logreg_ovr(data.x, short_y, 1.0), DimensionError);
}

TEST_CASE("standardizer") {
  Matrix x(4, 3);
  x.data = {kNegInf, 1.0, 5.0, -2.0, 2.0, 5.0, -4.0, 3.0, 5.0, -3.0, 4.0, 5.0};
  const auto s = Standardizer::fit(x);
  CHECK(s.floor_value[0] == -14.0);
  CHECK(s.stddev[2] == 1.0);
  const Matrix z = s.apply(x);
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 4; ++i) mean += z(i, j);
    CHECK(std::abs(mean) < 1e-12);
  }
  Matrix other(1, 3);
  other.data = {kNegInf, 100.0, 5.0};
  CHECK(s.apply(other)(0, 0) == z(0, 0));
  CHECK_THROWS_AS(s.apply(Matrix(1, 2)), DimensionError);
}

TEST_CASE("accuracy ignores monotone rescaling of class scores") {
  const auto data = blobs(150, 4, 3, 2.0, 9);
  const auto model = train_logreg_ovr(data.x, data.y, 0.1);
  const auto predicted = model.predict(data.x);
  const Matrix scores = model.scores(model.standardizer.apply(data.x));
  for (std::size_t i = 0; i < scores.rows; ++i) {
    std::uint32_t best = 0;
    for (std::uint32_t c = 1; c < 3; ++c) {
      if (3.0 * std::exp(scores(i, c)) + 1.0 > 3.0 * std::exp(scores(i, best)) + 1.0) best = c;
    }
    CHECK(best == predicted[i]);
  }
}

TEST_CASE("column permutation permutes weights") {
  const auto data = blobs(200, 5, 3, 1.5, 12);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Matrix px(data.x.rows, 5);
  for (std::size_t i = 0; i < data.x.rows; ++i) {
    for (std::size_t j = 0; j < 5; ++j) px(i, j) = data.x(i, perm[j]);
  }
  const auto a = train_logreg_ovr(data.x, data.y, 0.5);
  const auto b = train_logreg_ovr(px, data.y, 0.5);
  CHECK(accuracy(a, data.x, data.y) == accuracy(b, px, data.y));
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(b.weights[c][j] - a.weights[c][perm[j]]) < 1e-4);
  }
}

TEST_CASE("C selection") {
  const auto train = blobs(150, 3, 3, 1.0, 20);
  const auto valid = blobs(90, 3, 3, 1.0, 21);
  const std::vector<double> one{1.0};
  const auto single = select_c({&train.x, train.y}, {&valid.x, valid.y}, one);
  CHECK(single.c == 1.0);

  const auto easy = blobs(60, 2, 2, 20.0, 22);
  const std::vector<double> grid{1.0, 0.1, 0.01};
  const auto tie = select_c({&easy.x, easy.y}, {&easy.x, easy.y}, grid);
  CHECK(tie.valid_accuracy == 1.0);
  CHECK(tie.c == 0.01);

  const auto full = select_c({&train.x, train.y}, {&valid.x, valid.y}, kDefaultCGrid);
  const auto threaded = select_c({&train.x, train.y}, {&valid.x, valid.y}, kDefaultCGrid, {}, 3);
  CHECK(full.c == threaded.c);
  CHECK(full.model.weights == threaded.model.weights);
  CHECK(kDefaultCGrid == std::vector<double>{0.0001, 0.001, 0.01, 0.1, 1.0});
  CHECK_THROWS_AS(select_c({&train.x, train.y}, {&valid.x, valid.y}, std::vector<double>{}), ArgumentError);
}

TEST_CASE("feature curve") {
  const auto train = blobs(120, 25, 3, 1.0, 30);
  const auto valid = blobs(60, 25, 3, 1.0, 31);
  const auto test = blobs(60, 25, 3, 1.0, 32);
  const auto raw_train = blobs(120, 4, 3, 0.5, 33);
  const auto raw_valid = blobs(60, 4, 3, 0.5, 34);
  const auto raw_test = blobs(60, 4, 3, 0.5, 35);
  const CurveInputs in{{&train.x, train.y},         {&valid.x, valid.y},         {&test.x, test.y},
                       {&raw_train.x, raw_train.y}, {&raw_valid.x, raw_valid.y}, {&raw_test.x, raw_test.y}};
  const std::vector<double> grid{0.01, 1.0};
  const auto curve = feature_curve(in, 10, grid);
  REQUIRE(curve.points.size() == 3);
  CHECK(curve.points[0].features == 10);
  CHECK(curve.points[1].features == 20);
  CHECK(curve.points[2].features == 25);
  CHECK(curve.baseline.features == 4);

  const auto sel = select_c({&train.x, train.y}, {&valid.x, valid.y}, grid);
  CHECK(curve.points[2].c == sel.c);
  CHECK(curve.points[2].valid_accuracy == sel.valid_accuracy);
  CHECK(curve.points[2].test_accuracy == accuracy(sel.model, test.x, test.y));

  const auto whole = feature_curve(in, 25, grid);
  REQUIRE(whole.points.size() == 1);
  CHECK(whole.points[0] == curve.points[2]);
  CHECK(feature_curve(in, 10, grid, {}, 4) == curve);

  const std::string csv = format_curve_csv(curve);
  CHECK(csv.rfind("features,C,valid_acc,test_acc\n10,", 0) == 0);
  CHECK(csv.find("\nbaseline,") != std::string::npos);
}
