#include <filesystem>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "tpm/embed.hpp"
#include "tpm/learnspn.hpp"

using namespace tpm;

namespace {

Spn uniform_spn(std::size_t n) {
  std::vector<SpnNode> nodes;
  std::vector<std::uint32_t> kids;
  for (std::uint32_t v = 0; v < n; ++v) {
    nodes.push_back(SpnNode::leaf(v, 0.5));
    kids.push_back(v);
  }
  if (n > 1) nodes.push_back(SpnNode::product(kids));
  return Spn(nodes, n);
}

BinaryDataset image_data(std::size_t m, std::size_t w, std::size_t h, std::uint64_t seed) {
  return testing::mixture_dataset(m, w * h, 3, seed).with_geometry({w, h});
}

}  // namespace

TEST_CASE("rectangle queries") {
  const ImageGeometry g{16, 8};
  const QuerySet qs = gen_rect_queries(g, 1000, 2, 7, 42);
  CHECK(qs.size() == 1000);
  for (const auto& scope : qs.scopes) {
    std::size_t x0 = 99, y0 = 99, x1 = 0, y1 = 0;
    for (auto v : scope) {
      x0 = std::min<std::size_t>(x0, v % 16);
      x1 = std::max<std::size_t>(x1, v % 16);
      y0 = std::min<std::size_t>(y0, v / 16);
      y1 = std::max<std::size_t>(y1, v / 16);
    }
    const std::size_t w = x1 - x0 + 1, h = y1 - y0 + 1;
    CHECK(w >= 2);
    CHECK(w <= 7);
    CHECK(h >= 2);
    CHECK(h <= 7);
    CHECK(scope.size() == w * h);
    CHECK(std::is_sorted(scope.begin(), scope.end()));
  }
  CHECK(gen_rect_queries({28, 28}, 50, 2, 10, 3).scopes == gen_rect_queries({28, 28}, 50, 2, 10, 3).scopes);
  CHECK(gen_rect_queries({28, 28}, 50, 2, 10, 3).scopes != gen_rect_queries({28, 28}, 50, 2, 10, 4).scopes);

  const QuerySet whole = gen_rect_queries({5, 5}, 4, 5, 5, 1);
  for (const auto& scope : whole.scopes) CHECK(scope.size() == 25);

  CHECK_THROWS_AS(gen_rect_queries({4, 4}, 3, 3, 2, 1), ArgumentError);
  CHECK_THROWS_AS(gen_rect_queries({4, 4}, 3, 0, 2, 1), ArgumentError);
  CHECK_THROWS_AS(gen_rect_queries({4, 8}, 3, 2, 5, 1), ArgumentError);
}

TEST_CASE("query embedding examples") {
  const auto ds = image_data(30, 2, 2, 1);
  const Spn uniform = uniform_spn(4);

  QuerySet none;
  const auto empty = rand_query_embedding(uniform, ds, none);
  CHECK(empty.values.rows == 30);
  CHECK(empty.values.cols == 0);

  QuerySet qs;
  qs.scopes = {{0, 1}, {0, 1, 2, 3}};
  const auto e = rand_query_embedding(uniform, ds, qs);
  for (std::size_t i = 0; i < 30; ++i) {
    CHECK(e.values(i, 0) == doctest::Approx(std::log(0.25)));
    CHECK(e.values(i, 1) == uniform.log_likelihood(ds.sample(i)));
  }

  CHECK_THROWS_AS(rand_query_embedding(uniform_spn(5), ds, qs), DimensionError);
  QuerySet bad;
  bad.scopes = {{0, 9}};
  CHECK_THROWS_AS(rand_query_embedding(uniform, ds, bad), ScopeError);
}

TEST_CASE("query embeddings are deterministic and scale-bounded") {
  const auto ds = image_data(200, 4, 4, 7);
  LearnSpnParams params;
  params.m_min_instances = 30;
  const Spn spn = learn_spn_b(ds, params);
  const QuerySet qs = gen_rect_queries({4, 4}, 40, 1, 3, 5);

  EmbedOptions base;
  const auto reference = rand_query_embedding(spn, ds, qs, base);
  CHECK(reference.values.rows == 200);
  CHECK(reference.values.cols == 40);
  for (double v : reference.values.data) CHECK(v <= 0.0);

  EmbedOptions no_memo = base;
  no_memo.memoize = false;
  CHECK(rand_query_embedding(spn, ds, qs, no_memo).values == reference.values);

  EmbedOptions threaded = base;
  threaded.workers = 4;
  CHECK(rand_query_embedding(spn, ds, qs, threaded).values == reference.values);

  EmbedOptions linear = base;
  linear.scale = FeatureScale::kLinear;
  const auto lin = rand_query_embedding(spn, ds, qs, linear);
  CHECK(lin.scale == FeatureScale::kLinear);
  for (std::size_t i = 0; i < lin.values.data.size(); ++i) {
    CHECK(lin.values.data[i] >= 0.0);
    CHECK(lin.values.data[i] <= 1.0);
    CHECK(lin.values.data[i] == std::exp(reference.values.data[i]));
  }
}

TEST_CASE("different models answer the same queries") {
  const auto ds = image_data(300, 3, 3, 9);
  LearnSpnParams params;
  params.m_min_instances = 40;
  const Spn spn = learn_spn_b(ds, params);
  MixtureEmOptions opts;
  opts.components = 2;
  opts.max_iters = 10;
  const MixtureOfTrees mt = fit_mixture_em(ds, opts).model;
  const QuerySet qs = gen_rect_queries({3, 3}, 25, 1, 3, 11);
  const auto es = rand_query_embedding(spn, ds, qs);
  const auto em = rand_query_embedding(mt, ds, qs);

  const auto spn_joint = [&spn](const std::vector<std::uint8_t>& x) { return testing::oracle_spn_joint(spn, x); };
  const auto mt_joint = [&mt](const std::vector<std::uint8_t>& x) { return testing::oracle_mt_joint(mt, x); };
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> row(0, 299), col(0, 24);
  for (int cell = 0; cell < 10; ++cell) {
    const std::size_t i = row(rng), j = col(rng);
    const auto ev = PartialEvidence::restrict(ds.sample(i), qs.scopes[j]);
    CHECK(std::abs(es.values(i, j) - testing::oracle_log_marginal(9, spn_joint, ev)) < 1e-9);
    CHECK(std::abs(em.values(i, j) - testing::oracle_log_marginal(9, mt_joint, ev)) < 1e-9);
  }
}

TEST_CASE("random patches") {
  const auto ds = testing::uniform_dataset(20, 10, 3);
  const auto full = extract_random_patches(ds, 15, 10, 1);
  CHECK(full.num_samples() == 15);
  CHECK(full.num_vars() == 10);
  CHECK_FALSE(full.has_labels());
  for (std::size_t p = 0; p < full.num_samples(); ++p) {
    bool found = false;
    for (std::size_t i = 0; i < ds.num_samples() && !found; ++i) {
      found = std::equal(full.sample(p).begin(), full.sample(p).end(), ds.sample(i).begin());
    }
    CHECK(found);
  }
  const auto single = extract_random_patches(ds, 50, 1, 2);
  CHECK(single.num_vars() == 1);
  CHECK(extract_random_patches(ds, 100, 4, 8) == extract_random_patches(ds, 100, 4, 8));
  CHECK_THROWS_AS(extract_random_patches(ds, 10, 11, 1), ArgumentError);
  CHECK_THROWS_AS(extract_random_patches(ds, 0, 2, 1), ArgumentError);
}

TEST_CASE("sliding window embeddings") {
  CHECK(window_count(10, 4, 1) == 7);
  CHECK(window_count(10, 4, 3) == 3);
  CHECK(window_count(5, 5, 1) == 1);

  const auto ds = testing::uniform_dataset(25, 6, 4);
  const auto e = rand_patch_embedding(uniform_spn(2), ds, 2, 1);
  CHECK(e.values.cols == 5);
  for (double v : e.values.data) CHECK(v == doctest::Approx(std::log(0.25)));

  std::mt19937_64 rng(3);
  const Spn whole = testing::random_spn(6, rng);
  const auto one = rand_patch_embedding(whole, ds, 6, 1);
  REQUIRE(one.values.cols == 1);
  for (std::size_t i = 0; i < 25; ++i) CHECK(one.values(i, 0) == whole.log_likelihood(ds.sample(i)));

  const auto ds10 = testing::uniform_dataset(12, 10, 5);
  const Spn four = testing::random_spn(4, rng);
  const auto e10 = rand_patch_embedding(four, ds10, 4, 1);
  CHECK(e10.values.cols == 7);
  for (std::size_t i = 0; i < 12; ++i) {
    for (std::size_t h = 0; h < 7; ++h) {
      const std::vector<std::uint8_t> window(ds10.sample(i).begin() + h, ds10.sample(i).begin() + h + 4);
      CHECK(e10.values(i, h) == four.log_likelihood(window));
    }
  }
  EmbedOptions threaded;
  threaded.workers = 3;
  CHECK(rand_patch_embedding(four, ds10, 4, 2, threaded).values == rand_patch_embedding(four, ds10, 4, 2).values);
  CHECK_THROWS_AS(rand_patch_embedding(four, ds10, 3, 1), DimensionError);
}

TEST_CASE("serialization round-trips") {
  const QuerySet qs = gen_rect_queries({6, 6}, 12, 2, 4, 3);
  CHECK(parse_query_set(format_query_set(qs)).scopes == qs.scopes);
  CHECK_THROWS_AS(parse_query_set("3 1\n"), ParseError);

  EmbeddingMatrix e;
  e.values = Matrix(2, 3);
  e.values.data = {-0.1, kNegInf, -1.0 / 3.0, -2.5e-300, -7.0, -0.0};
  e.provenance = {"spn:abc", "queries:def", 17};
  const auto dir = std::filesystem::temp_directory_path() / "tpm_embed_test";
  std::filesystem::create_directories(dir);
  save_embedding(e, dir / "e.csv", &qs);
  const auto back = load_embedding(dir / "e.csv");
  CHECK(back.values == e.values);
  CHECK(back.provenance.model_id == "spn:abc");
  CHECK(back.provenance.source_id == "queries:def");
  CHECK(back.provenance.seed == 17);
  CHECK(back.scale == FeatureScale::kLog);
  std::filesystem::remove_all(dir);
}
