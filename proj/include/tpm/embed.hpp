#pragma once
// Embeddings from random queries against a tractable density model.
//
// Random marginal queries: each feature is the log-probability of a sample
// restricted to a random rectangular pixel scope.
// Random patches: a model is fit on random contiguous patches and every
// sample is scored window by window.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tpm/common.hpp"
#include "tpm/dataset.hpp"
#include "tpm/evaluator.hpp"

namespace tpm {

enum class FeatureScale { kLog, kLinear };

std::string_view feature_scale_name(FeatureScale scale);
FeatureScale parse_feature_scale(std::string_view text);

struct QuerySet {
  std::vector<std::vector<std::uint32_t>> scopes;
  ImageGeometry geometry;
  std::size_t min_side = 0;
  std::size_t max_side = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return scopes.size(); }
};

struct EmbeddingProvenance {
  std::string model_id;
  std::string source_id;  // query-set or patch-model id
  std::uint64_t seed = 0;
};

struct EmbeddingMatrix {
  Matrix values;  // m x k
  FeatureScale scale = FeatureScale::kLog;
  EmbeddingProvenance provenance;

  std::size_t num_samples() const { return values.rows; }
  std::size_t num_features() const { return values.cols; }
};

// k random rectangles with sides drawn uniformly from [min_side, max_side] and
// a uniform top-left corner that keeps them inside the image. Scopes are the
// covered pixels in row-major order.
QuerySet gen_rect_queries(ImageGeometry geometry, std::size_t k, std::size_t min_side, std::size_t max_side,
                          std::uint64_t seed);

struct EmbedOptions {
  FeatureScale scale = FeatureScale::kLog;
  // Evaluate each distinct observed configuration of a scope once.
  bool memoize = true;
  std::size_t workers = 1;
  EmbeddingProvenance provenance;
};

EmbeddingMatrix rand_query_embedding(const MarginalEvaluator& model, const BinaryDataset& ds, const QuerySet& qs,
                                     const EmbedOptions& options = {});

// s patches of d contiguous entries of the flattened samples. No labels, no
// geometry on the result.
BinaryDataset extract_random_patches(const BinaryDataset& ds, std::size_t s, std::size_t d, std::uint64_t seed);

// floor((n - d) / stride) + 1
std::size_t window_count(std::size_t n, std::size_t d, std::size_t stride);

// Feature h = joint log-probability of window h under a d-variable model.
EmbeddingMatrix rand_patch_embedding(const MarginalEvaluator& patch_model, const BinaryDataset& ds, std::size_t d,
                                     std::size_t stride, const EmbedOptions& options = {});

// One line per query, space-separated indices.
std::string format_query_set(const QuerySet& qs);
// Geometry and generation parameters are not stored in the text; they are
// left zeroed.
QuerySet parse_query_set(std::string_view text);
void save_query_set(const QuerySet& qs, const std::filesystem::path& path);
QuerySet load_query_set(const std::filesystem::path& path);

// CSV, one sample per row, %.17g; impossible evidence written as -inf. The
// sidecar JSON carries scale, provenance, and (optionally) the query scopes.
std::string format_embedding_csv(const EmbeddingMatrix& e);
EmbeddingMatrix parse_embedding_csv(std::string_view text, FeatureScale scale);
void save_embedding(const EmbeddingMatrix& e, const std::filesystem::path& csv_path, const QuerySet* qs = nullptr);
EmbeddingMatrix load_embedding(const std::filesystem::path& csv_path);

}  // namespace tpm
