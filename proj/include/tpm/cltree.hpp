#pragma once
// Chow-Liu trees and EM-fitted mixtures of trees over binary variables.

#include <array>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tpm/dataset.hpp"
#include "tpm/evaluator.hpp"

namespace tpm {

// Tree-structured distribution rooted at variable 0. Stores P(X_v = 1 | parent
// state) for both parent states; the root repeats its marginal in both slots.
class ChowLiuTree final : public MarginalEvaluator {
 public:
  static constexpr std::int32_t kNoParent = -1;

  ChowLiuTree() = default;
  // Throws StructureError unless `parent` is a single spanning tree with
  // exactly one root and every probability lies in [0, 1].
  ChowLiuTree(std::vector<std::int32_t> parent, std::vector<std::array<double, 2>> p1_given_parent);

  std::size_t num_vars() const override { return parent_.size(); }
  std::string kind() const override { return "cltree"; }
  double log_marginal(const PartialEvidence& ev) const override;
  void log_marginal_batch(std::span<const std::uint32_t> scope, std::span<const std::uint8_t> configs,
                          std::span<double> out) const override;

  // Sum over v of log P(x_v | x_parent(v)).
  double log_likelihood(std::span<const std::uint8_t> sample) const;

  const std::vector<std::int32_t>& parent() const { return parent_; }
  // Root first; every node appears after its parent.
  const std::vector<std::uint32_t>& order() const { return order_; }
  std::int32_t root() const { return static_cast<std::int32_t>(order_.front()); }
  // log P(X_v = a | X_parent = b).
  double log_cpt(std::size_t v, int a, int b) const { return log_cpt_[v][a][b]; }
  const std::array<double, 2>& p1_given_parent(std::size_t v) const { return p1_[v]; }
  // Undirected edges (min, max), sorted.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges() const;

  bool operator==(const ChowLiuTree& other) const { return parent_ == other.parent_ && p1_ == other.p1_; }

 private:
  // Scratch-based evaluation shared by the single and batch entry points.
  double evaluate(std::span<const std::int8_t> state, std::vector<char>& has_evidence,
                  std::vector<std::array<double, 2>>& incoming) const;

  std::vector<std::int32_t> parent_;
  std::vector<std::uint32_t> order_;
  std::vector<std::array<double, 2>> p1_;
  std::vector<std::array<std::array<double, 2>, 2>> log_cpt_;
};

class MixtureOfTrees final : public MarginalEvaluator {
 public:
  MixtureOfTrees() = default;
  // Throws StructureError on empty/mismatched components or weights that do
  // not sum to 1 within 1e-9.
  MixtureOfTrees(std::vector<ChowLiuTree> components, std::vector<double> weights);

  std::size_t num_vars() const override { return components_.front().num_vars(); }
  std::string kind() const override { return "mt"; }
  double log_marginal(const PartialEvidence& ev) const override;
  double log_likelihood(std::span<const std::uint8_t> sample) const;

  std::size_t num_components() const { return components_.size(); }
  const ChowLiuTree& component(std::size_t c) const { return components_[c]; }
  double weight(std::size_t c) const { return weights_[c]; }
  double log_weight(std::size_t c) const { return log_weights_[c]; }

  bool operator==(const MixtureOfTrees& o) const { return components_ == o.components_ && weights_ == o.weights_; }

 private:
  std::vector<ChowLiuTree> components_;
  std::vector<double> weights_;
  std::vector<double> log_weights_;
};

// Weighted sufficient statistics: total weight, per-variable weighted ones,
// and pairwise weighted co-ones.
struct WeightedCounts {
  std::size_t num_vars = 0;
  double total = 0.0;
  std::vector<double> ones;  // n
  Matrix both;               // n x n, both(i, j) = sum_r w_r x_ri x_rj
};

WeightedCounts weighted_counts(const BinaryDataset& ds, std::span<const double> weights);

// n x n symmetric matrix of smoothed weighted mutual information; zero
// diagonal. Throws ArgumentError if the weights sum to zero.
Matrix weighted_mutual_information(const BinaryDataset& ds, std::span<const double> weights, double alpha);

// Maximum spanning tree over the MI matrix (greedy over edges sorted by
// (-MI, i, j)), rooted at variable 0.
ChowLiuTree learn_chow_liu(const BinaryDataset& ds, std::span<const double> weights, double alpha);

double tree_log_marginal(const ChowLiuTree& tree, const PartialEvidence& ev);
double mt_log_marginal(const MixtureOfTrees& mt, const PartialEvidence& ev);

struct MixtureEmOptions {
  std::size_t components = 3;
  std::size_t max_iters = 100;
  double tol = 1e-4;
  double alpha = 0.1;
  std::uint64_t seed = 1337;
  std::size_t workers = 1;
};

struct MixtureEmResult {
  MixtureOfTrees model;
  // Train log-likelihood after each M-step; non-decreasing within 1e-8.
  std::vector<double> log_likelihoods;
  // True when a smoothed M-step lowered the likelihood; that step was
  // discarded and the previous model returned.
  bool stopped_on_decrease = false;
  std::size_t reseeded_components = 0;
};

MixtureEmResult fit_mixture_em(const BinaryDataset& ds, const MixtureEmOptions& options,
                               std::ostream* log = nullptr);

// Text model format:
//   MT <C>
//   LAMBDA <w>                                 (per component, then n lines)
//   NODE <v> <parent|-1> <p1|pa=0> <p1|pa=1>
std::string format_mixture(const MixtureOfTrees& mt);
MixtureOfTrees parse_mixture(std::string_view text);
MixtureOfTrees load_mixture(const std::filesystem::path& path);
void save_mixture(const MixtureOfTrees& mt, const std::filesystem::path& path);

}  // namespace tpm
