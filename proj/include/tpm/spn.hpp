#pragma once
// Sum-Product Networks over binary variables.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tpm/dataset.hpp"
#include "tpm/evaluator.hpp"

namespace tpm {

enum class SpnNodeKind { kSum, kProduct, kLeaf };

struct SpnNode {
  SpnNodeKind kind = SpnNodeKind::kLeaf;
  std::vector<std::uint32_t> children;  // sum and product
  std::vector<double> weights;          // sum only, linear space
  std::vector<double> log_weights;      // sum only
  std::uint32_t var = 0;                // leaf only
  double p1 = 0.5;                      // leaf only, P(X = 1)
  std::array<double, 2> log_p{};        // leaf only, (log P(X=0), log P(X=1))

  static SpnNode leaf(std::uint32_t var, double p1);
  static SpnNode product(std::vector<std::uint32_t> children);
  static SpnNode sum(std::vector<std::uint32_t> children, std::vector<double> weights);

  bool operator==(const SpnNode&) const = default;
};

struct SpnViolation {
  std::uint32_t node;
  std::string property;  // "topology", "normalization", "completeness", ...
  std::string detail;
};

struct SpnValidationReport {
  std::vector<SpnViolation> violations;
  bool ok() const { return violations.empty(); }
  std::string summary() const;
};

// Nodes are stored children-first; the root is the last node. Immutable after
// construction. Evaluation requires a valid network (see validate()).
class Spn final : public MarginalEvaluator {
 public:
  // num_vars == 0 infers n as 1 + the largest leaf variable.
  explicit Spn(std::vector<SpnNode> nodes, std::size_t num_vars = 0);

  std::size_t num_vars() const override { return num_vars_; }
  std::string kind() const override { return "spn"; }
  std::size_t num_nodes() const { return nodes_.size(); }
  std::uint32_t root() const { return static_cast<std::uint32_t>(nodes_.size() - 1); }
  const SpnNode& node(std::uint32_t id) const { return nodes_[id]; }
  const std::vector<SpnNode>& nodes() const { return nodes_; }
  const std::vector<std::uint32_t>& scope(std::uint32_t id) const { return scopes_[id]; }

  const SpnValidationReport& validate() const { return report_; }
  bool valid() const { return report_.ok(); }

  double log_marginal(const PartialEvidence& ev) const override;
  void log_marginal_batch(std::span<const std::uint32_t> scope, std::span<const std::uint8_t> configs,
                          std::span<double> out) const override;

  // As log_marginal_batch; `node_visits` (optional) receives the number of
  // node evaluations, at most num_nodes() per call. Nodes whose scope misses
  // the query are skipped: they contribute log 1 exactly.
  void evaluate(std::span<const std::uint32_t> scope, std::span<const std::uint8_t> configs,
                std::span<double> out, std::size_t* node_visits) const;

  // Joint log-likelihood of a full assignment.
  double log_likelihood(std::span<const std::uint8_t> sample) const;

  std::size_t count(SpnNodeKind kind) const;

 private:
  std::vector<SpnNode> nodes_;
  std::size_t num_vars_ = 0;
  std::vector<std::vector<std::uint32_t>> scopes_;
  SpnValidationReport report_;
};

SpnValidationReport validate_spn(const Spn& spn);

double spn_log_marginal(const Spn& spn, const PartialEvidence& ev);

// Element i = spn_log_marginal(spn, restriction of sample i to scope).
std::vector<double> spn_log_eval_batch(const Spn& spn, const BinaryDataset& ds,
                                       std::span<const std::uint32_t> scope);

// Text model format, one node per line, root last:
//   LEAF <id> <var> <p1>
//   PRD <id> <child>...
//   SUM <id> <child>:<weight>...
// Ids are arbitrary non-negative integers; children must be defined first.
std::string format_spn(const Spn& spn);
// Throws ParseError on malformed text and StructureError if the network fails
// validation.
Spn parse_spn(std::string_view text);
Spn load_spn(const std::filesystem::path& path);
void save_spn(const Spn& spn, const std::filesystem::path& path);

}  // namespace tpm
