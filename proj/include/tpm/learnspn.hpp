#pragma once
// LearnSPN-b structure learning: G-test variable splits, binary row
// clustering, early stopping into fully factorized products.

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "tpm/dataset.hpp"
#include "tpm/spn.hpp"

namespace tpm {

struct LearnSpnParams {
  std::size_t m_min_instances = 500;  // early-stopping threshold
  double rho = 20.0;                  // G statistic threshold
  double alpha = 0.1;                 // leaf Laplace smoothing
  std::size_t cluster_max_iters = 100;
  std::size_t cluster_restarts = 3;
  std::uint64_t seed = 1337;

  // Throws ArgumentError when an invariant is broken.
  void check() const;
};

// Bit-packed columns for a subset of rows and variables. Column j holds
// variable vars[j] for the selected rows.
class PackedSlice {
 public:
  PackedSlice(const BinaryDataset& ds, std::span<const std::uint32_t> rows,
              std::span<const std::uint32_t> vars);

  std::size_t num_rows() const { return num_rows_; }
  std::size_t num_vars() const { return vars_.size(); }
  const std::vector<std::uint32_t>& vars() const { return vars_; }
  std::span<const std::uint64_t> column(std::size_t j) const {
    return {bits_.data() + j * words_, words_};
  }
  std::uint64_t ones(std::size_t j) const { return ones_[j]; }

 private:
  std::size_t num_rows_ = 0;
  std::size_t words_ = 0;
  std::vector<std::uint32_t> vars_;
  std::vector<std::uint64_t> bits_;
  std::vector<std::uint64_t> ones_;
};

// counts[a][b] = #rows with X_i = a and X_j = b.
using ContingencyTable = std::array<std::array<double, 2>, 2>;

// G = 2 sum c(a,b) ln(c(a,b) N / (c_i(a) c_j(b))), with 0 ln(.) = 0.
double g_statistic(const ContingencyTable& counts);

// G statistic between local columns i and j of the slice.
double g_test(const PackedSlice& slice, std::size_t i, std::size_t j);

// Connected components of the graph with an edge wherever G > rho. Returns
// variable ids (not column positions); each component sorted, components
// ordered by smallest member.
std::vector<std::vector<std::uint32_t>> dependency_components(const PackedSlice& slice, double rho);

struct RowClustering {
  std::vector<std::uint8_t> assignment;  // per row, 0 or 1
  std::array<double, 2> weights{};       // cluster sizes / N
  double log_likelihood = 0.0;           // EM training LL of the best restart
  std::size_t iterations = 0;
};

// Two-component Bernoulli mixture EM on (rows x vars). nullopt signals a
// degenerate split (one cluster empty).
std::optional<RowClustering> cluster_rows(const BinaryDataset& ds, std::span<const std::uint32_t> rows,
                                          std::span<const std::uint32_t> vars,
                                          const LearnSpnParams& params);

// `log` (optional) receives one line per split decision.
Spn learn_spn_b(const BinaryDataset& ds, const LearnSpnParams& params, std::ostream* log = nullptr);

}  // namespace tpm
