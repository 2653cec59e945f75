#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "tpm/dataset.hpp"

namespace tpm {

// A density model that answers exact marginal queries in log space.
//
// Contract: empty evidence yields 0 (the model is normalized), and extending
// evidence never increases the returned value.
class MarginalEvaluator {
 public:
  virtual ~MarginalEvaluator() = default;

  virtual std::size_t num_vars() const = 0;
  virtual std::string kind() const = 0;
  virtual double log_marginal(const PartialEvidence& ev) const = 0;

  // Many assignments sharing one scope. `configs` is row-major
  // (out.size() x scope.size()) of 0/1 values. out[b] must be bitwise equal
  // to log_marginal on the b-th assignment. The default loops.
  virtual void log_marginal_batch(std::span<const std::uint32_t> scope,
                                  std::span<const std::uint8_t> configs,
                                  std::span<double> out) const;
};

}  // namespace tpm
