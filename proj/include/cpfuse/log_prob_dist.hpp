#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cpfuse {

/// Numerically stable log(sum(exp(x))) with max subtraction. Returns -inf
/// for an empty span or one holding only -inf.
double log_sum_exp(std::span<const double> x);

/// Dense log-probability vector over a vocabulary.
///
/// Distributions produced by the fusion operators are normalized to within
/// 1e-9 in log space and finite. The MemFree filter may mask entries to -inf.
struct LogProbDist {
  std::vector<double> logp;

  LogProbDist() = default;
  explicit LogProbDist(std::vector<double> values) : logp(std::move(values)) {}

  std::size_t size() const { return logp.size(); }
  double operator[](std::size_t i) const { return logp[i]; }
  double& operator[](std::size_t i) { return logp[i]; }

  static LogProbDist uniform(std::size_t n);
  /// Log of a probability vector; entries must be positive.
  static LogProbDist from_probs(std::span<const double> probs);

  bool all_finite() const;
  /// log-sum-exp of the entries; zero for a normalized distribution.
  double log_mass() const { return log_sum_exp(logp); }
  std::vector<double> probs() const;
};

}  // namespace cpfuse
