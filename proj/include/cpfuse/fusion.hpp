#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cpfuse/log_prob_dist.hpp"
#include "cpfuse/vocab.hpp"

namespace cpfuse {

/// Candidate exponents for the log-linear combination. The same list is
/// used for both axes and the grid is their Cartesian product.
struct GridSpec {
  std::vector<double> values;
  bool include_origin = true;

  /// {0, 0.2, ..., 1.8} followed by {2, 3, ..., 10}: 19 values, 361 points.
  static GridSpec standard();
  /// "default" (or "standard") for standard(), else comma-separated values.
  static GridSpec parse(std::string_view text);
  /// Strictly increasing, non-negative, finite, containing 0 and 1.
  void validate() const;
  std::size_t num_points() const;
};

/// log q = alpha * logp1 + beta * logp2 + gamma, with gamma normalizing q.
/// Inputs must be finite; gamma is stored in `gamma_out` when given.
LogProbDist combine_logits(const LogProbDist& logp1, const LogProbDist& logp2, double alpha,
                           double beta, double* gamma_out = nullptr);

/// KL(q || p) in nats; both arguments must be finite.
double kl_divergence(const LogProbDist& q, const LogProbDist& p);

struct ObjectiveValue {
  double value;
  std::size_t branch;
};

/// max_i KL(q || dists[i]) - hist[i], with the maximizing branch (lowest
/// index on ties). The history term shared by all branches is dropped.
ObjectiveValue fusion_objective(const LogProbDist& q, std::span<const LogProbDist> dists,
                                std::span<const double> hist);

struct StepResult {
  LogProbDist dist;
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  double objective = 0.0;
  std::size_t branch = 0;
  /// KL(q || p_i) - L_i for the two combined models.
  std::array<double, 2> branch_values{0.0, 0.0};
  /// Model indices the (alpha, beta) pair refers to; {0, 1} for two models.
  std::size_t first = 0;
  std::size_t second = 1;
};

/// Grid search for the per-token min-max KL problem over two models.
///
/// Scans alpha ascending in the outer loop and beta ascending in the inner
/// loop and keeps the first strict minimizer of fusion_objective.
/// Vocabulary entries whose (logp1, logp2) pairs coincide are folded into a
/// single weighted term before the scan; without coincident entries the scan
/// evaluates exactly the same floating-point expressions as
/// combine_logits followed by fusion_objective.
StepResult solve_step(const LogProbDist& d1, const LogProbDist& d2, double hist1, double hist2,
                      const GridSpec& grid);

/// Token-wise CP-Delta: the normalized geometric mean of the two models.
LogProbDist cp_delta_step(const LogProbDist& d1, const LogProbDist& d2);

/// Three or more models: solve every unordered pair with its own history
/// terms and keep the globally smallest objective (lexicographic pair order,
/// then grid scan order, on ties).
StepResult solve_step_multi(std::span<const LogProbDist> dists, std::span<const double> hist,
                            const GridSpec& grid);

/// Per-step diagnostics recorded while decoding.
struct StepTrace {
  std::size_t t = 0;
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  double objective = 0.0;
  std::size_t branch = 0;
  std::size_t first = 0;
  std::size_t second = 1;
  std::vector<double> branch_values;
  /// History log-probabilities before this step's token is appended.
  std::vector<double> hist;
  TokenId token = 0;
};

/// History log-probabilities L_i of the generated tokens under each base
/// model, plus the per-step trace.
class FusionState {
 public:
  explicit FusionState(std::size_t num_models) : hist_(num_models, 0.0) {}

  std::span<const double> hist() const { return hist_; }
  const std::vector<StepTrace>& trace() const { return trace_; }

  /// Adds each model's log-probability of the chosen token.
  void advance(std::span<const LogProbDist> dists, TokenId token);
  void record(StepTrace step) { trace_.push_back(std::move(step)); }

 private:
  std::vector<double> hist_;
  std::vector<StepTrace> trace_;
};

}  // namespace cpfuse
