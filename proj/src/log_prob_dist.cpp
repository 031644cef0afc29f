#include "cpfuse/log_prob_dist.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cpfuse/error.hpp"

namespace cpfuse {

double log_sum_exp(std::span<const double> x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - m);
  return m + std::log(sum);
}

LogProbDist LogProbDist::uniform(std::size_t n) {
  if (n == 0) throw ContractError("uniform distribution over an empty vocabulary");
  return LogProbDist(std::vector<double>(n, -std::log(static_cast<double>(n))));
}

LogProbDist LogProbDist::from_probs(std::span<const double> probs) {
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] > 0.0)) throw ContractError("probabilities must be strictly positive");
    out[i] = std::log(probs[i]);
  }
  return LogProbDist(std::move(out));
}

bool LogProbDist::all_finite() const {
  return std::all_of(logp.begin(), logp.end(), [](double v) { return std::isfinite(v); });
}

std::vector<double> LogProbDist::probs() const {
  std::vector<double> out(logp.size());
  std::transform(logp.begin(), logp.end(), out.begin(), [](double v) { return std::exp(v); });
  return out;
}

}  // namespace cpfuse
