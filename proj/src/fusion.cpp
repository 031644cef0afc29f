#include "cpfuse/fusion.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "cpfuse/error.hpp"

namespace cpfuse {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_finite(const LogProbDist& d, const char* what) {
  if (!d.all_finite()) throw ContractError(std::string(what) + " has a non-finite entry");
}

void require_same_size(const LogProbDist& a, const LogProbDist& b) {
  if (a.size() != b.size()) {
    throw ContractError("distribution length mismatch (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  }
  if (a.size() == 0) throw ContractError("empty distribution");
}

void require_weight(double w) {
  if (!(w >= 0.0) || !std::isfinite(w)) {
    throw ContractError("combination weights must be finite and non-negative");
  }
}

// Distinct (logp1, logp2) pairs in order of first occurrence. `weight` is
// empty when every pair is distinct.
struct FoldedSupport {
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> weight;
};

FoldedSupport fold_support(const LogProbDist& d1, const LogProbDist& d2) {
  const std::size_t n = d1.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (d1[i] != d1[j]) return d1[i] < d1[j];
    if (d2[i] != d2[j]) return d2[i] < d2[j];
    return i < j;
  });
  // (first index, multiplicity) per group
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = order[k];
    if (k > 0) {
      const std::size_t prev = order[k - 1];
      if (d1[prev] == d1[i] && d2[prev] == d2[i]) {
        ++groups.back().second;
        continue;
      }
    }
    groups.emplace_back(i, 1);
  }
  FoldedSupport out;
  if (groups.size() == n) {
    out.a = d1.logp;
    out.b = d2.logp;
    return out;
  }
  std::sort(groups.begin(), groups.end());
  for (const auto& [first, count] : groups) {
    out.a.push_back(d1[first]);
    out.b.push_back(d2[first]);
    out.weight.push_back(static_cast<double>(count));
  }
  return out;
}

// One grid point of the two-model objective. Mirrors combine_logits and
// fusion_objective term by term; a weight of 1 leaves every term unchanged.
struct PointValue {
  double value;
  std::size_t branch;
  double v1;
  double v2;
};

PointValue evaluate_point(const FoldedSupport& sup, std::vector<double>& s, double alpha,
                          double beta, double hist1, double hist2) {
  const std::size_t n = sup.a.size();
  const bool weighted = !sup.weight.empty();
  double m = -kInf;
  for (std::size_t g = 0; g < n; ++g) {
    s[g] = alpha * sup.a[g] + beta * sup.b[g];
    m = std::max(m, s[g]);
  }
  double z = 0.0;
  for (std::size_t g = 0; g < n; ++g) {
    const double e = std::exp(s[g] - m);
    z += weighted ? sup.weight[g] * e : e;
  }
  const double gamma = -(m + std::log(z));
  double kl1 = 0.0;
  double kl2 = 0.0;
  for (std::size_t g = 0; g < n; ++g) {
    const double q = s[g] + gamma;
    const double e = std::exp(q);
    const double t1 = e * (q - sup.a[g]);
    const double t2 = e * (q - sup.b[g]);
    kl1 += weighted ? sup.weight[g] * t1 : t1;
    kl2 += weighted ? sup.weight[g] * t2 : t2;
  }
  const double v1 = kl1 - hist1;
  const double v2 = kl2 - hist2;
  if (v2 > v1) return {v2, 1, v1, v2};
  return {v1, 0, v1, v2};
}

}  // namespace

GridSpec GridSpec::standard() {
  GridSpec g;
  for (int i = 0; i < 10; ++i) g.values.push_back(i / 5.0);
  for (int i = 2; i <= 10; ++i) g.values.push_back(static_cast<double>(i));
  return g;
}

GridSpec GridSpec::parse(std::string_view text) {
  if (text == "default" || text == "standard") return standard();
  GridSpec g;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = text.substr(start, comma == std::string_view::npos ? text.npos : comma - start);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size() || item.empty()) {
      throw ContractError("bad grid value '" + std::string(item) + "'");
    }
    g.values.push_back(v);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  g.validate();
  return g;
}

void GridSpec::validate() const {
  if (values.empty()) throw ContractError("empty grid");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]) || values[i] < 0.0) {
      throw ContractError("grid values must be finite and non-negative");
    }
    if (i > 0 && !(values[i] > values[i - 1])) {
      throw ContractError("grid values must be strictly increasing");
    }
  }
  if (!std::binary_search(values.begin(), values.end(), 0.0) ||
      !std::binary_search(values.begin(), values.end(), 1.0)) {
    throw ContractError("grid must contain 0 and 1");
  }
}

std::size_t GridSpec::num_points() const {
  if (values.empty()) return 0;
  return values.size() * values.size() - (include_origin ? 0 : 1);
}

namespace {

LogProbDist combine_with_gamma(const LogProbDist& logp1, const LogProbDist& logp2, double alpha,
                               double beta, double& gamma_out) {
  require_same_size(logp1, logp2);
  require_weight(alpha);
  require_weight(beta);
  require_finite(logp1, "first distribution");
  require_finite(logp2, "second distribution");
  const std::size_t n = logp1.size();
  std::vector<double> s(n);
  double m = -kInf;
  for (std::size_t v = 0; v < n; ++v) {
    s[v] = alpha * logp1[v] + beta * logp2[v];
    m = std::max(m, s[v]);
  }
  double z = 0.0;
  for (std::size_t v = 0; v < n; ++v) z += std::exp(s[v] - m);
  const double gamma = -(m + std::log(z));
  for (auto& x : s) x = x + gamma;
  gamma_out = gamma;
  return LogProbDist(std::move(s));
}

}  // namespace

LogProbDist combine_logits(const LogProbDist& logp1, const LogProbDist& logp2, double alpha,
                           double beta, double* gamma_out) {
  double gamma = 0.0;
  LogProbDist out = combine_with_gamma(logp1, logp2, alpha, beta, gamma);
  if (gamma_out != nullptr) *gamma_out = gamma;
  return out;
}

double kl_divergence(const LogProbDist& q, const LogProbDist& p) {
  require_same_size(q, p);
  require_finite(q, "q");
  require_finite(p, "p");
  double kl = 0.0;
  for (std::size_t v = 0; v < q.size(); ++v) kl += std::exp(q[v]) * (q[v] - p[v]);
  return kl;
}

ObjectiveValue fusion_objective(const LogProbDist& q, std::span<const LogProbDist> dists,
                                std::span<const double> hist) {
  if (dists.size() != hist.size() || dists.size() < 2) {
    throw ContractError("fusion objective needs matching dists/hist with at least two models");
  }
  require_finite(q, "q");
  for (const auto& d : dists) {
    require_same_size(q, d);
    require_finite(d, "base distribution");
  }
  const std::size_t k = dists.size();
  std::vector<double> kl(k, 0.0);
  for (std::size_t v = 0; v < q.size(); ++v) {
    const double e = std::exp(q[v]);
    for (std::size_t i = 0; i < k; ++i) kl[i] += e * (q[v] - dists[i][v]);
  }
  ObjectiveValue best{kl[0] - hist[0], 0};
  for (std::size_t i = 1; i < k; ++i) {
    const double v = kl[i] - hist[i];
    if (v > best.value) best = {v, i};
  }
  return best;
}

StepResult solve_step(const LogProbDist& d1, const LogProbDist& d2, double hist1, double hist2,
                      const GridSpec& grid) {
  require_same_size(d1, d2);
  require_finite(d1, "first distribution");
  require_finite(d2, "second distribution");
  if (!std::isfinite(hist1) || !std::isfinite(hist2)) {
    throw ContractError("history log-probabilities must be finite");
  }
  if (grid.values.empty() || grid.num_points() == 0) throw ContractError("empty grid");

  const FoldedSupport sup = fold_support(d1, d2);
  std::vector<double> scratch(sup.a.size());
  bool found = false;
  StepResult best;
  for (double alpha : grid.values) {
    for (double beta : grid.values) {
      if (!grid.include_origin && alpha == 0.0 && beta == 0.0) continue;
      const PointValue pv = evaluate_point(sup, scratch, alpha, beta, hist1, hist2);
      if (!found || pv.value < best.objective) {
        found = true;
        best.alpha = alpha;
        best.beta = beta;
        best.objective = pv.value;
        best.branch = pv.branch;
        best.branch_values[0] = pv.v1;
        best.branch_values[1] = pv.v2;
      }
    }
  }
  best.dist = combine_with_gamma(d1, d2, best.alpha, best.beta, best.gamma);
  return best;
}

LogProbDist cp_delta_step(const LogProbDist& d1, const LogProbDist& d2) {
  return combine_logits(d1, d2, 0.5, 0.5);
}

StepResult solve_step_multi(std::span<const LogProbDist> dists, std::span<const double> hist,
                            const GridSpec& grid) {
  if (dists.size() < 3) throw ContractError("multi-model fusion needs at least three models");
  if (hist.size() != dists.size()) throw ContractError("one history value per model required");
  std::optional<StepResult> best;
  for (std::size_t i = 0; i < dists.size(); ++i) {
    for (std::size_t j = i + 1; j < dists.size(); ++j) {
      StepResult r = solve_step(dists[i], dists[j], hist[i], hist[j], grid);
      if (!best || r.objective < best->objective) {
        r.first = i;
        r.second = j;
        r.branch = r.branch == 0 ? i : j;
        best = std::move(r);
      }
    }
  }
  return std::move(*best);
}

void FusionState::advance(std::span<const LogProbDist> dists, TokenId token) {
  if (dists.size() != hist_.size()) throw ContractError("one distribution per model required");
  for (std::size_t i = 0; i < dists.size(); ++i) {
    hist_[i] += dists[i][static_cast<std::size_t>(token)];
  }
}

}  // namespace cpfuse
