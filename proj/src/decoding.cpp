#include "cpfuse/decoding.hpp"

#include <cmath>
#include <limits>

#include "cpfuse/error.hpp"

namespace cpfuse {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void check_selectable(const LogProbDist& dist) {
  bool any = false;
  for (double v : dist.logp) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw ContractError("cannot select from a distribution with NaN or +inf entries");
    }
    any = any || v != kNegInf;
  }
  if (!any) throw ContractError("cannot select from a distribution with no mass");
}

std::size_t required_arity(Policy p) {
  switch (p) {
    case Policy::kSingle:
    case Policy::kMemFree:
      return 1;
    case Policy::kCpFuse:
    case Policy::kCpDelta:
      return 2;
    case Policy::kCpFuseMulti:
      return 3;
  }
  return 1;
}

// Builds the per-step policy distribution shared by generate and
// score_sequence.
class Stepper {
 public:
  Stepper(std::span<ModelBackend* const> models, const DecodeConfig& cfg, const BloomFilter* bloom)
      : models_(models), cfg_(cfg), bloom_(bloom) {
    cfg.validate();
    const std::size_t need = required_arity(cfg.policy);
    const bool ok = cfg.policy == Policy::kCpFuseMulti ? models.size() >= need
                                                       : models.size() == need;
    if (!ok) {
      throw ContractError("policy " + to_string(cfg.policy) + " cannot run with " +
                          std::to_string(models.size()) + " model(s)");
    }
    for (auto* m : models) {
      if (m == nullptr) throw ContractError("null model handle");
      if (m->vocab_size() != models[0]->vocab_size() || m->eos_id() != models[0]->eos_id()) {
        throw ContractError("models do not share a vocabulary");
      }
    }
    if (cfg.policy == Policy::kMemFree && bloom == nullptr) {
      throw ContractError("memfree policy needs a blocklist");
    }
  }

  std::size_t num_models() const { return models_.size(); }
  TokenId eos_id() const { return models_[0]->eos_id(); }

  struct Step {
    std::vector<LogProbDist> base;
    LogProbDist dist;
    std::optional<StepTrace> trace;
    bool all_blocked = false;
  };

  Step compute(std::span<const TokenId> ctx, const FusionState& state, std::size_t t) {
    Step step;
    step.base.reserve(models_.size());
    const auto V = static_cast<std::size_t>(models_[0]->vocab_size());
    for (auto* m : models_) {
      step.base.push_back(m->next_token_dist(ctx));
      if (step.base.back().size() != V) {
        throw ContractError("model " + m->describe() + " returned a distribution of wrong size");
      }
    }
    const auto hist = state.hist();
    switch (cfg_.policy) {
      case Policy::kSingle:
      case Policy::kMemFree:
        step.dist = step.base[0];
        break;
      case Policy::kCpFuse: {
        StepResult r = solve_step(step.base[0], step.base[1], hist[0], hist[1], cfg_.grid);
        step.trace = make_trace(r, state, t);
        step.dist = std::move(r.dist);
        break;
      }
      case Policy::kCpFuseMulti: {
        StepResult r = solve_step_multi(step.base, hist, cfg_.grid);
        step.trace = make_trace(r, state, t);
        step.dist = std::move(r.dist);
        break;
      }
      case Policy::kCpDelta: {
        StepResult r;
        r.alpha = r.beta = 0.5;
        r.dist = combine_logits(step.base[0], step.base[1], 0.5, 0.5, &r.gamma);
        for (std::size_t i = 0; i < 2; ++i) {
          r.branch_values[i] = kl_divergence(r.dist, step.base[i]) - hist[i];
        }
        r.branch = r.branch_values[1] > r.branch_values[0] ? 1 : 0;
        r.objective = r.branch_values[r.branch];
        step.trace = make_trace(r, state, t);
        step.dist = std::move(r.dist);
        break;
      }
    }
    const auto n = static_cast<std::size_t>(cfg_.memfree_n);
    if (bloom_ != nullptr && ctx.size() + 1 >= n) {
      FilterResult f = memfree_filter(step.dist, ctx.last(n - 1), *bloom_, cfg_.memfree_n);
      step.dist = std::move(f.dist);
      step.all_blocked = f.all_blocked;
    }
    return step;
  }

 private:
  StepTrace make_trace(const StepResult& r, const FusionState& state, std::size_t t) const {
    StepTrace tr;
    tr.t = t;
    tr.alpha = r.alpha;
    tr.beta = r.beta;
    tr.gamma = r.gamma;
    tr.objective = r.objective;
    tr.branch = r.branch;
    tr.first = r.first;
    tr.second = r.second;
    tr.branch_values.assign(r.branch_values.begin(), r.branch_values.end());
    tr.hist.assign(state.hist().begin(), state.hist().end());
    return tr;
  }

  std::span<ModelBackend* const> models_;
  const DecodeConfig& cfg_;
  const BloomFilter* bloom_;
};

}  // namespace

std::string to_string(DecodeMode mode) {
  return mode == DecodeMode::kGreedy ? "greedy" : "temperature";
}

std::string to_string(Policy policy) {
  switch (policy) {
    case Policy::kSingle:
      return "single";
    case Policy::kCpFuse:
      return "cp_fuse";
    case Policy::kCpDelta:
      return "cp_delta";
    case Policy::kCpFuseMulti:
      return "cp_fuse_multi";
    case Policy::kMemFree:
      return "memfree";
  }
  return "unknown";
}

std::string to_string(StopReason reason) {
  return reason == StopReason::kEos ? "eos" : "max_tokens";
}

DecodeMode decode_mode_from_string(std::string_view name) {
  if (name == "greedy") return DecodeMode::kGreedy;
  if (name == "temperature") return DecodeMode::kTemperature;
  throw ContractError("unknown decode mode '" + std::string(name) + "'");
}

Policy policy_from_string(std::string_view name) {
  for (Policy p : {Policy::kSingle, Policy::kCpFuse, Policy::kCpDelta, Policy::kCpFuseMulti,
                   Policy::kMemFree}) {
    if (name == to_string(p)) return p;
  }
  throw ContractError("unknown policy '" + std::string(name) + "'");
}

void DecodeConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ContractError("temperature must be positive");
  }
  if (max_tokens < 1) throw ContractError("max_tokens must be >= 1");
  if (memfree_n < 2) throw ContractError("memfree n must be >= 2");
  if (policy == Policy::kCpFuse || policy == Policy::kCpFuseMulti) grid.validate();
}

TokenId select_token(const LogProbDist& dist, const DecodeConfig& cfg, Rng& rng) {
  check_selectable(dist);
  if (cfg.mode == DecodeMode::kGreedy) {
    std::size_t best = 0;
    for (std::size_t v = 1; v < dist.size(); ++v) {
      if (dist[v] > dist[best]) best = v;
    }
    return static_cast<TokenId>(best);
  }
  if (!(cfg.temperature > 0.0)) throw ContractError("temperature must be positive");
  double m = kNegInf;
  for (double v : dist.logp) m = std::max(m, v / cfg.temperature);
  std::vector<double> cumulative(dist.size());
  double total = 0.0;
  for (std::size_t v = 0; v < dist.size(); ++v) {
    total += std::exp(dist[v] / cfg.temperature - m);
    cumulative[v] = total;
  }
  const double target = uniform01(rng) * total;
  for (std::size_t v = 0; v < dist.size(); ++v) {
    if (cumulative[v] > target && dist[v] != kNegInf) return static_cast<TokenId>(v);
  }
  // Rounding can leave target at the very top; fall back to the last live id.
  for (std::size_t v = dist.size(); v-- > 0;) {
    if (dist[v] != kNegInf) return static_cast<TokenId>(v);
  }
  throw ContractError("cannot select from a distribution with no mass");
}

FilterResult memfree_filter(const LogProbDist& dist, std::span<const TokenId> recent,
                            const BloomFilter& bloom, int n) {
  if (n < 2 || recent.size() != static_cast<std::size_t>(n - 1)) {
    throw ContractError("memfree filter needs exactly n-1 recent tokens");
  }
  TokenSeq key(recent.begin(), recent.end());
  key.push_back(0);
  std::vector<double> out = dist.logp;
  std::size_t blocked = 0;
  for (std::size_t v = 0; v < out.size(); ++v) {
    key.back() = static_cast<TokenId>(v);
    if (bloom.contains(key)) {
      out[v] = kNegInf;
      ++blocked;
    }
  }
  if (blocked == out.size()) return {dist, true};
  if (blocked == 0) return {dist, false};
  const double lse = log_sum_exp(out);
  for (auto& x : out) x -= lse;
  return {LogProbDist(std::move(out)), false};
}

GenerationRecord generate(std::span<ModelBackend* const> models, std::span<const TokenId> prompt,
                          const DecodeConfig& cfg, const BloomFilter* bloom) {
  Stepper stepper(models, cfg, bloom);
  Rng rng(cfg.seed);
  FusionState state(stepper.num_models());
  GenerationRecord rec;
  rec.policy = cfg.policy;
  rec.prompt.assign(prompt.begin(), prompt.end());
  TokenSeq ctx = rec.prompt;
  for (int t = 0; t < cfg.max_tokens; ++t) {
    auto step = stepper.compute(ctx, state, static_cast<std::size_t>(t));
    const TokenId tok = select_token(step.dist, cfg, rng);
    const double lp = step.dist[static_cast<std::size_t>(tok)];
    if (!std::isfinite(lp)) throw ContractError("selected token has non-finite log-probability");
    if (step.all_blocked) rec.all_blocked_steps.push_back(static_cast<std::size_t>(t));
    state.advance(step.base, tok);
    if (step.trace) {
      step.trace->token = tok;
      state.record(std::move(*step.trace));
    }
    rec.emitted.push_back(tok);
    rec.token_logprobs.push_back(lp);
    ctx.push_back(tok);
    if (tok == stepper.eos_id()) {
      rec.stop = StopReason::kEos;
      break;
    }
  }
  rec.trace = state.trace();
  rec.final_hist.assign(state.hist().begin(), state.hist().end());
  return rec;
}

std::vector<double> score_sequence(std::span<ModelBackend* const> models,
                                   std::span<const TokenId> prompt,
                                   std::span<const TokenId> target, const DecodeConfig& cfg,
                                   const BloomFilter* bloom) {
  if (target.empty()) throw ContractError("score_sequence needs a non-empty target");
  Stepper stepper(models, cfg, bloom);
  FusionState state(stepper.num_models());
  TokenSeq ctx(prompt.begin(), prompt.end());
  std::vector<double> out;
  out.reserve(target.size());
  for (std::size_t t = 0; t < target.size(); ++t) {
    const TokenId tok = target[t];
    if (tok < 0 || tok >= models[0]->vocab_size()) throw ContractError("target id out of range");
    auto step = stepper.compute(ctx, state, t);
    out.push_back(step.dist[static_cast<std::size_t>(tok)]);
    state.advance(step.base, tok);
    ctx.push_back(tok);
  }
  return out;
}

nlohmann::ordered_json trace_to_json(const StepTrace& step) {
  nlohmann::ordered_json j;
  j["t"] = step.t;
  j["alpha"] = step.alpha;
  j["beta"] = step.beta;
  j["gamma"] = step.gamma;
  j["objective"] = step.objective;
  j["branch"] = step.branch;
  for (std::size_t i = 0; i < step.hist.size(); ++i) {
    j["L" + std::to_string(i + 1)] = step.hist[i];
  }
  j["pair"] = {step.first, step.second};
  j["branch_values"] = step.branch_values;
  j["token"] = step.token;
  return j;
}

nlohmann::ordered_json GenerationRecord::to_json() const {
  nlohmann::ordered_json j;
  j["policy"] = to_string(policy);
  j["prompt"] = prompt;
  j["emitted"] = emitted;
  j["logprobs"] = token_logprobs;
  j["final_hist"] = final_hist;
  j["all_blocked_steps"] = all_blocked_steps;
  j["stop"] = to_string(stop);
  return j;
}

}  // namespace cpfuse
