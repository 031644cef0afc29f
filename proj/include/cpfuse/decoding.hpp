#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpfuse/bloom_filter.hpp"
#include "cpfuse/fusion.hpp"
#include "cpfuse/model_backend.hpp"

namespace cpfuse {

enum class DecodeMode { kGreedy, kTemperature };

enum class Policy { kSingle, kCpFuse, kCpDelta, kCpFuseMulti, kMemFree };

std::string to_string(DecodeMode mode);
std::string to_string(Policy policy);
DecodeMode decode_mode_from_string(std::string_view name);
Policy policy_from_string(std::string_view name);

struct DecodeConfig {
  DecodeMode mode = DecodeMode::kGreedy;
  double temperature = 1.0;
  int max_tokens = 1024;
  std::uint64_t seed = 0;
  Policy policy = Policy::kSingle;
  /// n-gram length guarded by the MemFree filter.
  int memfree_n = 10;
  GridSpec grid = GridSpec::standard();

  void validate() const;
};

/// Generator used for temperature sampling: std::mt19937_64, whose output
/// sequence is fixed by the C++ standard. One stream per generation, seeded
/// with DecodeConfig::seed. Uniform draws use the top 53 bits.
using Rng = std::mt19937_64;

/// Greedy: argmax with ties to the lowest id. Temperature: sample from
/// softmax(logp / T) by inverse CDF. Entries at -inf are never selected.
TokenId select_token(const LogProbDist& dist, const DecodeConfig& cfg, Rng& rng);

struct FilterResult {
  LogProbDist dist;
  bool all_blocked = false;
};

/// Masks every token v for which recent ++ [v] is in the blocklist and
/// renormalizes the rest. `recent` must hold exactly n-1 ids. If every token
/// would be masked the input is returned unchanged with all_blocked set.
FilterResult memfree_filter(const LogProbDist& dist, std::span<const TokenId> recent,
                            const BloomFilter& bloom, int n);

enum class StopReason { kEos, kMaxTokens };
std::string to_string(StopReason reason);

struct GenerationRecord {
  Policy policy = Policy::kSingle;
  TokenSeq prompt;
  TokenSeq emitted;
  /// log q(emitted[t]) under the policy distribution actually sampled from
  /// (after fusion and filtering, before temperature).
  std::vector<double> token_logprobs;
  /// Per-step fusion diagnostics; empty for single-model policies.
  std::vector<StepTrace> trace;
  /// L_i after the last step, one per base model.
  std::vector<double> final_hist;
  /// Steps where MemFree would have blocked every token.
  std::vector<std::size_t> all_blocked_steps;
  StopReason stop = StopReason::kMaxTokens;

  nlohmann::ordered_json to_json() const;
};

nlohmann::ordered_json trace_to_json(const StepTrace& step);

/// Runs the decoding loop. `models` must match the policy arity (single and
/// memfree: 1; cp_fuse and cp_delta: 2; cp_fuse_multi: 3 or more) and share
/// vocabulary size and EOS id. `bloom` is required for memfree and applied
/// as an extra filter for the other policies when given.
GenerationRecord generate(std::span<ModelBackend* const> models, std::span<const TokenId> prompt,
                          const DecodeConfig& cfg, const BloomFilter* bloom = nullptr);

/// Teacher-forced scoring: builds the policy distribution at each step but
/// advances with the target token. Returns log q(target[t]) per step.
std::vector<double> score_sequence(std::span<ModelBackend* const> models,
                                   std::span<const TokenId> prompt,
                                   std::span<const TokenId> target, const DecodeConfig& cfg,
                                   const BloomFilter* bloom = nullptr);

}  // namespace cpfuse
