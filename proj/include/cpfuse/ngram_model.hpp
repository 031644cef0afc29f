#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cpfuse/log_prob_dist.hpp"
#include "cpfuse/vocab.hpp"

namespace cpfuse {

struct TrainingConfig {
  int order = 12;
  TokenizerKind tokenizer = TokenizerKind::kByte;
  /// Stupid-backoff discount applied per fallback to a shorter context.
  double backoff_discount = 0.4;
  /// Weight of the uniform floor mixed into every distribution.
  double epsilon_uniform = 1e-4;
  /// Terminate each training document with EOS.
  bool append_eos = true;

  /// Order 12 for bytes, 5 for words.
  static TrainingConfig defaults_for(TokenizerKind kind);
  void validate() const;
};

/// Memorizing n-gram language model with stupid backoff and a uniform floor.
///
/// Counts are kept per context length 0..order-1. Each level is a flat array
/// of (context, next token, count) records sorted by context then token id,
/// where the context is a slice of a token arena owned by the model. For a
/// trained model the arena is the concatenated training stream, so storage
/// is one record per distinct n-gram rather than one copy of every context.
///
/// The model is immutable once built; concurrent queries are safe.
class NGramModel {
 public:
  struct Record {
    std::uint32_t ctx_offset;
    TokenId next;
    std::uint32_t count;
  };

  /// A model with no counts; every query returns the uniform distribution.
  NGramModel(Vocab vocab, const TrainingConfig& cfg);

  const Vocab& vocab() const { return vocab_; }
  int order() const { return order_; }
  double backoff_discount() const { return lambda_; }
  double epsilon_uniform() const { return epsilon_; }

  /// Next-token distribution given the full context (prompt plus emitted
  /// tokens); only the trailing order-1 tokens are consulted.
  ///
  /// For a non-empty context the estimate backs off from the longest suffix
  /// down to length 1; a token first seen at a suffix d steps shorter than
  /// the longest matched one is scored lambda^d * count/total. If no suffix
  /// matches the estimate is uniform. The unigram table serves only empty
  /// contexts (or order-1 models). The renormalized estimate is mixed with
  /// the uniform floor: (1 - eps) * estimate + eps / |V|.
  LogProbDist next_token_dist(std::span<const TokenId> context) const;

  /// Sum of log p(continuation[t] | prompt ++ continuation[..t]).
  double sequence_logprob(std::span<const TokenId> prompt,
                          std::span<const TokenId> continuation) const;

  /// Next-token counts recorded after an exact context (length < order).
  std::vector<std::pair<TokenId, std::uint32_t>> counts(std::span<const TokenId> context) const;
  std::size_t num_records(int ctx_len) const;

  void save(const std::filesystem::path& path) const;
  static NGramModel load(const std::filesystem::path& path);
  void write(std::ostream& out) const;
  static NGramModel read(std::istream& in);

 private:
  friend NGramModel train(std::span<const std::string>, const TrainingConfig&, const Vocab&);

  std::span<const TokenId> context_of(const Record& r, int ctx_len) const {
    return {arena_.data() + r.ctx_offset, static_cast<std::size_t>(ctx_len)};
  }
  /// Records of level ctx_len whose context equals `ctx`.
  std::span<const Record> find(int ctx_len, std::span<const TokenId> ctx) const;
  void validate_ids(std::span<const TokenId> ids) const;
  std::string canonical_tables() const;

  Vocab vocab_;
  int order_;
  double lambda_;
  double epsilon_;
  std::vector<TokenId> arena_;
  std::vector<std::vector<Record>> levels_;
};

/// Counts every n-gram of every document (EOS-terminated when configured)
/// for all context lengths 0..order-1. Documents are encoded with `vocab`.
NGramModel train(std::span<const std::string> corpus, const TrainingConfig& cfg,
                 const Vocab& vocab);

}  // namespace cpfuse
