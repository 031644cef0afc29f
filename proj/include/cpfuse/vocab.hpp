#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace cpfuse {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

enum class TokenizerKind { kByte, kWord };

std::string to_string(TokenizerKind kind);
TokenizerKind tokenizer_kind_from_string(std::string_view name);

/// Bijection between surface tokens and dense ids 0..size-1.
///
/// Byte vocabularies map byte b to id b and reserve id 256 for EOS. Word
/// vocabularies hold the sorted set of whitespace-delimited corpus tokens
/// followed by EOS. The EOS surface form is the empty string, which can
/// never be produced by whitespace splitting, so EOS never appears inside an
/// encoded document.
class Vocab {
 public:
  static Vocab bytes();
  static Vocab words(std::vector<std::string> sorted_tokens);

  TokenizerKind kind() const { return kind_; }
  std::int32_t size() const { return static_cast<std::int32_t>(tokens_.size()); }
  TokenId eos_id() const { return eos_id_; }
  bool valid(TokenId id) const { return id >= 0 && id < size(); }

  const std::string& token(TokenId id) const;
  /// Throws ContractError for out-of-vocabulary surface forms.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;

  TokenSeq encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  nlohmann::ordered_json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

  bool operator==(const Vocab& other) const {
    return kind_ == other.kind_ && tokens_ == other.tokens_ && eos_id_ == other.eos_id_;
  }

 private:
  Vocab(TokenizerKind kind, std::vector<std::string> tokens, TokenId eos);

  TokenizerKind kind_;
  std::vector<std::string> tokens_;
  TokenId eos_id_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Builds the shared vocabulary. Byte kind ignores the corpus; word kind
/// requires at least one document.
Vocab build_vocab(std::span<const std::string> corpus, TokenizerKind kind);

/// Whitespace tokenization used by the word vocabulary and the word-level
/// metrics.
std::vector<std::string> split_words(std::string_view text);

}  // namespace cpfuse
