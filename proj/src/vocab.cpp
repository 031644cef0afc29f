#include "cpfuse/vocab.hpp"

#include <algorithm>
#include <set>

#include "cpfuse/error.hpp"

namespace cpfuse {

namespace {
constexpr std::int32_t kByteValues = 256;

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
}  // namespace

std::string to_string(TokenizerKind kind) {
  return kind == TokenizerKind::kByte ? "byte" : "word";
}

TokenizerKind tokenizer_kind_from_string(std::string_view name) {
  if (name == "byte") return TokenizerKind::kByte;
  if (name == "word" || name == "whitespace-word") return TokenizerKind::kWord;
  throw ContractError("unknown tokenizer kind '" + std::string(name) + "'");
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

Vocab::Vocab(TokenizerKind kind, std::vector<std::string> tokens, TokenId eos)
    : kind_(kind), tokens_(std::move(tokens)), eos_id_(eos) {
  if (kind_ == TokenizerKind::kWord) {
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
        throw FormatError("duplicate vocabulary token '" + tokens_[i] + "'");
      }
    }
  }
}

Vocab Vocab::bytes() {
  std::vector<std::string> tokens;
  tokens.reserve(kByteValues + 1);
  for (int b = 0; b < kByteValues; ++b) tokens.emplace_back(1, static_cast<char>(b));
  tokens.emplace_back();
  return Vocab(TokenizerKind::kByte, std::move(tokens), kByteValues);
}

Vocab Vocab::words(std::vector<std::string> sorted_tokens) {
  for (const auto& t : sorted_tokens) {
    if (t.empty() || std::any_of(t.begin(), t.end(), is_space)) {
      throw FormatError("word vocabulary token must be non-empty and whitespace-free");
    }
  }
  if (!std::is_sorted(sorted_tokens.begin(), sorted_tokens.end())) {
    throw FormatError("word vocabulary tokens must be sorted");
  }
  const auto eos = static_cast<TokenId>(sorted_tokens.size());
  sorted_tokens.emplace_back();
  return Vocab(TokenizerKind::kWord, std::move(sorted_tokens), eos);
}

const std::string& Vocab::token(TokenId id) const {
  if (!valid(id)) throw ContractError("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocab::id(std::string_view token) const {
  if (kind_ == TokenizerKind::kByte) {
    if (token.size() != 1) throw ContractError("byte vocabulary token must be one byte");
    return static_cast<unsigned char>(token[0]);
  }
  auto it = index_.find(std::string(token));
  if (it == index_.end() || it->second == eos_id_) {
    throw ContractError("out-of-vocabulary token '" + std::string(token) + "'");
  }
  return it->second;
}

bool Vocab::contains(std::string_view token) const {
  if (kind_ == TokenizerKind::kByte) return token.size() == 1;
  auto it = index_.find(std::string(token));
  return it != index_.end() && it->second != eos_id_;
}

TokenSeq Vocab::encode(std::string_view text) const {
  TokenSeq out;
  if (kind_ == TokenizerKind::kByte) {
    out.reserve(text.size());
    for (char c : text) out.push_back(static_cast<unsigned char>(c));
    return out;
  }
  for (const auto& w : split_words(text)) out.push_back(id(w));
  return out;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  bool first = true;
  for (TokenId t : ids) {
    if (!valid(t)) throw ContractError("token id " + std::to_string(t) + " out of range");
    if (t == eos_id_) break;
    if (kind_ == TokenizerKind::kByte) {
      out.push_back(static_cast<char>(t));
    } else {
      if (!first) out.push_back(' ');
      out += tokens_[static_cast<std::size_t>(t)];
    }
    first = false;
  }
  return out;
}

nlohmann::ordered_json Vocab::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = to_string(kind_);
  j["size"] = size();
  j["eos_id"] = eos_id_;
  if (kind_ == TokenizerKind::kWord) {
    // EOS is implied as the final id.
    j["tokens"] = std::vector<std::string>(tokens_.begin(), tokens_.end() - 1);
  }
  return j;
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  try {
    const auto kind = tokenizer_kind_from_string(j.at("kind").get<std::string>());
    Vocab v = kind == TokenizerKind::kByte
                  ? bytes()
                  : words(j.at("tokens").get<std::vector<std::string>>());
    if (j.at("size").get<std::int64_t>() != v.size() ||
        j.at("eos_id").get<std::int64_t>() != v.eos_id()) {
      throw FormatError("vocabulary size or eos_id inconsistent with tokens");
    }
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed vocabulary: ") + e.what());
  }
}

Vocab build_vocab(std::span<const std::string> corpus, TokenizerKind kind) {
  if (kind == TokenizerKind::kByte) return Vocab::bytes();
  if (corpus.empty()) throw ContractError("word vocabulary needs a non-empty corpus");
  std::set<std::string> seen;
  for (const auto& doc : corpus) {
    for (auto& w : split_words(doc)) seen.insert(std::move(w));
  }
  return Vocab::words(std::vector<std::string>(seen.begin(), seen.end()));
}

}  // namespace cpfuse
