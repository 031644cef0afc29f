#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace cpfuse {

/// One corpus record: {"id": string, "text": string, "prompt"?: string}.
struct Document {
  std::string id;
  std::string text;
  std::optional<std::string> prompt;
};

std::vector<Document> load_corpus(const std::filesystem::path& path);
std::vector<Document> parse_corpus(std::istream& in);
void save_corpus(const std::filesystem::path& path, std::span<const Document> docs);
nlohmann::ordered_json to_json(const Document& doc);

/// Text a model is trained on: the prompt (when present) followed by a
/// separator and the body.
std::string training_text(const Document& doc);

struct CorpusSplit {
  /// Document indices per split, in corpus order.
  std::vector<std::vector<std::size_t>> splits;
  /// Indices present in every split.
  std::vector<std::size_t> shared;
  std::size_t split_size = 0;
  /// |shared| / split_size.
  double realized_overlap = 0.0;
};

/// Seeded shuffle, then floor(N / n_splits) documents per split. With
/// overlap f > 0, floor(f * split_size) documents are placed in every split
/// and the remaining slots are filled with disjoint documents.
CorpusSplit split_corpus(std::size_t num_docs, int n_splits, double overlap_fraction,
                         std::uint64_t seed);

/// Portable Fisher-Yates permutation of 0..n-1 driven by std::mt19937_64.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

/// Parameters of the built-in pseudo-text corpus used for desk-scale runs.
/// Words are drawn from a seeded syllable lexicon with Zipf-distributed
/// frequencies and grouped into sentences.
struct SyntheticCorpusSpec {
  std::size_t num_docs = 400;
  std::size_t min_bytes = 500;
  std::size_t max_bytes = 2000;
  std::size_t lexicon_size = 20000;
  double zipf_exponent = 0.3;
  /// Words have 1..max_syllables syllables.
  std::size_t max_syllables = 2;
  /// Longer candidate words are rejected. Keeping words well below the
  /// model's context length makes every context span a word pair.
  std::size_t max_word_len = 5;
  std::uint64_t seed = 1;

  nlohmann::ordered_json to_json() const;
  static SyntheticCorpusSpec from_json(const nlohmann::json& j);
};

std::vector<Document> synthetic_corpus(const SyntheticCorpusSpec& spec);

}  // namespace cpfuse
