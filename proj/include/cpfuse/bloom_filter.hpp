#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "cpfuse/vocab.hpp"

namespace cpfuse {

/// Bloom filter over token-id sequences.
///
/// Hashing: the key is folded into two 64-bit values with SplitMix64,
///   x1 = mix(seed ^ len), x1 = mix(x1 ^ id) for every id
///   x2 = mix(x1 ^ 0x9e3779b97f4a7c15)
/// and probe i (0 <= i < h) sets bit (x1 + i * (x2 | 1)) mod m
/// (Kirsch-Mitzenmacher double hashing).
class BloomFilter {
 public:
  BloomFilter(std::uint64_t num_bits, std::uint32_t num_hashes, std::uint64_t seed);

  void insert(std::span<const TokenId> key);
  bool contains(std::span<const TokenId> key) const;

  std::uint64_t num_bits() const { return num_bits_; }
  std::uint32_t num_hashes() const { return num_hashes_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t num_inserted() const { return num_inserted_; }

  /// (1 - exp(-h * n / m))^h for the current insertion count.
  double expected_false_positive_rate() const;

  /// {"m":..,"h":..,"seed":..,"bits":"<base64>","n_inserted":..}
  nlohmann::ordered_json to_json() const;
  static BloomFilter from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static BloomFilter load(const std::filesystem::path& path);

 private:
  std::uint64_t num_bits_;
  std::uint32_t num_hashes_;
  std::uint64_t seed_;
  std::uint64_t num_inserted_ = 0;
  std::vector<std::uint64_t> words_;
};

struct Blocklist {
  BloomFilter filter;
  std::uint64_t ngrams_inserted = 0;
  std::uint64_t documents_skipped = 0;
};

/// Inserts every contiguous n-gram of every document. Documents shorter
/// than n contribute nothing and are counted as skipped.
Blocklist build_blocklist(std::span<const TokenSeq> documents, int n, std::uint64_t num_bits,
                          std::uint32_t num_hashes, std::uint64_t seed);

}  // namespace cpfuse
