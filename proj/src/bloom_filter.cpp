#include "cpfuse/bloom_filter.hpp"

#include <cmath>
#include <fstream>

#include <cereal/external/base64.hpp>

#include "cpfuse/error.hpp"

namespace cpfuse {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Probe {
  std::uint64_t h1;
  std::uint64_t h2;
};

Probe hash_key(std::span<const TokenId> key, std::uint64_t seed) {
  std::uint64_t x = splitmix64(seed ^ static_cast<std::uint64_t>(key.size()));
  for (TokenId id : key) x = splitmix64(x ^ static_cast<std::uint32_t>(id));
  return {x, splitmix64(x ^ 0x9e3779b97f4a7c15ULL) | 1ULL};
}

}  // namespace

BloomFilter::BloomFilter(std::uint64_t num_bits, std::uint32_t num_hashes, std::uint64_t seed)
    : num_bits_(num_bits), num_hashes_(num_hashes), seed_(seed) {
  if (num_bits_ == 0 || num_hashes_ == 0) {
    throw ContractError("bloom filter needs at least one bit and one hash");
  }
  words_.assign((num_bits_ + 63) / 64, 0);
}

void BloomFilter::insert(std::span<const TokenId> key) {
  const Probe p = hash_key(key, seed_);
  for (std::uint32_t i = 0; i < num_hashes_; ++i) {
    const std::uint64_t bit = (p.h1 + i * p.h2) % num_bits_;
    words_[bit >> 6] |= 1ULL << (bit & 63);
  }
  ++num_inserted_;
}

bool BloomFilter::contains(std::span<const TokenId> key) const {
  const Probe p = hash_key(key, seed_);
  for (std::uint32_t i = 0; i < num_hashes_; ++i) {
    const std::uint64_t bit = (p.h1 + i * p.h2) % num_bits_;
    if ((words_[bit >> 6] & (1ULL << (bit & 63))) == 0) return false;
  }
  return true;
}

double BloomFilter::expected_false_positive_rate() const {
  const double h = num_hashes_;
  const double fill = 1.0 - std::exp(-h * static_cast<double>(num_inserted_) /
                                     static_cast<double>(num_bits_));
  return std::pow(fill, h);
}

nlohmann::ordered_json BloomFilter::to_json() const {
  std::vector<unsigned char> bytes((num_bits_ + 7) / 8);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(words_[i / 8] >> (8 * (i % 8)));
  }
  nlohmann::ordered_json j;
  j["m"] = num_bits_;
  j["h"] = num_hashes_;
  j["seed"] = seed_;
  j["bits"] = cereal::base64::encode(bytes.data(), static_cast<unsigned int>(bytes.size()));
  j["n_inserted"] = num_inserted_;
  return j;
}

BloomFilter BloomFilter::from_json(const nlohmann::json& j) {
  try {
    BloomFilter f(j.at("m").get<std::uint64_t>(), j.at("h").get<std::uint32_t>(),
                  j.at("seed").get<std::uint64_t>());
    const std::string raw = cereal::base64::decode(j.at("bits").get<std::string>());
    if (raw.size() != (f.num_bits_ + 7) / 8) throw FormatError("bloom bit array has wrong length");
    for (std::size_t i = 0; i < raw.size(); ++i) {
      f.words_[i / 8] |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[i]))
                         << (8 * (i % 8));
    }
    f.num_inserted_ = j.at("n_inserted").get<std::uint64_t>();
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed bloom filter: ") + e.what());
  }
}

void BloomFilter::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << to_json().dump() << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

BloomFilter BloomFilter::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("bloom filter file is not valid JSON: ") + e.what());
  }
}

Blocklist build_blocklist(std::span<const TokenSeq> documents, int n, std::uint64_t num_bits,
                          std::uint32_t num_hashes, std::uint64_t seed) {
  if (n < 2) throw ContractError("blocklist n-gram length must be >= 2");
  Blocklist out{BloomFilter(num_bits, num_hashes, seed)};
  const auto len = static_cast<std::size_t>(n);
  for (const auto& doc : documents) {
    if (doc.size() < len) {
      ++out.documents_skipped;
      continue;
    }
    for (std::size_t i = 0; i + len <= doc.size(); ++i) {
      out.filter.insert(std::span<const TokenId>(doc).subspan(i, len));
      ++out.ngrams_inserted;
    }
  }
  return out;
}

}  // namespace cpfuse
