#include "cpfuse/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <unordered_set>

#include "cpfuse/error.hpp"

namespace cpfuse {

namespace {

// Unbiased draw from [0, bound) by rejection on the top of the range.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

std::vector<Document> parse_corpus(std::istream& in) {
  std::vector<Document> docs;
  std::string line;
  std::size_t lineno = 0;
  std::unordered_set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Document d;
      d.id = j.at("id").get<std::string>();
      d.text = j.at("text").get<std::string>();
      if (j.contains("prompt") && !j.at("prompt").is_null()) {
        d.prompt = j.at("prompt").get<std::string>();
      }
      if (!ids.insert(d.id).second) throw FormatError("duplicate document id '" + d.id + "'");
      docs.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return docs;
}

std::vector<Document> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus '" + path.string() + "'");
  return parse_corpus(in);
}

nlohmann::ordered_json to_json(const Document& doc) {
  nlohmann::ordered_json j;
  j["id"] = doc.id;
  j["text"] = doc.text;
  if (doc.prompt) j["prompt"] = *doc.prompt;
  return j;
}

void save_corpus(const std::filesystem::path& path, std::span<const Document> docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& d : docs) out << to_json(d).dump() << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string training_text(const Document& doc) {
  if (!doc.prompt) return doc.text;
  return *doc.prompt + "\n" + doc.text;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(perm[i - 1], perm[bounded(rng, i)]);
  }
  return perm;
}

CorpusSplit split_corpus(std::size_t num_docs, int n_splits, double overlap_fraction,
                         std::uint64_t seed) {
  if (n_splits < 1) throw ContractError("need at least one split");
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0)) {
    throw ContractError("overlap fraction must lie in [0, 1)");
  }
  const auto k = static_cast<std::size_t>(n_splits);
  CorpusSplit out;
  out.split_size = num_docs / k;
  if (out.split_size == 0) {
    throw ContractError("not enough documents (" + std::to_string(num_docs) + ") for " +
                        std::to_string(n_splits) + " splits");
  }
  const auto shared = k > 1 ? static_cast<std::size_t>(
                                  std::floor(overlap_fraction * static_cast<double>(out.split_size) + 1e-9))
                            : 0;
  const std::size_t unique = out.split_size - shared;
  const auto perm = seeded_permutation(num_docs, seed);
  out.shared.assign(perm.begin(), perm.begin() + static_cast<long>(shared));
  std::sort(out.shared.begin(), out.shared.end());
  out.splits.resize(k);
  for (std::size_t s = 0; s < k; ++s) {
    auto& split = out.splits[s];
    split = out.shared;
    const auto begin = perm.begin() + static_cast<long>(shared + s * unique);
    split.insert(split.end(), begin, begin + static_cast<long>(unique));
    std::sort(split.begin(), split.end());
  }
  // Verify the construction: pairwise intersections are exactly the shared set.
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      std::vector<std::size_t> inter;
      std::set_intersection(out.splits[a].begin(), out.splits[a].end(), out.splits[b].begin(),
                            out.splits[b].end(), std::back_inserter(inter));
      if (inter != out.shared) throw ContractError("split construction violated disjointness");
    }
  }
  out.realized_overlap =
      static_cast<double>(out.shared.size()) / static_cast<double>(out.split_size);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

nlohmann::ordered_json SyntheticCorpusSpec::to_json() const {
  return {{"num_docs", num_docs},           {"min_bytes", min_bytes},
          {"max_bytes", max_bytes},         {"lexicon_size", lexicon_size},
          {"zipf_exponent", zipf_exponent}, {"max_syllables", max_syllables},
          {"max_word_len", max_word_len},
          {"seed", seed}};
}

SyntheticCorpusSpec SyntheticCorpusSpec::from_json(const nlohmann::json& j) {
  SyntheticCorpusSpec s;
  s.num_docs = j.value("num_docs", s.num_docs);
  s.min_bytes = j.value("min_bytes", s.min_bytes);
  s.max_bytes = j.value("max_bytes", s.max_bytes);
  s.lexicon_size = j.value("lexicon_size", s.lexicon_size);
  s.zipf_exponent = j.value("zipf_exponent", s.zipf_exponent);
  s.max_syllables = j.value("max_syllables", s.max_syllables);
  s.max_word_len = j.value("max_word_len", s.max_word_len);
  s.seed = j.value("seed", s.seed);
  return s;
}

std::vector<Document> synthetic_corpus(const SyntheticCorpusSpec& spec) {
  if (spec.min_bytes == 0 || spec.min_bytes > spec.max_bytes || spec.lexicon_size == 0 ||
      spec.max_syllables == 0 || spec.max_word_len < 2) {
    throw ContractError("invalid synthetic corpus parameters");
  }
  static const std::vector<std::string> kOnsets = {
      "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s",
      "t", "v", "w", "z", "br", "cr", "dr", "st", "tr", "pl", "ch", "sh", "th", "gr"};
  static const std::vector<std::string> kVowels = {"a", "e", "i", "o", "u", "ai", "ea", "ou", "io"};
  static const std::vector<std::string> kCodas = {"", "", "", "n", "r", "s", "t", "l", "m", "nd", "st"};

  std::mt19937_64 rng(spec.seed);
  auto pick = [&](const std::vector<std::string>& v) -> const std::string& {
    return v[bounded(rng, v.size())];
  };

  std::vector<std::string> lexicon;
  std::set<std::string> seen;
  std::size_t attempts = 0;
  while (lexicon.size() < spec.lexicon_size) {
    if (++attempts > 200 * spec.lexicon_size) {
      throw ContractError("cannot draw " + std::to_string(spec.lexicon_size) +
                          " distinct words under the length limit");
    }
    const std::size_t syllables = 1 + bounded(rng, spec.max_syllables);
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) w += pick(kOnsets) + pick(kVowels) + pick(kCodas);
    if (w.size() <= spec.max_word_len && seen.insert(w).second) lexicon.push_back(std::move(w));
  }

  // Zipf cumulative weights over lexicon ranks.
  std::vector<double> cdf(lexicon.size());
  double total = 0.0;
  for (std::size_t r = 0; r < lexicon.size(); ++r) {
    total += 1.0 / std::pow(static_cast<double>(r + 1), spec.zipf_exponent);
    cdf[r] = total;
  }
  auto draw_word = [&]() -> const std::string& {
    const double u = unit(rng) * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    return lexicon[static_cast<std::size_t>(it - cdf.begin())];
  };

  std::vector<Document> docs;
  docs.reserve(spec.num_docs);
  const int width = static_cast<int>(std::to_string(spec.num_docs).size());
  for (std::size_t d = 0; d < spec.num_docs; ++d) {
    const std::size_t target = spec.min_bytes + bounded(rng, spec.max_bytes - spec.min_bytes + 1);
    std::string text;
    std::size_t words_in_sentence = 0;
    std::size_t sentence_len = 6 + bounded(rng, 10);
    while (true) {
      std::string w = draw_word();
      if (words_in_sentence == 0) w[0] = static_cast<char>(w[0] - 'a' + 'A');
      const bool end_sentence = ++words_in_sentence == sentence_len;
      if (end_sentence) w += '.';
      const std::size_t add = w.size() + (text.empty() ? 0 : 1);
      if (text.size() + add > target) break;
      if (!text.empty()) text += ' ';
      text += w;
      if (end_sentence) {
        words_in_sentence = 0;
        sentence_len = 6 + bounded(rng, 10);
      }
    }
    // Pad to the exact target length with filler from the lexicon's short words.
    while (text.size() < target) text += text.size() + 1 < target ? " a" : ".";
    std::string id = std::to_string(d);
    id = "doc-" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    docs.push_back({std::move(id), std::move(text), std::nullopt});
  }
  return docs;
}

}  // namespace cpfuse
