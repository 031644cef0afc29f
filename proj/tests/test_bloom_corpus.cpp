#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>

#include "cpfuse/bloom_filter.hpp"
#include "cpfuse/corpus.hpp"
#include "cpfuse/error.hpp"

using namespace cpfuse;

namespace {

TokenSeq random_key(std::mt19937_64& rng, std::size_t len) {
  TokenSeq k(len);
  for (auto& t : k) t = static_cast<TokenId>(rng() % 257);
  return k;
}

}  // namespace

TEST_CASE("bloom filter has no false negatives") {
  BloomFilter f(1 << 16, 7, 3);
  std::mt19937_64 rng(1);
  std::vector<TokenSeq> keys;
  for (int i = 0; i < 2000; ++i) keys.push_back(random_key(rng, 10));
  for (const auto& k : keys) f.insert(k);
  for (const auto& k : keys) CHECK(f.contains(k));
  CHECK(f.num_inserted() == 2000);
}

TEST_CASE("bloom false positive rate tracks the analytic estimate") {
  BloomFilter f(1 << 15, 5, 9);
  std::mt19937_64 rng(2);
  std::set<TokenSeq> inserted;
  for (int i = 0; i < 3000; ++i) {
    auto k = random_key(rng, 8);
    f.insert(k);
    inserted.insert(k);
  }
  int fp = 0, probes = 0;
  while (probes < 20000) {
    auto k = random_key(rng, 8);
    if (inserted.count(k)) continue;
    ++probes;
    fp += f.contains(k) ? 1 : 0;
  }
  const double rate = fp / double(probes);
  const double expect = f.expected_false_positive_rate();
  CHECK(rate < 3 * expect + 0.002);
  CHECK(rate > expect / 3);
}

TEST_CASE("bloom key length is part of the hash") {
  BloomFilter f(1 << 12, 4, 0);
  f.insert(TokenSeq{1, 2, 3});
  CHECK(f.contains(TokenSeq{1, 2, 3}));
  CHECK_FALSE(f.contains(TokenSeq{1, 2}));
}

TEST_CASE("bloom serialization round trip") {
  BloomFilter f(1000, 3, 5);
  f.insert(TokenSeq{7, 8});
  const auto back = BloomFilter::from_json(f.to_json());
  CHECK(back.to_json() == f.to_json());
  CHECK(back.contains(TokenSeq{7, 8}));
  auto bad = f.to_json();
  bad["bits"] = "AAAA";
  CHECK_THROWS_AS(BloomFilter::from_json(bad), FormatError);
  CHECK_THROWS_AS(BloomFilter(0, 3, 0), ContractError);
}

TEST_CASE("blocklist counts n-grams and skips short documents") {
  const std::vector<TokenSeq> docs = {{1, 2, 3, 4}, {5}, {6, 7, 8}};
  const auto bl = build_blocklist(docs, 3, 1 << 12, 4, 0);
  CHECK(bl.ngrams_inserted == 3);
  CHECK(bl.documents_skipped == 1);
  CHECK(bl.filter.contains(TokenSeq{2, 3, 4}));
  CHECK(bl.filter.contains(TokenSeq{6, 7, 8}));
  CHECK_THROWS_AS(build_blocklist(docs, 1, 1 << 12, 4, 0), ContractError);
}

TEST_CASE("corpus parsing") {
  std::istringstream in(R"({"id":"a","text":"hello"}
{"id":"b","text":"world","prompt":"say"}
)");
  const auto docs = parse_corpus(in);
  REQUIRE(docs.size() == 2);
  CHECK(docs[1].prompt.value() == "say");
  CHECK(training_text(docs[0]) == "hello");
  CHECK(training_text(docs[1]) == "say\nworld");

  std::istringstream dup(R"({"id":"a","text":"x"}
{"id":"a","text":"y"})");
  CHECK_THROWS_AS(parse_corpus(dup), FormatError);
  std::istringstream broken("{\"id\":\"a\"}");
  CHECK_THROWS_AS(parse_corpus(broken), FormatError);
  CHECK_THROWS_AS(load_corpus("/nonexistent/corpus.jsonl"), IoError);

  const auto path = std::filesystem::temp_directory_path() / "cpfuse_test_corpus.jsonl";
  save_corpus(path, docs);
  const auto back = load_corpus(path);
  CHECK(back.size() == 2);
  CHECK(back[1].text == "world");
  std::filesystem::remove(path);
}

TEST_CASE("split with overlap") {
  const auto s = split_corpus(100, 2, 0.10, 0);
  CHECK(s.split_size == 50);
  CHECK(s.shared.size() == 5);
  CHECK(s.realized_overlap == doctest::Approx(0.1));
  std::vector<std::size_t> inter;
  std::set_intersection(s.splits[0].begin(), s.splits[0].end(), s.splits[1].begin(),
                        s.splits[1].end(), std::back_inserter(inter));
  CHECK(inter == s.shared);
  for (const auto& sp : s.splits) CHECK(sp.size() == 50);
}

TEST_CASE("disjoint splits and determinism") {
  const auto a = split_corpus(90, 3, 0.0, 4);
  const auto b = split_corpus(90, 3, 0.0, 4);
  CHECK(a.splits == b.splits);
  std::set<std::size_t> all;
  for (const auto& sp : a.splits) all.insert(sp.begin(), sp.end());
  CHECK(all.size() == 90);
  CHECK(split_corpus(90, 3, 0.0, 5).splits != a.splits);
  CHECK_THROWS_AS(split_corpus(10, 2, 1.0, 0), ContractError);
  CHECK_THROWS_AS(split_corpus(1, 2, 0.0, 0), ContractError);
}

TEST_CASE("seeded permutation is a permutation") {
  auto p = seeded_permutation(1000, 12);
  CHECK(p == seeded_permutation(1000, 12));
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == i);
}

TEST_CASE("synthetic corpus") {
  SyntheticCorpusSpec spec;
  spec.num_docs = 20;
  spec.lexicon_size = 500;
  const auto docs = synthetic_corpus(spec);
  REQUIRE(docs.size() == 20);
  std::set<std::string> ids;
  for (const auto& d : docs) {
    CHECK(d.text.size() >= spec.min_bytes);
    CHECK(d.text.size() <= spec.max_bytes);
    ids.insert(d.id);
  }
  CHECK(ids.size() == 20);
  const auto again = synthetic_corpus(spec);
  CHECK(again[7].text == docs[7].text);
  CHECK(SyntheticCorpusSpec::from_json(spec.to_json()).to_json() == spec.to_json());
}
