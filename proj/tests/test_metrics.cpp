#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "cpfuse/error.hpp"
#include "cpfuse/metrics.hpp"
#include "oracles.hpp"

using namespace cpfuse;

namespace {

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

// BLEU written from the definition with string-keyed maps.
double bleu_oracle(const std::vector<std::string>& gen, const std::vector<std::string>& ref) {
  if (gen.empty()) return 0.0;
  auto grams = [](const std::vector<std::string>& s, std::size_t n) {
    std::map<std::string, int> m;
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
      std::string key;
      for (std::size_t k = 0; k < n; ++k) key += s[i + k] + '\x1f';
      ++m[key];
    }
    return m;
  };
  std::vector<double> match(4), total(4);
  for (std::size_t n = 1; n <= 4; ++n) {
    auto g = grams(gen, n), r = grams(ref, n);
    for (auto& [k, c] : g) match[n - 1] += std::min(c, r[k]);
    total[n - 1] = gen.size() >= n ? double(gen.size() - n + 1) : 0.0;
  }
  const double bp = std::min(1.0, std::exp(1.0 - double(ref.size()) / double(gen.size())));
  double acc = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    bool zero = false;
    for (std::size_t k = 0; k < n; ++k) zero = zero || match[k] == 0;
    double prod = 1;
    for (std::size_t k = 0; k < n; ++k) {
      prod *= zero ? (match[k] + 1) / (total[k] + 1) : match[k] / total[k];
    }
    acc += bp * std::pow(prod, 1.0 / double(n));
  }
  return acc / 4;
}

}  // namespace

TEST_CASE("exact match length") {
  CHECK(longest_common_substring_len("xxabcdyy", "zzabcdzz") == 4);
  CHECK(longest_common_substring_len("abc", "def") == 0);
  CHECK(longest_common_substring_len("", "abc") == 0);
  CHECK(longest_common_substring_len("abc", "abc") == 3);
}

TEST_CASE("exact match agrees with the quadratic DP") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 300; ++i) {
    const auto a = oracle::random_string(rng, 80, "abc");
    const auto b = oracle::random_string(rng, 80, "abcd");
    CHECK(longest_common_substring_len(a, b) == oracle::longest_common_substring(a, b));
  }
}

TEST_CASE("infringement count") {
  const std::string ref(200, 'x');
  CHECK(infringement_count(ref, ref, 50) == 151);
  CHECK(infringement_count(std::string(40, 'x'), ref, 50) == 0);
  CHECK(infringement_count("abcab", "zabz", 2) == 2);
  CHECK_THROWS_AS(infringement_count("a", "a", 0), ContractError);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const auto a = oracle::random_string(rng, 60, "ab");
    const auto b = oracle::random_string(rng, 60, "ab");
    for (std::size_t k : {1u, 3u, 6u}) CHECK(infringement_count(a, b, k) == oracle::infringement_count(a, b, k));
  }
}

TEST_CASE("bleu") {
  const auto s = words("the cat sat on the mat");
  CHECK(bleu(s, s) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(bleu(std::vector<std::string>{}, s) == 0.0);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto g = words(oracle::random_string(rng, 40, "ab  "));
    const auto r = words(oracle::random_string(rng, 40, "ab  "));
    CHECK(bleu(g, r) == doctest::Approx(bleu_oracle(g, r)).epsilon(1e-12));
  }
}

TEST_CASE("rouge-l and lcs") {
  const auto a = words("a b c d e");
  const auto b = words("a c e f");
  CHECK(lcs_length(a, b) == 3);
  CHECK(rouge_l(a, b) == doctest::Approx(0.75));
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto x = words(oracle::random_string(rng, 30, "abc "));
    const auto y = words(oracle::random_string(rng, 30, "abc "));
    CHECK(lcs_length(x, y) == oracle::lcs(x, y));
  }
}

TEST_CASE("levenshtein") {
  CHECK(edit_distance("kitten", "sitting") == 3);
  CHECK(levenshtein_norm_windowed("abc", "zzzabczzz") == 0.0);
  CHECK_THROWS_AS(levenshtein_norm_windowed("", "a"), ContractError);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto a = oracle::random_string(rng, 40, "abc");
    const auto b = oracle::random_string(rng, 40, "abc");
    CHECK(edit_distance(a, b) == oracle::levenshtein(a, b));
    if (!a.empty() && !b.empty()) {
      CHECK(levenshtein_norm_windowed(a, b) == doctest::Approx(oracle::levenshtein_windowed(a, b)));
    }
  }
}

TEST_CASE("set and bag similarities") {
  CHECK(jaccard(words("a b c"), words("b c d")) == doctest::Approx(0.5));
  CHECK(jaccard(std::vector<std::string>{}, std::vector<std::string>{}) == 1.0);
  CHECK(cosine(words("a a b"), words("a b b")) == doctest::Approx(4.0 / 5.0));
  CHECK(cosine(std::vector<std::string>{}, words("a")) == 0.0);
  const std::vector<double> lp = {std::log(0.5), std::log(0.25)};
  CHECK(perplexity(lp) == doctest::Approx(std::sqrt(8.0)));
}

TEST_CASE("tail aggregation uses nearest rank") {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = i + 1;
  CHECK(tail_aggregate(v, 95, TailDirection::kHighIsInfringing) == doctest::Approx(97.5));
  CHECK(tail_aggregate(v, 95, TailDirection::kLowIsInfringing) == doctest::Approx(3.0));
  CHECK(tail_aggregate(std::vector<double>{4.0}, 95, TailDirection::kHighIsInfringing) == 4.0);
  CHECK_THROWS_AS(tail_aggregate(std::vector<double>{}, 95, TailDirection::kHighIsInfringing),
                  ContractError);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 10);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> w(1 + rng() % 40);
    for (auto& x : w) x = std::floor(u(rng));
    CHECK(tail_aggregate(w, 90, TailDirection::kHighIsInfringing) ==
          doctest::Approx(oracle::tail_high(w, 90)));
  }
}

TEST_CASE("metric names and directions") {
  for (Metric m : all_metrics()) CHECK(metric_from_string(to_string(m)) == m);
  CHECK(tail_direction(Metric::kLev) == TailDirection::kLowIsInfringing);
  CHECK(tail_direction(Metric::kEm) == TailDirection::kHighIsInfringing);
  CHECK(parse_metric_list("em,bleu").size() == 2);
  CHECK_THROWS_AS(metric_from_string("meteor"), ContractError);
}

TEST_CASE("report summarizing and csv") {
  const std::vector<Metric> ms = {Metric::kEm, Metric::kLev};
  std::vector<SampleMetrics> samples;
  samples.push_back(evaluate_sample("a", "hello world", "hello world", ms));
  samples.push_back(evaluate_sample("b", "zzzz", "hello world", ms));
  CHECK(samples[0].values.at("em") == 11);
  CHECK(samples[0].values.at("lev") == 0.0);
  const auto rep = summarize(samples, ms, 95);
  CHECK(rep.tail(Metric::kEm) == 11);
  CHECK(rep.tail(Metric::kLev) == 0.0);
  const auto csv = rep.to_csv();
  CHECK(csv.find("kind,id,em,lev") == 0);
  CHECK(csv.find("tail,em@p95:high,11") != std::string::npos);
  CHECK(rep.to_json()["samples"].size() == 2);
}
