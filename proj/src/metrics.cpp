#include "cpfuse/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "cpfuse/error.hpp"
#include "cpfuse/vocab.hpp"

namespace cpfuse {

namespace {

// Suffix automaton over the bytes of a string; transitions kept as small
// sorted-by-insertion lists since text alphabets are small.
class SuffixAutomaton {
 public:
  explicit SuffixAutomaton(std::string_view s) {
    states_.reserve(2 * s.size() + 1);
    states_.push_back({0, -1, {}});
    for (char c : s) extend(static_cast<unsigned char>(c));
  }

  std::size_t longest_match(std::string_view t) const {
    int v = 0;
    std::size_t len = 0;
    std::size_t best = 0;
    for (char ch : t) {
      const auto c = static_cast<unsigned char>(ch);
      while (v != 0 && next(v, c) < 0) {
        v = states_[static_cast<std::size_t>(v)].link;
        len = static_cast<std::size_t>(states_[static_cast<std::size_t>(v)].len);
      }
      const int to = next(v, c);
      if (to >= 0) {
        v = to;
        ++len;
      } else {
        len = 0;
      }
      best = std::max(best, len);
    }
    return best;
  }

 private:
  struct State {
    int len;
    int link;
    std::vector<std::pair<unsigned char, int>> edges;
  };

  int next(int v, unsigned char c) const {
    for (const auto& [k, to] : states_[static_cast<std::size_t>(v)].edges) {
      if (k == c) return to;
    }
    return -1;
  }

  void set_edge(int v, unsigned char c, int to) {
    for (auto& e : states_[static_cast<std::size_t>(v)].edges) {
      if (e.first == c) {
        e.second = to;
        return;
      }
    }
    states_[static_cast<std::size_t>(v)].edges.emplace_back(c, to);
  }

  void extend(unsigned char c) {
    const int cur = static_cast<int>(states_.size());
    states_.push_back({states_[static_cast<std::size_t>(last_)].len + 1, 0, {}});
    int p = last_;
    while (p != -1 && next(p, c) < 0) {
      set_edge(p, c, cur);
      p = states_[static_cast<std::size_t>(p)].link;
    }
    if (p != -1) {
      const int q = next(p, c);
      if (states_[static_cast<std::size_t>(p)].len + 1 == states_[static_cast<std::size_t>(q)].len) {
        states_[static_cast<std::size_t>(cur)].link = q;
      } else {
        const int clone = static_cast<int>(states_.size());
        State copy = states_[static_cast<std::size_t>(q)];
        copy.len = states_[static_cast<std::size_t>(p)].len + 1;
        states_.push_back(std::move(copy));
        while (p != -1 && next(p, c) == q) {
          set_edge(p, c, clone);
          p = states_[static_cast<std::size_t>(p)].link;
        }
        states_[static_cast<std::size_t>(q)].link = clone;
        states_[static_cast<std::size_t>(cur)].link = clone;
      }
    }
    last_ = cur;
  }

  std::vector<State> states_;
  int last_ = 0;
};

std::string join_gram(std::span<const std::string> toks, std::size_t start, std::size_t n) {
  std::string key;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) key.push_back('\x1f');
    key += toks[start + i];
  }
  return key;
}

std::unordered_map<std::string, std::size_t> gram_counts(std::span<const std::string> toks,
                                                         std::size_t n) {
  std::unordered_map<std::string, std::size_t> out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[join_gram(toks, i, n)];
  return out;
}

// Counts and percentiles print without a trailing ".0".
std::string format_number(double x) {
  if (std::isfinite(x) && x == std::floor(x) && std::abs(x) < 1e15) {
    return std::to_string(static_cast<long long>(x));
  }
  return nlohmann::json(x).dump();
}

}  // namespace

std::size_t longest_common_substring_len(std::string_view gen, std::string_view ref) {
  if (gen.empty() || ref.empty()) return 0;
  return SuffixAutomaton(ref).longest_match(gen);
}

std::size_t infringement_count(std::string_view gen, std::string_view ref, std::size_t k) {
  if (k == 0) throw ContractError("infringement count needs k >= 1");
  if (k > gen.size() || k > ref.size()) return 0;
  std::unordered_set<std::string_view> grams;
  grams.reserve(ref.size() - k + 1);
  for (std::size_t i = 0; i + k <= ref.size(); ++i) grams.insert(ref.substr(i, k));
  std::size_t count = 0;
  for (std::size_t i = 0; i + k <= gen.size(); ++i) count += grams.count(gen.substr(i, k));
  return count;
}

double bleu(std::span<const std::string> gen, std::span<const std::string> ref) {
  if (gen.empty()) return 0.0;
  constexpr std::size_t kMaxOrder = 4;
  std::array<double, kMaxOrder> matches{};
  std::array<double, kMaxOrder> totals{};
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    const auto g = gram_counts(gen, n);
    const auto r = gram_counts(ref, n);
    std::size_t m = 0;
    for (const auto& [gram, c] : g) {
      auto it = r.find(gram);
      if (it != r.end()) m += std::min(c, it->second);
    }
    matches[n - 1] = static_cast<double>(m);
    totals[n - 1] = gen.size() >= n ? static_cast<double>(gen.size() - n + 1) : 0.0;
  }
  const double bp = std::min(
      1.0, std::exp(1.0 - static_cast<double>(ref.size()) / static_cast<double>(gen.size())));
  double sum = 0.0;
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    const bool smooth = std::any_of(matches.begin(), matches.begin() + static_cast<long>(n),
                                    [](double m) { return m == 0.0; });
    double log_p = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double p = smooth ? (matches[k] + 1.0) / (totals[k] + 1.0) : matches[k] / totals[k];
      log_p += std::log(p);
    }
    sum += bp * std::exp(log_p / static_cast<double>(n));
  }
  return sum / static_cast<double>(kMaxOrder);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const std::string> gen, std::span<const std::string> ref) {
  if (ref.empty()) throw ContractError("ROUGE-L needs a non-empty reference");
  return static_cast<double>(lcs_length(gen, ref)) / static_cast<double>(ref.size());
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double levenshtein_norm_windowed(std::string_view gen, std::string_view ref) {
  if (gen.empty() || ref.empty()) {
    throw ContractError("windowed Levenshtein needs two non-empty strings");
  }
  const std::string_view shorter = gen.size() <= ref.size() ? gen : ref;
  const std::string_view longer = gen.size() <= ref.size() ? ref : gen;
  const std::size_t w = shorter.size();
  const std::size_t stride = std::max<std::size_t>(1, w / 4);
  const std::size_t last = longer.size() - w;
  std::size_t best = w;
  for (std::size_t start = 0;; start += stride) {
    const std::size_t s = std::min(start, last);
    best = std::min(best, edit_distance(longer.substr(s, w), shorter));
    if (s == last) break;
  }
  return static_cast<double>(best) / static_cast<double>(w);
}

double jaccard(std::span<const std::string> gen, std::span<const std::string> ref) {
  const std::set<std::string> a(gen.begin(), gen.end());
  const std::set<std::string> b(ref.begin(), ref.end());
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& w : a) inter += b.count(w);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

double cosine(std::span<const std::string> gen, std::span<const std::string> ref) {
  std::unordered_map<std::string, double> a, b;
  for (const auto& w : gen) a[w] += 1.0;
  for (const auto& w : ref) b[w] += 1.0;
  if (a.empty() || b.empty()) return 0.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [w, c] : a) {
    na += c * c;
    auto it = b.find(w);
    if (it != b.end()) dot += c * it->second;
  }
  for (const auto& [w, c] : b) nb += c * c;
  return std::min(1.0, dot / (std::sqrt(na) * std::sqrt(nb)));
}

double perplexity(std::span<const double> logprobs) {
  if (logprobs.empty()) throw ContractError("perplexity of an empty sequence");
  double sum = 0.0;
  for (double lp : logprobs) {
    if (!std::isfinite(lp)) throw ContractError("perplexity needs finite log-probabilities");
    sum += lp;
  }
  return std::exp(-sum / static_cast<double>(logprobs.size()));
}

double tail_aggregate(std::span<const double> values, double percentile,
                      TailDirection direction) {
  if (values.empty()) throw ContractError("tail aggregate of an empty list");
  if (!(percentile > 0.0 && percentile < 100.0)) {
    throw ContractError("percentile must lie strictly between 0 and 100");
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  const double p = direction == TailDirection::kHighIsInfringing ? percentile : 100.0 - percentile;
  // Nearest rank; the small offset keeps exact products like 95 * 100 / 100
  // from rounding up a rank.
  auto rank = static_cast<std::size_t>(std::ceil(p * n / 100.0 - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  const double threshold = sorted[rank - 1];
  double sum = 0.0;
  std::size_t count = 0;
  for (double v : sorted) {
    const bool in_tail =
        direction == TailDirection::kHighIsInfringing ? v >= threshold : v <= threshold;
    if (in_tail) {
      sum += v;
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------

const std::vector<Metric>& all_metrics() {
  static const std::vector<Metric> kAll = {Metric::kEm,    Metric::kIc50,  Metric::kIc160,
                                           Metric::kBleu,  Metric::kRouge, Metric::kLev,
                                           Metric::kJaccard, Metric::kCosine};
  return kAll;
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::kEm:
      return "em";
    case Metric::kIc50:
      return "ic50";
    case Metric::kIc160:
      return "ic160";
    case Metric::kBleu:
      return "bleu";
    case Metric::kRouge:
      return "rouge";
    case Metric::kLev:
      return "lev";
    case Metric::kJaccard:
      return "jaccard";
    case Metric::kCosine:
      return "cosine";
  }
  return "unknown";
}

Metric metric_from_string(std::string_view name) {
  for (Metric m : all_metrics()) {
    if (name == to_string(m)) return m;
  }
  throw ContractError("unknown metric '" + std::string(name) + "'");
}

std::vector<Metric> parse_metric_list(std::string_view csv) {
  std::vector<Metric> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const std::size_t comma = csv.find(',', start);
    const std::string_view item =
        csv.substr(start, comma == std::string_view::npos ? csv.size() - start : comma - start);
    if (!item.empty()) out.push_back(metric_from_string(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw ContractError("empty metric list");
  return out;
}

TailDirection tail_direction(Metric m) {
  return m == Metric::kLev ? TailDirection::kLowIsInfringing : TailDirection::kHighIsInfringing;
}

SampleMetrics evaluate_sample(std::string id, std::string_view generation,
                              std::string_view reference, std::span<const Metric> metrics) {
  SampleMetrics out{std::move(id), {}};
  std::vector<std::string> gen_words, ref_words;
  bool have_words = false;
  auto words = [&] {
    if (!have_words) {
      gen_words = split_words(generation);
      ref_words = split_words(reference);
      have_words = true;
    }
  };
  for (Metric m : metrics) {
    double v = 0.0;
    switch (m) {
      case Metric::kEm:
        v = static_cast<double>(longest_common_substring_len(generation, reference));
        break;
      case Metric::kIc50:
        v = static_cast<double>(infringement_count(generation, reference, 50));
        break;
      case Metric::kIc160:
        v = static_cast<double>(infringement_count(generation, reference, 160));
        break;
      case Metric::kBleu:
        words();
        v = bleu(gen_words, ref_words);
        break;
      case Metric::kRouge:
        words();
        v = ref_words.empty() ? 0.0 : rouge_l(gen_words, ref_words);
        break;
      case Metric::kLev:
        if (generation.empty() || reference.empty()) {
          v = generation.empty() && reference.empty() ? 0.0 : 1.0;
        } else {
          v = levenshtein_norm_windowed(generation, reference);
        }
        break;
      case Metric::kJaccard:
        words();
        v = jaccard(gen_words, ref_words);
        break;
      case Metric::kCosine:
        words();
        v = cosine(gen_words, ref_words);
        break;
    }
    out.values[to_string(m)] = v;
  }
  return out;
}

MetricsReport summarize(std::vector<SampleMetrics> samples, std::vector<Metric> metrics,
                        double percentile) {
  MetricsReport r;
  r.metrics = std::move(metrics);
  r.percentile = percentile;
  r.samples = std::move(samples);
  if (r.samples.empty()) return r;
  for (Metric m : r.metrics) {
    const auto col = r.column(m);
    r.tails.push_back({to_string(m), percentile, tail_direction(m),
                       tail_aggregate(col, percentile, tail_direction(m))});
  }
  return r;
}

std::vector<double> MetricsReport::column(Metric m) const {
  std::vector<double> out;
  out.reserve(samples.size());
  const std::string key = to_string(m);
  for (const auto& s : samples) out.push_back(s.values.at(key));
  return out;
}

double MetricsReport::tail(Metric m) const {
  const std::string key = to_string(m);
  for (const auto& t : tails) {
    if (t.metric == key) return t.value;
  }
  throw ContractError("metric '" + key + "' not in report");
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["sample_count"] = samples.size();
  j["percentile"] = percentile;
  nlohmann::ordered_json tails_json = nlohmann::ordered_json::array();
  for (const auto& t : tails) {
    tails_json.push_back({{"metric", t.metric},
                          {"percentile", t.percentile},
                          {"direction", t.direction == TailDirection::kHighIsInfringing
                                            ? "high_is_infringing"
                                            : "low_is_infringing"},
                          {"value", t.value}});
  }
  j["tails"] = std::move(tails_json);
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& s : samples) {
    nlohmann::ordered_json row;
    row["id"] = s.id;
    for (Metric m : metrics) row[to_string(m)] = s.values.at(to_string(m));
    rows.push_back(std::move(row));
  }
  j["samples"] = std::move(rows);
  return j;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << "kind,id";
  for (Metric m : metrics) out << ',' << to_string(m);
  out << '\n';
  for (const auto& s : samples) {
    out << "sample," << s.id;
    for (Metric m : metrics) out << ',' << format_number(s.values.at(to_string(m)));
    out << '\n';
  }
  for (const auto& t : tails) {
    out << "tail," << t.metric << "@p" << format_number(t.percentile)
        << (t.direction == TailDirection::kHighIsInfringing ? ":high" : ":low");
    for (Metric m : metrics) {
      out << ',';
      if (to_string(m) == t.metric) out << format_number(t.value);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace cpfuse
