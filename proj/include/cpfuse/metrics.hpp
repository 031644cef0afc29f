#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cpfuse {

/// EM: length in characters of the longest contiguous substring shared by
/// the two strings. Linear time via a suffix automaton over `ref`.
std::size_t longest_common_substring_len(std::string_view gen, std::string_view ref);

/// IC_k: number of positions i such that gen[i, i+k) occurs anywhere in ref.
std::size_t infringement_count(std::string_view gen, std::string_view ref, std::size_t k);

/// Mean of BLEU-1..BLEU-4 over word tokens. BLEU-n uses the geometric mean
/// of clipped precisions of orders 1..n; if any of those orders has zero
/// clipped matches every precision of BLEU-n becomes (m + 1) / (c + 1).
/// Brevity penalty min(1, exp(1 - |ref| / |gen|)); empty gen scores 0.
double bleu(std::span<const std::string> gen, std::span<const std::string> ref);

/// Token-level LCS length divided by |ref|. ref must be non-empty.
double rouge_l(std::span<const std::string> gen, std::span<const std::string> ref);

/// Length of the longest common subsequence of two token sequences.
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// Plain Levenshtein distance over bytes.
std::size_t edit_distance(std::string_view a, std::string_view b);

/// Normalized Levenshtein with a sliding window: the shorter string (length
/// w) is compared against windows of the longer one taken with stride
/// max(1, w / 4) plus the final alignment; returns the minimum of
/// distance / w. Both inputs must be non-empty.
double levenshtein_norm_windowed(std::string_view gen, std::string_view ref);

/// Jaccard similarity of the word sets (1 when both are empty).
double jaccard(std::span<const std::string> gen, std::span<const std::string> ref);

/// Cosine similarity of word-count vectors (0 when either is empty).
double cosine(std::span<const std::string> gen, std::span<const std::string> ref);

/// exp(-mean(logprobs)).
double perplexity(std::span<const double> logprobs);

enum class TailDirection { kHighIsInfringing, kLowIsInfringing };

/// Mean of the values in the infringing tail. The threshold is the
/// nearest-rank p-th percentile for high_is_infringing (values >= it are
/// averaged) and the nearest-rank (100 - p)-th percentile for
/// low_is_infringing (values <= it are averaged).
double tail_aggregate(std::span<const double> values, double percentile, TailDirection direction);

/// Metric identifiers accepted by evaluate_sample and the CLI.
enum class Metric { kEm, kIc50, kIc160, kBleu, kRouge, kLev, kJaccard, kCosine };

std::string to_string(Metric m);
Metric metric_from_string(std::string_view name);
std::vector<Metric> parse_metric_list(std::string_view csv);
TailDirection tail_direction(Metric m);
const std::vector<Metric>& all_metrics();

struct SampleMetrics {
  std::string id;
  std::map<std::string, double> values;
};

SampleMetrics evaluate_sample(std::string id, std::string_view generation,
                              std::string_view reference, std::span<const Metric> metrics);

struct TailSummary {
  std::string metric;
  double percentile = 95.0;
  TailDirection direction = TailDirection::kHighIsInfringing;
  double value = 0.0;
};

struct MetricsReport {
  std::vector<Metric> metrics;
  double percentile = 95.0;
  std::vector<SampleMetrics> samples;
  std::vector<TailSummary> tails;

  std::size_t sample_count() const { return samples.size(); }
  double tail(Metric m) const;
  std::vector<double> column(Metric m) const;

  nlohmann::ordered_json to_json() const;
  /// One row per sample followed by one summary row per metric.
  std::string to_csv() const;
};

/// Fills in tail summaries from per-sample values.
MetricsReport summarize(std::vector<SampleMetrics> samples, std::vector<Metric> metrics,
                        double percentile);

}  // namespace cpfuse
