#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpfuse/bloom_filter.hpp"
#include "cpfuse/corpus.hpp"
#include "cpfuse/decoding.hpp"
#include "cpfuse/metrics.hpp"
#include "cpfuse/ngram_model.hpp"

namespace cpfuse {

/// Everything needed to reproduce one comparison run.
///
/// Policy names: "overfit_i" (model i alone, 1-based), "overfit" (all of
/// them), "cp_fuse" and "cp_delta" (models 1 and 2), "cp_fuse_multi" (all
/// models, needs 3 or more), "memfree_i" / "memfree" (model i behind a
/// blocklist of every training split). Each policy is evaluated on each
/// evaluation split.
struct ExperimentConfig {
  std::filesystem::path corpus_path;
  /// Used instead of corpus_path when set.
  std::optional<SyntheticCorpusSpec> synthetic;
  TokenizerKind tokenizer = TokenizerKind::kByte;
  int n_models = 2;
  double overlap_fraction = 0.0;
  std::uint64_t split_seed = 0;
  TrainingConfig training;
  DecodeConfig decode;
  std::vector<std::string> policies = {"overfit", "cp_fuse", "cp_delta"};
  std::vector<Metric> metrics = all_metrics();
  double percentile = 95.0;
  /// Documents without a "prompt" field are prompted with their first P tokens.
  int prompt_tokens = 32;
  /// Limit each generation to the length of the reference continuation
  /// (plus one token for EOS), on top of decode.max_tokens.
  bool cap_to_reference = true;
  /// 1-based split indices to evaluate on; empty means all.
  std::vector<int> eval_splits;
  /// Evaluate at most this many documents per split (0: all).
  std::size_t max_docs_per_split = 0;
  int workers = 1;
  std::uint64_t bloom_bits = std::uint64_t{1} << 24;
  std::uint32_t bloom_hashes = 7;
  std::uint64_t bloom_seed = 0;
  /// Keep per-step fusion traces in the report (needed for traces.jsonl).
  bool keep_traces = true;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  /// Relative corpus paths are resolved against base_dir.
  static ExperimentConfig from_json(const nlohmann::json& j,
                                    const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// Trained state shared by experiment and attack runs.
struct PreparedExperiment {
  std::vector<Document> docs;
  Vocab vocab;
  CorpusSplit split;
  std::vector<std::shared_ptr<const NGramModel>> models;
  /// Built only when a memfree policy is requested.
  std::optional<Blocklist> blocklist;
};

PreparedExperiment prepare_experiment(const ExperimentConfig& cfg);

/// A policy resolved to its decoding policy and model indices (0-based).
struct PolicySpec {
  std::string name;
  Policy policy = Policy::kSingle;
  std::vector<std::size_t> models;
};

std::vector<PolicySpec> expand_policies(const std::vector<std::string>& names, int n_models);

struct SampleRun {
  std::string doc_id;
  std::size_t prompt_len = 0;
  std::string text;
  GenerationRecord record;
};

struct CellResult {
  std::string policy;
  int split = 1;
  std::size_t prefix_len = 0;
  std::size_t skipped = 0;
  MetricsReport metrics;
  std::vector<SampleRun> runs;
};

struct ExperimentReport {
  ExperimentConfig config;
  CorpusSplit split;
  std::vector<CellResult> cells;
  bool failed = false;
  std::string error;

  const CellResult& cell(const std::string& policy, int split) const;
  /// policy -> "split_i" -> metric -> tail value.
  nlohmann::ordered_json cross_table() const;
  nlohmann::ordered_json to_json() const;
  /// report.json, report.csv, samples.jsonl, generations.jsonl, traces.jsonl
  void write(const std::filesystem::path& out_dir) const;
};

/// Generates and scores one policy on one split. extra_prefix adds that many
/// tokens of the document body to the prompt (the prefix attack);
/// documents left with nothing to continue are skipped and counted.
CellResult evaluate_cell(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                         const PolicySpec& policy, int split, std::size_t extra_prefix = 0);

ExperimentReport run_experiment(const ExperimentConfig& cfg, const PreparedExperiment& prep);

/// Runs the experiment and writes the bundle. On failure the cells finished
/// so far are written with a failure marker and the error is rethrown.
ExperimentReport run_experiment_to_dir(const ExperimentConfig& cfg,
                                       const std::filesystem::path& out_dir);

struct AttackRow {
  std::size_t prefix_len = 0;
  std::string policy;
  int split = 1;
  std::size_t samples = 0;
  std::size_t skipped = 0;
  double tail_em = 0.0;
  double tail_bleu = 0.0;
};

struct AttackReport {
  std::vector<AttackRow> rows;
  const AttackRow& row(std::size_t prefix_len, const std::string& policy, int split) const;
  nlohmann::ordered_json to_json() const;
};

/// For each prefix length, every configured policy on every evaluation
/// split, scored with EM and BLEU.
AttackReport run_prefix_attack(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                               const std::vector<std::size_t>& prefix_lengths);

/// |L_1 - L_2| after each emitted token of a two-model fused generation.
std::vector<double> history_gaps(const GenerationRecord& record);

}  // namespace cpfuse
