#include "cpfuse/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string_view>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "cpfuse/error.hpp"
#include "cpfuse/model_backend.hpp"

namespace cpfuse {

namespace {

using ojson = nlohmann::ordered_json;

nlohmann::ordered_json grid_to_json(const GridSpec& g) {
  const auto std_values = GridSpec::standard().values;
  if (g.values == std_values) return "default";
  return g.values;
}

GridSpec grid_from_json(const nlohmann::json& j) {
  if (j.is_string()) return GridSpec::parse(j.get<std::string>());
  GridSpec g;
  g.values = j.get<std::vector<double>>();
  g.validate();
  return g;
}

std::string split_key(int split) { return "split_" + std::to_string(split); }

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// A misspelled key would otherwise silently fall back to a default.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known) {
  if (!j.is_object()) throw FormatError("expected a JSON object in experiment config");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw FormatError("unknown experiment config key '" + key + "'");
    }
  }
}

// Runs fn(i) for i in [0, n) on up to `workers` threads; the first
// exception (by index) is rethrown after every worker has joined.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct SamplePlan {
  bool skip = false;
  TokenSeq prompt;
  std::size_t continuation_len = 0;
};

SamplePlan plan_sample(const Document& doc, const Vocab& vocab, int prompt_tokens,
                       std::size_t extra_prefix) {
  SamplePlan plan;
  const TokenSeq body = vocab.encode(doc.text);
  std::size_t cut = 0;
  if (doc.prompt) {
    plan.prompt = vocab.encode(*doc.prompt + "\n");
    cut = extra_prefix;
  } else {
    cut = static_cast<std::size_t>(prompt_tokens) + extra_prefix;
  }
  if (cut >= body.size()) {
    plan.skip = true;
    return plan;
  }
  plan.prompt.insert(plan.prompt.end(), body.begin(), body.begin() + static_cast<long>(cut));
  plan.continuation_len = body.size() - cut;
  return plan;
}

std::string reference_text(const Document& doc, TokenizerKind kind) {
  if (kind == TokenizerKind::kByte) return doc.text;
  const auto words = split_words(doc.text);
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::vector<std::size_t> docs_for_split(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                                        int split) {
  auto docs = prep.split.splits.at(static_cast<std::size_t>(split - 1));
  if (cfg.max_docs_per_split > 0 && docs.size() > cfg.max_docs_per_split) {
    docs.resize(cfg.max_docs_per_split);
  }
  return docs;
}

std::vector<int> eval_splits(const ExperimentConfig& cfg) {
  if (!cfg.eval_splits.empty()) return cfg.eval_splits;
  std::vector<int> all;
  for (int s = 1; s <= cfg.n_models; ++s) all.push_back(s);
  return all;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  if (!synthetic && corpus_path.empty()) throw ContractError("config needs a corpus");
  if (n_models < 1) throw ContractError("n_models must be >= 1");
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0)) {
    throw ContractError("overlap_fraction must lie in [0, 1)");
  }
  if (prompt_tokens < 1) throw ContractError("prompt_tokens must be >= 1");
  if (!(percentile > 0.0 && percentile < 100.0)) {
    throw ContractError("percentile must lie strictly between 0 and 100");
  }
  if (workers < 1) throw ContractError("workers must be >= 1");
  if (training.tokenizer != tokenizer) {
    throw ContractError("training tokenizer differs from experiment tokenizer");
  }
  training.validate();
  DecodeConfig d = decode;
  d.policy = Policy::kCpFuse;  // validates the grid as well
  d.validate();
  for (int s : eval_splits) {
    if (s < 1 || s > n_models) throw ContractError("evaluation split out of range");
  }
  expand_policies(policies, n_models);
}

nlohmann::ordered_json ExperimentConfig::to_json() const {
  ojson j;
  if (synthetic) {
    j["corpus"] = {{"synthetic", synthetic->to_json()}};
  } else {
    j["corpus"] = corpus_path.string();
  }
  j["tokenizer"] = to_string(tokenizer);
  j["n_models"] = n_models;
  j["overlap_fraction"] = overlap_fraction;
  j["split_seed"] = split_seed;
  j["training"] = {{"order", training.order},
                   {"backoff_discount", training.backoff_discount},
                   {"epsilon_uniform", training.epsilon_uniform},
                   {"append_eos", training.append_eos}};
  j["decode"] = {{"mode", to_string(decode.mode)},
                 {"temperature", decode.temperature},
                 {"max_tokens", decode.max_tokens},
                 {"seed", decode.seed},
                 {"memfree_n", decode.memfree_n},
                 {"grid", grid_to_json(decode.grid)}};
  j["policies"] = policies;
  std::vector<std::string> ms;
  for (Metric m : metrics) ms.push_back(to_string(m));
  j["metrics"] = ms;
  j["percentile"] = percentile;
  j["prompt_tokens"] = prompt_tokens;
  j["cap_to_reference"] = cap_to_reference;
  j["eval_splits"] = eval_splits;
  j["max_docs_per_split"] = max_docs_per_split;
  j["workers"] = workers;
  j["bloom"] = {{"bits", bloom_bits}, {"hashes", bloom_hashes}, {"seed", bloom_seed}};
  j["keep_traces"] = keep_traces;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j,
                                             const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  try {
    reject_unknown_keys(j, {"corpus", "tokenizer", "n_models", "overlap_fraction", "split_seed",
                            "training", "decode", "policies", "metrics", "percentile",
                            "prompt_tokens", "cap_to_reference", "eval_splits",
                            "max_docs_per_split", "workers", "bloom", "keep_traces"});
    const auto& corpus = j.at("corpus");
    if (corpus.is_object()) {
      c.synthetic = SyntheticCorpusSpec::from_json(corpus.at("synthetic"));
    } else {
      c.corpus_path = corpus.get<std::string>();
      if (c.corpus_path.is_relative() && !base_dir.empty()) c.corpus_path = base_dir / c.corpus_path;
    }
    c.tokenizer = tokenizer_kind_from_string(j.value("tokenizer", std::string("byte")));
    c.training = TrainingConfig::defaults_for(c.tokenizer);
    c.n_models = j.value("n_models", c.n_models);
    c.overlap_fraction = j.value("overlap_fraction", c.overlap_fraction);
    c.split_seed = j.value("split_seed", c.split_seed);
    if (j.contains("training")) {
      const auto& t = j.at("training");
      reject_unknown_keys(t, {"order", "backoff_discount", "epsilon_uniform", "append_eos"});
      c.training.order = t.value("order", c.training.order);
      c.training.backoff_discount = t.value("backoff_discount", c.training.backoff_discount);
      c.training.epsilon_uniform = t.value("epsilon_uniform", c.training.epsilon_uniform);
      c.training.append_eos = t.value("append_eos", c.training.append_eos);
    }
    if (j.contains("decode")) {
      const auto& d = j.at("decode");
      reject_unknown_keys(d, {"mode", "temperature", "max_tokens", "seed", "memfree_n", "grid"});
      c.decode.mode = decode_mode_from_string(d.value("mode", std::string("greedy")));
      c.decode.temperature = d.value("temperature", c.decode.temperature);
      c.decode.max_tokens = d.value("max_tokens", c.decode.max_tokens);
      c.decode.seed = d.value("seed", c.decode.seed);
      c.decode.memfree_n = d.value("memfree_n", c.decode.memfree_n);
      if (d.contains("grid")) c.decode.grid = grid_from_json(d.at("grid"));
    }
    if (j.contains("policies")) c.policies = j.at("policies").get<std::vector<std::string>>();
    if (j.contains("metrics")) {
      c.metrics.clear();
      for (const auto& m : j.at("metrics")) c.metrics.push_back(metric_from_string(m.get<std::string>()));
    }
    c.percentile = j.value("percentile", c.percentile);
    c.prompt_tokens = j.value("prompt_tokens", c.prompt_tokens);
    c.cap_to_reference = j.value("cap_to_reference", c.cap_to_reference);
    if (j.contains("eval_splits")) c.eval_splits = j.at("eval_splits").get<std::vector<int>>();
    c.max_docs_per_split = j.value("max_docs_per_split", c.max_docs_per_split);
    c.workers = j.value("workers", c.workers);
    if (j.contains("bloom")) {
      const auto& b = j.at("bloom");
      reject_unknown_keys(b, {"bits", "hashes", "seed"});
      c.bloom_bits = b.value("bits", c.bloom_bits);
      c.bloom_hashes = b.value("hashes", c.bloom_hashes);
      c.bloom_seed = b.value("seed", c.bloom_seed);
    }
    c.keep_traces = j.value("keep_traces", c.keep_traces);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return from_json(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Preparation

std::vector<PolicySpec> expand_policies(const std::vector<std::string>& names, int n_models) {
  std::vector<PolicySpec> out;
  auto add_family = [&](const std::string& base, Policy p, const std::string& name) {
    if (name == base) {
      for (int i = 1; i <= n_models; ++i) {
        out.push_back({base + "_" + std::to_string(i), p, {static_cast<std::size_t>(i - 1)}});
      }
      return true;
    }
    if (name.rfind(base + "_", 0) != 0) return false;
    const std::string idx = name.substr(base.size() + 1);
    int i = 0;
    try {
      std::size_t used = 0;
      i = std::stoi(idx, &used);
      if (used != idx.size()) throw std::invalid_argument(idx);
    } catch (const std::exception&) {
      throw ContractError("unknown policy '" + name + "'");
    }
    if (i < 1 || i > n_models) throw ContractError("policy '" + name + "' refers to a missing model");
    out.push_back({name, p, {static_cast<std::size_t>(i - 1)}});
    return true;
  };
  for (const auto& name : names) {
    if (name == "cp_fuse" || name == "cp_delta") {
      if (n_models < 2) throw ContractError(name + " needs at least 2 models");
      out.push_back({name, name == "cp_fuse" ? Policy::kCpFuse : Policy::kCpDelta, {0, 1}});
    } else if (name == "cp_fuse_multi") {
      if (n_models < 3) throw ContractError("cp_fuse_multi needs at least 3 models");
      PolicySpec spec{name, Policy::kCpFuseMulti, {}};
      for (int i = 0; i < n_models; ++i) spec.models.push_back(static_cast<std::size_t>(i));
      out.push_back(std::move(spec));
    } else if (!add_family("overfit", Policy::kSingle, name) &&
               !add_family("memfree", Policy::kMemFree, name)) {
      throw ContractError("unknown policy '" + name + "'");
    }
  }
  return out;
}

PreparedExperiment prepare_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  PreparedExperiment prep{.docs = cfg.synthetic ? synthetic_corpus(*cfg.synthetic)
                                                : load_corpus(cfg.corpus_path),
                          .vocab = Vocab::bytes(),
                          .split = {},
                          .models = {},
                          .blocklist = std::nullopt};
  std::vector<std::string> texts;
  texts.reserve(prep.docs.size());
  for (const auto& d : prep.docs) texts.push_back(training_text(d));
  prep.vocab = build_vocab(texts, cfg.tokenizer);
  prep.split = split_corpus(prep.docs.size(), cfg.n_models, cfg.overlap_fraction, cfg.split_seed);

  for (const auto& split : prep.split.splits) {
    std::vector<std::string> part;
    part.reserve(split.size());
    for (std::size_t i : split) part.push_back(texts[i]);
    prep.models.push_back(std::make_shared<const NGramModel>(train(part, cfg.training, prep.vocab)));
  }

  const auto policies = expand_policies(cfg.policies, cfg.n_models);
  const bool need_bloom = std::any_of(policies.begin(), policies.end(),
                                      [](const PolicySpec& p) { return p.policy == Policy::kMemFree; });
  if (need_bloom) {
    std::vector<TokenSeq> seqs;
    std::vector<bool> used(prep.docs.size(), false);
    for (const auto& split : prep.split.splits) {
      for (std::size_t i : split) used[i] = true;
    }
    for (std::size_t i = 0; i < prep.docs.size(); ++i) {
      if (used[i]) seqs.push_back(prep.vocab.encode(texts[i]));
    }
    prep.blocklist = build_blocklist(seqs, cfg.decode.memfree_n, cfg.bloom_bits, cfg.bloom_hashes,
                                     cfg.bloom_seed);
  }
  return prep;
}

// ---------------------------------------------------------------------------
// Evaluation

CellResult evaluate_cell(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                         const PolicySpec& policy, int split, std::size_t extra_prefix) {
  if (split < 1 || split > static_cast<int>(prep.split.splits.size())) {
    throw ContractError("evaluation split out of range");
  }
  std::vector<NGramBackend> backends;
  backends.reserve(policy.models.size());
  for (std::size_t m : policy.models) backends.emplace_back(prep.models.at(m));
  std::vector<ModelBackend*> ptrs;
  for (auto& b : backends) ptrs.push_back(&b);

  const BloomFilter* bloom = nullptr;
  if (policy.policy == Policy::kMemFree) {
    if (!prep.blocklist) throw ContractError("memfree policy without a blocklist");
    bloom = &prep.blocklist->filter;
  }

  const auto doc_ids = docs_for_split(cfg, prep, split);
  struct Slot {
    bool skipped = false;
    SampleRun run;
    SampleMetrics metrics;
  };
  std::vector<Slot> slots(doc_ids.size());

  parallel_for(doc_ids.size(), cfg.workers, [&](std::size_t k) {
    const std::size_t doc_index = doc_ids[k];
    const Document& doc = prep.docs[doc_index];
    const SamplePlan plan = plan_sample(doc, prep.vocab, cfg.prompt_tokens, extra_prefix);
    Slot& slot = slots[k];
    if (plan.skip) {
      slot.skipped = true;
      return;
    }
    DecodeConfig dc = cfg.decode;
    dc.policy = policy.policy;
    dc.seed = cfg.decode.seed + doc_index;
    if (cfg.cap_to_reference) {
      dc.max_tokens = static_cast<int>(
          std::min<std::size_t>(static_cast<std::size_t>(dc.max_tokens), plan.continuation_len + 1));
    }
    slot.run.doc_id = doc.id;
    slot.run.prompt_len = plan.prompt.size();
    slot.run.record = generate(ptrs, plan.prompt, dc, bloom);
    slot.run.text = prep.vocab.decode(slot.run.record.emitted);
    if (!cfg.keep_traces) {
      slot.run.record.trace.clear();
      slot.run.record.trace.shrink_to_fit();
    }
    slot.metrics = evaluate_sample(doc.id, slot.run.text, reference_text(doc, cfg.tokenizer),
                                   cfg.metrics);
  });

  CellResult cell;
  cell.policy = policy.name;
  cell.split = split;
  cell.prefix_len = extra_prefix;
  std::vector<SampleMetrics> samples;
  for (auto& slot : slots) {
    if (slot.skipped) {
      ++cell.skipped;
      continue;
    }
    samples.push_back(std::move(slot.metrics));
    cell.runs.push_back(std::move(slot.run));
  }
  if (samples.empty()) {
    cell.metrics.metrics = cfg.metrics;
    cell.metrics.percentile = cfg.percentile;
    return cell;
  }
  cell.metrics = summarize(std::move(samples), cfg.metrics, cfg.percentile);
  return cell;
}

namespace {

CellResult evaluate_nonempty_cell(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                                  const PolicySpec& policy, int split) {
  CellResult cell = evaluate_cell(cfg, prep, policy, split);
  if (cell.metrics.sample_count() == 0) {
    throw ContractError("no evaluable documents for " + policy.name + " on " + split_key(split));
  }
  return cell;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg, const PreparedExperiment& prep) {
  ExperimentReport report;
  report.config = cfg;
  report.split = prep.split;
  for (const auto& policy : expand_policies(cfg.policies, cfg.n_models)) {
    for (int split : eval_splits(cfg)) {
      report.cells.push_back(evaluate_nonempty_cell(cfg, prep, policy, split));
    }
  }
  return report;
}

ExperimentReport run_experiment_to_dir(const ExperimentConfig& cfg,
                                       const std::filesystem::path& out_dir) {
  ExperimentReport report;
  report.config = cfg;
  try {
    const PreparedExperiment prep = prepare_experiment(cfg);
    report.split = prep.split;
    for (const auto& policy : expand_policies(cfg.policies, cfg.n_models)) {
      for (int split : eval_splits(cfg)) {
        report.cells.push_back(evaluate_nonempty_cell(cfg, prep, policy, split));
      }
    }
  } catch (const std::exception& e) {
    report.failed = true;
    report.error = e.what();
    report.write(out_dir);
    throw;
  }
  report.write(out_dir);
  return report;
}

// ---------------------------------------------------------------------------
// Reports

const CellResult& ExperimentReport::cell(const std::string& policy, int split) const {
  for (const auto& c : cells) {
    if (c.policy == policy && c.split == split) return c;
  }
  throw ContractError("report has no cell " + policy + "/" + split_key(split));
}

nlohmann::ordered_json ExperimentReport::cross_table() const {
  ojson table = ojson::object();
  for (const auto& c : cells) {
    ojson row = ojson::object();
    for (const auto& t : c.metrics.tails) row[t.metric] = t.value;
    table[c.policy][split_key(c.split)] = std::move(row);
  }
  return table;
}

nlohmann::ordered_json ExperimentReport::to_json() const {
  ojson j;
  j["status"] = failed ? "failed" : "ok";
  if (failed) j["error"] = error;
  j["config"] = config.to_json();
  ojson sizes = ojson::array();
  for (const auto& s : split.splits) sizes.push_back(s.size());
  j["splits"] = {{"split_size", split.split_size},
                 {"sizes", sizes},
                 {"shared_docs", split.shared.size()},
                 {"realized_overlap", split.realized_overlap}};
  j["percentile"] = config.percentile;
  j["table"] = cross_table();
  ojson cells_json = ojson::array();
  for (const auto& c : cells) {
    cells_json.push_back({{"policy", c.policy},
                          {"split", c.split},
                          {"samples", c.metrics.sample_count()},
                          {"skipped", c.skipped}});
  }
  j["cells"] = std::move(cells_json);
  return j;
}

void ExperimentReport::write(const std::filesystem::path& out_dir) const {
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "report.json", to_json().dump(2) + "\n");

  std::ostringstream csv;
  csv << "policy,split,metric,percentile,tail,samples\n";
  for (const auto& c : cells) {
    for (const auto& t : c.metrics.tails) {
      csv << c.policy << ',' << c.split << ',' << t.metric << ',' << t.percentile << ','
          << ojson(t.value).dump() << ',' << c.metrics.sample_count() << '\n';
    }
  }
  write_text(out_dir / "report.csv", csv.str());

  std::ofstream samples(out_dir / "samples.jsonl", std::ios::binary);
  std::ofstream gens(out_dir / "generations.jsonl", std::ios::binary);
  std::ofstream traces(out_dir / "traces.jsonl", std::ios::binary);
  if (!samples || !gens || !traces) throw IoError("cannot write report files in " + out_dir.string());
  for (const auto& c : cells) {
    for (std::size_t k = 0; k < c.runs.size(); ++k) {
      const auto& run = c.runs[k];
      const auto& sm = c.metrics.samples[k];
      ojson s{{"policy", c.policy}, {"split", c.split}, {"id", sm.id}};
      for (const auto& [name, v] : sm.values) s[name] = v;
      samples << s.dump() << '\n';

      ojson g{{"policy", c.policy},
              {"split", c.split},
              {"id", run.doc_id},
              {"prompt_tokens", run.prompt_len},
              {"text", run.text},
              {"tokens", run.record.emitted.size()},
              {"stop", to_string(run.record.stop)},
              {"final_hist", run.record.final_hist},
              {"all_blocked_steps", run.record.all_blocked_steps.size()}};
      gens << g.dump() << '\n';

      for (const auto& step : run.record.trace) {
        ojson t{{"policy", c.policy}, {"split", c.split}, {"id", run.doc_id}};
        const ojson fields = trace_to_json(step);
        for (const auto& [key, value] : fields.items()) t[key] = value;
        traces << t.dump() << '\n';
      }
    }
  }
  if (!samples || !gens || !traces) throw IoError("failed writing report files in " + out_dir.string());
}

const AttackRow& AttackReport::row(std::size_t prefix_len, const std::string& policy,
                                   int split) const {
  for (const auto& r : rows) {
    if (r.prefix_len == prefix_len && r.policy == policy && r.split == split) return r;
  }
  throw ContractError("attack report has no row for " + policy + "/" + split_key(split) +
                      " at prefix " + std::to_string(prefix_len));
}

nlohmann::ordered_json AttackReport::to_json() const {
  ojson arr = ojson::array();
  for (const auto& r : rows) {
    arr.push_back({{"prefix_len", r.prefix_len},
                   {"policy", r.policy},
                   {"split", r.split},
                   {"samples", r.samples},
                   {"skipped", r.skipped},
                   {"tail_em", std::isnan(r.tail_em) ? ojson(nullptr) : ojson(r.tail_em)},
                   {"tail_bleu", std::isnan(r.tail_bleu) ? ojson(nullptr) : ojson(r.tail_bleu)}});
  }
  return {{"rows", arr}};
}

AttackReport run_prefix_attack(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                               const std::vector<std::size_t>& prefix_lengths) {
  ExperimentConfig c = cfg;
  c.metrics = {Metric::kEm, Metric::kBleu};
  c.keep_traces = false;
  AttackReport report;
  for (std::size_t len : prefix_lengths) {
    for (const auto& policy : expand_policies(c.policies, c.n_models)) {
      for (int split : eval_splits(c)) {
        const CellResult cell = evaluate_cell(c, prep, policy, split, len);
        const bool empty = cell.metrics.sample_count() == 0;
        report.rows.push_back({len, policy.name, split, cell.metrics.sample_count(), cell.skipped,
                               empty ? kNaN : cell.metrics.tail(Metric::kEm),
                               empty ? kNaN : cell.metrics.tail(Metric::kBleu)});
      }
    }
  }
  return report;
}

std::vector<double> history_gaps(const GenerationRecord& record) {
  std::vector<double> gaps;
  if (record.trace.empty()) return gaps;
  for (std::size_t t = 1; t < record.trace.size(); ++t) {
    const auto& h = record.trace[t].hist;
    gaps.push_back(std::abs(h.at(0) - h.at(1)));
  }
  gaps.push_back(std::abs(record.final_hist.at(0) - record.final_hist.at(1)));
  return gaps;
}

}  // namespace cpfuse
