// Command-line front end: train, split, generate, evaluate, experiment,
// attack, blocklist, serve, synth.
//
// Exit codes: 0 success, 1 usage error, 2 data or contract error, 3 internal.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cpfuse/bloom_filter.hpp"
#include "cpfuse/corpus.hpp"
#include "cpfuse/decoding.hpp"
#include "cpfuse/error.hpp"
#include "cpfuse/experiment.hpp"
#include "cpfuse/metrics.hpp"
#include "cpfuse/model_backend.hpp"
#include "cpfuse/ngram_model.hpp"
#include "cpfuse/remote_backend.hpp"

namespace {

using namespace cpfuse;
using ojson = nlohmann::ordered_json;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  return out;
}

// Texts used for vocabulary construction: every document of the corpus, so
// that models trained on different splits share ids.
std::vector<std::string> corpus_texts(const std::vector<Document>& docs) {
  std::vector<std::string> texts;
  texts.reserve(docs.size());
  for (const auto& d : docs) texts.push_back(training_text(d));
  return texts;
}

struct SplitOptions {
  int n = 2;
  double overlap = 0.0;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string corpus;
  int split_index = 0;
  SplitOptions split;
  int order = 0;
  std::string tokenizer = "byte";
  double lambda = 0.4;
  double epsilon = 1e-4;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  const auto docs = load_corpus(a.corpus);
  const auto kind = tokenizer_kind_from_string(a.tokenizer);
  TrainingConfig cfg = TrainingConfig::defaults_for(kind);
  if (a.order > 0) cfg.order = a.order;
  cfg.backoff_discount = a.lambda;
  cfg.epsilon_uniform = a.epsilon;
  cfg.validate();

  const auto texts = corpus_texts(docs);
  const Vocab vocab = build_vocab(texts, kind);
  std::vector<std::string> part;
  if (a.split_index > 0) {
    const auto split = split_corpus(docs.size(), a.split.n, a.split.overlap, a.split.seed);
    if (a.split_index > a.split.n) throw ContractError("split index exceeds number of splits");
    for (std::size_t i : split.splits[static_cast<std::size_t>(a.split_index - 1)]) {
      part.push_back(texts[i]);
    }
  } else {
    part = texts;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const NGramModel model = train(part, cfg, vocab);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  model.save(a.out);
  std::cerr << "trained order-" << cfg.order << ' ' << to_string(kind) << " model on "
            << part.size() << " documents in " << secs << " s -> " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_split(const std::string& corpus, const SplitOptions& o, const std::string& out_dir) {
  const auto docs = load_corpus(corpus);
  const auto split = split_corpus(docs.size(), o.n, o.overlap, o.seed);
  std::filesystem::create_directories(out_dir);
  ojson summary{{"n_splits", o.n},
                {"split_size", split.split_size},
                {"shared_docs", split.shared.size()},
                {"realized_overlap", split.realized_overlap},
                {"seed", o.seed},
                {"files", ojson::array()}};
  for (std::size_t s = 0; s < split.splits.size(); ++s) {
    std::vector<Document> part;
    for (std::size_t i : split.splits[s]) part.push_back(docs[i]);
    const auto name = "split_" + std::to_string(s + 1) + ".jsonl";
    save_corpus(std::filesystem::path(out_dir) / name, part);
    summary["files"].push_back(name);
  }
  auto out = open_out((std::filesystem::path(out_dir) / "splits.json").string());
  out << summary.dump(2) << '\n';
  std::cout << summary.dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string models;
  std::string policy = "single";
  std::string mode = "greedy";
  double temperature = 1.0;
  int max_tokens = 1024;
  std::uint64_t seed = 0;
  std::string grid = "default";
  int memfree_n = 10;
  std::string bloom;
  std::string prompt_file;
  std::string prompt;
  std::string trace;
  std::string out;
  int timeout_ms = 10000;
};

struct Prompt {
  std::string id;
  std::string text;
};

std::vector<Prompt> read_prompts(const GenerateArgs& a) {
  std::vector<Prompt> prompts;
  if (!a.prompt.empty()) prompts.push_back({"prompt", a.prompt});
  if (a.prompt_file.empty()) return prompts;
  std::ifstream in(a.prompt_file, std::ios::binary);
  if (!in) throw IoError("cannot open prompt file '" + a.prompt_file + "'");
  if (std::filesystem::path(a.prompt_file).extension() != ".jsonl") {
    std::stringstream ss;
    ss << in.rdbuf();
    prompts.push_back({"prompt", ss.str()});
    return prompts;
  }
  // One {"id": .., "prompt": ..} object per line.
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      prompts.push_back({j.value("id", std::to_string(lineno)), j.at("prompt").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("prompt file line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return prompts;
}

int cmd_generate(const GenerateArgs& a) {
  std::vector<std::unique_ptr<ModelBackend>> owned;
  std::optional<Vocab> vocab;
  for (const auto& spec : split_on(a.models, ',')) {
    if (spec.rfind("remote:", 0) == 0) {
      RemoteSpawnSpec rs;
      rs.argv = split_on(spec.substr(7), ' ');
      rs.timeout = std::chrono::milliseconds(a.timeout_ms);
      owned.push_back(std::make_unique<RemoteBackend>(std::move(rs)));
    } else {
      auto model = std::make_shared<const NGramModel>(NGramModel::load(spec));
      if (vocab && !(*vocab == model->vocab())) {
        throw ContractError("model '" + spec + "' uses a different vocabulary");
      }
      if (!vocab) vocab = model->vocab();
      owned.push_back(std::make_unique<NGramBackend>(std::move(model)));
    }
  }
  if (owned.empty()) throw ContractError("no models given");
  std::vector<ModelBackend*> models;
  for (auto& m : owned) models.push_back(m.get());
  check_compatible(models);
  if (!vocab) {
    if (models[0]->vocab_size() != Vocab::bytes().size()) {
      throw ContractError("remote-only generation needs a byte-level vocabulary");
    }
    vocab = Vocab::bytes();
  } else if (vocab->size() != models[0]->vocab_size()) {
    throw ContractError("remote backend vocabulary differs from the builtin models");
  }

  DecodeConfig cfg;
  cfg.policy = policy_from_string(a.policy);
  cfg.mode = decode_mode_from_string(a.mode);
  cfg.temperature = a.temperature;
  cfg.max_tokens = a.max_tokens;
  cfg.seed = a.seed;
  cfg.grid = GridSpec::parse(a.grid);
  cfg.memfree_n = a.memfree_n;
  cfg.validate();

  std::optional<BloomFilter> bloom;
  if (!a.bloom.empty()) bloom = BloomFilter::load(a.bloom);
  if (cfg.policy == Policy::kMemFree && !bloom) throw ContractError("memfree needs --bloom");

  const auto prompts = read_prompts(a);
  if (prompts.empty()) throw ContractError("no prompts given (use --prompt or --prompt-file)");

  std::ofstream out_file;
  if (!a.out.empty()) out_file = open_out(a.out);
  std::ostream& out = a.out.empty() ? std::cout : out_file;
  std::ofstream trace;
  if (!a.trace.empty()) trace = open_out(a.trace);

  for (const auto& p : prompts) {
    const TokenSeq ids = vocab->encode(p.text);
    const GenerationRecord rec = generate(models, ids, cfg, bloom ? &*bloom : nullptr);
    ojson line{{"id", p.id},
               {"text", vocab->decode(rec.emitted)},
               {"tokens", rec.emitted.size()},
               {"stop", to_string(rec.stop)},
               {"policy", to_string(rec.policy)},
               {"final_hist", rec.final_hist},
               {"all_blocked_steps", rec.all_blocked_steps}};
    out << line.dump() << '\n';
    if (trace) {
      for (const auto& step : rec.trace) {
        ojson t{{"id", p.id}};
        const ojson fields = trace_to_json(step);
        for (const auto& [k, v] : fields.items()) t[k] = v;
        trace << t.dump() << '\n';
      }
    }
  }
  out.flush();
  if (!out) throw IoError("failed writing generations");
  return 0;
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> read_texts(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(std::string("cannot open ") + what + " '" + path + "'");
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto id = j.at("id").get<std::string>();
      if (!out.emplace(id, j.at("text").get<std::string>()).second) {
        throw FormatError(std::string("duplicate id '") + id + "' in " + what);
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string(what) + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

int cmd_evaluate(const std::string& gens_path, const std::string& refs_path,
                 const std::string& metric_list, double percentile, const std::string& out_path,
                 const std::string& csv_path) {
  const auto gens = read_texts(gens_path, "generations");
  const auto refs = read_texts(refs_path, "references");
  const auto metrics = parse_metric_list(metric_list);
  std::vector<SampleMetrics> samples;
  for (const auto& [id, text] : gens) {
    const auto it = refs.find(id);
    if (it == refs.end()) throw ContractError("no reference for generation '" + id + "'");
    samples.push_back(evaluate_sample(id, text, it->second, metrics));
  }
  if (samples.empty()) throw ContractError("no generations to evaluate");
  const auto report = summarize(std::move(samples), metrics, percentile);
  const auto j = report.to_json();
  if (out_path.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    open_out(out_path) << j.dump(2) << '\n';
  }
  if (!csv_path.empty()) open_out(csv_path) << report.to_csv();
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_experiment(const std::string& config, const std::string& out_dir, int workers) {
  ExperimentConfig cfg = ExperimentConfig::load(config);
  if (workers > 0) cfg.workers = workers;
  const auto report = run_experiment_to_dir(cfg, out_dir);
  std::cout << report.cross_table().dump(2) << '\n';
  return 0;
}

int cmd_attack(const std::string& config, const std::string& lengths, const std::string& out_path,
               int workers) {
  ExperimentConfig cfg = ExperimentConfig::load(config);
  if (workers > 0) cfg.workers = workers;
  std::vector<std::size_t> prefix_lengths;
  for (const auto& item : split_on(lengths, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      prefix_lengths.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw ContractError("bad prefix length '" + item + "'");
    }
  }
  if (prefix_lengths.empty()) throw ContractError("no prefix lengths given");
  const auto prep = prepare_experiment(cfg);
  const auto report = run_prefix_attack(cfg, prep, prefix_lengths);
  const auto j = report.to_json();
  if (out_path.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    open_out(out_path) << j.dump(2) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_blocklist(const std::string& corpus, const std::string& model_path, int n,
                  std::uint64_t bits, std::uint32_t hashes, std::uint64_t seed,
                  const std::string& out) {
  const auto docs = load_corpus(corpus);
  const Vocab vocab = model_path.empty() ? Vocab::bytes() : NGramModel::load(model_path).vocab();
  std::vector<TokenSeq> seqs;
  seqs.reserve(docs.size());
  for (const auto& d : docs) seqs.push_back(vocab.encode(training_text(d)));
  const auto bl = build_blocklist(seqs, n, bits, hashes, seed);
  bl.filter.save(out);
  std::cerr << "inserted " << bl.ngrams_inserted << " " << n << "-grams ("
            << bl.documents_skipped << " short documents skipped), expected FP rate "
            << bl.filter.expected_false_positive_rate() << '\n';
  return 0;
}

int cmd_serve(const std::string& model_path) {
  NGramBackend backend(std::make_shared<const NGramModel>(NGramModel::load(model_path)));
  serve_backend(backend, std::cin, std::cout);
  return 0;
}

int cmd_synth(const SyntheticCorpusSpec& spec, const std::string& out) {
  save_corpus(out, synthetic_corpus(spec));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Copyright-protecting fusion of memorizing n-gram language models"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train an n-gram model on a corpus or one split of it");
  train_cmd->add_option("--corpus", train_args.corpus, "Corpus JSONL")->required();
  train_cmd->add_option("--split-index", train_args.split_index, "1-based split to train on (0: whole corpus)");
  train_cmd->add_option("--n-splits", train_args.split.n, "Number of splits");
  train_cmd->add_option("--overlap", train_args.split.overlap, "Overlap fraction between splits");
  train_cmd->add_option("--seed", train_args.split.seed, "Split seed");
  train_cmd->add_option("--order", train_args.order, "Model order (default 12 for bytes, 5 for words)");
  train_cmd->add_option("--tokenizer", train_args.tokenizer, "byte or word")
      ->check(CLI::IsMember({"byte", "word", "whitespace-word"}));
  train_cmd->add_option("--lambda", train_args.lambda, "Backoff discount");
  train_cmd->add_option("--epsilon", train_args.epsilon, "Uniform floor weight");
  train_cmd->add_option("--out", train_args.out, "Output model JSON")->required();

  std::string split_corpus_path, split_out;
  SplitOptions split_opts;
  auto* split_cmd = app.add_subcommand("split", "Split a corpus with controlled overlap");
  split_cmd->add_option("--corpus", split_corpus_path, "Corpus JSONL")->required();
  split_cmd->add_option("--n", split_opts.n, "Number of splits");
  split_cmd->add_option("--overlap", split_opts.overlap, "Fraction of each split shared by all splits");
  split_cmd->add_option("--seed", split_opts.seed, "Shuffle seed");
  split_cmd->add_option("--out-dir", split_out, "Output directory")->required();

  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "Generate continuations of prompts");
  gen_cmd->add_option("--models", gen.models,
                      "Comma-separated model JSON paths or remote:<command> entries")
      ->required();
  gen_cmd->add_option("--policy", gen.policy, "single, cp_fuse, cp_delta, cp_fuse_multi, memfree");
  gen_cmd->add_option("--mode", gen.mode, "greedy or temperature");
  gen_cmd->add_option("--temperature", gen.temperature, "Sampling temperature");
  gen_cmd->add_option("--max-tokens", gen.max_tokens, "Token budget per prompt");
  gen_cmd->add_option("--seed", gen.seed, "Sampling seed");
  gen_cmd->add_option("--grid", gen.grid, "default or comma-separated exponents");
  gen_cmd->add_option("--memfree-n", gen.memfree_n, "n-gram length for memfree");
  gen_cmd->add_option("--bloom", gen.bloom, "Blocklist produced by the blocklist command");
  gen_cmd->add_option("--prompt-file", gen.prompt_file, "Plain text, or JSONL of {id, prompt}");
  gen_cmd->add_option("--prompt", gen.prompt, "Prompt text");
  gen_cmd->add_option("--trace", gen.trace, "Write per-step fusion traces (JSONL)");
  gen_cmd->add_option("--out", gen.out, "Write generations here instead of stdout");
  gen_cmd->add_option("--timeout-ms", gen.timeout_ms, "Per-request timeout for remote models");

  std::string eval_gens, eval_refs, eval_metrics = "em,ic50,ic160,bleu,rouge,lev,jaccard,cosine",
                                    eval_out, eval_csv;
  double eval_pct = 95.0;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score generations against references");
  eval_cmd->add_option("--generations", eval_gens, "JSONL of {id, text}")->required();
  eval_cmd->add_option("--references", eval_refs, "JSONL of {id, text}")->required();
  eval_cmd->add_option("--metrics", eval_metrics, "Comma-separated metric names");
  eval_cmd->add_option("--percentile", eval_pct, "Tail percentile");
  eval_cmd->add_option("--out", eval_out, "Report JSON (stdout if omitted)");
  eval_cmd->add_option("--csv", eval_csv, "Also write a CSV report");

  std::string exp_config, exp_out;
  int exp_workers = 0;
  auto* exp_cmd = app.add_subcommand("experiment", "Run a full comparison experiment");
  exp_cmd->add_option("--config", exp_config, "Experiment config JSON")->required();
  exp_cmd->add_option("--out-dir", exp_out, "Report directory")->required();
  exp_cmd->add_option("--workers", exp_workers, "Worker threads (overrides config)");

  std::string atk_config, atk_lengths = "0,64,128,256,512", atk_out;
  int atk_workers = 0;
  auto* atk_cmd = app.add_subcommand("attack", "Prefix-prompting extraction attack");
  atk_cmd->add_option("--config", atk_config, "Experiment config JSON")->required();
  atk_cmd->add_option("--prefix-lengths", atk_lengths, "Comma-separated prefix lengths in tokens");
  atk_cmd->add_option("--out", atk_out, "Report JSON (stdout if omitted)");
  atk_cmd->add_option("--workers", atk_workers, "Worker threads (overrides config)");

  std::string bl_corpus, bl_model, bl_out;
  int bl_n = 10;
  std::uint64_t bl_bits = std::uint64_t{1} << 24, bl_seed = 0;
  std::uint32_t bl_hashes = 7;
  auto* bl_cmd = app.add_subcommand("blocklist", "Build a Bloom-filter n-gram blocklist");
  bl_cmd->add_option("--corpus", bl_corpus, "Corpus JSONL")->required();
  bl_cmd->add_option("--model", bl_model, "Take the vocabulary from this model (default: bytes)");
  bl_cmd->add_option("--n", bl_n, "n-gram length");
  bl_cmd->add_option("--bits", bl_bits, "Filter size in bits");
  bl_cmd->add_option("--hashes", bl_hashes, "Number of hash functions");
  bl_cmd->add_option("--seed", bl_seed, "Hash seed");
  bl_cmd->add_option("--out", bl_out, "Output file")->required();

  std::string serve_model;
  auto* serve_cmd = app.add_subcommand("serve", "Serve a model over the JSON-lines protocol on stdin/stdout");
  serve_cmd->add_option("--model", serve_model, "Model JSON")->required();

  SyntheticCorpusSpec synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic pseudo-text corpus");
  synth_cmd->add_option("--docs", synth.num_docs, "Number of documents");
  synth_cmd->add_option("--min-bytes", synth.min_bytes, "Minimum document length");
  synth_cmd->add_option("--max-bytes", synth.max_bytes, "Maximum document length");
  synth_cmd->add_option("--lexicon", synth.lexicon_size, "Lexicon size");
  synth_cmd->add_option("--zipf", synth.zipf_exponent, "Zipf exponent of word frequencies");
  synth_cmd->add_option("--syllables", synth.max_syllables, "Maximum syllables per word");
  synth_cmd->add_option("--max-word-len", synth.max_word_len, "Maximum word length in bytes");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--out", synth_out, "Output JSONL")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*split_cmd) return cmd_split(split_corpus_path, split_opts, split_out);
    if (*gen_cmd) return cmd_generate(gen);
    if (*eval_cmd) return cmd_evaluate(eval_gens, eval_refs, eval_metrics, eval_pct, eval_out, eval_csv);
    if (*exp_cmd) return cmd_experiment(exp_config, exp_out, exp_workers);
    if (*atk_cmd) return cmd_attack(atk_config, atk_lengths, atk_out, atk_workers);
    if (*bl_cmd) return cmd_blocklist(bl_corpus, bl_model, bl_n, bl_bits, bl_hashes, bl_seed, bl_out);
    if (*serve_cmd) return cmd_serve(serve_model);
    if (*synth_cmd) return cmd_synth(synth, synth_out);
  } catch (const cpfuse::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}
