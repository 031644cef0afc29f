#include "cpfuse/ngram_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <zlib.h>

#include "cpfuse/error.hpp"

namespace cpfuse {

namespace {

constexpr const char* kFormatName = "cpfuse-ngram";
constexpr int kFormatVersion = 1;

bool span_less(std::span<const TokenId> a, std::span<const TokenId> b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

bool span_equal(std::span<const TokenId> a, std::span<const TokenId> b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

std::string format_real(double x) {
  // nlohmann prints the shortest representation that round-trips.
  return nlohmann::json(x).dump();
}

}  // namespace

TrainingConfig TrainingConfig::defaults_for(TokenizerKind kind) {
  TrainingConfig cfg;
  cfg.tokenizer = kind;
  cfg.order = kind == TokenizerKind::kByte ? 12 : 5;
  return cfg;
}

void TrainingConfig::validate() const {
  if (order < 1) throw ContractError("n-gram order must be >= 1");
  if (!(backoff_discount > 0.0 && backoff_discount <= 1.0)) {
    throw ContractError("backoff discount must lie in (0, 1]");
  }
  if (!(epsilon_uniform > 0.0 && epsilon_uniform < 1.0)) {
    throw ContractError("epsilon_uniform must lie in (0, 1)");
  }
}

NGramModel::NGramModel(Vocab vocab, const TrainingConfig& cfg)
    : vocab_(std::move(vocab)),
      order_(cfg.order),
      lambda_(cfg.backoff_discount),
      epsilon_(cfg.epsilon_uniform),
      levels_(static_cast<std::size_t>(std::max(cfg.order, 1))) {
  cfg.validate();
}

void NGramModel::validate_ids(std::span<const TokenId> ids) const {
  for (TokenId t : ids) {
    if (!vocab_.valid(t)) throw ContractError("token id " + std::to_string(t) + " out of range");
  }
}

std::span<const NGramModel::Record> NGramModel::find(int ctx_len,
                                                     std::span<const TokenId> ctx) const {
  const auto& level = levels_[static_cast<std::size_t>(ctx_len)];
  auto lo = std::lower_bound(level.begin(), level.end(), ctx, [&](const Record& r, auto c) {
    return span_less(context_of(r, ctx_len), c);
  });
  auto hi = lo;
  while (hi != level.end() && span_equal(context_of(*hi, ctx_len), ctx)) ++hi;
  return {lo, hi};
}

std::vector<std::pair<TokenId, std::uint32_t>> NGramModel::counts(
    std::span<const TokenId> context) const {
  if (context.size() >= static_cast<std::size_t>(order_)) {
    throw ContractError("context longer than order-1");
  }
  validate_ids(context);
  std::vector<std::pair<TokenId, std::uint32_t>> out;
  for (const auto& r : find(static_cast<int>(context.size()), context)) {
    out.emplace_back(r.next, r.count);
  }
  return out;
}

std::size_t NGramModel::num_records(int ctx_len) const {
  if (ctx_len < 0 || ctx_len >= order_) return 0;
  return levels_[static_cast<std::size_t>(ctx_len)].size();
}

LogProbDist NGramModel::next_token_dist(std::span<const TokenId> context) const {
  validate_ids(context);
  const auto V = static_cast<std::size_t>(vocab_.size());
  std::vector<double> score(V, 0.0);
  double mass = 0.0;

  auto absorb = [&](std::span<const Record> recs, double factor) {
    std::uint64_t total = 0;
    for (const auto& r : recs) total += r.count;
    for (const auto& r : recs) {
      auto& s = score[static_cast<std::size_t>(r.next)];
      if (s == 0.0) {
        s = factor * static_cast<double>(r.count) / static_cast<double>(total);
        mass += s;
      }
    }
  };

  const int longest = static_cast<int>(std::min<std::size_t>(context.size(), order_ - 1));
  if (longest == 0) {
    absorb(levels_[0], 1.0);
  } else {
    double factor = 1.0;
    bool matched = false;
    for (int k = longest; k >= 1; --k) {
      auto recs = find(k, context.last(static_cast<std::size_t>(k)));
      if (!recs.empty()) {
        absorb(recs, factor);
        matched = true;
      }
      if (matched) factor *= lambda_;
    }
  }

  std::vector<double> logp(V);
  const double floor = epsilon_ / static_cast<double>(V);
  if (mass == 0.0) {
    std::fill(logp.begin(), logp.end(), -std::log(static_cast<double>(V)));
  } else {
    for (std::size_t v = 0; v < V; ++v) {
      logp[v] = std::log((1.0 - epsilon_) * (score[v] / mass) + floor);
    }
  }
  return LogProbDist(std::move(logp));
}

double NGramModel::sequence_logprob(std::span<const TokenId> prompt,
                                    std::span<const TokenId> continuation) const {
  if (continuation.empty()) throw ContractError("sequence_logprob needs a non-empty continuation");
  validate_ids(continuation);
  TokenSeq ctx(prompt.begin(), prompt.end());
  ctx.reserve(prompt.size() + continuation.size());
  double total = 0.0;
  for (TokenId t : continuation) {
    total += next_token_dist(ctx)[static_cast<std::size_t>(t)];
    ctx.push_back(t);
  }
  return total;
}

NGramModel train(std::span<const std::string> corpus, const TrainingConfig& cfg,
                 const Vocab& vocab) {
  cfg.validate();
  if (corpus.empty()) throw ContractError("cannot train on an empty corpus");
  if (cfg.tokenizer != vocab.kind()) {
    throw ContractError("training tokenizer kind does not match the vocabulary");
  }
  NGramModel model(vocab, cfg);

  // Concatenated stream plus, per position, the offset inside its document.
  std::vector<TokenId>& stream = model.arena_;
  std::vector<std::uint32_t> in_doc;
  for (const auto& doc : corpus) {
    TokenSeq ids = vocab.encode(doc);
    if (cfg.append_eos) ids.push_back(vocab.eos_id());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      stream.push_back(ids[i]);
      in_doc.push_back(static_cast<std::uint32_t>(i));
    }
  }
  if (stream.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw ContractError("training corpus too large");
  }

  std::vector<std::uint32_t> positions;
  positions.reserve(stream.size());
  for (int k = 0; k < cfg.order; ++k) {
    positions.clear();
    for (std::uint32_t p = 0; p < stream.size(); ++p) {
      if (in_doc[p] >= static_cast<std::uint32_t>(k)) positions.push_back(p);
    }
    auto ctx = [&](std::uint32_t p) {
      return std::span<const TokenId>(stream.data() + p - k, static_cast<std::size_t>(k));
    };
    std::sort(positions.begin(), positions.end(), [&](std::uint32_t a, std::uint32_t b) {
      auto ca = ctx(a), cb = ctx(b);
      int c = 0;
      for (int i = 0; i < k && c == 0; ++i) c = (ca[i] > cb[i]) - (ca[i] < cb[i]);
      if (c != 0) return c < 0;
      if (stream[a] != stream[b]) return stream[a] < stream[b];
      return a < b;
    });
    auto& level = model.levels_[static_cast<std::size_t>(k)];
    for (std::uint32_t p : positions) {
      if (!level.empty()) {
        auto& last = level.back();
        if (last.next == stream[p] && span_equal(model.context_of(last, k), ctx(p))) {
          ++last.count;
          continue;
        }
      }
      level.push_back({p - static_cast<std::uint32_t>(k), stream[p], 1});
    }
    level.shrink_to_fit();
  }
  return model;
}

// ---------------------------------------------------------------------------
// Serialization

std::string NGramModel::canonical_tables() const {
  std::string out = "[";
  for (int k = 0; k < order_; ++k) {
    if (k > 0) out += ',';
    out += "{\"ctx_len\":" + std::to_string(k) + ",\"entries\":[";
    const auto& level = levels_[static_cast<std::size_t>(k)];
    for (std::size_t i = 0; i < level.size(); ++i) {
      const bool new_ctx =
          i == 0 || !span_equal(context_of(level[i - 1], k), context_of(level[i], k));
      if (new_ctx) {
        if (i > 0) out += "],";
        out += "[[";
        auto c = context_of(level[i], k);
        for (std::size_t j = 0; j < c.size(); ++j) {
          if (j > 0) out += ',';
          out += std::to_string(c[j]);
        }
        out += ']';
      }
      out += ",[" + std::to_string(level[i].next) + ',' + std::to_string(level[i].count) + ']';
    }
    if (!level.empty()) out += ']';
    out += "]}";
  }
  out += ']';
  return out;
}

void NGramModel::write(std::ostream& out) const {
  const std::string tables = canonical_tables();
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(tables.data()),
                         static_cast<uInt>(tables.size()));
  out << "{\"format\":\"" << kFormatName << "\",\"version\":" << kFormatVersion
      << ",\"vocab\":" << vocab_.to_json().dump() << ",\"order\":" << order_
      << ",\"lambda\":" << format_real(lambda_)
      << ",\"epsilon_uniform\":" << format_real(epsilon_) << ",\"tables\":" << tables
      << ",\"checksum\":" << crc << "}\n";
}

void NGramModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write(out);
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

NGramModel NGramModel::read(std::istream& in) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kFormatName) {
      throw FormatError("not a cpfuse-ngram model file");
    }
    if (j.at("version").get<int>() != kFormatVersion) {
      throw FormatError("unsupported model format version " + j.at("version").dump());
    }
    TrainingConfig cfg;
    Vocab vocab = Vocab::from_json(j.at("vocab"));
    cfg.tokenizer = vocab.kind();
    cfg.order = j.at("order").get<int>();
    cfg.backoff_discount = j.at("lambda").get<double>();
    cfg.epsilon_uniform = j.at("epsilon_uniform").get<double>();
    NGramModel model(std::move(vocab), cfg);

    const auto& tables = j.at("tables");
    if (!tables.is_array() || tables.size() != static_cast<std::size_t>(cfg.order)) {
      throw FormatError("model file must hold one table per context length");
    }
    for (int k = 0; k < cfg.order; ++k) {
      const auto& table = tables[static_cast<std::size_t>(k)];
      if (table.at("ctx_len").get<int>() != k) throw FormatError("tables out of order");
      auto& level = model.levels_[static_cast<std::size_t>(k)];
      for (const auto& entry : table.at("entries")) {
        if (!entry.is_array() || entry.size() < 2) throw FormatError("malformed table entry");
        const auto ctx = entry[0].get<TokenSeq>();
        if (ctx.size() != static_cast<std::size_t>(k)) throw FormatError("context length mismatch");
        model.validate_ids(ctx);
        const auto offset = static_cast<std::uint32_t>(model.arena_.size());
        if (!level.empty() && !span_less(model.context_of(level.back(), k), ctx)) {
          throw FormatError("table entries are not in canonical order");
        }
        model.arena_.insert(model.arena_.end(), ctx.begin(), ctx.end());
        TokenId prev = -1;
        for (std::size_t i = 1; i < entry.size(); ++i) {
          const auto pair = entry[i].get<std::vector<std::int64_t>>();
          if (pair.size() != 2 || pair[1] < 1) throw FormatError("malformed count pair");
          const auto tok = static_cast<TokenId>(pair[0]);
          if (!model.vocab_.valid(tok) || tok <= prev) {
            throw FormatError("count pairs out of range or order");
          }
          prev = tok;
          level.push_back({offset, tok, static_cast<std::uint32_t>(pair[1])});
        }
      }
    }
    const std::string canon = model.canonical_tables();
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(canon.data()),
                           static_cast<uInt>(canon.size()));
    if (j.at("checksum").get<std::uint64_t>() != crc) {
      throw FormatError("model checksum mismatch");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model file: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("malformed model file: ") + e.what());
  }
}

NGramModel NGramModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read(in);
}

}  // namespace cpfuse
