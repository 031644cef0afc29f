#pragma once

#include <memory>
#include <span>
#include <string>

#include "cpfuse/log_prob_dist.hpp"
#include "cpfuse/ngram_model.hpp"
#include "cpfuse/vocab.hpp"

namespace cpfuse {

/// A next-token distribution provider. Implementations must return full
/// support distributions over `vocab_size()` ids.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  virtual std::int32_t vocab_size() const = 0;
  virtual TokenId eos_id() const = 0;
  virtual LogProbDist next_token_dist(std::span<const TokenId> context) = 0;
  virtual std::string describe() const = 0;
};

/// Serves an in-process n-gram model. Backends over the same model may be
/// used from different threads.
class NGramBackend final : public ModelBackend {
 public:
  explicit NGramBackend(std::shared_ptr<const NGramModel> model) : model_(std::move(model)) {}

  std::int32_t vocab_size() const override { return model_->vocab().size(); }
  TokenId eos_id() const override { return model_->vocab().eos_id(); }
  LogProbDist next_token_dist(std::span<const TokenId> context) override {
    return model_->next_token_dist(context);
  }
  std::string describe() const override {
    return "ngram(order=" + std::to_string(model_->order()) + ")";
  }
  const NGramModel& model() const { return *model_; }

 private:
  std::shared_ptr<const NGramModel> model_;
};

}  // namespace cpfuse
