#pragma once

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cpfuse/model_backend.hpp"

namespace cpfuse {

struct RemoteSpawnSpec {
  /// argv[0] is resolved through PATH.
  std::vector<std::string> argv;
  /// Applies to the handshake and to each request separately.
  std::chrono::milliseconds timeout{10000};
};

/// A model running in a child process, spoken to with JSON lines over its
/// stdin/stdout.
///
///   child -> {"hello":{"vocab_size":V,"eos_id":e}}
///   parent -> {"id":u64,"ctx":[ids]}
///   child -> {"id":u64,"logprobs":[V reals]}
///
/// Responses must carry finite values whose log-sum-exp is within 1e-6 of
/// zero. A response for an id that was abandoned after a timeout is skipped;
/// any other id mismatch is a protocol error. Once a request fails the
/// backend refuses further use.
class RemoteBackend final : public ModelBackend {
 public:
  explicit RemoteBackend(RemoteSpawnSpec spec);
  ~RemoteBackend() override;
  RemoteBackend(const RemoteBackend&) = delete;
  RemoteBackend& operator=(const RemoteBackend&) = delete;

  std::int32_t vocab_size() const override { return vocab_size_; }
  TokenId eos_id() const override { return eos_id_; }
  LogProbDist next_token_dist(std::span<const TokenId> context) override;
  std::string describe() const override;

 private:
  void handshake();
  void terminate_child() noexcept;
  std::string read_line(std::chrono::steady_clock::time_point deadline);
  void send_line(const std::string& line);

  RemoteSpawnSpec spec_;
  int pid_ = -1;
  int fd_ = -1;
  std::string buffer_;
  std::uint64_t next_id_ = 1;
  std::int32_t vocab_size_ = 0;
  TokenId eos_id_ = 0;
  bool broken_ = false;
};

/// Tolerance on |log-sum-exp| accepted from remote responses.
inline constexpr double kRemoteNormTolerance = 1e-6;

/// Serves `model` with the protocol above until `in` reaches EOF.
void serve_backend(ModelBackend& model, std::istream& in, std::ostream& out);

/// Throws ContractError unless every backend reports the same vocabulary
/// size and EOS id.
void check_compatible(std::span<ModelBackend* const> models);

}  // namespace cpfuse
