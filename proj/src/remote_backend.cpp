#include "cpfuse/remote_backend.hpp"

#include <cerrno>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <thread>

#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "cpfuse/error.hpp"

namespace cpfuse {

namespace {

std::string errno_text() { return std::strerror(errno); }

}  // namespace

RemoteBackend::RemoteBackend(RemoteSpawnSpec spec) : spec_(std::move(spec)) {
  if (spec_.argv.empty()) throw ContractError("remote backend needs a command");
  if (spec_.timeout.count() <= 0) throw ContractError("remote timeout must be positive");

  // A socket pair instead of two pipes: writes can use MSG_NOSIGNAL, so a
  // dead child surfaces as an error rather than SIGPIPE.
  int fds[2];
  if (socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) {
    throw IoError("socketpair: " + errno_text());
  }
  std::vector<char*> argv;
  for (auto& a : spec_.argv) argv.push_back(a.data());
  argv.push_back(nullptr);

  const pid_t pid = fork();
  if (pid < 0) {
    close(fds[0]);
    close(fds[1]);
    throw IoError("fork: " + errno_text());
  }
  if (pid == 0) {
    dup2(fds[1], STDIN_FILENO);
    dup2(fds[1], STDOUT_FILENO);
    execvp(argv[0], argv.data());
    _exit(127);
  }
  close(fds[1]);
  pid_ = pid;
  fd_ = fds[0];

  try {
    handshake();
  } catch (...) {
    // the destructor does not run for a failed constructor
    terminate_child();
    throw;
  }
}

void RemoteBackend::handshake() {
  const auto deadline = std::chrono::steady_clock::now() + spec_.timeout;
  const std::string line = read_line(deadline);
  try {
    const auto j = nlohmann::json::parse(line);
    const auto& hello = j.at("hello");
    vocab_size_ = hello.at("vocab_size").get<std::int32_t>();
    eos_id_ = hello.at("eos_id").get<TokenId>();
  } catch (const nlohmann::json::exception& e) {
    broken_ = true;
    throw FormatError(std::string("malformed handshake from remote backend: ") + e.what());
  }
  if (vocab_size_ < 1 || eos_id_ < 0 || eos_id_ >= vocab_size_) {
    broken_ = true;
    throw FormatError("remote backend announced an invalid vocabulary");
  }
}

RemoteBackend::~RemoteBackend() { terminate_child(); }

void RemoteBackend::terminate_child() noexcept {
  if (fd_ >= 0) {
    shutdown(fd_, SHUT_WR);
    close(fd_);
    fd_ = -1;
  }
  if (pid_ > 0) {
    // Give the child a moment to exit on EOF, then make sure it is gone.
    for (int i = 0; i < 50; ++i) {
      if (waitpid(pid_, nullptr, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    kill(pid_, SIGKILL);
    waitpid(pid_, nullptr, 0);
    pid_ = -1;
  }
}

std::string RemoteBackend::describe() const {
  std::string out = "remote(";
  for (std::size_t i = 0; i < spec_.argv.size(); ++i) {
    if (i) out += ' ';
    out += spec_.argv[i];
  }
  return out + ")";
}

void RemoteBackend::send_line(const std::string& line) {
  std::size_t sent = 0;
  while (sent < line.size()) {
    const ssize_t n = send(fd_, line.data() + sent, line.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      broken_ = true;
      throw IoError("remote backend write failed: " + errno_text());
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::string RemoteBackend::read_line(std::chrono::steady_clock::time_point deadline) {
  while (true) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      broken_ = true;
      throw TimeoutError("remote backend timed out after " + std::to_string(spec_.timeout.count()) +
                         " ms");
    }
    pollfd p{fd_, POLLIN, 0};
    const int r = poll(&p, 1, static_cast<int>(left.count()));
    if (r < 0) {
      if (errno == EINTR) continue;
      broken_ = true;
      throw IoError("poll: " + errno_text());
    }
    if (r == 0) continue;
    char chunk[65536];
    const ssize_t n = read(fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      broken_ = true;
      throw IoError("remote backend read failed: " + errno_text());
    }
    if (n == 0) {
      broken_ = true;
      throw IoError("remote backend closed its output");
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

LogProbDist RemoteBackend::next_token_dist(std::span<const TokenId> context) {
  if (broken_) throw IoError("remote backend is unusable after an earlier failure");
  const std::uint64_t id = next_id_++;
  nlohmann::json req;
  req["id"] = id;
  req["ctx"] = std::vector<TokenId>(context.begin(), context.end());
  send_line(req.dump() + "\n");

  const auto deadline = std::chrono::steady_clock::now() + spec_.timeout;
  while (true) {
    const std::string line = read_line(deadline);
    LogProbDist dist;
    std::uint64_t got = 0;
    try {
      const auto j = nlohmann::json::parse(line);
      got = j.at("id").get<std::uint64_t>();
      if (got < id) continue;  // late answer to an abandoned request
      dist.logp = j.at("logprobs").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      broken_ = true;
      throw FormatError(std::string("malformed response from remote backend: ") + e.what());
    }
    if (got != id) {
      broken_ = true;
      throw FormatError("remote backend answered unknown request id " + std::to_string(got));
    }
    if (dist.size() != static_cast<std::size_t>(vocab_size_)) {
      broken_ = true;
      throw FormatError("remote response has " + std::to_string(dist.size()) +
                        " entries, expected " + std::to_string(vocab_size_));
    }
    if (!dist.all_finite()) {
      broken_ = true;
      throw ContractError("remote response contains non-finite log-probabilities");
    }
    const double mass = log_sum_exp(dist.logp);
    if (!(std::abs(mass) <= kRemoteNormTolerance)) {
      broken_ = true;
      throw ContractError("remote response is not normalized (log-sum-exp " + std::to_string(mass) +
                          ")");
    }
    return dist;
  }
}

void serve_backend(ModelBackend& model, std::istream& in, std::ostream& out) {
  nlohmann::json hello;
  hello["hello"] = {{"vocab_size", model.vocab_size()}, {"eos_id", model.eos_id()}};
  out << hello.dump() << '\n' << std::flush;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::uint64_t id = 0;
    std::vector<TokenId> ctx;
    try {
      const auto j = nlohmann::json::parse(line);
      id = j.at("id").get<std::uint64_t>();
      ctx = j.at("ctx").get<std::vector<TokenId>>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed request: ") + e.what());
    }
    for (TokenId t : ctx) {
      if (t < 0 || t >= model.vocab_size()) throw FormatError("request context id out of range");
    }
    nlohmann::json resp;
    resp["id"] = id;
    resp["logprobs"] = model.next_token_dist(ctx).logp;
    out << resp.dump() << '\n' << std::flush;
  }
}

void check_compatible(std::span<ModelBackend* const> models) {
  for (std::size_t i = 1; i < models.size(); ++i) {
    if (models[i]->vocab_size() != models[0]->vocab_size() ||
        models[i]->eos_id() != models[0]->eos_id()) {
      throw ContractError("vocabulary mismatch between " + models[0]->describe() + " and " +
                          models[i]->describe());
    }
  }
}

}  // namespace cpfuse
