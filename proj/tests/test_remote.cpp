#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "cpfuse/decoding.hpp"
#include "cpfuse/error.hpp"
#include "cpfuse/remote_backend.hpp"

using namespace cpfuse;
using namespace std::chrono_literals;

namespace {

RemoteSpawnSpec stub(const std::string& mode, std::chrono::milliseconds timeout = 5000ms) {
  return RemoteSpawnSpec{{CPFUSE_STUB_BACKEND, mode, "4"}, timeout};
}

}  // namespace

TEST_CASE("remote handshake and a well-formed response") {
  RemoteBackend r(stub("uniform"));
  CHECK(r.vocab_size() == 4);
  CHECK(r.eos_id() == 3);
  const auto d = r.next_token_dist(TokenSeq{0, 1});
  REQUIRE(d.size() == 4);
  for (double x : d.logp) CHECK(x == doctest::Approx(-std::log(4.0)));
  // consecutive requests keep working
  CHECK(r.next_token_dist(TokenSeq{}).size() == 4);
}

TEST_CASE("remote responses that are not normalized are rejected") {
  RemoteBackend r(stub("badnorm"));
  CHECK_THROWS_AS(r.next_token_dist(TokenSeq{0}), ContractError);
  // the backend refuses further use after a failure
  CHECK_THROWS_AS(r.next_token_dist(TokenSeq{0}), Error);
}

TEST_CASE("malformed remote responses are format errors") {
  RemoteBackend r(stub("malformed"));
  CHECK_THROWS_AS(r.next_token_dist(TokenSeq{0}), FormatError);
  RemoteBackend s(stub("short"));
  CHECK_THROWS_AS(s.next_token_dist(TokenSeq{0}), FormatError);
  RemoteBackend w(stub("wrongid"));
  CHECK_THROWS_AS(w.next_token_dist(TokenSeq{0}), FormatError);
  RemoteBackend n(stub("nan"));
  CHECK_THROWS_AS(n.next_token_dist(TokenSeq{0}), Error);
}

TEST_CASE("remote timeouts") {
  RemoteBackend r(stub("slow", 300ms));
  const auto t0 = std::chrono::steady_clock::now();
  CHECK_THROWS_AS(r.next_token_dist(TokenSeq{0}), TimeoutError);
  CHECK(std::chrono::steady_clock::now() - t0 < 3s);
  CHECK_THROWS_AS(RemoteBackend(stub("silent", 300ms)), TimeoutError);
}

TEST_CASE("spawning a missing program fails cleanly") {
  CHECK_THROWS_AS(RemoteBackend(RemoteSpawnSpec{{"/nonexistent/model-server"}, 2000ms}), Error);
}

TEST_CASE("in-process serving loop") {
  TrainingConfig c;
  c.order = 3;
  NGramBackend m(std::make_shared<const NGramModel>(train(std::vector<std::string>{"abcab"}, c, Vocab::bytes())));
  std::istringstream in("{\"id\":5,\"ctx\":[97,98]}\n");
  std::ostringstream out;
  serve_backend(m, in, out);
  std::istringstream lines(out.str());
  std::string hello, resp;
  std::getline(lines, hello);
  std::getline(lines, resp);
  CHECK(nlohmann::json::parse(hello)["hello"]["vocab_size"] == 257);
  const auto j = nlohmann::json::parse(resp);
  CHECK(j["id"] == 5);
  CHECK(j["logprobs"].get<std::vector<double>>() == m.next_token_dist(TokenSeq{97, 98}).logp);
}

TEST_CASE("a served model decodes exactly like the in-process one") {
  TrainingConfig c;
  c.order = 5;
  auto model = std::make_shared<const NGramModel>(
      train(std::vector<std::string>{"the cat sat on the mat", "a cat and a hat"}, c, Vocab::bytes()));
  auto other = std::make_shared<const NGramModel>(
      train(std::vector<std::string>{"the dog sat on a log", "a dog and a frog"}, c, Vocab::bytes()));
  const auto path = std::filesystem::temp_directory_path() / "cpfuse_test_served.json";
  model->save(path);

  RemoteBackend remote(RemoteSpawnSpec{{CPFUSE_CLI, "serve", "--model", path.string()}, 10000ms});
  NGramBackend local(model), second(other);
  ModelBackend* via_remote[] = {&remote, &second};
  ModelBackend* via_local[] = {&local, &second};
  check_compatible(via_remote);

  DecodeConfig cfg;
  cfg.policy = Policy::kCpFuse;
  cfg.max_tokens = 25;
  const auto prompt = Vocab::bytes().encode("the ");
  const auto a = generate(via_remote, prompt, cfg);
  const auto b = generate(via_local, prompt, cfg);
  CHECK(a.emitted == b.emitted);
  CHECK(a.token_logprobs == b.token_logprobs);
  std::filesystem::remove(path);
}

TEST_CASE("incompatible backends") {
  RemoteBackend r(stub("uniform"));
  NGramBackend m(std::make_shared<const NGramModel>(Vocab::bytes(), TrainingConfig{}));
  ModelBackend* both[] = {&r, &m};
  CHECK_THROWS_AS(check_compatible(both), ContractError);
}
