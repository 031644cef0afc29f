// Scripted model process for exercising the remote protocol.
//   stub_backend <mode> [vocab_size]
// Modes: uniform, badnorm, malformed, slow, wrongid, short, nan, silent.
#include <chrono>
#include <cmath>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "uniform";
  const int V = argc > 2 ? std::stoi(argv[2]) : 4;
  if (mode == "silent") {
    std::this_thread::sleep_for(std::chrono::seconds(30));
    return 0;
  }
  std::cout << nlohmann::json{{"hello", {{"vocab_size", V}, {"eos_id", V - 1}}}}.dump() << std::endl;
  std::string line;
  while (std::getline(std::cin, line)) {
    const auto req = nlohmann::json::parse(line);
    const std::uint64_t id = req["id"].get<std::uint64_t>();
    std::vector<double> lp(static_cast<std::size_t>(V), -std::log(static_cast<double>(V)));
    if (mode == "badnorm") {
      // every probability scaled by 1.1
      for (auto& x : lp) x += std::log(1.1);
    } else if (mode == "malformed") {
      std::cout << "{\"id\": " << id << ", \"logprobs\": [" << std::endl;
      continue;
    } else if (mode == "slow") {
      std::this_thread::sleep_for(std::chrono::seconds(5));
    } else if (mode == "wrongid") {
      std::cout << nlohmann::json{{"id", id + 100}, {"logprobs", lp}}.dump() << std::endl;
      continue;
    } else if (mode == "short") {
      lp.pop_back();
    } else if (mode == "nan") {
      std::cout << "{\"id\":" << id << ",\"logprobs\":[" << "NaN" << "]}" << std::endl;
      continue;
    }
    std::cout << nlohmann::json{{"id", id}, {"logprobs", lp}}.dump() << std::endl;
  }
  return 0;
}
