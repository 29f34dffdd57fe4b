#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "looprune/scorer.hpp"

namespace looprune::testing {

// Wraps a scorer and counts calls.
class CountingScorer final : public Scorer {
 public:
  explicit CountingScorer(const Scorer& inner) : inner_(inner) {}
  double score(const ScorerInput& input) const override {
    ++calls_;
    return inner_.score(input);
  }
  std::string name() const override { return "counting"; }
  std::size_t calls() const { return calls_.load(); }
  void reset() { calls_ = 0; }

 private:
  const Scorer& inner_;
  mutable std::atomic<std::size_t> calls_{0};
};

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::path(LOOPRUNE_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace looprune::testing
