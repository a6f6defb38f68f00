#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "dialectid/corpus.hpp"
#include "dialectid/random.hpp"

namespace testing_support {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("dialectid-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ignored;
    fs::remove_all(path_, ignored);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline dialectid::LabeledSentence sentence(std::vector<std::string> tokens, const std::string& label,
                                           const std::string& doc = "d") {
  return {std::move(tokens), dialectid::VarietyLabel(label), doc};
}

/// Random lowercase word over the first `alphabet` letters starting at `first`.
inline std::string random_word(dialectid::Rng& rng, char first, int alphabet, std::size_t min_len,
                               std::size_t max_len) {
  std::string w;
  const auto len = rng.between(min_len, max_len);
  for (std::size_t i = 0; i < len; ++i) w += static_cast<char>(first + static_cast<int>(rng.below(alphabet)));
  return w;
}

/// Two or more classes whose tokens use disjoint letter ranges; trivially
/// separable by any reasonable model.
inline std::vector<dialectid::LabeledSentence> separable_dataset(std::size_t classes, std::size_t per_class,
                                                                 std::uint64_t seed, std::size_t min_tokens = 5,
                                                                 std::size_t max_tokens = 8) {
  static const std::vector<std::string> codes{"AA", "BB", "CC", "DD", "EE", "FF"};
  dialectid::Rng rng(seed);
  std::vector<dialectid::LabeledSentence> out;
  for (std::size_t c = 0; c < classes; ++c) {
    // A small per-class vocabulary so words repeat.
    std::vector<std::string> vocab;
    for (int i = 0; i < 30; ++i) vocab.push_back(random_word(rng, static_cast<char>('a' + 4 * c), 4, 3, 7));
    for (std::size_t s = 0; s < per_class; ++s) {
      std::vector<std::string> tokens;
      const auto n = rng.between(min_tokens, max_tokens);
      for (std::size_t t = 0; t < n; ++t) tokens.push_back(vocab[rng.below(vocab.size())]);
      out.push_back({tokens, dialectid::VarietyLabel(codes[c]), codes[c] + "-" + std::to_string(s / 10)});
    }
  }
  return out;
}

}  // namespace testing_support
