#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dialectid/corpus.hpp"

// Synthetic labeled corpora from per-class character Markov chains.
//
// Every class c draws characters from P_c(x | ctx) = (1 - d) S(x | ctx) + d U_c(x | ctx)
// where S is shared by all classes and U_c only emits symbols from class c's
// slice of the alphabet. Each class also owns a lexicon sampled from its chain;
// tokens come from the class lexicon with probability d and from a lexicon
// sampled from S otherwise, with Zipfian word frequencies. d = 0 makes all
// classes identical in distribution; d = 1 gives disjoint alphabets.
namespace dialectid::synthgen {

struct SynthConfig {
  std::size_t classes = 6;
  std::size_t sentences_per_class = 500;
  std::size_t min_tokens = 5;
  std::size_t max_tokens = 10;
  std::size_t min_token_length = 5;
  std::size_t max_token_length = 15;
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
  std::size_t order = 2;
  double divergence = 1.0;
  std::size_t lexicon_size = 1000;
  double zipf_exponent = 1.0;
  std::size_t sentences_per_document = 50;
  std::uint64_t seed = 20250101;

  /// Throws ConfigError (k < 2, divergence outside [0, 1], fewer than three
  /// distinct alphabet symbols, empty ranges, ...).
  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

/// Variety codes for k classes: real variety codes first, then XAA, XAB, ...
std::vector<VarietyLabel> synth_labels(std::size_t k);

struct SynthDocument {
  std::string id;
  VarietyLabel label;
  std::string text;  // one sentence per line
};

struct SynthCorpus {
  SynthConfig config;
  std::vector<VarietyLabel> labels;
  std::vector<SynthDocument> documents;  // grouped by class, in label order
};

SynthCorpus generate(const SynthConfig& config);

/// Writes manifest.tsv, docs/<id>.txt and synth.json into dir.
/// Returns the manifest path.
std::filesystem::path write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir);

}  // namespace dialectid::synthgen
