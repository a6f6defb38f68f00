#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dialectid/corpus.hpp"

// Subword-aware skip-gram embeddings with negative sampling.
//
// A token is represented by its word row (when in the vocabulary) plus the
// rows of the hashed character n-grams of `<token>`. Rows live in one logical
// (vocab + buckets) x dim input matrix. Bucket rows are stored sparsely: a row
// that training never touched still has its deterministic initial value, which
// is recomputed on demand from (seed, row key).
namespace dialectid::embeddings {

struct EmbeddingConfig {
  std::size_t dim = 100;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t min_n = 3;
  std::size_t max_n = 6;
  std::size_t bucket_count = std::size_t{1} << 20;
  std::size_t epochs = 5;
  std::size_t min_count = 2;
  double learning_rate = 0.01;
  double heldout_fraction = 0.01;
  std::uint64_t seed = 20250101;

  /// Throws ConfigError on an invalid combination.
  void validate() const;
  nlohmann::json to_json() const;
  static EmbeddingConfig from_json(const nlohmann::json& j);
};

/// Row key: word rows are 0..V-1, bucket rows are V + bucket.
using RowKey = std::uint64_t;

/// FNV-1a (32-bit) of the UTF-8 bytes.
std::uint32_t subword_hash(std::string_view s);

/// Character n-grams of `<token>` with min_n <= n <= max_n, in order.
std::vector<std::string> subwords(std::string_view token, std::size_t min_n, std::size_t max_n);

class EmbeddingModel {
 public:
  EmbeddingModel() = default;
  /// Fresh model with initialized word rows and zero output vectors.
  EmbeddingModel(EmbeddingConfig config, std::vector<std::pair<std::string, std::uint64_t>> vocabulary);

  const EmbeddingConfig& config() const { return config_; }
  std::size_t dim() const { return config_.dim; }
  std::size_t vocab_size() const { return words_.size(); }
  const std::string& word(std::size_t i) const { return words_[i]; }
  std::uint64_t frequency(std::size_t i) const { return frequencies_[i]; }
  std::optional<std::size_t> word_index(std::string_view token) const;

  /// Rows summed to represent the token: word row first (if in vocabulary),
  /// then one bucket row per subword occurrence.
  std::vector<RowKey> token_keys(std::string_view token) const;
  std::vector<RowKey> subword_keys(std::string_view token) const;

  /// Current value of an input row (materialized or initial).
  std::vector<double> input_row(RowKey key) const;
  void add_input_row(RowKey key, std::span<double> out) const;
  /// Deterministic initial value of any input row.
  void initial_row(RowKey key, std::span<double> out) const;

  std::span<double> mutable_input_row(RowKey key);  // materializes
  std::span<const double> output_row(std::size_t word) const;
  std::span<double> mutable_output_row(std::size_t word);

  /// Keys of rows held explicitly, ascending.
  std::vector<RowKey> materialized_keys() const;

  /// Mean loss on the held-out sample: entry 0 before training, then one per epoch.
  std::vector<double> heldout_loss;

  void save(const std::filesystem::path& path) const;
  static EmbeddingModel load(const std::filesystem::path& path);

  bool operator==(const EmbeddingModel& other) const;

 private:
  EmbeddingConfig config_;
  std::vector<std::string> words_;
  std::vector<std::uint64_t> frequencies_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_map<RowKey, std::size_t> slots_;
  std::vector<double> arena_;   // materialized input rows
  std::vector<double> output_;  // vocab x dim
};

/// Counts case-folded tokens, keeps those with count >= min_count, ordered by
/// descending count then token.
std::vector<std::pair<std::string, std::uint64_t>> build_vocabulary(
    std::span<const std::vector<std::string>> sentences, std::size_t min_count);

/// Trains on the case-folded tokens of the sentences. Single-threaded and
/// bit-reproducible for a given seed. Throws ConfigError on an empty vocabulary.
EmbeddingModel train_embeddings(std::span<const LabeledSentence> sentences, const EmbeddingConfig& config);

/// Negative-sampling loss for one center vector against targets, where
/// targets[0] is the positive context and the rest are negatives:
///   -log s(u_0.h) - sum_k log s(-u_k.h).
struct SgnsGradient {
  double loss = 0.0;
  std::vector<double> d_center;
  std::vector<std::vector<double>> d_targets;
};
SgnsGradient sgns_loss_and_grad(std::span<const double> center,
                                const std::vector<std::vector<double>>& targets);

/// Word row plus subword rows; OOV tokens get the subword sum only.
std::vector<double> embed_token(const EmbeddingModel& model, std::string_view token);

struct SentenceMatrix {
  std::size_t max_len = 0;
  std::size_t dim = 0;
  std::vector<double> rows;  // max_len x dim, row-major
  std::vector<bool> mask;    // true for filled rows
  VarietyLabel label;

  std::size_t valid_rows() const;
  std::span<const double> row(std::size_t i) const { return {rows.data() + i * dim, dim}; }
};

/// Fills the first min(|tokens|, max_len) rows from the case-folded tokens.
SentenceMatrix embed_sentence(const EmbeddingModel& model, const LabeledSentence& sentence,
                              std::size_t max_len = 60);

/// Mean over valid rows. Throws ConfigError when every row is masked.
std::vector<double> mean_sentence_vector(const SentenceMatrix& matrix);

double cosine(std::span<const double> a, std::span<const double> b);

/// Vocabulary words closest to the token by cosine similarity.
std::vector<std::pair<std::string, double>> nearest_neighbors(const EmbeddingModel& model,
                                                              std::string_view token, std::size_t k);

}  // namespace dialectid::embeddings
