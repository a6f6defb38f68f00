#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "dialectid/autodiff.hpp"
#include "dialectid/corpus.hpp"
#include "dialectid/embeddings.hpp"

// Sentence classifiers over subword embeddings: CNN (parallel convolutions
// with max-over-time pooling), LSTM, and C-LSTM (convolutions feeding an LSTM).
namespace dialectid::nn {

enum class Architecture { CNN, LSTM, CLSTM };

std::string to_string(Architecture arch);
Architecture parse_architecture(const std::string& name);

struct TrainingConfig {
  double dropout = 0.5;
  std::size_t epochs = 25;
  double learning_rate = 0.001;
  std::size_t patience = 3;
  std::size_t batch_size = 64;
  double heldout_fraction = 0.1;
  std::size_t max_len = 60;        // tokens kept per sentence
  std::size_t min_timesteps = 5;   // zero-padding floor
  std::uint64_t seed = 20250101;
};

struct CnnConfig {
  std::vector<std::size_t> filter_sizes{3, 4, 5};
  std::size_t filters_per_size = 100;
  TrainingConfig training;
};

struct LstmConfig {
  std::size_t hidden_size = 100;
  TrainingConfig training;
};

struct CLstmConfig {
  std::vector<std::size_t> kernel_sizes{2, 3, 4};
  std::size_t filters = 150;
  std::size_t hidden_size = 100;
  TrainingConfig training;
};

using NetworkConfig = std::variant<CnnConfig, LstmConfig, CLstmConfig>;

Architecture architecture_of(const NetworkConfig& config);
NetworkConfig default_config(Architecture arch);
const TrainingConfig& training_of(const NetworkConfig& config);
TrainingConfig& training_of(NetworkConfig& config);
/// Throws ConfigError on invalid values.
void validate(const NetworkConfig& config);
nlohmann::json to_json(const NetworkConfig& config);
NetworkConfig network_config_from_json(const nlohmann::json& j);

/// A sentence as rows of the classifier's embedding table: step t is the sum
/// of table rows `rows[t]` plus `offsets` row t (the frozen contribution of
/// subword rows the table does not hold).
struct EncodedSentence {
  std::vector<std::vector<std::size_t>> rows;
  Tensor offsets;
  std::size_t tokens = 0;  // steps before zero padding
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double heldout_loss = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;

  void write_csv(std::ostream& out) const;
};

struct Prediction {
  VarietyLabel label;
  std::vector<double> probabilities;  // parallel to labels()
};

class NeuralClassifier {
 public:
  NeuralClassifier() = default;
  /// Randomly initialized network whose embedding table copies every row
  /// the given sentences use.
  NeuralClassifier(NetworkConfig config, std::vector<VarietyLabel> labels,
                   std::shared_ptr<const embeddings::EmbeddingModel> embeddings,
                   std::span<const std::vector<std::string>> table_tokens);

  Architecture architecture() const { return architecture_of(config_); }
  const NetworkConfig& config() const { return config_; }
  const std::vector<VarietyLabel>& labels() const { return labels_; }
  const embeddings::EmbeddingModel& embeddings() const { return *embeddings_; }
  std::size_t embedding_dim() const { return embeddings_->dim(); }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(const std::string& name);

  /// Case-folds, truncates to max_len and maps tokens to table rows.
  EncodedSentence encode(const std::vector<std::string>& tokens) const;

  /// Logits (1 x k) for a sentence given as a (steps x dim) matrix node.
  Var forward_matrix(Graph& g, Var input, std::size_t steps, Mode mode, Rng& rng);
  Var forward(Graph& g, const EncodedSentence& sentence, Mode mode, Rng& rng);

  Prediction predict(const std::vector<std::string>& tokens) const;
  /// Uses the matrix rows directly, bypassing the embedding table.
  /// Throws DimensionMismatch when the width differs from the embedding dim.
  Prediction predict_matrix(const embeddings::SentenceMatrix& matrix) const;

  void save(const std::filesystem::path& path, const std::string& config_hash = "") const;
  static NeuralClassifier load(const std::filesystem::path& path,
                               std::shared_ptr<const embeddings::EmbeddingModel> embeddings);

 private:
  Prediction predict_logits(Graph& g, Var logits) const;
  void init_parameters(std::size_t table_rows);

  NetworkConfig config_;
  std::vector<VarietyLabel> labels_;
  std::shared_ptr<const embeddings::EmbeddingModel> embeddings_;
  std::vector<embeddings::RowKey> table_keys_;
  std::unordered_map<embeddings::RowKey, std::size_t> table_index_;
  std::vector<Parameter> params_;
};

/// Mini-batch Adam with early stopping on a held-out slice of the training
/// data; returns the parameters of the best held-out epoch. Throws
/// ConfigError for fewer than two classes.
NeuralClassifier train_classifier(const NetworkConfig& config, std::span<const LabeledSentence> sentences,
                                  std::shared_ptr<const embeddings::EmbeddingModel> embeddings,
                                  TrainingLog* log = nullptr);

/// Mean loss of one sentence; used by training and by gradient checks.
Var sentence_loss(NeuralClassifier& model, Graph& g, const EncodedSentence& sentence, std::size_t target, Mode mode,
                  Rng& rng);

}  // namespace dialectid::nn
