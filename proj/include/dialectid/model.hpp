#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dialectid/corpus.hpp"
#include "dialectid/embeddings.hpp"
#include "dialectid/neural.hpp"
#include "dialectid/svm.hpp"
#include "dialectid/textcat.hpp"

// One interface over the five classifier families.
namespace dialectid {

enum class ModelKind { TextCat, Svm, Cnn, Lstm, CLstm };

std::string to_string(ModelKind kind);
/// Accepts textcat, svm, cnn, lstm, clstm. Throws ConfigError listing them.
ModelKind parse_model_kind(const std::string& name);
const std::vector<std::string>& model_kind_names();

enum class SvmFeatures { MeanEmbedding, CharNgramTfidf };

struct ModelSpec {
  ModelKind kind = ModelKind::TextCat;
  textcat::ProfileOptions textcat;
  embeddings::EmbeddingConfig embedding;
  svm::SvmConfig svm;
  SvmFeatures svm_features = SvmFeatures::MeanEmbedding;
  std::size_t tfidf_features = 1000;
  nn::NetworkConfig network;

  static ModelSpec defaults(ModelKind kind);

  /// Writes seeds derived from `seed` into every randomized component.
  void reseed(std::uint64_t seed);
  void validate() const;

  /// Only the sections the kind uses.
  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
  /// FNV-1a of the canonical JSON, as 16 hex digits.
  std::string config_hash() const;
};

/// TF-IDF over character n-grams, restricted to the most document-frequent ones
/// and L2-normalized.
struct TfidfVectorizer {
  textcat::ProfileOptions ngrams;
  std::vector<std::string> terms;  // sorted
  std::vector<double> idf;         // parallel to terms

  static TfidfVectorizer fit(std::span<const std::string> texts, std::size_t max_features,
                             const textcat::ProfileOptions& ngrams);
  std::vector<double> transform(const std::string& text) const;
};

struct ModelPrediction {
  VarietyLabel label;
  std::vector<double> probabilities;  // parallel to ClassifierModel::labels()
};

class ClassifierModel {
 public:
  ModelKind kind() const { return spec_.kind; }
  const ModelSpec& spec() const { return spec_; }
  const std::vector<VarietyLabel>& labels() const { return labels_; }
  const nn::TrainingLog& training_log() const { return log_; }
  std::shared_ptr<const embeddings::EmbeddingModel> embeddings() const { return embeddings_; }

  /// Throws ConfigError on an empty token list. SVM probabilities are a
  /// softmax of the decision values, not calibrated estimates.
  ModelPrediction predict(const std::vector<std::string>& tokens) const;

  /// Writes manifest.json plus the kind's artifacts into `dir`.
  void save(const std::filesystem::path& dir) const;
  /// `embeddings_override` replaces the stored embedding file; a width the
  /// model was not trained with raises DimensionMismatch.
  static ClassifierModel load(const std::filesystem::path& dir,
                              const std::optional<std::filesystem::path>& embeddings_override = std::nullopt);

  friend ClassifierModel train_model(const ModelSpec& spec, std::span<const LabeledSentence> sentences);

 private:
  std::vector<double> svm_features(const std::vector<std::string>& tokens) const;

  ModelSpec spec_;
  std::vector<VarietyLabel> labels_;
  std::optional<textcat::TextCatModel> textcat_;
  std::shared_ptr<const embeddings::EmbeddingModel> embeddings_;
  std::optional<TfidfVectorizer> tfidf_;
  std::optional<svm::SvmModel> svm_;
  std::optional<nn::NeuralClassifier> network_;
  nn::TrainingLog log_;
};

ClassifierModel train_model(const ModelSpec& spec, std::span<const LabeledSentence> sentences);

}  // namespace dialectid
