#include "dialectid/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "dialectid/errors.hpp"
#include "dialectid/random.hpp"
#include "dialectid/text.hpp"

namespace dialectid {
namespace {

constexpr int kFormatVersion = 1;

std::string joined_features(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : corpus::feature_tokens(tokens)) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::vector<double> softmax_values(std::span<const double> values) { return nn::softmax(values); }

nlohmann::json profile_options_json(const textcat::ProfileOptions& o) {
  return {{"n_min", o.n_min}, {"n_max", o.n_max}, {"profile_size", o.profile_size}};
}

textcat::ProfileOptions profile_options_from_json(const nlohmann::json& j) {
  textcat::ProfileOptions o;
  o.n_min = j.at("n_min").get<std::size_t>();
  o.n_max = j.at("n_max").get<std::size_t>();
  o.profile_size = j.at("profile_size").get<std::size_t>();
  return o;
}

bool uses_embeddings(const ModelSpec& spec) {
  if (spec.kind == ModelKind::TextCat) return false;
  if (spec.kind == ModelKind::Svm) return spec.svm_features == SvmFeatures::MeanEmbedding;
  return true;
}

nn::Architecture architecture_for(ModelKind kind) {
  switch (kind) {
    case ModelKind::Cnn:
      return nn::Architecture::CNN;
    case ModelKind::Lstm:
      return nn::Architecture::LSTM;
    case ModelKind::CLstm:
      return nn::Architecture::CLSTM;
    default:
      throw ConfigError("not a neural model kind");
  }
}

bool is_neural(ModelKind kind) {
  return kind == ModelKind::Cnn || kind == ModelKind::Lstm || kind == ModelKind::CLstm;
}

}  // namespace

const std::vector<std::string>& model_kind_names() {
  static const std::vector<std::string> names{"textcat", "svm", "cnn", "lstm", "clstm"};
  return names;
}

std::string to_string(ModelKind kind) { return model_kind_names()[static_cast<std::size_t>(kind)]; }

ModelKind parse_model_kind(const std::string& name) {
  const auto& names = model_kind_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<ModelKind>(i);
  }
  throw ConfigError("unknown architecture '" + name + "'; valid values: textcat, svm, cnn, lstm, clstm");
}

ModelSpec ModelSpec::defaults(ModelKind kind) {
  ModelSpec spec;
  spec.kind = kind;
  spec.network = is_neural(kind) ? nn::default_config(architecture_for(kind)) : nn::NetworkConfig{};
  return spec;
}

void ModelSpec::reseed(std::uint64_t seed) {
  embedding.seed = derive_seed(seed, 0, "embeddings");
  nn::training_of(network).seed = derive_seed(seed, 0, "network");
}

void ModelSpec::validate() const {
  if (textcat.n_min < 1 || textcat.n_max < textcat.n_min) throw ConfigError("n-gram range must satisfy 1 <= min <= max");
  if (textcat.profile_size < 1) throw ConfigError("profile size must be >= 1");
  if (uses_embeddings(*this)) embedding.validate();
  if (kind == ModelKind::Svm) {
    svm.validate();
    if (svm_features == SvmFeatures::CharNgramTfidf && tfidf_features < 1) {
      throw ConfigError("tf-idf feature count must be >= 1");
    }
  }
  if (is_neural(kind)) {
    if (nn::architecture_of(network) != architecture_for(kind)) throw ConfigError("network config does not match kind");
    nn::validate(network);
  }
}

nlohmann::json ModelSpec::to_json() const {
  nlohmann::json j{{"architecture", to_string(kind)}};
  if (kind == ModelKind::TextCat || (kind == ModelKind::Svm && svm_features == SvmFeatures::CharNgramTfidf)) {
    j["ngrams"] = profile_options_json(textcat);
  }
  if (uses_embeddings(*this)) j["embedding"] = embedding.to_json();
  if (kind == ModelKind::Svm) {
    j["svm"] = svm.to_json();
    j["svm_features"] = svm_features == SvmFeatures::MeanEmbedding ? "mean-embedding" : "char-tfidf";
    if (svm_features == SvmFeatures::CharNgramTfidf) j["tfidf_features"] = tfidf_features;
  }
  if (is_neural(kind)) j["network"] = nn::to_json(network);
  return j;
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  try {
    ModelSpec spec = defaults(parse_model_kind(j.at("architecture").get<std::string>()));
    if (j.contains("ngrams")) spec.textcat = profile_options_from_json(j.at("ngrams"));
    if (j.contains("embedding")) spec.embedding = embeddings::EmbeddingConfig::from_json(j.at("embedding"));
    if (j.contains("svm")) spec.svm = svm::SvmConfig::from_json(j.at("svm"));
    if (j.contains("svm_features")) {
      const auto f = j.at("svm_features").get<std::string>();
      if (f == "mean-embedding") {
        spec.svm_features = SvmFeatures::MeanEmbedding;
      } else if (f == "char-tfidf") {
        spec.svm_features = SvmFeatures::CharNgramTfidf;
      } else {
        throw ConfigError("unknown svm feature mode '" + f + "'");
      }
    }
    if (j.contains("tfidf_features")) spec.tfidf_features = j.at("tfidf_features").get<std::size_t>();
    if (j.contains("network")) spec.network = nn::network_config_from_json(j.at("network"));
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model spec: ") + e.what());
  }
}

std::string ModelSpec::config_hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json().dump())));
  return buf;
}

TfidfVectorizer TfidfVectorizer::fit(std::span<const std::string> texts, std::size_t max_features,
                                     const textcat::ProfileOptions& ngrams) {
  if (texts.empty()) throw ConfigError("tf-idf needs at least one text");
  std::map<std::string, std::size_t> df;
  for (const auto& t : texts) {
    for (const auto& [gram, count] : textcat::extract_ngrams(t, ngrams.n_min, ngrams.n_max)) ++df[gram];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(df.begin(), df.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > max_features) ranked.resize(max_features);
  std::sort(ranked.begin(), ranked.end());

  TfidfVectorizer v;
  v.ngrams = ngrams;
  const double n = static_cast<double>(texts.size());
  for (const auto& [gram, count] : ranked) {
    v.terms.push_back(gram);
    v.idf.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
  }
  return v;
}

std::vector<double> TfidfVectorizer::transform(const std::string& text) const {
  std::vector<double> out(terms.size(), 0.0);
  for (const auto& [gram, count] : textcat::extract_ngrams(text, ngrams.n_min, ngrams.n_max)) {
    const auto it = std::lower_bound(terms.begin(), terms.end(), gram);
    if (it != terms.end() && *it == gram) {
      const auto i = static_cast<std::size_t>(it - terms.begin());
      out[i] = static_cast<double>(count) * idf[i];
    }
  }
  double norm = 0.0;
  for (const double x : out) norm += x * x;
  if (norm > 0) {
    norm = std::sqrt(norm);
    for (auto& x : out) x /= norm;
  }
  return out;
}

std::vector<double> ClassifierModel::svm_features(const std::vector<std::string>& tokens) const {
  if (spec_.svm_features == SvmFeatures::CharNgramTfidf) return tfidf_->transform(joined_features(tokens));
  LabeledSentence s{tokens, {}, {}};
  return embeddings::mean_sentence_vector(embeddings::embed_sentence(*embeddings_, s));
}

ClassifierModel train_model(const ModelSpec& spec, std::span<const LabeledSentence> sentences) {
  spec.validate();
  ClassifierModel model;
  model.spec_ = spec;
  for (const auto& s : sentences) model.labels_.push_back(s.variety);
  std::sort(model.labels_.begin(), model.labels_.end());
  model.labels_.erase(std::unique(model.labels_.begin(), model.labels_.end()), model.labels_.end());
  if (model.labels_.size() < 2) throw ConfigError("training data has fewer than 2 classes");

  if (uses_embeddings(spec)) {
    model.embeddings_ =
        std::make_shared<const embeddings::EmbeddingModel>(embeddings::train_embeddings(sentences, spec.embedding));
  }

  switch (spec.kind) {
    case ModelKind::TextCat:
      model.textcat_ = textcat::train_textcat(sentences, spec.textcat);
      break;
    case ModelKind::Svm: {
      if (spec.svm_features == SvmFeatures::CharNgramTfidf) {
        std::vector<std::string> texts;
        for (const auto& s : sentences) texts.push_back(joined_features(s.tokens));
        model.tfidf_ = TfidfVectorizer::fit(texts, spec.tfidf_features, spec.textcat);
      }
      std::vector<svm::Vector> X;
      std::vector<VarietyLabel> y;
      for (const auto& s : sentences) {
        X.push_back(model.svm_features(s.tokens));
        y.push_back(s.variety);
      }
      model.svm_ = svm::train_svm(X, y, spec.svm);
      break;
    }
    case ModelKind::Cnn:
    case ModelKind::Lstm:
    case ModelKind::CLstm:
      model.network_ = nn::train_classifier(spec.network, sentences, model.embeddings_, &model.log_);
      break;
  }
  return model;
}

ModelPrediction ClassifierModel::predict(const std::vector<std::string>& tokens) const {
  if (tokens.empty()) throw ConfigError("cannot classify an empty sentence");
  ModelPrediction out;
  switch (spec_.kind) {
    case ModelKind::TextCat: {
      const auto scores = textcat::classify_textcat(joined_features(tokens), *textcat_);
      out.label = scores.front().label;
      out.probabilities.assign(labels_.size(), 0.0);
      for (const auto& s : scores) {
        const auto i = std::lower_bound(labels_.begin(), labels_.end(), s.label) - labels_.begin();
        out.probabilities[static_cast<std::size_t>(i)] = s.probability;
      }
      break;
    }
    case ModelKind::Svm: {
      const auto p = svm::predict_svm(*svm_, svm_features(tokens));
      out.label = p.label;
      out.probabilities = softmax_values(p.decision_values);
      break;
    }
    default: {
      auto p = network_->predict(tokens);
      out.label = p.label;
      out.probabilities = std::move(p.probabilities);
    }
  }
  return out;
}

void ClassifierModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const auto hash = spec_.config_hash();
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& l : labels_) labels.push_back(l.code());
  const nlohmann::json manifest{{"format", "dialectid-model"},
                                {"version", kFormatVersion},
                                {"architecture", to_string(spec_.kind)},
                                {"config_hash", hash},
                                {"labels", labels},
                                {"spec", spec_.to_json()}};
  {
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
    if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
  }
  if (embeddings_) embeddings_->save(dir / "embeddings.bin");
  switch (spec_.kind) {
    case ModelKind::TextCat:
      textcat::save_textcat(*textcat_, dir / "profiles");
      break;
    case ModelKind::Svm:
      if (tfidf_) {
        std::ofstream out(dir / "tfidf.json");
        out << nlohmann::json{{"terms", tfidf_->terms}, {"idf", tfidf_->idf}}.dump() << '\n';
        if (!out) throw Error("cannot write " + (dir / "tfidf.json").string());
      }
      svm_->save(dir / "svm.bin", hash);
      break;
    default: {
      network_->save(dir / "classifier.bin", hash);
      std::ofstream out(dir / "train_log.csv");
      log_.write_csv(out);
      if (!out) throw Error("cannot write " + (dir / "train_log.csv").string());
    }
  }
}

ClassifierModel ClassifierModel::load(const std::filesystem::path& dir,
                                      const std::optional<std::filesystem::path>& embeddings_override) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("not a model directory (no manifest.json): " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
    if (manifest.at("format") != "dialectid-model") throw DataError("not a dialectid model: " + dir.string());
    if (manifest.at("version").get<int>() != kFormatVersion) throw DataError("unsupported model version");
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest.json: " + std::string(e.what()));
  }
  ClassifierModel model;
  model.spec_ = ModelSpec::from_json(manifest.at("spec"));
  for (const auto& l : manifest.at("labels")) model.labels_.emplace_back(l.get<std::string>());

  if (uses_embeddings(model.spec_)) {
    const auto path = embeddings_override.value_or(dir / "embeddings.bin");
    model.embeddings_ = std::make_shared<const embeddings::EmbeddingModel>(embeddings::EmbeddingModel::load(path));
  }
  switch (model.spec_.kind) {
    case ModelKind::TextCat:
      model.textcat_ = textcat::load_textcat(dir / "profiles");
      break;
    case ModelKind::Svm: {
      model.svm_ = svm::SvmModel::load(dir / "svm.bin");
      if (model.spec_.svm_features == SvmFeatures::CharNgramTfidf) {
        std::ifstream tin(dir / "tfidf.json");
        if (!tin) throw DataError("missing tfidf.json in " + dir.string());
        try {
          const auto j = nlohmann::json::parse(tin);
          TfidfVectorizer v;
          v.ngrams = model.spec_.textcat;
          v.terms = j.at("terms").get<std::vector<std::string>>();
          v.idf = j.at("idf").get<std::vector<double>>();
          model.tfidf_ = std::move(v);
        } catch (const nlohmann::json::exception& e) {
          throw DataError("malformed tfidf.json: " + std::string(e.what()));
        }
      }
      const std::size_t width =
          model.tfidf_ ? model.tfidf_->terms.size() : model.embeddings_->dim();
      if (width != model.svm_->dim) {
        throw DimensionMismatch("svm expects " + std::to_string(model.svm_->dim) + " features, input gives " +
                                std::to_string(width));
      }
      break;
    }
    default:
      model.network_ = nn::NeuralClassifier::load(dir / "classifier.bin", model.embeddings_);
  }
  return model;
}

}  // namespace dialectid
