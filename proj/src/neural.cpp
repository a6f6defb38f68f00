#include "dialectid/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

#include <Eigen/Dense>

#include "dialectid/binary_io.hpp"
#include "dialectid/errors.hpp"
#include "dialectid/interrupt.hpp"
#include "dialectid/random.hpp"
#include "dialectid/text.hpp"

namespace dialectid::nn {
namespace {

constexpr std::string_view kMagic = "DINNET01";
constexpr std::uint32_t kVersion = 1;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

nlohmann::json training_to_json(const TrainingConfig& t) {
  return {{"dropout", t.dropout},
          {"epochs", t.epochs},
          {"learning_rate", t.learning_rate},
          {"patience", t.patience},
          {"batch_size", t.batch_size},
          {"heldout_fraction", t.heldout_fraction},
          {"max_len", t.max_len},
          {"min_timesteps", t.min_timesteps},
          {"seed", t.seed}};
}

TrainingConfig training_from_json(const nlohmann::json& j) {
  TrainingConfig t;
  t.dropout = j.at("dropout").get<double>();
  t.epochs = j.at("epochs").get<std::size_t>();
  t.learning_rate = j.at("learning_rate").get<double>();
  t.patience = j.at("patience").get<std::size_t>();
  t.batch_size = j.at("batch_size").get<std::size_t>();
  t.heldout_fraction = j.at("heldout_fraction").get<double>();
  t.max_len = j.at("max_len").get<std::size_t>();
  t.min_timesteps = j.at("min_timesteps").get<std::size_t>();
  t.seed = j.at("seed").get<std::uint64_t>();
  return t;
}

std::size_t max_kernel(const NetworkConfig& config) {
  return std::visit(overloaded{[](const CnnConfig& c) { return *std::max_element(c.filter_sizes.begin(), c.filter_sizes.end()); },
                               [](const LstmConfig&) { return std::size_t{1}; },
                               [](const CLstmConfig& c) { return *std::max_element(c.kernel_sizes.begin(), c.kernel_sizes.end()); }},
                    config);
}

// Glorot-uniform weights, zero biases and an orthogonal recurrent matrix:
// the defaults of the Keras layers these models are usually built from.
Parameter glorot(const std::string& name, std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out,
                 Rng& rng) {
  Tensor t(rows, cols);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& x : t.values()) x = rng.uniform(-limit, limit);
  return Parameter(name, std::move(t));
}

Parameter orthogonal(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng) {
  using Matrix = Eigen::MatrixXd;
  const auto tall = static_cast<Eigen::Index>(std::max(rows, cols));
  const auto wide = static_cast<Eigen::Index>(std::min(rows, cols));
  Matrix a(tall, wide);
  for (Eigen::Index i = 0; i < tall; ++i) {
    for (Eigen::Index j = 0; j < wide; ++j) a(i, j) = rng.normal();
  }
  const Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(tall, wide);
  const Matrix r = qr.matrixQR().topLeftCorner(wide, wide).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < wide; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      t(i, j) = rows >= cols ? q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))
                             : q(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
    }
  }
  return Parameter(name, std::move(t));
}

}  // namespace

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::CNN:
      return "cnn";
    case Architecture::LSTM:
      return "lstm";
    case Architecture::CLSTM:
      return "clstm";
  }
  return "unknown";
}

Architecture parse_architecture(const std::string& name) {
  if (name == "cnn") return Architecture::CNN;
  if (name == "lstm") return Architecture::LSTM;
  if (name == "clstm") return Architecture::CLSTM;
  throw ConfigError("unknown neural architecture '" + name + "' (expected cnn, lstm or clstm)");
}

Architecture architecture_of(const NetworkConfig& config) {
  return std::visit(overloaded{[](const CnnConfig&) { return Architecture::CNN; },
                               [](const LstmConfig&) { return Architecture::LSTM; },
                               [](const CLstmConfig&) { return Architecture::CLSTM; }},
                    config);
}

NetworkConfig default_config(Architecture arch) {
  switch (arch) {
    case Architecture::CNN:
      return CnnConfig{};
    case Architecture::LSTM:
      return LstmConfig{};
    case Architecture::CLSTM:
      return CLstmConfig{};
  }
  throw ConfigError("unknown architecture");
}

const TrainingConfig& training_of(const NetworkConfig& config) {
  return std::visit([](const auto& c) -> const TrainingConfig& { return c.training; }, config);
}

TrainingConfig& training_of(NetworkConfig& config) {
  return std::visit([](auto& c) -> TrainingConfig& { return c.training; }, config);
}

void validate(const NetworkConfig& config) {
  const auto& t = training_of(config);
  if (t.dropout < 0 || t.dropout >= 1) throw ConfigError("dropout must be in [0, 1)");
  if (!(t.learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (t.batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (t.heldout_fraction < 0 || t.heldout_fraction >= 1) throw ConfigError("heldout fraction must be in [0, 1)");
  if (t.max_len == 0) throw ConfigError("max_len must be >= 1");
  auto check_sizes = [](const std::vector<std::size_t>& sizes, std::size_t count) {
    if (sizes.empty()) throw ConfigError("at least one kernel size is required");
    for (auto m : sizes) {
      if (m < 1) throw ConfigError("kernel sizes must be >= 1");
    }
    if (count < 1) throw ConfigError("filter count must be >= 1");
  };
  std::visit(overloaded{[&](const CnnConfig& c) { check_sizes(c.filter_sizes, c.filters_per_size); },
                        [&](const LstmConfig& c) {
                          if (c.hidden_size < 1) throw ConfigError("hidden size must be >= 1");
                        },
                        [&](const CLstmConfig& c) {
                          check_sizes(c.kernel_sizes, c.filters);
                          if (c.hidden_size < 1) throw ConfigError("hidden size must be >= 1");
                        }},
             config);
  if (t.min_timesteps < max_kernel(config)) throw ConfigError("min_timesteps must cover the largest kernel");
}

nlohmann::json to_json(const NetworkConfig& config) {
  nlohmann::json j = std::visit(
      overloaded{[](const CnnConfig& c) {
                   return nlohmann::json{{"filter_sizes", c.filter_sizes}, {"filters_per_size", c.filters_per_size}};
                 },
                 [](const LstmConfig& c) { return nlohmann::json{{"hidden_size", c.hidden_size}}; },
                 [](const CLstmConfig& c) {
                   return nlohmann::json{
                       {"kernel_sizes", c.kernel_sizes}, {"filters", c.filters}, {"hidden_size", c.hidden_size}};
                 }},
      config);
  j["architecture"] = to_string(architecture_of(config));
  j["training"] = training_to_json(training_of(config));
  return j;
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig config = default_config(parse_architecture(j.at("architecture").get<std::string>()));
  std::visit(overloaded{[&](CnnConfig& c) {
                          c.filter_sizes = j.at("filter_sizes").get<std::vector<std::size_t>>();
                          c.filters_per_size = j.at("filters_per_size").get<std::size_t>();
                        },
                        [&](LstmConfig& c) { c.hidden_size = j.at("hidden_size").get<std::size_t>(); },
                        [&](CLstmConfig& c) {
                          c.kernel_sizes = j.at("kernel_sizes").get<std::vector<std::size_t>>();
                          c.filters = j.at("filters").get<std::size_t>();
                          c.hidden_size = j.at("hidden_size").get<std::size_t>();
                        }},
             config);
  training_of(config) = training_from_json(j.at("training"));
  return config;
}

void TrainingLog::write_csv(std::ostream& out) const {
  out << "epoch,train_loss,heldout_loss\n";
  char buf[128];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.9f,%.9f\n", e.epoch, e.train_loss, e.heldout_loss);
    out << buf;
  }
}

NeuralClassifier::NeuralClassifier(NetworkConfig config, std::vector<VarietyLabel> labels,
                                   std::shared_ptr<const embeddings::EmbeddingModel> embeddings,
                                   std::span<const std::vector<std::string>> table_tokens)
    : config_(std::move(config)), labels_(std::move(labels)), embeddings_(std::move(embeddings)) {
  validate(config_);
  if (labels_.size() < 2) throw ConfigError("a classifier needs at least 2 classes");
  std::set<embeddings::RowKey> keys;
  for (const auto& sentence : table_tokens) {
    for (const auto& token : sentence) {
      for (const auto key : embeddings_->token_keys(text::fold_case(token))) keys.insert(key);
    }
  }
  table_keys_.assign(keys.begin(), keys.end());
  for (std::size_t i = 0; i < table_keys_.size(); ++i) table_index_.emplace(table_keys_[i], i);
  init_parameters(table_keys_.size());
}

void NeuralClassifier::init_parameters(std::size_t table_rows) {
  const std::size_t d = embeddings_->dim();
  const std::size_t k = labels_.size();
  Rng rng(derive_seed(training_of(config_).seed, 0, "neural/init"));

  Tensor table(table_rows, d);
  for (std::size_t r = 0; r < table_rows; ++r) embeddings_->add_input_row(table_keys_[r], table.row(r));
  params_.emplace_back("embedding", std::move(table));

  auto add_conv = [&](std::size_t m, std::size_t filters) {
    const auto tag = "conv" + std::to_string(m);
    params_.push_back(glorot(tag + ".weight", m * d, filters, m * d, m * filters, rng));
    params_.emplace_back(tag + ".bias", Tensor(1, filters));
  };
  auto add_lstm = [&](std::size_t input, std::size_t hidden) {
    params_.push_back(glorot("lstm.input_weight", input, 4 * hidden, input, 4 * hidden, rng));
    params_.push_back(orthogonal("lstm.recurrent_weight", hidden, 4 * hidden, rng));
    Tensor bias(1, 4 * hidden);
    for (std::size_t j = hidden; j < 2 * hidden; ++j) bias[j] = 1.0;  // forget gate
    params_.emplace_back("lstm.bias", std::move(bias));
  };
  auto add_output = [&](std::size_t input) {
    params_.push_back(glorot("output.weight", input, k, input, k, rng));
    params_.emplace_back("output.bias", Tensor(1, k));
  };

  std::visit(overloaded{[&](const CnnConfig& c) {
                          for (auto m : c.filter_sizes) add_conv(m, c.filters_per_size);
                          add_output(c.filter_sizes.size() * c.filters_per_size);
                        },
                        [&](const LstmConfig& c) {
                          add_lstm(d, c.hidden_size);
                          add_output(c.hidden_size);
                        },
                        [&](const CLstmConfig& c) {
                          for (auto m : c.kernel_sizes) add_conv(m, c.filters);
                          add_lstm(c.kernel_sizes.size() * c.filters, c.hidden_size);
                          add_output(c.hidden_size);
                        }},
             config_);
}

Parameter& NeuralClassifier::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("no parameter named " + name);
}

EncodedSentence NeuralClassifier::encode(const std::vector<std::string>& tokens) const {
  if (tokens.empty()) throw ConfigError("cannot encode an empty sentence");
  const auto& t = training_of(config_);
  const std::size_t valid = std::min(tokens.size(), t.max_len);
  const std::size_t steps = architecture() == Architecture::LSTM ? valid : std::max(valid, t.min_timesteps);
  EncodedSentence e;
  e.tokens = valid;
  e.rows.resize(steps);
  e.offsets = Tensor(steps, embeddings_->dim());
  for (std::size_t i = 0; i < valid; ++i) {
    for (const auto key : embeddings_->token_keys(text::fold_case(tokens[i]))) {
      if (const auto it = table_index_.find(key); it != table_index_.end()) {
        e.rows[i].push_back(it->second);
      } else {
        embeddings_->add_input_row(key, e.offsets.row(i));
      }
    }
  }
  return e;
}

Var NeuralClassifier::forward_matrix(Graph& g, Var input, std::size_t steps, Mode mode, Rng& rng) {
  const auto& t = training_of(config_);
  auto find = [&](const std::string& name) { return g.param(parameter(name)); };
  auto output_layer = [&](Var features) {
    const Var dropped = dropout(g, features, t.dropout, mode, rng);
    return add_row(g, matmul(g, dropped, find("output.weight")), find("output.bias"));
  };
  auto lstm_params = [&] {
    return LstmParams{find("lstm.input_weight"), find("lstm.recurrent_weight"), find("lstm.bias")};
  };

  return std::visit(
      overloaded{[&](const CnnConfig& c) {
                   std::vector<Var> pooled;
                   for (auto m : c.filter_sizes) {
                     const auto tag = "conv" + std::to_string(m);
                     pooled.push_back(max_over_time(g, conv1d(g, input, find(tag + ".weight"), find(tag + ".bias"), m)));
                   }
                   return output_layer(concat_cols(g, pooled));
                 },
                 [&](const LstmConfig&) { return output_layer(lstm_sequence(g, input, steps, lstm_params()).h); },
                 [&](const CLstmConfig& c) {
                   const std::size_t rows = g.value(input).rows();
                   const std::size_t shortest =
                       rows - *std::max_element(c.kernel_sizes.begin(), c.kernel_sizes.end()) + 1;
                   std::vector<Var> maps;
                   for (auto m : c.kernel_sizes) {
                     const auto tag = "conv" + std::to_string(m);
                     const Var map = conv1d(g, input, find(tag + ".weight"), find(tag + ".bias"), m);
                     maps.push_back(slice_rows(g, map, 0, shortest));
                   }
                   const Var sequence = concat_cols(g, maps);
                   return output_layer(lstm_sequence(g, sequence, shortest, lstm_params()).h);
                 }},
      config_);
}

Var NeuralClassifier::forward(Graph& g, const EncodedSentence& sentence, Mode mode, Rng& rng) {
  const Var input = embedding_bag(g, g.param(parameter("embedding")), sentence.rows, sentence.offsets);
  return forward_matrix(g, input, sentence.tokens, mode, rng);
}

Var sentence_loss(NeuralClassifier& model, Graph& g, const EncodedSentence& sentence, std::size_t target, Mode mode,
                  Rng& rng) {
  return softmax_cross_entropy(g, model.forward(g, sentence, mode, rng), target);
}

Prediction NeuralClassifier::predict_logits(Graph& g, Var logits) const {
  Prediction p;
  p.probabilities = softmax(g.value(logits).values());
  const auto best = static_cast<std::size_t>(
      std::max_element(p.probabilities.begin(), p.probabilities.end()) - p.probabilities.begin());
  p.label = labels_[best];
  return p;
}

Prediction NeuralClassifier::predict(const std::vector<std::string>& tokens) const {
  // Inference graphs never run backward, so parameters are only read.
  auto& self = const_cast<NeuralClassifier&>(*this);
  Graph g;
  Rng unused(0);
  const Var logits = self.forward(g, encode(tokens), Mode::Infer, unused);
  return predict_logits(g, logits);
}

Prediction NeuralClassifier::predict_matrix(const embeddings::SentenceMatrix& matrix) const {
  if (matrix.dim != embeddings_->dim()) {
    throw DimensionMismatch("input width " + std::to_string(matrix.dim) + " does not match embedding dim " +
                            std::to_string(embeddings_->dim()));
  }
  const auto& t = training_of(config_);
  const std::size_t valid = std::min(matrix.valid_rows(), t.max_len);
  if (valid == 0) throw ConfigError("sentence matrix has no valid rows");
  const std::size_t steps = architecture() == Architecture::LSTM ? valid : std::max(valid, t.min_timesteps);
  Tensor input(steps, matrix.dim);
  std::size_t r = 0;
  for (std::size_t i = 0; i < matrix.max_len && r < valid; ++i) {
    if (!matrix.mask[i]) continue;
    std::copy(matrix.row(i).begin(), matrix.row(i).end(), input.row(r++).begin());
  }
  auto& self = const_cast<NeuralClassifier&>(*this);
  Graph g;
  Rng unused(0);
  const Var logits = self.forward_matrix(g, g.constant(std::move(input)), valid, Mode::Infer, unused);
  return predict_logits(g, logits);
}

void NeuralClassifier::save(const std::filesystem::path& path, const std::string& config_hash) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write classifier: " + path.string());
  io::BinaryWriter w(out);
  w.magic(kMagic);
  w.u32(kVersion);
  w.str(config_hash);
  w.str(to_string(architecture()));
  w.str(to_json(config_).dump());
  w.u64(labels_.size());
  for (const auto& l : labels_) w.str(l.code());
  w.u64(table_keys_.size());
  for (const auto k : table_keys_) w.u64(k);
  w.u64(params_.size());
  for (const auto& p : params_) {
    w.str(p.name);
    w.u64(p.value.rows());
    w.u64(p.value.cols());
    w.f64s(p.value.values());
  }
  w.check();
}

NeuralClassifier NeuralClassifier::load(const std::filesystem::path& path,
                                        std::shared_ptr<const embeddings::EmbeddingModel> embeddings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read classifier: " + path.string());
  io::BinaryReader r(in);
  r.expect_magic(kMagic);
  if (const auto v = r.u32(); v != kVersion) throw DataError("unsupported classifier version " + std::to_string(v));
  NeuralClassifier model;
  r.str();  // config hash
  const auto arch = parse_architecture(r.str());
  try {
    model.config_ = network_config_from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt classifier config: ") + e.what());
  }
  if (architecture_of(model.config_) != arch) throw DataError("classifier header and config disagree");
  const auto n_labels = r.u64();
  for (std::uint64_t i = 0; i < n_labels; ++i) model.labels_.emplace_back(r.str());
  const auto n_keys = r.u64();
  for (std::uint64_t i = 0; i < n_keys; ++i) {
    model.table_keys_.push_back(r.u64());
    model.table_index_.emplace(model.table_keys_.back(), i);
  }
  const auto n_params = r.u64();
  for (std::uint64_t i = 0; i < n_params; ++i) {
    auto name = r.str();
    const auto rows = r.u64();
    const auto cols = r.u64();
    auto values = r.f64s();
    if (values.size() != rows * cols) throw DataError("parameter " + name + " has inconsistent shape");
    model.params_.emplace_back(std::move(name), Tensor(rows, cols, std::move(values)));
  }
  model.embeddings_ = std::move(embeddings);
  const auto& table = model.parameter("embedding").value;
  if (table.cols() != model.embeddings_->dim()) {
    throw DimensionMismatch("classifier expects embedding dim " + std::to_string(table.cols()) + ", model has " +
                            std::to_string(model.embeddings_->dim()));
  }
  if (table.rows() != model.table_keys_.size()) throw DataError("embedding table and key list disagree");
  return model;
}

NeuralClassifier train_classifier(const NetworkConfig& config, std::span<const LabeledSentence> sentences,
                                  std::shared_ptr<const embeddings::EmbeddingModel> embeddings, TrainingLog* log) {
  validate(config);
  const auto& t = training_of(config);

  std::vector<VarietyLabel> labels;
  for (const auto& s : sentences) labels.push_back(s.variety);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  if (labels.size() < 2) throw ConfigError("training data has fewer than 2 classes");

  std::vector<std::vector<std::string>> tokens;
  for (const auto& s : sentences) {
    if (s.tokens.empty()) throw ConfigError("training sentence from '" + s.doc_id + "' has no tokens");
    tokens.emplace_back(s.tokens.begin(), s.tokens.begin() + static_cast<long>(std::min(s.tokens.size(), t.max_len)));
  }
  NeuralClassifier model(config, labels, std::move(embeddings), tokens);

  std::vector<EncodedSentence> encoded;
  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    encoded.push_back(model.encode(tokens[i]));
    targets.push_back(static_cast<std::size_t>(
        std::lower_bound(labels.begin(), labels.end(), sentences[i].variety) - labels.begin()));
  }

  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(t.seed, 0, "neural/split"));
  split_rng.shuffle(std::span<std::size_t>(order));
  std::size_t n_heldout = 0;
  if (t.heldout_fraction > 0 && order.size() >= 2) {
    n_heldout = std::max<std::size_t>(1, static_cast<std::size_t>(t.heldout_fraction * static_cast<double>(order.size())));
  }
  const std::vector<std::size_t> heldout(order.begin(), order.begin() + static_cast<long>(n_heldout));
  std::vector<std::size_t> train(order.begin() + static_cast<long>(n_heldout), order.end());

  std::vector<Parameter*> params;
  for (auto& p : model.parameters()) params.push_back(&p);
  AdamState adam;
  const AdamConfig adam_config{t.learning_rate};
  Rng shuffle_rng(derive_seed(t.seed, 0, "neural/shuffle"));
  Rng dropout_rng(derive_seed(t.seed, 0, "neural/dropout"));
  Rng unused(0);

  auto mean_loss = [&](const std::vector<std::size_t>& idx) {
    double total = 0.0;
    for (const auto i : idx) {
      Graph g;
      total += g.value(sentence_loss(model, g, encoded[i], targets[i], Mode::Infer, unused))[0];
    }
    return total / static_cast<double>(idx.size());
  };

  TrainingLog local_log;
  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_values;
  for (const auto& p : model.parameters()) best_values.push_back(p.value);
  std::size_t bad_epochs = 0;

  for (std::size_t epoch = 1; epoch <= t.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(train));
    double train_total = 0.0;
    for (std::size_t start = 0; start < train.size(); start += t.batch_size) {
      check_interrupt();
      const std::size_t end = std::min(train.size(), start + t.batch_size);
      const double weight = 1.0 / static_cast<double>(end - start);
      for (auto* p : params) p->zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        Graph g;
        const Var loss = sentence_loss(model, g, encoded[train[b]], targets[train[b]], Mode::Train, dropout_rng);
        train_total += g.value(loss)[0];
        g.backward(scale(g, loss, weight));
      }
      adam_update(params, adam, adam_config);
    }
    const double train_loss = train_total / static_cast<double>(train.size());
    const double held = heldout.empty() ? train_loss : mean_loss(heldout);
    local_log.epochs.push_back({epoch, train_loss, held});
    if (held < best) {
      best = held;
      local_log.best_epoch = epoch;
      for (std::size_t i = 0; i < params.size(); ++i) best_values[i] = params[i]->value;
      bad_epochs = 0;
    } else if (++bad_epochs >= t.patience) {
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
  for (auto* p : params) p->zero_grad();
  if (log) *log = std::move(local_log);
  return model;
}

}  // namespace dialectid::nn
