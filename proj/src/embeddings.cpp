#include "dialectid/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "dialectid/binary_io.hpp"
#include "dialectid/errors.hpp"
#include "dialectid/random.hpp"
#include "dialectid/text.hpp"

namespace dialectid::embeddings {
namespace {

constexpr std::string_view kMagic = "DIEMBED1";
constexpr std::uint32_t kVersion = 1;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// -log(sigmoid(x)), stable for large |x|.
double neg_log_sigmoid(double x) { return x >= 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x)); }

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Loss of one (center, targets) group; targets[0] is positive. Writes the
// derivative of the loss w.r.t. each target score into coeffs, so that
// dL/dh = sum_o coeffs[o] u_o and dL/du_o = coeffs[o] h.
double sgns_core(const double* h, const double* const* targets, std::size_t n, std::size_t dim, double* coeffs) {
  double loss = 0.0;
  for (std::size_t o = 0; o < n; ++o) {
    const double score = dot(h, targets[o], dim);
    const double label = o == 0 ? 1.0 : 0.0;
    loss += o == 0 ? neg_log_sigmoid(score) : neg_log_sigmoid(-score);
    coeffs[o] = sigmoid(score) - label;
  }
  return loss;
}

class NegativeSampler {
 public:
  explicit NegativeSampler(const EmbeddingModel& model) {
    cumulative_.reserve(model.vocab_size());
    double total = 0.0;
    for (std::size_t i = 0; i < model.vocab_size(); ++i) {
      total += std::pow(static_cast<double>(model.frequency(i)), 0.75);
      cumulative_.push_back(total);
    }
  }
  std::size_t sample(Rng& rng) const {
    const double u = rng.uniform() * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
  }

 private:
  std::vector<double> cumulative_;
};

struct EncodedSentence {
  std::vector<long> word_ids;                 // -1 when out of vocabulary
  std::vector<std::vector<RowKey>> keys;      // per position
};

EncodedSentence encode(const EmbeddingModel& model, const std::vector<std::string>& tokens) {
  EncodedSentence e;
  for (const auto& t : tokens) {
    const auto idx = model.word_index(t);
    e.word_ids.push_back(idx ? static_cast<long>(*idx) : -1L);
    e.keys.push_back(model.token_keys(t));
  }
  return e;
}

double heldout_loss(const EmbeddingModel& model, const std::vector<EncodedSentence>& heldout,
                    const NegativeSampler& sampler) {
  const auto& cfg = model.config();
  Rng rng(derive_seed(cfg.seed, 0, "embeddings/heldout"));
  std::vector<double> h(cfg.dim);
  std::vector<const double*> targets;
  std::vector<double> coeffs(cfg.negatives + 1);
  double total = 0.0;
  std::size_t pairs = 0;
  for (const auto& s : heldout) {
    for (std::size_t i = 0; i < s.keys.size(); ++i) {
      std::fill(h.begin(), h.end(), 0.0);
      for (const auto key : s.keys[i]) model.add_input_row(key, h);
      const std::size_t lo = i >= cfg.window ? i - cfg.window : 0;
      const std::size_t hi = std::min(s.keys.size() - 1, i + cfg.window);
      for (std::size_t j = lo; j <= hi; ++j) {
        if (j == i || s.word_ids[j] < 0) continue;
        targets.assign(1, model.output_row(static_cast<std::size_t>(s.word_ids[j])).data());
        for (std::size_t k = 0; k < cfg.negatives; ++k) {
          const auto neg = sampler.sample(rng);
          if (static_cast<long>(neg) != s.word_ids[j]) targets.push_back(model.output_row(neg).data());
        }
        total += sgns_core(h.data(), targets.data(), targets.size(), cfg.dim, coeffs.data());
        ++pairs;
      }
    }
  }
  return pairs == 0 ? 0.0 : total / static_cast<double>(pairs);
}

}  // namespace

void EmbeddingConfig::validate() const {
  if (dim < 1) throw ConfigError("embedding dim must be >= 1");
  if (window < 1) throw ConfigError("embedding window must be >= 1");
  if (negatives < 1) throw ConfigError("negative samples must be >= 1");
  if (min_n < 1 || max_n < min_n) throw ConfigError("invalid subword n range");
  if (bucket_count == 0 || !std::has_single_bit(bucket_count)) {
    throw ConfigError("bucket_count must be a power of two");
  }
  if (!(learning_rate > 0)) throw ConfigError("embedding learning rate must be positive");
  if (heldout_fraction < 0 || heldout_fraction >= 1) throw ConfigError("heldout_fraction must be in [0, 1)");
}

nlohmann::json EmbeddingConfig::to_json() const {
  return {{"dim", dim},
          {"window", window},
          {"negatives", negatives},
          {"min_n", min_n},
          {"max_n", max_n},
          {"bucket_count", bucket_count},
          {"epochs", epochs},
          {"min_count", min_count},
          {"learning_rate", learning_rate},
          {"heldout_fraction", heldout_fraction},
          {"seed", seed}};
}

EmbeddingConfig EmbeddingConfig::from_json(const nlohmann::json& j) {
  EmbeddingConfig c;
  c.dim = j.at("dim").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.negatives = j.at("negatives").get<std::size_t>();
  c.min_n = j.at("min_n").get<std::size_t>();
  c.max_n = j.at("max_n").get<std::size_t>();
  c.bucket_count = j.at("bucket_count").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.min_count = j.at("min_count").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.heldout_fraction = j.at("heldout_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::uint32_t subword_hash(std::string_view s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

std::vector<std::string> subwords(std::string_view token, std::size_t min_n, std::size_t max_n) {
  std::u32string padded = U"<";
  padded += text::decode(token);
  padded += U'>';
  std::vector<std::string> out;
  for (std::size_t n = min_n; n <= max_n && n <= padded.size(); ++n) {
    for (std::size_t i = 0; i + n <= padded.size(); ++i) {
      out.push_back(text::encode(std::u32string_view(padded).substr(i, n)));
    }
  }
  return out;
}

EmbeddingModel::EmbeddingModel(EmbeddingConfig config,
                               std::vector<std::pair<std::string, std::uint64_t>> vocabulary)
    : config_(config) {
  config_.validate();
  for (auto& [word, freq] : vocabulary) {
    if (!index_.emplace(word, words_.size()).second) throw ConfigError("duplicate vocabulary entry: " + word);
    words_.push_back(std::move(word));
    frequencies_.push_back(freq);
  }
  output_.assign(words_.size() * config_.dim, 0.0);
  arena_.reserve(words_.size() * config_.dim);
  for (std::size_t w = 0; w < words_.size(); ++w) mutable_input_row(w);
}

std::optional<std::size_t> EmbeddingModel::word_index(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<RowKey> EmbeddingModel::subword_keys(std::string_view token) const {
  std::vector<RowKey> keys;
  for (const auto& sw : subwords(token, config_.min_n, config_.max_n)) {
    keys.push_back(words_.size() + (subword_hash(sw) & (config_.bucket_count - 1)));
  }
  return keys;
}

std::vector<RowKey> EmbeddingModel::token_keys(std::string_view token) const {
  std::vector<RowKey> keys;
  if (const auto w = word_index(token)) keys.push_back(*w);
  const auto sub = subword_keys(token);
  keys.insert(keys.end(), sub.begin(), sub.end());
  return keys;
}

void EmbeddingModel::initial_row(RowKey key, std::span<double> out) const {
  const std::uint64_t state = mix64(config_.seed ^ mix64(key + 1));
  const double scale = 1.0 / static_cast<double>(config_.dim);
  for (std::size_t j = 0; j < out.size(); ++j) {
    const double u = static_cast<double>(mix64(state + j) >> 11) * 0x1.0p-53;
    out[j] = (u - 0.5) * scale;
  }
}

void EmbeddingModel::add_input_row(RowKey key, std::span<double> out) const {
  const auto it = slots_.find(key);
  if (it != slots_.end()) {
    const double* row = arena_.data() + it->second * config_.dim;
    for (std::size_t j = 0; j < config_.dim; ++j) out[j] += row[j];
    return;
  }
  std::vector<double> init(config_.dim);
  initial_row(key, init);
  for (std::size_t j = 0; j < config_.dim; ++j) out[j] += init[j];
}

std::vector<double> EmbeddingModel::input_row(RowKey key) const {
  std::vector<double> row(config_.dim, 0.0);
  add_input_row(key, row);
  return row;
}

std::span<double> EmbeddingModel::mutable_input_row(RowKey key) {
  auto [it, inserted] = slots_.emplace(key, slots_.size());
  if (inserted) {
    arena_.resize(arena_.size() + config_.dim);
    initial_row(key, std::span<double>(arena_.data() + it->second * config_.dim, config_.dim));
  }
  return {arena_.data() + it->second * config_.dim, config_.dim};
}

std::span<const double> EmbeddingModel::output_row(std::size_t word) const {
  return {output_.data() + word * config_.dim, config_.dim};
}

std::span<double> EmbeddingModel::mutable_output_row(std::size_t word) {
  return {output_.data() + word * config_.dim, config_.dim};
}

std::vector<RowKey> EmbeddingModel::materialized_keys() const {
  std::vector<RowKey> keys;
  keys.reserve(slots_.size());
  for (const auto& [key, slot] : slots_) keys.push_back(key);
  std::sort(keys.begin(), keys.end());
  return keys;
}

bool EmbeddingModel::operator==(const EmbeddingModel& other) const {
  if (config_.to_json() != other.config_.to_json() || words_ != other.words_ ||
      frequencies_ != other.frequencies_ || output_ != other.output_ || slots_.size() != other.slots_.size() ||
      heldout_loss != other.heldout_loss) {
    return false;
  }
  for (const auto& [key, slot] : slots_) {
    const auto it = other.slots_.find(key);
    if (it == other.slots_.end()) return false;
    if (!std::equal(arena_.begin() + static_cast<long>(slot * config_.dim),
                    arena_.begin() + static_cast<long>((slot + 1) * config_.dim),
                    other.arena_.begin() + static_cast<long>(it->second * config_.dim))) {
      return false;
    }
  }
  return true;
}

void EmbeddingModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write embedding model: " + path.string());
  io::BinaryWriter w(out);
  w.magic(kMagic);
  w.u32(kVersion);
  w.u64(config_.dim);
  w.u64(words_.size());
  w.u64(config_.bucket_count);
  w.str(config_.to_json().dump());
  for (std::size_t i = 0; i < words_.size(); ++i) {
    w.str(words_[i]);
    w.u64(frequencies_[i]);
  }
  const auto keys = materialized_keys();
  w.u64(keys.size());
  for (const auto key : keys) {
    w.u64(key);
    const auto slot = slots_.at(key);
    w.f64s(std::span<const double>(arena_.data() + slot * config_.dim, config_.dim));
  }
  w.f64s(output_);
  w.f64s(heldout_loss);
  w.check();
}

EmbeddingModel EmbeddingModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read embedding model: " + path.string());
  io::BinaryReader r(in);
  r.expect_magic(kMagic);
  if (const auto v = r.u32(); v != kVersion) throw DataError("unsupported embedding model version " + std::to_string(v));
  const auto dim = r.u64();
  const auto vocab = r.u64();
  const auto buckets = r.u64();
  EmbeddingConfig config;
  try {
    config = EmbeddingConfig::from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt embedding config: ") + e.what());
  }
  if (config.dim != dim || config.bucket_count != buckets) throw DataError("embedding header disagrees with config");

  EmbeddingModel model;
  model.config_ = config;
  for (std::uint64_t i = 0; i < vocab; ++i) {
    auto word = r.str();
    model.index_.emplace(word, model.words_.size());
    model.words_.push_back(std::move(word));
    model.frequencies_.push_back(r.u64());
  }
  const auto rows = r.u64();
  for (std::uint64_t i = 0; i < rows; ++i) {
    const auto key = r.u64();
    const auto values = r.f64s();
    if (values.size() != dim) throw DataError("embedding row has wrong width");
    auto row = model.mutable_input_row(key);
    std::copy(values.begin(), values.end(), row.begin());
  }
  model.output_ = r.f64s();
  if (model.output_.size() != vocab * dim) throw DataError("embedding output matrix has wrong size");
  model.heldout_loss = r.f64s();
  return model;
}

std::vector<std::pair<std::string, std::uint64_t>> build_vocabulary(
    std::span<const std::vector<std::string>> sentences, std::size_t min_count) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& s : sentences) {
    for (const auto& t : s) ++counts[t];
  }
  std::vector<std::pair<std::string, std::uint64_t>> vocab;
  for (auto& [word, count] : counts) {
    if (count >= min_count) vocab.emplace_back(word, count);
  }
  std::stable_sort(vocab.begin(), vocab.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return vocab;
}

EmbeddingModel train_embeddings(std::span<const LabeledSentence> sentences, const EmbeddingConfig& config) {
  config.validate();
  if (sentences.empty()) throw ConfigError("cannot train embeddings on zero sentences");

  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(sentences.size());
  for (const auto& s : sentences) tokens.push_back(corpus::feature_tokens(s.tokens));

  auto vocab = build_vocabulary(tokens, config.min_count);
  if (vocab.empty()) throw ConfigError("empty vocabulary: no token reaches min_count");
  EmbeddingModel model(config, std::move(vocab));

  // Held-out sample for loss monitoring.
  std::vector<std::size_t> order(tokens.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(config.seed, 0, "embeddings/split"));
  split_rng.shuffle(std::span<std::size_t>(order));
  std::size_t n_heldout = 0;
  if (tokens.size() >= 2 && config.heldout_fraction > 0) {
    n_heldout = std::max<std::size_t>(1, static_cast<std::size_t>(config.heldout_fraction * static_cast<double>(tokens.size())));
  }
  std::vector<bool> is_heldout(tokens.size(), false);
  for (std::size_t i = 0; i < n_heldout; ++i) is_heldout[order[i]] = true;

  std::vector<EncodedSentence> train, heldout;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    (is_heldout[i] ? heldout : train).push_back(encode(model, tokens[i]));
  }
  // Materialize every row training will touch so row addresses stay stable.
  for (const auto& s : train) {
    for (const auto& keys : s.keys) {
      for (const auto key : keys) model.mutable_input_row(key);
    }
  }

  const NegativeSampler sampler(model);
  const std::size_t dim = config.dim;
  std::size_t total_positions = 0;
  for (const auto& s : train) total_positions += s.keys.size();
  const double total_work = static_cast<double>(std::max<std::size_t>(1, total_positions * config.epochs));

  model.heldout_loss.push_back(heldout_loss(model, heldout, sampler));

  Rng rng(derive_seed(config.seed, 0, "embeddings/train"));
  std::vector<double> h(dim), d_h(dim);
  std::vector<double*> rows;
  std::vector<double*> targets;
  std::vector<double> coeffs(config.negatives + 1);
  std::size_t done = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& s : train) {
      for (std::size_t i = 0; i < s.keys.size(); ++i, ++done) {
        const double lr = config.learning_rate * std::max(1e-4, 1.0 - static_cast<double>(done) / total_work);
        rows.clear();
        for (const auto key : s.keys[i]) rows.push_back(model.mutable_input_row(key).data());
        std::fill(h.begin(), h.end(), 0.0);
        for (const double* row : rows) {
          for (std::size_t j = 0; j < dim; ++j) h[j] += row[j];
        }
        const std::size_t lo = i >= config.window ? i - config.window : 0;
        const std::size_t hi = std::min(s.keys.size() - 1, i + config.window);
        for (std::size_t c = lo; c <= hi; ++c) {
          if (c == i || s.word_ids[c] < 0) continue;
          const auto positive = static_cast<std::size_t>(s.word_ids[c]);
          targets.assign(1, model.mutable_output_row(positive).data());
          for (std::size_t k = 0; k < config.negatives; ++k) {
            const auto neg = sampler.sample(rng);
            if (neg != positive) targets.push_back(model.mutable_output_row(neg).data());
          }
          sgns_core(h.data(), targets.data(), targets.size(), dim, coeffs.data());
          std::fill(d_h.begin(), d_h.end(), 0.0);
          for (std::size_t o = 0; o < targets.size(); ++o) {
            double* u = targets[o];
            const double g = coeffs[o];
            for (std::size_t j = 0; j < dim; ++j) {
              d_h[j] += g * u[j];
              u[j] -= lr * g * h[j];
            }
          }
          for (double* row : rows) {
            for (std::size_t j = 0; j < dim; ++j) row[j] -= lr * d_h[j];
          }
          const double shift = lr * static_cast<double>(rows.size());
          for (std::size_t j = 0; j < dim; ++j) h[j] -= shift * d_h[j];
        }
      }
    }
    model.heldout_loss.push_back(heldout_loss(model, heldout, sampler));
  }
  return model;
}

SgnsGradient sgns_loss_and_grad(std::span<const double> center, const std::vector<std::vector<double>>& targets) {
  const std::size_t dim = center.size();
  std::vector<const double*> ptrs;
  for (const auto& t : targets) {
    if (t.size() != dim) throw DimensionMismatch("target width differs from center width");
    ptrs.push_back(t.data());
  }
  std::vector<double> coeffs(targets.size());
  SgnsGradient g;
  g.loss = sgns_core(center.data(), ptrs.data(), ptrs.size(), dim, coeffs.data());
  g.d_center.assign(dim, 0.0);
  for (std::size_t o = 0; o < targets.size(); ++o) {
    std::vector<double> d_u(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      g.d_center[j] += coeffs[o] * targets[o][j];
      d_u[j] = coeffs[o] * center[j];
    }
    g.d_targets.push_back(std::move(d_u));
  }
  return g;
}

std::vector<double> embed_token(const EmbeddingModel& model, std::string_view token) {
  std::vector<double> v(model.dim(), 0.0);
  for (const auto key : model.token_keys(token)) model.add_input_row(key, v);
  return v;
}

std::size_t SentenceMatrix::valid_rows() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

SentenceMatrix embed_sentence(const EmbeddingModel& model, const LabeledSentence& sentence, std::size_t max_len) {
  SentenceMatrix m;
  m.max_len = max_len;
  m.dim = model.dim();
  m.rows.assign(max_len * m.dim, 0.0);
  m.mask.assign(max_len, false);
  m.label = sentence.variety;
  const auto tokens = corpus::feature_tokens(sentence.tokens);
  const std::size_t n = std::min(tokens.size(), max_len);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = embed_token(model, tokens[i]);
    std::copy(v.begin(), v.end(), m.rows.begin() + static_cast<long>(i * m.dim));
    m.mask[i] = true;
  }
  return m;
}

std::vector<double> mean_sentence_vector(const SentenceMatrix& matrix) {
  std::vector<double> mean(matrix.dim, 0.0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < matrix.max_len; ++i) {
    if (!matrix.mask[i]) continue;
    const auto row = matrix.row(i);
    for (std::size_t j = 0; j < matrix.dim; ++j) mean[j] += row[j];
    ++n;
  }
  if (n == 0) throw ConfigError("sentence matrix has no valid rows");
  for (auto& x : mean) x /= static_cast<double>(n);
  return mean;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double ab = dot(a.data(), b.data(), a.size());
  const double aa = dot(a.data(), a.data(), a.size());
  const double bb = dot(b.data(), b.data(), b.size());
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

std::vector<std::pair<std::string, double>> nearest_neighbors(const EmbeddingModel& model, std::string_view token,
                                                              std::size_t k) {
  const std::string folded = text::fold_case(token);
  const auto query = embed_token(model, folded);
  std::vector<std::pair<std::string, double>> scored;
  for (std::size_t i = 0; i < model.vocab_size(); ++i) {
    if (model.word(i) == folded) continue;
    scored.emplace_back(model.word(i), cosine(query, embed_token(model, model.word(i))));
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

}  // namespace dialectid::embeddings
