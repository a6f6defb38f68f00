#include "dialectid/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "dialectid/errors.hpp"
#include "dialectid/random.hpp"
#include "dialectid/text.hpp"

namespace dialectid::synthgen {
namespace {

const std::vector<std::string> kKnownCodes{"HV", "HP", "GUE", "CEA", "CV",  "CEO", "SNNP", "ANP", "OAX",
                                           "SNP", "SOP", "IST", "NAW", "SNEP", "NOC", "H",  "HH",  "CEP"};

constexpr char32_t kBoundary = 0;

// Samples from a discrete distribution given as a cumulative table.
std::size_t sample_cdf(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.uniform() * cdf.back();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

std::vector<double> to_cdf(const std::vector<double>& weights) {
  std::vector<double> cdf(weights.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) cdf[i] = acc += weights[i];
  return cdf;
}

class Chains {
 public:
  Chains(const SynthConfig& config, std::u32string alphabet)
      : config_(config), alphabet_(std::move(alphabet)) {
    const std::size_t a = alphabet_.size();
    slice_ = std::max<std::size_t>(1, a / config_.classes);
  }

  // Next-symbol distribution of class `c` (or the shared table when c < 0).
  const std::vector<double>& cdf(int c, const std::u32string& context) {
    auto key = std::make_pair(c, context);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const std::size_t a = alphabet_.size();
    const auto shared = weights(-1, context);
    std::vector<double> mixed(a, 0.0);
    if (c < 0) {
      mixed = shared;
    } else {
      const auto own = weights(c, context);
      for (std::size_t i = 0; i < a; ++i) mixed[i] = (1 - config_.divergence) * shared[i] + config_.divergence * own[i];
    }
    return cache_.emplace(key, to_cdf(mixed)).first->second;
  }

  std::string word(int c, std::size_t length, Rng& rng) {
    std::u32string ctx(config_.order, kBoundary);
    std::u32string out;
    for (std::size_t i = 0; i < length; ++i) {
      const char32_t x = alphabet_[sample_cdf(cdf(c, ctx), rng)];
      out.push_back(x);
      ctx.erase(ctx.begin());
      ctx.push_back(x);
    }
    return text::encode(out);
  }

 private:
  // Normalized random weights for one context. Class tables only cover the
  // class's slice of the alphabet.
  std::vector<double> weights(int c, const std::u32string& context) const {
    const std::size_t a = alphabet_.size();
    std::string tag = c < 0 ? "shared" : "class" + std::to_string(c);
    for (const char32_t x : context) tag += "/" + std::to_string(static_cast<std::uint32_t>(x));
    Rng rng(derive_seed(config_.seed, 0, tag));
    std::vector<double> w(a, 0.0);
    std::vector<std::size_t> support;
    if (c < 0) {
      for (std::size_t i = 0; i < a; ++i) support.push_back(i);
    } else {
      for (std::size_t j = 0; j < slice_; ++j) support.push_back((static_cast<std::size_t>(c) * slice_ + j) % a);
    }
    double total = 0.0;
    for (const auto i : support) {
      const double u = rng.uniform(0.05, 1.0);
      w[i] += u * u * u;
      total += u * u * u;
    }
    for (auto& x : w) x /= total;
    return w;
  }

  const SynthConfig& config_;
  std::u32string alphabet_;
  std::size_t slice_ = 1;
  std::map<std::pair<int, std::u32string>, std::vector<double>> cache_;
};

std::vector<std::string> make_lexicon(Chains& chains, int c, const SynthConfig& config, Rng& rng) {
  std::vector<std::string> lexicon;
  std::set<std::string> seen;
  // Bounded retries: a tiny alphabet may not have lexicon_size distinct words.
  for (std::size_t attempt = 0; lexicon.size() < config.lexicon_size && attempt < 20 * config.lexicon_size;
       ++attempt) {
    const auto length = rng.between(config.min_token_length, config.max_token_length);
    auto w = chains.word(c, length, rng);
    if (seen.insert(w).second) lexicon.push_back(std::move(w));
  }
  return lexicon;
}

std::vector<double> zipf_cdf(std::size_t n, double s) {
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) w[r] = 1.0 / std::pow(static_cast<double>(r + 1), s);
  return to_cdf(w);
}

}  // namespace

void SynthConfig::validate() const {
  if (classes < 2) throw ConfigError("synthetic corpus needs at least 2 classes");
  if (!(divergence >= 0.0 && divergence <= 1.0)) throw ConfigError("divergence must lie in [0, 1]");
  if (!text::is_valid_utf8(alphabet)) throw ConfigError("alphabet is not valid UTF-8");
  const auto symbols = text::decode(alphabet);
  const std::set<char32_t> distinct(symbols.begin(), symbols.end());
  if (distinct.size() != symbols.size()) throw ConfigError("alphabet has repeated symbols");
  if (symbols.size() < 3) throw ConfigError("degenerate alphabet: at least 3 symbols are required");
  for (const char32_t c : symbols) {
    if (text::is_whitespace(c)) throw ConfigError("alphabet must not contain whitespace");
  }
  if (order < 1) throw ConfigError("Markov order must be >= 1");
  if (sentences_per_class < 1) throw ConfigError("sentences per class must be >= 1");
  if (min_tokens < 1 || max_tokens < min_tokens) throw ConfigError("token count range must satisfy 1 <= min <= max");
  if (min_token_length < 1 || max_token_length < min_token_length) {
    throw ConfigError("token length range must satisfy 1 <= min <= max");
  }
  if (lexicon_size < 1) throw ConfigError("lexicon size must be >= 1");
  if (!(zipf_exponent >= 0.0)) throw ConfigError("zipf exponent must be >= 0");
  if (sentences_per_document < 1) throw ConfigError("sentences per document must be >= 1");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"classes", classes},
          {"sentences_per_class", sentences_per_class},
          {"min_tokens", min_tokens},
          {"max_tokens", max_tokens},
          {"min_token_length", min_token_length},
          {"max_token_length", max_token_length},
          {"alphabet", alphabet},
          {"order", order},
          {"divergence", divergence},
          {"lexicon_size", lexicon_size},
          {"zipf_exponent", zipf_exponent},
          {"sentences_per_document", sentences_per_document},
          {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    c.classes = j.at("classes").get<std::size_t>();
    c.sentences_per_class = j.at("sentences_per_class").get<std::size_t>();
    c.min_tokens = j.at("min_tokens").get<std::size_t>();
    c.max_tokens = j.at("max_tokens").get<std::size_t>();
    c.min_token_length = j.at("min_token_length").get<std::size_t>();
    c.max_token_length = j.at("max_token_length").get<std::size_t>();
    c.alphabet = j.at("alphabet").get<std::string>();
    c.order = j.at("order").get<std::size_t>();
    c.divergence = j.at("divergence").get<double>();
    c.lexicon_size = j.at("lexicon_size").get<std::size_t>();
    c.zipf_exponent = j.at("zipf_exponent").get<double>();
    c.sentences_per_document = j.at("sentences_per_document").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed synth config: ") + e.what());
  }
  return c;
}

std::vector<VarietyLabel> synth_labels(std::size_t k) {
  std::vector<VarietyLabel> out;
  for (std::size_t i = 0; i < k; ++i) {
    if (i < kKnownCodes.size()) {
      out.emplace_back(kKnownCodes[i]);
    } else {
      const std::size_t j = i - kKnownCodes.size();
      std::string code = "X";
      code += static_cast<char>('A' + (j / 26) % 26);
      code += static_cast<char>('A' + j % 26);
      out.emplace_back(code);
    }
  }
  return out;
}

SynthCorpus generate(const SynthConfig& config) {
  config.validate();
  SynthCorpus corpus;
  corpus.config = config;
  corpus.labels = synth_labels(config.classes);

  Chains chains(config, text::decode(config.alphabet));
  Rng shared_rng(derive_seed(config.seed, 0, "lexicon/shared"));
  const auto shared = make_lexicon(chains, -1, config, shared_rng);
  const auto shared_cdf = zipf_cdf(shared.size(), config.zipf_exponent);

  for (std::size_t c = 0; c < config.classes; ++c) {
    const auto& label = corpus.labels[c];
    Rng lexicon_rng(derive_seed(config.seed, c, "lexicon/class"));
    const auto own = make_lexicon(chains, static_cast<int>(c), config, lexicon_rng);
    const auto own_cdf = zipf_cdf(own.size(), config.zipf_exponent);

    Rng rng(derive_seed(config.seed, c, "sentences"));
    std::string text;
    std::size_t in_doc = 0;
    std::size_t doc_index = 0;
    auto flush = [&] {
      if (in_doc == 0) return;
      char id[64];
      std::snprintf(id, sizeof id, "%s-%04zu", label.code().c_str(), doc_index++);
      corpus.documents.push_back({id, label, std::move(text)});
      text.clear();
      in_doc = 0;
    };
    for (std::size_t s = 0; s < config.sentences_per_class; ++s) {
      const auto n_tokens = rng.between(config.min_tokens, config.max_tokens);
      for (std::size_t t = 0; t < n_tokens; ++t) {
        if (t > 0) text += ' ';
        const bool from_class = rng.bernoulli(config.divergence);
        text += from_class ? own[sample_cdf(own_cdf, rng)] : shared[sample_cdf(shared_cdf, rng)];
      }
      text += '\n';
      if (++in_doc == config.sentences_per_document) flush();
    }
    flush();
  }
  return corpus;
}

std::filesystem::path write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "docs");
  auto write = [](const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
    out.flush();
    if (!out) throw Error("cannot write " + path.string());
  };
  std::string manifest = "# id\tlabel\tpath\tsource\n";
  for (const auto& doc : corpus.documents) {
    const std::string rel = "docs/" + doc.id + ".txt";
    write(dir / rel, doc.text);
    manifest += doc.id + "\t" + doc.label.code() + "\t" + rel + "\tsynthetic\n";
  }
  write(dir / "manifest.tsv", manifest);
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& l : corpus.labels) labels.push_back(l.code());
  write(dir / "synth.json", nlohmann::json{{"config", corpus.config.to_json()}, {"labels", labels}}.dump(2) + "\n");
  return dir / "manifest.tsv";
}

}  // namespace dialectid::synthgen
