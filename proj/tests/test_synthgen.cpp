#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "dialectid/corpus.hpp"
#include "dialectid/errors.hpp"
#include "dialectid/eval.hpp"
#include "dialectid/model.hpp"
#include "dialectid/synthgen.hpp"
#include "dialectid/text.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace dialectid;
using namespace dialectid::synthgen;
using testing_support::TempDir;

namespace {

SynthConfig small(double divergence, std::size_t classes = 3) {
  SynthConfig c;
  c.classes = classes;
  c.sentences_per_class = 200;
  c.divergence = divergence;
  c.lexicon_size = 200;
  c.sentences_per_document = 20;
  c.seed = 8;
  return c;
}

/// Character unigram distribution of each class.
std::map<std::string, std::map<std::string, double>> char_distributions(const SynthCorpus& corpus) {
  std::map<std::string, std::map<std::string, double>> dist;
  std::map<std::string, double> totals;
  for (const auto& d : corpus.documents) {
    for (const auto& ch : oracle::utf8_chars(d.text)) {
      if (ch == " " || ch == "\n" || ch == ".") continue;
      dist[d.label.code()][ch] += 1;
      totals[d.label.code()] += 1;
    }
  }
  for (auto& [label, m] : dist) {
    for (auto& [ch, v] : m) v /= totals[label];
  }
  return dist;
}

double total_variation(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
  std::map<std::string, double> diff = a;
  for (const auto& [k, v] : b) diff[k] -= v;
  double s = 0;
  for (const auto& [k, v] : diff) s += std::abs(v);
  return 0.5 * s;
}

}  // namespace

TEST(SynthConfig, Validation) {
  auto c = small(1.5);
  EXPECT_THROW(c.validate(), ConfigError);
  c = small(-0.1);
  EXPECT_THROW(c.validate(), ConfigError);
  c = small(0.5);
  c.alphabet = "ab";
  EXPECT_THROW(c.validate(), ConfigError);
  c.alphabet = "aab";
  EXPECT_THROW(c.validate(), ConfigError);
  c = small(0.5, 1);
  EXPECT_THROW(c.validate(), ConfigError);
  c = small(0.5);
  c.min_tokens = 6;
  c.max_tokens = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(small(0.0).validate());
  EXPECT_NO_THROW(small(1.0).validate());
}

TEST(SynthConfig, JsonRoundTrip) {
  const auto c = small(0.3);
  EXPECT_EQ(SynthConfig::from_json(c.to_json()).to_json(), c.to_json());
}

TEST(SynthLabels, KnownCodesThenGenerated) {
  const auto labels = synth_labels(20);
  EXPECT_EQ(labels[0].code(), "HV");
  EXPECT_EQ(labels[1].code(), "HP");
  EXPECT_EQ(labels[18].code(), "XAA");
  EXPECT_EQ(labels[19].code(), "XAB");
}

TEST(Synthgen, ShapeFollowsConfig) {
  const auto corpus = generate(small(0.5));
  ASSERT_EQ(corpus.labels.size(), 3u);
  ASSERT_EQ(corpus.documents.size(), 3u * 10u);
  std::map<std::string, std::size_t> sentences;
  for (const auto& d : corpus.documents) {
    std::size_t lines = 0;
    std::size_t start = 0;
    while (start < d.text.size()) {
      const auto end = d.text.find('\n', start);
      const std::string line = d.text.substr(start, end - start);
      const auto tokens = text::split_whitespace(line);
      EXPECT_GE(tokens.size(), 5u);
      EXPECT_LE(tokens.size(), 10u);
      for (const auto& t : tokens) {
        const auto n = oracle::utf8_chars(t).size();
        EXPECT_GE(n, 5u);
        EXPECT_LE(n, 16u);  // a closing period may follow the last token
      }
      ++lines;
      if (end == std::string::npos) break;
      start = end + 1;
    }
    sentences[d.label.code()] += lines;
  }
  for (const auto& [label, n] : sentences) EXPECT_EQ(n, 200u) << label;
}

TEST(Synthgen, ByteIdenticalForSameSeed) {
  TempDir a, b;
  write_corpus(generate(small(0.4)), a.path());
  write_corpus(generate(small(0.4)), b.path());
  EXPECT_EQ(testing_support::read_file(a / "manifest.tsv"), testing_support::read_file(b / "manifest.tsv"));
  EXPECT_EQ(testing_support::read_file(a / "docs/HV-0003.txt"), testing_support::read_file(b / "docs/HV-0003.txt"));
  auto other = small(0.4);
  other.seed = 9;
  EXPECT_NE(generate(other).documents[0].text, generate(small(0.4)).documents[0].text);
}

TEST(Synthgen, ZeroDivergenceMakesClassesIndistinguishable) {
  const auto dist = char_distributions(generate(small(0.0)));
  EXPECT_LT(total_variation(dist.at("HV"), dist.at("HP")), 0.03);
  EXPECT_LT(total_variation(dist.at("HV"), dist.at("GUE")), 0.03);
}

TEST(Synthgen, FullDivergenceUsesDisjointAlphabets) {
  const auto dist = char_distributions(generate(small(1.0)));
  for (const auto& [ch, p] : dist.at("HV")) {
    EXPECT_EQ(dist.at("HP").count(ch), 0u) << ch;
    EXPECT_EQ(dist.at("GUE").count(ch), 0u) << ch;
  }
}

TEST(Synthgen, DivergenceIncreasesSeparation) {
  double previous = -1;
  for (const double d : {0.0, 0.5, 1.0}) {
    const auto dist = char_distributions(generate(small(d)));
    const double tv = total_variation(dist.at("HV"), dist.at("HP"));
    EXPECT_GT(tv, previous);
    previous = tv;
  }
}

TEST(Synthgen, OutputLoadsAsCorpusAndTextCatSeparatesFullDivergence) {
  TempDir dir;
  auto cfg = small(1.0, 2);
  const auto manifest = write_corpus(generate(cfg), dir.path());
  const auto corpus = corpus::load_corpus(manifest);
  EXPECT_EQ(corpus.documents.size(), 20u);
  EXPECT_TRUE(std::filesystem::exists(dir / "synth.json"));
  const auto data = corpus::prepare_dataset(corpus, {0, 5});
  EXPECT_EQ(data.size(), 400u);

  eval::ExperimentOptions opts;
  opts.runs = 2;
  const auto report = eval::run_experiment(ModelSpec::defaults(ModelKind::TextCat), data, opts);
  EXPECT_EQ(report.macro.f1, 1.0);
}
