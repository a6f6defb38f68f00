#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "dialectid/errors.hpp"
#include "dialectid/eval.hpp"
#include "dialectid/model.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace dialectid;
using namespace dialectid::eval;
using testing_support::TempDir;

namespace {

std::vector<LabeledSentence> labeled(const std::vector<std::pair<std::string, std::size_t>>& counts,
                                     std::size_t per_doc = 1000) {
  std::vector<LabeledSentence> out;
  for (const auto& [code, n] : counts) {
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(testing_support::sentence({"w" + std::to_string(i)}, code, code + "-" + std::to_string(i / per_doc)));
    }
  }
  return out;
}

std::vector<VarietyLabel> codes(std::initializer_list<const char*> list) {
  std::vector<VarietyLabel> out;
  for (const auto* c : list) out.emplace_back(c);
  return out;
}

}  // namespace

TEST(Split, TwentyPercentOfEachClassGoesToTest) {
  const auto data = labeled({{"HV", 100}, {"HP", 7}});
  const auto plan = stratified_split(data, 0, 42);
  std::size_t hv = 0, hp = 0;
  for (const auto i : plan.test) (data[i].variety.code() == "HV" ? hv : hp)++;
  EXPECT_EQ(hv, 20u);
  EXPECT_EQ(hp, 1u);
  EXPECT_EQ(plan.train.size(), 80u + 6u);
}

TEST(Split, PartitionsTheDataset) {
  const auto data = labeled({{"HV", 53}, {"HP", 31}, {"GUE", 12}});
  for (std::size_t run = 0; run < 5; ++run) {
    const auto plan = stratified_split(data, run, 7);
    std::vector<std::size_t> all = plan.train;
    all.insert(all.end(), plan.test.begin(), plan.test.end());
    std::sort(all.begin(), all.end());
    ASSERT_EQ(all.size(), data.size());
    for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
    EXPECT_TRUE(std::is_sorted(plan.train.begin(), plan.train.end()));
  }
}

TEST(Split, DeterministicPerSeedAndRun) {
  const auto data = labeled({{"HV", 50}, {"HP", 50}});
  EXPECT_EQ(stratified_split(data, 1, 9).test, stratified_split(data, 1, 9).test);
  EXPECT_NE(stratified_split(data, 1, 9).test, stratified_split(data, 2, 9).test);
  EXPECT_NE(stratified_split(data, 1, 9).test, stratified_split(data, 1, 10).test);
}

TEST(Split, ClassSplitDoesNotDependOnOtherClasses) {
  const auto a = labeled({{"HV", 40}, {"HP", 10}});
  const auto b = labeled({{"HV", 40}, {"HP", 30}});
  std::vector<std::size_t> ta, tb;
  for (const auto i : stratified_split(a, 0, 3).test) {
    if (a[i].variety.code() == "HV") ta.push_back(i);
  }
  for (const auto i : stratified_split(b, 0, 3).test) {
    if (b[i].variety.code() == "HV") tb.push_back(i);
  }
  EXPECT_EQ(ta, tb);
}

TEST(Split, DocumentModeKeepsDocumentsTogether) {
  const auto data = labeled({{"HV", 100}, {"HP", 50}}, 10);
  const auto plan = stratified_split(data, 0, 5, SplitUnit::Document);
  std::set<std::string> test_docs, train_docs;
  for (const auto i : plan.test) test_docs.insert(data[i].doc_id);
  for (const auto i : plan.train) train_docs.insert(data[i].doc_id);
  for (const auto& d : test_docs) EXPECT_EQ(train_docs.count(d), 0u) << d;
  EXPECT_EQ(plan.test.size(), 20u + 10u);  // 2 of 10 HV docs, 1 of 5 HP docs

  const auto single = labeled({{"HV", 20}, {"HP", 20}}, 100);
  EXPECT_THROW(stratified_split(single, 0, 5, SplitUnit::Document), DataError);
}

TEST(Split, TinyClassIsDataError) {
  EXPECT_THROW(stratified_split(labeled({{"HV", 10}, {"HP", 4}}), 0, 1), DataError);
  EXPECT_THROW(parse_split_unit("paragraph"), ConfigError);
}

TEST(FrequencyOrder, DescendingCountThenCode) {
  const auto data = labeled({{"HP", 5}, {"HV", 9}, {"GUE", 5}});
  EXPECT_EQ(frequency_order(data), codes({"HV", "GUE", "HP"}));
}

TEST(Score, HandExample) {
  const auto order = codes({"HV", "HP"});
  const auto truth = codes({"HV", "HV", "HP", "HP"});
  const auto pred = codes({"HV", "HV", "HV", "HP"});
  const auto s = score(truth, pred, order);
  EXPECT_EQ(s.confusion.counts(), (std::vector<std::size_t>{2, 0, 1, 1}));
  EXPECT_NEAR(s.per_class[0].precision, 2.0 / 3, 1e-15);
  EXPECT_NEAR(s.per_class[0].recall, 1.0, 1e-15);
  EXPECT_NEAR(s.per_class[0].f1, 0.8, 1e-15);
  EXPECT_NEAR(s.per_class[1].precision, 1.0, 1e-15);
  EXPECT_NEAR(s.per_class[1].recall, 0.5, 1e-15);
  EXPECT_NEAR(s.per_class[1].f1, 2.0 / 3, 1e-15);
  EXPECT_NEAR(s.macro.f1, (0.8 + 2.0 / 3) / 2, 1e-15);
}

TEST(Score, ZeroDenominatorsGiveZero) {
  const auto order = codes({"HV", "HP", "GUE"});
  const auto s = score(codes({"HV", "HP"}), codes({"HV", "HV"}), order);
  EXPECT_EQ(s.per_class[1], (ClassMetrics{0, 0, 0}));  // never predicted, recall 0
  EXPECT_EQ(s.per_class[2], (ClassMetrics{0, 0, 0}));  // absent entirely
}

TEST(Score, RejectsBadInput) {
  const auto order = codes({"HV", "HP"});
  EXPECT_THROW(score(codes({"HV"}), codes({"HV", "HP"}), order), ConfigError);
  EXPECT_THROW(score(codes({}), codes({}), order), ConfigError);
  EXPECT_THROW(score(codes({"GUE"}), codes({"HV"}), order), ConfigError);
}

TEST(Score, MatchesBruteForceOracleOnRandomLabelings) {
  Rng rng(123);
  const std::vector<std::string> pool{"HV", "HP", "GUE", "CEA", "CV", "CEO", "SNNP"};
  for (int trial = 0; trial < 300; ++trial) {
    const int k = static_cast<int>(rng.between(2, pool.size()));
    std::vector<VarietyLabel> order;
    for (int c = 0; c < k; ++c) order.emplace_back(pool[c]);
    const std::size_t n = rng.between(1, 80);
    std::vector<int> t(n), p(n);
    std::vector<VarietyLabel> truth, pred;
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(rng.below(k));
      p[i] = rng.bernoulli(0.5) ? t[i] : static_cast<int>(rng.below(k));
      truth.push_back(order[t[i]]);
      pred.push_back(order[p[i]]);
    }
    const auto s = score(truth, pred, order);
    const auto m = oracle::brute_force_metrics(t, p, k);
    for (int a = 0; a < k; ++a) {
      for (int b = 0; b < k; ++b) ASSERT_EQ(s.confusion.at(a, b), m.confusion[a][b]);
      EXPECT_NEAR(s.per_class[a].precision, m.precision[a], 1e-12);
      EXPECT_NEAR(s.per_class[a].recall, m.recall[a], 1e-12);
      EXPECT_NEAR(s.per_class[a].f1, m.f1[a], 1e-12);
      EXPECT_EQ(s.confusion.row_sum(a), static_cast<std::size_t>(std::count(t.begin(), t.end(), a)));
    }
    EXPECT_NEAR(s.macro.f1, m.macro_f, 1e-12);
    EXPECT_GE(s.macro.f1, 0.0);
    EXPECT_LE(s.macro.f1, 1.0);
    EXPECT_EQ(s.confusion.total(), n);
  }
}

TEST(Score, PerfectPredictionIsOne) {
  const auto order = codes({"HV", "HP", "GUE"});
  const auto labels = codes({"HV", "HP", "GUE", "HV"});
  const auto s = score(labels, labels, order);
  EXPECT_EQ(s.macro, (ClassMetrics{1, 1, 1}));
  EXPECT_EQ(s.confusion.trace(), 4u);
}

TEST(ConfusionMatrix, CsvLayout) {
  const auto s = score(codes({"HV", "HP", "HP"}), codes({"HP", "HP", "HV"}), codes({"HV", "HP"}));
  std::ostringstream out;
  s.confusion.write_csv(out);
  EXPECT_EQ(out.str(), "true\\pred,HV,HP\nHV,0,1\nHP,1,1\n");
}

TEST(Report, JsonRoundTrip) {
  const auto order = codes({"HV", "HP"});
  std::vector<Score> runs{score(codes({"HV", "HP"}), codes({"HV", "HV"}), order),
                          score(codes({"HV", "HP"}), codes({"HV", "HP"}), order)};
  const auto report = aggregate("svm", "0123456789abcdef", 5, {11, 12}, SplitUnit::Document, runs);
  EXPECT_NEAR(report.per_class[0].precision, (0.5 + 1.0) / 2, 1e-15);
  const auto back = EvaluationReport::from_json(report.to_json());
  EXPECT_EQ(back.to_json(), report.to_json());
  EXPECT_EQ(back.confusions, report.confusions);
  EXPECT_EQ(back.unit, SplitUnit::Document);
}

TEST(Report, TableHasOneRowPerLabelPlusMean) {
  std::vector<VarietyLabel> order;
  for (std::size_t i = 0; i < 18; ++i) {
    std::string code = "X";
    code += static_cast<char>('A' + i / 26);
    code += static_cast<char>('A' + i % 26);
    order.emplace_back(code);
  }
  std::vector<VarietyLabel> truth, pred;
  for (std::size_t i = 0; i < 90; ++i) {
    truth.push_back(order[i % 18]);
    pred.push_back(order[(i * 7) % 18]);
  }
  const auto s = score(truth, pred, order);
  std::vector<EvaluationReport> reports{aggregate("textcat", "h", 1, {1}, SplitUnit::Sentence, {s}),
                                        aggregate("cnn", "h", 1, {1}, SplitUnit::Sentence, {s})};
  std::ostringstream out;
  write_table_csv(reports, out);
  std::istringstream in(out.str());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 1u + 18u + 1u);
  EXPECT_EQ(lines[0], "variety,textcat_P,textcat_R,textcat_F,cnn_P,cnn_R,cnn_F");
  EXPECT_EQ(lines[1].substr(0, 4), "XAA,");
  EXPECT_EQ(lines.back().substr(0, 5), "Mean,");
  EXPECT_EQ(std::count(lines[5].begin(), lines[5].end(), ','), 6);
}

TEST(Experiment, TextCatOnSeparableDataIsPerfectAndReproducible) {
  const auto data = testing_support::separable_dataset(3, 30, 4);
  ExperimentOptions opts;
  opts.runs = 3;
  opts.seed = 77;
  const auto spec = ModelSpec::defaults(ModelKind::TextCat);
  const auto a = run_experiment(spec, data, opts);
  EXPECT_EQ(a.macro, (ClassMetrics{1, 1, 1}));
  ASSERT_EQ(a.confusions.size(), 3u);
  for (const auto& c : a.confusions) EXPECT_EQ(c.total(), 18u);
  EXPECT_EQ(a.run_seeds.size(), 3u);
  EXPECT_EQ(a.model_tag, "textcat");

  opts.jobs = 3;
  const auto b = run_experiment(spec, data, opts);
  EXPECT_EQ(a.to_json(), b.to_json());

  TempDir dir;
  emit_report(a, dir.path());
  EXPECT_TRUE(std::filesystem::exists(dir / "textcat_report.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "textcat_report.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "textcat_confusion_run2.csv"));
}

TEST(Experiment, RunErrorsNameTheRun) {
  auto data = testing_support::separable_dataset(2, 10, 4);
  auto spec = ModelSpec::defaults(ModelKind::Svm);
  spec.embedding.min_count = 1000;  // empty vocabulary in every run
  ExperimentOptions opts;
  opts.runs = 2;
  try {
    run_experiment(spec, data, opts);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).substr(0, 6), "run 0:");
  }
}
