#include "dialectid/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <thread>

#include "dialectid/errors.hpp"
#include "dialectid/interrupt.hpp"
#include "dialectid/random.hpp"

namespace dialectid::eval {
namespace {

std::string fixed(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  out.flush();
  if (!out) throw Error("cannot write " + path.string());
}

nlohmann::json metrics_json(const ClassMetrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

ClassMetrics metrics_from_json(const nlohmann::json& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>()};
}

// Rethrows with the run index prepended, keeping the error category.
[[noreturn]] void rethrow_with_run(std::exception_ptr error, std::size_t run) {
  const std::string prefix = "run " + std::to_string(run) + ": ";
  try {
    std::rethrow_exception(error);
  } catch (const Interrupted&) {
    throw;
  } catch (const DimensionMismatch& e) {
    throw DimensionMismatch(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const std::exception& e) {
    throw Error(prefix + e.what());
  }
}

}  // namespace

std::string to_string(SplitUnit unit) { return unit == SplitUnit::Sentence ? "sentence" : "document"; }

SplitUnit parse_split_unit(const std::string& name) {
  if (name == "sentence") return SplitUnit::Sentence;
  if (name == "document") return SplitUnit::Document;
  throw ConfigError("unknown split unit '" + name + "' (expected sentence or document)");
}

SplitPlan stratified_split(std::span<const LabeledSentence> dataset, std::size_t run, std::uint64_t seed,
                           SplitUnit unit) {
  // Items per class: single sentences, or all sentences of one document.
  std::map<VarietyLabel, std::vector<std::vector<std::size_t>>> items;
  std::map<VarietyLabel, std::size_t> sentences_per_class;
  if (unit == SplitUnit::Sentence) {
    for (std::size_t i = 0; i < dataset.size(); ++i) items[dataset[i].variety].push_back({i});
  } else {
    std::map<std::pair<VarietyLabel, std::string>, std::vector<std::size_t>> docs;
    for (std::size_t i = 0; i < dataset.size(); ++i) docs[{dataset[i].variety, dataset[i].doc_id}].push_back(i);
    for (auto& [key, members] : docs) items[key.first].push_back(std::move(members));
  }
  for (const auto& s : dataset) ++sentences_per_class[s.variety];

  SplitPlan plan;
  plan.run = run;
  plan.seed = seed;
  for (auto& [label, groups] : items) {
    if (sentences_per_class[label] < kMinClassSentences) {
      throw DataError("class " + label.code() + " has " + std::to_string(sentences_per_class[label]) +
                      " sentences; at least " + std::to_string(kMinClassSentences) + " are required");
    }
    if (groups.size() < 2) throw DataError("class " + label.code() + " has a single document; cannot split by document");
    Rng rng(derive_seed(seed, run, "split/" + label.code()));
    rng.shuffle(std::span(groups));
    const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(kTestFraction * static_cast<double>(groups.size())));
    for (std::size_t g = 0; g < groups.size(); ++g) {
      auto& dest = g < n_test ? plan.test : plan.train;
      dest.insert(dest.end(), groups[g].begin(), groups[g].end());
    }
  }
  std::sort(plan.train.begin(), plan.train.end());
  std::sort(plan.test.begin(), plan.test.end());
  return plan;
}

std::vector<VarietyLabel> frequency_order(std::span<const LabeledSentence> dataset) {
  std::map<VarietyLabel, std::size_t> counts;
  for (const auto& s : dataset) ++counts[s.variety];
  std::vector<std::pair<VarietyLabel, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<VarietyLabel> out;
  for (auto& [label, n] : ranked) out.push_back(label);
  return out;
}

ConfusionMatrix::ConfusionMatrix(std::vector<VarietyLabel> labels)
    : labels_(std::move(labels)), counts_(labels_.size() * labels_.size(), 0) {}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < size(); ++p) s += at(truth, p);
  return s;
}

std::size_t ConfusionMatrix::column_sum(std::size_t predicted) const {
  std::size_t s = 0;
  for (std::size_t t = 0; t < size(); ++t) s += at(t, predicted);
  return s;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t s = 0;
  for (const auto c : counts_) s += c;
  return s;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t s = 0;
  for (std::size_t i = 0; i < size(); ++i) s += at(i, i);
  return s;
}

void ConfusionMatrix::write_csv(std::ostream& out) const {
  out << "true\\pred";
  for (const auto& l : labels_) out << ',' << l.code();
  out << '\n';
  for (std::size_t t = 0; t < size(); ++t) {
    out << labels_[t].code();
    for (std::size_t p = 0; p < size(); ++p) out << ',' << at(t, p);
    out << '\n';
  }
}

Score score(std::span<const VarietyLabel> truth, std::span<const VarietyLabel> predicted,
            std::span<const VarietyLabel> order) {
  if (truth.size() != predicted.size()) {
    throw ConfigError("label lists differ in length (" + std::to_string(truth.size()) + " vs " +
                      std::to_string(predicted.size()) + ")");
  }
  if (truth.empty()) throw ConfigError("cannot score an empty label list");
  std::map<VarietyLabel, std::size_t> index;
  for (std::size_t i = 0; i < order.size(); ++i) index.emplace(order[i], i);
  auto lookup = [&](const VarietyLabel& l) {
    const auto it = index.find(l);
    if (it == index.end()) throw ConfigError("label " + l.code() + " is not in the label order");
    return it->second;
  };

  Score s{ConfusionMatrix({order.begin(), order.end()}), {}, {}};
  for (std::size_t i = 0; i < truth.size(); ++i) ++s.confusion.at(lookup(truth[i]), lookup(predicted[i]));

  const std::size_t k = order.size();
  for (std::size_t c = 0; c < k; ++c) {
    const double tp = static_cast<double>(s.confusion.at(c, c));
    const double predicted_c = static_cast<double>(s.confusion.column_sum(c));
    const double actual_c = static_cast<double>(s.confusion.row_sum(c));
    ClassMetrics m;
    m.precision = predicted_c > 0 ? tp / predicted_c : 0.0;
    m.recall = actual_c > 0 ? tp / actual_c : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    s.per_class.push_back(m);
    s.macro.precision += m.precision / static_cast<double>(k);
    s.macro.recall += m.recall / static_cast<double>(k);
    s.macro.f1 += m.f1 / static_cast<double>(k);
  }
  return s;
}

EvaluationReport aggregate(const std::string& model_tag, const std::string& config_hash, std::uint64_t seed,
                           std::vector<std::uint64_t> run_seeds, SplitUnit unit, const std::vector<Score>& runs) {
  if (runs.empty()) throw ConfigError("no runs to aggregate");
  EvaluationReport r;
  r.model_tag = model_tag;
  r.config_hash = config_hash;
  r.seed = seed;
  r.run_seeds = std::move(run_seeds);
  r.unit = unit;
  r.labels = runs.front().confusion.labels();
  const std::size_t k = r.labels.size();
  const double n = static_cast<double>(runs.size());
  r.per_class.assign(k, {});
  for (const auto& s : runs) {
    if (s.confusion.labels() != r.labels) throw ConfigError("runs disagree on the label order");
    r.confusions.push_back(s.confusion);
    for (std::size_t c = 0; c < k; ++c) {
      r.per_class[c].precision += s.per_class[c].precision / n;
      r.per_class[c].recall += s.per_class[c].recall / n;
      r.per_class[c].f1 += s.per_class[c].f1 / n;
    }
  }
  for (const auto& m : r.per_class) {
    r.macro.precision += m.precision / static_cast<double>(k);
    r.macro.recall += m.recall / static_cast<double>(k);
    r.macro.f1 += m.f1 / static_cast<double>(k);
  }
  return r;
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json j;
  j["model"] = model_tag;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["run_seeds"] = run_seeds;
  j["split_unit"] = to_string(unit);
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < labels.size(); ++c) {
    auto m = metrics_json(per_class[c]);
    m["label"] = labels[c].code();
    classes.push_back(m);
  }
  j["classes"] = classes;
  j["macro"] = metrics_json(macro);
  nlohmann::json confusion = nlohmann::json::array();
  for (const auto& cm : confusions) confusion.push_back(cm.counts());
  j["confusion"] = confusion;
  return j;
}

EvaluationReport EvaluationReport::from_json(const nlohmann::json& j) {
  try {
    EvaluationReport r;
    r.model_tag = j.at("model").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.run_seeds = j.at("run_seeds").get<std::vector<std::uint64_t>>();
    r.unit = parse_split_unit(j.at("split_unit").get<std::string>());
    for (const auto& c : j.at("classes")) {
      r.labels.emplace_back(c.at("label").get<std::string>());
      r.per_class.push_back(metrics_from_json(c));
    }
    r.macro = metrics_from_json(j.at("macro"));
    const std::size_t k = r.labels.size();
    for (const auto& counts : j.at("confusion")) {
      ConfusionMatrix cm(r.labels);
      const auto values = counts.get<std::vector<std::size_t>>();
      if (values.size() != k * k) throw DataError("confusion matrix has the wrong size");
      for (std::size_t i = 0; i < values.size(); ++i) cm.at(i / k, i % k) = values[i];
      r.confusions.push_back(std::move(cm));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

EvaluationReport run_experiment(const ModelSpec& spec, std::span<const LabeledSentence> dataset,
                                const ExperimentOptions& options) {
  if (options.runs == 0) throw ConfigError("runs must be >= 1");
  spec.validate();
  const auto order = frequency_order(dataset);
  if (order.size() < 2) throw ConfigError("dataset has fewer than 2 classes");

  std::vector<std::optional<Score>> results(options.runs);
  std::vector<std::exception_ptr> errors(options.runs);
  std::vector<std::uint64_t> run_seeds(options.runs);
  for (std::size_t r = 0; r < options.runs; ++r) run_seeds[r] = derive_seed(options.seed, r, "model");

  auto do_run = [&](std::size_t r) {
    try {
      check_interrupt();
      const auto plan = stratified_split(dataset, r, options.seed, options.unit);
      std::vector<LabeledSentence> train;
      train.reserve(plan.train.size());
      for (const auto i : plan.train) train.push_back(dataset[i]);
      ModelSpec run_spec = spec;
      run_spec.reseed(run_seeds[r]);
      const auto model = train_model(run_spec, train);
      std::vector<VarietyLabel> truth;
      std::vector<VarietyLabel> predicted;
      for (const auto i : plan.test) {
        check_interrupt();
        truth.push_back(dataset[i].variety);
        predicted.push_back(model.predict(dataset[i].tokens).label);
      }
      results[r] = score(truth, predicted, order);
    } catch (...) {
      errors[r] = std::current_exception();
    }
  };

  const std::size_t jobs = std::clamp<std::size_t>(options.jobs, 1, options.runs);
  if (jobs == 1) {
    for (std::size_t r = 0; r < options.runs; ++r) {
      do_run(r);
      if (errors[r]) break;
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t r = next++; r < options.runs; r = next++) do_run(r);
      });
    }
  }
  for (std::size_t r = 0; r < options.runs; ++r) {
    if (errors[r]) rethrow_with_run(errors[r], r);
  }

  std::vector<Score> scores;
  for (auto& s : results) scores.push_back(std::move(*s));
  return aggregate(to_string(spec.kind), spec.config_hash(), options.seed, std::move(run_seeds), options.unit, scores);
}

void write_table_csv(std::span<const EvaluationReport> reports, std::ostream& out) {
  if (reports.empty()) throw ConfigError("no reports to write");
  const auto& labels = reports.front().labels;
  for (const auto& r : reports) {
    if (r.labels != labels) throw ConfigError("reports disagree on the label list");
  }
  out << "variety";
  for (const auto& r : reports) out << ',' << r.model_tag << "_P," << r.model_tag << "_R," << r.model_tag << "_F";
  out << '\n';
  for (std::size_t c = 0; c < labels.size(); ++c) {
    out << labels[c].code();
    for (const auto& r : reports) {
      out << ',' << fixed(r.per_class[c].precision) << ',' << fixed(r.per_class[c].recall) << ','
          << fixed(r.per_class[c].f1);
    }
    out << '\n';
  }
  out << "Mean";
  for (const auto& r : reports) {
    out << ',' << fixed(r.macro.precision) << ',' << fixed(r.macro.recall) << ',' << fixed(r.macro.f1);
  }
  out << '\n';
}

void emit_report(const EvaluationReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto stem = report.model_tag;
  {
    std::ofstream out(dir / (stem + "_report.csv"), std::ios::binary);
    write_table_csv(std::span(&report, 1), out);
    if (!out) throw Error("cannot write report in " + dir.string());
  }
  write_file(dir / (stem + "_report.json"), report.to_json().dump(2) + "\n");
  for (std::size_t r = 0; r < report.confusions.size(); ++r) {
    std::ofstream out(dir / (stem + "_confusion_run" + std::to_string(r) + ".csv"), std::ios::binary);
    report.confusions[r].write_csv(out);
    if (!out) throw Error("cannot write confusion matrix in " + dir.string());
  }
}

}  // namespace dialectid::eval
