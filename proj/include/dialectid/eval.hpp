#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dialectid/corpus.hpp"
#include "dialectid/model.hpp"

// Repeated stratified 80/20 evaluation with per-class and macro metrics.
namespace dialectid::eval {

enum class SplitUnit { Sentence, Document };

std::string to_string(SplitUnit unit);
SplitUnit parse_split_unit(const std::string& name);

struct SplitPlan {
  std::size_t run = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> train;  // ascending dataset indices
  std::vector<std::size_t> test;
};

inline constexpr double kTestFraction = 0.2;
inline constexpr std::size_t kMinClassSentences = 5;

/// Each class is shuffled with a stream derived from (seed, run, label) and
/// floor(0.2 n) of its items (at least one) go to test. In Document mode the
/// items are documents and all their sentences follow them. Throws DataError
/// when a class is too small.
SplitPlan stratified_split(std::span<const LabeledSentence> dataset, std::size_t run, std::uint64_t seed,
                           SplitUnit unit = SplitUnit::Sentence);

/// Labels by descending sentence count, ties by code.
std::vector<VarietyLabel> frequency_order(std::span<const LabeledSentence> dataset);

class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<VarietyLabel> labels);

  const std::vector<VarietyLabel>& labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t& at(std::size_t truth, std::size_t predicted) { return counts_[truth * labels_.size() + predicted]; }
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * labels_.size() + predicted]; }
  std::size_t row_sum(std::size_t truth) const;
  std::size_t column_sum(std::size_t predicted) const;
  std::size_t total() const;
  std::size_t trace() const;
  const std::vector<std::size_t>& counts() const { return counts_; }

  /// `true\pred` header, one row per true label.
  void write_csv(std::ostream& out) const;
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::vector<VarietyLabel> labels_;
  std::vector<std::size_t> counts_;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool operator==(const ClassMetrics&) const = default;
};

struct Score {
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> per_class;  // parallel to confusion.labels()
  ClassMetrics macro;
};

/// Zero denominators give 0. Throws ConfigError on length mismatch, empty
/// input, or a label missing from `order`.
Score score(std::span<const VarietyLabel> truth, std::span<const VarietyLabel> predicted,
            std::span<const VarietyLabel> order);

struct EvaluationReport {
  std::string model_tag;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> run_seeds;
  SplitUnit unit = SplitUnit::Sentence;
  std::vector<VarietyLabel> labels;
  std::vector<ConfusionMatrix> confusions;  // one per run
  std::vector<ClassMetrics> per_class;      // mean over runs
  ClassMetrics macro;                        // mean of per_class

  nlohmann::json to_json() const;
  static EvaluationReport from_json(const nlohmann::json& j);
};

/// Mean of per-run class metrics, then the unweighted macro mean.
EvaluationReport aggregate(const std::string& model_tag, const std::string& config_hash, std::uint64_t seed,
                           std::vector<std::uint64_t> run_seeds, SplitUnit unit, const std::vector<Score>& runs);

struct ExperimentOptions {
  std::size_t runs = 5;
  std::uint64_t seed = 20250101;
  std::size_t jobs = 1;
  SplitUnit unit = SplitUnit::Sentence;
};

/// Trains a fresh model per run on the train split and scores the test split.
/// Runs may execute concurrently; results are combined in run order. Errors
/// are rethrown with the run index prepended.
EvaluationReport run_experiment(const ModelSpec& spec, std::span<const LabeledSentence> dataset,
                                const ExperimentOptions& options);

/// One row per label plus a Mean row; P/R/F column triples per report.
/// Every report must share the same label list.
void write_table_csv(std::span<const EvaluationReport> reports, std::ostream& out);

/// Writes <tag>_report.csv, <tag>_report.json and <tag>_confusion_run<i>.csv.
void emit_report(const EvaluationReport& report, const std::filesystem::path& dir);

}  // namespace dialectid::eval
