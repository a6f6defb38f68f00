#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dialectid/corpus.hpp"

// Soft-margin RBF support vector machine, one-vs-rest, trained by SMO.
namespace dialectid::svm {

/// Either "scale" (derived from the training data) or an explicit value.
struct GammaSetting {
  bool scale = true;
  double value = 0.0;

  /// Accepts `scale` or a positive decimal. Throws ConfigError otherwise.
  static GammaSetting parse(const std::string& text);
  std::string to_string() const;
};

struct SvmConfig {
  double C = 1.0;
  GammaSetting gamma;
  double tolerance = 1e-3;
  std::size_t max_passes = 100;  // sweeps; one sweep = n pair updates

  void validate() const;
  nlohmann::json to_json() const;
  static SvmConfig from_json(const nlohmann::json& j);
};

using Vector = std::vector<double>;

/// exp(-gamma * ||x - y||^2). Throws DimensionMismatch.
double rbf_kernel(std::span<const double> x, std::span<const double> y, double gamma);

/// 1 / (dim * mean per-coordinate variance). Throws ConfigError for fewer
/// than two samples and DataError("degenerate features") at zero variance.
double resolve_gamma(std::span<const Vector> samples);

/// Dual solution of one binary problem with labels in {-1, +1}.
struct BinarySolution {
  std::vector<double> alpha;
  double bias = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// SMO on a precomputed Gram matrix (row-major n x n), selecting the
/// maximal-violating pair each step.
BinarySolution solve_binary(std::span<const double> gram, std::span<const int> y, double C, double tolerance,
                            std::size_t max_iterations);

struct BinaryMachine {
  std::vector<Vector> support_vectors;
  std::vector<double> coefficients;  // alpha_i * y_i
  std::vector<double> alphas;        // alpha_i, kept for inspection
  double bias = 0.0;
  bool converged = false;

  double decision(std::span<const double> x, double gamma) const;
};

struct SvmModel {
  std::vector<VarietyLabel> labels;  // sorted; one machine per label
  std::vector<BinaryMachine> machines;
  double gamma = 0.0;
  std::size_t dim = 0;
  SvmConfig config;

  void save(const std::filesystem::path& path, const std::string& config_hash = "") const;
  static SvmModel load(const std::filesystem::path& path);
};

/// Throws ConfigError for single-class input, DimensionMismatch for ragged X.
SvmModel train_svm(std::span<const Vector> X, std::span<const VarietyLabel> y, const SvmConfig& config = {});

struct SvmPrediction {
  VarietyLabel label;
  std::vector<double> decision_values;  // parallel to model.labels
};

/// Argmax of the one-vs-rest decision values; ties go to the earlier label.
SvmPrediction predict_svm(const SvmModel& model, std::span<const double> x);

}  // namespace dialectid::svm
