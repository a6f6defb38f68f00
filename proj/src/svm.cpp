#include "dialectid/svm.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "dialectid/binary_io.hpp"
#include "dialectid/errors.hpp"

namespace dialectid::svm {
namespace {

constexpr std::string_view kMagic = "DISVM001";
constexpr std::uint32_t kVersion = 1;
constexpr double kTau = 1e-12;

double squared_distance(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

bool in_up(int y, double a, double C) { return (y > 0 && a < C) || (y < 0 && a > 0); }
bool in_low(int y, double a, double C) { return (y > 0 && a > 0) || (y < 0 && a < C); }

}  // namespace

GammaSetting GammaSetting::parse(const std::string& text) {
  if (text == "scale") return {};
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !(v > 0) || !std::isfinite(v)) {
    throw ConfigError("gamma must be 'scale' or a positive decimal, got '" + text + "'");
  }
  return {false, v};
}

std::string GammaSetting::to_string() const {
  if (scale) return "scale";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

void SvmConfig::validate() const {
  if (!(C > 0)) throw ConfigError("SVM regularisation C must be > 0");
  if (!gamma.scale && !(gamma.value > 0)) throw ConfigError("explicit gamma must be > 0");
  if (!(tolerance > 0)) throw ConfigError("SVM tolerance must be > 0");
  if (max_passes == 0) throw ConfigError("SVM max_passes must be >= 1");
}

nlohmann::json SvmConfig::to_json() const {
  return {{"C", C}, {"gamma", gamma.to_string()}, {"tolerance", tolerance}, {"max_passes", max_passes}};
}

SvmConfig SvmConfig::from_json(const nlohmann::json& j) {
  SvmConfig c;
  c.C = j.at("C").get<double>();
  c.gamma = GammaSetting::parse(j.at("gamma").get<std::string>());
  c.tolerance = j.at("tolerance").get<double>();
  c.max_passes = j.at("max_passes").get<std::size_t>();
  return c;
}

double rbf_kernel(std::span<const double> x, std::span<const double> y, double gamma) {
  if (x.size() != y.size()) throw DimensionMismatch("rbf_kernel: vectors have different dimensions");
  return std::exp(-gamma * squared_distance(x, y));
}

double resolve_gamma(std::span<const Vector> samples) {
  if (samples.size() < 2) throw ConfigError("gamma=scale needs at least 2 samples");
  const std::size_t dim = samples.front().size();
  if (dim == 0) throw DataError("degenerate features");
  const double n = static_cast<double>(samples.size());
  double variance_sum = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    double mean = 0.0;
    for (const auto& x : samples) mean += x[j];
    mean /= n;
    double var = 0.0;
    for (const auto& x : samples) var += (x[j] - mean) * (x[j] - mean);
    variance_sum += var / n;
  }
  const double mean_variance = variance_sum / static_cast<double>(dim);
  if (!(mean_variance > 0)) throw DataError("degenerate features: zero variance");
  return 1.0 / (static_cast<double>(dim) * mean_variance);
}

BinarySolution solve_binary(std::span<const double> gram, std::span<const int> y, double C, double tolerance,
                            std::size_t max_iterations) {
  const std::size_t n = y.size();
  if (gram.size() != n * n) throw DimensionMismatch("Gram matrix size does not match label count");
  auto K = [&](std::size_t i, std::size_t j) { return gram[i * n + j]; };

  BinarySolution sol;
  sol.alpha.assign(n, 0.0);
  auto& a = sol.alpha;
  // G = Q alpha - 1 with Q_ij = y_i y_j K_ij.
  std::vector<double> G(n, -1.0);

  while (sol.iterations < max_iterations) {
    double m = -std::numeric_limits<double>::infinity();
    double M = std::numeric_limits<double>::infinity();
    std::size_t i = n, j = n;
    for (std::size_t t = 0; t < n; ++t) {
      const double v = -y[t] * G[t];
      if (in_up(y[t], a[t], C) && v > m) {
        m = v;
        i = t;
      }
      if (in_low(y[t], a[t], C) && v < M) {
        M = v;
        j = t;
      }
    }
    if (i == n || j == n || m - M < tolerance) {
      sol.converged = true;
      break;
    }
    ++sol.iterations;

    const double yi = y[i], yj = y[j];
    const double Qij = yi * yj * K(i, j);
    const double old_ai = a[i], old_aj = a[j];
    double quad = K(i, i) + K(j, j) - 2.0 * yi * yj * Qij;
    if (quad <= 0) quad = kTau;
    if (yi != yj) {
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = a[i] - a[j];
      a[i] += delta;
      a[j] += delta;
      if (diff > 0) {
        if (a[j] < 0) {
          a[j] = 0;
          a[i] = diff;
        }
      } else if (a[i] < 0) {
        a[i] = 0;
        a[j] = -diff;
      }
      if (diff > 0) {
        if (a[i] > C) {
          a[i] = C;
          a[j] = C - diff;
        }
      } else if (a[j] > C) {
        a[j] = C;
        a[i] = C + diff;
      }
    } else {
      const double delta = (G[i] - G[j]) / quad;
      const double sum = a[i] + a[j];
      a[i] -= delta;
      a[j] += delta;
      if (sum > C) {
        if (a[i] > C) {
          a[i] = C;
          a[j] = sum - C;
        }
      } else if (a[j] < 0) {
        a[j] = 0;
        a[i] = sum;
      }
      if (sum > C) {
        if (a[j] > C) {
          a[j] = C;
          a[i] = sum - C;
        }
      } else if (a[i] < 0) {
        a[i] = 0;
        a[j] = sum;
      }
    }

    const double dai = a[i] - old_ai, daj = a[j] - old_aj;
    for (std::size_t t = 0; t < n; ++t) {
      G[t] += y[t] * (yi * K(t, i) * dai + yj * K(t, j) * daj);
    }
  }

  // Bias from free vectors, or the midpoint of the feasible interval.
  double free_sum = 0.0;
  std::size_t free_count = 0;
  double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < n; ++t) {
    const double yG = y[t] * G[t];
    if (a[t] > 0 && a[t] < C) {
      free_sum += yG;
      ++free_count;
    } else if ((a[t] >= C && y[t] < 0) || (a[t] <= 0 && y[t] > 0)) {
      ub = std::min(ub, yG);
    } else {
      lb = std::max(lb, yG);
    }
  }
  double rho;
  if (free_count > 0) {
    rho = free_sum / static_cast<double>(free_count);
  } else if (std::isfinite(ub) && std::isfinite(lb)) {
    rho = (ub + lb) / 2.0;
  } else {
    rho = std::isfinite(ub) ? ub : (std::isfinite(lb) ? lb : 0.0);
  }
  sol.bias = -rho;
  return sol;
}

double BinaryMachine::decision(std::span<const double> x, double gamma) const {
  double f = bias;
  for (std::size_t i = 0; i < support_vectors.size(); ++i) {
    f += coefficients[i] * std::exp(-gamma * squared_distance(support_vectors[i], x));
  }
  return f;
}

SvmModel train_svm(std::span<const Vector> X, std::span<const VarietyLabel> y, const SvmConfig& config) {
  config.validate();
  if (X.size() != y.size()) throw DimensionMismatch("train_svm: sample and label counts differ");
  if (X.empty()) throw ConfigError("train_svm: no samples");
  const std::size_t dim = X.front().size();
  for (const auto& x : X) {
    if (x.size() != dim) throw DimensionMismatch("train_svm: samples have different dimensions");
    for (double v : x) {
      if (!std::isfinite(v)) throw DataError("train_svm: non-finite feature value");
    }
  }

  SvmModel model;
  model.config = config;
  model.dim = dim;
  model.labels.assign(y.begin(), y.end());
  std::sort(model.labels.begin(), model.labels.end());
  model.labels.erase(std::unique(model.labels.begin(), model.labels.end()), model.labels.end());
  if (model.labels.size() < 2) throw ConfigError("train_svm: need at least 2 classes");
  model.gamma = config.gamma.scale ? resolve_gamma(X) : config.gamma.value;

  const std::size_t n = X.size();
  std::vector<double> gram(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    gram[i * n + i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double k = std::exp(-model.gamma * squared_distance(X[i], X[j]));
      gram[i * n + j] = k;
      gram[j * n + i] = k;
    }
  }

  const std::size_t max_iterations = config.max_passes * n;
  for (const auto& label : model.labels) {
    std::vector<int> signs(n);
    for (std::size_t i = 0; i < n; ++i) signs[i] = y[i] == label ? 1 : -1;
    const auto sol = solve_binary(gram, signs, config.C, config.tolerance, max_iterations);
    BinaryMachine machine;
    machine.bias = sol.bias;
    machine.converged = sol.converged;
    for (std::size_t i = 0; i < n; ++i) {
      if (sol.alpha[i] > 0) {
        machine.support_vectors.push_back(X[i]);
        machine.coefficients.push_back(sol.alpha[i] * signs[i]);
        machine.alphas.push_back(sol.alpha[i]);
      }
    }
    model.machines.push_back(std::move(machine));
  }
  return model;
}

SvmPrediction predict_svm(const SvmModel& model, std::span<const double> x) {
  if (x.size() != model.dim) {
    throw DimensionMismatch("predict_svm: input has dimension " + std::to_string(x.size()) + ", model expects " +
                            std::to_string(model.dim));
  }
  SvmPrediction p;
  std::size_t best = 0;
  for (std::size_t c = 0; c < model.machines.size(); ++c) {
    p.decision_values.push_back(model.machines[c].decision(x, model.gamma));
    if (p.decision_values[c] > p.decision_values[best]) best = c;
  }
  p.label = model.labels[best];
  return p;
}

void SvmModel::save(const std::filesystem::path& path, const std::string& config_hash) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write SVM model: " + path.string());
  io::BinaryWriter w(out);
  w.magic(kMagic);
  w.u32(kVersion);
  w.str(config_hash);
  w.str(config.to_json().dump());
  w.f64(gamma);
  w.u64(dim);
  w.u64(labels.size());
  for (std::size_t c = 0; c < labels.size(); ++c) {
    const auto& m = machines[c];
    w.str(labels[c].code());
    w.f64(m.bias);
    w.u32(m.converged ? 1 : 0);
    w.u64(m.support_vectors.size());
    for (std::size_t i = 0; i < m.support_vectors.size(); ++i) {
      w.f64(m.coefficients[i]);
      w.f64(m.alphas[i]);
      w.f64s(m.support_vectors[i]);
    }
  }
  w.check();
}

SvmModel SvmModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read SVM model: " + path.string());
  io::BinaryReader r(in);
  r.expect_magic(kMagic);
  if (const auto v = r.u32(); v != kVersion) throw DataError("unsupported SVM model version " + std::to_string(v));
  SvmModel model;
  r.str();  // config hash
  try {
    model.config = SvmConfig::from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt SVM config: ") + e.what());
  }
  model.gamma = r.f64();
  model.dim = r.u64();
  const auto classes = r.u64();
  for (std::uint64_t c = 0; c < classes; ++c) {
    model.labels.emplace_back(r.str());
    BinaryMachine m;
    m.bias = r.f64();
    m.converged = r.u32() != 0;
    const auto count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
      m.coefficients.push_back(r.f64());
      m.alphas.push_back(r.f64());
      m.support_vectors.push_back(r.f64s());
      if (m.support_vectors.back().size() != model.dim) throw DataError("support vector has wrong dimension");
    }
    model.machines.push_back(std::move(m));
  }
  return model;
}

}  // namespace dialectid::svm
