#pragma once

// Deliberately naive reference implementations. They share no code with the
// library beyond plain data types, so agreement is meaningful.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "dialectid/autodiff.hpp"

namespace oracle {

// ---------------------------------------------------------------- TextCat

/// Splits UTF-8 into code point substrings without any library help.
inline std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto b = static_cast<unsigned char>(s[i]);
    const std::size_t len = b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xE ? 3 : 4;
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

using Counted = std::vector<std::pair<std::string, std::size_t>>;

inline void bump(Counted& counts, const std::string& gram) {
  for (auto& [g, c] : counts) {
    if (g == gram) {
      ++c;
      return;
    }
  }
  counts.emplace_back(gram, 1);
}

/// Tokens split on ASCII space only (oracle inputs never contain other whitespace).
inline Counted ngrams(const std::string& text, std::size_t n_min, std::size_t n_max) {
  Counted counts;
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    auto chars = utf8_chars("_" + token + "_");
    for (std::size_t n = n_min; n <= n_max; ++n) {
      for (std::size_t i = 0; i + n <= chars.size(); ++i) {
        std::string gram;
        for (std::size_t j = i; j < i + n; ++j) gram += chars[j];
        bump(counts, gram);
      }
    }
    token.clear();
  };
  for (const char c : text) {
    if (c == ' ') {
      flush();
    } else {
      token += c;
    }
  }
  flush();
  return counts;
}

/// Selection sort by (count desc, n-gram asc), then truncation.
inline std::vector<std::string> profile(const std::vector<std::string>& texts, std::size_t size, std::size_t n_min = 2,
                                        std::size_t n_max = 5) {
  Counted all;
  for (const auto& t : texts) {
    for (const auto& [g, c] : ngrams(t, n_min, n_max)) {
      for (std::size_t k = 0; k < c; ++k) bump(all, g);
    }
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    std::size_t best = i;
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      if (all[j].second > all[best].second || (all[j].second == all[best].second && all[j].first < all[best].first)) {
        best = j;
      }
    }
    std::swap(all[i], all[best]);
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(size, all.size()); ++i) out.push_back(all[i].first);
  return out;
}

inline std::size_t distance(const std::vector<std::string>& query, const std::vector<std::string>& reference,
                            std::size_t penalty) {
  std::size_t total = 0;
  for (std::size_t q = 0; q < query.size(); ++q) {
    std::size_t cost = penalty;
    for (std::size_t r = 0; r < reference.size(); ++r) {
      if (reference[r] == query[q]) cost = q > r ? q - r : r - q;
    }
    total += cost;
  }
  return total;
}

// ---------------------------------------------------------------- metrics

struct Metrics {
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<double> precision, recall, f1;
  double macro_p = 0, macro_r = 0, macro_f = 0;
};

/// Counts tp/fp/fn for every class by a full scan per class.
inline Metrics brute_force_metrics(const std::vector<int>& truth, const std::vector<int>& predicted, int k) {
  Metrics m;
  m.confusion.assign(k, std::vector<std::size_t>(k, 0));
  for (int t = 0; t < k; ++t) {
    for (int p = 0; p < k; ++p) {
      for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == t && predicted[i] == p) ++m.confusion[t][p];
      }
    }
  }
  for (int c = 0; c < k; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == c && predicted[i] == c) ++tp;
      if (truth[i] != c && predicted[i] == c) ++fp;
      if (truth[i] == c && predicted[i] != c) ++fn;
    }
    const double p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double r = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double f = p + r == 0 ? 0.0 : 2 * p * r / (p + r);
    m.precision.push_back(p);
    m.recall.push_back(r);
    m.f1.push_back(f);
  }
  for (int c = 0; c < k; ++c) {
    m.macro_p += m.precision[c] / k;
    m.macro_r += m.recall[c] / k;
    m.macro_f += m.f1[c] / k;
  }
  return m;
}

// ---------------------------------------------------------------- gradients

/// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero gradients from
/// amplifying finite-difference rounding noise.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central differences of `loss` with respect to every entry of `value`,
/// compared against `analytic`. Returns the worst relative error.
inline double check_tensor(dialectid::nn::Tensor& value, const dialectid::nn::Tensor& analytic,
                           const std::function<double()>& loss, double step = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double saved = value[i];
    value[i] = saved + step;
    const double up = loss();
    value[i] = saved - step;
    const double down = loss();
    value[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * step)));
  }
  return worst;
}

// ---------------------------------------------------------------- SVM dual

/// Dense projected-gradient ascent on the soft-margin dual
///   max sum(a) - 1/2 a'Qa,  Q_ij = y_i y_j K_ij,  0 <= a <= C,  y'a = 0.
/// The projection onto the box intersected with the hyperplane is found by
/// bisection on the multiplier of the equality constraint.
struct DualSolution {
  std::vector<double> alpha;
  double bias = 0.0;
};

inline std::vector<double> project(const std::vector<double>& v, const std::vector<int>& y, double C) {
  auto clipped = [&](double lambda) {
    std::vector<double> a(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) a[i] = std::clamp(v[i] - lambda * y[i], 0.0, C);
    return a;
  };
  auto residual = [&](double lambda) {
    const auto a = clipped(lambda);
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += y[i] * a[i];
    return s;
  };
  double lo = -1e6, hi = 1e6;  // residual is non-increasing in lambda
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (residual(mid) > 0 ? lo : hi) = mid;
  }
  return clipped(0.5 * (lo + hi));
}

inline DualSolution solve_dual(const std::vector<std::vector<double>>& K, const std::vector<int>& y, double C,
                               int iterations = 200000) {
  const std::size_t n = y.size();
  double lipschitz = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < n; ++j) row += std::abs(K[i][j]);
    lipschitz = std::max(lipschitz, row);
  }
  const double step = 1.0 / lipschitz;
  std::vector<double> a(n, 0.0);
  for (int it = 0; it < iterations; ++it) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      double qa = 0;
      for (std::size_t j = 0; j < n; ++j) qa += y[i] * y[j] * K[i][j] * a[j];
      v[i] = a[i] + step * (1.0 - qa);
    }
    a = project(v, y, C);
  }
  DualSolution s{a, 0.0};
  // Bias from free vectors; otherwise the middle of the feasible interval.
  std::vector<double> f(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) f[i] += a[j] * y[j] * K[i][j];
  }
  const double eps = 1e-6 * C;
  double sum = 0;
  int free = 0;
  double lower = -std::numeric_limits<double>::infinity(), upper = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double b_i = y[i] - f[i];
    if (a[i] > eps && a[i] < C - eps) {
      sum += b_i;
      ++free;
    } else if ((a[i] <= eps && y[i] > 0) || (a[i] >= C - eps && y[i] < 0)) {
      lower = std::max(lower, b_i);
    } else {
      upper = std::min(upper, b_i);
    }
  }
  s.bias = free > 0 ? sum / free : 0.5 * (lower + upper);
  return s;
}

}  // namespace oracle
