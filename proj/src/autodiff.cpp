#include "dialectid/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "dialectid/errors.hpp"

namespace dialectid::nn {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw DimensionMismatch(what);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

// C (n x m) += A (n x k) * B (k x m)
void gemm_nn(const double* A, const double* B, double* C, std::size_t n, std::size_t k, std::size_t m) {
  const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k), M = static_cast<Eigen::Index>(m);
  Map(C, N, M).noalias() += MapC(A, N, K) * MapC(B, K, M);
}

// dA (n x k) += dC (n x m) * B^T
void gemm_nt(const double* dC, const double* B, double* dA, std::size_t n, std::size_t k, std::size_t m) {
  const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k), M = static_cast<Eigen::Index>(m);
  Map(dA, N, K).noalias() += MapC(dC, N, M) * MapC(B, K, M).transpose();
}

// dB (k x m) += A^T * dC (n x m)
void gemm_tn(const double* A, const double* dC, double* dB, std::size_t n, std::size_t k, std::size_t m) {
  const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k), M = static_cast<Eigen::Index>(m);
  Map(dB, K, M).noalias() += MapC(A, N, K).transpose() * MapC(dC, N, M);
}

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  require(data_.size() == rows * cols, "Tensor: value count does not match shape");
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false, {}});
  return Var{nodes_.size() - 1};
}

Var Graph::param(Parameter& p) {
  nodes_.push_back(Node{{}, {}, &p, true, {}});
  return Var{nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Graph::record(Tensor value, std::span<const Var> parents, Backward backward) {
  const bool needs = std::any_of(parents.begin(), parents.end(), [&](Var p) { return nodes_[p.id].needs_grad; });
  nodes_.push_back(Node{std::move(value), {}, nullptr, needs, needs ? std::move(backward) : Backward{}});
  return Var{nodes_.size() - 1};
}

const Tensor& Graph::value(Var v) const {
  const auto& n = nodes_[v.id];
  return n.param ? n.param->value : n.value;
}

Tensor& Graph::grad(Var v) {
  auto& n = nodes_[v.id];
  if (n.param) return n.param->grad;
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::backward(Var loss) {
  const auto& lv = value(loss);
  require(lv.rows() == 1 && lv.cols() == 1, "backward: loss must be 1x1");
  if (!nodes_[loss.id].needs_grad) return;
  grad(loss)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.needs_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

Var matmul(Graph& g, Var a, Var b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  require(A.cols() == B.rows(), "matmul: inner dimensions differ");
  Tensor out(A.rows(), B.cols());
  gemm_nn(A.data(), B.data(), out.data(), A.rows(), A.cols(), B.cols());
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& d) {
    const auto& A = g.value(a);
    const auto& B = g.value(b);
    if (g.needs_grad(a)) gemm_nt(d.data(), B.data(), g.grad(a).data(), A.rows(), A.cols(), B.cols());
    if (g.needs_grad(b)) gemm_tn(A.data(), d.data(), g.grad(b).data(), A.rows(), A.cols(), B.cols());
  });
}

Var add(Graph& g, Var a, Var b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  require(A.same_shape(B), "add: shapes differ");
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& d) {
    for (Var v : {a, b}) {
      if (!g.needs_grad(v)) continue;
      auto& G = g.grad(v);
      for (std::size_t i = 0; i < d.size(); ++i) G[i] += d[i];
    }
  });
}

Var add_row(Graph& g, Var a, Var bias) {
  const auto& A = g.value(a);
  const auto& b = g.value(bias);
  require(b.rows() == 1 && b.cols() == A.cols(), "add_row: bias must be 1 x cols");
  Tensor out = A;
  for (std::size_t r = 0; r < out.rows(); ++r) axpy(1.0, b.data(), out.row(r).data(), out.cols());
  return g.record(std::move(out), {a, bias}, [a, bias](Graph& g, const Tensor& d) {
    if (g.needs_grad(a)) {
      auto& G = g.grad(a);
      for (std::size_t i = 0; i < d.size(); ++i) G[i] += d[i];
    }
    if (g.needs_grad(bias)) {
      auto& G = g.grad(bias);
      for (std::size_t r = 0; r < d.rows(); ++r) axpy(1.0, d.row(r).data(), G.data(), d.cols());
    }
  });
}

Var mul(Graph& g, Var a, Var b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  require(A.same_shape(B), "mul: shapes differ");
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& d) {
    const auto& A = g.value(a);
    const auto& B = g.value(b);
    if (g.needs_grad(a)) {
      auto& G = g.grad(a);
      for (std::size_t i = 0; i < d.size(); ++i) G[i] += d[i] * B[i];
    }
    if (g.needs_grad(b)) {
      auto& G = g.grad(b);
      for (std::size_t i = 0; i < d.size(); ++i) G[i] += d[i] * A[i];
    }
  });
}

Var scale(Graph& g, Var a, double s) {
  Tensor out = map(g.value(a), [s](double x) { return s * x; });
  return g.record(std::move(out), {a}, [a, s](Graph& g, const Tensor& d) {
    auto& G = g.grad(a);
    for (std::size_t i = 0; i < d.size(); ++i) G[i] += s * d[i];
  });
}

Var sigmoid(Graph& g, Var a) {
  Tensor out = map(g.value(a), logistic);
  const Var self{g.size()};
  return g.record(std::move(out), {a}, [a, self](Graph& g, const Tensor& d) {
    const auto& Y = g.value(self);
    auto& G = g.grad(a);
    for (std::size_t i = 0; i < d.size(); ++i) G[i] += d[i] * Y[i] * (1.0 - Y[i]);
  });
}

Var tanh(Graph& g, Var a) {
  Tensor out = map(g.value(a), [](double x) { return std::tanh(x); });
  const Var self{g.size()};
  return g.record(std::move(out), {a}, [a, self](Graph& g, const Tensor& d) {
    const auto& Y = g.value(self);
    auto& G = g.grad(a);
    for (std::size_t i = 0; i < d.size(); ++i) G[i] += d[i] * (1.0 - Y[i] * Y[i]);
  });
}

Var relu(Graph& g, Var a) {
  Tensor out = map(g.value(a), [](double x) { return x > 0 ? x : 0.0; });
  return g.record(std::move(out), {a}, [a](Graph& g, const Tensor& d) {
    const auto& A = g.value(a);
    auto& G = g.grad(a);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (A[i] > 0) G[i] += d[i];
    }
  });
}

Var sum_all(Graph& g, Var a) {
  const auto& A = g.value(a);
  double s = 0.0;
  for (double x : A.values()) s += x;
  return g.record(Tensor(1, 1, s), {a}, [a](Graph& g, const Tensor& d) {
    auto& G = g.grad(a);
    for (auto& x : G.values()) x += d[0];
  });
}

Var slice_rows(Graph& g, Var a, std::size_t begin, std::size_t end) {
  const auto& A = g.value(a);
  require(begin <= end && end <= A.rows(), "slice_rows: range out of bounds");
  Tensor out(end - begin, A.cols());
  std::copy(A.data() + begin * A.cols(), A.data() + end * A.cols(), out.data());
  return g.record(std::move(out), {a}, [a, begin](Graph& g, const Tensor& d) {
    auto& G = g.grad(a);
    axpy(1.0, d.data(), G.data() + begin * G.cols(), d.size());
  });
}

Var slice_cols(Graph& g, Var a, std::size_t begin, std::size_t end) {
  const auto& A = g.value(a);
  require(begin <= end && end <= A.cols(), "slice_cols: range out of bounds");
  Tensor out(A.rows(), end - begin);
  for (std::size_t r = 0; r < A.rows(); ++r) {
    std::copy(A.row(r).begin() + static_cast<long>(begin), A.row(r).begin() + static_cast<long>(end),
              out.row(r).begin());
  }
  return g.record(std::move(out), {a}, [a, begin](Graph& g, const Tensor& d) {
    auto& G = g.grad(a);
    for (std::size_t r = 0; r < d.rows(); ++r) axpy(1.0, d.row(r).data(), G.row(r).data() + begin, d.cols());
  });
}

Var concat_cols(Graph& g, std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = g.value(parts[0]).rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    require(g.value(p).rows() == rows, "concat_cols: row counts differ");
    cols += g.value(p).cols();
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const auto& P = g.value(p);
    for (std::size_t r = 0; r < rows; ++r) std::copy(P.row(r).begin(), P.row(r).end(), out.row(r).begin() + static_cast<long>(offset));
    offset += P.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.record(std::move(out), parts, [inputs](Graph& g, const Tensor& d) {
    std::size_t offset = 0;
    for (Var p : inputs) {
      const std::size_t c = g.value(p).cols();
      if (g.needs_grad(p)) {
        auto& G = g.grad(p);
        for (std::size_t r = 0; r < d.rows(); ++r) axpy(1.0, d.row(r).data() + offset, G.row(r).data(), c);
      }
      offset += c;
    }
  });
}

Var unfold(Graph& g, Var a, std::size_t m) {
  const auto& A = g.value(a);
  require(m >= 1 && A.rows() >= m, "unfold: sequence shorter than window");
  const std::size_t d = A.cols();
  const std::size_t steps = A.rows() - m + 1;
  Tensor out(steps, m * d);
  for (std::size_t t = 0; t < steps; ++t) std::copy(A.data() + t * d, A.data() + (t + m) * d, out.row(t).begin());
  return g.record(std::move(out), {a}, [a, m](Graph& g, const Tensor& dout) {
    auto& G = g.grad(a);
    const std::size_t d = G.cols();
    for (std::size_t t = 0; t < dout.rows(); ++t) axpy(1.0, dout.row(t).data(), G.data() + t * d, m * d);
  });
}

Var max_over_time(Graph& g, Var a) {
  const auto& A = g.value(a);
  require(A.rows() >= 1, "max_over_time: empty feature map");
  Tensor out(1, A.cols());
  std::vector<std::size_t> argmax(A.cols(), 0);
  for (std::size_t c = 0; c < A.cols(); ++c) {
    double best = A(0, c);
    for (std::size_t r = 1; r < A.rows(); ++r) {
      if (A(r, c) > best) {
        best = A(r, c);
        argmax[c] = r;
      }
    }
    out[c] = best;
  }
  return g.record(std::move(out), {a}, [a, argmax = std::move(argmax)](Graph& g, const Tensor& d) {
    auto& G = g.grad(a);
    for (std::size_t c = 0; c < argmax.size(); ++c) G(argmax[c], c) += d[c];
  });
}

Var embedding_bag(Graph& g, Var table, const std::vector<std::vector<std::size_t>>& rows, const Tensor& offsets) {
  const auto& W = g.value(table);
  const std::size_t d = W.cols();
  require(offsets.empty() || (offsets.rows() == rows.size() && offsets.cols() == d),
          "embedding_bag: offsets shape mismatch");
  Tensor out = offsets.empty() ? Tensor(rows.size(), d) : offsets;
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (const auto r : rows[t]) {
      require(r < W.rows(), "embedding_bag: row index out of range");
      axpy(1.0, W.row(r).data(), out.row(t).data(), d);
    }
  }
  return g.record(std::move(out), {table}, [table, rows](Graph& g, const Tensor& dout) {
    auto& G = g.grad(table);
    const std::size_t d = G.cols();
    for (std::size_t t = 0; t < rows.size(); ++t) {
      for (const auto r : rows[t]) axpy(1.0, dout.row(t).data(), G.row(r).data(), d);
    }
  });
}

Var dropout(Graph& g, Var a, double rate, Mode mode, Rng& rng) {
  if (rate < 0 || rate >= 1) throw ConfigError("dropout rate must be in [0, 1)");
  if (mode == Mode::Infer || rate == 0.0) return a;
  const auto& A = g.value(a);
  Tensor mask(A.rows(), A.cols());
  const double keep = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < rate ? 0.0 : keep;
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return g.record(std::move(out), {a}, [a, mask = std::move(mask)](Graph& g, const Tensor& d) {
    auto& G = g.grad(a);
    for (std::size_t i = 0; i < d.size(); ++i) G[i] += d[i] * mask[i];
  });
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    total += p[i];
  }
  for (auto& x : p) x /= total;
  return p;
}

SoftmaxLoss softmax_cross_entropy(std::span<const double> logits, std::size_t target) {
  if (logits.size() < 2) throw ConfigError("softmax_cross_entropy needs at least 2 classes");
  if (target >= logits.size()) throw ConfigError("softmax_cross_entropy: target out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - mx);
  const double log_total = std::log(total);
  SoftmaxLoss out;
  out.loss = -(logits[target] - mx - log_total);
  out.probabilities.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out.probabilities[i] = std::exp(logits[i] - mx - log_total);
  return out;
}

Var softmax_cross_entropy(Graph& g, Var logits, std::size_t target) {
  const auto& Z = g.value(logits);
  require(Z.rows() == 1, "softmax_cross_entropy: logits must be a row vector");
  auto result = softmax_cross_entropy(Z.values(), target);
  return g.record(Tensor(1, 1, result.loss), {logits},
                  [logits, target, p = std::move(result.probabilities)](Graph& g, const Tensor& d) {
                    auto& G = g.grad(logits);
                    for (std::size_t i = 0; i < p.size(); ++i) G[i] += d[0] * (p[i] - (i == target ? 1.0 : 0.0));
                  });
}

Var conv1d(Graph& g, Var input, Var kernels, Var bias, std::size_t m) {
  const auto& X = g.value(input);
  if (X.rows() < m) {
    throw ConfigError("conv1d: sequence length " + std::to_string(X.rows()) + " is shorter than kernel size " +
                      std::to_string(m));
  }
  require(g.value(kernels).rows() == m * X.cols(), "conv1d: kernel height must be m * embedding width");
  return relu(g, add_row(g, matmul(g, unfold(g, input, m), kernels), bias));
}

namespace {

LstmState lstm_cell(Graph& g, Var gates, LstmState prev, std::size_t H) {
  const Var i = sigmoid(g, slice_cols(g, gates, 0, H));
  const Var f = sigmoid(g, slice_cols(g, gates, H, 2 * H));
  const Var c_hat = tanh(g, slice_cols(g, gates, 2 * H, 3 * H));
  const Var o = sigmoid(g, slice_cols(g, gates, 3 * H, 4 * H));
  const Var c = add(g, mul(g, f, prev.c), mul(g, i, c_hat));
  const Var h = mul(g, o, tanh(g, c));
  return {h, c};
}

}  // namespace

LstmState lstm_step(Graph& g, Var x_t, LstmState prev, const LstmParams& p) {
  const std::size_t H = g.value(p.recurrent_weights).rows();
  require(g.value(p.recurrent_weights).cols() == 4 * H, "lstm_step: recurrent weights must be H x 4H");
  const Var gates = add(g, add_row(g, matmul(g, x_t, p.input_weights), p.bias), matmul(g, prev.h, p.recurrent_weights));
  return lstm_cell(g, gates, prev, H);
}

LstmState lstm_sequence(Graph& g, Var sequence, std::size_t steps, const LstmParams& p) {
  const std::size_t H = g.value(p.recurrent_weights).rows();
  require(steps >= 1 && steps <= g.value(sequence).rows(), "lstm_sequence: invalid step count");
  // Input projections for all steps at once.
  const Var projected = add_row(g, matmul(g, slice_rows(g, sequence, 0, steps), p.input_weights), p.bias);
  LstmState state{g.constant(Tensor(1, H)), g.constant(Tensor(1, H))};
  for (std::size_t t = 0; t < steps; ++t) {
    const Var gates = add(g, slice_rows(g, projected, t, t + 1), matmul(g, state.h, p.recurrent_weights));
    state = lstm_cell(g, gates, state, H);
  }
  return state;
}

void adam_update(std::span<Parameter* const> params, AdamState& state, const AdamConfig& config) {
  if (state.first_moment.empty()) {
    for (const auto* p : params) {
      state.first_moment.emplace_back(p->value.rows(), p->value.cols());
      state.second_moment.emplace_back(p->value.rows(), p->value.cols());
    }
  }
  require(state.first_moment.size() == params.size(), "adam_update: state does not match parameter list");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    require(p.grad.same_shape(p.value), "adam_update: gradient shape differs from value");
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    double* w = p.value.data();
    const double* gr = p.grad.data();
    double* mm = m.data();
    double* vv = v.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      mm[i] = config.beta1 * mm[i] + (1.0 - config.beta1) * gr[i];
      vv[i] = config.beta2 * vv[i] + (1.0 - config.beta2) * gr[i] * gr[i];
      w[i] -= config.learning_rate * (mm[i] / c1) / (std::sqrt(vv[i] / c2) + config.epsilon);
    }
  }
}

}  // namespace dialectid::nn
