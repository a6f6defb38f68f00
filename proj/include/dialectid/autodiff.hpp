#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dialectid/random.hpp"

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Graph is a tape: nodes are appended in evaluation order, so walking it
// backwards visits every node after all of its consumers. Parameters live
// outside the graph; their nodes read the parameter value in place and
// backward() accumulates straight into Parameter::grad.
namespace dialectid::nn {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  void fill(double v);
  bool all_finite() const;
  bool operator==(const Tensor&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value) : name(std::move(name)), value(std::move(value)) {
    grad = Tensor(this->value.rows(), this->value.cols());
  }

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

/// Handle to a graph node.
struct Var {
  std::size_t id = 0;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, const Tensor& out_grad)>;

  Var constant(Tensor value);
  Var param(Parameter& p);

  /// Appends an op node. `backward` receives the node's output gradient and
  /// must add into the gradients of the parents that need them.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward);
  Var record(Tensor value, std::span<const Var> parents, Backward backward);

  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  /// Gradient accumulator of v, zero-initialized on first use.
  Tensor& grad(Var v);

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 loss and runs the tape backwards.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    bool needs_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Ops. Shapes are (rows x cols); a "row vector" is 1 x n.

Var matmul(Graph& g, Var a, Var b);
Var add(Graph& g, Var a, Var b);
/// a (n x m) plus a 1 x m bias broadcast over rows.
Var add_row(Graph& g, Var a, Var bias);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double s);
Var sigmoid(Graph& g, Var a);
Var tanh(Graph& g, Var a);
Var relu(Graph& g, Var a);
Var sum_all(Graph& g, Var a);
Var slice_rows(Graph& g, Var a, std::size_t begin, std::size_t end);
Var slice_cols(Graph& g, Var a, std::size_t begin, std::size_t end);
Var concat_cols(Graph& g, std::span<const Var> parts);
/// (L x d) -> ((L-m+1) x (m*d)); row t holds input rows t..t+m-1 side by side.
Var unfold(Graph& g, Var a, std::size_t m);
/// Column-wise maximum, (T x F) -> (1 x F).
Var max_over_time(Graph& g, Var a);

/// Row t is the sum of table rows listed in rows[t] plus offsets row t.
/// offsets may be empty (treated as zero).
Var embedding_bag(Graph& g, Var table, const std::vector<std::vector<std::size_t>>& rows, const Tensor& offsets);

enum class Mode { Train, Infer };

/// Inverted dropout: in Train mode each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate). Infer mode is the identity.
Var dropout(Graph& g, Var a, double rate, Mode mode, Rng& rng);

/// Stable softmax and negative log-likelihood of `target`.
struct SoftmaxLoss {
  double loss = 0.0;
  std::vector<double> probabilities;
};
SoftmaxLoss softmax_cross_entropy(std::span<const double> logits, std::size_t target);
std::vector<double> softmax(std::span<const double> logits);

/// Graph version: logits is 1 x k; the result is a 1 x 1 loss node.
Var softmax_cross_entropy(Graph& g, Var logits, std::size_t target);

// Layers.

/// Valid 1-D convolution over time with full-width kernels, then ReLU.
/// kernels: (m*d) x F, bias: 1 x F. Throws ConfigError when L < m.
Var conv1d(Graph& g, Var input, Var kernels, Var bias, std::size_t m);

struct LstmParams {
  Var input_weights;      // d x 4H, gate blocks ordered [input, forget, cell, output]
  Var recurrent_weights;  // H x 4H
  Var bias;               // 1 x 4H
};

struct LstmState {
  Var h;
  Var c;
};

/// f,i,o = sigmoid(.), g = tanh(.), c' = f*c + i*g, h' = o*tanh(c').
LstmState lstm_step(Graph& g, Var x_t, LstmState prev, const LstmParams& p);

/// Runs the cell over the first `steps` rows of the sequence from a zero state.
LstmState lstm_sequence(Graph& g, Var sequence, std::size_t steps, const LstmParams& p);

// Optimizer.

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::size_t step = 0;
};

/// One bias-corrected Adam step using each parameter's grad.
void adam_update(std::span<Parameter* const> params, AdamState& state, const AdamConfig& config = {});

}  // namespace dialectid::nn
