#pragma once

// Finite-difference checks of every differentiable layer. Each case builds a
// scalar loss from parameters, backpropagates once, then perturbs every
// parameter entry and compares central differences with the tape gradients.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dialectid/autodiff.hpp"
#include "dialectid/embeddings.hpp"
#include "dialectid/neural.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

namespace gradcheck {

using namespace dialectid;
using namespace dialectid::nn;

using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

inline Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

/// Worst relative error over every entry of every parameter.
inline double check(std::vector<Parameter>& params, const Builder& build) {
  std::vector<Parameter*> ptrs;
  for (auto& p : params) {
    p.zero_grad();
    ptrs.push_back(&p);
  }
  auto evaluate = [&](bool backward) {
    Graph g;
    std::vector<Var> vars;
    for (auto* p : ptrs) vars.push_back(g.param(*p));
    const Var loss = build(g, vars);
    if (backward) g.backward(loss);
    return g.value(loss)[0];
  };
  evaluate(true);
  double worst = 0.0;
  for (auto& p : params) {
    const Tensor analytic = p.grad;
    worst = std::max(worst, oracle::check_tensor(p.value, analytic, [&] { return evaluate(false); }));
  }
  return worst;
}

/// Projects a node onto a random fixed direction so every output entry
/// contributes to the scalar loss with its own weight.
inline Var project(Graph& g, Var v, const Tensor& direction) {
  return sum_all(g, mul(g, v, g.constant(direction)));
}

struct LayerResult {
  std::string layer;
  std::size_t instances = 0;
  double worst = 0.0;
};

inline std::shared_ptr<const embeddings::EmbeddingModel> tiny_embeddings() {
  embeddings::EmbeddingConfig cfg;
  cfg.dim = 4;
  cfg.bucket_count = 1 << 8;
  cfg.epochs = 1;
  cfg.min_count = 1;
  cfg.seed = 5;
  const auto data = testing_support::separable_dataset(2, 20, 77);
  return std::make_shared<const embeddings::EmbeddingModel>(embeddings::train_embeddings(data, cfg));
}

inline NetworkConfig tiny_network(Architecture arch, std::uint64_t seed) {
  NetworkConfig config = default_config(arch);
  if (auto* c = std::get_if<CnnConfig>(&config)) {
    c->filter_sizes = {2, 3};
    c->filters_per_size = 3;
  } else if (auto* c = std::get_if<LstmConfig>(&config)) {
    c->hidden_size = 3;
  } else if (auto* c = std::get_if<CLstmConfig>(&config)) {
    c->kernel_sizes = {2, 3};
    c->filters = 3;
    c->hidden_size = 3;
  }
  training_of(config).seed = seed;
  training_of(config).dropout = 0.3;
  return config;
}

/// Runs `instances` random cases per layer and reports the worst error of each.
inline std::vector<LayerResult> run_suite(std::size_t instances, std::uint64_t seed) {
  std::vector<LayerResult> results;
  Rng rng(seed);
  auto run = [&](const std::string& name, const std::function<double()>& one) {
    LayerResult r{name, instances, 0.0};
    for (std::size_t i = 0; i < instances; ++i) r.worst = std::max(r.worst, one());
    results.push_back(r);
  };

  run("dense", [&] {
    const std::size_t n = rng.between(1, 3), d = rng.between(2, 5), k = rng.between(2, 4);
    std::vector<Parameter> p{{"x", random_tensor(rng, n, d)}, {"w", random_tensor(rng, d, k)},
                             {"b", random_tensor(rng, 1, k)}};
    const auto dir = random_tensor(rng, n, k);
    return check(p, [&](Graph& g, const std::vector<Var>& v) {
      return project(g, add_row(g, matmul(g, v[0], v[1]), v[2]), dir);
    });
  });

  run("activations", [&] {
    const std::size_t n = rng.between(1, 3), d = rng.between(2, 5);
    std::vector<Parameter> p{{"x", random_tensor(rng, n, d, 2.0)}, {"y", random_tensor(rng, n, d, 2.0)}};
    const auto dir = random_tensor(rng, n, d);
    return check(p, [&](Graph& g, const std::vector<Var>& v) {
      const Var s = sigmoid(g, v[0]);
      const Var t = tanh(g, v[1]);
      return project(g, add(g, mul(g, s, t), scale(g, relu(g, v[0]), 0.5)), dir);
    });
  });

  run("slice_concat_unfold", [&] {
    const std::size_t L = rng.between(3, 6), d = rng.between(2, 4), m = rng.between(1, 3);
    std::vector<Parameter> p{{"x", random_tensor(rng, L, d)}};
    const auto dir = random_tensor(rng, L - m + 1, m * d + 1);
    return check(p, [&](Graph& g, const std::vector<Var>& v) {
      const Var u = unfold(g, v[0], m);
      const Var extra = slice_cols(g, slice_rows(g, v[0], 0, L - m + 1), 0, 1);
      const std::vector<Var> parts{u, extra};
      return project(g, concat_cols(g, parts), dir);
    });
  });

  run("max_over_time", [&] {
    const std::size_t T = rng.between(1, 6), F = rng.between(1, 4);
    std::vector<Parameter> p{{"x", random_tensor(rng, T, F)}};
    const auto dir = random_tensor(rng, 1, F);
    return check(p, [&](Graph& g, const std::vector<Var>& v) { return project(g, max_over_time(g, v[0]), dir); });
  });

  run("embedding_bag", [&] {
    const std::size_t V = rng.between(3, 6), d = rng.between(2, 4), T = rng.between(1, 4);
    std::vector<std::vector<std::size_t>> rows(T);
    for (auto& r : rows) {
      const auto n = rng.between(1, 3);
      for (std::size_t i = 0; i < n; ++i) r.push_back(rng.below(V));  // repeats allowed
    }
    const auto offsets = random_tensor(rng, T, d);
    std::vector<Parameter> p{{"table", random_tensor(rng, V, d)}};
    const auto dir = random_tensor(rng, T, d);
    return check(p, [&](Graph& g, const std::vector<Var>& v) {
      return project(g, embedding_bag(g, v[0], rows, offsets), dir);
    });
  });

  run("dropout", [&] {
    const std::size_t n = rng.between(1, 4), d = rng.between(2, 6);
    const auto mask_seed = rng.next_u64();
    std::vector<Parameter> p{{"x", random_tensor(rng, n, d)}};
    const auto dir = random_tensor(rng, n, d);
    return check(p, [&](Graph& g, const std::vector<Var>& v) {
      Rng mask(mask_seed);  // same mask on every evaluation
      return project(g, dropout(g, v[0], 0.4, Mode::Train, mask), dir);
    });
  });

  run("softmax_cross_entropy", [&] {
    const std::size_t k = rng.between(2, 6);
    const std::size_t target = rng.below(k);
    std::vector<Parameter> p{{"logits", random_tensor(rng, 1, k, 3.0)}};
    return check(p, [&](Graph& g, const std::vector<Var>& v) { return softmax_cross_entropy(g, v[0], target); });
  });

  run("conv1d", [&] {
    const std::size_t m = rng.between(1, 3), d = rng.between(2, 4), F = rng.between(1, 4);
    const std::size_t L = m + rng.between(0, 4);
    std::vector<Parameter> p{{"x", random_tensor(rng, L, d)}, {"k", random_tensor(rng, m * d, F)},
                             {"b", random_tensor(rng, 1, F)}};
    const auto dir = random_tensor(rng, L - m + 1, F);
    return check(p, [&](Graph& g, const std::vector<Var>& v) { return project(g, conv1d(g, v[0], v[1], v[2], m), dir); });
  });

  run("lstm_step", [&] {
    const std::size_t d = rng.between(1, 4), H = rng.between(1, 4);
    std::vector<Parameter> p{{"x", random_tensor(rng, 1, d)},      {"h", random_tensor(rng, 1, H)},
                             {"c", random_tensor(rng, 1, H)},      {"w", random_tensor(rng, d, 4 * H)},
                             {"u", random_tensor(rng, H, 4 * H)},  {"b", random_tensor(rng, 1, 4 * H)}};
    const auto dir_h = random_tensor(rng, 1, H);
    const auto dir_c = random_tensor(rng, 1, H);
    return check(p, [&](Graph& g, const std::vector<Var>& v) {
      const auto s = lstm_step(g, v[0], {v[1], v[2]}, {v[3], v[4], v[5]});
      return add(g, project(g, s.h, dir_h), project(g, s.c, dir_c));
    });
  });

  run("lstm_sequence", [&] {
    const std::size_t d = rng.between(1, 3), H = rng.between(1, 3), L = rng.between(1, 5);
    const std::size_t steps = rng.between(1, L);
    std::vector<Parameter> p{{"x", random_tensor(rng, L, d)},
                             {"w", random_tensor(rng, d, 4 * H)},
                             {"u", random_tensor(rng, H, 4 * H)},
                             {"b", random_tensor(rng, 1, 4 * H)}};
    const auto dir = random_tensor(rng, 1, H);
    return check(p, [&](Graph& g, const std::vector<Var>& v) {
      return project(g, lstm_sequence(g, v[0], steps, {v[1], v[2], v[3]}).h, dir);
    });
  });

  const auto emb = tiny_embeddings();
  const auto data = testing_support::separable_dataset(2, 20, 78);
  std::vector<std::vector<std::string>> table_tokens;
  for (const auto& s : data) table_tokens.push_back(s.tokens);
  const std::vector<VarietyLabel> labels{VarietyLabel("AA"), VarietyLabel("BB")};
  for (const auto arch : {Architecture::CNN, Architecture::LSTM, Architecture::CLSTM}) {
    run("network_" + to_string(arch), [&] {
      NeuralClassifier model(tiny_network(arch, rng.next_u64()), labels, emb, table_tokens);
      const auto& s = data[rng.below(data.size())];
      const auto encoded = model.encode(s.tokens);
      const std::size_t target = s.variety == labels[0] ? 0 : 1;
      const auto dropout_seed = rng.next_u64();
      auto& params = model.parameters();
      return check(params, [&](Graph& g, const std::vector<Var>&) {
        Rng mask(dropout_seed);
        return sentence_loss(model, g, encoded, target, Mode::Train, mask);
      });
    });
  }
  return results;
}

}  // namespace gradcheck
