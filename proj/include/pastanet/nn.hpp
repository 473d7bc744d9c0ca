#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "pastanet/tape.hpp"

namespace pastanet::diff {

/// Gated LSTM cell parameters: gates packed [input, forget, output, candidate].
template <typename T>
struct LstmParams {
  Param<T>* wx = nullptr;  // [d_in, 4H]
  Param<T>* wh = nullptr;  // [H, 4H]
  Param<T>* b = nullptr;   // [4H]
  std::size_t hidden = 0;

  static LstmParams create(ParamStore<T>& ps, const std::string& prefix, std::size_t d_in,
                           std::size_t hidden, std::uint64_t seed) {
    LstmParams p;
    p.hidden = hidden;
    p.wx = &ps.create_glorot(prefix + "/wx", {d_in, 4 * hidden}, seed, d_in, 4 * hidden);
    p.wh = &ps.create_glorot(prefix + "/wh", {hidden, 4 * hidden}, seed, hidden, 4 * hidden);
    p.b = &ps.create(prefix + "/b", {4 * hidden});
    return p;
  }
};

/// Standard gated cell update; returns (h', c'). Built from tape primitives,
/// so backward-through-time falls out of the reverse pass.
template <typename T>
std::pair<int, int> lstm_cell(Tape<T>& t, int x, int h, int c, const LstmParams<T>& p) {
  int z = t.add(t.fc(x, t.param(*p.wx), t.param(*p.b)), t.fc(h, t.param(*p.wh)));
  std::size_t H = p.hidden;
  int gi = t.sigmoid(t.narrow_cols(z, 0, H));
  int gf = t.sigmoid(t.narrow_cols(z, H, H));
  int go = t.sigmoid(t.narrow_cols(z, 2 * H, H));
  int gg = t.tanh_op(t.narrow_cols(z, 3 * H, H));
  int c_next = t.add(t.mul(gf, c), t.mul(gi, gg));
  int h_next = t.mul(go, t.tanh_op(c_next));
  return {h_next, c_next};
}

/// Symmetric normalization with self-loops: A_hat = D^{-1/2} (A+I) D^{-1/2}.
/// The adjacency must be square and non-negative; the self-loop guarantees
/// every degree is at least one.
template <typename T>
Tensor<T> normalize_adjacency(const Tensor<T>& adjacency) {
  if (adjacency.rank() != 2 || adjacency.shape[0] != adjacency.shape[1])
    throw data_error("adjacency must be square");
  std::size_t v = adjacency.shape[0];
  Tensor<T> a = adjacency;
  for (const T& x : a.v)
    if (x < T(0)) throw data_error("adjacency must be non-negative");
  for (std::size_t i = 0; i < v; ++i) a[i * v + i] += T(1);
  std::vector<T> dinv(v);
  for (std::size_t i = 0; i < v; ++i) {
    T deg = 0;
    for (std::size_t j = 0; j < v; ++j) deg += a[i * v + j];
    dinv[i] = T(1) / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < v; ++i)
    for (std::size_t j = 0; j < v; ++j) a[i * v + j] *= dinv[i] * dinv[j];
  return a;
}

/// One graph convolution over per-sample node features x:[n, v*d_in]:
/// y = relu(A_hat X W), A_hat already normalized.
template <typename T>
int gcn_layer(Tape<T>& t, int x, const Tensor<T>& a_hat, std::size_t nodes, std::size_t d_in,
              std::size_t d_out, Param<T>& w) {
  std::size_t n = t.val(x).shape[0];
  int flat = t.reshape(x, {n * nodes, d_in});
  int mixed_features = t.reshape(t.fc(flat, t.param(w)), {n, nodes * d_out});
  return t.relu(t.graph_mix(mixed_features, a_hat, nodes, d_out));
}

/// FC stack helper: hidden layers with ReLU, then a linear output layer.
template <typename T>
struct Mlp {
  std::vector<Param<T>*> weights;
  std::vector<Param<T>*> biases;

  static Mlp create(ParamStore<T>& ps, const std::string& prefix, std::size_t d_in,
                    const std::vector<std::size_t>& hidden, std::size_t d_out,
                    std::uint64_t seed) {
    Mlp m;
    std::size_t prev = d_in;
    std::vector<std::size_t> dims = hidden;
    dims.push_back(d_out);
    for (std::size_t i = 0; i < dims.size(); ++i) {
      std::string name = prefix + "/fc" + std::to_string(i);
      m.weights.push_back(&ps.create_glorot(name + "/w", {prev, dims[i]}, seed, prev, dims[i]));
      m.biases.push_back(&ps.create(name + "/b", {dims[i]}));
      prev = dims[i];
    }
    return m;
  }

  int build(Tape<T>& t, int x) const {
    int cur = x;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      cur = t.fc(cur, t.param(*weights[i]), t.param(*biases[i]));
      if (i + 1 < weights.size()) cur = t.relu(cur);
    }
    return cur;
  }

  /// Like build, but also reports the activation of the last hidden layer.
  int build_with_penultimate(Tape<T>& t, int x, int* penultimate) const {
    int cur = x;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      cur = t.relu(t.fc(cur, t.param(*weights[i]), t.param(*biases[i])));
    }
    if (penultimate) *penultimate = cur;
    return t.fc(cur, t.param(*weights.back()), t.param(*biases.back()));
  }
};

}  // namespace pastanet::diff
