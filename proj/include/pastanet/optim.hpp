#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "pastanet/tape.hpp"

namespace pastanet::diff {

/// Per-parameter slot tensors plus a step counter.
template <typename T>
struct OptimizerState {
  std::unordered_map<std::string, Tensor<T>> slots;
  std::uint64_t step = 0;

  Tensor<T>& slot(const Param<T>& p) {
    auto it = slots.find(p.name);
    if (it == slots.end()) it = slots.emplace(p.name, Tensor<T>(p.value.shape)).first;
    if (it->second.shape != p.value.shape)
      throw data_error("optimizer slot shape does not match parameter " + p.name);
    return it->second;
  }
};

template <typename T>
void check_finite_grad(const Param<T>& p) {
  if (!p.grad.all_finite())
    throw numeric_error("non-finite gradient for parameter '" + p.name + "'");
}

/// v <- momentum*v + g;  p <- p - lr*v
template <typename T>
void sgd_momentum_step(ParamStore<T>& params, OptimizerState<T>& state, double lr,
                       double momentum = 0.9) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<T>& p = params.at(i);
    check_finite_grad(p);
    Tensor<T>& v = state.slot(p);
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      v[j] = static_cast<T>(momentum * v[j] + p.grad[j]);
      p.value[j] -= static_cast<T>(lr * v[j]);
    }
  }
  ++state.step;
}

/// s <- decay*s + (1-decay)*g^2;  p <- p - lr*g/(sqrt(s)+eps)
template <typename T>
void rmsprop_step(ParamStore<T>& params, OptimizerState<T>& state, double lr, double decay = 0.9,
                  double eps = 1e-8) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<T>& p = params.at(i);
    check_finite_grad(p);
    Tensor<T>& s = state.slot(p);
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      double g = p.grad[j];
      s[j] = static_cast<T>(decay * s[j] + (1.0 - decay) * g * g);
      p.value[j] -= static_cast<T>(lr * g / (std::sqrt(static_cast<double>(s[j])) + eps));
    }
  }
  ++state.step;
}

/// Cosine decay with warm restarts. Cycle i has length
/// first_decay_steps * t_mul^i; within a cycle with completed fraction f,
/// lr = lr0 * m_mul^i * (alpha + (1-alpha) * (1+cos(pi f))/2).
inline double cosine_decay_restarts(double lr0, std::uint64_t step,
                                    std::uint64_t first_decay_steps, double t_mul = 2.0,
                                    double m_mul = 1.0, double alpha = 0.0) {
  if (first_decay_steps == 0) throw usage_error("first_decay_steps must be >= 1");
  double remaining = static_cast<double>(step);
  double cycle_len = static_cast<double>(first_decay_steps);
  double m = 1.0;
  while (remaining >= cycle_len) {
    remaining -= cycle_len;
    cycle_len *= t_mul;
    m *= m_mul;
  }
  double f = remaining / cycle_len;
  constexpr double kPi = 3.14159265358979323846;
  return lr0 * m * (alpha + (1.0 - alpha) * 0.5 * (1.0 + std::cos(kPi * f)));
}

}  // namespace pastanet::diff
