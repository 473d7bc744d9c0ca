#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "pastanet/tape.hpp"

namespace pastanet::diff {

struct GradCheckReport {
  double max_rel_error = 0;
  std::string worst_param;
  std::size_t checked_elements = 0;
};

/// Central-difference verification of every parameter element against the
/// reverse-mode gradient, in 64-bit. The builder constructs the forward
/// graph on a fresh tape and returns the scalar loss node.
inline GradCheckReport grad_check(ParamStore<double>& params,
                                  const std::function<int(Tape<double>&)>& build,
                                  double eps = 1e-5) {
  params.zero_grads();
  Tape<double> tape;
  int loss_id = build(tape);
  double base = tape.val(loss_id)[0];
  if (!std::isfinite(base)) throw numeric_error("grad_check: non-finite loss");
  tape.backward(loss_id);

  auto eval = [&]() {
    Tape<double> t;
    double loss = t.val(build(t))[0];
    if (!std::isfinite(loss)) throw numeric_error("grad_check: non-finite loss under perturbation");
    return loss;
  };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param<double>& p = params.at(pi);
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      double saved = p.value[j];
      double analytic = p.grad[j];
      double rel = std::numeric_limits<double>::infinity();
      // Retry disagreeing elements over a small step bracket and keep the
      // best match: a perturbation straddling a ReLU/max kink pollutes the
      // central difference at one step size but not at a smaller one, while
      // a genuinely wrong analytic gradient fails at every step size.
      for (double step : {eps, eps / 8, eps * 8}) {
        p.value[j] = saved + step;
        double fp = eval();
        p.value[j] = saved - step;
        double fm = eval();
        p.value[j] = saved;
        double numeric = (fp - fm) / (2 * step);
        rel = std::min(rel, std::abs(analytic - numeric) /
                                std::max({std::abs(analytic), std::abs(numeric), 1e-8}));
        if (rel <= 1e-6) break;
      }
      ++report.checked_elements;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name + "[" + std::to_string(j) + "]";
      }
    }
  }
  return report;
}

}  // namespace pastanet::diff
