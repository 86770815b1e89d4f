#pragma once

// Central finite-difference oracle for Tape gradients, run in double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "scdnet/rng.hpp"
#include "scdnet/tensor.hpp"

namespace scdnet {

struct GradCheckReport {
  double max_error = 0.0;  // |analytic - fd| / max(1, |fd|)
  std::size_t worst_input = 0;
  Eigen::Index worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

// `build(tape, vars)` must return a scalar Var computed from `vars`, one Var per
// entry of `inputs`. Compares backward() against (f(x+h) - f(x-h)) / 2h on every
// coordinate, or on `max_coords` randomly chosen coordinates per input when set.
template <typename Build>
GradCheckReport check_gradients(const std::vector<Matrix<double>>& inputs, Build&& build,
                                double step = 1e-3, std::size_t max_coords = 0,
                                std::uint64_t seed = 0) {
  auto evaluate = [&](const std::vector<Matrix<double>>& xs, bool with_grad,
                      std::vector<Matrix<double>>* grads) {
    Tape<double> tape;
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(with_grad ? tape.parameter(x) : tape.constant(x));
    const Var loss = build(tape, vars);
    const double value = tape.value(loss)(0, 0);
    if (with_grad) {
      tape.backward(loss);
      grads->clear();
      for (Var v : vars) grads->push_back(tape.grad(v));
    }
    return value;
  };

  std::vector<Matrix<double>> analytic;
  evaluate(inputs, true, &analytic);

  GradCheckReport report;
  Rng rng(seed);
  std::vector<Matrix<double>> work = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Eigen::Index n = inputs[i].size();
    std::vector<Eigen::Index> coords;
    if (max_coords == 0 || static_cast<Eigen::Index>(max_coords) >= n) {
      for (Eigen::Index c = 0; c < n; ++c) coords.push_back(c);
    } else {
      for (std::size_t c = 0; c < max_coords; ++c) coords.push_back(uniform_int(rng, 0, n - 1));
    }
    for (Eigen::Index c : coords) {
      double& slot = work[i].data()[c];
      const double saved = slot;
      slot = saved + step;
      const double plus = evaluate(work, false, nullptr);
      slot = saved - step;
      const double minus = evaluate(work, false, nullptr);
      slot = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[i].data()[c];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      ++report.coordinates;
      if (err > report.max_error || !std::isfinite(err)) {
        report.max_error = std::isfinite(err) ? err : INFINITY;
        report.worst_input = i;
        report.worst_index = c;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace scdnet
