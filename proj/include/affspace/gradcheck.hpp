#pragma once

#include "affspace/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace affspace {

/// Compares the tape gradient of a scalar function against central finite
/// differences. `f(tape, x)` must build a scalar root from the leaf x.
/// Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
template <typename F>
double finite_diff_check(F&& f, const Tensor<double>& x, double step = 1e-5) {
  if (!(step > 0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  Tensor<double> analytic;
  {
    Tape<double> tape;
    const auto leaf = tape.leaf(x);
    const Var<double> root = f(tape, leaf);
    tape.backward(root);
    analytic = leaf.grad();
  }
  auto eval = [&](const Tensor<double>& at) {
    Tape<double> tape;
    const auto leaf = tape.leaf(at, false);
    return f(tape, leaf).value().item();
  };
  double worst = 0;
  Tensor<double> probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = eval(probe);
    probe[i] = orig - step;
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace affspace
