#pragma once

#include "affspace/nets.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace affspace {

/// base_lr * (1 - iter / total_iters)^power.
inline double poly_lr(double base_lr, std::int64_t iter, std::int64_t total_iters, double power) {
  if (total_iters <= 0) throw std::invalid_argument("poly_lr: total_iters must be positive");
  if (iter < 0 || iter > total_iters)
    throw std::out_of_range("poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                            std::to_string(total_iters) + "]");
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total_iters), power);
}

namespace detail {

template <typename Scalar>
void require_same_layout(const Params<Scalar>& a, const Params<Scalar>& b, const char* op) {
  if (a.size() != b.size()) throw ShapeError(std::string(op) + ": parameter count mismatch");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].shape() != b[i].shape())
      throw ShapeError(std::string(op) + ": shape mismatch for " + a.name(i) + ": " + shape_str(a[i].shape()) +
                       " vs " + shape_str(b[i].shape()));
}

}  // namespace detail

/// Momentum SGD. Weight decay is skipped for tensors named `*.bias`.
///   v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v
template <typename Scalar>
void sgd_step(Params<Scalar>& params, const Params<Scalar>& grads, Params<Scalar>& velocity, double lr,
              double momentum, double weight_decay) {
  detail::require_same_layout(params, grads, "sgd_step");
  detail::require_same_layout(params, velocity, "sgd_step");
  const auto m = static_cast<Scalar>(momentum), l = static_cast<Scalar>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].array();
    auto& v = velocity[i].array();
    const auto wd = static_cast<Scalar>(is_bias(params.name(i)) ? 0.0 : weight_decay);
    v = m * v + grads[i].array() + wd * p;
    p -= l * v;
  }
}

template <typename Scalar>
struct AdamState {
  Params<Scalar> m;
  Params<Scalar> v;
  std::int64_t step = 0;

  static AdamState for_params(const Params<Scalar>& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
};

/// Bias-corrected Adam.
template <typename Scalar>
void adam_step(Params<Scalar>& params, const Params<Scalar>& grads, AdamState<Scalar>& state, double lr,
               double beta1, double beta2, double eps = 1e-8) {
  detail::require_same_layout(params, grads, "adam_step");
  detail::require_same_layout(params, state.m, "adam_step");
  detail::require_same_layout(params, state.v, "adam_step");
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(beta1), b2 = static_cast<Scalar>(beta2);
  const auto step_size = static_cast<Scalar>(lr / c1), inv_sqrt_c2 = static_cast<Scalar>(1.0 / std::sqrt(c2));
  const auto e = static_cast<Scalar>(eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = grads[i].array();
    auto& m = state.m[i].array();
    auto& v = state.v[i].array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    params[i].array() -= step_size * m / (v.sqrt() * inv_sqrt_c2 + e);
  }
}

}  // namespace affspace
