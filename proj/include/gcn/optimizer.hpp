#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "gcn/autograd.hpp"

namespace gcn {

struct AdamHyper {
  double base_lr = 0.0002;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  /// Decoupled decay: p <- p - lr * weight_decay * p, applied alongside the Adam step.
  double weight_decay = 0.0;

  void validate() const {
    if (!(base_lr >= 0) || !std::isfinite(base_lr)) throw ConfigError("adam: base_lr must be finite and >= 0");
    if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("adam: beta1 must lie in [0,1)");
    if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("adam: beta2 must lie in [0,1)");
    if (!(epsilon > 0)) throw ConfigError("adam: epsilon must be > 0");
    if (!(weight_decay >= 0)) throw ConfigError("adam: weight_decay must be >= 0");
  }
};

template <typename Scalar>
struct AdamState {
  std::vector<Tensor<Scalar>> m;
  std::vector<Tensor<Scalar>> v;
  std::int64_t step = 0;

  AdamState() = default;

  explicit AdamState(std::span<const Var<Scalar>> params) {
    for (const auto& p : params) {
      m.push_back(Tensor<Scalar>::zeros(p.shape()));
      v.push_back(Tensor<Scalar>::zeros(p.shape()));
    }
  }
};

/// base_lr * 0.5^floor(batch_index / halving_period)
inline double lr_schedule(double base_lr, std::int64_t batch_index, std::int64_t halving_period) {
  if (halving_period < 1) throw ConfigError("lr_schedule: halving period must be >= 1");
  if (batch_index < 0) throw ConfigError("lr_schedule: negative batch index");
  return std::ldexp(base_lr, -static_cast<int>(std::min<std::int64_t>(batch_index / halving_period, 2000)));
}

/// One bias-corrected Adam update of every parameter from its accumulated grad.
template <typename Scalar>
void adam_step(std::span<Var<Scalar>> params, AdamState<Scalar>& state, const AdamHyper& hyper, double lr) {
  if (!(lr >= 0)) throw ConfigError("adam_step: learning rate must be >= 0");
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state tracks a different parameter list");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const auto b1 = static_cast<Scalar>(hyper.beta1);
  const auto b2 = static_cast<Scalar>(hyper.beta2);
  const auto corr1 = static_cast<Scalar>(1.0 - std::pow(hyper.beta1, t));
  const auto corr2 = static_cast<Scalar>(1.0 - std::pow(hyper.beta2, t));
  const auto eps = static_cast<Scalar>(hyper.epsilon);
  const auto step = static_cast<Scalar>(lr);
  const auto decay = static_cast<Scalar>(lr * hyper.weight_decay);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (state.m[i].shape() != p.shape()) throw ShapeError("adam_step: moment shape differs from parameter");
    auto m = state.m[i].array();
    auto v = state.v[i].array();
    if (p.has_grad()) {
      const auto g = p.node()->grad.array();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.square();
    } else {
      m = b1 * m;
      v = b2 * v;
    }
    auto x = p.mutable_value().array();
    if (decay > 0)
      x -= step * (m / corr1) / ((v / corr2).sqrt() + eps) + decay * x;
    else
      x -= step * (m / corr1) / ((v / corr2).sqrt() + eps);
  }
}

template <typename Scalar>
void zero_grads(std::span<Var<Scalar>> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace gcn
