#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gcn/layers.hpp"

namespace gcn {

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps), one element at a time.
template <typename Scalar>
Tensor<Scalar> finite_difference_grad(const std::function<Scalar(const Tensor<Scalar>&)>& f,
                                      const Tensor<Scalar>& x, Scalar eps) {
  if (!(eps > 0)) throw ContractError("finite_difference_grad requires eps > 0");
  Tensor<Scalar> probe = x;
  Tensor<Scalar> grad(x.shape());
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar orig = probe[i];
    probe[i] = orig + eps;
    const Scalar up = f(probe);
    probe[i] = orig - eps;
    const Scalar down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (Scalar(2) * eps);
  }
  return grad;
}

/// Relative discrepancy with an absolute floor: differences below abs_floor count as zero.
inline double gradient_error(double analytic, double numeric, double abs_floor = 1e-7) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= abs_floor) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

struct GradcheckReport {
  std::string layer;
  int cases = 0;
  double worst_error = 0.0;
  /// Where the worst error occurred: case number, input slot and flat element index.
  int worst_case = -1;
  int worst_input = -1;
  Index worst_element = -1;
  bool passed = true;
};

struct GradcheckOptions {
  double tolerance = 1e-4;
  double eps = 1e-5;
  std::uint64_t seed = 2017;
  /// Layers to run; empty runs all of them.
  std::vector<std::string> layers;
  /// Name of a layer whose backward gets corrupted, for exercising the failure path.
  std::string corrupt_layer;
};

/// Names of every layer the suite covers, in report order.
std::vector<std::string> gradcheck_layers();

/// Checks every covered layer against central differences in double precision on
/// several random shapes. One report per layer, in gradcheck_layers() order.
std::vector<GradcheckReport> run_gradcheck_suite(const GradcheckOptions& options = {});

/// Generic check: compares backward() of sum(forward(inputs) * projection) with central
/// differences for every element of every input.
using GradcheckForward = std::function<Var<double>(const std::vector<Var<double>>&)>;
GradcheckReport check_gradients(const std::string& name, const GradcheckForward& forward,
                                const std::vector<Tensor<double>>& inputs, RngState& rng, double eps,
                                double tolerance);

}  // namespace gcn
