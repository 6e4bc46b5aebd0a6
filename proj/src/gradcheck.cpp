#include "gcn/gradcheck.hpp"

#include <algorithm>

namespace gcn {

namespace {

/// Identity forward whose backward is scaled by 1.5.
Var<double> corrupt_backward(const Var<double>& x) {
  return make_op<double>("corrupted", x.value(), {x}, [](Node<double>& n) {
    n.parents[0]->grad_buffer().array() += 1.5 * n.grad.array();
  });
}

Tensor<double> random_input(Shape shape, RngState& rng, double min_magnitude = 0.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) {
    do {
      v = rng.gaussian(0.0, 1.0);
    } while (std::abs(v) < min_magnitude);
  }
  return t;
}

std::vector<Index> random_labels(Index n, Index classes, RngState& rng) {
  std::vector<Index> y(static_cast<std::size_t>(n));
  for (auto& v : y) v = static_cast<Index>(rng.below(static_cast<std::uint64_t>(classes)));
  return y;
}

void merge(GradcheckReport& into, const GradcheckReport& one, int case_number) {
  into.cases += 1;
  if (one.worst_error > into.worst_error || into.worst_case < 0) {
    into.worst_error = std::max(into.worst_error, one.worst_error);
    into.worst_case = case_number;
    into.worst_input = one.worst_input;
    into.worst_element = one.worst_element;
  }
  into.passed = into.passed && one.passed;
}

using CaseBuilder = std::function<void(RngState&, int case_number, std::vector<Tensor<double>>& inputs,
                                       GradcheckForward& forward)>;

struct LayerCases {
  std::string name;
  CaseBuilder build;
};

constexpr int kCasesPerLayer = 5;

std::vector<LayerCases> all_layers() {
  std::vector<LayerCases> layers;

  layers.push_back({"fully_connected", [](RngState& rng, int c, auto& inputs, auto& fwd) {
                      const Index batch = 1 + c, in = 2 + (c * 3) % 5, out = 1 + (c * 2) % 4;
                      inputs = {random_input({batch, in}, rng), random_input({in, out}, rng),
                                random_input({out}, rng)};
                      fwd = [](const auto& v) { return fully_connected(v[0], v[1], v[2]); };
                    }});

  layers.push_back({"conv2d", [](RngState& rng, int c, auto& inputs, auto& fwd) {
                      // (N, C, H, O, k, s, p), all exactly divisible
                      static const Index cfg[kCasesPerLayer][7] = {
                          {1, 1, 4, 1, 3, 1, 0}, {2, 2, 5, 3, 3, 1, 1}, {1, 3, 6, 2, 4, 2, 1},
                          {2, 2, 7, 2, 3, 2, 0}, {1, 2, 8, 3, 4, 2, 1}};
                      const auto* g = cfg[c];
                      ConvSpec spec{g[1], g[3], g[4], g[5], g[6]};
                      inputs = {random_input({g[0], g[1], g[2], g[2]}, rng),
                                random_input({g[3], g[1], g[4], g[4]}, rng), random_input({g[3]}, rng)};
                      fwd = [spec](const auto& v) { return conv2d(v[0], spec, v[1], v[2]); };
                    }});

  layers.push_back({"deconv2d", [](RngState& rng, int c, auto& inputs, auto& fwd) {
                      // (N, Cin, H, Cout, k, s, p)
                      static const Index cfg[kCasesPerLayer][7] = {
                          {1, 1, 2, 1, 2, 2, 0}, {2, 2, 3, 2, 4, 2, 1}, {1, 3, 2, 2, 4, 2, 0},
                          {2, 2, 3, 1, 3, 1, 1}, {1, 2, 4, 3, 3, 2, 1}};
                      const auto* g = cfg[c];
                      DeconvSpec spec;
                      spec.in_channels = g[1];
                      spec.out_channels = g[3];
                      spec.kernel_size = g[4];
                      spec.stride = g[5];
                      spec.pad = g[6];
                      inputs = {random_input({g[0], g[1], g[2], g[2]}, rng),
                                random_input({g[1], g[3], g[4], g[4]}, rng), random_input({g[3]}, rng)};
                      fwd = [spec](const auto& v) { return deconv2d(v[0], spec, v[1], v[2]); };
                    }});

  layers.push_back({"leaky_relu", [](RngState& rng, int c, auto& inputs, auto& fwd) {
                      const double slope = (c % 2 == 0) ? 0.1 : 0.2;
                      // keep inputs away from the kink so central differences are valid
                      inputs = {random_input({1 + c, 3 + c}, rng, 1e-3)};
                      fwd = [slope](const auto& v) { return leaky_relu(v[0], slope); };
                    }});

  layers.push_back({"concat", [](RngState& rng, int c, auto& inputs, auto& fwd) {
                      const Index axis = c % 3;
                      Shape a{2, 3, 2}, b{2, 3, 2};
                      a[axis] = 1 + c % 2;
                      b[axis] = 2 + c % 3;
                      Shape d = a;
                      d[axis] = 1;
                      inputs = {random_input(a, rng), random_input(b, rng), random_input(d, rng)};
                      fwd = [axis](const auto& v) { return concat(std::vector<Var<double>>{v[0], v[1], v[2]}, axis); };
                    }});

  layers.push_back({"reshape", [](RngState& rng, int c, auto& inputs, auto& fwd) {
                      static const Index cfg[kCasesPerLayer][4] = {
                          {6, 1, 2, 3}, {12, 3, 2, 2}, {8, 2, 2, 2}, {16, 1, 4, 4}, {18, 2, 3, 3}};
                      const auto* g = cfg[c];
                      inputs = {random_input({g[0]}, rng)};
                      Shape target{g[1], g[2], g[3]};
                      fwd = [target](const auto& v) { return reshape(v[0], target); };
                    }});

  layers.push_back({"softmax_cross_entropy", [](RngState& rng, int c, auto& inputs, auto& fwd) {
                      const Index batch = 1 + c, classes = 2 + c;
                      inputs = {random_input({batch, classes}, rng)};
                      auto labels = random_labels(batch, classes, rng);
                      fwd = [labels](const auto& v) { return softmax_cross_entropy<double>(v[0], labels); };
                    }});

  layers.push_back({"mse_pixel_loss", [](RngState& rng, int c, auto& inputs, auto& fwd) {
                      const Shape s{1 + c % 3, 1 + c % 2, 2 + c, 2 + c};
                      inputs = {random_input(s, rng), random_input(s, rng)};
                      fwd = [](const auto& v) { return mse_pixel_loss(v[0], v[1]); };
                    }});

  layers.push_back({"max_pool2d", [](RngState& rng, int c, auto& inputs, auto& fwd) {
                      static const Index cfg[kCasesPerLayer][5] = {
                          {1, 1, 4, 2, 2}, {2, 2, 4, 2, 2}, {1, 2, 7, 3, 2}, {2, 1, 6, 3, 3}, {1, 3, 5, 3, 1}};
                      const auto* g = cfg[c];
                      inputs = {random_input({g[0], g[1], g[2], g[2]}, rng)};
                      const Index k = g[3], s = g[4];
                      fwd = [k, s](const auto& v) { return max_pool2d(v[0], k, s); };
                    }});

  layers.push_back({"matmul", [](RngState& rng, int c, auto& inputs, auto& fwd) {
                      const Index m = 1 + c, k = 2 + (c * 2) % 3, n = 1 + (c * 3) % 4;
                      inputs = {random_input({m, k}, rng), random_input({k, n}, rng)};
                      fwd = [](const auto& v) { return matmul(v[0], v[1]); };
                    }});

  return layers;
}

}  // namespace

std::vector<std::string> gradcheck_layers() {
  std::vector<std::string> names;
  for (const auto& l : all_layers()) names.push_back(l.name);
  return names;
}

GradcheckReport check_gradients(const std::string& name, const GradcheckForward& forward,
                                const std::vector<Tensor<double>>& inputs, RngState& rng, double eps,
                                double tolerance) {
  GradcheckReport report;
  report.layer = name;
  report.cases = 1;

  // Fixed random projection turns a tensor-valued layer into a scalar objective.
  auto objective = [&](const std::vector<Var<double>>& vars, const Tensor<double>* projection) {
    Var<double> out = forward(vars);
    if (out.value().size() == 1) return out;
    return sum(out * Var<double>::constant(*projection));
  };

  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(Var<double>::parameter(t));
  Var<double> probe_out = forward(vars);
  Tensor<double> projection = random_input(probe_out.shape(), rng);

  Var<double> loss = objective(vars, &projection);
  backward(loss);

  for (std::size_t slot = 0; slot < inputs.size(); ++slot) {
    std::function<double(const Tensor<double>&)> f = [&](const Tensor<double>& x) {
      std::vector<Var<double>> cvars;
      for (std::size_t j = 0; j < inputs.size(); ++j)
        cvars.push_back(Var<double>::constant(j == slot ? x : inputs[j]));
      return objective(cvars, &projection).item();
    };
    const Tensor<double> numeric = finite_difference_grad(f, inputs[slot], eps);
    const Tensor<double> analytic = vars[slot].grad();
    for (Index i = 0; i < numeric.size(); ++i) {
      const double e = gradient_error(analytic[i], numeric[i]);
      if (e > report.worst_error || report.worst_input < 0) {
        report.worst_error = std::max(report.worst_error, e);
        report.worst_input = static_cast<int>(slot);
        report.worst_element = i;
      }
    }
  }
  report.passed = report.worst_error < tolerance;
  return report;
}

std::vector<GradcheckReport> run_gradcheck_suite(const GradcheckOptions& options) {
  std::vector<GradcheckReport> reports;
  for (const auto& layer : all_layers()) {
    if (!options.layers.empty() &&
        std::find(options.layers.begin(), options.layers.end(), layer.name) == options.layers.end())
      continue;
    GradcheckReport total;
    total.layer = layer.name;
    total.cases = 0;
    RngState rng(mix_seed(options.seed, fnv1a64(layer.name)));
    for (int c = 0; c < kCasesPerLayer; ++c) {
      std::vector<Tensor<double>> inputs;
      GradcheckForward forward;
      layer.build(rng, c, inputs, forward);
      if (layer.name == options.corrupt_layer) {
        forward = [inner = forward](const std::vector<Var<double>>& v) { return corrupt_backward(inner(v)); };
      }
      merge(total, check_gradients(layer.name, forward, inputs, rng, options.eps, options.tolerance), c);
    }
    reports.push_back(total);
  }
  return reports;
}

}  // namespace gcn
