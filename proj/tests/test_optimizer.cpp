#include "doctest.h"

#include "gcn/optimizer.hpp"

using namespace gcn;

namespace {

/// Scalar Adam in long double, written out from the update rule.
struct ReferenceAdam {
  long double m = 0, v = 0, p = 0;
  int t = 0;
  void step(long double g, long double lr, long double b1, long double b2, long double eps) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const long double mhat = m / (1 - std::pow(b1, static_cast<long double>(t)));
    const long double vhat = v / (1 - std::pow(b2, static_cast<long double>(t)));
    p -= lr * mhat / (std::sqrt(vhat) + eps);
  }
};

void set_grad(Var<double>& p, double g) {
  p.node()->grad_buffer().fill(g);
}

}  // namespace

TEST_CASE("adam_step: first step moves each element by lr") {
  std::vector<Var<double>> params{Var<double>::parameter(Tensor<double>::zeros({3}))};
  AdamState<double> state(params);
  AdamHyper hyper;
  set_grad(params[0], 0.37);
  adam_step<double>(params, state, hyper, hyper.base_lr);
  for (double x : params[0].value().values()) CHECK(x == doctest::Approx(-0.0002).epsilon(1e-6));
  CHECK(state.step == 1);
}

TEST_CASE("adam_step: zero gradient from zero state is a fixed point") {
  RngState rng(1);
  auto init = Tensor<float>::gaussian({4, 4}, 0, 1, rng);
  std::vector<Var<float>> params{Var<float>::parameter(init)};
  AdamState<float> state(params);
  params[0].node()->grad_buffer();
  adam_step<float>(params, state, AdamHyper{}, 0.0002);
  CHECK(params[0].value() == init);
}

TEST_CASE("adam_step: two steps match the scalar reference") {
  std::vector<Var<double>> params{Var<double>::parameter(Tensor<double>::zeros({1}))};
  AdamState<double> state(params);
  AdamHyper hyper;
  ReferenceAdam ref;
  for (int i = 0; i < 2; ++i) {
    params[0].zero_grad();
    set_grad(params[0], 1.0);
    adam_step<double>(params, state, hyper, hyper.base_lr);
    ref.step(1.0L, hyper.base_lr, hyper.beta1, hyper.beta2, hyper.epsilon);
  }
  CHECK(std::abs(params[0].value()[0] - static_cast<double>(ref.p)) < 1e-12);
}

TEST_CASE("adam_step: converges on a quadratic") {
  std::vector<Var<double>> params{Var<double>::parameter(Tensor<double>::scalar(1.0))};
  AdamState<double> state(params);
  AdamHyper hyper;
  int steps = 0;
  for (; steps < 10000 && std::abs(params[0].value()[0]) >= 1e-3; ++steps) {
    params[0].zero_grad();
    backward(scale(params[0] * params[0], 0.5));
    adam_step<double>(params, state, hyper, hyper.base_lr);
  }
  CHECK(std::abs(params[0].value()[0]) < 1e-3);
}

TEST_CASE("adam_step: decoupled decay and shape checks") {
  std::vector<Var<double>> params{Var<double>::parameter(Tensor<double>::constant({2}, 2.0))};
  AdamState<double> state(params);
  AdamHyper hyper;
  hyper.weight_decay = 0.0005;
  params[0].node()->grad_buffer();
  adam_step<double>(params, state, hyper, 0.1);
  // zero gradient: only the decay term acts
  CHECK(params[0].value()[0] == doctest::Approx(2.0 - 0.1 * 0.0005 * 2.0).epsilon(1e-14));

  AdamState<double> wrong;
  CHECK_THROWS_AS(adam_step<double>(params, wrong, hyper, 0.1), ShapeError);

  AdamHyper bad;
  bad.beta2 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("lr_schedule: halving every period") {
  CHECK(lr_schedule(0.0002, 0, 1000) == 0.0002);
  CHECK(lr_schedule(0.0002, 999, 1000) == 0.0002);
  CHECK(lr_schedule(0.0002, 1000, 1000) == 0.0001);
  CHECK(lr_schedule(0.0002, 2500, 1000) == 0.00005);
  double prev = lr_schedule(0.0002, 0, 7);
  for (std::int64_t b = 1; b < 200; ++b) {
    const double cur = lr_schedule(0.0002, b, 7);
    CHECK(cur <= prev);
    CHECK((cur == prev) == (b % 7 != 0));
    prev = cur;
  }
  CHECK_THROWS_AS(lr_schedule(0.0002, 1, 0), ConfigError);
}
