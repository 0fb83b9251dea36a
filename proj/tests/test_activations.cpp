#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cvnn/activations.hpp"
#include "cvnn/autodiff.hpp"
#include "cvnn/rng.hpp"
#include "test_support.hpp"

using namespace cvnn;

namespace {

ComplexTensor z1(double re, double im) { return ComplexTensor::scalar(re, im); }

void check_z(const ComplexTensor& t, double re, double im, double tol = 1e-12) {
  CHECK(std::fabs(t.re()[0] - re) <= tol);
  CHECK(std::fabs(t.im()[0] - im) <= tol);
}

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace

TEST_CASE("crelu examples") {
  check_z(crelu(z1(-1, 2)), 0, 2);
  check_z(crelu(z1(3, -4)), 3, 0);
  check_z(crelu(z1(-1, -1)), 0, 0);
}

TEST_CASE("modrelu examples") {
  const RealTensor b1({1}, {-1.0});
  // |3+4i| = 5, scale (5 - 1) / 5
  check_z(modrelu(z1(3, 4), b1), 3.0 * 4.0 / 5.0, 4.0 * 4.0 / 5.0);
  check_z(modrelu(z1(1, 0), RealTensor({1}, {-2.0})), 0, 0);
  check_z(modrelu(z1(-0.7, 1.9), RealTensor({1}, {0.0})), -0.7, 1.9);
  check_z(modrelu(z1(0, 0), RealTensor({1}, {3.0})), 0, 0);
}

TEST_CASE("zrelu examples") {
  check_z(zrelu(z1(1, 2)), 1, 2);
  check_z(zrelu(z1(-1, 2)), 0, 0);
  check_z(zrelu(z1(1, -0.5)), 0, 0);
  check_z(zrelu(z1(0, 2)), 0, 2);  // boundary is kept
}

TEST_CASE("smooth_zrelu examples") {
  check_z(smooth_zrelu(z1(0, 0), 1.0), 0, 0);
  const double s = sigmoid(1.0) * sigmoid(1.0);
  check_z(smooth_zrelu(z1(1, 1), 1.0), s, s);
  CHECK(std::fabs(smooth_zrelu(z1(1, 1), 1.0).re()[0] - 0.534447) < 1e-6);
  check_z(smooth_zrelu(z1(50, 60), 1.0), 50, 60, 1e-9);
  CHECK_THROWS_AS(smooth_zrelu(z1(1, 1), 0.0), std::invalid_argument);
}

TEST_CASE("split_tanh examples") {
  check_z(split_tanh(z1(0, 0)), 0, 0);
  check_z(split_tanh(z1(1, 0)), std::tanh(1.0), 0);
  CHECK(std::fabs(split_tanh(z1(1, 0)).re()[0] - 0.761594) < 1e-6);
  check_z(split_tanh(z1(100, 100)), 1, 1);
}

TEST_CASE("cardioid examples") {
  check_z(cardioid(z1(2.5, 0)), 2.5, 0);
  check_z(cardioid(z1(-2.5, 0)), 0, 0);
  check_z(cardioid(z1(0, 2)), 0, 1);
  check_z(cardioid(z1(0, 0)), 0, 0);
}

TEST_CASE("activation properties on random inputs") {
  Rng rng(17);
  const auto z = test::random_tensor({4, 3, 5}, rng);
  CHECK(crelu(crelu(z)) == crelu(z));

  const auto zero = ComplexTensor::zeros({4});
  for (auto kind : kAllActivations) {
    ComplexTensor out;
    switch (kind) {
      case ActivationKind::crelu: out = crelu(zero); break;
      case ActivationKind::modrelu: out = modrelu(zero, RealTensor({1}, {0.5})); break;
      case ActivationKind::zrelu: out = zrelu(zero); break;
      case ActivationKind::smooth_zrelu: out = smooth_zrelu(zero, 1.0); break;
      case ActivationKind::split_tanh: out = split_tanh(zero); break;
      case ActivationKind::cardioid: out = cardioid(zero); break;
    }
    CAPTURE(activation_name(kind));
    CHECK(out == zero);
  }

  // phase preservation
  const RealTensor b({3}, {-0.3, 0.2, 0.0});
  const auto mr = modrelu(z, b);
  const auto cd = cardioid(z);
  const auto pz = phase(z), pm = phase(mr), pc = phase(cd);
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (mr.re()[i] != 0.0 || mr.im()[i] != 0.0) CHECK(std::fabs(pm[i] - pz[i]) <= 1e-12);
    if (cd.re()[i] != 0.0 || cd.im()[i] != 0.0) CHECK(std::fabs(pc[i] - pz[i]) <= 1e-12);
  }
}

TEST_CASE("smooth_zrelu approaches zrelu for large alpha") {
  const double alpha = 1e3, band = 10.0 / alpha;
  double worst = 0.0;
  for (int i = -100; i <= 100; ++i) {
    for (int j = -100; j <= 100; ++j) {
      const double x = i * 0.02, y = j * 0.02;
      if (std::fabs(x) < band || std::fabs(y) < band) continue;
      const auto a = smooth_zrelu(z1(x, y), alpha);
      const auto b = zrelu(z1(x, y));
      worst = std::fmax(worst, std::hypot(a.re()[0] - b.re()[0], a.im()[0] - b.im()[0]));
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("parse_activation") {
  for (auto kind : kAllActivations) CHECK(parse_activation(activation_name(kind)) == kind);
  CHECK_THROWS_AS(parse_activation("tanh"), std::invalid_argument);
}

TEST_CASE("activation gradients match finite differences") {
  Rng rng(23);
  const ComplexTensor w = test::random_tensor({2, 3, 2}, rng);
  auto loss_of = [&](auto act) {
    return [&w, act](Tape&, const Var& z) { return sum_weighted(act(z), w); };
  };
  for (int point = 0; point < 20; ++point) {
    const auto x0 = test::off_axis_tensor({2, 3, 2}, rng);
    CHECK(grad_check(loss_of([](const Var& z) { return crelu(z); }), x0, 1e-5) < 1e-4);
    CHECK(grad_check(loss_of([](const Var& z) { return zrelu(z); }), x0, 1e-5) < 1e-4);
    CHECK(grad_check(loss_of([](const Var& z) { return smooth_zrelu(z, 1.0); }), x0, 1e-5) < 1e-4);
    CHECK(grad_check(loss_of([](const Var& z) { return smooth_zrelu(z, 0.5); }), x0, 1e-5) < 1e-4);
    CHECK(grad_check(loss_of([](const Var& z) { return split_tanh(z); }), x0, 1e-5) < 1e-4);
    CHECK(grad_check(loss_of([](const Var& z) { return cardioid(z); }), x0, 1e-5) < 1e-4);
  }

  // cardioid is smooth across the negative real axis
  const auto neg = ComplexTensor({2}, {-1.0, -0.4}, {1e-7, -1e-7});
  CHECK(grad_check([](Tape&, const Var& z) { return real_part(sum(cardioid(z))); }, neg, 1e-5) <
        1e-4);
}

TEST_CASE("modrelu gradient, including the bias") {
  Rng rng(29);
  const ComplexTensor w = test::random_tensor({2, 3, 2}, rng);
  for (int point = 0; point < 20; ++point) {
    const auto x0 = test::off_axis_tensor({2, 3, 2}, rng, 0.3);
    ComplexTensor b({3});
    for (auto& v : b.re()) v = rng.uniform(-0.25, 0.25);

    CHECK(grad_check([&](Tape& t, const Var& z) { return sum_weighted(modrelu(z, t.constant(b)), w); },
                     x0, 1e-5) < 1e-4);
    CHECK(grad_check(
              [&](Tape& t, const Var& bias) {
                return sum_weighted(modrelu(t.constant(x0), bias), w);
              },
              b, 1e-5) < 1e-4);
  }
}
