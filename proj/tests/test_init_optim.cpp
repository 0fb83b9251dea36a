#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "cvnn/autodiff.hpp"
#include "cvnn/init.hpp"
#include "cvnn/optim.hpp"
#include "cvnn/rng.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace cvnn;
using std::numbers::pi;

using test::moments;
using test::phase_chi2_pvalue;

TEST_CASE("xavier circular uniform") {
  Rng rng(100);
  const auto small = xavier_circular_uniform(3, 3, {1000}, rng);
  for (std::size_t i = 0; i < small.size(); ++i) {
    CHECK(std::hypot(small.re()[i], small.im()[i]) <= 1.0);
  }
  const std::size_t n = 100000;
  const auto t = xavier_circular_uniform(3, 3, {n}, rng);
  const auto m = moments(t);
  CHECK(std::fabs(m.abs2 - 0.5) <= 0.5 * 0.025);
  // per-component sd of a disk-uniform point of radius 1 is 1/2
  const double bound = 3.0 * 0.5 / std::sqrt(static_cast<double>(n));
  CHECK(std::fabs(m.mean_re) <= bound);
  CHECK(std::fabs(m.mean_im) <= bound);
  CHECK(phase_chi2_pvalue(t) > 0.01);
  CHECK_THROWS(xavier_circular_uniform(0, 0, {3}, rng));
}

TEST_CASE("he circular normal") {
  Rng rng(101);
  const auto t2 = he_circular_normal(2, {100000}, rng);
  const auto m2 = moments(t2);
  CHECK(std::fabs(m2.var_re - 1.0) <= 0.03);
  CHECK(std::fabs(m2.var_im - 1.0) <= 0.03);
  CHECK(std::fabs(m2.corr) <= 0.01);
  const auto m4 = moments(he_circular_normal(4, {100000}, rng));
  CHECK(std::fabs(m4.abs2 - 1.0) <= 0.03);
  CHECK(phase_chi2_pvalue(t2) > 0.01);
}

TEST_CASE("rayleigh phase init") {
  Rng rng(102);
  CHECK(rayleigh_sigma(InitCriterion::he, 50, 7) == 1.0 / std::sqrt(50.0));
  CHECK(rayleigh_sigma(InitCriterion::glorot, 50, 14) == 1.0 / 8.0);
  const auto t = rayleigh_phase_init(InitCriterion::he, 50, 10, {100000}, rng);
  const auto m = moments(t);
  CHECK(std::fabs(m.abs2 - 2.0 / 50.0) <= 0.03 * 2.0 / 50.0);
  CHECK(phase_chi2_pvalue(t) > 0.01);
  const double sd = std::sqrt(2.0 / 50.0 / 2.0) / std::sqrt(100000.0);
  CHECK(std::fabs(m.mean_re) <= 4 * sd);
  CHECK(std::fabs(m.mean_im) <= 4 * sd);
  CHECK_THROWS_AS(parse_init_criterion("lecun"), std::invalid_argument);
}

TEST_CASE("init determinism and fans") {
  Rng a(5), b(5);
  CHECK(init_weight({InitScheme::rayleigh_phase, InitCriterion::glorot}, {4, 3, 3, 3}, a) ==
        init_weight({InitScheme::rayleigh_phase, InitCriterion::glorot}, {4, 3, 3, 3}, b));
  const Fans conv = fans_of({16, 8, 3, 3});
  CHECK(conv.in == 72);
  CHECK(conv.out == 144);
  const Fans dense = fans_of({10, 128});
  CHECK(dense.in == 128);
  CHECK(dense.out == 10);
  for (auto s : {"xavier_circular", "xavier_split", "he_circular", "rayleigh_phase"})
    CHECK(init_scheme_name(parse_init_scheme(s)) == s);

  Rng r(6);
  const auto split = xavier_split_uniform(3, 3, {20000}, r);
  for (std::size_t i = 0; i < split.size(); ++i) {
    CHECK(std::fabs(split.re()[i]) <= 1.0);
    CHECK(std::fabs(split.im()[i]) <= 1.0);
  }
  const auto rh = real_he_normal({8, 4}, r);
  for (double v : rh.im()) CHECK(v == 0.0);
}

namespace {

ParamSet single(double re, double im) {
  ParamSet ps;
  ps.add("z", ComplexTensor::scalar(re, im));
  return ps;
}

ComplexTensor abs2_grad(const ComplexTensor& z) {
  Tape t;
  Var v = t.leaf(z);
  return t.backward(sum(abs2(v)))[v];
}

}  // namespace

TEST_CASE("sgd") {
  OptimState st;
  st.kind = OptimKind::sgd;
  st.lr = 0.1;
  auto ps = single(1, 1);
  sgd_step(ps, {ComplexTensor::scalar(0, 0)}, st);
  CHECK(ps[0].value == ComplexTensor::scalar(1, 1));
  sgd_step(ps, {ComplexTensor::scalar(1, 0)}, st);
  CHECK(ps[0].value.re()[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(ps[0].value.im()[0] == 1.0);

  // L = |z|^2 with lr 0.5: z <- z - 0.5 * 2z = 0 after one step, stays at 0
  st.lr = 0.5;
  auto q = single(1, 0);
  for (int i = 0; i < 2; ++i) sgd_step(q, {abs2_grad(q[0].value)}, st);
  CHECK(q[0].value == ComplexTensor::scalar(0, 0));

  // linear convergence to c on |z - c|^2
  auto r = single(3, -2);
  const auto c = ComplexTensor::scalar(-0.5, 0.25);
  st.lr = 0.2;
  double prev = 1e9;
  for (int i = 0; i < 60; ++i) {
    Tape t;
    Var v = t.leaf(r[0].value);
    auto g = t.backward(sum(abs2(sub(v, t.constant(c)))))[v];
    sgd_step(r, {g}, st);
    const double d = std::hypot(r[0].value.re()[0] - c.re()[0], r[0].value.im()[0] - c.im()[0]);
    CHECK(d <= prev * 0.61);
    prev = d;
  }

  CHECK_THROWS_AS(sgd_step(r, {}, st), std::invalid_argument);
  CHECK_THROWS_AS(sgd_step(r, {ComplexTensor()}, st), std::invalid_argument);
}

TEST_CASE("adam") {
  OptimState st;
  st.lr = 0.01;
  auto ps = single(1, 1);
  adam_step(ps, {ComplexTensor::scalar(0, 0)}, st);
  CHECK(ps[0].value == ComplexTensor::scalar(1, 1));

  OptimState st2;
  st2.lr = 0.01;
  auto p2 = single(1, 1);
  adam_step(p2, {ComplexTensor::scalar(3.0, -0.2)}, st2);
  // first bias-corrected step moves each plane by lr * g / (|g| + eps)
  CHECK(std::fabs((1.0 - p2[0].value.re()[0]) - 0.01) < 1e-9);
  CHECK(std::fabs((p2[0].value.im()[0] - 1.0) - 0.01) < 1e-9);

  OptimState st3;
  st3.lr = 0.01;
  auto p3 = single(1, 1);
  for (int i = 0; i < 500; ++i) adam_step(p3, {abs2_grad(p3[0].value)}, st3);
  CHECK(std::hypot(p3[0].value.re()[0], p3[0].value.im()[0]) < 1e-3);
  CHECK(st3.step == 500);
}

TEST_CASE("gradient clipping") {
  ParamGrads g{ComplexTensor::scalar(3, 4)};
  CHECK(clip_grad_norm(g, 1.0) == 5.0);
  CHECK(g[0].re()[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(g[0].im()[0] == doctest::Approx(0.8).epsilon(1e-15));

  ParamGrads small{ComplexTensor::scalar(0.1, 0.2)};
  const auto before = small;
  clip_grad_norm(small, 1.0);
  CHECK(small == before);

  ParamGrads zero{ComplexTensor::zeros({3})};
  clip_grad_norm(zero, 1.0);
  CHECK(zero[0] == ComplexTensor::zeros({3}));

  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    ParamGrads many{test::random_tensor({5, 4}, rng, 3.0), test::random_tensor({7}, rng, 3.0)};
    const double max_norm = rng.uniform(0.1, 2.0);
    clip_grad_norm(many, max_norm);
    CHECK(global_grad_norm(many) <= max_norm + 1e-12);
  }
  CHECK_THROWS_AS(clip_grad_norm(g, 0.0), std::invalid_argument);
}

TEST_CASE("checkpoint round trip with optimizer state") {
  Rng rng(8);
  ParamSet ps;
  ps.add("conv1.w", test::random_tensor({2, 1, 3, 3}, rng));
  ps.add("bn1.gamma", test::random_tensor({2, 3}, rng), true);
  OptimState st;
  st.clip_norm = 1.0;
  for (int i = 0; i < 3; ++i) {
    optimizer_step(ps, {test::random_tensor({2, 1, 3, 3}, rng), test::random_tensor({2, 3}, rng)}, st);
  }
  NamedTensors rec;
  for (const auto& p : ps) rec.emplace_back(p.name, p.value);
  for (auto& r : optimizer_records(st, ps)) rec.push_back(std::move(r));

  std::stringstream ss;
  write_checkpoint(ss, rec);
  CHECK(ss.str().substr(0, 8) == "CVNNCKPT");
  const auto back = read_checkpoint(ss);
  REQUIRE(back.size() == rec.size());
  for (std::size_t i = 0; i < rec.size(); ++i) {
    CHECK(back[i].first == rec[i].first);
    CHECK(back[i].second == rec[i].second);
  }
  OptimState restored;
  restore_optimizer(restored, ps, back);
  CHECK(restored.step == 3);
  CHECK(restored.clip_norm.value() == 1.0);
  CHECK(restored.m == st.m);
  CHECK(restored.v == st.v);

  std::stringstream again;
  write_checkpoint(again, back);
  CHECK(again.str() == ss.str());

  std::stringstream bad("CVNNCKPX");
  CHECK_THROWS_AS(read_checkpoint(bad), FormatError);
}
