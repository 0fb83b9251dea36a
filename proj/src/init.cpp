#include "cvnn/init.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace cvnn {

namespace {

using std::numbers::pi;

void require_fans(std::size_t n, std::size_t m, const char* op) {
  if (n == 0 || m == 0) throw std::invalid_argument(std::string(op) + ": fans must be >= 1");
}

}  // namespace

InitScheme parse_init_scheme(std::string_view name) {
  if (name == "xavier_circular") return InitScheme::xavier_circular;
  if (name == "xavier_split") return InitScheme::xavier_split;
  if (name == "he_circular") return InitScheme::he_circular;
  if (name == "rayleigh_phase") return InitScheme::rayleigh_phase;
  throw std::invalid_argument("unknown init scheme '" + std::string(name) +
                              "' (expected xavier_circular|xavier_split|he_circular|rayleigh_phase)");
}

std::string_view init_scheme_name(InitScheme s) {
  switch (s) {
    case InitScheme::xavier_circular: return "xavier_circular";
    case InitScheme::xavier_split: return "xavier_split";
    case InitScheme::he_circular: return "he_circular";
    case InitScheme::rayleigh_phase: return "rayleigh_phase";
  }
  return "?";
}

InitCriterion parse_init_criterion(std::string_view name) {
  if (name == "glorot") return InitCriterion::glorot;
  if (name == "he") return InitCriterion::he;
  throw std::invalid_argument("unknown init criterion '" + std::string(name) +
                              "' (expected glorot|he)");
}

Fans fans_of(const Shape& s) {
  if (s.size() == 2) return {s[1], s[0]};
  if (s.size() == 4) return {s[1] * s[2] * s[3], s[0] * s[2] * s[3]};
  if (s.size() == 1) return {s[0], s[0]};
  throw ShapeError("fans_of: unsupported weight shape " + shape_str(s));
}

ComplexTensor xavier_circular_uniform(std::size_t n, std::size_t m, const Shape& shape, Rng& rng) {
  require_fans(n, m, "xavier_circular_uniform");
  ComplexTensor t(shape);
  const double radius = std::sqrt(6.0 / static_cast<double>(n + m));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double r = radius * std::sqrt(rng.uniform());
    const double theta = rng.uniform(-pi, pi);
    t.re()[i] = r * std::cos(theta);
    t.im()[i] = r * std::sin(theta);
  }
  return t;
}

ComplexTensor xavier_split_uniform(std::size_t n, std::size_t m, const Shape& shape, Rng& rng) {
  require_fans(n, m, "xavier_split_uniform");
  ComplexTensor t(shape);
  const double a = std::sqrt(6.0 / static_cast<double>(n + m));
  t.fill_uniform(rng, -a, a);
  return t;
}

ComplexTensor he_circular_normal(std::size_t n, const Shape& shape, Rng& rng) {
  require_fans(n, 1, "he_circular_normal");
  ComplexTensor t(shape);
  t.fill_normal(rng, std::sqrt(2.0 / static_cast<double>(n)));
  return t;
}

double rayleigh_sigma(InitCriterion c, std::size_t fan_in, std::size_t fan_out) {
  require_fans(fan_in, fan_out, "rayleigh_sigma");
  const double denom = c == InitCriterion::he ? static_cast<double>(fan_in)
                                              : static_cast<double>(fan_in + fan_out);
  return 1.0 / std::sqrt(denom);
}

ComplexTensor rayleigh_phase_init(InitCriterion c, std::size_t fan_in, std::size_t fan_out,
                                  const Shape& shape, Rng& rng) {
  const double sigma = rayleigh_sigma(c, fan_in, fan_out);
  ComplexTensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    // Inverse CDF of Rayleigh(sigma); 1 - u lies in (0, 1].
    const double r = sigma * std::sqrt(-2.0 * std::log(1.0 - rng.uniform()));
    const double theta = rng.uniform(-pi, pi);
    t.re()[i] = r * std::cos(theta);
    t.im()[i] = r * std::sin(theta);
  }
  return t;
}

ComplexTensor init_weight(const InitSpec& spec, const Shape& shape, Rng& rng) {
  const Fans f = fans_of(shape);
  switch (spec.scheme) {
    case InitScheme::xavier_circular: return xavier_circular_uniform(f.in, f.out, shape, rng);
    case InitScheme::xavier_split: return xavier_split_uniform(f.in, f.out, shape, rng);
    case InitScheme::he_circular: return he_circular_normal(f.in, shape, rng);
    case InitScheme::rayleigh_phase:
      return rayleigh_phase_init(spec.criterion, f.in, f.out, shape, rng);
  }
  throw std::logic_error("unhandled init scheme");
}

ComplexTensor real_he_normal(const Shape& shape, Rng& rng) {
  const Fans f = fans_of(shape);
  ComplexTensor t(shape);
  const double sd = std::sqrt(2.0 / static_cast<double>(f.in));
  for (auto& v : t.re()) v = sd * rng.normal();
  return t;
}

}  // namespace cvnn
