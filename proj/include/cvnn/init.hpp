#pragma once

#include <cstddef>
#include <string_view>

#include "cvnn/rng.hpp"
#include "cvnn/tensor.hpp"

namespace cvnn {

enum class InitScheme { xavier_circular, xavier_split, he_circular, rayleigh_phase };
enum class InitCriterion { glorot, he };

InitScheme parse_init_scheme(std::string_view name);
std::string_view init_scheme_name(InitScheme s);
InitCriterion parse_init_criterion(std::string_view name);

struct InitSpec {
  InitScheme scheme = InitScheme::rayleigh_phase;
  InitCriterion criterion = InitCriterion::he;  // rayleigh_phase only
};

struct Fans {
  std::size_t in = 1, out = 1;
};

/// Dense (d_out, d_in) -> (d_in, d_out); conv (out, in, kh, kw) ->
/// (in kh kw, out kh kw).
Fans fans_of(const Shape& weight_shape);

/// Uniform on the disk |z| <= sqrt(6 / (n + m)), sampled as r = R sqrt(u),
/// theta ~ U[-pi, pi). E|z|^2 = 3 / (n + m).
ComplexTensor xavier_circular_uniform(std::size_t n, std::size_t m, const Shape& shape, Rng& rng);

/// Each plane independently U(-a, a) with the real Xavier bound
/// a = sqrt(6 / (n + m)).
ComplexTensor xavier_split_uniform(std::size_t n, std::size_t m, const Shape& shape, Rng& rng);

/// Re, Im i.i.d. N(0, 2 / n). E|z|^2 = 4 / n.
ComplexTensor he_circular_normal(std::size_t n, const Shape& shape, Rng& rng);

/// Rayleigh mode for the given criterion: 1 / sqrt(fan_in) (he) or
/// 1 / sqrt(fan_in + fan_out) (glorot), so that E|W|^2 = 2 sigma^2 equals
/// 2 / fan_in or 2 / (fan_in + fan_out).
double rayleigh_sigma(InitCriterion c, std::size_t fan_in, std::size_t fan_out);

/// W = r e^{i theta}, r ~ Rayleigh(sigma), theta ~ U[-pi, pi).
ComplexTensor rayleigh_phase_init(InitCriterion c, std::size_t fan_in, std::size_t fan_out,
                                  const Shape& shape, Rng& rng);

/// Dispatch on spec with fans derived from the weight shape.
ComplexTensor init_weight(const InitSpec& spec, const Shape& shape, Rng& rng);

/// Real He-normal N(0, 2 / fan_in) in the real plane, zero imaginary plane.
/// Used by the real-valued baseline networks.
ComplexTensor real_he_normal(const Shape& shape, Rng& rng);

}  // namespace cvnn
