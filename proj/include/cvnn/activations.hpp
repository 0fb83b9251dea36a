#pragma once

#include <string>
#include <string_view>

#include "cvnn/autodiff.hpp"
#include "cvnn/tensor.hpp"

namespace cvnn {

enum class ActivationKind { crelu, modrelu, zrelu, smooth_zrelu, split_tanh, cardioid };

/// Accepts crelu|modrelu|zrelu|smooth_zrelu|split_tanh|cardioid.
ActivationKind parse_activation(std::string_view name);
std::string_view activation_name(ActivationKind kind);

inline constexpr ActivationKind kAllActivations[] = {
    ActivationKind::crelu,        ActivationKind::modrelu,    ActivationKind::zrelu,
    ActivationKind::smooth_zrelu, ActivationKind::split_tanh, ActivationKind::cardioid};

struct Activation {
  ActivationKind kind = ActivationKind::crelu;
  double alpha = 1.0;  // smooth_zrelu sharpness, > 0
};

// Gradients at the non-differentiable sets use the value of the inactive
// branch (zero): the axes for crelu/zrelu, |z| = -b for modrelu, and the
// origin for modrelu/cardioid.

/// ReLU(Re z) + i ReLU(Im z).
Var crelu(const Var& z);
/// ReLU(|z| + b) * z / |z|, with b one real scalar per channel (dim 1 of z,
/// whose size must equal b.size()). Outputs 0 at z = 0.
Var modrelu(const Var& z, const Var& bias);
/// z where Re z >= 0 and Im z >= 0, else 0.
Var zrelu(const Var& z);
/// z * sigmoid(alpha Re z) * sigmoid(alpha Im z); alpha > 0.
Var smooth_zrelu(const Var& z, double alpha);
/// tanh(Re z) + i tanh(Im z).
Var split_tanh(const Var& z);
/// z (1 + cos(arg z)) / 2, computed as (z + z Re(z)/|z|) / 2; 0 at z = 0.
Var cardioid(const Var& z);

/// Dispatch on kind; `bias` is used only by modrelu.
Var apply_activation(const Activation& act, const Var& z, const Var& bias = Var());

// Plain tensor versions of the same functions.
ComplexTensor crelu(const ComplexTensor& z);
ComplexTensor modrelu(const ComplexTensor& z, const RealTensor& bias);
ComplexTensor zrelu(const ComplexTensor& z);
ComplexTensor smooth_zrelu(const ComplexTensor& z, double alpha);
ComplexTensor split_tanh(const ComplexTensor& z);
ComplexTensor cardioid(const ComplexTensor& z);

}  // namespace cvnn
