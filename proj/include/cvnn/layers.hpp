#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "cvnn/autodiff.hpp"
#include "cvnn/tensor.hpp"

namespace cvnn {

struct Conv2dGeometry {
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> padding{0, 0};
};

struct PoolSpec {
  std::array<std::size_t, 2> kernel{2, 2};
  std::array<std::size_t, 2> stride{2, 2};
};

/// floor((in + 2 pad - k) / stride) + 1; throws if the kernel does not fit.
std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

/// Cross-correlation (no kernel flip) of x (N, Cin, H, W) with w (Cout, Cin,
/// KH, KW) plus per-channel bias b (Cout). With X = A1 + iB1, W = A2 + iB2:
///   Re = A1*A2 - B1*B2,  Im = B1*A2 + A1*B2
/// evaluated as four real correlations. Zero padding pads both planes.
Var complex_conv2d(const Var& x, const Var& w, const Var& bias, const Conv2dGeometry& geo = {});

/// Real-plane-only convolution for the real-valued baseline. Imaginary planes
/// of every operand are ignored and receive no gradient.
Var real_conv2d(const Var& x, const Var& w, const Var& bias, const Conv2dGeometry& geo = {});

/// y = x W^T + b for x (N, d_in), W (d_out, d_in), b (d_out); complex arithmetic.
Var complex_linear(const Var& x, const Var& w, const Var& bias);
Var real_linear(const Var& x, const Var& w, const Var& bias);

/// Per window, the element of largest |z| (first in row-major order on ties),
/// copied with its phase. x is (N, C, H, W).
Var complex_maxpool_mag(const Var& x, const PoolSpec& spec);
/// Per window, the mean of each plane.
Var complex_avgpool(const Var& x, const PoolSpec& spec);
/// Ordinary max pooling of the real plane.
Var real_maxpool(const Var& x, const PoolSpec& spec);

enum class BnMode { train, eval };
/// matrix: gamma is a symmetric 2x2 per channel stored as (C, 3) = (rr, ri, ii)
/// in the real plane. scalar: one real gamma per channel, shape (C).
enum class BnGamma { matrix, scalar };

BnGamma parse_bn_gamma(std::string_view name);

/// Running statistics and hyperparameters of one batch-norm layer. The
/// learnable gamma and beta live with the other parameters and are passed in
/// as Vars.
struct BatchNormState {
  explicit BatchNormState(std::size_t channels = 0);

  std::size_t channels = 0;
  double lambda = 1e-5;
  double momentum = 0.1;
  BnMode mode = BnMode::train;
  BnGamma gamma_form = BnGamma::matrix;

  // Running (biased) statistics, updated by exponential moving average.
  std::vector<double> mean_re, mean_im;
  std::vector<double> v_rr, v_ri, v_ii;
};

/// Initial gamma: diag(1/sqrt 2, 1/sqrt 2) per channel (matrix form) or
/// 1/sqrt 2 (scalar form). Real plane only.
ComplexTensor bn_gamma_init(std::size_t channels, BnGamma form);

/// Entries (rr, ri, ii) of the inverse principal square root of the SPD
/// matrix [[a, b], [b, c]], in closed form: with s = sqrt(ac - b^2) and
/// t = sqrt(a + c + 2s), M^{-1/2} = [[c + s, -b], [-b, a + s]] / (s t).
std::array<double, 3> inv_sqrt_2x2(double a, double b, double c);

/// Complex batch normalisation over x (N, C, ...). Train mode: per channel
/// subtract the batch mean, whiten with (V + lambda I)^{-1/2} where V is the
/// biased 2x2 covariance of (Re, Im), apply gamma and beta, and update the
/// running statistics. Eval mode uses the running statistics.
Var complex_batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& st);

/// Standard real batch normalisation of the real plane; gamma and beta are (C).
Var real_batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& st);

/// Rowwise log_softmax(|x|) for x (N, K), K >= 2. Output is real.
Var abs_logsoftmax_head(const Var& x);
/// Rowwise log_softmax(Re x), used by the real-valued baseline.
Var real_logsoftmax_head(const Var& x);

/// -mean_i logp[i, label_i].
Var nll_loss(const Var& logp, std::span<const int> labels);

}  // namespace cvnn
