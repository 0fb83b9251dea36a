#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance binary.

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "cvnn/audio.hpp"
#include "cvnn/layers.hpp"
#include "cvnn/tensor.hpp"

namespace cvnn::test {

using std::size_t;
using std::numbers::pi;

// Real cross-correlation of x (N, C, H, W) with k (O, C, KH, KW) by direct
// summation over the zero-padded input.
inline std::vector<double> naive_real_conv(const std::vector<double>& x, size_t n, size_t c, size_t h,
                                    size_t w, const std::vector<double>& k, size_t o, size_t kh,
                                    size_t kw, size_t s, size_t p, size_t& oh, size_t& ow) {
  oh = (h + 2 * p - kh) / s + 1;
  ow = (w + 2 * p - kw) / s + 1;
  std::vector<double> out(n * o * oh * ow, 0.0);
  for (size_t b = 0; b < n; ++b)
    for (size_t oc = 0; oc < o; ++oc)
      for (size_t y = 0; y < oh; ++y)
        for (size_t xx = 0; xx < ow; ++xx) {
          double acc = 0.0;
          for (size_t ic = 0; ic < c; ++ic)
            for (size_t ky = 0; ky < kh; ++ky)
              for (size_t kx = 0; kx < kw; ++kx) {
                const long iy = static_cast<long>(y * s + ky) - static_cast<long>(p);
                const long ix = static_cast<long>(xx * s + kx) - static_cast<long>(p);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w))
                  continue;
                acc += x[((b * c + ic) * h + iy) * w + ix] * k[((oc * c + ic) * kh + ky) * kw + kx];
              }
          out[((b * o + oc) * oh + y) * ow + xx] = acc;
        }
  return out;
}

// Complex convolution through the real block form: input channels [A1; B1],
// kernel [[A2, -B2], [B2, A2]], output channels [Re; Im].
inline double block_matrix_gap(const ComplexTensor& x, const ComplexTensor& w, const ComplexTensor& b,
                        size_t stride, size_t pad) {
  const size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  std::vector<double> xb(n * 2 * c * h * wd);
  for (size_t i = 0; i < n; ++i)
    for (size_t ch = 0; ch < c; ++ch)
      for (size_t j = 0; j < h * wd; ++j) {
        xb[((i * 2 * c) + ch) * h * wd + j] = x.re()[(i * c + ch) * h * wd + j];
        xb[((i * 2 * c) + c + ch) * h * wd + j] = x.im()[(i * c + ch) * h * wd + j];
      }
  std::vector<double> kb(2 * o * 2 * c * kh * kw);
  const size_t kp = kh * kw;
  for (size_t oc = 0; oc < o; ++oc)
    for (size_t ic = 0; ic < c; ++ic)
      for (size_t j = 0; j < kp; ++j) {
        const double a2 = w.re()[(oc * c + ic) * kp + j], b2 = w.im()[(oc * c + ic) * kp + j];
        kb[(oc * 2 * c + ic) * kp + j] = a2;
        kb[(oc * 2 * c + c + ic) * kp + j] = -b2;
        kb[((o + oc) * 2 * c + ic) * kp + j] = b2;
        kb[((o + oc) * 2 * c + c + ic) * kp + j] = a2;
      }
  size_t oh = 0, ow = 0;
  const auto ref = naive_real_conv(xb, n, 2 * c, h, wd, kb, 2 * o, kh, kw, stride, pad, oh, ow);

  Tape t;
  Conv2dGeometry geo;
  geo.stride = {stride, stride};
  geo.padding = {pad, pad};
  const auto got = complex_conv2d(t.constant(x), t.constant(w), t.constant(b), geo).value();
  double gap = 0.0;
  for (size_t i = 0; i < n; ++i)
    for (size_t oc = 0; oc < o; ++oc)
      for (size_t j = 0; j < oh * ow; ++j) {
        const double re = ref[((i * 2 * o) + oc) * oh * ow + j] + b.re()[oc];
        const double im = ref[((i * 2 * o) + o + oc) * oh * ow + j] + b.im()[oc];
        gap = std::fmax(gap, std::fabs(re - got.re()[(i * o + oc) * oh * ow + j]));
        gap = std::fmax(gap, std::fabs(im - got.im()[(i * o + oc) * oh * ow + j]));
      }
  return gap;
}

// Independent MFCC: direct DFT per frame (no FFT), triangular filters written from
// the case formula, direct DCT-II sums.
inline std::vector<std::vector<double>> brute_mfcc(const std::vector<double>& x, const audio::MfccConfig& cfg) {
  const std::size_t n = cfg.stft.n_fft, hop = cfg.stft.hop, n_bins = n / 2 + 1;
  const std::size_t frames = (x.size() - n) / hop + 1;
  std::vector<double> win(n);
  for (std::size_t i = 0; i < n; ++i) win[i] = 0.5 * (1 - std::cos(2 * pi * i / (n - 1)));

  const double fmax = cfg.fmax > 0 ? cfg.fmax : cfg.sample_rate / 2;
  const double mlo = 2595 * std::log10(1 + cfg.fmin / 700), mhi = 2595 * std::log10(1 + fmax / 700);
  std::vector<double> f(cfg.n_mels + 2);
  for (std::size_t j = 0; j < f.size(); ++j) {
    const double mel = mlo + (mhi - mlo) * j / (cfg.n_mels + 1);
    f[j] = std::floor((n + 1) * 700 * (std::pow(10.0, mel / 2595) - 1) / cfg.sample_rate);
  }
  auto H = [&](std::size_t m, double i) {  // m is 1-based
    if (i < f[m - 1] || i > f[m + 1]) return 0.0;
    if (i <= f[m]) return (i - f[m - 1]) / (f[m] - f[m - 1]);
    return (f[m + 1] - i) / (f[m + 1] - f[m]);
  };

  // direct DFT of each real frame, one twiddle table
  std::vector<double> c(n), s(n);
  for (std::size_t j = 0; j < n; ++j) {
    c[j] = std::cos(2 * pi * j / n);
    s[j] = std::sin(2 * pi * j / n);
  }
  std::vector<std::vector<double>> out(cfg.n_mfcc, std::vector<double>(frames));
  std::vector<double> frame(n), power(n_bins);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < n; ++i) frame[i] = x[t * hop + i] * win[i];
    for (std::size_t k = 0; k < n_bins; ++k) {
      double re = 0, im = 0;
      for (std::size_t i = 0, j = 0; i < n; ++i, j = (j + k) % n) {
        re += frame[i] * c[j];
        im -= frame[i] * s[j];
      }
      power[k] = re * re + im * im;
    }
    std::vector<double> logmel(cfg.n_mels);
    for (std::size_t m = 1; m <= cfg.n_mels; ++m) {
      double e = 0;
      for (std::size_t k = 0; k < n_bins; ++k) e += H(m, k) * power[k];
      logmel[m - 1] = std::log(e + cfg.log_floor);
    }
    const double M = static_cast<double>(cfg.n_mels);
    for (std::size_t k = 0; k < cfg.n_mfcc; ++k) {
      double s = 0;
      for (std::size_t m = 0; m < cfg.n_mels; ++m) s += logmel[m] * std::cos(pi * k * (2 * m + 1) / (2 * M));
      out[k][t] = s * (k == 0 ? std::sqrt(1 / M) : std::sqrt(2 / M));
    }
  }
  return out;
}

struct Moments {
  double mean_re = 0, mean_im = 0, var_re = 0, var_im = 0, corr = 0, abs2 = 0;
};

inline Moments moments(const ComplexTensor& t) {
  Moments m;
  const double n = static_cast<double>(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    m.mean_re += t.re()[i] / n;
    m.mean_im += t.im()[i] / n;
  }
  double cov = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double a = t.re()[i] - m.mean_re, b = t.im()[i] - m.mean_im;
    m.var_re += a * a / n;
    m.var_im += b * b / n;
    cov += a * b / n;
    m.abs2 += (t.re()[i] * t.re()[i] + t.im()[i] * t.im()[i]) / n;
  }
  m.corr = cov / std::sqrt(m.var_re * m.var_im);
  return m;
}

inline double phase_chi2_pvalue(const ComplexTensor& t, int bins = 16) {
  std::vector<double> count(bins, 0.0);
  const auto ph = phase(t);
  for (std::size_t i = 0; i < ph.size(); ++i) {
    int b = static_cast<int>((ph[i] + pi) / (2 * pi) * bins);
    count[std::min(b, bins - 1)] += 1.0;
  }
  const double expected = static_cast<double>(t.size()) / bins;
  double chi2 = 0.0;
  for (double c : count) chi2 += (c - expected) * (c - expected) / expected;
  boost::math::chi_squared dist(bins - 1);
  return boost::math::cdf(boost::math::complement(dist, chi2));
}

}  // namespace cvnn::test
