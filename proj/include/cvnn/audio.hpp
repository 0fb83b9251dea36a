#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cvnn/tensor.hpp"

namespace cvnn::audio {

using cplx = std::complex<double>;

/// Symmetric Hann window 0.5 (1 - cos(2 pi i / (n - 1))), n >= 2.
std::vector<double> hann_window(std::size_t n);

/// In-place iterative radix-2 FFT (forward, e^{-2 pi i k n / N}); size must
/// be a power of two.
void fft_inplace(std::vector<cplx>& a);
/// O(N^2) reference DFT of a real sequence, any length.
std::vector<cplx> dft_naive(std::span<const double> x);

bool is_power_of_two(std::size_t n);

struct StftConfig {
  std::size_t n_fft = 2048;
  std::size_t hop = 512;
  /// Analysis window of length n_fft; empty means Hann.
  std::vector<double> window;
};

struct ComplexSpectrogram {
  ComplexTensor data;  // (n_fft / 2 + 1, n_frames)
  double sample_rate = 0.0;
};

std::size_t stft_frame_count(std::size_t signal_len, const StftConfig& cfg);

/// Frame j starts at j * hop; each frame is windowed and transformed; bins
/// 0..n_fft/2 are kept.
ComplexSpectrogram stft(std::span<const double> x, const StftConfig& cfg, double sample_rate);

/// 2595 log10(1 + f / 700).
double mel_scale(double hz);
double mel_to_hz(double mel);

struct MfccConfig {
  StftConfig stft;
  double sample_rate = 22050.0;
  std::size_t n_mels = 26;
  std::size_t n_mfcc = 13;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 means sample_rate / 2
  double log_floor = 1e-10;

  double effective_fmax() const { return fmax > 0.0 ? fmax : sample_rate / 2.0; }
  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

struct MelFilterbank {
  std::size_t n_mels = 0;
  std::size_t n_bins = 0;
  std::vector<double> weights;     // row-major (n_mels, n_bins)
  std::vector<std::size_t> points;  // n_mels + 2 bin indices f(0) .. f(n_mels + 1)

  double at(std::size_t m, std::size_t i) const { return weights[m * n_bins + i]; }
  /// Filter m (0-based) has center points[m + 1].
  std::size_t center(std::size_t m) const { return points[m + 1]; }
};

/// Triangular filters with centers equally spaced in mel between fmin and
/// fmax, mapped to bins by floor((n_fft + 1) f / sample_rate).
MelFilterbank mel_filterbank(const MfccConfig& cfg);

/// Orthonormal DCT-II matrix (n, n), row k = basis function k.
std::vector<double> dct2_matrix(std::size_t n);
/// Orthonormal DCT-II of v.
std::vector<double> dct2(std::span<const double> v);

/// Standard MFCC, shape (n_mfcc, n_frames).
RealTensor mfcc(std::span<const double> x, const MfccConfig& cfg);

/// Raw complex STFT (n_bins, n_frames).
ComplexTensor complex_mfcc_workflow1(std::span<const double> x, const MfccConfig& cfg);

/// Intermediate and final values of the phase-preserving MFCC.
struct Workflow2Result {
  RealTensor log_mel;        // (n_mels, n_frames), ln(E + floor)
  RealTensor mel_phase;      // (n_mels, n_frames), arg sum_i H_m(i) X(i)
  ComplexTensor combined;    // log_mel * exp(i mel_phase)
  ComplexTensor coeffs;      // (n_mfcc, n_frames), DCT-II of both planes
};

Workflow2Result complex_mfcc_workflow2_parts(std::span<const double> x, const MfccConfig& cfg);
ComplexTensor complex_mfcc_workflow2(std::span<const double> x, const MfccConfig& cfg);

/// Zero-pads or trims the frame axis (last dimension) to n_frames.
RealTensor fit_frames(const RealTensor& t, std::size_t n_frames);
ComplexTensor fit_frames(const ComplexTensor& t, std::size_t n_frames);

// WAV I/O: RIFF/WAVE, PCM 16-bit signed little-endian, mono only.

class WavError : public FormatError {
 public:
  using FormatError::FormatError;
};

struct Wav {
  std::vector<double> samples;  // scaled to [-1, 1)
  std::uint32_t sample_rate = 0;
};

Wav read_wav(const std::string& path);
/// Samples are clipped to [-1, 1] and quantised to 16 bits.
void write_wav(const std::string& path, std::span<const double> samples, std::uint32_t sample_rate);

/// Frame-major CSV: header c0,c1,...; one line per frame.
void write_feature_csv(const std::string& path, const RealTensor& coeff_by_frame);
/// Complex variant with columns c0_re,c0_im,...
void write_feature_csv(const std::string& path, const ComplexTensor& coeff_by_frame);

}  // namespace cvnn::audio
