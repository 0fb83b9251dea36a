#include "cvnn/audio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "binary_io.hpp"

namespace cvnn::audio {

namespace {

using std::numbers::pi;

std::vector<cplx> twiddles(std::size_t n) {
  std::vector<cplx> w(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double a = -2.0 * pi * static_cast<double>(k) / static_cast<double>(n);
    w[k] = {std::cos(a), std::sin(a)};
  }
  return w;
}

const std::vector<double>& resolved_window(const StftConfig& cfg, std::vector<double>& scratch) {
  if (!cfg.window.empty()) return cfg.window;
  scratch = hann_window(cfg.n_fft);
  return scratch;
}

void fft_with(std::vector<cplx>& a, const std::vector<cplx>& w) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2, step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const cplx t = w[k * step] * a[i + k + half];
        a[i + k + half] = a[i + k] - t;
        a[i + k] += t;
      }
    }
  }
}

// Power spectrum -> mel energies -> log, per frame.
RealTensor log_mel_energies(const ComplexTensor& spec, const MelFilterbank& fb, double floor) {
  const std::size_t n_bins = spec.dim(0), n_frames = spec.dim(1);
  RealTensor out({fb.n_mels, n_frames});
  for (std::size_t m = 0; m < fb.n_mels; ++m) {
    const std::size_t lo = fb.points[m], hi = std::min(fb.points[m + 2], n_bins - 1);
    for (std::size_t t = 0; t < n_frames; ++t) {
      double e = 0.0;
      for (std::size_t i = lo; i <= hi; ++i) {
        const double re = spec.re()[i * n_frames + t], im = spec.im()[i * n_frames + t];
        e += fb.at(m, i) * (re * re + im * im);
      }
      out[m * n_frames + t] = std::log(e + floor);
    }
  }
  return out;
}

// Applies the first n_out rows of the DCT-II matrix to each column of x.
std::vector<double> dct_columns(const std::vector<double>& dct, std::size_t n_in,
                                std::span<const double> x, std::size_t n_frames,
                                std::size_t n_out) {
  std::vector<double> out(n_out * n_frames, 0.0);
  for (std::size_t k = 0; k < n_out; ++k)
    for (std::size_t m = 0; m < n_in; ++m) {
      const double c = dct[k * n_in + m];
      for (std::size_t t = 0; t < n_frames; ++t) out[k * n_frames + t] += c * x[m * n_frames + t];
    }
  return out;
}

}  // namespace

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::vector<double> hann_window(std::size_t n) {
  if (n < 2) throw std::invalid_argument("hann_window: length must be >= 2");
  std::vector<double> w(n);
  const double d = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 * (1.0 - std::cos(2.0 * pi * static_cast<double>(i) / d));
  }
  // Exact endpoints and, for odd n, an exact centre.
  w[0] = w[n - 1] = 0.0;
  if (n % 2 == 1) w[(n - 1) / 2] = 1.0;
  return w;
}

void fft_inplace(std::vector<cplx>& a) {
  if (!is_power_of_two(a.size())) {
    throw std::invalid_argument("fft: length " + std::to_string(a.size()) + " is not a power of two");
  }
  fft_with(a, twiddles(a.size()));
}

std::vector<cplx> dft_naive(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<cplx> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      // reduce k*i mod n first so the angle stays small and exact
      const double a = -2.0 * pi * static_cast<double>((k * i) % n) / static_cast<double>(n);
      re += x[i] * std::cos(a);
      im += x[i] * std::sin(a);
    }
    out[k] = {re, im};
  }
  return out;
}

std::size_t stft_frame_count(std::size_t len, const StftConfig& cfg) {
  if (cfg.hop == 0 || cfg.hop > cfg.n_fft) {
    throw std::invalid_argument("stft: hop must satisfy 0 < hop <= n_fft");
  }
  if (len < cfg.n_fft) {
    throw std::invalid_argument("stft: signal of " + std::to_string(len) +
                                " samples is shorter than n_fft = " + std::to_string(cfg.n_fft));
  }
  return (len - cfg.n_fft) / cfg.hop + 1;
}

ComplexSpectrogram stft(std::span<const double> x, const StftConfig& cfg, double sample_rate) {
  if (!is_power_of_two(cfg.n_fft)) {
    throw std::invalid_argument("stft: n_fft must be a power of two");
  }
  const std::size_t n_frames = stft_frame_count(x.size(), cfg);
  std::vector<double> scratch;
  const auto& win = resolved_window(cfg, scratch);
  if (win.size() != cfg.n_fft) throw std::invalid_argument("stft: window length != n_fft");

  const std::size_t n_bins = cfg.n_fft / 2 + 1;
  ComplexSpectrogram out{ComplexTensor({n_bins, n_frames}), sample_rate};
  const auto w = twiddles(cfg.n_fft);
  std::vector<cplx> buf(cfg.n_fft);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const std::size_t start = t * cfg.hop;
    for (std::size_t i = 0; i < cfg.n_fft; ++i) buf[i] = {x[start + i] * win[i], 0.0};
    fft_with(buf, w);
    for (std::size_t k = 0; k < n_bins; ++k) {
      out.data.re()[k * n_frames + t] = buf[k].real();
      out.data.im()[k * n_frames + t] = buf[k].imag();
    }
  }
  return out;
}

double mel_scale(double hz) {
  if (hz < 0.0) throw std::invalid_argument("mel_scale: negative frequency");
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

void MfccConfig::validate() const {
  if (!is_power_of_two(stft.n_fft)) throw std::invalid_argument("n_fft must be a power of two");
  if (stft.hop == 0 || stft.hop > stft.n_fft) throw std::invalid_argument("need 0 < hop <= n_fft");
  if (!(sample_rate > 0.0)) throw std::invalid_argument("sample_rate must be > 0");
  if (n_mels < 1) throw std::invalid_argument("n_mels must be >= 1");
  if (n_mfcc < 1 || n_mfcc > n_mels) throw std::invalid_argument("need 1 <= n_mfcc <= n_mels");
  const double hi = effective_fmax();
  if (!(fmin >= 0.0 && fmin < hi && hi <= sample_rate / 2.0)) {
    throw std::invalid_argument("need 0 <= fmin < fmax <= sample_rate / 2");
  }
  if (!(log_floor > 0.0)) throw std::invalid_argument("log_floor must be > 0");
}

MelFilterbank mel_filterbank(const MfccConfig& cfg) {
  cfg.validate();
  MelFilterbank fb;
  fb.n_mels = cfg.n_mels;
  fb.n_bins = cfg.stft.n_fft / 2 + 1;
  const double lo = mel_scale(cfg.fmin), hi = mel_scale(cfg.effective_fmax());
  const std::size_t n_points = cfg.n_mels + 2;
  fb.points.resize(n_points);
  for (std::size_t j = 0; j < n_points; ++j) {
    const double mel = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(n_points - 1);
    const double hz = mel_to_hz(mel);
    const auto bin = static_cast<std::size_t>(
        std::floor(static_cast<double>(cfg.stft.n_fft + 1) * hz / cfg.sample_rate));
    fb.points[j] = std::min(bin, fb.n_bins - 1);
  }
  for (std::size_t j = 1; j < n_points; ++j) {
    if (fb.points[j] == fb.points[j - 1]) {
      std::ostringstream os;
      os << "mel_filterbank: mel points " << j - 1 << " and " << j << " both map to bin "
         << fb.points[j] << " (filters " << (j >= 2 ? j - 2 : 0) << " and " << j - 1
         << " collide); use fewer mels or a larger n_fft";
      throw std::invalid_argument(os.str());
    }
  }
  fb.weights.assign(fb.n_mels * fb.n_bins, 0.0);
  for (std::size_t m = 0; m < fb.n_mels; ++m) {
    const double a = static_cast<double>(fb.points[m]);
    const double c = static_cast<double>(fb.points[m + 1]);
    const double b = static_cast<double>(fb.points[m + 2]);
    for (std::size_t i = fb.points[m]; i <= fb.points[m + 2]; ++i) {
      const double x = static_cast<double>(i);
      double h = 0.0;
      if (i <= fb.points[m + 1]) {
        h = (x - a) / (c - a);
      } else {
        h = (b - x) / (b - c);
      }
      fb.weights[m * fb.n_bins + i] = h;
    }
  }
  return fb;
}

std::vector<double> dct2_matrix(std::size_t n) {
  if (n == 0) throw std::invalid_argument("dct2_matrix: n must be >= 1");
  std::vector<double> d(n * n);
  const double nn = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / nn) : std::sqrt(2.0 / nn);
    for (std::size_t m = 0; m < n; ++m) {
      d[k * n + m] = s * std::cos(pi * static_cast<double>(k) * (2.0 * m + 1.0) / (2.0 * nn));
    }
  }
  return d;
}

std::vector<double> dct2(std::span<const double> v) {
  const auto d = dct2_matrix(v.size());
  return dct_columns(d, v.size(), v, 1, v.size());
}

RealTensor mfcc(std::span<const double> x, const MfccConfig& cfg) {
  const auto fb = mel_filterbank(cfg);
  const auto spec = stft(x, cfg.stft, cfg.sample_rate);
  const auto lm = log_mel_energies(spec.data, fb, cfg.log_floor);
  const std::size_t n_frames = spec.data.dim(1);
  return RealTensor({cfg.n_mfcc, n_frames},
                    dct_columns(dct2_matrix(cfg.n_mels), cfg.n_mels, lm.data(), n_frames, cfg.n_mfcc));
}

ComplexTensor complex_mfcc_workflow1(std::span<const double> x, const MfccConfig& cfg) {
  return stft(x, cfg.stft, cfg.sample_rate).data;
}

Workflow2Result complex_mfcc_workflow2_parts(std::span<const double> x, const MfccConfig& cfg) {
  const auto fb = mel_filterbank(cfg);
  const auto spec = stft(x, cfg.stft, cfg.sample_rate).data;
  const std::size_t n_frames = spec.dim(1);
  Workflow2Result r;
  r.log_mel = log_mel_energies(spec, fb, cfg.log_floor);
  r.mel_phase = RealTensor({cfg.n_mels, n_frames});
  r.combined = ComplexTensor({cfg.n_mels, n_frames});
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    for (std::size_t t = 0; t < n_frames; ++t) {
      double sr = 0.0, si = 0.0;
      for (std::size_t i = fb.points[m]; i <= fb.points[m + 2]; ++i) {
        sr += fb.at(m, i) * spec.re()[i * n_frames + t];
        si += fb.at(m, i) * spec.im()[i * n_frames + t];
      }
      double ph = (sr == 0.0 && si == 0.0) ? 0.0 : std::atan2(si, sr);
      if (ph == -pi) ph = pi;
      const std::size_t j = m * n_frames + t;
      r.mel_phase[j] = ph;
      r.combined.re()[j] = r.log_mel[j] * std::cos(ph);
      r.combined.im()[j] = r.log_mel[j] * std::sin(ph);
    }
  }
  const auto d = dct2_matrix(cfg.n_mels);
  r.coeffs = ComplexTensor({cfg.n_mfcc, n_frames},
                           dct_columns(d, cfg.n_mels, r.combined.re(), n_frames, cfg.n_mfcc),
                           dct_columns(d, cfg.n_mels, r.combined.im(), n_frames, cfg.n_mfcc));
  return r;
}

ComplexTensor complex_mfcc_workflow2(std::span<const double> x, const MfccConfig& cfg) {
  return complex_mfcc_workflow2_parts(x, cfg).coeffs;
}

namespace {

template <class Copy>
void fit_rows(std::size_t rows, std::size_t in_frames, std::size_t out_frames, Copy copy) {
  const std::size_t keep = std::min(in_frames, out_frames);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < keep; ++t) copy(r * in_frames + t, r * out_frames + t);
}

}  // namespace

RealTensor fit_frames(const RealTensor& t, std::size_t n_frames) {
  if (t.rank() != 2 || n_frames == 0) throw ShapeError("fit_frames: expected (rows, frames)");
  RealTensor out({t.dim(0), n_frames});
  fit_rows(t.dim(0), t.dim(1), n_frames, [&](std::size_t s, std::size_t d) { out[d] = t[s]; });
  return out;
}

ComplexTensor fit_frames(const ComplexTensor& t, std::size_t n_frames) {
  if (t.rank() != 2 || n_frames == 0) throw ShapeError("fit_frames: expected (rows, frames)");
  ComplexTensor out({t.dim(0), n_frames});
  fit_rows(t.dim(0), t.dim(1), n_frames, [&](std::size_t s, std::size_t d) {
    out.re()[d] = t.re()[s];
    out.im()[d] = t.im()[s];
  });
  return out;
}

Wav read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw WavError(path + ": cannot open");
  char tag[4];
  auto read_tag = [&](const char* what) {
    try {
      detail::read_exact(is, tag, 4, what);
    } catch (const FormatError&) {
      throw WavError(path + ": truncated " + what);
    }
    return std::string(tag, 4);
  };
  if (read_tag("RIFF header") != "RIFF") throw WavError(path + ": not a RIFF file");
  detail::read_u32_le(is, "RIFF size");
  if (read_tag("WAVE tag") != "WAVE") throw WavError(path + ": not a WAVE file");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  Wav wav;
  for (;;) {
    if (is.peek() == std::char_traits<char>::eof()) break;
    const std::string id = read_tag("chunk id");
    const std::uint32_t size = detail::read_u32_le(is, "chunk size");
    if (id == "fmt ") {
      if (size < 16) throw WavError(path + ": fmt chunk too small");
      format = detail::read_u16_le(is, "format tag");
      channels = detail::read_u16_le(is, "channel count");
      wav.sample_rate = detail::read_u32_le(is, "sample rate");
      detail::read_u32_le(is, "byte rate");
      detail::read_u16_le(is, "block align");
      bits = detail::read_u16_le(is, "bits per sample");
      is.ignore(size - 16 + (size & 1u));
      have_fmt = true;
      if (format != 1) {
        throw WavError(path + ": unsupported format (format tag " + std::to_string(format) +
                       ", only PCM is supported)");
      }
      if (bits != 16) {
        throw WavError(path + ": unsupported format (" + std::to_string(bits) +
                       "-bit samples, only 16-bit PCM is supported)");
      }
      if (channels != 1) {
        throw WavError(path + ": unsupported format (" + std::to_string(channels) +
                       " channels, only mono is supported)");
      }
      if (wav.sample_rate == 0) throw WavError(path + ": sample rate is zero");
    } else if (id == "data") {
      if (!have_fmt) throw WavError(path + ": data chunk before fmt chunk");
      std::vector<char> raw(size);
      try {
        detail::read_exact(is, raw.data(), size, "sample data");
      } catch (const FormatError&) {
        throw WavError(path + ": truncated sample data");
      }
      wav.samples.resize(size / 2);
      for (std::size_t i = 0; i < wav.samples.size(); ++i) {
        const auto lo = static_cast<unsigned char>(raw[2 * i]);
        const auto hi = static_cast<unsigned char>(raw[2 * i + 1]);
        const auto v = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
        wav.samples[i] = static_cast<double>(v) / 32768.0;
      }
      return wav;
    } else {
      is.ignore(size + (size & 1u));
    }
  }
  throw WavError(path + ": no data chunk");
}

void write_wav(const std::string& path, std::span<const double> samples, std::uint32_t sample_rate) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw WavError(path + ": cannot open for writing");
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  auto u16 = [&](std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    os.write(b, 2);
  };
  os.write("RIFF", 4);
  detail::write_u32_le(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  detail::write_u32_le(os, 16);
  u16(1);
  u16(1);
  detail::write_u32_le(os, sample_rate);
  detail::write_u32_le(os, sample_rate * 2);
  u16(2);
  u16(16);
  os.write("data", 4);
  detail::write_u32_le(os, data_bytes);
  for (double s : samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(std::lround(std::clamp(c * 32768.0, -32768.0, 32767.0)));
    u16(static_cast<std::uint16_t>(q));
  }
  if (!os) throw WavError(path + ": write failed");
}

void write_feature_csv(const std::string& path, const RealTensor& t) {
  if (t.rank() != 2) throw ShapeError("write_feature_csv: expected (coeffs, frames)");
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  const std::size_t rows = t.dim(0), frames = t.dim(1);
  for (std::size_t r = 0; r < rows; ++r) os << (r ? "," : "") << 'c' << r;
  os << '\n' << std::setprecision(17);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t r = 0; r < rows; ++r) os << (r ? "," : "") << t[r * frames + f];
    os << '\n';
  }
}

void write_feature_csv(const std::string& path, const ComplexTensor& t) {
  if (t.rank() != 2) throw ShapeError("write_feature_csv: expected (coeffs, frames)");
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  const std::size_t rows = t.dim(0), frames = t.dim(1);
  for (std::size_t r = 0; r < rows; ++r) os << (r ? "," : "") << 'c' << r << "_re,c" << r << "_im";
  os << '\n' << std::setprecision(17);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t r = 0; r < rows; ++r) {
      os << (r ? "," : "") << t.re()[r * frames + f] << ',' << t.im()[r * frames + f];
    }
    os << '\n';
  }
}

}  // namespace cvnn::audio
