#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "cvnn/audio.hpp"
#include "cvnn/rng.hpp"
#include "oracles.hpp"

using namespace cvnn;
using namespace cvnn::audio;
using std::numbers::pi;

namespace {

std::vector<double> random_signal(std::size_t n, Rng& rng) {
  std::vector<double> x(n);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  return x;
}

}  // namespace

using test::brute_mfcc;

TEST_CASE("hann window") {
  const auto w4 = hann_window(4);
  CHECK(w4[0] == 0.0);
  CHECK(w4[3] == 0.0);
  CHECK(std::fabs(w4[1] - 0.5 * (1 - std::cos(2 * pi / 3))) < 1e-15);
  CHECK(std::fabs(w4[1] - 0.75) < 1e-15);
  const auto w9 = hann_window(9);
  CHECK(w9[4] == 1.0);
  for (std::size_t i = 0; i < 9; ++i) CHECK(std::fabs(w9[i] - w9[8 - i]) < 1e-15);
  CHECK_THROWS_AS(hann_window(1), std::invalid_argument);
}

TEST_CASE("fft matches the naive dft") {
  Rng rng(1);
  for (std::size_t n : {1u, 2u, 8u, 64u, 1024u}) {
    const auto x = random_signal(n, rng);
    std::vector<cplx> a(x.begin(), x.end());
    fft_inplace(a);
    const auto ref = dft_naive(x);
    double err = 0.0, scale = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
      err = std::fmax(err, std::abs(a[k] - ref[k]));
      scale = std::fmax(scale, std::abs(ref[k]));
    }
    CHECK(err / scale < 1e-12);
  }
  std::vector<cplx> bad(6);
  CHECK_THROWS_AS(fft_inplace(bad), std::invalid_argument);
}

TEST_CASE("stft examples") {
  StftConfig rect;
  rect.n_fft = 64;
  rect.hop = 64;
  rect.window.assign(64, 1.0);

  const auto zero = stft(std::vector<double>(200, 0.0), rect, 8000.0);
  for (double v : zero.data.re()) CHECK(v == 0.0);
  CHECK(zero.data.shape() == Shape{33, 3});

  const std::size_t k0 = 5;
  std::vector<double> cosine(64);
  for (std::size_t i = 0; i < 64; ++i) cosine[i] = std::cos(2 * pi * k0 * i / 64.0);
  const auto s = stft(cosine, rect, 8000.0);
  for (std::size_t k = 0; k < 33; ++k) {
    const double mag = std::hypot(s.data.re()[k], s.data.im()[k]);
    if (k == k0) {
      CHECK(std::fabs(mag - 32.0) < 1e-9);
    } else {
      CHECK(mag < 1e-9);
    }
  }

  Rng rng(2);
  StftConfig hann;
  hann.n_fft = 256;
  hann.hop = 100;
  const auto x = random_signal(1000, rng);
  const auto spec = stft(x, hann, 8000.0);
  const auto win = hann_window(256);
  const std::size_t frames = spec.data.dim(1);
  CHECK(frames == (1000 - 256) / 100 + 1);
  for (std::size_t t = 0; t < frames; ++t) {
    double time_energy = 0.0;
    for (std::size_t i = 0; i < 256; ++i) time_energy += std::pow(x[t * 100 + i] * win[i], 2);
    double freq = 0.0;
    for (std::size_t k = 0; k <= 128; ++k) {
      const double p = std::pow(spec.data.re()[k * frames + t], 2) + std::pow(spec.data.im()[k * frames + t], 2);
      freq += (k == 0 || k == 128) ? p : 2 * p;
    }
    CHECK(std::fabs(time_energy - freq / 256.0) < 1e-9 * time_energy);
  }

  CHECK_THROWS_AS(stft(std::vector<double>(10, 0.0), hann, 8000.0), std::invalid_argument);
}

TEST_CASE("stft matches the direct dft on random 1 s signals") {
  Rng rng(3);
  StftConfig cfg;  // 2048 / 512, Hann
  const auto win = hann_window(cfg.n_fft);
  for (int trial = 0; trial < 3; ++trial) {
    const auto x = random_signal(22050, rng);
    const auto s = stft(x, cfg, 22050.0);
    const std::size_t frames = s.data.dim(1);
    std::vector<double> frame(cfg.n_fft);
    for (std::size_t t : {std::size_t{0}, frames / 2, frames - 1}) {
      for (std::size_t i = 0; i < cfg.n_fft; ++i) frame[i] = x[t * cfg.hop + i] * win[i];
      const auto ref = dft_naive(frame);
      double err = 0.0, scale = 0.0;
      for (std::size_t k = 0; k <= cfg.n_fft / 2; ++k) {
        err = std::fmax(err, std::abs(cplx(s.data.re()[k * frames + t], s.data.im()[k * frames + t]) - ref[k]));
        scale = std::fmax(scale, std::abs(ref[k]));
      }
      CHECK(err / scale < 1e-9);
    }
  }
}

TEST_CASE("mel scale") {
  CHECK(mel_scale(0.0) == 0.0);
  CHECK(mel_scale(6300.0) == 2595.0);
  CHECK(std::fabs(mel_scale(700.0) - 2595.0 * std::log10(2.0)) < 1e-12);
  CHECK_THROWS_AS(mel_scale(-1.0), std::invalid_argument);
  for (double f = 0; f < 11000; f += 37.0) {
    CHECK(mel_scale(f + 1.0) > mel_scale(f));
    CHECK(std::fabs(mel_to_hz(mel_scale(f)) - f) < 1e-8);
  }
}

TEST_CASE("mel filterbank shape rules") {
  MfccConfig cfg;
  const auto fb = mel_filterbank(cfg);
  CHECK(fb.n_bins == 1025);
  CHECK(fb.points.size() == 28);
  for (std::size_t m = 0; m < fb.n_mels; ++m) {
    CHECK(fb.at(m, fb.center(m)) == 1.0);
    for (std::size_t i = 0; i < fb.n_bins; ++i) {
      const double h = fb.at(m, i);
      CHECK(h >= 0.0);
      if (i < fb.points[m] || i > fb.points[m + 2]) CHECK(h == 0.0);
    }
    const std::size_t a = fb.points[m], c = fb.points[m + 1];
    if ((c - a) % 2 == 0) CHECK(fb.at(m, (a + c) / 2) == 0.5);
  }
  for (std::size_t i = fb.points.front(); i <= fb.points.back(); ++i) {
    double s = 0.0;
    for (std::size_t m = 0; m < fb.n_mels; ++m) s += fb.at(m, i);
    if (i > fb.points.front() && i < fb.points.back()) CHECK(s > 0.0);
    CHECK(s <= 2.0);
  }

  MfccConfig dense = cfg;
  dense.stft.n_fft = 256;
  dense.stft.hop = 64;
  dense.n_mels = 80;
  try {
    mel_filterbank(dense);
    FAIL("expected collision");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("collide") != std::string::npos);
  }
}

TEST_CASE("dct-ii is orthonormal") {
  for (std::size_t n : {1u, 2u, 13u, 26u, 40u}) {
    const auto d = dct2_matrix(n);
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < n; ++k) s += d[k * n + i] * d[k * n + j];
        err = std::fmax(err, std::fabs(s - (i == j ? 1.0 : 0.0)));
      }
    CHECK(err < 1e-10);
  }
  const std::vector<double> c(26, 2.5);
  const auto y = dct2(c);
  CHECK(std::fabs(y[0] - 2.5 * std::sqrt(26.0)) < 1e-12);
  for (std::size_t k = 1; k < 26; ++k) CHECK(std::fabs(y[k]) < 1e-12);
}

TEST_CASE("mfcc examples") {
  MfccConfig cfg;
  const std::size_t len = 3 * 22050;
  const std::vector<double> silence(len, 0.0);
  const auto z = mfcc(silence, cfg);
  CHECK(z.shape() == Shape{13, 126});
  for (std::size_t t = 0; t < 126; ++t) {
    CHECK(std::fabs(z[t] - std::log(cfg.log_floor) * std::sqrt(26.0)) < 1e-9);
    for (std::size_t k = 1; k < 13; ++k) CHECK(std::fabs(z[k * 126 + t]) < 1e-9);
  }

  std::vector<double> tone(22050);
  for (std::size_t i = 0; i < tone.size(); ++i) tone[i] = 0.5 * std::sin(2 * pi * 440.0 * i / 22050.0);
  const auto got = mfcc(tone, cfg);
  const auto ref = brute_mfcc(tone, cfg);
  double err = 0.0;
  for (std::size_t k = 0; k < 13; ++k)
    for (std::size_t t = 0; t < got.dim(1); ++t) err = std::fmax(err, std::fabs(got[k * got.dim(1) + t] - ref[k][t]));
  CHECK(err < 1e-6);

  for (std::size_t n_fft : {512u, 1024u, 2048u}) {
    for (std::size_t hop : {128u, 256u, 512u}) {
      MfccConfig c2;
      c2.stft.n_fft = n_fft;
      c2.stft.hop = hop;
      c2.n_mels = 20;
      c2.n_mfcc = 10;
      const auto out = mfcc(tone, c2);
      CHECK(out.shape() == Shape{10, (tone.size() - n_fft) / hop + 1});
    }
  }
  const auto len3 = stft_frame_count(len, cfg.stft);
  CHECK(len3 >= 126);
  CHECK(len3 <= 130);
}

TEST_CASE("workflow 1 is the raw stft") {
  Rng rng(4);
  MfccConfig cfg;
  const auto x = random_signal(8192, rng);
  const auto w1 = complex_mfcc_workflow1(x, cfg);
  CHECK(w1 == stft(x, cfg.stft, cfg.sample_rate).data);
  const auto zero = complex_mfcc_workflow1(std::vector<double>(4096, 0.0), cfg);
  for (std::size_t i = 0; i < zero.size(); ++i) CHECK((zero.re()[i] == 0.0 && zero.im()[i] == 0.0));
}

TEST_CASE("workflow 2") {
  MfccConfig cfg;
  cfg.stft.n_fft = 512;
  cfg.stft.hop = 512;
  cfg.sample_rate = 8000;
  cfg.n_mels = 20;

  SUBCASE("zero-phase frames reproduce the standard mfcc") {
    // An impulse at the start of each rectangular frame has a flat, real DFT.
    cfg.stft.window.assign(512, 1.0);
    std::vector<double> x(512 * 4, 0.0);
    for (std::size_t t = 0; t < 4; ++t) x[t * 512] = 0.3 + 0.1 * t;
    const auto w2 = complex_mfcc_workflow2(x, cfg);
    const auto ref = mfcc(x, cfg);
    for (std::size_t i = 0; i < w2.size(); ++i) {
      CHECK(std::fabs(w2.im()[i]) < 1e-12);
      CHECK(w2.re()[i] == ref[i]);
    }
  }
  SUBCASE("combined value keeps the log-mel magnitude; chirp phases mix in") {
    std::vector<double> chirp(8000);
    for (std::size_t i = 0; i < chirp.size(); ++i) {
      const double t = i / 8000.0;
      chirp[i] = std::sin(2 * pi * (200 * t + 1500 * t * t));
    }
    const auto parts = complex_mfcc_workflow2_parts(chirp, cfg);
    for (std::size_t i = 0; i < parts.combined.size(); ++i) {
      CHECK(std::fabs(std::hypot(parts.combined.re()[i], parts.combined.im()[i]) -
                      std::fabs(parts.log_mel[i])) < 1e-12);
    }
    const auto ref = mfcc(chirp, cfg);
    double gap = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) gap = std::fmax(gap, std::fabs(parts.coeffs.re()[i] - ref[i]));
    CHECK(gap > 1e-3);
    CHECK(mfcc(chirp, cfg) == ref);
  }
}

TEST_CASE("fit_frames pads and trims") {
  RealTensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto p = fit_frames(t, 5);
  CHECK(p.data()[3] == 0.0);
  CHECK(p[5] == 4.0);
  const auto c = fit_frames(t, 2);
  CHECK(c == RealTensor({2, 2}, {1, 2, 4, 5}));
}

TEST_CASE("wav round trip and format errors") {
  const auto dir = std::filesystem::temp_directory_path() / "cvnn_test_audio";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "a.wav").string();
  std::vector<double> s{0.0, 0.5, -0.5, 0.999, -1.0};
  write_wav(path, s, 22050);
  const auto w = read_wav(path);
  CHECK(w.sample_rate == 22050);
  REQUIRE(w.samples.size() == s.size());
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::fabs(w.samples[i] - s[i]) <= 1.0 / 32768.0);

  auto write_header = [&](const std::string& p, std::uint16_t fmt, std::uint16_t ch, std::uint16_t bits) {
    std::ofstream os(p, std::ios::binary);
    auto u32 = [&](std::uint32_t v) { for (int i = 0; i < 4; ++i) os.put(static_cast<char>(v >> (8 * i))); };
    auto u16 = [&](std::uint16_t v) { os.put(static_cast<char>(v)); os.put(static_cast<char>(v >> 8)); };
    os.write("RIFF", 4);
    u32(36 + 6);
    os.write("WAVEfmt ", 8);
    u32(16);
    u16(fmt);
    u16(ch);
    u32(22050);
    u32(22050 * ch * bits / 8);
    u16(static_cast<std::uint16_t>(ch * bits / 8));
    u16(bits);
    os.write("data", 4);
    u32(6);
    os.write("\0\0\0\0\0\0", 6);
  };
  const auto p24 = (dir / "b24.wav").string();
  write_header(p24, 1, 1, 24);
  CHECK_THROWS_WITH_AS(read_wav(p24), doctest::Contains("unsupported format"), WavError);
  const auto pst = (dir / "stereo.wav").string();
  write_header(pst, 1, 2, 16);
  CHECK_THROWS_WITH_AS(read_wav(pst), doctest::Contains("mono"), WavError);
  const auto pfl = (dir / "float.wav").string();
  write_header(pfl, 3, 1, 32);
  CHECK_THROWS_AS(read_wav(pfl), WavError);
  const auto junk = (dir / "junk.wav").string();
  std::ofstream(junk) << "hello";
  CHECK_THROWS_AS(read_wav(junk), WavError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("feature csv export") {
  const auto path = (std::filesystem::temp_directory_path() / "cvnn_feat.csv").string();
  write_feature_csv(path, RealTensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  std::ifstream is(path);
  std::string header, line1;
  std::getline(is, header);
  std::getline(is, line1);
  CHECK(header == "c0,c1");
  CHECK(line1 == "1,4");
  std::filesystem::remove(path);
}
