#include "cvnn/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "cvnn/audio.hpp"
#include "cvnn/rng.hpp"

namespace cvnn::data {

namespace fs = std::filesystem;
using std::numbers::pi;

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be(std::istream& is, const std::string& file, const char* what) {
  try {
    return detail::read_u32_be(is, what);
  } catch (const FormatError&) {
    throw DataError(file + ": truncated " + what);
  }
}

void write_u32_be(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  os.write(b, 4);
}

}  // namespace

std::size_t LabeledImages::num_classes() const {
  int top = -1;
  for (int l : labels) top = std::max(top, l);
  return static_cast<std::size_t>(top + 1);
}

LabeledImages load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream im(images_path, std::ios::binary);
  if (!im) throw DataError(images_path + ": cannot open");
  std::ifstream lb(labels_path, std::ios::binary);
  if (!lb) throw DataError(labels_path + ": cannot open");

  if (read_be(im, images_path, "images header") != kImagesMagic) {
    throw DataError(images_path + ": bad images magic");
  }
  const std::uint32_t n = read_be(im, images_path, "images header");
  const std::uint32_t rows = read_be(im, images_path, "images header");
  const std::uint32_t cols = read_be(im, images_path, "images header");
  if (read_be(lb, labels_path, "labels header") != kLabelsMagic) {
    throw DataError(labels_path + ": bad labels magic");
  }
  const std::uint32_t n_labels = read_be(lb, labels_path, "labels header");
  if (n != n_labels) {
    throw DataError("count mismatch: " + std::to_string(n) + " images vs " + std::to_string(n_labels) +
                    " labels");
  }
  if (n == 0 || rows == 0 || cols == 0) throw DataError(images_path + ": empty image set");

  const std::size_t px = static_cast<std::size_t>(rows) * cols;
  std::vector<unsigned char> raw(static_cast<std::size_t>(n) * px);
  im.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(im.gcount()) != raw.size()) {
    throw DataError(images_path + ": truncated images file");
  }
  std::vector<unsigned char> lab(n);
  lb.read(reinterpret_cast<char*>(lab.data()), n);
  if (static_cast<std::size_t>(lb.gcount()) != n) throw DataError(labels_path + ": truncated labels file");

  LabeledImages d;
  d.images = RealTensor({n, 1, rows, cols});
  for (std::size_t i = 0; i < raw.size(); ++i) d.images[i] = raw[i] / 255.0;
  d.labels.assign(lab.begin(), lab.end());
  return d;
}

void write_idx(const std::string& images_path, const std::string& labels_path, const LabeledImages& d) {
  if (d.images.rank() != 4 || d.images.dim(1) != 1 || d.images.dim(0) != d.labels.size()) {
    throw ShapeError("write_idx: expected images (N, 1, H, W) matching labels");
  }
  std::ofstream im(images_path, std::ios::binary);
  std::ofstream lb(labels_path, std::ios::binary);
  if (!im || !lb) throw DataError("write_idx: cannot open output files");
  const auto n = static_cast<std::uint32_t>(d.labels.size());
  write_u32_be(im, kImagesMagic);
  write_u32_be(im, n);
  write_u32_be(im, static_cast<std::uint32_t>(d.images.dim(2)));
  write_u32_be(im, static_cast<std::uint32_t>(d.images.dim(3)));
  for (double v : d.images.data()) {
    im.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  write_u32_be(lb, kLabelsMagic);
  write_u32_be(lb, n);
  for (int l : d.labels) lb.put(static_cast<char>(l));
  if (!im || !lb) throw DataError("write_idx: write failed");
}

LabeledImages take(const LabeledImages& d, std::size_t n) {
  n = std::min(n, d.count());
  Shape shape = d.images.shape();
  const std::size_t per = d.images.size() / shape[0];
  shape[0] = n;
  const auto src = d.images.data();
  LabeledImages out;
  out.images = RealTensor(shape, std::vector<double>(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(n * per)));
  out.labels.assign(d.labels.begin(), d.labels.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

Setting parse_setting(const std::string& s) {
  static const std::map<std::string, Setting> names = {
      {"1", Setting::real_cnn_baseline}, {"real_cnn_baseline", Setting::real_cnn_baseline},
      {"2", Setting::cv_real_input},     {"cv_real_input", Setting::cv_real_input},
      {"3", Setting::fixed_imag},        {"fixed_imag", Setting::fixed_imag},
      {"4", Setting::fixed_phase},       {"fixed_phase", Setting::fixed_phase},
      {"5", Setting::random_perturb},    {"random_perturb", Setting::random_perturb},
  };
  const auto it = names.find(s);
  if (it == names.end()) throw std::invalid_argument("unknown setting '" + s + "' (expected 1-5)");
  return it->second;
}

std::string setting_name(Setting s) {
  switch (s) {
    case Setting::real_cnn_baseline: return "real_cnn_baseline";
    case Setting::cv_real_input: return "cv_real_input";
    case Setting::fixed_imag: return "fixed_imag";
    case Setting::fixed_phase: return "fixed_phase";
    case Setting::random_perturb: return "random_perturb";
  }
  return "?";
}

ComplexTensor apply_perturbation(const RealTensor& images, const PerturbationSetting& s, Split split,
                                 Rng& rng) {
  if (s.setting == Setting::real_cnn_baseline) {
    throw std::invalid_argument("apply_perturbation: the real baseline takes real input directly");
  }
  ComplexTensor out(images.shape());
  std::copy(images.data().begin(), images.data().end(), out.re().begin());
  if (split == Split::test && s.train_only) return out;

  auto re = out.re();
  auto im = out.im();
  switch (s.setting) {
    case Setting::real_cnn_baseline:
    case Setting::cv_real_input:
      break;
    case Setting::fixed_imag:
      std::fill(im.begin(), im.end(), s.imag_value);
      break;
    case Setting::fixed_phase: {
      const double c = std::cos(s.phase_value), sn = std::sin(s.phase_value);
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double p = re[i];
        re[i] = p * c;
        im[i] = p * sn;
      }
      break;
    }
    case Setting::random_perturb:
      for (std::size_t i = 0; i < out.size(); ++i) {
        re[i] += rng.uniform(-s.noise_scale, s.noise_scale);
        im[i] += rng.uniform(-s.noise_scale, s.noise_scale);
      }
      break;
  }
  return out;
}

WavDirResult load_wav_dir(const std::string& root, const std::vector<std::string>& class_map) {
  if (!fs::is_directory(root)) throw DataError(root + ": not a directory");
  WavDirResult r;
  if (class_map.empty()) {
    for (const auto& e : fs::directory_iterator(root)) {
      if (e.is_directory()) r.class_names.push_back(e.path().filename().string());
    }
    std::sort(r.class_names.begin(), r.class_names.end());
  } else {
    r.class_names = class_map;
  }
  if (r.class_names.empty()) throw DataError(root + ": no class directories");

  for (std::size_t c = 0; c < r.class_names.size(); ++c) {
    const fs::path dir = fs::path(root) / r.class_names[c];
    if (!fs::is_directory(dir)) throw DataError("class '" + r.class_names[c] + "': directory missing");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
    }
    if (files.empty()) throw DataError("class '" + r.class_names[c] + "': no .wav files");
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        auto w = audio::read_wav(f.string());
        AudioClip clip;
        clip.samples = std::move(w.samples);
        clip.sample_rate = w.sample_rate;
        clip.label = static_cast<int>(c);
        clip.source_id = r.class_names[c] + "/" + f.filename().string();
        r.clips.push_back(std::move(clip));
      } catch (const FormatError& e) {
        r.errors.emplace_back(e.what());
      }
    }
  }
  return r;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw DataError(path + ": cannot open for writing");
  os << "path,label,split\n";
  for (const auto& e : entries) {
    if (e.path.find_first_of(",\n") != std::string::npos) {
      throw DataError("manifest path contains a comma or newline: " + e.path);
    }
    os << e.path << ',' << e.label << ',' << (e.split == Split::train ? "train" : "test") << '\n';
  }
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError(path + ": cannot open");
  std::string line;
  if (!std::getline(is, line) || line != "path,label,split") throw DataError(path + ": bad manifest header");
  std::vector<ManifestEntry> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto a = line.find(','), b = line.rfind(',');
    if (a == std::string::npos || a == b) throw DataError(path + ":" + std::to_string(lineno) + ": expected 3 fields");
    ManifestEntry e;
    e.path = line.substr(0, a);
    const std::string label = line.substr(a + 1, b - a - 1), split = line.substr(b + 1);
    try {
      std::size_t used = 0;
      e.label = std::stoi(label, &used);
      if (used != label.size() || e.label < 0) throw std::invalid_argument(label);
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad label '" + label + "'");
    }
    if (split == "train") {
      e.split = Split::train;
    } else if (split == "test") {
      e.split = Split::test;
    } else {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad split '" + split + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

SynthKind parse_synth_kind(const std::string& s) {
  if (s == "tonal_percussive") return SynthKind::tonal_percussive;
  if (s == "phase_coded") return SynthKind::phase_coded;
  throw std::invalid_argument("unknown synthetic dataset '" + s + "'");
}

std::string synth_kind_name(SynthKind k) {
  return k == SynthKind::tonal_percussive ? "tonal_percussive" : "phase_coded";
}

double phase_code(int label, std::size_t band) {
  if (label == 0) return 0.0;
  return (band % 2 == 1) ? pi / 2 : 0.0;
}

std::vector<std::size_t> phase_coded_bins(const SynthSpec& spec) {
  if (spec.hop == 0 || spec.n_fft % spec.hop != 0) {
    throw std::invalid_argument("phase_coded: hop must divide n_fft");
  }
  audio::MfccConfig cfg;
  cfg.stft.n_fft = spec.n_fft;
  cfg.stft.hop = spec.hop;
  cfg.sample_rate = spec.sample_rate;
  cfg.n_mels = spec.n_mels;
  cfg.n_mfcc = std::min<std::size_t>(13, spec.n_mels);
  const auto fb = audio::mel_filterbank(cfg);
  const std::size_t step = spec.n_fft / spec.hop;
  std::vector<std::size_t> bins;
  for (std::size_t m = 0; m < fb.n_mels; ++m) {
    const std::size_t lo = fb.points[m], c = fb.points[m + 1], hi = fb.points[m + 2];
    // nearest multiple of step to the center, strictly inside the band
    std::size_t best = 0;
    for (std::size_t k = step * ((lo / step) + 1); k < hi; k += step) {
      if (k <= lo || (!bins.empty() && k <= bins.back())) continue;
      if (best == 0 || (k > c ? k - c : c - k) < (best > c ? best - c : c - best)) best = k;
    }
    if (best == 0 || best >= spec.n_fft / 2) {
      throw std::invalid_argument("phase_coded: mel band " + std::to_string(m) +
                                  " has no free tone bin; use fewer mels or a larger n_fft");
    }
    bins.push_back(best);
  }
  return bins;
}

namespace {

std::vector<double> tonal_clip(std::size_t len, double sr, double noise, Rng& rng) {
  const double f0 = rng.uniform(kTonalMinHz, kTonalMaxHz);
  const std::size_t harmonics = 3 + rng.below(3);
  std::vector<double> amp(harmonics), ph(harmonics);
  for (std::size_t h = 0; h < harmonics; ++h) {
    amp[h] = h == 0 ? 1.0 : rng.uniform(0.2, 0.8) / static_cast<double>(h + 1);
    ph[h] = rng.uniform(-pi, pi);
  }
  std::vector<double> x(len);
  double norm = 0.0;
  for (double a : amp) norm += a;
  for (std::size_t i = 0; i < len; ++i) {
    const double t = static_cast<double>(i) / sr;
    double s = 0.0;
    for (std::size_t h = 0; h < harmonics; ++h) {
      const double f = f0 * static_cast<double>(h + 1);
      if (f < sr / 2) s += amp[h] * std::sin(2 * pi * f * t + ph[h]);
    }
    x[i] = 0.5 * s / norm + noise * rng.normal();
  }
  return x;
}

std::vector<double> percussive_clip(std::size_t len, double sr, double noise, Rng& rng) {
  std::vector<double> x(len);
  for (auto& v : x) v = noise * rng.normal();
  std::size_t onset = static_cast<std::size_t>(rng.uniform(0.0, 0.1) * sr);
  while (onset < len) {
    const double tau = rng.uniform(0.01, 0.08) * sr;  // decay, samples
    const double gain = rng.uniform(0.3, 0.8);
    const double a = rng.uniform(0.05, 0.95);  // one-pole filter coefficient
    const bool highpass = rng.below(2) == 1;
    double y = 0.0, prev = 0.0;
    const std::size_t end = std::min(len, onset + static_cast<std::size_t>(6 * tau));
    for (std::size_t i = onset; i < end; ++i) {
      const double w = rng.uniform(-1.0, 1.0);
      y = highpass ? a * (y + w - prev) : (1 - a) * w + a * y;
      prev = w;
      x[i] += gain * y * std::exp(-static_cast<double>(i - onset) / tau);
    }
    onset += static_cast<std::size_t>(rng.uniform(0.1, 0.4) * sr);
  }
  return x;
}

// One period (n_fft samples) of a sum of bin-centered cosines.
std::vector<double> cosine_period(std::size_t n, const std::vector<std::pair<std::size_t, std::pair<double, double>>>& lines) {
  std::vector<audio::cplx> spec(n);
  for (const auto& [k, ap] : lines) {
    const auto c = std::polar(ap.first * n / 2.0, ap.second);
    spec[k] += c;
    spec[n - k] += std::conj(c);
  }
  // inverse DFT via the forward FFT of the conjugate
  for (auto& v : spec) v = std::conj(v);
  audio::fft_inplace(spec);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = spec[i].real() / static_cast<double>(n);
  return x;
}

}  // namespace

std::vector<AudioClip> synth_audio_dataset(const SynthSpec& spec, Rng& rng) {
  if (!(spec.duration > 0.0)) throw std::invalid_argument("synth_audio_dataset: duration must be > 0");
  if (!(spec.sample_rate > 0.0)) throw std::invalid_argument("synth_audio_dataset: sample_rate must be > 0");
  if (spec.n_per_class == 0) throw std::invalid_argument("synth_audio_dataset: n_per_class must be >= 1");
  const auto len = static_cast<std::size_t>(std::llround(spec.duration * spec.sample_rate));
  if (len == 0) throw std::invalid_argument("synth_audio_dataset: duration is shorter than one sample");

  std::vector<AudioClip> out(2 * spec.n_per_class);
  auto name = [&](int label, std::size_t i) {
    return synth_kind_name(spec.kind) + "_" + std::to_string(label) + "_" + std::to_string(i);
  };

  if (spec.kind == SynthKind::tonal_percussive) {
    for (int label = 0; label < 2; ++label) {
      for (std::size_t i = 0; i < spec.n_per_class; ++i) {
        auto& c = out[label * spec.n_per_class + i];
        c.samples = label == 0 ? tonal_clip(len, spec.sample_rate, spec.noise, rng)
                               : percussive_clip(len, spec.sample_rate, spec.noise, rng);
        c.sample_rate = spec.sample_rate;
        c.label = label;
        c.source_id = name(label, i);
      }
    }
    return out;
  }

  const auto bins = phase_coded_bins(spec);
  const std::size_t n = spec.n_fft;
  std::vector<bool> is_tone(n / 2 + 1, false);
  for (auto k : bins) is_tone[k] = true;
  for (std::size_t i = 0; i < spec.n_per_class; ++i) {
    // one random level per pair, small per-band jitter
    const double gain = 0.03 * std::exp(rng.uniform(std::log(0.1), 0.0));
    std::vector<double> amp(bins.size());
    for (auto& a : amp) a = gain * std::exp(rng.uniform(-0.1, 0.1));
    const double psi = rng.uniform(-pi, pi);
    std::vector<std::pair<std::size_t, std::pair<double, double>>> background;
    const double bg = spec.noise / std::sqrt(static_cast<double>(n / 2));
    for (std::size_t k = 1; k < n / 2; ++k) {
      if (!is_tone[k]) background.push_back({k, {bg * std::sqrt(-std::log(1.0 - rng.uniform())), rng.uniform(-pi, pi)}});
    }
    for (int label = 0; label < 2; ++label) {
      auto lines = background;
      for (std::size_t b = 0; b < bins.size(); ++b) lines.push_back({bins[b], {amp[b], psi + phase_code(label, b)}});
      const auto period = cosine_period(n, lines);
      auto& c = out[label * spec.n_per_class + i];
      c.samples.resize(len);
      for (std::size_t s = 0; s < len; ++s) c.samples[s] = period[s % n];
      c.sample_rate = spec.sample_rate;
      c.label = label;
      c.source_id = name(label, i);
    }
  }
  return out;
}

std::vector<AudioClip> segment_clips(const std::vector<AudioClip>& clips, double seconds) {
  if (!(seconds > 0.0)) throw std::invalid_argument("segment_clips: segment length must be > 0");
  std::vector<AudioClip> out;
  for (const auto& c : clips) {
    const auto seg = static_cast<std::size_t>(std::llround(seconds * c.sample_rate));
    if (seg == 0) throw std::invalid_argument("segment_clips: segment shorter than one sample");
    for (std::size_t k = 0; (k + 1) * seg <= c.samples.size(); ++k) {
      AudioClip s;
      const auto begin = c.samples.begin() + static_cast<std::ptrdiff_t>(k * seg);
      s.samples.assign(begin, begin + static_cast<std::ptrdiff_t>(seg));
      s.sample_rate = c.sample_rate;
      s.label = c.label;
      s.source_id = c.source_id + "#" + std::to_string(k);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::string track_of(const std::string& source_id) {
  const auto p = source_id.rfind('#');
  return p == std::string::npos ? source_id : source_id.substr(0, p);
}

SplitIndices split_by_track(const std::vector<AudioClip>& clips, double test_fraction, Rng& rng) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("split_by_track: test_fraction must be in (0, 1)");
  }
  // label -> tracks in first-seen order
  std::map<int, std::vector<std::string>> tracks;
  std::map<std::string, bool> seen;
  for (const auto& c : clips) {
    const auto t = track_of(c.source_id);
    if (!seen.emplace(t, true).second) continue;
    tracks[c.label].push_back(t);
  }
  std::map<std::string, bool> is_test;
  for (auto& [label, ts] : tracks) {
    for (std::size_t i = ts.size(); i > 1; --i) std::swap(ts[i - 1], ts[rng.below(static_cast<std::uint32_t>(i))]);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ts.size())));
    if (ts.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, ts.size() - 1);
    for (std::size_t i = 0; i < ts.size(); ++i) is_test[ts[i]] = i < n_test;
  }
  SplitIndices s;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    (is_test[track_of(clips[i].source_id)] ? s.test : s.train).push_back(i);
  }
  return s;
}

}  // namespace cvnn::data
