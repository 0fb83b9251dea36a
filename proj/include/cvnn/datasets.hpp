#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cvnn/tensor.hpp"

namespace cvnn {

class Rng;

namespace data {

/// Missing, unreadable or inconsistent input data.
class DataError : public FormatError {
 public:
  using FormatError::FormatError;
};

struct LabeledImages {
  RealTensor images;        // (N, 1, H, W), pixels in [0, 1]
  std::vector<int> labels;  // N

  std::size_t count() const { return labels.size(); }
  /// Largest label + 1.
  std::size_t num_classes() const;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled by 1/255.
LabeledImages load_idx(const std::string& images_path, const std::string& labels_path);
/// Inverse of load_idx; pixels are rounded back to bytes.
void write_idx(const std::string& images_path, const std::string& labels_path, const LabeledImages& d);

/// First n samples (or all if n exceeds the count).
LabeledImages take(const LabeledImages& d, std::size_t n);

enum class Setting {
  real_cnn_baseline = 1,
  cv_real_input = 2,
  fixed_imag = 3,
  fixed_phase = 4,
  random_perturb = 5,
};

/// Accepts "1".."5" or the enum names.
Setting parse_setting(const std::string& s);
std::string setting_name(Setting s);

struct PerturbationSetting {
  Setting setting = Setting::cv_real_input;
  double imag_value = 0.1;
  double phase_value = 0.5;  // radians
  double noise_scale = 1e-5;
  bool train_only = true;
};

enum class Split { train, test };

/// Builds the complex network input for a split. The real baseline does not
/// go through here and is rejected.
ComplexTensor apply_perturbation(const RealTensor& images, const PerturbationSetting& s, Split split,
                                 Rng& rng);

struct AudioClip {
  std::vector<double> samples;
  double sample_rate = 0.0;
  int label = 0;
  std::string source_id;
};

struct WavDirResult {
  std::vector<AudioClip> clips;
  std::vector<std::string> class_names;  // index == label
  std::vector<std::string> errors;       // one line per file that failed to load
};

/// One subdirectory per class. With an empty class_map every subdirectory is
/// a class, in sorted order; otherwise only the listed ones, labeled by
/// position. Files are read in sorted order.
WavDirResult load_wav_dir(const std::string& root, const std::vector<std::string>& class_map = {});

struct ManifestEntry {
  std::string path;
  int label = 0;
  Split split = Split::train;
};

/// CSV with header path,label,split.
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

enum class SynthKind {
  tonal_percussive,  // label 0 tonal, label 1 percussive
  phase_coded,       // two classes, equal magnitude spectra, different band phases
};

SynthKind parse_synth_kind(const std::string& s);
std::string synth_kind_name(SynthKind k);

struct SynthSpec {
  SynthKind kind = SynthKind::tonal_percussive;
  std::size_t n_per_class = 200;
  double duration = 3.0;  // seconds
  double sample_rate = 22050.0;
  double noise = 0.01;
  /// phase_coded only. One tone is placed near the center of each of
  /// n_mels mel bands, on a bin that is a multiple of n_fft / hop so its
  /// STFT phase is the same in every frame. The background is a sum of
  /// bin-centered sinusoids on the remaining bins, shared within a pair, so
  /// rectangular-window magnitude spectra of a pair match exactly.
  std::size_t n_fft = 2048;
  std::size_t hop = 512;
  std::size_t n_mels = 26;
};

/// Per-band tone phase offset of the phase_coded generator.
double phase_code(int label, std::size_t band);
/// Bins carrying the phase_coded tones (one per band, ascending).
std::vector<std::size_t> phase_coded_bins(const SynthSpec& spec);

/// Clips are ordered class-major and labeled 0..K-1. For phase_coded, clip
/// i of class 0 and clip i of class 1 share amplitudes and noise.
std::vector<AudioClip> synth_audio_dataset(const SynthSpec& spec, Rng& rng);

/// Fundamental frequencies used for tonal clips are drawn from this range.
inline constexpr double kTonalMinHz = 200.0;
inline constexpr double kTonalMaxHz = 600.0;

/// Splits each clip into non-overlapping segments of `seconds`; a trailing
/// partial segment is dropped. Segments keep the parent label and get
/// source_id "<parent>#<k>".
std::vector<AudioClip> segment_clips(const std::vector<AudioClip>& clips, double seconds);

/// Parent track id of a segment ("a.wav#3" -> "a.wav").
std::string track_of(const std::string& source_id);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Assigns whole tracks to train or test, stratified by label, so segments
/// of one track never straddle the split.
SplitIndices split_by_track(const std::vector<AudioClip>& clips, double test_fraction, Rng& rng);

}  // namespace data
}  // namespace cvnn
