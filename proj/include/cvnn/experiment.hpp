#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvnn/activations.hpp"
#include "cvnn/audio.hpp"
#include "cvnn/autodiff.hpp"
#include "cvnn/datasets.hpp"
#include "cvnn/init.hpp"
#include "cvnn/layers.hpp"
#include "cvnn/optim.hpp"
#include "cvnn/phasegraph.hpp"

namespace cvnn::exp {

/// Invalid or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite loss or gradient during training (CLI exit code 4).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Experiment { exp1_image, exp1_activation_sweep, exp2_audio, exp3_gnn };

/// Accepts exp1|sweep1|exp2|exp3 or the enum names.
Experiment parse_experiment(const std::string& s);
std::string experiment_name(Experiment e);
std::string experiment_command(Experiment e);

enum class Arch { image_cvcnn, image_realcnn, audio_cvcnn, audio_realcnn, gnn };
Arch parse_arch(const std::string& s);
std::string arch_name(Arch a);

struct ModelConfig {
  std::size_t conv1 = 16;
  std::size_t conv2 = 32;
  std::size_t dense = 128;
  Activation activation;
  InitSpec init;
  BnGamma bn_gamma = BnGamma::matrix;
  double bn_lambda = 1e-5;
  double bn_momentum = 0.1;
  std::size_t gnn_hidden = 64;
  std::size_t gnn_layers = 2;
};

struct ImageConfig {
  std::string data_dir = "data/mnist_subset";
  std::size_t train_limit = 2000;
  std::size_t test_limit = 1000;
  std::vector<data::Setting> settings{data::Setting::real_cnn_baseline, data::Setting::cv_real_input};
};

struct SweepConfig {
  std::vector<ActivationKind> activations{std::begin(kAllActivations), std::end(kAllActivations)};
  std::vector<data::Setting> settings{data::Setting::cv_real_input, data::Setting::fixed_imag,
                                      data::Setting::fixed_phase, data::Setting::random_perturb};
};

/// Experiment-2 input pipelines.
enum class AudioMethod {
  real_mfcc_real_cnn = 1,
  real_mfcc_cvcnn = 2,
  workflow1_cvcnn = 3,
  workflow2_cvcnn = 4,
};
std::string audio_method_name(AudioMethod m);

struct AudioConfig {
  std::string source = "synth";  // synth | wav
  std::string wav_dir;
  std::vector<std::string> class_map;
  data::SynthSpec synth;
  double segment_seconds = 3.0;
  double test_fraction = 0.25;
  std::size_t frames = 126;
  std::size_t stft_bins = 128;  // rows of the raw STFT kept for workflow 1
  std::vector<AudioMethod> methods{AudioMethod::real_mfcc_real_cnn, AudioMethod::real_mfcc_cvcnn,
                                   AudioMethod::workflow1_cvcnn, AudioMethod::workflow2_cvcnn};
  audio::MfccConfig mfcc;
};

struct GraphConfig {
  std::vector<graph::GraphMode> workflows{graph::GraphMode::unweighted, graph::GraphMode::phase_weighted};
  graph::EdgeWeighting edge_weighting = graph::EdgeWeighting::direct;
};

struct ExperimentConfig {
  Experiment experiment = Experiment::exp1_image;
  std::optional<std::uint64_t> seed;
  std::string output_dir = "out";
  std::size_t epochs = 2;
  std::size_t batch_size = 16;
  std::size_t eval_batch_size = 100;
  OptimKind optimizer = OptimKind::adam;
  double lr = 2e-3;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::optional<double> clip_grad_norm;
  bool write_checkpoint = true;
  ModelConfig model;
  ImageConfig image;
  SweepConfig sweep;
  AudioConfig audio;
  GraphConfig graph;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
};

/// Defaults for one experiment (exp3 defaults to phase-coded synthetic audio).
ExperimentConfig default_config(Experiment e);
/// Parses JSON on top of default_config(e). Unknown keys are rejected. A
/// top-level "experiment" key, if present, must agree with e.
ExperimentConfig parse_config(const std::string& json_text, Experiment e);
std::string config_to_json(const ExperimentConfig& cfg);

// ---------------------------------------------------------------- models

/// Convolutional classifier: conv 3x3 -> act -> BN -> pool 2x2 -> conv 3x3 ->
/// act -> BN -> pool 2x2 -> flatten -> dense -> act -> dense -> head. The
/// complex net uses complex ops, magnitude max pooling and the |.| log-softmax
/// head; the real net uses real ops, ReLU and a plain log-softmax.
class CnnModel {
 public:
  /// input is (C, H, W).
  CnnModel(Arch arch, const ModelConfig& mc, const Shape& input, std::size_t classes, Rng& rng);

  bool is_complex() const { return complex_; }
  std::size_t classes() const { return classes_; }
  std::size_t flat_dim() const { return flat_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  /// Log-probabilities (N, classes) for x (N, C, H, W).
  Var forward(const std::vector<Var>& leaves, const Var& x, bool train);

  /// Running batch-norm statistics as checkpoint records.
  NamedTensors state_records() const;

 private:
  Var act(const Var& z, const std::vector<Var>& leaves, std::optional<std::size_t> bias) const;
  Var block(const Var& x, const std::vector<Var>& leaves, std::size_t conv_w, std::size_t conv_b,
            std::optional<std::size_t> act_b, std::size_t bn_g, std::size_t bn_b, BatchNormState& bn);

  bool complex_;
  ModelConfig mc_;
  std::size_t classes_;
  std::size_t flat_ = 0;
  ParamSet params_;
  std::size_t c1w_, c1b_, bn1g_, bn1b_, c2w_, c2b_, bn2g_, bn2b_, f1w_, f1b_, f2w_, f2b_;
  std::optional<std::size_t> a1b_, a2b_, a3b_;
  BatchNormState bn1_, bn2_;
};

// -------------------------------------------------------------- training

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0, train_acc = 0.0, test_loss = 0.0, test_acc = 0.0;
  double epoch_seconds = 0.0;
};

struct RunReport {
  std::string name;
  std::vector<EpochMetrics> epochs;
  const EpochMetrics& final() const { return epochs.back(); }
};

/// Fraction of rows whose argmax (first on ties) equals the label.
double accuracy(const ComplexTensor& logp, std::span<const int> labels);

/// Log-probabilities for samples `idx` of a split. Train batches run the
/// model in training mode, test batches in evaluation mode.
using BatchForward = std::function<Var(Tape& tape, const std::vector<Var>& leaves, data::Split split,
                                       std::span<const std::size_t> idx)>;
using Progress = std::function<void(const std::string&)>;

struct TrainTask {
  std::string name;
  ParamSet* params = nullptr;
  BatchForward forward;
  std::vector<int> train_labels, test_labels;
};

/// Mini-batch training with per-epoch shuffling from `rng`; evaluates the test
/// set after each epoch. Throws NumericalError on a non-finite loss or
/// gradient, naming the step.
RunReport train(const TrainTask& task, const ExperimentConfig& cfg, OptimState& opt, Rng& rng,
                const Progress& progress = {});

OptimState make_optimizer(const ExperimentConfig& cfg);

// ------------------------------------------------------------- reporting

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<RunReport> runs;
  /// For the activation sweep: (activation, setting) of each run.
  std::vector<std::pair<ActivationKind, data::Setting>> sweep_cells;
};

/// metrics.csv per run (under <dir>/<run name>/), plus summary.json,
/// plotdata.csv and config.json in dir; the sweep also writes sweep.csv.
void emit_report(const ExperimentReport& r, const std::string& dir);
void write_metrics_csv(const std::string& path, const RunReport& run);

/// Runs everything the config asks for and writes the report to
/// cfg.output_dir. `progress` receives one line per finished epoch.
ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                const Progress& progress = {});

// Individual experiments, exposed for tests. They do not write files.
RunReport run_image(const ExperimentConfig& cfg, const data::LabeledImages& train_set,
                    const data::LabeledImages& test_set, data::Setting setting, ActivationKind act,
                    const std::string& name, const Progress& progress = {});
RunReport run_audio(const ExperimentConfig& cfg, AudioMethod method, const std::string& name,
                    const Progress& progress = {});
RunReport run_graph(const ExperimentConfig& cfg, graph::GraphMode mode, const std::string& name,
                    const Progress& progress = {});

}  // namespace cvnn::exp
