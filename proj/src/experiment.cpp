#include "cvnn/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "cvnn/rng.hpp"

namespace cvnn::exp {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ------------------------------------------------------------------ model

CnnModel::CnnModel(Arch arch, const ModelConfig& mc, const Shape& input, std::size_t classes, Rng& rng)
    : complex_(arch == Arch::image_cvcnn || arch == Arch::audio_cvcnn), mc_(mc), classes_(classes) {
  if (arch == Arch::gnn) throw ConfigError("CnnModel: gnn is not a convolutional arch");
  if (input.size() != 3) throw ShapeError("CnnModel: input must be (C, H, W)");
  if (classes < 2) throw ConfigError("CnnModel: need at least 2 classes");
  const std::size_t cin = input[0];
  std::size_t h = input[1], w = input[2];
  auto stage = [](std::size_t d) { return conv_out_dim(conv_out_dim(d, 3, 1, 0), 2, 2, 0); };
  try {
    h = stage(stage(h));
    w = stage(stage(w));
  } catch (const std::invalid_argument&) {
    throw ConfigError("input " + shape_str(input) + " is too small for two 3x3 conv + 2x2 pool stages");
  }
  flat_ = mc.conv2 * h * w;

  const bool ro = !complex_;
  auto weight = [&](const Shape& s) { return complex_ ? init_weight(mc.init, s, rng) : real_he_normal(s, rng); };
  const bool modrelu = complex_ && mc.activation.kind == ActivationKind::modrelu;
  auto bn_gamma = [&](std::size_t c) {
    return complex_ ? bn_gamma_init(c, mc.bn_gamma) : ComplexTensor::filled({c}, 1.0, 0.0);
  };

  c1w_ = params_.add("conv1.w", weight({mc.conv1, cin, 3, 3}), ro);
  c1b_ = params_.add("conv1.b", ComplexTensor::zeros({mc.conv1}), ro);
  if (modrelu) a1b_ = params_.add("act1.b", ComplexTensor::zeros({mc.conv1}), true);
  bn1g_ = params_.add("bn1.gamma", bn_gamma(mc.conv1), true);
  bn1b_ = params_.add("bn1.beta", ComplexTensor::zeros({mc.conv1}), ro);
  c2w_ = params_.add("conv2.w", weight({mc.conv2, mc.conv1, 3, 3}), ro);
  c2b_ = params_.add("conv2.b", ComplexTensor::zeros({mc.conv2}), ro);
  if (modrelu) a2b_ = params_.add("act2.b", ComplexTensor::zeros({mc.conv2}), true);
  bn2g_ = params_.add("bn2.gamma", bn_gamma(mc.conv2), true);
  bn2b_ = params_.add("bn2.beta", ComplexTensor::zeros({mc.conv2}), ro);
  f1w_ = params_.add("fc1.w", weight({mc.dense, flat_}), ro);
  f1b_ = params_.add("fc1.b", ComplexTensor::zeros({mc.dense}), ro);
  if (modrelu) a3b_ = params_.add("act3.b", ComplexTensor::zeros({mc.dense}), true);
  f2w_ = params_.add("fc2.w", weight({classes, mc.dense}), ro);
  f2b_ = params_.add("fc2.b", ComplexTensor::zeros({classes}), ro);

  for (auto* bn : {&bn1_, &bn2_}) {
    *bn = BatchNormState(bn == &bn1_ ? mc.conv1 : mc.conv2);
    bn->lambda = mc.bn_lambda;
    bn->momentum = mc.bn_momentum;
    bn->gamma_form = complex_ ? mc.bn_gamma : BnGamma::scalar;
  }
}

Var CnnModel::act(const Var& z, const std::vector<Var>& leaves, std::optional<std::size_t> bias) const {
  if (!complex_) return crelu(z);  // ReLU on the real plane
  return apply_activation(mc_.activation, z, bias ? leaves.at(*bias) : Var());
}

Var CnnModel::block(const Var& x, const std::vector<Var>& leaves, std::size_t conv_w, std::size_t conv_b,
                    std::optional<std::size_t> act_b, std::size_t bn_g, std::size_t bn_b, BatchNormState& bn) {
  const PoolSpec pool;
  if (complex_) {
    Var h = complex_conv2d(x, leaves.at(conv_w), leaves.at(conv_b));
    h = act(h, leaves, act_b);
    h = complex_batchnorm(h, leaves.at(bn_g), leaves.at(bn_b), bn);
    return complex_maxpool_mag(h, pool);
  }
  Var h = real_conv2d(x, leaves.at(conv_w), leaves.at(conv_b));
  h = act(h, leaves, act_b);
  h = real_batchnorm(h, leaves.at(bn_g), leaves.at(bn_b), bn);
  return real_maxpool(h, pool);
}

Var CnnModel::forward(const std::vector<Var>& leaves, const Var& x, bool train) {
  if (leaves.size() != params_.size()) throw std::invalid_argument("CnnModel::forward: leaf count mismatch");
  bn1_.mode = bn2_.mode = train ? BnMode::train : BnMode::eval;
  Var h = block(x, leaves, c1w_, c1b_, a1b_, bn1g_, bn1b_, bn1_);
  h = block(h, leaves, c2w_, c2b_, a2b_, bn2g_, bn2b_, bn2_);
  h = reshape(h, {x.value().dim(0), flat_});
  if (complex_) {
    h = act(complex_linear(h, leaves.at(f1w_), leaves.at(f1b_)), leaves, a3b_);
    return abs_logsoftmax_head(complex_linear(h, leaves.at(f2w_), leaves.at(f2b_)));
  }
  h = act(real_linear(h, leaves.at(f1w_), leaves.at(f1b_)), leaves, a3b_);
  return real_logsoftmax_head(real_linear(h, leaves.at(f2w_), leaves.at(f2b_)));
}

NamedTensors CnnModel::state_records() const {
  NamedTensors out;
  auto add = [&](const std::string& p, const BatchNormState& bn) {
    out.emplace_back(p + ".running_mean", ComplexTensor({bn.channels}, bn.mean_re, bn.mean_im));
    ComplexTensor cov({bn.channels, 3});
    for (std::size_t c = 0; c < bn.channels; ++c) {
      cov.re()[3 * c] = bn.v_rr[c];
      cov.re()[3 * c + 1] = bn.v_ri[c];
      cov.re()[3 * c + 2] = bn.v_ii[c];
    }
    out.emplace_back(p + ".running_cov", std::move(cov));
  };
  add("bn1", bn1_);
  add("bn2", bn2_);
  return out;
}

// --------------------------------------------------------------- training

double accuracy(const ComplexTensor& logp, std::span<const int> labels) {
  if (logp.rank() != 2 || logp.dim(0) != labels.size()) throw ShapeError("accuracy: rows != labels");
  const std::size_t n = logp.dim(0), k = logp.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logp.re().subspan(i * k, k);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += best == labels[i];
  }
  return n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
}

OptimState make_optimizer(const ExperimentConfig& cfg) {
  OptimState st;
  st.kind = cfg.optimizer;
  st.lr = cfg.lr;
  st.beta1 = cfg.beta1;
  st.beta2 = cfg.beta2;
  st.eps = cfg.adam_eps;
  st.clip_norm = cfg.clip_grad_norm;
  return st;
}

namespace {

std::string describe(const ExperimentConfig& cfg, const std::string& run) {
  std::ostringstream os;
  os << "run '" << run << "', experiment " << experiment_command(cfg.experiment) << ", seed "
     << cfg.seed.value_or(0) << ", activation " << activation_name(cfg.model.activation.kind) << ", lr "
     << cfg.lr << ", clip_grad_norm ";
  if (cfg.clip_grad_norm) {
    os << *cfg.clip_grad_norm;
  } else {
    os << "off";
  }
  return os.str();
}

bool all_finite(const ParamGrads& grads) {
  for (const auto& g : grads) {
    for (double v : g.re())
      if (!std::isfinite(v)) return false;
    for (double v : g.im())
      if (!std::isfinite(v)) return false;
  }
  return true;
}

struct EvalResult {
  double loss = 0.0, acc = 0.0;
};

EvalResult evaluate(const TrainTask& task, std::size_t batch) {
  const std::size_t n = task.test_labels.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  double loss = 0.0, correct = 0.0;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t len = std::min(batch, n - start);
    const std::span<const std::size_t> b(idx.data() + start, len);
    const std::span<const int> labels(task.test_labels.data() + start, len);
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& p : *task.params) leaves.push_back(tape.constant(p.value));
    const Var logp = task.forward(tape, leaves, data::Split::test, b);
    loss += nll_loss(logp, labels).value().re()[0] * static_cast<double>(len);
    correct += accuracy(logp.value(), labels) * static_cast<double>(len);
  }
  return {loss / static_cast<double>(n), correct / static_cast<double>(n)};
}

}  // namespace

RunReport train(const TrainTask& task, const ExperimentConfig& cfg, OptimState& opt, Rng& rng,
                const Progress& progress) {
  if (!task.params || !task.forward) throw std::invalid_argument("train: incomplete task");
  const std::size_t n = task.train_labels.size();
  if (n == 0 || task.test_labels.empty()) throw data::DataError("train: empty train or test split");
  RunReport report;
  report.name = task.name;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(static_cast<std::uint32_t>(i))]);
    double loss_sum = 0.0, correct = 0.0;
    std::vector<int> labels;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      if (len < 2 && n >= 2) continue;  // batch statistics need two samples
      const std::span<const std::size_t> b(order.data() + start, len);
      labels.clear();
      for (auto i : b) labels.push_back(task.train_labels[i]);
      ++step;

      Tape tape;
      std::vector<Var> leaves;
      for (const auto& p : *task.params) leaves.push_back(tape.leaf(p.value, true));
      const Var logp = task.forward(tape, leaves, data::Split::train, b);
      const Var loss = nll_loss(logp, labels);
      const double lv = loss.value().re()[0];
      if (!std::isfinite(lv)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step) + " (" + describe(cfg, task.name) + ")");
      }
      auto grads = collect_grads(tape.backward(loss), leaves);
      if (!all_finite(grads)) {
        throw NumericalError("non-finite gradient at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step) + " (" + describe(cfg, task.name) + ")");
      }
      optimizer_step(*task.params, std::move(grads), opt);
      loss_sum += lv * static_cast<double>(len);
      correct += accuracy(logp.value(), labels) * static_cast<double>(len);
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto ev = evaluate(task, cfg.eval_batch_size);
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(n);
    m.train_acc = correct / static_cast<double>(n);
    m.test_loss = ev.loss;
    m.test_acc = ev.acc;
    m.epoch_seconds = seconds;
    if (!std::isfinite(m.test_loss)) {
      throw NumericalError("non-finite test loss after epoch " + std::to_string(epoch) + " (" +
                           describe(cfg, task.name) + ")");
    }
    report.epochs.push_back(m);
    if (progress) {
      std::ostringstream os;
      os << std::fixed << std::setprecision(4) << task.name << " epoch " << epoch << "/" << cfg.epochs
         << " train_loss " << m.train_loss << " train_acc " << m.train_acc << " test_loss " << m.test_loss
         << " test_acc " << m.test_acc << " (" << std::setprecision(1) << seconds << " s)";
      progress(os.str());
    }
  }
  return report;
}

// ---------------------------------------------------------------- helpers

namespace {

ComplexTensor gather(const ComplexTensor& x, std::span<const std::size_t> idx) {
  Shape s = x.shape();
  const std::size_t per = x.size() / s[0];
  s[0] = idx.size();
  ComplexTensor out(s);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto off = static_cast<std::ptrdiff_t>(idx[i] * per);
    std::copy(x.re().begin() + off, x.re().begin() + off + static_cast<std::ptrdiff_t>(per),
              out.re().begin() + static_cast<std::ptrdiff_t>(i * per));
    std::copy(x.im().begin() + off, x.im().begin() + off + static_cast<std::ptrdiff_t>(per),
              out.im().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

ComplexTensor to_complex(const RealTensor& r) {
  ComplexTensor out(r.shape());
  std::copy(r.data().begin(), r.data().end(), out.re().begin());
  return out;
}

std::size_t class_count(std::span<const int> a, std::span<const int> b) {
  int top = 1;
  for (int v : a) top = std::max(top, v);
  for (int v : b) top = std::max(top, v);
  return static_cast<std::size_t>(top + 1);
}

void save_run_checkpoint(const ExperimentConfig& cfg, const std::string& name, const ParamSet& params,
                         const OptimState& opt, const NamedTensors& extra) {
  if (!cfg.write_checkpoint) return;
  const fs::path dir = fs::path(cfg.output_dir) / name;
  fs::create_directories(dir);
  NamedTensors rec;
  for (const auto& p : params) rec.emplace_back(p.name, p.value);
  for (auto& r : extra) rec.push_back(r);
  for (auto& r : optimizer_records(opt, params)) rec.push_back(std::move(r));
  save_checkpoint((dir / "checkpoint.cvnn").string(), rec);
}

// Per feature row h of x (N, 1, H, W): subtract the train-set complex mean
// and divide by the train-set RMS deviation.
void standardize_rows(ComplexTensor& x, std::span<const std::size_t> train_idx) {
  const std::size_t rows = x.dim(2), cols = x.dim(3), per = rows * cols;
  for (std::size_t h = 0; h < rows; ++h) {
    double mr = 0.0, mi = 0.0, count = 0.0;
    for (auto i : train_idx)
      for (std::size_t w = 0; w < cols; ++w) {
        mr += x.re()[i * per + h * cols + w];
        mi += x.im()[i * per + h * cols + w];
        count += 1.0;
      }
    mr /= count;
    mi /= count;
    double var = 0.0;
    for (auto i : train_idx)
      for (std::size_t w = 0; w < cols; ++w) {
        const double a = x.re()[i * per + h * cols + w] - mr, b = x.im()[i * per + h * cols + w] - mi;
        var += a * a + b * b;
      }
    const double sd = std::sqrt(var / count);
    const double inv = sd > 0.0 ? 1.0 / sd : 1.0;
    for (std::size_t i = 0; i < x.dim(0); ++i)
      for (std::size_t w = 0; w < cols; ++w) {
        auto& r = x.re()[i * per + h * cols + w];
        auto& m = x.im()[i * per + h * cols + w];
        r = (r - mr) * inv;
        m = (m - mi) * inv;
      }
  }
}

struct AudioData {
  std::vector<data::AudioClip> clips;
  data::SplitIndices split;
  std::size_t classes = 2;
};

AudioData load_audio(const ExperimentConfig& cfg, Rng& rng) {
  AudioData d;
  if (cfg.audio.source == "synth") {
    d.clips = data::synth_audio_dataset(cfg.audio.synth, rng);
  } else {
    auto r = data::load_wav_dir(cfg.audio.wav_dir, cfg.audio.class_map);
    if (r.clips.empty()) throw data::DataError(cfg.audio.wav_dir + ": no readable clips");
    d.clips = data::segment_clips(r.clips, cfg.audio.segment_seconds);
    d.classes = std::max<std::size_t>(2, r.class_names.size());
  }
  if (d.clips.empty()) throw data::DataError("no audio clips");
  d.split = data::split_by_track(d.clips, cfg.audio.test_fraction, rng);
  if (d.split.train.empty() || d.split.test.empty()) throw data::DataError("audio split left a side empty");
  return d;
}

audio::MfccConfig mfcc_for(const ExperimentConfig& cfg, const data::AudioClip& c) {
  auto m = cfg.audio.mfcc;
  m.sample_rate = c.sample_rate;
  return m;
}

std::vector<int> labels_at(const std::vector<data::AudioClip>& clips, std::span<const std::size_t> idx) {
  std::vector<int> out;
  for (auto i : idx) out.push_back(clips[i].label);
  return out;
}

}  // namespace

// ------------------------------------------------------------ experiments

RunReport run_image(const ExperimentConfig& cfg, const data::LabeledImages& train_set,
                    const data::LabeledImages& test_set, data::Setting setting, ActivationKind act,
                    const std::string& name, const Progress& progress) {
  cfg.validate();
  Rng root(*cfg.seed);
  Rng init_rng = root.split(), data_rng = root.split(), order_rng = root.split();

  const bool real = setting == data::Setting::real_cnn_baseline;
  ComplexTensor xtr, xte;
  if (real) {
    xtr = to_complex(train_set.images);
    xte = to_complex(test_set.images);
  } else {
    data::PerturbationSetting ps;
    ps.setting = setting;
    xtr = data::apply_perturbation(train_set.images, ps, data::Split::train, data_rng);
    xte = data::apply_perturbation(test_set.images, ps, data::Split::test, data_rng);
  }
  ModelConfig mc = cfg.model;
  mc.activation.kind = act;
  const Shape in{xtr.dim(1), xtr.dim(2), xtr.dim(3)};
  CnnModel model(real ? Arch::image_realcnn : Arch::image_cvcnn, mc, in,
                 class_count(train_set.labels, test_set.labels), init_rng);

  ExperimentConfig run_cfg = cfg;
  run_cfg.model.activation.kind = act;
  TrainTask task;
  task.name = name;
  task.params = &model.params();
  task.train_labels = train_set.labels;
  task.test_labels = test_set.labels;
  task.forward = [&](Tape& tape, const std::vector<Var>& leaves, data::Split split, std::span<const std::size_t> idx) {
    const auto& src = split == data::Split::train ? xtr : xte;
    return model.forward(leaves, tape.constant(gather(src, idx)), split == data::Split::train);
  };
  OptimState opt = make_optimizer(run_cfg);
  auto report = train(task, run_cfg, opt, order_rng, progress);
  save_run_checkpoint(run_cfg, name, model.params(), opt, model.state_records());
  return report;
}

RunReport run_audio(const ExperimentConfig& cfg, AudioMethod method, const std::string& name,
                    const Progress& progress) {
  cfg.validate();
  Rng root(*cfg.seed);
  Rng init_rng = root.split(), data_rng = root.split(), order_rng = root.split();
  const auto d = load_audio(cfg, data_rng);

  const std::size_t frames = cfg.audio.frames;
  const std::size_t rows =
      method == AudioMethod::workflow1_cvcnn ? cfg.audio.stft_bins : cfg.audio.mfcc.n_mfcc;
  const std::size_t per = rows * frames;
  ComplexTensor x({d.clips.size(), 1, rows, frames});
  for (std::size_t i = 0; i < d.clips.size(); ++i) {
    const auto& c = d.clips[i];
    const auto m = mfcc_for(cfg, c);
    ComplexTensor f;
    switch (method) {
      case AudioMethod::real_mfcc_real_cnn:
      case AudioMethod::real_mfcc_cvcnn:
        f = to_complex(audio::fit_frames(audio::mfcc(c.samples, m), frames));
        break;
      case AudioMethod::workflow1_cvcnn: {
        const auto full = audio::complex_mfcc_workflow1(c.samples, m);
        const std::size_t t = full.dim(1);
        ComplexTensor crop({rows, t});
        std::copy(full.re().begin(), full.re().begin() + static_cast<std::ptrdiff_t>(rows * t), crop.re().begin());
        std::copy(full.im().begin(), full.im().begin() + static_cast<std::ptrdiff_t>(rows * t), crop.im().begin());
        f = audio::fit_frames(crop, frames);
        break;
      }
      case AudioMethod::workflow2_cvcnn:
        f = audio::fit_frames(audio::complex_mfcc_workflow2(c.samples, m), frames);
        break;
    }
    std::copy(f.re().begin(), f.re().end(), x.re().begin() + static_cast<std::ptrdiff_t>(i * per));
    std::copy(f.im().begin(), f.im().end(), x.im().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  standardize_rows(x, d.split.train);
  const ComplexTensor xtr = gather(x, d.split.train), xte = gather(x, d.split.test);

  const bool real = method == AudioMethod::real_mfcc_real_cnn;
  CnnModel model(real ? Arch::audio_realcnn : Arch::audio_cvcnn, cfg.model, {1, rows, frames}, d.classes,
                 init_rng);
  TrainTask task;
  task.name = name;
  task.params = &model.params();
  task.train_labels = labels_at(d.clips, d.split.train);
  task.test_labels = labels_at(d.clips, d.split.test);
  task.forward = [&](Tape& tape, const std::vector<Var>& leaves, data::Split split, std::span<const std::size_t> idx) {
    const auto& src = split == data::Split::train ? xtr : xte;
    return model.forward(leaves, tape.constant(gather(src, idx)), split == data::Split::train);
  };
  OptimState opt = make_optimizer(cfg);
  auto report = train(task, cfg, opt, order_rng, progress);
  save_run_checkpoint(cfg, name, model.params(), opt, model.state_records());
  return report;
}

RunReport run_graph(const ExperimentConfig& cfg, graph::GraphMode mode, const std::string& name,
                    const Progress& progress) {
  cfg.validate();
  Rng root(*cfg.seed);
  Rng init_rng = root.split(), data_rng = root.split(), order_rng = root.split();
  const auto d = load_audio(cfg, data_rng);
  const std::size_t frames = cfg.audio.frames, nodes = cfg.audio.mfcc.n_mfcc;

  std::vector<RealTensor> feats, phases;
  for (const auto& c : d.clips) {
    const auto m = mfcc_for(cfg, c);
    const auto parts = audio::complex_mfcc_workflow2_parts(c.samples, m);
    feats.push_back(audio::fit_frames(audio::mfcc(c.samples, m), frames));
    phases.push_back(audio::fit_frames(phase(parts.coeffs), frames));
  }
  // One train-set mean and scale for all nodes. Per-node standardisation
  // would remove the per-node levels that the adjacency mixes.
  double mean = 0.0, sq = 0.0, count = 0.0;
  for (auto i : d.split.train)
    for (double v : feats[i].data()) {
      mean += v;
      sq += v * v;
      count += 1.0;
    }
  mean /= count;
  const double sd = std::sqrt(std::max(sq / count - mean * mean, 0.0));
  const double inv = sd > 0.0 ? 1.0 / sd : 1.0;
  for (auto& f : feats)
    for (auto& v : f.data()) v = (v - mean) * inv;
  std::vector<graph::PhaseGraph> graphs;
  for (std::size_t i = 0; i < d.clips.size(); ++i) {
    graphs.push_back(graph::build_mfcc_graph(feats[i], mode == graph::GraphMode::phase_weighted ? &phases[i] : nullptr,
                                             mode, cfg.graph.edge_weighting, d.clips[i].label));
  }

  ParamSet params;
  graph::GnnConfig gc;
  gc.in_dim = frames;
  gc.hidden = cfg.model.gnn_hidden;
  gc.layers = cfg.model.gnn_layers;
  gc.classes = d.classes;
  const auto model = graph::init_gnn(gc, params, init_rng);

  TrainTask task;
  task.name = name;
  task.params = &params;
  task.train_labels = labels_at(d.clips, d.split.train);
  task.test_labels = labels_at(d.clips, d.split.test);
  task.forward = [&](Tape& tape, const std::vector<Var>& leaves, data::Split split, std::span<const std::size_t> idx) {
    const auto& map = split == data::Split::train ? d.split.train : d.split.test;
    std::vector<std::size_t> global;
    for (auto i : idx) global.push_back(map[i]);
    const auto b = graph::make_batch(graphs, global);
    return real_logsoftmax_head(graph::gnn_forward(model, leaves, tape.constant(b.features), b.adjacency));
  };
  OptimState opt = make_optimizer(cfg);
  auto report = train(task, cfg, opt, order_rng, progress);
  save_run_checkpoint(cfg, name, params, opt, {});
  return report;
}

// -------------------------------------------------------------- reporting

void write_metrics_csv(const std::string& path, const RunReport& run) {
  std::ofstream os(path);
  if (!os) throw data::DataError("cannot write '" + path + "'");
  os << "epoch,train_loss,train_acc,test_loss,test_acc,epoch_seconds\n" << std::setprecision(10);
  for (const auto& m : run.epochs) {
    os << m.epoch << ',' << m.train_loss << ',' << m.train_acc << ',' << m.test_loss << ',' << m.test_acc << ','
       << m.epoch_seconds << '\n';
  }
  if (!os) throw data::DataError("write failed: '" + path + "'");
}

void emit_report(const ExperimentReport& r, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw data::DataError("cannot create output directory '" + dir + "': " + ec.message());
  auto open = [&](const std::string& leaf) {
    std::ofstream os(fs::path(dir) / leaf);
    if (!os) throw data::DataError("cannot write '" + (fs::path(dir) / leaf).string() + "'");
    return os;
  };

  for (const auto& run : r.runs) {
    fs::create_directories(fs::path(dir) / run.name);
    write_metrics_csv((fs::path(dir) / run.name / "metrics.csv").string(), run);
  }
  open("config.json") << config_to_json(r.config);

  json s;
  s["experiment"] = experiment_command(r.config.experiment);
  s["seed"] = r.config.seed.value_or(0);
  json runs = json::array();
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    const auto& f = r.runs[i].final();
    json row = {{"name", r.runs[i].name}, {"epochs", r.runs[i].epochs.size()}};
    if (i < r.sweep_cells.size()) {
      row["activation"] = std::string(activation_name(r.sweep_cells[i].first));
      row["setting"] = static_cast<int>(r.sweep_cells[i].second);
    }
    row["train_loss"] = f.train_loss;
    row["train_acc"] = f.train_acc;
    row["test_loss"] = f.test_loss;
    row["test_acc"] = f.test_acc;
    runs.push_back(row);
  }
  s["runs"] = runs;
  open("summary.json") << s.dump(2) << '\n';

  auto plot = open("plotdata.csv");
  plot << "run,epoch,train_loss,train_acc,test_loss,test_acc\n" << std::setprecision(10);
  for (const auto& run : r.runs)
    for (const auto& m : run.epochs)
      plot << run.name << ',' << m.epoch << ',' << m.train_loss << ',' << m.train_acc << ',' << m.test_loss << ','
           << m.test_acc << '\n';

  if (!r.sweep_cells.empty()) {
    auto sw = open("sweep.csv");
    sw << "activation,setting,train_loss,train_acc,test_loss,test_acc\n" << std::setprecision(10);
    for (std::size_t i = 0; i < r.sweep_cells.size(); ++i) {
      const auto& f = r.runs[i].final();
      sw << activation_name(r.sweep_cells[i].first) << ',' << static_cast<int>(r.sweep_cells[i].second) << ','
         << f.train_loss << ',' << f.train_acc << ',' << f.test_loss << ',' << f.test_acc << '\n';
    }
  }
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const Progress& progress) {
  cfg.validate();
  ExperimentReport rep;
  rep.config = cfg;
  auto load_images = [&] {
    const fs::path root(cfg.image.data_dir);
    auto tr = data::load_idx((root / "train-images-idx3-ubyte").string(), (root / "train-labels-idx1-ubyte").string());
    auto te = data::load_idx((root / "t10k-images-idx3-ubyte").string(), (root / "t10k-labels-idx1-ubyte").string());
    return std::pair{data::take(tr, cfg.image.train_limit), data::take(te, cfg.image.test_limit)};
  };

  switch (cfg.experiment) {
    case Experiment::exp1_image: {
      const auto [tr, te] = load_images();
      for (auto s : cfg.image.settings) {
        const std::string name = "setting" + std::to_string(static_cast<int>(s)) + "_" + data::setting_name(s);
        rep.runs.push_back(run_image(cfg, tr, te, s, cfg.model.activation.kind, name, progress));
      }
      break;
    }
    case Experiment::exp1_activation_sweep: {
      const auto [tr, te] = load_images();
      for (auto a : cfg.sweep.activations) {
        for (auto s : cfg.sweep.settings) {
          const std::string name = std::string(activation_name(a)) + "_setting" + std::to_string(static_cast<int>(s));
          rep.runs.push_back(run_image(cfg, tr, te, s, a, name, progress));
          rep.sweep_cells.emplace_back(a, s);
        }
      }
      break;
    }
    case Experiment::exp2_audio:
      for (auto m : cfg.audio.methods) {
        const std::string name = "method" + std::to_string(static_cast<int>(m)) + "_" + audio_method_name(m);
        rep.runs.push_back(run_audio(cfg, m, name, progress));
      }
      break;
    case Experiment::exp3_gnn:
      for (auto w : cfg.graph.workflows) {
        rep.runs.push_back(run_graph(cfg, w, graph::graph_mode_name(w), progress));
      }
      break;
  }
  emit_report(rep, cfg.output_dir);
  return rep;
}

}  // namespace cvnn::exp
