#include <json.hpp>

#include "cvnn/experiment.hpp"

namespace cvnn::exp {

using json = nlohmann::ordered_json;

Experiment parse_experiment(const std::string& s) {
  if (s == "exp1" || s == "exp1_image") return Experiment::exp1_image;
  if (s == "sweep1" || s == "exp1_activation_sweep") return Experiment::exp1_activation_sweep;
  if (s == "exp2" || s == "exp2_audio") return Experiment::exp2_audio;
  if (s == "exp3" || s == "exp3_gnn") return Experiment::exp3_gnn;
  throw ConfigError("unknown experiment '" + s + "' (expected exp1|sweep1|exp2|exp3)");
}

std::string experiment_name(Experiment e) {
  switch (e) {
    case Experiment::exp1_image: return "exp1_image";
    case Experiment::exp1_activation_sweep: return "exp1_activation_sweep";
    case Experiment::exp2_audio: return "exp2_audio";
    case Experiment::exp3_gnn: return "exp3_gnn";
  }
  return "?";
}

std::string experiment_command(Experiment e) {
  switch (e) {
    case Experiment::exp1_image: return "exp1";
    case Experiment::exp1_activation_sweep: return "sweep1";
    case Experiment::exp2_audio: return "exp2";
    case Experiment::exp3_gnn: return "exp3";
  }
  return "?";
}

Arch parse_arch(const std::string& s) {
  if (s == "image_cvcnn") return Arch::image_cvcnn;
  if (s == "image_realcnn") return Arch::image_realcnn;
  if (s == "audio_cvcnn") return Arch::audio_cvcnn;
  if (s == "audio_realcnn") return Arch::audio_realcnn;
  if (s == "gnn") return Arch::gnn;
  throw ConfigError("unknown arch '" + s + "'");
}

std::string arch_name(Arch a) {
  switch (a) {
    case Arch::image_cvcnn: return "image_cvcnn";
    case Arch::image_realcnn: return "image_realcnn";
    case Arch::audio_cvcnn: return "audio_cvcnn";
    case Arch::audio_realcnn: return "audio_realcnn";
    case Arch::gnn: return "gnn";
  }
  return "?";
}

std::string audio_method_name(AudioMethod m) {
  switch (m) {
    case AudioMethod::real_mfcc_real_cnn: return "real_mfcc_real_cnn";
    case AudioMethod::real_mfcc_cvcnn: return "real_mfcc_cvcnn";
    case AudioMethod::workflow1_cvcnn: return "workflow1_cvcnn";
    case AudioMethod::workflow2_cvcnn: return "workflow2_cvcnn";
  }
  return "?";
}

ExperimentConfig default_config(Experiment e) {
  ExperimentConfig c;
  c.experiment = e;
  c.output_dir = "out/" + experiment_command(e);
  switch (e) {
    case Experiment::exp1_image:
    case Experiment::exp1_activation_sweep:
      break;
    case Experiment::exp2_audio:
      c.epochs = 5;
      break;
    case Experiment::exp3_gnn:
      c.epochs = 30;
      c.lr = 1e-3;
      c.audio.synth.kind = data::SynthKind::phase_coded;
      c.audio.synth.noise = 0.02;
      c.audio.methods.clear();
      break;
  }
  return c;
}

void ExperimentConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  need(seed.has_value(), "seed is required (config key \"seed\" or --seed)");
  need(epochs >= 1, "epochs must be >= 1");
  need(batch_size >= 1, "batch_size must be >= 1");
  need(eval_batch_size >= 1, "eval_batch_size must be >= 1");
  need(lr > 0.0, "lr must be > 0");
  need(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "beta1 and beta2 must lie in [0, 1)");
  need(adam_eps > 0.0, "adam_eps must be > 0");
  need(!clip_grad_norm || *clip_grad_norm > 0.0, "clip_grad_norm must be > 0 or null");
  need(!output_dir.empty(), "output_dir must not be empty");

  need(model.conv1 >= 1 && model.conv2 >= 1 && model.dense >= 1, "model widths must be >= 1");
  need(model.activation.alpha > 0.0, "model.smooth_alpha must be > 0");
  need(model.bn_lambda > 0.0, "model.bn_lambda must be > 0");
  need(model.bn_momentum > 0.0 && model.bn_momentum <= 1.0, "model.bn_momentum must lie in (0, 1]");
  need(model.gnn_hidden >= 1 && model.gnn_layers >= 1, "gnn width and depth must be >= 1");

  switch (experiment) {
    case Experiment::exp1_image:
      need(!image.settings.empty(), "image.settings must not be empty");
      need(image.train_limit >= 2 && image.test_limit >= 1, "image limits must be positive");
      break;
    case Experiment::exp1_activation_sweep:
      need(!sweep.activations.empty() && !sweep.settings.empty(), "sweep grid must not be empty");
      for (auto s : sweep.settings) {
        need(s != data::Setting::real_cnn_baseline, "sweep.settings cannot include the real baseline (1)");
      }
      need(image.train_limit >= 2 && image.test_limit >= 1, "image limits must be positive");
      break;
    case Experiment::exp2_audio:
    case Experiment::exp3_gnn: {
      need(audio.source == "synth" || audio.source == "wav", "audio.source must be synth or wav");
      need(audio.source != "wav" || !audio.wav_dir.empty(), "audio.wav_dir is required when source is wav");
      need(audio.test_fraction > 0.0 && audio.test_fraction < 1.0, "audio.test_fraction must lie in (0, 1)");
      need(audio.segment_seconds > 0.0, "audio.segment_seconds must be > 0");
      need(audio.synth.n_per_class >= 2, "audio.synth.n_per_class must be >= 2");
      need(audio.synth.duration > 0.0, "audio.synth.duration must be > 0");
      try {
        audio.mfcc.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("audio.mfcc: ") + e.what());
      }
      if (experiment == Experiment::exp2_audio) {
        need(!audio.methods.empty(), "audio.methods must not be empty");
        need(audio.frames >= 10, "audio.frames must be >= 10 for two conv/pool stages");
        need(audio.mfcc.n_mfcc >= 10, "audio.mfcc.n_mfcc must be >= 10 for two conv/pool stages");
        need(audio.stft_bins >= 10 && audio.stft_bins <= audio.mfcc.stft.n_fft / 2 + 1,
             "audio.stft_bins must lie in [10, n_fft / 2 + 1]");
      } else {
        need(audio.frames >= 1, "audio.frames must be >= 1");
        need(!graph.workflows.empty(), "graph.workflows must not be empty");
      }
      break;
    }
  }
}

namespace {

json settings_json(const std::vector<data::Setting>& v) {
  json a = json::array();
  for (auto s : v) a.push_back(static_cast<int>(s));
  return a;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["experiment"] = experiment_command(c.experiment);
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  j["output_dir"] = c.output_dir;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["eval_batch_size"] = c.eval_batch_size;
  j["optimizer"] = {{"kind", c.optimizer == OptimKind::adam ? "adam" : "sgd"},
                    {"lr", c.lr},
                    {"beta1", c.beta1},
                    {"beta2", c.beta2},
                    {"eps", c.adam_eps},
                    {"clip_grad_norm", c.clip_grad_norm ? json(*c.clip_grad_norm) : json(nullptr)}};
  j["write_checkpoint"] = c.write_checkpoint;
  j["model"] = {{"conv1", c.model.conv1},
                {"conv2", c.model.conv2},
                {"dense", c.model.dense},
                {"activation", std::string(activation_name(c.model.activation.kind))},
                {"smooth_alpha", c.model.activation.alpha},
                {"init", std::string(init_scheme_name(c.model.init.scheme))},
                {"init_criterion", c.model.init.criterion == InitCriterion::he ? "he" : "glorot"},
                {"bn_gamma", c.model.bn_gamma == BnGamma::matrix ? "matrix" : "scalar"},
                {"bn_lambda", c.model.bn_lambda},
                {"bn_momentum", c.model.bn_momentum},
                {"gnn_hidden", c.model.gnn_hidden},
                {"gnn_layers", c.model.gnn_layers}};
  j["image"] = {{"data_dir", c.image.data_dir},
                {"train_limit", c.image.train_limit},
                {"test_limit", c.image.test_limit},
                {"settings", settings_json(c.image.settings)}};
  json acts = json::array();
  for (auto a : c.sweep.activations) acts.push_back(std::string(activation_name(a)));
  j["sweep"] = {{"activations", acts}, {"settings", settings_json(c.sweep.settings)}};
  json methods = json::array();
  for (auto m : c.audio.methods) methods.push_back(static_cast<int>(m));
  const auto& s = c.audio.synth;
  const auto& m = c.audio.mfcc;
  j["audio"] = {{"source", c.audio.source},
                {"wav_dir", c.audio.wav_dir},
                {"class_map", c.audio.class_map},
                {"synth",
                 {{"kind", data::synth_kind_name(s.kind)},
                  {"n_per_class", s.n_per_class},
                  {"duration", s.duration},
                  {"sample_rate", s.sample_rate},
                  {"noise", s.noise}}},
                {"segment_seconds", c.audio.segment_seconds},
                {"test_fraction", c.audio.test_fraction},
                {"frames", c.audio.frames},
                {"stft_bins", c.audio.stft_bins},
                {"methods", methods},
                {"mfcc",
                 {{"n_fft", m.stft.n_fft},
                  {"hop", m.stft.hop},
                  {"n_mels", m.n_mels},
                  {"n_mfcc", m.n_mfcc},
                  {"fmin", m.fmin},
                  {"fmax", m.fmax},
                  {"log_floor", m.log_floor}}}};
  json wf = json::array();
  for (auto w : c.graph.workflows) wf.push_back(graph::graph_mode_name(w));
  j["graph"] = {{"workflows", wf}, {"edge_weighting", graph::edge_weighting_name(c.graph.edge_weighting)}};
  return j;
}

// Every key of `user` must exist in `base`; objects merge recursively.
void merge_checked(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError(path.empty() ? "config must be a JSON object" : path + " must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + where + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      merge_checked(slot, value, where);
    } else {
      slot = value;
    }
  }
}

template <class T>
T get(const json& j, const char* key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + path + key + "' has the wrong type");
  }
}

std::size_t get_count(const json& j, const char* key, const std::string& path) {
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError("config key '" + path + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::vector<data::Setting> get_settings(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be an array");
  std::vector<data::Setting> out;
  for (const auto& v : j) {
    const std::string s = v.is_number_integer() ? std::to_string(v.get<int>()) : v.is_string() ? v.get<std::string>() : "";
    try {
      out.push_back(data::parse_setting(s));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return out;
}

template <class F>
auto wrap(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

ExperimentConfig from_json(const json& j) {
  ExperimentConfig c;
  c.experiment = parse_experiment(get<std::string>(j, "experiment", ""));
  if (!j.at("seed").is_null()) {
    if (!j.at("seed").is_number_integer() || j.at("seed").get<long long>() < 0) {
      throw ConfigError("seed must be a non-negative integer");
    }
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  c.output_dir = get<std::string>(j, "output_dir", "");
  c.epochs = get_count(j, "epochs", "");
  c.batch_size = get_count(j, "batch_size", "");
  c.eval_batch_size = get_count(j, "eval_batch_size", "");
  c.write_checkpoint = get<bool>(j, "write_checkpoint", "");

  const auto& o = j.at("optimizer");
  c.optimizer = wrap("optimizer.kind", [&] { return parse_optim_kind(get<std::string>(o, "kind", "optimizer.")); });
  c.lr = get<double>(o, "lr", "optimizer.");
  c.beta1 = get<double>(o, "beta1", "optimizer.");
  c.beta2 = get<double>(o, "beta2", "optimizer.");
  c.adam_eps = get<double>(o, "eps", "optimizer.");
  if (!o.at("clip_grad_norm").is_null()) c.clip_grad_norm = get<double>(o, "clip_grad_norm", "optimizer.");

  const auto& m = j.at("model");
  const std::string mp = "model.";
  c.model.conv1 = get_count(m, "conv1", mp);
  c.model.conv2 = get_count(m, "conv2", mp);
  c.model.dense = get_count(m, "dense", mp);
  c.model.activation.kind =
      wrap("model.activation", [&] { return parse_activation(get<std::string>(m, "activation", mp)); });
  c.model.activation.alpha = get<double>(m, "smooth_alpha", mp);
  c.model.init.scheme = wrap("model.init", [&] { return parse_init_scheme(get<std::string>(m, "init", mp)); });
  c.model.init.criterion =
      wrap("model.init_criterion", [&] { return parse_init_criterion(get<std::string>(m, "init_criterion", mp)); });
  c.model.bn_gamma = wrap("model.bn_gamma", [&] { return parse_bn_gamma(get<std::string>(m, "bn_gamma", mp)); });
  c.model.bn_lambda = get<double>(m, "bn_lambda", mp);
  c.model.bn_momentum = get<double>(m, "bn_momentum", mp);
  c.model.gnn_hidden = get_count(m, "gnn_hidden", mp);
  c.model.gnn_layers = get_count(m, "gnn_layers", mp);

  const auto& im = j.at("image");
  c.image.data_dir = get<std::string>(im, "data_dir", "image.");
  c.image.train_limit = get_count(im, "train_limit", "image.");
  c.image.test_limit = get_count(im, "test_limit", "image.");
  c.image.settings = get_settings(im.at("settings"), "image.settings");

  const auto& sw = j.at("sweep");
  if (!sw.at("activations").is_array()) throw ConfigError("sweep.activations must be an array");
  c.sweep.activations.clear();
  for (const auto& a : sw.at("activations")) {
    c.sweep.activations.push_back(wrap("sweep.activations", [&] { return parse_activation(a.get<std::string>()); }));
  }
  c.sweep.settings = get_settings(sw.at("settings"), "sweep.settings");

  const auto& au = j.at("audio");
  const std::string ap = "audio.";
  c.audio.source = get<std::string>(au, "source", ap);
  c.audio.wav_dir = get<std::string>(au, "wav_dir", ap);
  c.audio.class_map = get<std::vector<std::string>>(au, "class_map", ap);
  const auto& sy = au.at("synth");
  c.audio.synth.kind = wrap("audio.synth.kind", [&] { return data::parse_synth_kind(get<std::string>(sy, "kind", "audio.synth.")); });
  c.audio.synth.n_per_class = get_count(sy, "n_per_class", "audio.synth.");
  c.audio.synth.duration = get<double>(sy, "duration", "audio.synth.");
  c.audio.synth.sample_rate = get<double>(sy, "sample_rate", "audio.synth.");
  c.audio.synth.noise = get<double>(sy, "noise", "audio.synth.");
  c.audio.segment_seconds = get<double>(au, "segment_seconds", ap);
  c.audio.test_fraction = get<double>(au, "test_fraction", ap);
  c.audio.frames = get_count(au, "frames", ap);
  c.audio.stft_bins = get_count(au, "stft_bins", ap);
  if (!au.at("methods").is_array()) throw ConfigError("audio.methods must be an array");
  c.audio.methods.clear();
  for (const auto& v : au.at("methods")) {
    if (!v.is_number_integer() || v.get<int>() < 1 || v.get<int>() > 4) {
      throw ConfigError("audio.methods entries must be integers 1-4");
    }
    c.audio.methods.push_back(static_cast<AudioMethod>(v.get<int>()));
  }
  const auto& mf = au.at("mfcc");
  const std::string fp = "audio.mfcc.";
  c.audio.mfcc.stft.n_fft = get_count(mf, "n_fft", fp);
  c.audio.mfcc.stft.hop = get_count(mf, "hop", fp);
  c.audio.mfcc.n_mels = get_count(mf, "n_mels", fp);
  c.audio.mfcc.n_mfcc = get_count(mf, "n_mfcc", fp);
  c.audio.mfcc.fmin = get<double>(mf, "fmin", fp);
  c.audio.mfcc.fmax = get<double>(mf, "fmax", fp);
  c.audio.mfcc.log_floor = get<double>(mf, "log_floor", fp);
  c.audio.mfcc.sample_rate = c.audio.synth.sample_rate;
  c.audio.synth.n_fft = c.audio.mfcc.stft.n_fft;
  c.audio.synth.hop = c.audio.mfcc.stft.hop;
  c.audio.synth.n_mels = c.audio.mfcc.n_mels;

  const auto& g = j.at("graph");
  if (!g.at("workflows").is_array()) throw ConfigError("graph.workflows must be an array");
  c.graph.workflows.clear();
  for (const auto& w : g.at("workflows")) {
    c.graph.workflows.push_back(wrap("graph.workflows", [&] { return graph::parse_graph_mode(w.get<std::string>()); }));
  }
  c.graph.edge_weighting =
      wrap("graph.edge_weighting", [&] { return graph::parse_edge_weighting(get<std::string>(g, "edge_weighting", "graph.")); });
  return c;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text, Experiment e) {
  json user;
  try {
    user = json::parse(json_text);
  } catch (const json::parse_error& err) {
    throw ConfigError(std::string("config is not valid JSON: ") + err.what());
  }
  if (user.is_object() && user.contains("experiment")) {
    if (!user["experiment"].is_string() || parse_experiment(user["experiment"].get<std::string>()) != e) {
      throw ConfigError("config experiment does not match the command '" + experiment_command(e) + "'");
    }
  }
  json base = to_json(default_config(e));
  merge_checked(base, user, "");
  base["experiment"] = experiment_command(e);
  return from_json(base);
}

std::string config_to_json(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

}  // namespace cvnn::exp
