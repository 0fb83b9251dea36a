#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <numbers>
#include <sstream>

#include "cvnn/experiment.hpp"
#include "cvnn/rng.hpp"
#include "test_support.hpp"

using namespace cvnn;
using namespace cvnn::exp;
namespace fs = std::filesystem;

namespace {

const std::string kMnist = std::string(CVNN_SOURCE_DIR) + "/data/mnist_subset";

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

// metrics.csv without the wall-clock column
std::string metrics_without_time(const fs::path& p) {
  std::string out;
  for (const auto& line : lines_of(p)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

fs::path fresh_dir(const std::string& leaf) {
  const auto d = fs::temp_directory_path() / ("cvnn_exp_" + leaf);
  fs::remove_all(d);
  return d;
}

ExperimentConfig tiny(Experiment e, const fs::path& out) {
  auto cfg = default_config(e);
  cfg.seed = 11;
  cfg.output_dir = out.string();
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.eval_batch_size = 16;
  cfg.model.conv1 = 2;
  cfg.model.conv2 = 3;
  cfg.model.dense = 8;
  cfg.model.gnn_hidden = 8;
  cfg.image.data_dir = kMnist;
  cfg.image.train_limit = 48;
  cfg.image.test_limit = 24;
  cfg.audio.synth.n_per_class = 6;
  cfg.audio.synth.duration = 1.0;
  return cfg;
}

std::size_t element_count(const ParamSet& ps) {
  std::size_t n = 0;
  for (const auto& p : ps) n += p.value.size();
  return n;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CVNN_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("config defaults, round trip and errors") {
  for (auto e : {Experiment::exp1_image, Experiment::exp1_activation_sweep, Experiment::exp2_audio,
                 Experiment::exp3_gnn}) {
    CAPTURE(experiment_command(e));
    auto cfg = default_config(e);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // seed is mandatory
    cfg.seed = 3;
    cfg.validate();
    const auto text = config_to_json(cfg);
    CHECK(config_to_json(parse_config(text, e)) == text);
    CHECK(parse_experiment(experiment_command(e)) == e);
  }
  const auto e = Experiment::exp1_image;
  CHECK(parse_config(R"({"seed": 5, "epochs": 3})", e).epochs == 3);
  CHECK(parse_config(R"({"seed": 5, "model": {"activation": "cardioid"}})", e).model.activation.kind ==
        ActivationKind::cardioid);
  CHECK_THROWS_AS(parse_config(R"({"seed": 5, "model": {"widht": 3}})", e), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"sede": 5})", e), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"experiment": "exp2", "seed": 5})", e), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"seed": 5, "epochs": 0})", e).validate(), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"seed": 5, "epochs": "two"})", e), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"seed": 5, "model": {"activation": "swish"}})", e), ConfigError);
  CHECK_THROWS_AS(
      parse_config(R"({"seed": 5, "sweep": {"settings": [1]}})", Experiment::exp1_activation_sweep).validate(),
      ConfigError);
  CHECK_THROWS_AS(parse_config("{not json", e), ConfigError);
  CHECK_THROWS_AS(parse_experiment("exp9"), ConfigError);
}

TEST_CASE("model shapes and parameter counts") {
  Rng rng(1);
  ModelConfig mc;

  CnnModel image(Arch::image_cvcnn, mc, {1, 28, 28}, 10, rng);
  CHECK(image.flat_dim() == 32 * 5 * 5);
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& p : image.params()) leaves.push_back(tape.constant(p.value));
  const auto out = image.forward(leaves, tape.constant(test::random_tensor({3, 1, 28, 28}, rng)), true);
  CHECK(out.value().shape() == Shape{3, 10});
  // rows are log-probabilities
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < 10; ++k) s += std::exp(out.value().re()[r * 10 + k]);
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }

  CnnModel audio(Arch::audio_cvcnn, mc, {1, 13, 126}, 4, rng);
  CHECK(audio.flat_dim() == 32 * 1 * 30);
  Tape t2;
  std::vector<Var> l2;
  for (const auto& p : audio.params()) l2.push_back(t2.constant(p.value));
  CHECK(audio.forward(l2, t2.constant(test::random_tensor({2, 1, 13, 126}, rng)), false).value().shape() ==
        Shape{2, 4});

  // conv, BN (gamma as (C, 3)), dense
  const std::size_t base = (16 * 9 + 16) + (16 * 3 + 16) + (32 * 16 * 9 + 32) + (32 * 3 + 32) +
                           (128 * 800 + 128) + (10 * 128 + 10);
  for (auto kind : kAllActivations) {
    CAPTURE(activation_name(kind));
    ModelConfig m = mc;
    m.activation.kind = kind;
    CnnModel net(Arch::image_cvcnn, m, {1, 28, 28}, 10, rng);
    CHECK(element_count(net.params()) == base + (kind == ActivationKind::modrelu ? 16 + 32 + 128 : 0));
  }
  CnnModel real(Arch::image_realcnn, mc, {1, 28, 28}, 10, rng);
  CHECK_FALSE(real.is_complex());
  CHECK(element_count(real.params()) == base - 2 * 16 - 2 * 32);  // scalar BN gamma
  for (const auto& p : real.params()) CHECK(p.real_only);

  CHECK_THROWS_AS(CnnModel(Arch::image_cvcnn, mc, {1, 8, 8}, 10, rng), ConfigError);
  CHECK_THROWS_AS(CnnModel(Arch::gnn, mc, {1, 28, 28}, 10, rng), ConfigError);
}

TEST_CASE("cnn gradients match finite differences") {
  Rng rng(2);
  ModelConfig mc;
  mc.conv1 = 2;
  mc.conv2 = 2;
  mc.dense = 4;
  mc.activation.kind = ActivationKind::cardioid;
  const std::vector<int> labels{0, 2, 1};
  for (auto arch : {Arch::image_cvcnn, Arch::image_realcnn}) {
    CnnModel net(arch, mc, {1, 10, 10}, 3, rng);
    for (auto& p : net.params())
      if (p.name.find(".b") != std::string::npos || p.name.find("beta") != std::string::npos)
        p.value = test::random_tensor(p.value.shape(), rng, 0.1);
    const auto x = test::random_tensor({3, 1, 10, 10}, rng);
    for (std::size_t i = 0; i < net.params().size(); ++i) {
      CAPTURE(net.params()[i].name);
      const double err = grad_check(
          [&](Tape& t, const Var& v) {
            std::vector<Var> leaves;
            for (const auto& p : net.params()) leaves.push_back(t.constant(p.value));
            leaves[i] = v;
            return nll_loss(net.forward(leaves, t.constant(x), true), labels);
          },
          net.params()[i].value, 1e-5);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("accuracy") {
  ComplexTensor logp({3, 2}, {-1, -2, -3, -0.5, -1, -1}, {0, 0, 0, 0, 0, 0});
  const std::vector<int> y{0, 1, 1};
  CHECK(accuracy(logp, y) == doctest::Approx(2.0 / 3.0));  // the tie picks class 0

  // uniform outputs score the prior of class 0
  Rng rng(3);
  const std::size_t n = 4000;
  std::vector<int> labels(n);
  for (auto& l : labels) l = rng.uniform() < 0.3 ? 0 : 1 + static_cast<int>(rng.below(3));
  const auto uniform = ComplexTensor::filled({n, 4}, std::log(0.25), 0.0);
  const double sigma = std::sqrt(0.3 * 0.7 / static_cast<double>(n));
  CHECK(std::fabs(accuracy(uniform, labels) - 0.3) < 3 * sigma);
}

TEST_CASE("image run writes metrics and reruns identically") {
  const auto a = fresh_dir("image_a"), b = fresh_dir("image_b");
  auto cfg = tiny(Experiment::exp1_image, a);
  cfg.epochs = 5;
  const auto rep = run_experiment(cfg);
  REQUIRE(rep.runs.size() == 2);
  for (const auto& run : rep.runs) {
    const auto rows = lines_of(a / run.name / "metrics.csv");
    REQUIRE(rows.size() == 6);
    CHECK(rows[0] == "epoch,train_loss,train_acc,test_loss,test_acc,epoch_seconds");
    for (std::size_t e = 0; e < 5; ++e) {
      const auto& m = run.epochs[e];
      CHECK(m.epoch == e + 1);
      CHECK(m.epoch_seconds > 0.0);
      for (double acc : {m.train_acc, m.test_acc}) {
        CHECK(acc >= 0.0);
        CHECK(acc <= 1.0);
      }
    }
    CHECK(fs::file_size(a / run.name / "checkpoint.cvnn") > 0);
    const auto ckpt = load_checkpoint((a / run.name / "checkpoint.cvnn").string());
    CHECK(ckpt.size() > 12);
  }
  CHECK(lines_of(a / "plotdata.csv").size() == 11);
  const auto summary = nlohmann::json::parse(slurp(a / "summary.json"));
  CHECK(summary["runs"].size() == 2);
  CHECK(parse_config(slurp(a / "config.json"), Experiment::exp1_image).epochs == 5);

  cfg.output_dir = b.string();
  run_experiment(cfg);
  for (const auto* f : {"summary.json", "plotdata.csv"}) CHECK(slurp(a / f) == slurp(b / f));
  for (const auto& run : rep.runs) {
    CHECK(metrics_without_time(a / run.name / "metrics.csv") == metrics_without_time(b / run.name / "metrics.csv"));
    CHECK(slurp(a / run.name / "checkpoint.cvnn") == slurp(b / run.name / "checkpoint.cvnn"));
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("activation sweep covers the grid") {
  const auto d = fresh_dir("sweep");
  auto cfg = tiny(Experiment::exp1_activation_sweep, d);
  cfg.write_checkpoint = false;
  const auto rep = run_experiment(cfg);
  CHECK(rep.runs.size() == 24);
  const auto rows = lines_of(d / "sweep.csv");
  REQUIRE(rows.size() == 25);
  CHECK(rows[0] == "activation,setting,train_loss,train_acc,test_loss,test_acc");
  CHECK(rows[1].rfind("crelu,2,", 0) == 0);
  CHECK(rows[24].rfind("cardioid,5,", 0) == 0);
  CHECK(nlohmann::json::parse(slurp(d / "summary.json"))["runs"].size() == 24);
  fs::remove_all(d);
}

TEST_CASE("audio methods on synthetic and wav sources") {
  const auto d = fresh_dir("audio");
  auto cfg = tiny(Experiment::exp2_audio, d);
  cfg.write_checkpoint = false;
  const auto rep = run_experiment(cfg);
  REQUIRE(rep.runs.size() == 4);
  CHECK(rep.runs[0].name == "method1_real_mfcc_real_cnn");
  CHECK(rep.runs[3].name == "method4_workflow2_cvcnn");

  // a tiny two-class wav corpus, split into 1 s segments
  const auto corpus = d / "corpus";
  Rng rng(4);
  for (const auto* cls : {"hum", "hiss"}) {
    fs::create_directories(corpus / cls);
    for (int i = 0; i < 4; ++i) {
      std::vector<double> s(22050 * 2);
      for (std::size_t t = 0; t < s.size(); ++t) {
        s[t] = std::string(cls) == "hum" ? 0.3 * std::sin(2 * std::numbers::pi * (220.0 + 20 * i) * t / 22050.0)
                                         : 0.3 * rng.uniform(-1, 1);
      }
      audio::write_wav((corpus / cls / ("clip" + std::to_string(i) + ".wav")).string(), s, 22050);
    }
  }
  cfg.audio.source = "wav";
  cfg.audio.wav_dir = corpus.string();
  cfg.audio.segment_seconds = 1.0;
  cfg.audio.test_fraction = 0.5;
  cfg.audio.methods = {AudioMethod::real_mfcc_real_cnn, AudioMethod::workflow2_cvcnn};
  cfg.output_dir = (d / "wav_out").string();
  const auto wav = run_experiment(cfg);
  CHECK(wav.runs.size() == 2);

  cfg.audio.wav_dir = (d / "missing").string();
  CHECK_THROWS_AS(run_experiment(cfg), FormatError);
  fs::remove_all(d);
}

TEST_CASE("graph experiment runs both workflows") {
  const auto d = fresh_dir("graph");
  auto cfg = tiny(Experiment::exp3_gnn, d);
  cfg.epochs = 2;
  const auto rep = run_experiment(cfg);
  REQUIRE(rep.runs.size() == 2);
  CHECK(rep.runs[0].name == "unweighted");
  CHECK(rep.runs[1].name == "phase_weighted");
  CHECK(fs::exists(d / "phase_weighted" / "checkpoint.cvnn"));
  fs::remove_all(d);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  auto cfg = default_config(Experiment::exp1_image);
  cfg.seed = 1;
  cfg.batch_size = 2;
  ParamSet ps;
  ps.add("w", ComplexTensor::zeros({2, 2}));
  TrainTask task;
  task.name = "broken";
  task.params = &ps;
  task.train_labels = {0, 1, 0, 1};
  task.test_labels = {0, 1};
  task.forward = [](Tape& t, const std::vector<Var>& leaves, data::Split, std::span<const std::size_t>) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return add(leaves[0], t.constant(ComplexTensor::filled({2, 2}, nan, 0.0)));
  };
  OptimState opt = make_optimizer(cfg);
  Rng rng(5);
  try {
    train(task, cfg, opt, rng);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 1, step 1") != std::string::npos);
    CHECK(msg.find("run 'broken'") != std::string::npos);
    CHECK(msg.find("clip_grad_norm off") != std::string::npos);
  }
}

TEST_CASE("complex epochs take longer than real epochs") {
  auto cfg = tiny(Experiment::exp1_image, fresh_dir("timing"));
  cfg.model = ModelConfig{};
  cfg.image.train_limit = 160;
  cfg.write_checkpoint = false;
  const auto tr = data::take(data::load_idx(kMnist + "/train-images-idx3-ubyte", kMnist + "/train-labels-idx1-ubyte"), 160);
  const auto te = data::take(data::load_idx(kMnist + "/t10k-images-idx3-ubyte", kMnist + "/t10k-labels-idx1-ubyte"), 24);
  const auto real = run_image(cfg, tr, te, data::Setting::real_cnn_baseline, ActivationKind::crelu, "real");
  const auto cplx = run_image(cfg, tr, te, data::Setting::cv_real_input, ActivationKind::crelu, "complex");
  CHECK(cplx.final().epoch_seconds > real.final().epoch_seconds);
}

TEST_CASE("cli exit codes") {
  const auto d = fresh_dir("cli");
  fs::create_directories(d);
  CHECK(run_cli("exp1 --seed 1 --print-config") == 0);
  CHECK(run_cli("exp1 --print-config") == 0);
  CHECK(run_cli("nosuch") == 2);
  CHECK(run_cli("exp1") == 2);  // no seed
  CHECK(run_cli("exp1 --config " + (d / "absent.json").string()) == 2);
  std::ofstream(d / "bad.json") << R"({"seed": 1, "unknown": 2})";
  CHECK(run_cli("exp1 --config " + (d / "bad.json").string()) == 2);
  std::ofstream(d / "nodata.json") << R"({"seed": 1, "image": {"data_dir": ")" + (d / "none").string() + R"("}})";
  CHECK(run_cli("exp1 --config " + (d / "nodata.json").string() + " --out " + (d / "out").string()) == 3);
  fs::remove_all(d);
}
