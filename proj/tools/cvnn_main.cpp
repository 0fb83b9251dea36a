// cvnn: run the image, activation-sweep, audio and graph experiments.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "cvnn/experiment.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw cvnn::exp::ConfigError("cannot read config '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  using namespace cvnn::exp;
  CLI::App app{"Complex-valued neural network experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  bool print_config = false, quiet = false;
  for (const auto* cmd : {"exp1", "sweep1", "exp2", "exp3"}) {
    auto* sub = app.add_subcommand(cmd, experiment_name(parse_experiment(cmd)));
    sub->add_option("--config", config_path, "JSON config file (defaults apply to omitted keys)");
    sub->add_option("--seed", seed, "RNG seed (overrides the config)");
    sub->add_option("--out", out_dir, "output directory (overrides the config)");
    sub->add_flag("--print-config", print_config, "print the resolved config and exit");
    sub->add_flag("-q,--quiet", quiet, "no per-epoch progress");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const Experiment e = parse_experiment(app.get_subcommands().front()->get_name());
    ExperimentConfig cfg = config_path.empty() ? default_config(e) : parse_config(read_file(config_path), e);
    if (seed) cfg.seed = seed;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (print_config) {
      std::cout << config_to_json(cfg);
      return 0;
    }
    cfg.validate();
    const auto rep = run_experiment(cfg, [&](const std::string& line) {
      if (!quiet) std::cerr << line << '\n';
    });
    for (const auto& run : rep.runs) {
      std::cout << run.name << " test_acc " << run.final().test_acc << '\n';
    }
    std::cout << "wrote " << cfg.output_dir << '\n';
    return 0;
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << '\n';
    return 2;
  } catch (const cvnn::FormatError& ex) {
    std::cerr << "data error: " << ex.what() << '\n';
    return 3;
  } catch (const NumericalError& ex) {
    std::cerr << "numerical error: " << ex.what() << '\n';
    return 4;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
}
