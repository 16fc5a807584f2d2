// Command-line entry point. Precedence: built-in defaults of the chosen
// experiment, then the JSON config file, then --seed/--out/--oracle.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mgrad/errors.hpp"
#include "mgrad/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Moreau-envelope gradient experiments"};
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> oracle;
  app.add_option("command", command, "pendulum | train-mlp | envelope-check | grid-search")
      ->required()
      ->check(CLI::IsMember({"pendulum", "train-mlp", "envelope-check", "grid-search"}));
  app.add_option("--config", config_path, "flat JSON config file");
  app.add_option("--seed", seed, "overrides the config seed");
  app.add_option("--out", out, "output directory");
  app.add_option("--oracle", oracle, "backprop | moreau | auglag | targetprop | reg-targetprop | proxbp");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  mgrad::ExperimentConfig cfg;
  try {
    std::string text = "{}";
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw mgrad::ConfigError("cannot read config file '" + config_path + "'");
      std::ostringstream ss;
      ss << in.rdbuf();
      text = ss.str();
    }
    cfg = mgrad::parse_config(text, command);
    if (seed) cfg.seed = *seed;
    if (out) cfg.output = *out;
    if (oracle) cfg.oracle = mgrad::oracle_kind_from_string(*oracle);
    cfg.validate();
  } catch (const mgrad::Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    return mgrad::run_experiment(cfg, std::cout);
  } catch (const mgrad::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mgrad::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
