#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "lsnpc/binary_io.hpp"
#include "lsnpc/experiment.hpp"

using namespace lsnpc;

namespace {

enum Exit { kOk = 0, kConfig = 1, kRuntime = 2 };

int dispatch(const std::string& cmd, ExperimentConfig& cfg, bool quiet) {
  const auto variants = default_variants(cfg);
  auto stage = [&](Stage s) {
    run_stage(cfg, s, variants, quiet);
    if (!quiet) std::cout << to_string(s) << " finished; artifacts in " << cfg.output_dir << '\n';
  };
  if (cmd == "gen-data") stage(Stage::GenerateData);
  else if (cmd == "corrupt") stage(Stage::Corrupt);
  else if (cmd == "train-base") stage(Stage::TrainBase);
  else if (cmd == "train-lsnpc") stage(Stage::TrainLsnpc);
  else if (cmd == "correct") stage(Stage::Correct);
  else if (cmd == "eval") {
    stage(Stage::Evaluate);
    if (!quiet) std::cout << lsnpc::io::read_text(cfg.output_dir + "/report.txt");
  } else if (cmd == "run-all") {
    const auto art = run_experiment(cfg, quiet);
    if (!quiet) std::cout << report_text(art.report);
  } else if (cmd == "sweep") {
    const auto art = sweep_sensitivity(cfg, cfg.sweep.nu0_values, cfg.sweep.nu_values, quiet);
    if (!quiet) std::cout << report_text(art.report);
  } else if (cmd == "ablate") {
    const auto art = run_ablation(cfg, quiet);
    if (!quiet) std::cout << report_text(art.report);
  } else if (cmd == "verify-theory") {
    const auto rep = verify_all(cfg, quiet);
    if (!quiet) std::cout << rep.text();
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-shift noisy-label prediction correction experiments"};
  app.require_subcommand(1, 1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "generate or import datasets and assign splits"},
      {"corrupt", "build transition matrices and corrupt train/validation labels"},
      {"train-base", "train the base classifier on noisy labels"},
      {"train-lsnpc", "train the correction model(s)"},
      {"correct", "write baseline, KNN and corrected test predictions"},
      {"eval", "score predictions against clean test labels"},
      {"sweep", "nu0 x nu sensitivity grid"},
      {"ablate", "Student against Normal proposal"},
      {"verify-theory", "numerical checks of the KL results"},
      {"run-all", "every pipeline stage followed by the report"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "experiment config file")->required();
    sub->add_option("--seed", seed, "run only this seed");
    sub->add_option("--out", out_dir, "output directory (overrides the config)");
    sub->add_flag("--quiet", quiet, "suppress progress and report output");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path);
    if (seed) {
      cfg.seeds = {*seed};
      cfg.theory.seed = *seed;
    }
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  }
  try {
    return dispatch(cmd, cfg, quiet);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}
