// pvpl: gen-corpus, train-pvp, transfer, eval, ablation, gradcheck.
//
// Exit codes: 0 all outputs written and validated, 1 command failed,
// 2 bad command line or configuration, 3 gradient check failed.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pvpl/commands.hpp"
#include "pvpl/config.hpp"
#include "pvpl/errors.hpp"

namespace {

constexpr int kFailed = 1;
constexpr int kBadConfig = 2;
constexpr int kGradFailed = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pseudo visual prompt learning on a toy dual encoder"};
  app.set_version_flag("--version", "pvpl 0.1.0");
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  bool quiet = false;
  app.add_option("-c,--config", config_path, "TOML-style run configuration")
      ->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Override one key, e.g. --set pvp.epochs=5")
      ->type_name("KEY=VALUE");
  app.add_flag("-q,--quiet", quiet, "Only print errors");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-corpus", "Generate, check, augment and noise the text corpus"},
      {"train-pvp", "Train the pseudo visual prompt bank on the corpus"},
      {"transfer", "Transfer the bank into text prompts and adapters"},
      {"eval", "Score eval images with the text-side model and report mAP"},
      {"ablation", "Train and score every enabled stage, write the ablation CSV"},
      {"gradcheck", "Finite-difference check of every differentiable op"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->fallthrough();
  }
  app.add_subcommand("keys", "List every configuration key")->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kBadConfig;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  if (cmd == "keys") {
    for (const auto& k : pvpl::config_keys()) std::cout << k << "\n";
    return 0;
  }

  pvpl::RunConfig config;
  try {
    config = pvpl::resolve_run_config(config_path, overrides);
  } catch (const std::exception& e) {
    std::cerr << "pvpl: configuration: " << e.what() << "\n";
    return kBadConfig;
  }

  std::ostream null_stream(nullptr);
  std::ostream& log = quiet ? null_stream : std::cout;
  try {
    if (cmd == "gen-corpus") {
      pvpl::cmd_gen_corpus(config, log);
    } else if (cmd == "train-pvp") {
      pvpl::cmd_train_pvp(config, log);
    } else if (cmd == "transfer") {
      pvpl::cmd_transfer(config, log);
    } else if (cmd == "eval") {
      pvpl::cmd_eval(config, log);
    } else if (cmd == "ablation") {
      pvpl::cmd_ablation(config, log);
    } else if (cmd == "gradcheck") {
      if (!pvpl::cmd_gradcheck(config, log)) {
        std::cerr << "pvpl: gradient check failed (see " << config.paths.gradcheck << ")\n";
        return kGradFailed;
      }
    }
  } catch (const pvpl::ParameterError& e) {
    std::cerr << "pvpl " << cmd << ": " << e.what() << "\n";
    return kBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "pvpl " << cmd << ": " << e.what() << "\n";
    return kFailed;
  }
  return 0;
}
