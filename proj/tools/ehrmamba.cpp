#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ehrmamba/pipeline.hpp"

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ehrmamba::ConfigError*>(&e)) return 1;
  if (dynamic_cast<const ehrmamba::NumericalError*>(&e)) return 3;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EHR foundation model on selective state spaces: data, training, evaluation"};
  app.require_subcommand(0, 1);

  std::string config_file;
  std::vector<std::string> overrides;
  std::string workdir;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_file, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("-s,--set", overrides, "override, key=value (repeatable)");
    sub->add_option("-w,--workdir", workdir, "shorthand for --set path.workdir=DIR");
  };

  using Runner = void (*)(const ehrmamba::RunConfig&, std::ostream&);
  const std::vector<std::tuple<std::string, std::string, Runner>> commands = {
      {"generate", "generate a synthetic cohort and its split", ehrmamba::pipeline::run_generate},
      {"ingest", "ingest FHIR NDJSON (path.input) as the cohort", ehrmamba::pipeline::run_ingest},
      {"pretrain", "fit lab bins and vocabulary, then pretrain", ehrmamba::pipeline::run_pretrain},
      {"finetune", "multitask prompted finetuning of the pretrained model", ehrmamba::pipeline::run_finetune},
      {"evaluate", "per-task AUROC/AUPRC/F1 on the test split", ehrmamba::pipeline::run_evaluate},
      {"forecast", "greedy 10-token forecasting accuracy", ehrmamba::pipeline::run_forecast},
      {"attribute", "integrated-gradients attributions by token type", ehrmamba::pipeline::run_attribute},
  };
  std::vector<std::pair<CLI::App*, Runner>> subs;
  for (const auto& [name, help, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub);
    subs.emplace_back(sub, fn);
  }

  std::string ckpt_path;
  CLI::App* inspect = app.add_subcommand("inspect-checkpoint", "print checkpoint metadata and tensor table");
  inspect->add_option("checkpoint", ckpt_path, "checkpoint file")->required();

  bool print_keys = false;
  app.add_flag("--config-reference", print_keys, "print every config key with its default and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  if (print_keys) {
    std::cout << ehrmamba::config_reference();
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return 1;
  }

  try {
    if (inspect->parsed()) {
      ehrmamba::pipeline::inspect_checkpoint(ckpt_path, std::cout);
      return 0;
    }
    if (!workdir.empty()) overrides.push_back("path.workdir=" + workdir);
    const ehrmamba::RunConfig cfg = ehrmamba::parse_config(config_file, overrides);
    for (const auto& [sub, fn] : subs) {
      if (sub->parsed()) fn(cfg, std::cerr);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}
