// bicap: generate | transform | train | evaluate | report
//
// Exit status: 0 success, 2 configuration error, 3 numeric failure,
// 1 anything else (unreadable or malformed files).

#include <iostream>

#include <CLI11.hpp>

#include "bicap/commands.hpp"

namespace {

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  bool force = false;
  std::string out;
  std::string input;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "run config (JSON) or a run manifest")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "override the config seed");
  cmd->add_flag("--force", f.force, "overwrite existing outputs");
  cmd->add_option("--out", f.out, "output directory");
}

bicap::CommandOptions to_options(CLI::App* cmd, const Flags& f) {
  bicap::CommandOptions o;
  if (cmd->count("--config")) o.config_path = f.config;
  if (cmd->count("--seed")) o.seed = f.seed;
  if (cmd->count("--out")) o.out = f.out;
  o.force = f.force;
  o.input = f.input;
  o.log = &std::cerr;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bio-inspired perceptual augmentation and evidence-weighted fusion for brain-to-image retrieval"};
  app.require_subcommand(1);
  Flags flags;
  auto* generate = app.add_subcommand("generate", "write a synthetic paired dataset");
  auto* transform = app.add_subcommand("transform", "write the four view images for one pixmap");
  auto* train = app.add_subcommand("train", "train and write a checkpoint plus metrics");
  auto* evaluate = app.add_subcommand("evaluate", "n-way zero-shot retrieval on the test split");
  auto* report = app.add_subcommand("report", "train and evaluate every step of the ablation ladder");
  for (auto* cmd : {generate, transform, train, evaluate, report}) add_common(cmd, flags);
  transform->add_option("input", flags.input, "input P6 pixmap")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (generate->parsed()) bicap::cmd_generate(to_options(generate, flags));
    else if (transform->parsed()) bicap::cmd_transform(to_options(transform, flags));
    else if (train->parsed()) bicap::cmd_train(to_options(train, flags));
    else if (evaluate->parsed()) bicap::cmd_evaluate(to_options(evaluate, flags));
    else bicap::cmd_report(to_options(report, flags));
  } catch (const bicap::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const bicap::ProtocolError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const bicap::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n' << e.diagnostic() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
