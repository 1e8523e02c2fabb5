// Command-line front end: simulate, train, reconstruct, eval, adapt, theory.
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lspd/config.hpp"
#include "lspd/experiment.hpp"

namespace {

constexpr int kUsage = 1;
constexpr int kConfig = 2;
constexpr int kRuntime = 3;

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Stochastic primal-dual unrolling for tomographic reconstruction"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out = ".";
  std::uint64_t seed = 0;
  std::string variant;
  std::vector<std::string> checkpoints;
  std::string dataset;
  int index = 0;

  auto add_common = [&](CLI::App *sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--seed", seed, "overrides every seed in the config");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--variant", variant, "lpd, lspd, lspd_vr or simplified")
      ->check(CLI::IsMember({"lpd", "lspd", "lspd_vr", "simplified"}));
    sub->add_option("--checkpoint", checkpoints, "checkpoint file (repeatable for eval)");
    sub->add_option("--dataset", dataset, "dataset file (default OUT/dataset.bin)");
    sub->add_option("--index", index, "item index (reconstruct, adapt)");
  };
  struct Cmd
  {
    char const *name;
    char const *help;
    std::string (*run)(lspd::ExperimentConfig const &, lspd::CommandOptions const &);
  };
  Cmd const cmds[] = {
    {"simulate", "build a dataset", lspd::cmd_simulate},
    {"train", "train a network (supervised or ei)", lspd::cmd_train},
    {"reconstruct", "reconstruct one item to an image file", lspd::cmd_reconstruct},
    {"eval", "evaluate checkpoints against FBP", lspd::cmd_eval},
    {"adapt", "instance adaptation with a trace CSV", lspd::cmd_adapt},
    {"theory", "run a theory scenario", lspd::cmd_theory},
  };
  std::vector<std::pair<CLI::App *, Cmd const *>> subs;
  for (auto const &c : cmds) {
    auto *sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    subs.emplace_back(sub, &c);
  }

  if (argc <= 1) {
    std::cerr << app.help();
    return kUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (CLI::CallForHelp const &e) {
    std::cout << app.help();
    return 0;
  } catch (CLI::ParseError const &e) {
    app.exit(e);
    return kUsage;
  }

  for (auto const &[sub, cmd] : subs) {
    if (!sub->parsed()) { continue; }
    lspd::CommandOptions opt;
    opt.out = out;
    if (sub->count("--seed")) { opt.seed = seed; }
    if (!variant.empty()) { opt.variant = lspd::variant_from_string(variant); }
    for (auto const &c : checkpoints) { opt.checkpoints.emplace_back(c); }
    if (!dataset.empty()) { opt.dataset = dataset; }
    opt.index = index;

    lspd::ExperimentConfig cfg;
    try {
      cfg = lspd::apply_overrides(lspd::load_config(config_path), opt);
    } catch (lspd::ConfigError const &e) {
      std::cerr << "config error: " << e.what() << '\n';
      return kConfig;
    } catch (std::exception const &e) {
      std::cerr << "config error: " << e.what() << '\n';
      return kConfig;
    }
    try {
      std::cout << cmd->run(cfg, opt) << '\n';
    } catch (std::exception const &e) {
      std::cerr << "error: " << e.what() << '\n';
      return kRuntime;
    }
    return 0;
  }
  return kUsage;
}
