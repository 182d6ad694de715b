#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "das/cli/commands.hpp"
#include "das/cli/config.hpp"
#include "das/errors.hpp"
#include "das/parallel.hpp"

namespace {

using das::cli::CommandContext;
using das::cli::CommandResult;

struct Options {
  std::string config;
  std::string out;
  std::vector<std::string> sets;
  int jobs = das::default_jobs();
  bool force = false;
  bool quiet = false;

  // gen-data
  std::string name;
  long long seed = -1;
  int size = 0;

  // attribute
  std::vector<std::string> methods;
  double lambda = -1.0;
};

das::cli::RunConfig build_config(const Options& o) {
  das::cli::RunConfig config =
      o.config.empty() ? das::cli::default_config(o.name.empty() ? "gauss2" : o.name) : das::cli::load_config(o.config);
  if (!o.name.empty()) das::cli::set_config_value(config, "data.name", o.name);
  if (o.seed >= 0) config.data_seed = static_cast<std::uint64_t>(o.seed);
  if (o.size > 0) config.data_size = o.size;
  if (!o.methods.empty()) config.methods = o.methods;
  if (o.lambda >= 0.0) config.lambda = o.lambda;
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw das::ConfigError("--set expects section.key=value, got '" + s + "'");
    das::cli::set_config_value(config, s.substr(0, eq), s.substr(eq + 1));
  }
  das::cli::validate_config(config);
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-data attribution for toy diffusion models"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config,-c", o.config, "run config (key = value with [sections])")->check(CLI::ExistingFile);
  app.add_option("--out,-o", o.out, "output directory (default: [output] dir)");
  app.add_option("--set", o.sets, "override a config value, e.g. --set train.epochs=200");
  app.add_option("--jobs,-j", o.jobs, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--force", o.force, "recompute even when the manifest says up to date");
  app.add_flag("--quiet,-q", o.quiet, "no progress output");

  auto* gen = app.add_subcommand("gen-data", "generate the toy training set");
  gen->add_option("--name", o.name, "gauss2 or blobs8");
  gen->add_option("--seed", o.seed, "dataset seed")->check(CLI::NonNegativeNumber);
  gen->add_option("--size", o.size, "number of points")->check(CLI::PositiveNumber);
  app.add_subcommand("train", "train the noise predictor and its checkpoints");
  app.add_subcommand("featurize", "extract and store training-set features");
  auto* attr = app.add_subcommand("attribute", "score every training sample for every target");
  attr->add_option("--method", o.methods, "method name (repeatable)")->delimiter(',');
  attr->add_option("--lambda", o.lambda, "damping")->check(CLI::NonNegativeNumber);
  app.add_subcommand("lds", "linear datamodeling score benchmark");
  app.add_subcommand("counterfactual", "top-k removal and regeneration");
  app.add_subcommand("toyexp", "output-function correlation experiment");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(das::ExitCode::kUsage);
  }

  try {
    CommandContext ctx;
    ctx.config = build_config(o);
    ctx.out = o.out;
    ctx.jobs = o.jobs;
    ctx.force = o.force;
    ctx.log = o.quiet ? nullptr : &std::cerr;

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen-data") {
      das::cli::cmd_gen_data(ctx);
    } else if (cmd == "train") {
      das::cli::cmd_train(ctx);
    } else if (cmd == "featurize") {
      das::cli::cmd_featurize(ctx);
    } else if (cmd == "attribute") {
      das::cli::cmd_attribute(ctx);
    } else if (cmd == "lds") {
      das::cli::cmd_lds(ctx);
    } else if (cmd == "counterfactual") {
      das::cli::cmd_counterfactual(ctx);
    } else if (cmd == "toyexp") {
      das::cli::cmd_toyexp(ctx);
    }
  } catch (const das::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(das::ExitCode::kData);
  }
  return 0;
}
