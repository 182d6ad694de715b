#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "das/cli/config.hpp"
#include "das/ddpm/model_io.hpp"
#include "das/eval/pipeline.hpp"

namespace das::cli {

struct CommandContext {
  RunConfig config;
  std::filesystem::path out;  // defaults to config.output_dir when empty
  int jobs = 1;
  bool force = false;  // ignore the manifest and recompute
  std::ostream* log = nullptr;
};

struct CommandResult {
  bool cached = false;  // nothing was recomputed
  std::vector<std::filesystem::path> outputs;
};

// Artifacts, relative to the output directory.
inline constexpr const char* kDataFile = "data.csv";
inline constexpr const char* kModelFile = "model.bin";
inline constexpr const char* kManifestFile = "manifest.tsv";
inline constexpr const char* kConfigFile = "config.cfg";

std::filesystem::path checkpoint_file(int index);

/// One manifest line: the command, its cache key, the full config hash, the
/// input and output files with content hashes, and the wall time.
struct ManifestEntry {
  std::string command;
  std::string key;
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> inputs;
  std::vector<std::pair<std::string, std::string>> outputs;
  double wall_seconds = 0.0;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& out);

CommandResult cmd_gen_data(const CommandContext& ctx);
CommandResult cmd_train(const CommandContext& ctx);
CommandResult cmd_featurize(const CommandContext& ctx);
CommandResult cmd_attribute(const CommandContext& ctx);
CommandResult cmd_lds(const CommandContext& ctx);
CommandResult cmd_counterfactual(const CommandContext& ctx);
CommandResult cmd_toyexp(const CommandContext& ctx);

/// Target sets derived from the config: evaluation (validation then
/// generated), tuning (held out), and counterfactual (generated only).
struct TargetSets {
  std::vector<eval::Target> eval;
  std::vector<eval::Target> tuning;
};
TargetSets make_targets(const RunConfig& config, const ddpm::NoisePredictor& model,
                        const ddpm::DiffusionSchedule& schedule);
std::vector<eval::Target> counterfactual_targets(const RunConfig& config, const ddpm::NoisePredictor& model,
                                                 const ddpm::DiffusionSchedule& schedule);

eval::FeatureConfig feature_config(const RunConfig& config, int jobs);

}  // namespace das::cli
