#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "das/ddpm/train.hpp"
#include "das/features/features.hpp"

namespace das::cli {

/// Everything a run depends on. Serialized as line-based `key = value`
/// text grouped under `[section]` headers; '#' starts a comment.
struct RunConfig {
  // [data]
  std::string dataset = "gauss2";
  std::uint64_t data_seed = 0;
  int data_size = 200;

  // [schedule] and [train]
  ddpm::TrainConfig train;

  // [features]
  int feature_timesteps = 10;
  int k = 256;
  bool normalize = true;
  int draws_per_timestep = 1;
  bool identity_projection = false;
  std::uint64_t projection_seed = 0;
  std::uint64_t noise_seed = 0;
  std::size_t memory_budget_mb = 1024;

  // [methods]
  std::vector<std::string> methods = {"das", "dtrak-square-norm", "trak", "journey-trak", "relative-if",
                                      "renormalized-if", "grad-dot", "grad-cos", "tracincp", "gas",
                                      "raw-dot", "raw-cos"};
  double lambda = 1e-2;
  std::vector<double> lambda_grid = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2};
  bool sweep_lambda = true;
  int inference_steps = 50;
  int candidates = 0;  // > 0 keeps only the m most raw-similar training samples

  // [targets]
  int validation_targets = 50;
  int generated_targets = 50;
  int tuning_targets = 20;
  int sample_steps = 50;
  double clip_x0 = 4.0;

  // [lds]
  int subsets = 32;
  double fraction = 0.5;
  int seeds_per_subset = 3;
  std::uint64_t master_seed = 0;
  int gt_timesteps = 100;
  int gt_draws = 3;
  std::uint64_t protocol_seed = 0;
  std::vector<std::string> controls = {"random"};

  // [counterfactual]
  int top_k = 20;
  int counterfactual_targets = 10;
  std::vector<std::string> counterfactual_methods = {"das", "dtrak-square-norm"};

  // [toyexp]
  int pairs = 60;
  double removal_fraction = 0.2;
  std::uint64_t toyexp_seed = 0;

  // [output]
  std::string output_dir = "out";

  friend bool operator==(const RunConfig&, const RunConfig&);
};

/// Defaults with the dataset's training configuration.
RunConfig default_config(const std::string& dataset);

/// Starts from default_config(data.name) and applies every key. Unknown
/// sections or keys and malformed values throw ConfigError naming the line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical text: every key in a fixed order; parse_config inverts it.
std::string serialize_config(const RunConfig& config);

/// Canonical text restricted to the listed sections.
std::string serialize_sections(const RunConfig& config, const std::vector<std::string>& sections);

std::uint64_t config_hash(const RunConfig& config);

/// Applies one `section.key=value` override.
void set_config_value(RunConfig& config, const std::string& dotted_key, const std::string& value);

/// Structural checks beyond single values (e.g. fraction in (0, 1)).
void validate_config(const RunConfig& config);

}  // namespace das::cli
