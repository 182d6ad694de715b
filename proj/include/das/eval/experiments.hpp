#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "das/ddpm/dataset.hpp"
#include "das/ddpm/sampler.hpp"
#include "das/ddpm/train.hpp"
#include "das/eval/pipeline.hpp"
#include "das/eval/stats.hpp"

namespace das::eval {

/// Indices of the k highest scores, ties by index.
std::vector<std::size_t> top_k(const Eigen::VectorXd& scores, std::size_t k);

/// Training set with the given positions removed (ids preserved).
ddpm::Dataset remove_indices(const ddpm::Dataset& data, const std::vector<std::size_t>& indices);

struct CounterfactualConfig {
  ddpm::TrainConfig train;  // must be the base model's configuration
  std::size_t top_k = 20;
  int sample_steps = 50;
  ddpm::SamplerOptions sampler;
  bool random_baseline = true;
  std::uint64_t random_seed = 0;
  int jobs = 1;
};

struct CounterfactualRow {
  std::string method;
  std::vector<double> l2;      // per target
  std::vector<double> cosine;  // per target, raw feature space
  double mean_l2 = 0.0;
  double mean_cosine = 0.0;
};

/// For each method and generated target: drop the top-k training samples,
/// retrain from the same initialization, regenerate from the target's
/// sampling seed and compare with the original generation. Scores are
/// (n x q) with column j belonging to targets[j]. Identical removal sets
/// share one retrained model.
std::vector<CounterfactualRow> run_counterfactual(
    const ddpm::Dataset& data, const std::vector<Target>& targets,
    const std::vector<std::pair<std::string, Eigen::MatrixXd>>& method_scores, const CounterfactualConfig& config);

struct OutputFunctionConfig {
  ddpm::TrainConfig train;
  int pairs = 60;
  double removal_fraction = 0.2;
  std::uint64_t seed = 0;
  int sample_steps = 50;
  ddpm::SamplerOptions sampler;
  int jobs = 1;
};

struct OutputFunctionReport {
  std::vector<double> l2;           // distance between paired generations
  std::vector<double> loss_diff;    // mean |L_theta - L_theta'| of the generation along the trajectory
  std::vector<double> output_diff;  // mean ||eps_theta - eps_theta'|| along the trajectory
  double pearson_loss = 0.0;
  double pearson_output = 0.0;
  bool degenerate_loss = false;
  bool degenerate_output = false;
};

/// Pairs the base model with models retrained after removing a random
/// subset and correlates two candidate output functions with the distance
/// between generations from a shared seed.
OutputFunctionReport run_output_function_experiment(const ddpm::Dataset& data, const ddpm::NoisePredictor& base,
                                                    const OutputFunctionConfig& config);

/// Variant with explicit removal sets (one per pair; an empty set reuses
/// the base model unchanged).
OutputFunctionReport output_function_pairs(const ddpm::Dataset& data, const ddpm::NoisePredictor& base,
                                           const std::vector<std::vector<std::size_t>>& removals,
                                           const OutputFunctionConfig& config);

}  // namespace das::eval
