#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "das/attribution/methods.hpp"
#include "das/ddpm/dataset.hpp"
#include "das/ddpm/train.hpp"
#include "das/eval/pipeline.hpp"
#include "das/eval/stats.hpp"

namespace das::eval {

struct SubsetPlan {
  int n = 0;
  int M = 0;
  double fraction = 0.5;
  int seeds_per_subset = 1;
  std::uint64_t master_seed = 0;
  std::vector<std::vector<std::uint8_t>> masks;  // M masks of length n

  int subset_size() const { return static_cast<int>(fraction * n); }
};

/// M pairwise distinct masks of floor(fraction n) ones each, drawn from the
/// master seed. Throws ParameterError for an empty subset size, M < 2, or
/// when fewer than M distinct masks exist.
SubsetPlan plan_subsets(int n, int M, double fraction, std::uint64_t master_seed, int seeds_per_subset = 1);

/// Sum of the scores selected by the mask.
double predict_output(const Eigen::VectorXd& scores, std::span<const std::uint8_t> mask);

/// Frozen evaluation protocol for the model output f(z, theta): the simple
/// loss averaged over `draws` noise vectors at each of `num_timesteps`
/// evenly spaced timesteps. Draws depend only on (seed, target id).
struct OutputProtocol {
  int num_timesteps = 100;
  int draws = 3;
  std::uint64_t seed = 0;
};

/// f(z_j, theta) for every target.
Eigen::VectorXd model_outputs(const ddpm::NoisePredictor& model, const ddpm::DiffusionSchedule& schedule,
                              const std::vector<Target>& targets, const OutputProtocol& protocol);

struct GroundTruth {
  Eigen::MatrixXd outputs;  // M x q, averaged over the models of each subset
  Eigen::VectorXd base;     // q, the model trained on the full set
};

struct LdsOptions {
  ddpm::TrainConfig train;
  OutputProtocol protocol;
  int jobs = 1;
  std::filesystem::path cache_dir;  // empty disables caching
  bool verbose = false;
};

/// Model seed index s of every subset uses train.seed + s, so index 0 shares
/// the base model's initialization.
ddpm::TrainConfig subset_config(const ddpm::TrainConfig& base, int seed_index);

/// Trains (or loads from cache) every subset model and evaluates the
/// frozen-protocol outputs on the targets.
GroundTruth compute_ground_truth(const ddpm::Dataset& data, const ddpm::NoisePredictor& base_model,
                                 const SubsetPlan& plan, const std::vector<Target>& targets,
                                 const LdsOptions& options);

struct LdsReport {
  std::string method;
  double lambda = 0.0;
  std::vector<double> per_target;     // Spearman per target, 0 when undefined
  std::vector<std::uint8_t> degenerate;  // 1 where the correlation was undefined
  Summary summary;
  std::size_t degenerate_count() const;
};

/// Per-target Spearman between predicted outputs sum_{i in S_m} tau_i and
/// the realized improvement f(z, theta_full) - f(z, theta_m), over subsets m.
LdsReport lds_report(const std::string& method, double lambda, const Eigen::MatrixXd& scores, const SubsetPlan& plan,
                     const GroundTruth& truth);

/// Scores of the control methods: "random" (seeded N(0, 1)) and "uniform".
Eigen::MatrixXd control_scores(const std::string& name, Eigen::Index n, Eigen::Index q, std::uint64_t seed);

struct LdsRunConfig {
  std::vector<double> lambda_grid = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2};
  bool sweep_lambda = true;
  std::uint64_t control_seed = 0;
};

struct LambdaSweep {
  std::string method;
  std::vector<double> lambdas;
  std::vector<double> tuning_lds;
  double best = 0.0;
};

struct LdsRunResult {
  std::vector<LdsReport> reports;
  std::vector<LambdaSweep> sweeps;
};

/// Scores every method (controls included by name) on the evaluation
/// targets and reports LDS. Kernel methods pick lambda by maximizing mean
/// LDS on the tuning targets when a sweep is requested, otherwise use the
/// spec's lambda.
LdsRunResult run_lds(AttributionPipeline& pipeline, const std::vector<attribution::MethodSpec>& methods,
                     const std::vector<std::string>& controls, const SubsetPlan& plan,
                     const std::vector<Target>& eval_targets, const GroundTruth& eval_truth,
                     const std::vector<Target>& tuning_targets, const GroundTruth& tuning_truth,
                     const LdsRunConfig& config);

}  // namespace das::eval
