#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "das/attribution/methods.hpp"
#include "das/ddpm/dataset.hpp"
#include "das/ddpm/predictor.hpp"
#include "das/ddpm/sampler.hpp"
#include "das/ddpm/schedule.hpp"
#include "das/features/features.hpp"

namespace das::eval {

/// A sample whose training-data attribution is requested.
struct Target {
  int id = 0;
  Eigen::VectorXd x0;
  bool generated = false;
  std::uint64_t sample_seed = 0;                   // generated targets only
  std::vector<ddpm::TrajectoryPoint> trajectory;  // generated targets only
};

/// Held-out points from the data generator, ids from `first_id`.
std::vector<Target> validation_targets(const std::string& dataset, int count, std::uint64_t seed, int first_id = 0);

/// DDIM generations of `model` from sampling seeds seed_base, seed_base+1, ...
std::vector<Target> generated_targets(const ddpm::NoisePredictor& model, const ddpm::DiffusionSchedule& schedule,
                                      int count, std::uint64_t seed_base, int steps,
                                      const ddpm::SamplerOptions& options, int first_id = 0);

ddpm::Dataset as_dataset(const std::vector<Target>& targets, int dim);

struct FeatureConfig {
  int timesteps = 10;  // size of the evenly spaced timestep grid
  int k = 256;
  std::uint64_t projection_seed = 0;
  bool identity = false;
  std::vector<std::uint8_t> mask;
  bool normalize = true;
  int draws_per_timestep = 1;
  std::uint64_t noise_seed = 0;
  int jobs = 1;
  std::size_t memory_budget = std::size_t{1} << 30;
  /// Journey TRAK: number of DDIM steps whose latents serve as targets.
  int inference_steps = 50;
};

/// Computes attribution scores of any method for a fixed training set and
/// model. Features are extracted lazily, once per feature mode, and reused
/// across methods and damping values.
class AttributionPipeline {
 public:
  AttributionPipeline(const ddpm::NoisePredictor& model, const ddpm::DiffusionSchedule& schedule,
                      const ddpm::Dataset& train, FeatureConfig config,
                      std::vector<ddpm::NoisePredictor> checkpoints = {});

  const FeatureConfig& config() const { return config_; }
  const std::vector<int>& timesteps() const { return timesteps_; }
  const features::Projection& projection() const { return projection_; }

  /// Scores (n x q), column j for targets[j].
  Eigen::MatrixXd scores(const attribution::MethodSpec& spec, const std::vector<Target>& targets);

  /// Per-timestep training features for a mode (extracted on first use).
  const std::vector<features::SampleFeatures>& train_features(features::FeatureMode mode);
  std::vector<features::AveragedFeatures> train_averaged(features::FeatureMode mode);
  /// Installs previously extracted training features for a mode. They must
  /// cover the training set in order, on this pipeline's timestep grid.
  void set_train_features(features::FeatureMode mode, std::vector<features::SampleFeatures> features);
  std::vector<features::SampleFeatures> target_features(features::FeatureMode mode, const std::vector<Target>& targets);

  std::uint64_t fingerprint(features::FeatureMode mode);

 private:
  features::ExtractOptions extract_options(std::uint64_t stream) const;
  features::AveragedFeatures average(const features::SampleFeatures& f) const;
  Eigen::MatrixXd checkpoint_scores(const attribution::MethodSpec& spec, const std::vector<Target>& targets);
  std::vector<Eigen::VectorXd> journey_targets(const Target& target);

  const ddpm::NoisePredictor& model_;
  const ddpm::DiffusionSchedule& schedule_;
  const ddpm::Dataset& train_;
  FeatureConfig config_;
  std::vector<ddpm::NoisePredictor> checkpoints_;
  std::vector<int> timesteps_;
  features::Projection projection_;
  std::map<std::string, std::vector<features::SampleFeatures>> train_cache_;
};

}  // namespace das::eval
