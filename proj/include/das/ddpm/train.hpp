#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "das/ddpm/dataset.hpp"
#include "das/ddpm/predictor.hpp"
#include "das/ddpm/schedule.hpp"

namespace das::ddpm {

struct NoiseDraw {
  int t = 0;
  Eigen::VectorXd eps;
};

/// Fixed noise draws for one sample: `draws_per_timestep` Gaussian vectors at
/// each listed timestep, taken from the stream (noise_seed, sample_id). The
/// same arguments always give the same draws regardless of which other
/// samples are processed.
std::vector<NoiseDraw> sample_noise_draws(std::uint64_t noise_seed, int sample_id, const std::vector<int>& timesteps,
                                          int draws_per_timestep, int dim);

// Stream of the fixed draws used when frozen_timesteps is set.
inline constexpr std::uint64_t kFrozenNoiseStream = 0xf20e;

enum class Optimizer { kSgd, kAdamW };

struct TrainConfig {
  Optimizer optimizer = Optimizer::kAdamW;
  int epochs = 1000;
  int batch_size = 32;
  double learning_rate = 3e-3;
  double momentum = 0.9;        // SGD; AdamW uses it as beta1
  double beta2 = 0.999;         // AdamW
  double weight_decay = 1e-6;  // decoupled
  bool cosine_decay = true;
  std::uint64_t seed = 0;  // initialization and batch order

  int num_timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  std::vector<int> hidden = {32, 32};
  int embed_dim = 8;
  /// Data variance for the predictor's skip term; <= 0 trains a plain MLP.
  double skip_variance = 0.0;

  /// Number of evenly spaced checkpoints to keep (the last one is the final model).
  int num_checkpoints = 0;

  /// When non-empty, each sample is trained on fixed draws at these
  /// timesteps (noise stream keyed by sample id) instead of fresh (t, eps)
  /// per step, which makes the objective deterministic.
  std::vector<int> frozen_timesteps;
  std::uint64_t frozen_noise_seed = 0;

  DiffusionSchedule schedule() const { return make_linear_schedule(num_timesteps, beta_start, beta_end); }
};

struct TrainResult {
  NoisePredictor model;
  std::vector<NoisePredictor> checkpoints;
  std::vector<double> epoch_loss;
};

/// Defaults tuned per toy dataset: blobs8 uses the widest hidden layers that
/// keep p <= 5000 plus the skip term (its pixels have second moment ~0.1).
TrainConfig default_train_config(const std::string& dataset);

/// Model initialized from config.seed, before any update.
NoisePredictor initial_model(int data_dim, const TrainConfig& config);

/// Mini-batch SGD with momentum, or AdamW, with decoupled weight decay on
/// the simple loss. Deterministic given (dataset, config). Throws TrainingDivergedError
/// on a non-finite loss.
TrainResult train(const Dataset& data, const TrainConfig& config);

/// Mean simple loss over fresh draws (one per sample), for monitoring.
double mean_simple_loss(const NoisePredictor& model, const Dataset& data, const DiffusionSchedule& schedule,
                        std::uint64_t seed);

}  // namespace das::ddpm
