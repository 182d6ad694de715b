#include "das/ddpm/train.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "das/errors.hpp"
#include "das/rng.hpp"

namespace das::ddpm {
namespace {

constexpr std::uint64_t kBatchStream = 0xba7c;

constexpr double kAdamEps = 1e-8;

// One training example: a sample plus, in frozen mode, a fixed draw.
struct Example {
  std::size_t sample = 0;
  const NoiseDraw* draw = nullptr;
};

void shuffle(std::vector<Example>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace

std::vector<NoiseDraw> sample_noise_draws(std::uint64_t noise_seed, int sample_id, const std::vector<int>& timesteps,
                                          int draws_per_timestep, int dim) {
  Rng rng(noise_seed, static_cast<std::uint64_t>(sample_id));
  std::vector<NoiseDraw> draws;
  draws.reserve(timesteps.size() * static_cast<std::size_t>(draws_per_timestep));
  for (int t : timesteps) {
    for (int k = 0; k < draws_per_timestep; ++k) draws.push_back({t, rng.normal_vector(dim)});
  }
  return draws;
}

TrainConfig default_train_config(const std::string& dataset) {
  TrainConfig config;
  if (dataset == "blobs8") {
    config.hidden = {29, 29};
    config.skip_variance = 0.1;
  } else if (dataset != "gauss2") {
    throw ParameterError("unknown dataset '" + dataset + "' (expected gauss2 or blobs8)");
  }
  return config;
}

NoisePredictor initial_model(int data_dim, const TrainConfig& config) {
  NoisePredictor model(data_dim, config.hidden, config.embed_dim);
  model.init_params(config.seed);
  model.set_skip(config.schedule(), config.skip_variance);
  return model;
}

TrainResult train(const Dataset& data, const TrainConfig& config) {
  if (data.empty()) throw ParameterError("cannot train on an empty dataset");
  if (config.epochs < 0 || config.batch_size < 1 || !(config.learning_rate > 0.0)) {
    throw ParameterError("training needs epochs >= 0, batch_size >= 1 and a positive learning rate");
  }
  const DiffusionSchedule schedule = config.schedule();
  const int dim = data.dim;

  TrainResult result{initial_model(dim, config), {}, {}};
  NoisePredictor& model = result.model;

  // Frozen draws are keyed by sample id so removing a sample leaves the others untouched.
  std::vector<std::vector<NoiseDraw>> frozen(data.size());
  std::vector<Example> examples;
  if (config.frozen_timesteps.empty()) {
    for (std::size_t i = 0; i < data.size(); ++i) examples.push_back({i, nullptr});
  } else {
    for (std::size_t i = 0; i < data.size(); ++i) {
      frozen[i] = sample_noise_draws(stream_seed(config.frozen_noise_seed, kFrozenNoiseStream), data.points[i].id,
                                     config.frozen_timesteps, 1, dim);
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      for (const auto& d : frozen[i]) examples.push_back({i, &d});
    }
  }

  Rng rng(config.seed, kBatchStream);
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(model.num_params());
  Eigen::VectorXd second = Eigen::VectorXd::Zero(model.num_params());
  const auto num_examples = static_cast<Eigen::Index>(examples.size());
  const Eigen::Index batch = std::min<Eigen::Index>(config.batch_size, num_examples);
  const std::int64_t steps_per_epoch = (num_examples + batch - 1) / batch;
  const std::int64_t total_steps = steps_per_epoch * config.epochs;

  std::vector<int> checkpoint_epochs;
  for (int c = 1; c <= config.num_checkpoints; ++c) {
    checkpoint_epochs.push_back(static_cast<int>(std::lround(static_cast<double>(config.epochs) * c / config.num_checkpoints)));
  }
  auto maybe_checkpoint = [&](int epoch) {
    for (int e : checkpoint_epochs) {
      if (e == epoch) result.checkpoints.push_back(model);
    }
  };
  maybe_checkpoint(0);

  std::int64_t step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(examples, rng);
    double epoch_loss = 0.0;
    for (Eigen::Index start = 0; start < num_examples; start += batch) {
      const Eigen::Index b = std::min(batch, num_examples - start);
      Eigen::MatrixXd x_t(dim, b);
      Eigen::MatrixXd eps(dim, b);
      std::vector<int> ts(static_cast<std::size_t>(b));
      for (Eigen::Index j = 0; j < b; ++j) {
        const Example& ex = examples[static_cast<std::size_t>(start + j)];
        int t = 0;
        if (ex.draw) {
          t = ex.draw->t;
          eps.col(j) = ex.draw->eps;
        } else {
          t = static_cast<int>(rng.uniform_int(1, schedule.num_timesteps()));
          for (int k = 0; k < dim; ++k) eps(k, j) = rng.normal();
        }
        ts[static_cast<std::size_t>(j)] = t;
        const double ab = schedule.alpha_bar(t);
        x_t.col(j) = std::sqrt(ab) * data.points[ex.sample].x0 + std::sqrt(1.0 - ab) * eps.col(j);
      }

      const auto trace = model.forward_trace(x_t, ts);
      const Eigen::MatrixXd residual = trace.output - eps;
      const double loss = residual.squaredNorm() / static_cast<double>(b);
      if (!std::isfinite(loss)) {
        throw TrainingDivergedError("training diverged: non-finite loss at step " + std::to_string(step) +
                                        " (epoch " + std::to_string(epoch) + ")",
                                    step);
      }
      epoch_loss += loss * static_cast<double>(b);

      const Eigen::MatrixXd seed = (2.0 / static_cast<double>(b)) * residual;
      const Eigen::VectorXd grad = model.param_gradient(trace, model.backprop(trace, seed));

      double lr = config.learning_rate;
      if (config.cosine_decay && total_steps > 0) {
        lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
      }
      model.params() *= (1.0 - lr * config.weight_decay);
      if (config.optimizer == Optimizer::kSgd) {
        velocity = config.momentum * velocity + grad;
        model.params() -= lr * velocity;
      } else {
        const double b1 = config.momentum;
        const double b2 = config.beta2;
        velocity = b1 * velocity + (1.0 - b1) * grad;
        second = b2 * second + (1.0 - b2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(step + 1));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(step + 1));
        model.params().array() -= lr * (velocity.array() / c1) / ((second.array() / c2).sqrt() + kAdamEps);
      }
      ++step;
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(num_examples));
    maybe_checkpoint(epoch);
  }
  return result;
}

double mean_simple_loss(const NoisePredictor& model, const Dataset& data, const DiffusionSchedule& schedule,
                        std::uint64_t seed) {
  Rng rng(seed, 0x1055);
  const int dim = data.dim;
  const auto n = static_cast<Eigen::Index>(data.size());
  Eigen::MatrixXd x_t(dim, n);
  Eigen::MatrixXd eps(dim, n);
  std::vector<int> ts(data.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    const int t = static_cast<int>(rng.uniform_int(1, schedule.num_timesteps()));
    ts[static_cast<std::size_t>(j)] = t;
    for (int k = 0; k < dim; ++k) eps(k, j) = rng.normal();
    const double ab = schedule.alpha_bar(t);
    x_t.col(j) = std::sqrt(ab) * data.points[static_cast<std::size_t>(j)].x0 + std::sqrt(1.0 - ab) * eps.col(j);
  }
  return (model.forward_batch(x_t, ts) - eps).squaredNorm() / static_cast<double>(n);
}

}  // namespace das::ddpm
