#include "das/eval/pipeline.hpp"

#include <cmath>

#include "das/ddpm/train.hpp"
#include "das/errors.hpp"
#include "das/parallel.hpp"
#include "das/rng.hpp"

namespace das::eval {
namespace {

constexpr std::uint64_t kTrainNoise = 0x7a11;
constexpr std::uint64_t kTargetNoise = 0x7a12;
constexpr std::uint64_t kJourneyNoise = 0x7a13;

std::vector<Eigen::VectorXd> column_vectors(const std::vector<features::AveragedFeatures>& fs) {
  return attribution::feature_vectors(fs);
}

}  // namespace

std::vector<Target> validation_targets(const std::string& dataset, int count, std::uint64_t seed, int first_id) {
  const ddpm::Dataset held_out = ddpm::make_validation_set(dataset, count, seed);
  std::vector<Target> out;
  out.reserve(held_out.size());
  for (std::size_t i = 0; i < held_out.size(); ++i) {
    Target t;
    t.id = first_id + static_cast<int>(i);
    t.x0 = held_out.points[i].x0;
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Target> generated_targets(const ddpm::NoisePredictor& model, const ddpm::DiffusionSchedule& schedule,
                                      int count, std::uint64_t seed_base, int steps,
                                      const ddpm::SamplerOptions& options, int first_id) {
  std::vector<Target> out(static_cast<std::size_t>(std::max(0, count)));
  for (int i = 0; i < count; ++i) {
    Target& t = out[static_cast<std::size_t>(i)];
    t.id = first_id + i;
    t.generated = true;
    t.sample_seed = seed_base + static_cast<std::uint64_t>(i);
    ddpm::Sample s = ddpm::sample(model, schedule, steps, t.sample_seed, options);
    t.x0 = std::move(s.x0);
    t.trajectory = std::move(s.trajectory);
  }
  return out;
}

ddpm::Dataset as_dataset(const std::vector<Target>& targets, int dim) {
  ddpm::Dataset d;
  d.name = "targets";
  d.dim = dim;
  for (const auto& t : targets) {
    if (t.x0.size() != dim) throw ShapeError("target dimension does not match the model");
    d.points.push_back({t.id, t.x0, -1});
  }
  return d;
}

AttributionPipeline::AttributionPipeline(const ddpm::NoisePredictor& model, const ddpm::DiffusionSchedule& schedule,
                                         const ddpm::Dataset& train, FeatureConfig config,
                                         std::vector<ddpm::NoisePredictor> checkpoints)
    : model_(model),
      schedule_(schedule),
      train_(train),
      config_(std::move(config)),
      checkpoints_(std::move(checkpoints)),
      timesteps_(ddpm::timestep_grid(schedule.num_timesteps(), config_.timesteps)) {
  features::ProjectionSpec spec;
  spec.k = config_.k;
  spec.seed = config_.projection_seed;
  spec.identity = config_.identity;
  spec.mask = config_.mask;
  projection_ = features::make_projection(spec, model.num_params());
}

features::ExtractOptions AttributionPipeline::extract_options(std::uint64_t stream) const {
  features::ExtractOptions o;
  o.draws_per_timestep = config_.draws_per_timestep;
  o.noise_seed = stream_seed(config_.noise_seed, stream);
  o.jobs = config_.jobs;
  o.memory_budget = config_.memory_budget;
  return o;
}

features::AveragedFeatures AttributionPipeline::average(const features::SampleFeatures& f) const {
  return config_.normalize ? features::normalize_and_average(f) : features::plain_average(f);
}

const std::vector<features::SampleFeatures>& AttributionPipeline::train_features(features::FeatureMode mode) {
  const std::string key = features::to_string(mode);
  auto it = train_cache_.find(key);
  if (it == train_cache_.end()) {
    it = train_cache_
             .emplace(key, features::extract_features(model_, schedule_, train_, timesteps_, mode, projection_,
                                                      extract_options(kTrainNoise)))
             .first;
  }
  return it->second;
}

void AttributionPipeline::set_train_features(features::FeatureMode mode,
                                             std::vector<features::SampleFeatures> features) {
  if (features.size() != train_.size()) throw ShapeError("feature count does not match the training set");
  const Eigen::Index rows = mode.rows(model_.data_dim());
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    if (f.id != train_.points[i].id) throw ShapeError("feature ids do not follow the training set");
    if (f.timesteps.size() != timesteps_.size() * static_cast<std::size_t>(config_.draws_per_timestep)) {
      throw ShapeError("features were extracted on a different timestep grid");
    }
    for (const auto& b : f.blocks) {
      if (b.rows() != rows || b.cols() != projection_.k()) throw ShapeError("feature block shape does not match");
    }
  }
  train_cache_[features::to_string(mode)] = std::move(features);
}

std::vector<features::AveragedFeatures> AttributionPipeline::train_averaged(features::FeatureMode mode) {
  const auto& per_t = train_features(mode);
  std::vector<features::AveragedFeatures> out;
  out.reserve(per_t.size());
  for (const auto& f : per_t) out.push_back(average(f));
  return out;
}

std::vector<features::SampleFeatures> AttributionPipeline::target_features(features::FeatureMode mode,
                                                                           const std::vector<Target>& targets) {
  return features::extract_features(model_, schedule_, as_dataset(targets, model_.data_dim()), timesteps_, mode,
                                    projection_, extract_options(kTargetNoise));
}

std::uint64_t AttributionPipeline::fingerprint(features::FeatureMode mode) {
  return attribution::fingerprint(train_averaged(mode));
}

std::vector<Eigen::VectorXd> AttributionPipeline::journey_targets(const Target& target) {
  const int steps = config_.inference_steps;
  std::vector<ddpm::TrajectoryPoint> path;
  if (target.generated) {
    if (static_cast<int>(target.trajectory.size()) == steps) {
      path = target.trajectory;
    } else {
      path = ddpm::sample(model_, schedule_, steps, target.sample_seed).trajectory;
    }
  } else {
    // A real sample has no sampling path; noise it along the same grid instead.
    Rng rng(stream_seed(config_.noise_seed, kJourneyNoise), static_cast<std::uint64_t>(target.id));
    const auto grid = ddpm::timestep_grid(schedule_.num_timesteps(), steps);
    for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
      path.push_back({*it, ddpm::forward_noise(target.x0, *it, rng.normal_vector(target.x0.size()), schedule_)});
    }
  }
  std::vector<Eigen::VectorXd> out;
  out.reserve(path.size());
  for (const auto& p : path) {
    const double ab = schedule_.alpha_bar(p.t);
    // Noise that maps the target to this latent under the forward process.
    const Eigen::VectorXd eps = (p.x_t - std::sqrt(ab) * target.x0) / std::sqrt(1.0 - ab);
    out.push_back(
        features::feature_block(model_, p.x_t, p.t, eps, features::kLossGradientMode, projection_).row(0).transpose());
  }
  return out;
}

Eigen::MatrixXd AttributionPipeline::checkpoint_scores(const attribution::MethodSpec& spec,
                                                       const std::vector<Target>& targets) {
  if (checkpoints_.empty()) throw ConfigError(attribution::method_name(spec) + " needs training checkpoints");
  const auto n = static_cast<Eigen::Index>(train_.size());
  std::vector<std::vector<Eigen::VectorXd>> train_c;
  std::vector<std::vector<Eigen::VectorXd>> target_c;  // [checkpoint][target]
  const ddpm::Dataset target_set = as_dataset(targets, model_.data_dim());
  for (const auto& ckpt : checkpoints_) {
    std::vector<features::AveragedFeatures> tr;
    for (const auto& f : features::extract_features(ckpt, schedule_, train_, timesteps_, features::kLossGradientMode,
                                                    projection_, extract_options(kTrainNoise))) {
      tr.push_back(average(f));
    }
    std::vector<features::AveragedFeatures> tg;
    for (const auto& f : features::extract_features(ckpt, schedule_, target_set, timesteps_,
                                                    features::kLossGradientMode, projection_,
                                                    extract_options(kTargetNoise))) {
      tg.push_back(average(f));
    }
    train_c.push_back(column_vectors(tr));
    target_c.push_back(column_vectors(tg));
  }
  Eigen::MatrixXd out(n, static_cast<Eigen::Index>(targets.size()));
  for (std::size_t j = 0; j < targets.size(); ++j) {
    std::vector<Eigen::VectorXd> per_ckpt;
    for (const auto& tc : target_c) per_ckpt.push_back(tc[j]);
    out.col(static_cast<Eigen::Index>(j)) =
        spec.method == attribution::Method::kTracInCp ? attribution::tracincp(per_ckpt, train_c)
                                                      : attribution::gas(per_ckpt, train_c);
  }
  return out;
}

Eigen::MatrixXd AttributionPipeline::scores(const attribution::MethodSpec& spec, const std::vector<Target>& targets) {
  using attribution::Method;
  const auto n = static_cast<Eigen::Index>(train_.size());
  const auto q = static_cast<Eigen::Index>(targets.size());
  Eigen::MatrixXd out(n, q);

  switch (spec.method) {
    case Method::kRawDot:
    case Method::kRawCos: {
      const auto train = attribution::raw_vectors(train_);
      for (Eigen::Index j = 0; j < q; ++j) {
        const auto& x = targets[static_cast<std::size_t>(j)].x0;
        out.col(j) = spec.method == Method::kRawDot ? attribution::dot_scores(x, train) : attribution::cos_scores(x, train);
      }
      return out;
    }
    case Method::kTracInCp:
    case Method::kGas:
      return checkpoint_scores(spec, targets);
    default:
      break;
  }

  const features::FeatureMode mode = attribution::required_mode(spec);
  const auto train_avg = train_averaged(mode);

  if (spec.method == Method::kDas) {
    std::vector<attribution::NewtonRows> rows;
    rows.reserve(train_avg.size());
    for (const auto& f : train_avg) rows.push_back(attribution::newton_rows(f, mode));
    const attribution::DasScorer scorer(rows, spec.lambda, config_.jobs);
    const auto tf = target_features(mode, targets);
    for (Eigen::Index j = 0; j < q; ++j) out.col(j) = scorer.score(average(tf[static_cast<std::size_t>(j)]).g);
    return out;
  }
  if (spec.method == Method::kDasPerTimestep) {
    const auto& per_t = train_features(mode);
    const auto tf = target_features(mode, targets);
    out.setZero();
    for (std::size_t e = 0; e < per_t.front().blocks.size(); ++e) {
      std::vector<attribution::NewtonRows> rows;
      rows.reserve(per_t.size());
      for (const auto& f : per_t) rows.push_back(attribution::stacked_rows(features::select_entries(f, {e})));
      const attribution::DasScorer scorer(rows, spec.lambda, config_.jobs);
      for (Eigen::Index j = 0; j < q; ++j) out.col(j) += scorer.score(tf[static_cast<std::size_t>(j)].blocks[e]);
    }
    out /= static_cast<double>(per_t.front().blocks.size());
    return out;
  }

  const auto phi = column_vectors(train_avg);
  if (spec.method == Method::kGradientDot || spec.method == Method::kGradientCos) {
    const auto tf = target_features(mode, targets);
    for (Eigen::Index j = 0; j < q; ++j) {
      const Eigen::VectorXd t = attribution::feature_vector(average(tf[static_cast<std::size_t>(j)]));
      out.col(j) = spec.method == Method::kGradientDot ? attribution::dot_scores(t, phi) : attribution::cos_scores(t, phi);
    }
    return out;
  }

  const attribution::KernelScorer kernel(phi, spec.lambda);
  const Eigen::VectorXd residuals = attribution::trak_residuals(train_avg);
  if (spec.method == Method::kJourneyTrak) {
    std::vector<Eigen::VectorXd> cols(static_cast<std::size_t>(q));
    parallel_for(targets.size(), config_.jobs, [&](std::size_t j) {
      cols[j] = attribution::journey_trak(kernel, journey_targets(targets[j]), residuals);
    });
    for (Eigen::Index j = 0; j < q; ++j) out.col(j) = cols[static_cast<std::size_t>(j)];
    return out;
  }
  const auto tf = target_features(mode, targets);
  for (Eigen::Index j = 0; j < q; ++j) {
    const Eigen::VectorXd t = attribution::feature_vector(average(tf[static_cast<std::size_t>(j)]));
    switch (spec.method) {
      case Method::kTrak:
        out.col(j) = attribution::trak(kernel, t, residuals);
        break;
      case Method::kDtrak:
        out.col(j) = attribution::dtrak(kernel, t);
        break;
      case Method::kRelativeIf:
        out.col(j) = attribution::relative_if(kernel, t, residuals);
        break;
      case Method::kRenormalizedIf:
        out.col(j) = attribution::renormalized_if(kernel, t, residuals);
        break;
      default:
        throw ConfigError("method " + attribution::method_name(spec) + " is not handled by the pipeline");
    }
  }
  return out;
}

}  // namespace das::eval
