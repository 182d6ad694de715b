#include "das/eval/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "das/errors.hpp"
#include "das/parallel.hpp"
#include "das/rng.hpp"

namespace das::eval {
namespace {

constexpr std::uint64_t kRemovalStream = 0xc0f1;

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double den = a.norm() * b.norm();
  return den > 0.0 ? a.dot(b) / den : 0.0;
}

std::vector<std::size_t> random_subset(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n) - 1));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::vector<std::size_t> top_k(const Eigen::VectorXd& scores, std::size_t k) {
  if (k > static_cast<std::size_t>(scores.size())) throw ParameterError("top-k larger than the training set");
  std::vector<std::size_t> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[static_cast<Eigen::Index>(a)] > scores[static_cast<Eigen::Index>(b)];
  });
  order.resize(k);
  return order;
}

ddpm::Dataset remove_indices(const ddpm::Dataset& data, const std::vector<std::size_t>& indices) {
  std::vector<std::uint8_t> keep(data.size(), 1);
  for (std::size_t i : indices) {
    if (i >= data.size()) throw IndexError("removal index " + std::to_string(i) + " out of range");
    keep[i] = 0;
  }
  return ddpm::select(data, keep);
}

std::vector<CounterfactualRow> run_counterfactual(
    const ddpm::Dataset& data, const std::vector<Target>& targets,
    const std::vector<std::pair<std::string, Eigen::MatrixXd>>& method_scores, const CounterfactualConfig& config) {
  if (config.top_k >= data.size()) {
    throw ParameterError("top_k = " + std::to_string(config.top_k) + " must be smaller than the training set (" +
                         std::to_string(data.size()) + ")");
  }
  for (const auto& t : targets) {
    if (!t.generated) throw ConfigError("counterfactual targets must be generated samples with a sampling seed");
  }
  const ddpm::DiffusionSchedule schedule = config.train.schedule();

  // Removal set for every (method, target) cell.
  std::vector<std::string> names;
  std::vector<std::vector<std::vector<std::size_t>>> removals;
  for (const auto& [name, scores] : method_scores) {
    if (scores.rows() != static_cast<Eigen::Index>(data.size()) ||
        scores.cols() != static_cast<Eigen::Index>(targets.size())) {
      throw ShapeError("scores for " + name + " do not match the training set and targets");
    }
    names.push_back(name);
    auto& per = removals.emplace_back();
    for (std::size_t j = 0; j < targets.size(); ++j) {
      auto idx = top_k(scores.col(static_cast<Eigen::Index>(j)), config.top_k);
      std::sort(idx.begin(), idx.end());
      per.push_back(std::move(idx));
    }
  }
  if (config.random_baseline) {
    names.emplace_back("random");
    auto& per = removals.emplace_back();
    for (std::size_t j = 0; j < targets.size(); ++j) {
      Rng rng(config.random_seed, kRemovalStream + j);
      per.push_back(random_subset(data.size(), config.top_k, rng));
    }
  }

  // Distinct removal sets, trained once each.
  std::map<std::vector<std::size_t>, std::size_t> slot;
  std::vector<std::vector<std::size_t>> distinct;
  for (const auto& per : removals) {
    for (const auto& r : per) {
      if (slot.emplace(r, distinct.size()).second) distinct.push_back(r);
    }
  }
  std::vector<ddpm::NoisePredictor> models(distinct.size());
  parallel_for(distinct.size(), config.jobs, [&](std::size_t s) {
    models[s] = ddpm::train(remove_indices(data, distinct[s]), config.train).model;
  });

  std::vector<CounterfactualRow> rows;
  for (std::size_t m = 0; m < names.size(); ++m) {
    CounterfactualRow row;
    row.method = names[m];
    for (std::size_t j = 0; j < targets.size(); ++j) {
      const auto& model = models[slot.at(removals[m][j])];
      const Eigen::VectorXd x =
          ddpm::sample(model, schedule, config.sample_steps, targets[j].sample_seed, config.sampler).x0;
      row.l2.push_back((x - targets[j].x0).norm());
      row.cosine.push_back(cosine(x, targets[j].x0));
    }
    row.mean_l2 = summarize(row.l2).mean;
    row.mean_cosine = summarize(row.cosine).mean;
    rows.push_back(std::move(row));
  }
  return rows;
}

OutputFunctionReport output_function_pairs(const ddpm::Dataset& data, const ddpm::NoisePredictor& base,
                                           const std::vector<std::vector<std::size_t>>& removals,
                                           const OutputFunctionConfig& config) {
  const ddpm::DiffusionSchedule schedule = config.train.schedule();
  const std::size_t pairs = removals.size();
  OutputFunctionReport report;
  report.l2.assign(pairs, 0.0);
  report.loss_diff.assign(pairs, 0.0);
  report.output_diff.assign(pairs, 0.0);

  parallel_for(pairs, config.jobs, [&](std::size_t j) {
    const ddpm::NoisePredictor other =
        removals[j].empty() ? base : ddpm::train(remove_indices(data, removals[j]), config.train).model;
    const std::uint64_t sample_seed = stream_seed(config.seed, j);
    const ddpm::Sample a = ddpm::sample(base, schedule, config.sample_steps, sample_seed, config.sampler);
    const ddpm::Sample b = ddpm::sample(other, schedule, config.sample_steps, sample_seed, config.sampler);
    report.l2[j] = (a.x0 - b.x0).norm();

    double loss = 0.0;
    double output = 0.0;
    for (const auto& point : a.trajectory) {
      const Eigen::VectorXd e_base = base.forward(point.x_t, point.t);
      const Eigen::VectorXd e_other = other.forward(point.x_t, point.t);
      output += (e_base - e_other).norm();
      // Loss of the generation at this latent: the noise that maps x0 to x_t.
      const double ab = schedule.alpha_bar(point.t);
      const Eigen::VectorXd eps = (point.x_t - std::sqrt(ab) * a.x0) / std::sqrt(1.0 - ab);
      loss += std::abs((e_base - eps).squaredNorm() - (e_other - eps).squaredNorm());
    }
    const auto steps = static_cast<double>(a.trajectory.size());
    report.loss_diff[j] = loss / steps;
    report.output_diff[j] = output / steps;
  });

  const Eigen::Map<const Eigen::VectorXd> l2(report.l2.data(), static_cast<Eigen::Index>(pairs));
  const Eigen::Map<const Eigen::VectorXd> ld(report.loss_diff.data(), static_cast<Eigen::Index>(pairs));
  const Eigen::Map<const Eigen::VectorXd> od(report.output_diff.data(), static_cast<Eigen::Index>(pairs));
  try {
    report.pearson_loss = pearson(ld, l2);
  } catch (const UndefinedCorrelationError&) {
    report.degenerate_loss = true;
  }
  try {
    report.pearson_output = pearson(od, l2);
  } catch (const UndefinedCorrelationError&) {
    report.degenerate_output = true;
  }
  return report;
}

OutputFunctionReport run_output_function_experiment(const ddpm::Dataset& data, const ddpm::NoisePredictor& base,
                                                    const OutputFunctionConfig& config) {
  if (config.pairs < 2) throw ParameterError("the output-function experiment needs at least two pairs");
  if (!(config.removal_fraction >= 0.0 && config.removal_fraction < 1.0)) {
    throw ParameterError("removal fraction must lie in [0, 1)");
  }
  const auto k = static_cast<std::size_t>(config.removal_fraction * static_cast<double>(data.size()));
  std::vector<std::vector<std::size_t>> removals;
  for (int j = 0; j < config.pairs; ++j) {
    Rng rng(stream_seed(config.seed, kRemovalStream), static_cast<std::uint64_t>(j));
    removals.push_back(random_subset(data.size(), k, rng));
  }
  return output_function_pairs(data, base, removals, config);
}

}  // namespace das::eval
