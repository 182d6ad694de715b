#include "das/eval/lds.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>

#include "das/binary_io.hpp"
#include "das/ddpm/model_io.hpp"
#include "das/errors.hpp"
#include "das/parallel.hpp"
#include "das/rng.hpp"

namespace das::eval {
namespace {

constexpr std::uint64_t kPlanStream = 0x5b5e;
constexpr std::uint64_t kProtocolStream = 0x0b7;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Everything that changes what a subset model is, except the mask and seed.
std::uint64_t training_key(const ddpm::Dataset& data, const ddpm::TrainConfig& c) {
  ByteWriter w;
  w.u64(data.size());
  w.u32(static_cast<std::uint32_t>(data.dim));
  for (const auto& p : data.points) {
    w.i64(p.id);
    w.f64s(p.x0.data(), static_cast<std::size_t>(p.x0.size()));
  }
  w.u32(static_cast<std::uint32_t>(c.optimizer));
  w.i64(c.epochs);
  w.i64(c.batch_size);
  w.f64(c.learning_rate);
  w.f64(c.momentum);
  w.f64(c.beta2);
  w.f64(c.weight_decay);
  w.f64(c.skip_variance);
  w.u32(c.cosine_decay ? 1 : 0);
  w.u64(c.seed);
  w.i64(c.num_timesteps);
  w.f64(c.beta_start);
  w.f64(c.beta_end);
  for (int h : c.hidden) w.i64(h);
  w.i64(c.embed_dim);
  for (int t : c.frozen_timesteps) w.i64(t);
  w.u64(c.frozen_noise_seed);
  return fnv1a(w.bytes());
}

std::uint64_t protocol_key(const std::vector<Target>& targets, const OutputProtocol& p) {
  ByteWriter w;
  w.i64(p.num_timesteps);
  w.i64(p.draws);
  w.u64(p.seed);
  for (const auto& t : targets) {
    w.i64(t.id);
    w.f64s(t.x0.data(), static_cast<std::size_t>(t.x0.size()));
  }
  return fnv1a(w.bytes());
}

std::string encode_outputs(std::uint64_t key, const std::vector<Target>& targets, const Eigen::VectorXd& f) {
  std::ostringstream out;
  out << "# protocol=" << hex64(key) << "\n";
  out << "target_id,output\n";
  for (std::size_t j = 0; j < targets.size(); ++j) {
    out << targets[j].id << "," << format_double(f[static_cast<Eigen::Index>(j)]) << "\n";
  }
  return out.str();
}

// Returns false when the file is missing, stale, or unreadable.
bool decode_outputs(const std::string& text, std::uint64_t key, std::size_t q, Eigen::VectorXd& f) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "# protocol=" + hex64(key)) return false;
  if (!std::getline(in, line) || line != "target_id,output") return false;
  f.resize(static_cast<Eigen::Index>(q));
  std::size_t j = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || j >= q) return false;
    try {
      f[static_cast<Eigen::Index>(j++)] = std::stod(line.substr(comma + 1));
    } catch (const std::exception&) {
      return false;
    }
  }
  return j == q;
}

class Manifest {
 public:
  explicit Manifest(std::filesystem::path dir) : path_(std::move(dir) / "manifest.tsv") {
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) entries_.insert(line);
    }
  }
  void add(const std::string& entry) {
    std::lock_guard lock(mutex_);
    if (!entries_.insert(entry).second) return;
    std::string text;
    for (const auto& e : entries_) text += e + "\n";
    write_file_atomic(path_, text);
  }

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
  std::set<std::string> entries_;
};

}  // namespace

SubsetPlan plan_subsets(int n, int M, double fraction, std::uint64_t master_seed, int seeds_per_subset) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ParameterError("subset fraction must lie in (0, 1)");
  if (M < 2) throw ParameterError("LDS needs at least two subsets");
  if (seeds_per_subset < 1) throw ParameterError("seeds_per_subset must be positive");
  SubsetPlan plan{n, M, fraction, seeds_per_subset, master_seed, {}};
  const int size = plan.subset_size();
  if (size < 1) throw ParameterError("subset size floor(fraction * n) is zero");
  // Number of distinct masks, capped to avoid overflow.
  double available = 1.0;
  for (int i = 0; i < size && available < 1e18; ++i) available *= static_cast<double>(n - i) / (i + 1);
  if (available < static_cast<double>(M) - 0.5) {
    throw ParameterError("only " + std::to_string(static_cast<long long>(std::llround(available))) +
                         " distinct subsets exist, " + std::to_string(M) + " requested");
  }

  Rng rng(master_seed, kPlanStream);
  std::set<std::vector<std::uint8_t>> seen;
  std::vector<int> idx(static_cast<std::size_t>(n));
  while (static_cast<int>(plan.masks.size()) < M) {
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < size; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(i, n - 1));
      std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
    }
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < size; ++i) mask[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1;
    if (seen.insert(mask).second) plan.masks.push_back(std::move(mask));
  }
  return plan;
}

double predict_output(const Eigen::VectorXd& scores, std::span<const std::uint8_t> mask) {
  if (static_cast<Eigen::Index>(mask.size()) != scores.size()) throw ShapeError("mask length differs from score count");
  double sum = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) sum += scores[static_cast<Eigen::Index>(i)];
  }
  return sum;
}

Eigen::VectorXd model_outputs(const ddpm::NoisePredictor& model, const ddpm::DiffusionSchedule& schedule,
                              const std::vector<Target>& targets, const OutputProtocol& protocol) {
  const auto grid = ddpm::timestep_grid(schedule.num_timesteps(), protocol.num_timesteps);
  const int d = model.data_dim();
  const std::size_t per_target = grid.size() * static_cast<std::size_t>(protocol.draws);
  const auto cols = static_cast<Eigen::Index>(per_target * targets.size());
  Eigen::MatrixXd x_t(d, cols);
  Eigen::MatrixXd eps(d, cols);
  std::vector<int> ts(static_cast<std::size_t>(cols));
  Eigen::Index c = 0;
  for (const auto& target : targets) {
    if (target.x0.size() != d) throw ShapeError("target dimension does not match the model");
    for (const auto& draw : ddpm::sample_noise_draws(stream_seed(protocol.seed, kProtocolStream), target.id, grid,
                                                     protocol.draws, d)) {
      x_t.col(c) = ddpm::forward_noise(target.x0, draw.t, draw.eps, schedule);
      eps.col(c) = draw.eps;
      ts[static_cast<std::size_t>(c)] = draw.t;
      ++c;
    }
  }
  const Eigen::VectorXd losses = (model.forward_batch(x_t, ts) - eps).colwise().squaredNorm().transpose();
  Eigen::VectorXd f(static_cast<Eigen::Index>(targets.size()));
  for (std::size_t j = 0; j < targets.size(); ++j) {
    f[static_cast<Eigen::Index>(j)] =
        losses.segment(static_cast<Eigen::Index>(j * per_target), static_cast<Eigen::Index>(per_target)).mean();
  }
  return f;
}

ddpm::TrainConfig subset_config(const ddpm::TrainConfig& base, int seed_index) {
  ddpm::TrainConfig c = base;
  c.seed = base.seed + static_cast<std::uint64_t>(seed_index);
  c.num_checkpoints = 0;
  return c;
}

GroundTruth compute_ground_truth(const ddpm::Dataset& data, const ddpm::NoisePredictor& base_model,
                                 const SubsetPlan& plan, const std::vector<Target>& targets,
                                 const LdsOptions& options) {
  if (static_cast<int>(data.size()) != plan.n) throw ShapeError("subset plan was built for a different dataset size");
  const ddpm::DiffusionSchedule schedule = options.train.schedule();
  const auto q = static_cast<Eigen::Index>(targets.size());
  const std::uint64_t train_key = training_key(data, options.train);
  const std::uint64_t out_key = protocol_key(targets, options.protocol);
  const auto jobs_per_subset = static_cast<std::size_t>(plan.seeds_per_subset);
  const std::size_t total = plan.masks.size() * jobs_per_subset;

  std::unique_ptr<Manifest> manifest;
  if (!options.cache_dir.empty()) {
    std::filesystem::create_directories(options.cache_dir);
    manifest = std::make_unique<Manifest>(options.cache_dir);
  }

  std::vector<Eigen::VectorXd> per_job(total);
  std::mutex log_mutex;
  parallel_for(total, options.jobs, [&](std::size_t job) {
    const std::size_t m = job / jobs_per_subset;
    const int s = static_cast<int>(job % jobs_per_subset);
    const auto& mask = plan.masks[m];
    const std::string mask_hash =
        hex64(fnv1a(std::string_view(reinterpret_cast<const char*>(mask.data()), mask.size()), train_key));
    std::filesystem::path dir;
    if (!options.cache_dir.empty()) dir = options.cache_dir / mask_hash / std::to_string(s);

    auto warn = [&](const std::string& what) {
      std::lock_guard lock(log_mutex);
      std::cerr << "warning: " << what << "; recomputing\n";
    };

    if (!dir.empty() && std::filesystem::exists(dir / "outputs.csv")) {
      Eigen::VectorXd f;
      try {
        if (decode_outputs(read_file(dir / "outputs.csv"), out_key, targets.size(), f)) {
          per_job[job] = std::move(f);
          return;
        }
      } catch (const Error&) {
      }
    }

    ddpm::NoisePredictor model;
    bool have_model = false;
    if (!dir.empty() && std::filesystem::exists(dir / "model.bin")) {
      try {
        model = ddpm::read_model(dir / "model.bin").model;
        have_model = true;
      } catch (const Error& e) {
        warn("cached model " + (dir / "model.bin").string() + " is unreadable (" + e.what() + ")");
      }
    }
    if (!have_model) {
      model = ddpm::train(ddpm::select(data, mask), subset_config(options.train, s)).model;
      if (!dir.empty()) ddpm::write_model(dir / "model.bin", model, schedule);
    }
    per_job[job] = model_outputs(model, schedule, targets, options.protocol);
    if (!dir.empty()) {
      write_file_atomic(dir / "outputs.csv", encode_outputs(out_key, targets, per_job[job]));
      manifest->add(mask_hash + "\t" + std::to_string(s) + "\t" + hex64(train_key));
    }
    if (options.verbose) {
      std::lock_guard lock(log_mutex);
      std::cerr << "subset " << m + 1 << "/" << plan.masks.size() << " seed " << s << " done\n";
    }
  });

  GroundTruth truth;
  truth.outputs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(plan.masks.size()), q);
  for (std::size_t job = 0; job < total; ++job) {
    truth.outputs.row(static_cast<Eigen::Index>(job / jobs_per_subset)) += per_job[job].transpose();
  }
  truth.outputs /= static_cast<double>(jobs_per_subset);
  truth.base = model_outputs(base_model, schedule, targets, options.protocol);
  return truth;
}

std::size_t LdsReport::degenerate_count() const {
  return static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), 1));
}

LdsReport lds_report(const std::string& method, double lambda, const Eigen::MatrixXd& scores, const SubsetPlan& plan,
                     const GroundTruth& truth) {
  const Eigen::Index q = scores.cols();
  if (truth.outputs.cols() != q || truth.outputs.rows() != static_cast<Eigen::Index>(plan.masks.size())) {
    throw ShapeError("scores and ground truth disagree on targets or subsets");
  }
  if (scores.rows() != plan.n) throw ShapeError("scores do not cover the training set");
  LdsReport report;
  report.method = method;
  report.lambda = lambda;
  for (Eigen::Index j = 0; j < q; ++j) {
    Eigen::VectorXd predicted(plan.M);
    for (int m = 0; m < plan.M; ++m) predicted[m] = predict_output(scores.col(j), plan.masks[static_cast<std::size_t>(m)]);
    const Eigen::VectorXd improvement = (truth.base[j] - truth.outputs.col(j).array()).matrix();
    double rho = 0.0;
    std::uint8_t flag = 0;
    try {
      rho = spearman(predicted, improvement);
    } catch (const UndefinedCorrelationError&) {
      flag = 1;
    }
    report.per_target.push_back(rho);
    report.degenerate.push_back(flag);
  }
  report.summary = summarize(report.per_target);
  return report;
}

Eigen::MatrixXd control_scores(const std::string& name, Eigen::Index n, Eigen::Index q, std::uint64_t seed) {
  if (name == "uniform") return Eigen::MatrixXd::Ones(n, q);
  if (name == "random") {
    Rng rng(seed, 0x7a4d);
    Eigen::MatrixXd out(n, q);
    for (Eigen::Index j = 0; j < q; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) out(i, j) = rng.normal();
    }
    return out;
  }
  throw ParameterError("unknown control method '" + name + "' (expected random or uniform)");
}

LdsRunResult run_lds(AttributionPipeline& pipeline, const std::vector<attribution::MethodSpec>& methods,
                     const std::vector<std::string>& controls, const SubsetPlan& plan,
                     const std::vector<Target>& eval_targets, const GroundTruth& eval_truth,
                     const std::vector<Target>& tuning_targets, const GroundTruth& tuning_truth,
                     const LdsRunConfig& config) {
  LdsRunResult result;
  for (const auto& spec0 : methods) {
    attribution::MethodSpec spec = spec0;
    const std::string name = attribution::method_name(spec);
    if (config.sweep_lambda && attribution::uses_kernel(spec.method) && !tuning_targets.empty()) {
      LambdaSweep sweep;
      sweep.method = name;
      double best = -2.0;
      for (double lambda : config.lambda_grid) {
        spec.lambda = lambda;
        double value = -1.0;
        try {
          value = lds_report(name, lambda, pipeline.scores(spec, tuning_targets), plan, tuning_truth).summary.mean;
        } catch (const SingularityError&) {
          value = -1.0;  // an unusable damping value loses the sweep
        }
        sweep.lambdas.push_back(lambda);
        sweep.tuning_lds.push_back(value);
        if (value > best) {
          best = value;
          sweep.best = lambda;
        }
      }
      spec.lambda = sweep.best;
      result.sweeps.push_back(std::move(sweep));
    }
    const double reported = attribution::uses_kernel(spec.method) ? spec.lambda : 0.0;
    result.reports.push_back(lds_report(name, reported, pipeline.scores(spec, eval_targets), plan, eval_truth));
  }
  const auto n = static_cast<Eigen::Index>(plan.n);
  const auto q = static_cast<Eigen::Index>(eval_targets.size());
  for (const auto& c : controls) {
    result.reports.push_back(lds_report(c, 0.0, control_scores(c, n, q, config.control_seed), plan, eval_truth));
  }
  return result;
}

}  // namespace das::eval
