#include "das/cli/commands.hpp"

#include <chrono>
#include <iostream>
#include <set>
#include <sstream>

#include "das/attribution/methods.hpp"
#include "das/binary_io.hpp"
#include "das/errors.hpp"
#include "das/eval/experiments.hpp"
#include "das/eval/lds.hpp"
#include "das/eval/report.hpp"
#include "das/features/store.hpp"
#include "das/rng.hpp"

namespace das::cli {
namespace fs = std::filesystem;
namespace {

constexpr std::uint64_t kValidationTargets = 0x7a1d;
constexpr std::uint64_t kTuningTargets = 0x7a1e;
constexpr std::uint64_t kGeneratedTargets = 0x6e70;
constexpr std::uint64_t kCounterfactualTargets = 0x6e71;

fs::path out_dir(const CommandContext& ctx) { return ctx.out.empty() ? fs::path(ctx.config.output_dir) : ctx.out; }

std::ostream& log(const CommandContext& ctx) {
  static std::ostream discard(nullptr);
  return ctx.log ? *ctx.log : discard;
}

std::string file_hash(const fs::path& p) { return hex64(fnv1a(read_file(p))); }

std::string producer(const std::string& name) {
  if (name == kDataFile) return "gen-data";
  if (name == kModelFile || name.rfind("checkpoint_", 0) == 0) return "train";
  return "the upstream command";
}

std::string join_files(const std::vector<std::pair<std::string, std::string>>& files) {
  std::string out;
  for (const auto& [name, hash] : files) out += (out.empty() ? "" : ";") + name + "=" + hash;
  return out;
}

std::vector<std::pair<std::string, std::string>> split_files(const std::string& s) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ';')) {
    const auto eq = item.find('=');
    if (eq != std::string::npos) out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
  }
  return out;
}

std::string manifest_line(const ManifestEntry& e) {
  char wall[32];
  std::snprintf(wall, sizeof wall, "%.3f", e.wall_seconds);
  return e.command + "\t" + e.key + "\t" + e.config_hash + "\t" + join_files(e.inputs) + "\t" + join_files(e.outputs) +
         "\t" + wall + "\n";
}

// Cache bookkeeping for one command invocation.
class Step {
 public:
  Step(const CommandContext& ctx, std::string command, const std::vector<std::string>& sections,
       const std::vector<std::string>& inputs)
      : ctx_(ctx), dir_(out_dir(ctx)), start_(std::chrono::steady_clock::now()) {
    entry_.command = std::move(command);
    entry_.config_hash = hex64(config_hash(ctx.config));
    std::string material = entry_.command + "\n" + serialize_sections(ctx.config, sections);
    for (const auto& name : inputs) {
      const fs::path p = dir_ / name;
      if (!fs::exists(p)) {
        throw Error("missing input " + p.string() + "; run `das " + producer(name) + "` with the same config first");
      }
      entry_.inputs.emplace_back(name, file_hash(p));
      material += name + "=" + entry_.inputs.back().second + "\n";
    }
    entry_.key = hex64(fnv1a(material));
    fs::create_directories(dir_);
  }

  const fs::path& dir() const { return dir_; }
  const std::string& key() const { return entry_.key; }

  /// True when the last run of this command had the same key and its
  /// outputs are still intact.
  bool up_to_date() const {
    if (ctx_.force) return false;
    const auto entries = read_manifest(dir_);
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
      if (it->command != entry_.command) continue;
      if (it->key != entry_.key) return false;
      for (const auto& [name, hash] : it->outputs) {
        const fs::path p = dir_ / name;
        if (!fs::exists(p) || file_hash(p) != hash) return false;
      }
      return true;
    }
    return false;
  }

  CommandResult cached() const {
    log(ctx_) << entry_.command << ": up to date (" << entry_.key << ")\n";
    CommandResult r;
    r.cached = true;
    for (const auto& e : read_manifest(dir_)) {
      if (e.command == entry_.command && e.key == entry_.key) {
        r.outputs.clear();
        for (const auto& [name, hash] : e.outputs) r.outputs.push_back(dir_ / name);
      }
    }
    return r;
  }

  void write(const std::string& name, const std::string& bytes) {
    write_file_atomic(dir_ / name, bytes);
    written_.push_back(name);
  }
  void wrote(const std::string& name) { written_.push_back(name); }

  CommandResult finish() {
    for (const auto& name : written_) entry_.outputs.emplace_back(name, file_hash(dir_ / name));
    entry_.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const fs::path manifest = dir_ / kManifestFile;
    std::string text = fs::exists(manifest) ? read_file(manifest) : std::string();
    text += manifest_line(entry_);
    write_file_atomic(manifest, text);
    write_file_atomic(dir_ / kConfigFile, serialize_config(ctx_.config));
    log(ctx_) << entry_.command << ": wrote";
    CommandResult r;
    for (const auto& name : written_) {
      log(ctx_) << ' ' << name;
      r.outputs.push_back(dir_ / name);
    }
    log(ctx_) << " (" << entry_.wall_seconds << " s)\n";
    return r;
  }

 private:
  const CommandContext& ctx_;
  fs::path dir_;
  std::chrono::steady_clock::time_point start_;
  ManifestEntry entry_;
  std::vector<std::string> written_;
};

const std::vector<std::string> kDataSections = {"data"};
const std::vector<std::string> kTrainSections = {"data", "schedule", "train"};
const std::vector<std::string> kFeatureSections = {"data", "schedule", "train", "features"};
const std::vector<std::string> kTargetSections = {"data", "schedule", "train", "features", "methods", "targets"};

std::vector<attribution::MethodSpec> method_specs(const RunConfig& config, const std::vector<std::string>& names) {
  std::vector<attribution::MethodSpec> out;
  for (const auto& name : names) {
    auto spec = attribution::parse_method(name);
    spec.lambda = config.lambda;
    spec.inference_steps = config.inference_steps;
    spec.num_checkpoints = config.train.num_checkpoints;
    out.push_back(spec);
  }
  return out;
}

bool needs_checkpoints(const std::vector<attribution::MethodSpec>& specs) {
  for (const auto& s : specs) {
    if (s.method == attribution::Method::kTracInCp || s.method == attribution::Method::kGas) return true;
  }
  return false;
}

bool uses_features(const attribution::MethodSpec& s) {
  using attribution::Method;
  return s.method != Method::kRawDot && s.method != Method::kRawCos && s.method != Method::kTracInCp &&
         s.method != Method::kGas;
}

std::vector<features::FeatureMode> feature_modes(const std::vector<attribution::MethodSpec>& specs) {
  std::vector<features::FeatureMode> modes;
  std::set<std::string> seen;
  for (const auto& s : specs) {
    if (!uses_features(s)) continue;
    const auto mode = attribution::required_mode(s);
    if (seen.insert(features::to_string(mode)).second) modes.push_back(mode);
  }
  return modes;
}

std::vector<std::string> checkpoint_names(const RunConfig& config) {
  std::vector<std::string> out;
  for (int i = 0; i < config.train.num_checkpoints; ++i) out.push_back(checkpoint_file(i).string());
  return out;
}

// Content-addressed name: features depend on the data, model and feature config.
std::string feature_file(const fs::path& dir, const RunConfig& config, features::FeatureMode mode) {
  const std::string material = file_hash(dir / kDataFile) + file_hash(dir / kModelFile) +
                               serialize_sections(config, kFeatureSections) + features::to_string(mode);
  return "features_" + features::to_string(mode) + "_" + hex64(fnv1a(material)) + ".dasf";
}

struct Loaded {
  ddpm::Dataset data;
  ddpm::ModelFile model;
  std::vector<ddpm::NoisePredictor> checkpoints;
};

Loaded load(const fs::path& dir, const RunConfig& config, bool with_checkpoints) {
  Loaded l;
  l.data = ddpm::read_dataset_csv(dir / kDataFile);
  l.model = ddpm::read_model(dir / kModelFile);
  if (l.model.model.data_dim() != l.data.dim) throw ShapeError("model and dataset dimensions differ");
  if (with_checkpoints) {
    for (int i = 0; i < config.train.num_checkpoints; ++i) {
      l.checkpoints.push_back(ddpm::read_model(dir / checkpoint_file(i)).model);
    }
  }
  return l;
}

void preload_features(eval::AttributionPipeline& pipeline, const fs::path& dir, const RunConfig& config,
                      const std::vector<attribution::MethodSpec>& specs, const CommandContext& ctx) {
  for (const auto& mode : feature_modes(specs)) {
    const fs::path p = dir / feature_file(dir, config, mode);
    if (!fs::exists(p)) continue;
    auto store = features::store_read(p);
    if (store.mode.kind != mode.kind || store.mode.scalarizer != mode.scalarizer) continue;
    pipeline.set_train_features(mode, std::move(store.samples));
    log(ctx) << "  using " << p.filename().string() << "\n";
  }
}

ddpm::SamplerOptions sampler_options(const RunConfig& config) {
  ddpm::SamplerOptions o;
  o.clip_x0 = config.clip_x0;
  return o;
}

}  // namespace

fs::path checkpoint_file(int index) { return "checkpoint_" + std::to_string(index) + ".bin"; }

std::vector<ManifestEntry> read_manifest(const fs::path& out) {
  std::vector<ManifestEntry> entries;
  const fs::path p = out / kManifestFile;
  if (!fs::exists(p)) return entries;
  std::stringstream in(read_file(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string col;
    while (std::getline(ls, col, '\t')) cols.push_back(col);
    if (cols.size() != 6) continue;
    ManifestEntry e;
    e.command = cols[0];
    e.key = cols[1];
    e.config_hash = cols[2];
    e.inputs = split_files(cols[3]);
    e.outputs = split_files(cols[4]);
    e.wall_seconds = std::atof(cols[5].c_str());
    entries.push_back(std::move(e));
  }
  return entries;
}

eval::FeatureConfig feature_config(const RunConfig& config, int jobs) {
  eval::FeatureConfig f;
  f.timesteps = config.feature_timesteps;
  f.k = config.k;
  f.projection_seed = config.projection_seed;
  f.identity = config.identity_projection;
  f.normalize = config.normalize;
  f.draws_per_timestep = config.draws_per_timestep;
  f.noise_seed = config.noise_seed;
  f.jobs = jobs;
  f.memory_budget = config.memory_budget_mb << 20;
  f.inference_steps = config.inference_steps;
  return f;
}

TargetSets make_targets(const RunConfig& config, const ddpm::NoisePredictor& model,
                        const ddpm::DiffusionSchedule& schedule) {
  TargetSets t;
  t.eval = eval::validation_targets(config.dataset, config.validation_targets,
                                    stream_seed(config.data_seed, kValidationTargets), 0);
  auto gen = eval::generated_targets(model, schedule, config.generated_targets,
                                     stream_seed(config.data_seed, kGeneratedTargets), config.sample_steps,
                                     sampler_options(config), config.validation_targets);
  t.eval.insert(t.eval.end(), std::make_move_iterator(gen.begin()), std::make_move_iterator(gen.end()));
  t.tuning = eval::validation_targets(config.dataset, config.tuning_targets,
                                      stream_seed(config.data_seed, kTuningTargets),
                                      config.validation_targets + config.generated_targets);
  return t;
}

std::vector<eval::Target> counterfactual_targets(const RunConfig& config, const ddpm::NoisePredictor& model,
                                                 const ddpm::DiffusionSchedule& schedule) {
  return eval::generated_targets(model, schedule, config.counterfactual_targets,
                                 stream_seed(config.data_seed, kCounterfactualTargets), config.sample_steps,
                                 sampler_options(config), 0);
}

CommandResult cmd_gen_data(const CommandContext& ctx) {
  Step step(ctx, "gen-data", kDataSections, {});
  if (step.up_to_date()) return step.cached();
  const auto data = ddpm::make_dataset(ctx.config.dataset, ctx.config.data_size, ctx.config.data_seed);
  ddpm::write_dataset_csv(data, step.dir() / kDataFile);
  step.wrote(kDataFile);
  return step.finish();
}

CommandResult cmd_train(const CommandContext& ctx) {
  Step step(ctx, "train", kTrainSections, {kDataFile});
  if (step.up_to_date()) return step.cached();
  const auto data = ddpm::read_dataset_csv(step.dir() / kDataFile);
  const auto result = ddpm::train(data, ctx.config.train);
  const auto schedule = ctx.config.train.schedule();
  step.write(kModelFile, ddpm::encode_model(result.model, schedule));
  for (std::size_t i = 0; i < result.checkpoints.size(); ++i) {
    step.write(checkpoint_file(static_cast<int>(i)).string(), ddpm::encode_model(result.checkpoints[i], schedule));
  }
  log(ctx) << "  final training loss " << result.epoch_loss.back() << "\n";
  return step.finish();
}

CommandResult cmd_featurize(const CommandContext& ctx) {
  const RunConfig& config = ctx.config;
  Step step(ctx, "featurize", {"data", "schedule", "train", "features", "methods"}, {kDataFile, kModelFile});
  if (step.up_to_date()) return step.cached();
  const Loaded l = load(step.dir(), config, false);
  eval::AttributionPipeline pipeline(l.model.model, l.model.schedule, l.data, feature_config(config, ctx.jobs));
  for (const auto& mode : feature_modes(method_specs(config, config.methods))) {
    features::FeatureStore store;
    store.mode = mode;
    store.k = pipeline.projection().k();
    store.d = l.data.dim;
    store.timesteps = pipeline.timesteps();
    store.samples = pipeline.train_features(mode);
    const std::string name = feature_file(step.dir(), config, mode);
    step.write(name, features::encode_store(store));
  }
  return step.finish();
}

CommandResult cmd_attribute(const CommandContext& ctx) {
  const RunConfig& config = ctx.config;
  const auto specs = method_specs(config, config.methods);
  std::vector<std::string> inputs = {kDataFile, kModelFile};
  if (needs_checkpoints(specs)) {
    for (const auto& c : checkpoint_names(config)) inputs.push_back(c);
  }
  Step step(ctx, "attribute", kTargetSections, inputs);
  if (step.up_to_date()) return step.cached();
  const Loaded l = load(step.dir(), config, needs_checkpoints(specs));
  eval::AttributionPipeline pipeline(l.model.model, l.model.schedule, l.data, feature_config(config, ctx.jobs),
                                     l.checkpoints);
  preload_features(pipeline, step.dir(), config, specs, ctx);
  const auto targets = make_targets(config, l.model.model, l.model.schedule).eval;

  std::vector<eval::ScoreTable> tables;
  for (const auto& spec : specs) {
    eval::ScoreTable t;
    t.method = attribution::method_name(spec);
    t.lambda = attribution::uses_kernel(spec.method) ? spec.lambda : 0.0;
    t.scores = pipeline.scores(spec, targets);
    if (config.candidates > 0) {
      for (std::size_t j = 0; j < targets.size(); ++j) {
        const auto keep =
            attribution::candidate_filter(targets[j].x0, l.data, static_cast<std::size_t>(config.candidates));
        const auto col = static_cast<Eigen::Index>(j);
        t.scores.col(col) = attribution::apply_filter(t.scores.col(col), keep);
      }
    }
    log(ctx) << "  scored " << t.method << "\n";
    tables.push_back(std::move(t));
  }
  step.write("scores.csv", eval::scores_csv(l.data, targets, tables));
  return step.finish();
}

CommandResult cmd_lds(const CommandContext& ctx) {
  const RunConfig& config = ctx.config;
  const auto specs = method_specs(config, config.methods);
  std::vector<std::string> inputs = {kDataFile, kModelFile};
  if (needs_checkpoints(specs)) {
    for (const auto& c : checkpoint_names(config)) inputs.push_back(c);
  }
  Step step(ctx, "lds", {"data", "schedule", "train", "features", "methods", "targets", "lds"}, inputs);
  if (step.up_to_date()) return step.cached();
  const Loaded l = load(step.dir(), config, needs_checkpoints(specs));
  eval::AttributionPipeline pipeline(l.model.model, l.model.schedule, l.data, feature_config(config, ctx.jobs),
                                     l.checkpoints);
  preload_features(pipeline, step.dir(), config, specs, ctx);
  const auto targets = make_targets(config, l.model.model, l.model.schedule);

  const auto plan = eval::plan_subsets(static_cast<int>(l.data.size()), config.subsets, config.fraction,
                                       config.master_seed, config.seeds_per_subset);
  eval::LdsOptions options;
  options.train = config.train;
  options.protocol = {config.gt_timesteps, config.gt_draws, config.protocol_seed};
  options.jobs = ctx.jobs;
  options.cache_dir = step.dir() / "lds_cache";
  options.verbose = ctx.log != nullptr;

  std::vector<eval::Target> all = targets.eval;
  all.insert(all.end(), targets.tuning.begin(), targets.tuning.end());
  log(ctx) << "  ground truth: " << plan.M << " subsets x " << plan.seeds_per_subset << " seeds\n";
  const auto truth = eval::compute_ground_truth(l.data, l.model.model, plan, all, options);
  const auto q = static_cast<Eigen::Index>(targets.eval.size());
  const auto qt = static_cast<Eigen::Index>(targets.tuning.size());
  const eval::GroundTruth eval_truth{truth.outputs.leftCols(q), truth.base.head(q)};
  const eval::GroundTruth tuning_truth{truth.outputs.rightCols(qt), truth.base.tail(qt)};

  eval::LdsRunConfig run;
  run.lambda_grid = config.lambda_grid;
  run.sweep_lambda = config.sweep_lambda;
  run.control_seed = config.master_seed;
  const auto result =
      eval::run_lds(pipeline, specs, config.controls, plan, targets.eval, eval_truth, targets.tuning, tuning_truth, run);
  for (const auto& r : result.reports) {
    log(ctx) << "  " << r.method << " lambda=" << r.lambda << " LDS=" << r.summary.mean << " +- " << r.summary.sem
             << "\n";
  }
  step.write("lds_report.csv", eval::lds_csv(result.reports));
  step.write("lds_targets.csv", eval::lds_targets_csv(result.reports));
  step.write("lds_sweep.csv", eval::sweep_csv(result.sweeps));
  step.write("lds_report.svg", eval::lds_svg(result.reports, "LDS on " + config.dataset + " (" +
                                                               std::to_string(config.feature_timesteps) +
                                                               " timesteps, M = " + std::to_string(config.subsets) +
                                                               ")"));
  return step.finish();
}

CommandResult cmd_counterfactual(const CommandContext& ctx) {
  const RunConfig& config = ctx.config;
  const auto specs = method_specs(config, config.counterfactual_methods);
  std::vector<std::string> inputs = {kDataFile, kModelFile};
  if (needs_checkpoints(specs)) {
    for (const auto& c : checkpoint_names(config)) inputs.push_back(c);
  }
  Step step(ctx, "counterfactual",
            {"data", "schedule", "train", "features", "methods", "targets", "counterfactual"}, inputs);
  if (step.up_to_date()) return step.cached();
  const Loaded l = load(step.dir(), config, needs_checkpoints(specs));
  eval::AttributionPipeline pipeline(l.model.model, l.model.schedule, l.data, feature_config(config, ctx.jobs),
                                     l.checkpoints);
  preload_features(pipeline, step.dir(), config, specs, ctx);
  const auto targets = counterfactual_targets(config, l.model.model, l.model.schedule);

  std::vector<std::pair<std::string, Eigen::MatrixXd>> scores;
  for (const auto& spec : specs) scores.emplace_back(attribution::method_name(spec), pipeline.scores(spec, targets));
  eval::CounterfactualConfig cc;
  cc.train = config.train;
  cc.top_k = static_cast<std::size_t>(config.top_k);
  cc.sample_steps = config.sample_steps;
  cc.sampler = sampler_options(config);
  cc.random_seed = config.data_seed;
  cc.jobs = ctx.jobs;
  const auto rows = eval::run_counterfactual(l.data, targets, scores, cc);
  for (const auto& r : rows) log(ctx) << "  " << r.method << " mean L2=" << r.mean_l2 << "\n";
  step.write("counterfactual.csv", eval::counterfactual_csv(rows));
  return step.finish();
}

CommandResult cmd_toyexp(const CommandContext& ctx) {
  const RunConfig& config = ctx.config;
  Step step(ctx, "toyexp", {"data", "schedule", "train", "targets", "toyexp"}, {kDataFile, kModelFile});
  if (step.up_to_date()) return step.cached();
  const Loaded l = load(step.dir(), config, false);
  eval::OutputFunctionConfig oc;
  oc.train = config.train;
  oc.pairs = config.pairs;
  oc.removal_fraction = config.removal_fraction;
  oc.seed = config.toyexp_seed;
  oc.sample_steps = config.sample_steps;
  oc.sampler = sampler_options(config);
  oc.jobs = ctx.jobs;
  const auto report = eval::run_output_function_experiment(l.data, l.model.model, oc);
  log(ctx) << "  pearson(output diff, L2)=" << report.pearson_output
           << " pearson(loss diff, L2)=" << report.pearson_loss << "\n";
  step.write("toyexp.csv", eval::output_function_csv(report));
  step.write("toyexp.svg", eval::output_function_svg(report));
  return step.finish();
}

}  // namespace das::cli
