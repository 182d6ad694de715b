#include "das/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <set>
#include <sstream>

#include "das/attribution/methods.hpp"
#include "das/binary_io.hpp"
#include "das/errors.hpp"

namespace das::cli {
namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError("'" + text + "' is not a valid number");
  return value;
}

std::string to_text(int v) { return std::to_string(v); }
std::string to_text(std::uint64_t v) { return std::to_string(v); }
std::string to_text(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
std::string to_text(bool v) { return v ? "true" : "false"; }
std::string to_text(const std::string& v) { return v; }
std::string to_text(ddpm::Optimizer v) { return v == ddpm::Optimizer::kSgd ? "sgd" : "adamw"; }
template <class T>
std::string to_text(const std::vector<T>& v) {
  std::string out;
  for (const auto& x : v) out += (out.empty() ? "" : ", ") + to_text(x);
  return out;
}

void from_text(const std::string& s, int& v) { v = parse_number<int>(s); }
void from_text(const std::string& s, std::uint64_t& v) { v = parse_number<std::uint64_t>(s); }
void from_text(const std::string& s, double& v) { v = parse_number<double>(s); }
void from_text(const std::string& s, std::string& v) { v = s; }
void from_text(const std::string& s, bool& v) {
  if (s == "true" || s == "1" || s == "yes") {
    v = true;
  } else if (s == "false" || s == "0" || s == "no") {
    v = false;
  } else {
    throw ConfigError("'" + s + "' is not a boolean (true/false)");
  }
}
void from_text(const std::string& s, ddpm::Optimizer& v) {
  if (s == "sgd") {
    v = ddpm::Optimizer::kSgd;
  } else if (s == "adamw") {
    v = ddpm::Optimizer::kAdamW;
  } else {
    throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adamw)");
  }
}
template <class T>
void from_text(const std::string& s, std::vector<T>& v) {
  v.clear();
  for (const auto& item : split_list(s)) {
    T x{};
    from_text(item, x);
    v.push_back(x);
  }
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class Access>
Field field(const char* section, const char* key, Access access) {
  return {section, key, [access](const RunConfig& c) { return to_text(access(const_cast<RunConfig&>(c))); },
          [access](RunConfig& c, const std::string& v) { from_text(v, access(c)); }};
}

#define DAS_FIELD(section, key, expr) field(section, key, [](RunConfig& c) -> auto& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      DAS_FIELD("data", "name", c.dataset),
      DAS_FIELD("data", "seed", c.data_seed),
      DAS_FIELD("data", "size", c.data_size),

      DAS_FIELD("schedule", "timesteps", c.train.num_timesteps),
      DAS_FIELD("schedule", "beta_start", c.train.beta_start),
      DAS_FIELD("schedule", "beta_end", c.train.beta_end),

      DAS_FIELD("train", "optimizer", c.train.optimizer),
      DAS_FIELD("train", "epochs", c.train.epochs),
      DAS_FIELD("train", "batch_size", c.train.batch_size),
      DAS_FIELD("train", "learning_rate", c.train.learning_rate),
      DAS_FIELD("train", "momentum", c.train.momentum),
      DAS_FIELD("train", "beta2", c.train.beta2),
      DAS_FIELD("train", "weight_decay", c.train.weight_decay),
      DAS_FIELD("train", "cosine_decay", c.train.cosine_decay),
      DAS_FIELD("train", "seed", c.train.seed),
      DAS_FIELD("train", "hidden", c.train.hidden),
      DAS_FIELD("train", "embed_dim", c.train.embed_dim),
      DAS_FIELD("train", "skip_variance", c.train.skip_variance),
      DAS_FIELD("train", "checkpoints", c.train.num_checkpoints),

      DAS_FIELD("features", "timesteps", c.feature_timesteps),
      DAS_FIELD("features", "k", c.k),
      DAS_FIELD("features", "normalize", c.normalize),
      DAS_FIELD("features", "draws", c.draws_per_timestep),
      DAS_FIELD("features", "identity", c.identity_projection),
      DAS_FIELD("features", "projection_seed", c.projection_seed),
      DAS_FIELD("features", "noise_seed", c.noise_seed),
      DAS_FIELD("features", "memory_budget_mb", c.memory_budget_mb),

      DAS_FIELD("methods", "list", c.methods),
      DAS_FIELD("methods", "lambda", c.lambda),
      DAS_FIELD("methods", "lambda_grid", c.lambda_grid),
      DAS_FIELD("methods", "sweep_lambda", c.sweep_lambda),
      DAS_FIELD("methods", "inference_steps", c.inference_steps),
      DAS_FIELD("methods", "candidates", c.candidates),

      DAS_FIELD("targets", "validation", c.validation_targets),
      DAS_FIELD("targets", "generated", c.generated_targets),
      DAS_FIELD("targets", "tuning", c.tuning_targets),
      DAS_FIELD("targets", "sample_steps", c.sample_steps),
      DAS_FIELD("targets", "clip_x0", c.clip_x0),

      DAS_FIELD("lds", "subsets", c.subsets),
      DAS_FIELD("lds", "fraction", c.fraction),
      DAS_FIELD("lds", "seeds_per_subset", c.seeds_per_subset),
      DAS_FIELD("lds", "master_seed", c.master_seed),
      DAS_FIELD("lds", "gt_timesteps", c.gt_timesteps),
      DAS_FIELD("lds", "gt_draws", c.gt_draws),
      DAS_FIELD("lds", "protocol_seed", c.protocol_seed),
      DAS_FIELD("lds", "controls", c.controls),

      DAS_FIELD("counterfactual", "top_k", c.top_k),
      DAS_FIELD("counterfactual", "targets", c.counterfactual_targets),
      DAS_FIELD("counterfactual", "methods", c.counterfactual_methods),

      DAS_FIELD("toyexp", "pairs", c.pairs),
      DAS_FIELD("toyexp", "removal_fraction", c.removal_fraction),
      DAS_FIELD("toyexp", "seed", c.toyexp_seed),

      DAS_FIELD("output", "dir", c.output_dir),
  };
  return table;
}

#undef DAS_FIELD

const Field& find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "' in section [" + section + "]");
}

struct Entry {
  std::string section;
  std::string key;
  std::string value;
  int line = 0;
};

std::vector<Entry> tokenize(const std::string& text) {
  std::vector<Entry> out;
  std::stringstream in(text);
  std::string raw;
  std::string section;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError("line " + std::to_string(line) + ": unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      const auto& fs = fields();
      if (std::none_of(fs.begin(), fs.end(), [&](const Field& f) { return f.section == section; })) {
        throw ConfigError("line " + std::to_string(line) + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line) + ": expected 'key = value'");
    if (section.empty()) throw ConfigError("line " + std::to_string(line) + ": key outside of any [section]");
    out.push_back({section, trim(s.substr(0, eq)), trim(s.substr(eq + 1)), line});
  }
  return out;
}

}  // namespace

bool operator==(const RunConfig& a, const RunConfig& b) { return serialize_config(a) == serialize_config(b); }

RunConfig default_config(const std::string& dataset) {
  RunConfig config;
  config.dataset = dataset;
  config.train = ddpm::default_train_config(dataset);
  config.train.num_checkpoints = 4;
  return config;
}

RunConfig parse_config(const std::string& text) {
  const auto entries = tokenize(text);
  std::string dataset = "gauss2";
  for (const auto& e : entries) {
    if (e.section == "data" && e.key == "name") dataset = e.value;
  }
  RunConfig config;
  try {
    config = default_config(dataset);
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("[data] name: ") + e.what());
  }
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& e : entries) {
    if (!seen.emplace(e.section, e.key).second) {
      throw ConfigError("line " + std::to_string(e.line) + ": duplicate key '" + e.key + "'");
    }
    try {
      find_field(e.section, e.key).set(config, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError("line " + std::to_string(e.line) + ": " + err.what());
    }
  }
  validate_config(config);
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  try {
    return parse_config(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string serialize_sections(const RunConfig& config, const std::vector<std::string>& sections) {
  std::string out;
  std::string current;
  for (const auto& f : fields()) {
    if (!sections.empty() && std::find(sections.begin(), sections.end(), f.section) == sections.end()) continue;
    if (f.section != current) {
      out += (out.empty() ? "[" : "\n[") + f.section + "]\n";
      current = f.section;
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

std::string serialize_config(const RunConfig& config) { return serialize_sections(config, {}); }

std::uint64_t config_hash(const RunConfig& config) { return fnv1a(serialize_config(config)); }

void set_config_value(RunConfig& config, const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  if (dot == std::string::npos) throw ConfigError("override '" + dotted_key + "' must look like section.key");
  const std::string section = dotted_key.substr(0, dot);
  const std::string key = dotted_key.substr(dot + 1);
  if (section == "data" && key == "name") {
    // Follow the dataset's training defaults unless they were changed.
    const auto before = ddpm::default_train_config(config.dataset);
    const auto after = ddpm::default_train_config(value);
    if (config.train.hidden == before.hidden) config.train.hidden = after.hidden;
    if (config.train.skip_variance == before.skip_variance) config.train.skip_variance = after.skip_variance;
    config.dataset = value;
    return;
  }
  find_field(section, key).set(config, trim(value));
}

void validate_config(const RunConfig& c) {
  const auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(c.data_size >= 2, "[data] size must be at least 2");
  require(c.train.epochs >= 1 && c.train.batch_size >= 1, "[train] epochs and batch_size must be positive");
  require(c.train.learning_rate > 0.0, "[train] learning_rate must be positive");
  require(c.train.num_timesteps >= 1, "[schedule] timesteps must be positive");
  require(c.feature_timesteps >= 1 && c.feature_timesteps <= c.train.num_timesteps,
          "[features] timesteps must lie in [1, schedule timesteps]");
  require(c.k >= 1, "[features] k must be positive");
  require(c.draws_per_timestep >= 1, "[features] draws must be positive");
  require(c.memory_budget_mb >= 1, "[features] memory_budget_mb must be positive");
  require(c.lambda >= 0.0, "[methods] lambda must be non-negative");
  require(!c.sweep_lambda || !c.lambda_grid.empty(), "[methods] lambda_grid is empty but sweep_lambda is on");
  for (double l : c.lambda_grid) require(l >= 0.0, "[methods] lambda_grid values must be non-negative");
  require(c.candidates >= 0 && c.candidates <= c.data_size, "[methods] candidates must lie in [0, data size]");
  require(c.inference_steps >= 1, "[methods] inference_steps must be positive");
  for (const auto& m : c.methods) attribution::parse_method(m);
  for (const auto& m : c.counterfactual_methods) attribution::parse_method(m);
  for (const auto& m : c.controls) require(m == "random" || m == "uniform", "[lds] unknown control '" + m + "'");
  require(c.validation_targets >= 0 && c.generated_targets >= 0 && c.tuning_targets >= 0,
          "[targets] counts must be non-negative");
  require(c.sample_steps >= 1, "[targets] sample_steps must be positive");
  require(c.fraction > 0.0 && c.fraction < 1.0, "[lds] fraction must lie in (0, 1)");
  require(c.subsets >= 2, "[lds] subsets must be at least 2");
  require(c.seeds_per_subset >= 1, "[lds] seeds_per_subset must be positive");
  require(c.gt_timesteps >= 1 && c.gt_draws >= 1, "[lds] gt_timesteps and gt_draws must be positive");
  require(c.top_k >= 0 && c.top_k < c.data_size, "[counterfactual] top_k must lie in [0, data size)");
  require(c.counterfactual_targets >= 1, "[counterfactual] targets must be positive");
  require(c.pairs >= 2, "[toyexp] pairs must be at least 2");
  require(c.removal_fraction >= 0.0 && c.removal_fraction < 1.0, "[toyexp] removal_fraction must lie in [0, 1)");
  require(!c.output_dir.empty(), "[output] dir must not be empty");
}

}  // namespace das::cli
