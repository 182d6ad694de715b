#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "das/binary_io.hpp"
#include "das/cli/commands.hpp"
#include "das/cli/config.hpp"
#include "das/errors.hpp"

using namespace das;
using namespace das::cli;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"([data]
name = gauss2
size = 60
[train]
epochs = 100
[features]
k = 64
[methods]
sweep_lambda = false
lambda = 1
[targets]
validation = 5
generated = 5
tuning = 4
[lds]
subsets = 6
seeds_per_subset = 1
gt_timesteps = 20
[counterfactual]
top_k = 5
targets = 3
[toyexp]
pairs = 6
)";

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args) {
  const std::string cmd = std::string(DAS_BINARY) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string run_capture(const std::string& args, int* code) {
  const fs::path out = fs::temp_directory_path() / "das_unit_cli_capture.txt";
  const std::string cmd = std::string(DAS_BINARY) + " " + args + " >" + out.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  *code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::string text = read_file(out);
  fs::remove(out);
  return text;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

}  // namespace

TEST_CASE("config round trip and hash") {
  for (const char* name : {"gauss2", "blobs8"}) {
    const auto c = default_config(name);
    const std::string text = serialize_config(c);
    const auto back = parse_config(text);
    CHECK(back == c);
    CHECK(serialize_config(back) == text);
    CHECK(config_hash(back) == config_hash(c));
  }
  CHECK(default_config("blobs8").train.hidden != default_config("gauss2").train.hidden);
  CHECK(config_hash(default_config("blobs8")) != config_hash(default_config("gauss2")));

  auto c = parse_config(kSmall);
  CHECK(c.data_size == 60);
  CHECK(c.train.epochs == 100);
  CHECK(c.k == 64);
  CHECK_FALSE(c.sweep_lambda);
  CHECK(parse_config(serialize_config(c)) == c);
  auto d = c;
  set_config_value(d, "train.epochs", "101");
  CHECK(d.train.epochs == 101);
  CHECK(config_hash(d) != config_hash(c));
  set_config_value(d, "methods.list", "das,raw-cos");
  CHECK(d.methods == std::vector<std::string>{"das", "raw-cos"});
}

TEST_CASE("config switching dataset keeps explicit overrides") {
  auto c = default_config("gauss2");
  set_config_value(c, "data.name", "blobs8");
  CHECK(c.train.hidden == default_config("blobs8").train.hidden);
  CHECK(c.train.skip_variance == default_config("blobs8").train.skip_variance);
  auto e = default_config("gauss2");
  set_config_value(e, "train.hidden", "16,16");
  set_config_value(e, "data.name", "blobs8");
  CHECK(e.train.hidden == std::vector<int>{16, 16});
}

TEST_CASE("config errors name the line") {
  auto expect_line = [](const std::string& text, const std::string& line) {
    try {
      parse_config(text);
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(line) != std::string::npos);
    }
  };
  expect_line("[data]\nsize = many\n", "line 2");
  expect_line("[data]\nsize = 10\n\n[nosuch]\n", "line 4");
  expect_line("[data]\ncolour = blue\n", "line 2");
  expect_line("[data]\nsize = 10\nsize = 11\n", "line 3");
  expect_line("size = 10\n", "line 1");
  CHECK_THROWS_AS(parse_config("[data]\nname = mnist\n"), Error);
  auto c = default_config("gauss2");
  c.fraction = 1.0;
  CHECK_THROWS_AS(validate_config(c), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "nodot", "1"), ConfigError);
}

TEST_CASE("gen-data is deterministic and checks its arguments") {
  TempDir t("das_unit_cli_gen");
  const auto a = t.path / "a", b = t.path / "b";
  CHECK(run("-o " + a.string() + " -q gen-data --name gauss2 --seed 7") == 0);
  CHECK(run("-o " + b.string() + " -q gen-data --name gauss2 --seed 7") == 0);
  CHECK(read_file(a / kDataFile) == read_file(b / kDataFile));

  const auto c = t.path / "c";
  CHECK(run("-o " + c.string() + " -q gen-data --name blobs8") == 0);
  std::istringstream in(read_file(c / kDataFile));
  std::string line;
  do std::getline(in, line);
  while (line.rfind('#', 0) == 0);
  CHECK(line.rfind("id,label,x0,", 0) == 0);
  CHECK(std::count(line.begin(), line.end(), ',') == 2 + 64 - 1);
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 2 + 64 - 1);
  }
  CHECK(rows == 200);

  CHECK(run("-o " + c.string() + " gen-data --name nosuch") == 2);
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("--help") == 0);
}

TEST_CASE("missing inputs give an actionable message") {
  TempDir t("das_unit_cli_missing");
  int code = 0;
  const std::string msg = run_capture("-o " + t.path.string() + " train", &code);
  CHECK(code == 3);
  CHECK(msg.find("gen-data") != std::string::npos);
}

TEST_CASE("undamped DAS on rank-deficient features is a numerical error") {
  TempDir t("das_unit_cli_singular");
  const auto cfg = t.path / "small.cfg";
  write_text(cfg, kSmall);
  const std::string base = "-c " + cfg.string() + " -o " + t.path.string() + " -q ";
  // 12 samples of 2 rows each cannot span k = 64.
  const std::string sets = "--set data.size=12 --set targets.validation=2 --set targets.generated=0 ";
  REQUIRE(run(base + sets + "gen-data") == 0);
  REQUIRE(run(base + sets + "train") == 0);
  int code = 0;
  const std::string msg = run_capture(base + sets + "attribute --method das --lambda 0", &code);
  CHECK(code == 4);
  CHECK(msg.find("lambda") != std::string::npos);
}

TEST_CASE("smoke pipeline, caching and determinism") {
  TempDir t("das_unit_cli_pipeline");
  const auto cfg = t.path / "small.cfg";
  write_text(cfg, kSmall);
  auto pipeline = [&](const fs::path& out) {
    const std::string base = "-c " + cfg.string() + " -o " + out.string() + " -q ";
    for (const char* cmd : {"gen-data", "train", "featurize", "attribute", "lds", "counterfactual", "toyexp"}) {
      REQUIRE(run(base + cmd) == 0);
    }
  };
  const auto a = t.path / "a";
  pipeline(a);

  std::istringstream report(read_file(a / "lds_report.csv"));
  std::string line;
  std::getline(report, line);
  CHECK(line == "method,lambda,mean_lds,std,sem,targets,degenerate");
  const auto config = load_config(cfg);
  std::vector<std::string> seen;
  while (std::getline(report, line)) {
    if (!line.empty()) seen.push_back(line.substr(0, line.find(',')));
  }
  std::vector<std::string> want = config.methods;
  want.insert(want.end(), config.controls.begin(), config.controls.end());
  CHECK(seen == want);

  // Re-running with unchanged inputs is a no-op.
  const auto manifest_before = read_file(a / kManifestFile);
  const auto scores_time = fs::last_write_time(a / "scores.csv");
  int code = 0;
  const std::string msg = run_capture("-c " + cfg.string() + " -o " + a.string() + " attribute", &code);
  CHECK(code == 0);
  CHECK(msg.find("up to date") != std::string::npos);
  CHECK(read_file(a / kManifestFile) == manifest_before);
  CHECK(fs::last_write_time(a / "scores.csv") == scores_time);

  // Every manifest line carries the config hash.
  const auto entries = read_manifest(a);
  CHECK(entries.size() == 7);
  for (const auto& e : entries) CHECK(e.config_hash == hex64(config_hash(config)));

  // Identical config, fresh directory: byte-identical reports.
  const auto b = t.path / "b";
  pipeline(b);
  for (const char* f : {"data.csv", "model.bin", "scores.csv", "lds_report.csv", "lds_targets.csv",
                        "counterfactual.csv", "toyexp.csv"}) {
    CHECK_MESSAGE(read_file(a / f) == read_file(b / f), f);
  }

  // A changed upstream input invalidates downstream steps.
  REQUIRE(run("-c " + cfg.string() + " -o " + a.string() + " -q --set train.epochs=90 train") == 0);
  const std::string again =
      run_capture("-c " + cfg.string() + " -o " + a.string() + " --set train.epochs=90 attribute", &code);
  CHECK(code == 0);
  CHECK(again.find("up to date") == std::string::npos);

  // Corrupt model: a format error, exit code 3.
  write_text(a / kModelFile, "DAS1");
  CHECK(run("-c " + cfg.string() + " -o " + a.string() + " --force attribute") == 3);
}
