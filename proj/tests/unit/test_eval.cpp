#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "../common/oracles.hpp"
#include "das/binary_io.hpp"
#include "das/ddpm/dataset.hpp"
#include "das/errors.hpp"
#include "das/eval/experiments.hpp"
#include "das/eval/lds.hpp"
#include "das/eval/pipeline.hpp"
#include "das/eval/report.hpp"
#include "das/eval/stats.hpp"

using namespace das;
using namespace das::eval;

namespace {

ddpm::TrainConfig tiny_config() {
  auto c = ddpm::default_train_config("gauss2");
  c.hidden = {8, 8};
  c.epochs = 40;
  c.batch_size = 16;
  return c;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Outputs that are exactly linear in the removed samples' effects.
GroundTruth planted_truth(const SubsetPlan& plan, const Eigen::MatrixXd& tau, double noise, std::uint64_t seed) {
  Rng rng(seed);
  GroundTruth t;
  t.base = rng.normal_vector(tau.cols());
  t.outputs.resize(static_cast<Eigen::Index>(plan.masks.size()), tau.cols());
  for (std::size_t m = 0; m < plan.masks.size(); ++m) {
    for (Eigen::Index j = 0; j < tau.cols(); ++j) {
      double sum = 0;
      for (int i = 0; i < plan.n; ++i)
        if (plan.masks[m][static_cast<std::size_t>(i)]) sum += tau(i, j);
      t.outputs(static_cast<Eigen::Index>(m), j) = t.base[j] - sum + noise * rng.normal();
    }
  }
  return t;
}

}  // namespace

TEST_CASE("spearman examples") {
  CHECK(spearman(vec({1, 2, 3}), vec({1, 2, 3})) == doctest::Approx(1.0));
  CHECK(spearman(vec({1, 2, 3}), vec({3, 2, 1})) == doctest::Approx(-1.0));
  CHECK(spearman(vec({1, 2, 3, 4}), vec({1, 3, 2, 4})) == doctest::Approx(0.8).epsilon(1e-14));
  CHECK_THROWS_AS(spearman(vec({1, 1, 1}), vec({1, 2, 3})), UndefinedCorrelationError);
  CHECK_THROWS_AS(spearman(vec({1, 2}), vec({1, 2, 3})), ShapeError);
  CHECK_THROWS_AS(spearman(vec({1}), vec({1})), ShapeError);
  CHECK(mid_ranks(vec({10, 20, 10, 5})) == vec({2.5, 4, 2.5, 1}));
}

TEST_CASE("spearman symmetry, bounds and monotone invariance") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd a = rng.normal_vector(15), b = rng.normal_vector(15);
    if (trial % 3 == 0) b[4] = b[7];  // ties
    const double r = spearman(a, b);
    CHECK(r == doctest::Approx(spearman(b, a)).epsilon(1e-14));
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
    const Eigen::VectorXd ta = a.array().exp() * 3.0 + 1.0;
    const Eigen::VectorXd tb = b.array().pow(3) - 2.0;
    CHECK(spearman(ta, tb) == doctest::Approx(r).epsilon(1e-12));
    std::vector<double> va(a.data(), a.data() + 15), vb(b.data(), b.data() + 15);
    CHECK(r == doctest::Approx(oracle::spearman(va, vb)).epsilon(1e-12));
  }
}

TEST_CASE("pearson and summaries") {
  const Eigen::VectorXd x = vec({0.3, -1.0, 2.5, 4.0});
  CHECK(pearson(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson(x, -2.0 * x) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK_THROWS_AS(pearson(x, Eigen::VectorXd::Constant(4, 2.0)), UndefinedCorrelationError);
  const auto s = summarize({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == 2.5);
  CHECK(s.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(s.sem == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
  CHECK(summarize({7.0}).stddev == 0.0);
}

TEST_CASE("subset plans") {
  const auto p = plan_subsets(200, 32, 0.5, 4);
  REQUIRE(p.masks.size() == 32);
  std::set<std::vector<std::uint8_t>> distinct(p.masks.begin(), p.masks.end());
  CHECK(distinct.size() == 32);
  for (const auto& m : p.masks) {
    CHECK(m.size() == 200);
    CHECK(std::count(m.begin(), m.end(), 1) == 100);
  }
  CHECK(plan_subsets(200, 32, 0.5, 4).masks == p.masks);
  CHECK(plan_subsets(200, 32, 0.5, 5).masks != p.masks);

  const auto small = plan_subsets(4, 2, 0.5, 0);
  CHECK(small.masks[0] != small.masks[1]);
  for (const auto& m : small.masks) CHECK(std::count(m.begin(), m.end(), 1) == 2);

  CHECK(plan_subsets(7, 3, 0.3, 0).subset_size() == 2);
  CHECK_THROWS_AS(plan_subsets(3, 2, 0.2, 0), ParameterError);
  CHECK_THROWS_AS(plan_subsets(10, 1, 0.5, 0), ParameterError);
  CHECK_THROWS_AS(plan_subsets(10, 2, 1.0, 0), ParameterError);
  CHECK_THROWS_AS(plan_subsets(4, 7, 0.5, 0), ParameterError);  // only 6 distinct masks
}

TEST_CASE("predicted output") {
  const Eigen::VectorXd s = vec({1.5, -2.0, 4.0});
  CHECK(predict_output(s, std::vector<std::uint8_t>{0, 0, 0}) == 0.0);
  CHECK(predict_output(s, std::vector<std::uint8_t>{1, 1, 1}) == 3.5);
  CHECK(predict_output(s, std::vector<std::uint8_t>{0, 1, 0}) == -2.0);
  CHECK_THROWS_AS(predict_output(s, std::vector<std::uint8_t>{1, 1}), ShapeError);
}

TEST_CASE("LDS on a planted linear problem") {
  const int n = 40, q = 6;
  Rng rng(1);
  const Eigen::MatrixXd tau = oracle::random_matrix(rng, n, q);
  const auto plan = plan_subsets(n, 32, 0.5, 2);
  const auto exact = lds_report("oracle", 0.0, tau, plan, planted_truth(plan, tau, 0.0, 3));
  CHECK(exact.summary.mean == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(exact.degenerate_count() == 0);
  double previous = -1.0;
  for (int M : {8, 64}) {
    const auto p = plan_subsets(n, M, 0.5, 2);
    const double v = lds_report("oracle", 0.0, tau, p, planted_truth(p, tau, 0.5, 3)).summary.mean;
    CHECK(v > 0.9);
    previous = v;
  }
  CHECK(previous > 0.9);
}

TEST_CASE("LDS controls") {
  const int n = 60, q = 30, M = 32;
  Rng rng(2);
  const Eigen::MatrixXd tau = oracle::random_matrix(rng, n, q);
  const auto uniform = control_scores("uniform", n, q, 0);
  const auto plan = plan_subsets(n, M, 0.5, 0);
  const auto truth = planted_truth(plan, tau, 0.0, 1);
  const auto u = lds_report("uniform", 0.0, uniform, plan, truth);
  CHECK(u.degenerate_count() == static_cast<std::size_t>(q));
  CHECK(u.summary.mean == 0.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = plan_subsets(n, M, 0.5, seed);
    const auto r = lds_report("random", 0.0, control_scores("random", n, q, seed), p, planted_truth(p, tau, 0.0, 1));
    CHECK(std::abs(r.summary.mean) < 2.0 / std::sqrt(M));
    CHECK(r.degenerate_count() == 0);
  }
  CHECK(control_scores("random", n, q, 4) == control_scores("random", n, q, 4));
  CHECK_THROWS_AS(control_scores("psychic", n, q, 0), ParameterError);
}

TEST_CASE("top-k and removal helpers") {
  const Eigen::VectorXd s = vec({0.5, 3.0, 3.0, -1.0, 2.0});
  CHECK(top_k(s, 3) == std::vector<std::size_t>{1, 2, 4});
  CHECK(top_k(s, 0).empty());
  CHECK_THROWS_AS(top_k(s, 6), ParameterError);
  const auto data = ddpm::make_gauss2(6, 0);
  const auto r = remove_indices(data, {4, 1});
  REQUIRE(r.size() == 4);
  CHECK(r.points[1].id == 2);
  CHECK(r.points[3].id == 5);
  CHECK_THROWS_AS(remove_indices(data, {6}), IndexError);
}

TEST_CASE("retraining on the unchanged set reproduces the base model") {
  const auto data = ddpm::make_gauss2(40, 1);
  const auto cfg = tiny_config();
  CHECK(ddpm::train(remove_indices(data, {}), cfg).model == ddpm::train(data, cfg).model);
}

TEST_CASE("counterfactual edge cases") {
  const auto data = ddpm::make_gauss2(40, 1);
  const auto cfg = tiny_config();
  const auto base = ddpm::train(data, cfg).model;
  const auto schedule = cfg.schedule();
  const auto targets = generated_targets(base, schedule, 3, 100, 20, {}, 0);
  CounterfactualConfig cc;
  cc.train = cfg;
  cc.sample_steps = 20;
  Rng rng(5);
  const Eigen::MatrixXd a = oracle::random_matrix(rng, 40, 3);

  cc.top_k = 0;
  for (const auto& row : run_counterfactual(data, targets, {{"a", a}}, cc)) {
    for (double v : row.l2) CHECK(v == 0.0);
    CHECK(row.mean_l2 == 0.0);
  }

  cc.top_k = 5;
  cc.random_baseline = false;
  // Same top-5 sets, different score values.
  const Eigen::MatrixXd b = a.array().exp().matrix();
  const auto rows = run_counterfactual(data, targets, {{"a", a}, {"b", b}}, cc);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].l2 == rows[1].l2);
  CHECK(rows[0].cosine == rows[1].cosine);
  CHECK(rows[0].mean_l2 > 0.0);

  cc.top_k = 40;
  CHECK_THROWS_AS(run_counterfactual(data, targets, {{"a", a}}, cc), ParameterError);
  cc.top_k = 5;
  const auto val = validation_targets("gauss2", 2, 0);
  CHECK_THROWS_AS(run_counterfactual(data, val, {{"a", Eigen::MatrixXd::Zero(40, 2)}}, cc), ConfigError);
  CHECK_THROWS_AS(run_counterfactual(data, targets, {{"a", Eigen::MatrixXd::Zero(39, 3)}}, cc), ShapeError);
}

TEST_CASE("output-function experiment edge cases") {
  const auto data = ddpm::make_gauss2(40, 1);
  const auto cfg = tiny_config();
  const auto base = ddpm::train(data, cfg).model;
  OutputFunctionConfig oc;
  oc.train = cfg;
  oc.sample_steps = 20;
  const auto same = output_function_pairs(data, base, {{}, {}, {}}, oc);
  CHECK(same.degenerate_loss);
  CHECK(same.degenerate_output);
  for (double v : same.l2) CHECK(v == 0.0);
  for (double v : same.output_diff) CHECK(v == 0.0);

  const auto real = output_function_pairs(data, base, {{1, 2, 3}, {5, 9}, {}, {0, 10, 20, 30}}, oc);
  CHECK(real.l2.size() == 4);
  CHECK(real.l2[2] == 0.0);
  CHECK_FALSE(real.degenerate_output);
  CHECK(real.pearson_output >= -1.0);
  CHECK(real.pearson_output <= 1.0);

  oc.pairs = 1;
  CHECK_THROWS_AS(run_output_function_experiment(data, base, oc), ParameterError);
  oc.pairs = 3;
  oc.removal_fraction = 1.0;
  CHECK_THROWS_AS(run_output_function_experiment(data, base, oc), ParameterError);
}

TEST_CASE("ground truth cache resumes bit-identically") {
  const auto data = ddpm::make_gauss2(30, 2);
  LdsOptions opt;
  opt.train = tiny_config();
  opt.train.epochs = 20;
  opt.protocol = {10, 2, 7};
  const auto base = ddpm::train(data, opt.train).model;
  const auto plan = plan_subsets(30, 4, 0.5, 1, 2);
  const auto targets = validation_targets("gauss2", 3, 9);

  const auto fresh = compute_ground_truth(data, base, plan, targets, opt);

  const auto dir = std::filesystem::temp_directory_path() / "das_unit_lds_cache";
  std::filesystem::remove_all(dir);
  opt.cache_dir = dir;
  const auto first = compute_ground_truth(data, base, plan, targets, opt);
  CHECK(first.outputs == fresh.outputs);
  CHECK(first.base == fresh.base);

  // Interrupt: drop some outputs, some models entirely, corrupt one model.
  int k = 0;
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.path().filename() == "outputs.csv") dirs.push_back(e.path().parent_path());
  }
  std::sort(dirs.begin(), dirs.end());
  REQUIRE(dirs.size() == 8);
  for (const auto& d : dirs) {
    if (k % 2 == 0) std::filesystem::remove(d / "outputs.csv");
    if (k % 4 == 0) std::filesystem::remove(d / "model.bin");
    ++k;
  }
  std::filesystem::remove(dirs[2] / "outputs.csv");
  write_file_atomic(dirs[2] / "model.bin", "DAS1 garbage");
  const auto resumed = compute_ground_truth(data, base, plan, targets, opt);
  CHECK(resumed.outputs == fresh.outputs);
  std::filesystem::remove_all(dir);
}

TEST_CASE("model outputs use a frozen protocol") {
  const auto data = ddpm::make_gauss2(30, 2);
  const auto cfg = tiny_config();
  const auto m = ddpm::train(data, cfg).model;
  const auto targets = validation_targets("gauss2", 4, 1);
  const OutputProtocol p{10, 3, 5};
  const auto a = model_outputs(m, cfg.schedule(), targets, p);
  CHECK(a == model_outputs(m, cfg.schedule(), targets, p));
  // A target's output does not depend on the other targets.
  const auto solo = model_outputs(m, cfg.schedule(), {targets[2]}, p);
  CHECK(solo[0] == doctest::Approx(a[2]).epsilon(1e-12));
}

TEST_CASE("pipeline scores every method with the right shape") {
  const auto data = ddpm::make_gauss2(24, 3);
  auto cfg = tiny_config();
  cfg.num_checkpoints = 2;
  const auto trained = ddpm::train(data, cfg);
  const auto schedule = cfg.schedule();
  FeatureConfig fc;
  fc.timesteps = 4;
  fc.k = 16;
  fc.inference_steps = 5;
  AttributionPipeline pipe(trained.model, schedule, data, fc, trained.checkpoints);
  auto targets = validation_targets("gauss2", 2, 4, 0);
  auto gen = generated_targets(trained.model, schedule, 2, 50, 10, {}, 2);
  targets.insert(targets.end(), gen.begin(), gen.end());
  for (const char* name : {"das", "das-t", "das-loss", "trak", "dtrak-square-norm", "dtrak-loss", "journey-trak",
                           "relative-if", "renormalized-if", "grad-dot", "grad-cos", "tracincp", "gas", "raw-dot",
                           "raw-cos"}) {
    const Eigen::MatrixXd s = pipe.scores(attribution::parse_method(name), targets);
    CHECK(s.rows() == 24);
    CHECK(s.cols() == 4);
    CHECK(s.allFinite());
  }
  const auto das = pipe.scores(attribution::parse_method("das"), targets);
  CHECK(das.minCoeff() >= 0.0);
  CHECK(pipe.scores(attribution::parse_method("das"), targets) == das);

  // Reinstalled features give the same scores; malformed ones are rejected.
  auto feats = pipe.train_features(features::kJacobianMode);
  AttributionPipeline other(trained.model, schedule, data, fc, trained.checkpoints);
  other.set_train_features(features::kJacobianMode, feats);
  CHECK(other.scores(attribution::parse_method("das"), targets) == das);
  feats.pop_back();
  CHECK_THROWS(other.set_train_features(features::kJacobianMode, feats));
}

TEST_CASE("report formats") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
  const auto data = ddpm::make_gauss2(3, 0);
  std::vector<Target> targets = validation_targets("gauss2", 1, 0, 7);
  const std::string csv = scores_csv(data, targets, {{"das", 0.01, vec({0.5, 2.0, 1.0})}});
  CHECK(csv.rfind("target_id,train_id,method,lambda,score,rank\n", 0) == 0);
  CHECK(csv.find("7,1,das,0.01,2,1\n") != std::string::npos);
  CHECK(csv.find("7,0,das,0.01,0.5,3\n") != std::string::npos);

  LdsReport r;
  r.method = "das";
  r.lambda = 0.01;
  r.per_target = {0.5, 0.25};
  r.degenerate = {0, 0};
  r.summary = summarize(r.per_target);
  const std::string lds = lds_csv({r});
  CHECK(lds.rfind("method,lambda,mean_lds,std,sem,targets,degenerate\n", 0) == 0);
  CHECK(lds.find("das,0.01,0.375,") != std::string::npos);
  const std::string svg = lds_svg({r}, "t");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
}
