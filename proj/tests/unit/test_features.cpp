#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "../common/oracles.hpp"
#include "das/ddpm/dataset.hpp"
#include "das/ddpm/objective.hpp"
#include "das/errors.hpp"
#include "das/features/features.hpp"
#include "das/features/projection.hpp"
#include "das/features/store.hpp"

using namespace das;
using namespace das::features;

namespace {

ddpm::NoisePredictor small_model(int d, std::uint64_t seed) {
  ddpm::NoisePredictor m(d, {6, 5}, 4);
  Rng rng(seed);
  m.params() = 0.4 * rng.normal_vector(m.num_params());
  return m;
}

ProjectionSpec spec(int k, std::uint64_t seed, bool identity = false, std::vector<std::uint8_t> mask = {}) {
  ProjectionSpec s;
  s.k = k;
  s.seed = seed;
  s.identity = identity;
  s.mask = std::move(mask);
  return s;
}

SampleFeatures manual(const std::vector<Eigen::MatrixXd>& blocks, const std::vector<Eigen::VectorXd>& resid) {
  SampleFeatures f;
  f.id = 3;
  for (std::size_t j = 0; j < blocks.size(); ++j) f.timesteps.push_back(static_cast<int>(j) + 1);
  f.blocks = blocks;
  f.residuals = resid;
  return f;
}

}  // namespace

TEST_CASE("projection identity mode is exact") {
  const auto P = make_projection(spec(30, 1, true), 30);
  Rng rng(2);
  const Eigen::VectorXd v = rng.normal_vector(30);
  CHECK(P.apply(v) == v);
}

TEST_CASE("projection is linear and deterministic") {
  const auto P = make_projection(spec(16, 5), 200);
  const auto Q = make_projection(spec(16, 5), 200);
  Rng rng(3);
  const Eigen::VectorXd u = rng.normal_vector(200), v = rng.normal_vector(200);
  CHECK(P.apply(u) == Q.apply(u));
  const Eigen::VectorXd lhs = P.apply(Eigen::VectorXd(2.5 * u - 1.5 * v));
  const Eigen::VectorXd rhs = 2.5 * P.apply(u) - 1.5 * P.apply(v);
  CHECK((lhs - rhs).norm() <= 1e-12 * rhs.norm());
  const auto R = make_projection(spec(16, 6), 200);
  CHECK_FALSE(R.apply(u) == P.apply(u));
  // A block regenerates the same entries as the full sketch.
  CHECK((P.block(40, 10) * 1.0 - P.block(0, 200).middleRows(40, 10)).norm() == 0.0);
}

TEST_CASE("projection honours the parameter mask") {
  std::vector<std::uint8_t> mask(50, 0);
  for (int i = 10; i < 30; ++i) mask[i] = 1;
  const auto P = make_projection(spec(8, 1, false, mask), 50);
  CHECK(P.effective_dim() == 20);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(50);
  v.head(10).setOnes();
  v.tail(20).setOnes();
  CHECK(P.apply(v).norm() == 0.0);
}

TEST_CASE("projection validation") {
  CHECK_THROWS_AS(make_projection(spec(0, 0), 10), ParameterError);
  CHECK_THROWS_AS(make_projection(spec(11, 0), 10), ParameterError);
  CHECK_THROWS_AS(make_projection(spec(5, 0, true), 10),
                  ParameterError);
  CHECK_THROWS_AS(make_projection(spec(2, 0, false, {1, 1}), 10),
                  ParameterError);
}

TEST_CASE("feature mode names round trip") {
  for (const char* name : {"jacobian", "loss", "square-norm", "output-sum", "output-mean"}) {
    CHECK(to_string(parse_feature_mode(name)) == name);
  }
  CHECK_THROWS_AS(parse_feature_mode("hessian"), ParameterError);
}

TEST_CASE("feature blocks follow their definitions") {
  const auto s = ddpm::make_linear_schedule(1000, 1e-4, 0.02);
  const auto m = small_model(3, 1);
  const auto P = make_projection(spec(12, 4), m.num_params());
  Rng rng(5);
  const Eigen::VectorXd x0 = rng.normal_vector(3), eps = rng.normal_vector(3);
  const int t = 200;
  const Eigen::VectorXd xt = ddpm::forward_noise(x0, t, eps, s);
  const Eigen::MatrixXd J = ddpm::output_jacobian(m, x0, t, eps, s);
  const Eigen::VectorXd out = m.forward(xt, t);
  const Eigen::MatrixXd Pd = P.dense();

  Eigen::VectorXd r;
  const Eigen::MatrixXd gj = feature_block(m, xt, t, eps, kJacobianMode, P, &r);
  CHECK(oracle::rel_err(gj, J * Pd) < 1e-12);
  CHECK((r - (out - eps)).norm() < 1e-14);

  const Eigen::MatrixXd gl = feature_block(m, xt, t, eps, kLossGradientMode, P);
  CHECK(oracle::rel_err(gl, (2 * J.transpose() * (out - eps)).transpose() * Pd) < 1e-12);
  const Eigen::MatrixXd gs = feature_block(m, xt, t, eps, {FeatureKind::kScalarizedGradient, Scalarizer::kSquareNorm}, P);
  CHECK(oracle::rel_err(gs, (2 * J.transpose() * out).transpose() * Pd) < 1e-12);
  const Eigen::MatrixXd go = feature_block(m, xt, t, eps, {FeatureKind::kScalarizedGradient, Scalarizer::kOutputSum}, P);
  CHECK(oracle::rel_err(go, J.colwise().sum() * Pd) < 1e-12);
  const Eigen::MatrixXd gm = feature_block(m, xt, t, eps, {FeatureKind::kScalarizedGradient, Scalarizer::kOutputMean}, P);
  CHECK(oracle::rel_err(gm, J.colwise().mean() * Pd) < 1e-12);
}

TEST_CASE("zero-residual rig gives zero residuals") {
  // Noise-only latents (x0 = 0) and a skip term with vanishing data variance:
  // the prediction is x_t / sqrt(1 - ab_t) = eps.
  const auto s = ddpm::make_linear_schedule(1000, 1e-4, 0.02);
  ddpm::NoisePredictor m(2, {4}, 4);
  m.params().setZero();
  m.set_skip(s, 1e-300);
  ddpm::Dataset data{"zeros", 2, {}};
  for (int i = 0; i < 5; ++i) data.points.push_back({i, Eigen::VectorXd::Zero(2), 0});
  const auto P = make_projection(spec(8, 1), m.num_params());
  const auto fs = extract_features(m, s, data, timestep_grid(1000, 10), kJacobianMode, P);
  for (const auto& f : fs)
    for (const auto& r : f.residuals) CHECK(r.norm() < 1e-12);
}

TEST_CASE("scalar output collapses the feature modes") {
  const auto s = ddpm::make_linear_schedule(1000, 1e-4, 0.02);
  const auto m = small_model(1, 2);
  ddpm::Dataset data{"line", 1, {}};
  Rng rng(1);
  for (int i = 0; i < 6; ++i) data.points.push_back({i, rng.normal_vector(1), 0});
  const auto P = make_projection(spec(10, 3), m.num_params());
  const auto ts = timestep_grid(1000, 4);
  const auto a = extract_features(m, s, data, ts, kJacobianMode, P);
  const auto b = extract_features(m, s, data, ts, {FeatureKind::kScalarizedGradient, Scalarizer::kOutputSum}, P);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < ts.size(); ++j) {
      CHECK((a[i].blocks[j] - b[i].blocks[j]).norm() <= 1e-14 * (1 + a[i].blocks[j].norm()));
      CHECK(a[i].residuals[j] == b[i].residuals[j]);
    }
  }
}

TEST_CASE("extraction is deterministic and independent of jobs and subsets") {
  const auto s = ddpm::make_linear_schedule(1000, 1e-4, 0.02);
  const auto m = small_model(2, 3);
  const auto data = ddpm::make_gauss2(12, 4);
  const auto P = make_projection(spec(16, 2), m.num_params());
  const auto ts = timestep_grid(1000, 10);
  ExtractOptions o;
  o.noise_seed = 9;
  o.draws_per_timestep = 2;
  const auto a = extract_features(m, s, data, ts, kJacobianMode, P, o);
  o.jobs = 3;
  const auto b = extract_features(m, s, data, ts, kJacobianMode, P, o);
  REQUIRE(a.size() == 12);
  CHECK(a[0].timesteps.size() == 20);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  std::vector<std::uint8_t> mask(12, 0);
  mask[7] = 1;
  const auto c = extract_features(m, s, ddpm::select(data, mask), ts, kJacobianMode, P, o);
  CHECK(c[0] == a[7]);
}

TEST_CASE("extraction validates its inputs") {
  const auto s = ddpm::make_linear_schedule(100, 1e-4, 0.02);
  const auto m = small_model(2, 3);
  const auto data = ddpm::make_gauss2(4, 4);
  const auto P = make_projection(spec(4, 2), m.num_params());
  CHECK_THROWS_AS(extract_features(m, s, data, {0}, kJacobianMode, P), ParameterError);
  CHECK_THROWS_AS(extract_features(m, s, data, {101}, kJacobianMode, P), ParameterError);
  ExtractOptions tiny;
  tiny.memory_budget = 64;
  CHECK_THROWS_AS(extract_features(m, s, data, {1, 50}, kJacobianMode, P, tiny), CapacityError);
}

TEST_CASE("normalized averaging") {
  Eigen::MatrixXd g(1, 3);
  g << 0.5, 2.0, 7.0;
  Eigen::VectorXd r(2);
  r << 1.0, 3.0;
  auto one = normalize_and_average(manual({g}, {r}));
  CHECK(one.normalized);
  CHECK(one.g == Eigen::MatrixXd::Ones(1, 3));
  CHECK(one.r == Eigen::VectorXd::Ones(2));

  Eigen::MatrixXd h(2, 2);
  h << 1.5, -2.0, 0.0, 4.0;
  const auto c = normalize_and_average(manual({h, h, h, h}, {r, r, r, r}));
  Eigen::MatrixXd want(2, 2);
  want << 0.5, -0.5, 0.0, 0.5;  // sign / sqrt(4)
  CHECK((c.g - want).norm() < 1e-15);

  const auto z = normalize_and_average(manual({Eigen::MatrixXd::Zero(2, 2)}, {Eigen::VectorXd::Zero(2)}));
  CHECK(z.g.norm() == 0.0);
  CHECK(z.r.norm() == 0.0);

  // Hand evaluation for two timesteps: (3, 4) -> (3 + 4) / 5 / 2.
  Eigen::MatrixXd a(1, 1), b(1, 1);
  a << 3.0;
  b << 4.0;
  CHECK(normalize_and_average(manual({a, b}, {r, r})).g(0, 0) == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("normalized averaging is scale invariant") {
  Rng rng(4);
  std::vector<Eigen::MatrixXd> blocks;
  std::vector<Eigen::VectorXd> resid;
  for (int j = 0; j < 5; ++j) {
    blocks.push_back(oracle::random_matrix(rng, 2, 6));
    resid.push_back(rng.normal_vector(2));
  }
  const auto base = normalize_and_average(manual(blocks, resid));
  for (auto& b : blocks) b *= 37.5;
  const auto scaled = normalize_and_average(manual(blocks, resid));
  CHECK((base.g - scaled.g).norm() < 1e-14);
}

TEST_CASE("plain averaging") {
  Rng rng(6);
  const Eigen::MatrixXd g = oracle::random_matrix(rng, 2, 3);
  const Eigen::VectorXd r = rng.normal_vector(2);
  const auto one = plain_average(manual({g}, {r}));
  CHECK_FALSE(one.normalized);
  CHECK(one.g == g);
  CHECK(one.r == r);
  CHECK(plain_average(manual({g, Eigen::MatrixXd(-g)}, {r, Eigen::VectorXd(-r)})).g.norm() == 0.0);
  CHECK((plain_average(manual({g, g, g}, {r, r, r})).g - g).norm() < 1e-15);
}

TEST_CASE("select entries") {
  Rng rng(1);
  const auto f = manual({oracle::random_matrix(rng, 1, 2), oracle::random_matrix(rng, 1, 2)},
                        {rng.normal_vector(2), rng.normal_vector(2)});
  const auto s = select_entries(f, {1});
  CHECK(s.timesteps == std::vector<int>{2});
  CHECK(s.blocks[0] == f.blocks[1]);
  CHECK_THROWS_AS(select_entries(f, {2}), IndexError);
}

namespace {

FeatureStore random_store(int samples) {
  FeatureStore st;
  st.mode = kJacobianMode;
  st.k = 5;
  st.d = 3;
  st.timesteps = {1, 500, 1000};
  Rng rng(samples);
  for (int i = 0; i < samples; ++i) {
    SampleFeatures f;
    f.id = 10 + i;
    f.timesteps = st.timesteps;
    for (std::size_t j = 0; j < st.timesteps.size(); ++j) {
      f.blocks.push_back(oracle::random_matrix(rng, 3, 5));
      f.residuals.push_back(rng.normal_vector(3));
    }
    st.samples.push_back(f);
  }
  return st;
}

}  // namespace

TEST_CASE("feature store round trip") {
  const auto st = random_store(4);
  const auto bytes = encode_store(st);
  CHECK(bytes.substr(0, 4) == "DASF");
  const auto back = decode_store(bytes);
  CHECK(back.mode == st.mode);
  CHECK(back.k == 5);
  CHECK(back.d == 3);
  CHECK(back.timesteps == st.timesteps);
  REQUIRE(back.samples.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(back.samples[i] == st.samples[i]);
  CHECK(encode_store(back) == bytes);
  CHECK(store_fingerprint(back) == store_fingerprint(st));

  const auto path = std::filesystem::temp_directory_path() / "das_unit_store.dasf";
  store_write(path, st);
  CHECK(encode_store(store_read(path)) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("feature store errors and empty store") {
  const auto bytes = encode_store(random_store(3));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(decode_store(bytes.substr(0, cut)), FormatError);
  }
  std::string bad = bytes;
  bad[1] = 'Z';
  CHECK_THROWS_AS(decode_store(bad), FormatError);
  std::string version = bytes;
  version[4] = 9;
  CHECK_THROWS_AS(decode_store(version), FormatError);
  CHECK_THROWS_AS(decode_store(bytes + "x"), FormatError);

  const auto empty = random_store(0);
  const auto back = decode_store(encode_store(empty));
  CHECK(back.samples.empty());
  CHECK(back.timesteps == empty.timesteps);
}
