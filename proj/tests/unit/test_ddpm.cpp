#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "../common/oracles.hpp"
#include "das/binary_io.hpp"
#include "das/ddpm/dataset.hpp"
#include "das/ddpm/model_io.hpp"
#include "das/ddpm/objective.hpp"
#include "das/ddpm/sampler.hpp"
#include "das/ddpm/schedule.hpp"
#include "das/ddpm/train.hpp"
#include "das/errors.hpp"

using namespace das;
using namespace das::ddpm;

namespace {

NoisePredictor random_model(int d, std::vector<int> hidden, std::uint64_t seed, double scale = 1.0) {
  NoisePredictor m(d, std::move(hidden), 4);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < m.num_params(); ++i) m.params()[i] = scale * rng.normal() * 0.5;
  return m;
}

// Output equals b for the last layer when every weight is zero; point b at eps.
NoisePredictor echo_model(const Eigen::VectorXd& eps) {
  NoisePredictor m(static_cast<int>(eps.size()), {}, 4);
  m.params().setZero();
  m.params().segment(m.layers().back().bias_offset, eps.size()) = eps;
  return m;
}

}  // namespace

TEST_CASE("linear schedule endpoints and interpolation") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  CHECK(s.num_timesteps() == 1000);
  CHECK(s.beta(1) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(s.beta(1000) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9999).epsilon(1e-15));
  // 1e-4 + (499/999)(0.02 - 1e-4), evaluated independently.
  CHECK(std::abs(s.beta(500) - 0.01004004004004004) < 1e-15);
  for (int t = 2; t <= 1000; ++t) REQUIRE(s.alpha_bar(t) < s.alpha_bar(t - 1));
  // sqrt(alpha_bar_1000) = 0.0063528180875700...
  CHECK(std::sqrt(s.alpha_bar(1000)) == doctest::Approx(0.006352818087570016).epsilon(1e-9));
  CHECK(std::sqrt(s.alpha_bar(1000)) < 0.01);
}

TEST_CASE("single-step schedule") {
  const auto s = make_linear_schedule(1, 0.5, 0.5);
  CHECK(s.betas() == std::vector<double>{0.5});
  CHECK(s.alpha_bars() == std::vector<double>{0.5});
}

TEST_CASE("schedule rejects invalid ranges") {
  CHECK_THROWS_AS(make_linear_schedule(0, 1e-4, 0.02), ParameterError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.02), ParameterError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.03, 0.02), ParameterError);
  CHECK_THROWS_AS(make_linear_schedule(10, 1e-4, 1.0), ParameterError);
}

TEST_CASE("timestep grid") {
  const auto g = timestep_grid(1000, 10);
  REQUIRE(g.size() == 10);
  CHECK(g.front() == 1);
  CHECK(g.back() == 1000);
  for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] > g[i - 1]);
  CHECK(timestep_grid(1000, 1) == std::vector<int>{500});
  CHECK(timestep_grid(5, 5) == std::vector<int>{1, 2, 3, 4, 5});
  CHECK_THROWS_AS(timestep_grid(5, 6), ParameterError);
  CHECK_THROWS_AS(timestep_grid(5, 0), ParameterError);
}

TEST_CASE("forward noise cases") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  Eigen::VectorXd x0(3);
  x0 << 1.0, -2.0, 0.5;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  CHECK((forward_noise(x0, 300, zero, s) - std::sqrt(s.alpha_bar(300)) * x0).norm() == 0.0);
  Eigen::VectorXd e1 = Eigen::VectorXd::Unit(3, 0);
  CHECK((forward_noise(zero, 300, e1, s) - std::sqrt(1 - s.alpha_bar(300)) * e1).norm() == 0.0);
  CHECK_THROWS_AS(forward_noise(x0, 300, Eigen::VectorXd::Zero(2), s), ShapeError);
}

TEST_CASE("forward noise marginal over many draws") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  Eigen::VectorXd x0(2);
  x0 << 1.5, -0.7;
  const int t = 300, n = 10000;
  Rng rng(11);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(2), sq = Eigen::VectorXd::Zero(2);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd x = forward_noise(x0, t, rng.normal_vector(2), s);
    sum += x;
    sq += x.cwiseProduct(x);
  }
  const Eigen::VectorXd mean = sum / n;
  const Eigen::VectorXd var = sq / n - mean.cwiseProduct(mean);
  const double v = 1 - s.alpha_bar(t);
  const double se_mean = std::sqrt(v / n);
  const double se_var = v * std::sqrt(2.0 / (n - 1));
  for (int c = 0; c < 2; ++c) {
    CHECK(std::abs(mean[c] - std::sqrt(s.alpha_bar(t)) * x0[c]) < 3 * se_mean);
    CHECK(std::abs(var[c] - v) < 3 * se_var);
  }
}

TEST_CASE("predictor shape and zero parameters") {
  NoisePredictor m(3, {5, 4}, 8);
  CHECK(m.num_params() == (11 * 5 + 5) + (5 * 4 + 4) + (4 * 3 + 3));
  CHECK(m.layer_sizes() == std::vector<int>{11, 5, 4, 3});
  m.params().setZero();
  Eigen::VectorXd x(3);
  x << 0.3, -1.0, 2.0;
  CHECK(m.forward(x, 17).norm() == 0.0);
  CHECK_THROWS_AS(m.forward(Eigen::VectorXd::Zero(2), 1), ShapeError);
  CHECK_THROWS_AS(NoisePredictor(2, {4}, 3), ParameterError);
}

TEST_CASE("predictor is deterministic and batch-consistent") {
  const auto m = random_model(3, {6, 6}, 3);
  Eigen::MatrixXd X(3, 4);
  Rng rng(4);
  X = oracle::random_matrix(rng, 3, 4);
  const std::vector<int> ts = {1, 10, 500, 1000};
  const Eigen::MatrixXd batch = m.forward_batch(X, ts);
  for (int b = 0; b < 4; ++b) {
    const Eigen::VectorXd a = m.forward(X.col(b), ts[b]);
    CHECK(a == m.forward(X.col(b), ts[b]));
    CHECK((batch.col(b) - a).norm() < 1e-14);
  }
}

TEST_CASE("skip term adds c(t) x_t") {
  const auto s = make_linear_schedule(100, 1e-4, 0.02);
  auto m = random_model(2, {4}, 5);
  Eigen::VectorXd x(2);
  x << 0.4, -0.9;
  const Eigen::VectorXd plain = m.forward(x, 40);
  m.set_skip(s, 0.1);
  REQUIRE(m.has_skip());
  const double ab = s.alpha_bar(40);
  const double c = std::sqrt(1 - ab) / (ab * 0.1 + 1 - ab);
  CHECK(m.skip_coefficient(40) == doctest::Approx(c).epsilon(1e-14));
  CHECK((m.forward(x, 40) - plain - c * x).norm() < 1e-14);
  CHECK_THROWS_AS(m.skip_coefficient(0), ParameterError);
  CHECK_THROWS_AS(m.skip_coefficient(101), ParameterError);
  m.set_skip(s, 0.0);
  CHECK_FALSE(m.has_skip());
  CHECK(m.forward(x, 40) == plain);
}

TEST_CASE("simple loss cases") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  Eigen::VectorXd x0(2), eps(2);
  x0 << 0.3, -0.2;
  eps << 0.7, 1.1;
  const auto echo = echo_model(eps);
  CHECK(simple_loss(echo, x0, 250, eps, s) == 0.0);
  CHECK(loss_gradient(echo, x0, 250, eps, s).norm() == 0.0);

  NoisePredictor zero(2, {3}, 4);
  zero.params().setZero();
  CHECK(simple_loss(zero, x0, 250, Eigen::VectorXd::Unit(2, 0), s) == 1.0);

  const auto m = random_model(2, {5, 5}, 9);
  const Eigen::VectorXd xt = forward_noise(x0, 250, eps, s);
  const Eigen::VectorXd out = m.forward(xt, 250);
  double expected = 0;
  for (int c = 0; c < 2; ++c) expected += (out[c] - eps[c]) * (out[c] - eps[c]);
  CHECK(simple_loss(m, x0, 250, eps, s) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("one-layer linear gradient matches the closed form") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  NoisePredictor m(3, {}, 4);
  Rng rng(21);
  m.params() = rng.normal_vector(m.num_params());
  const Eigen::VectorXd x0 = rng.normal_vector(3), eps = rng.normal_vector(3);
  const int t = 77;
  Eigen::VectorXd z(7);
  z << forward_noise(x0, t, eps, s), timestep_embedding(t, 4);
  Eigen::MatrixXd W(3, 7);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 7; ++c) W(r, c) = m.params()[r * 7 + c];
  const Eigen::VectorXd b = m.params().segment(21, 3);
  const Eigen::VectorXd resid = W * z + b - eps;
  const Eigen::MatrixXd gW = 2 * resid * z.transpose();
  const Eigen::VectorXd g = loss_gradient(m, x0, t, eps, s);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 7; ++c) CHECK(g[r * 7 + c] == doctest::Approx(gW(r, c)).epsilon(1e-12));
    CHECK(g[21 + r] == doctest::Approx(2 * resid[r]).epsilon(1e-12));
  }
}

TEST_CASE("gradients agree with finite differences") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto m = random_model(3, {6, 5}, 100 + seed);
    if (seed == 2) m.set_skip(s, 0.2);
    Rng rng(200 + seed);
    const Eigen::VectorXd x0 = rng.normal_vector(3), eps = rng.normal_vector(3);
    const int t = 1 + static_cast<int>(seed) * 300;
    const Eigen::VectorXd g = loss_gradient(m, x0, t, eps, s);
    const Eigen::MatrixXd J = output_jacobian(m, x0, t, eps, s);
    const Eigen::VectorXd xt = forward_noise(x0, t, eps, s);
    for (int k = 0; k < 20; ++k) {
      const Eigen::Index c = rng.uniform_int(0, m.num_params() - 1);
      CHECK(oracle::fd_err(g[c], oracle::fd_loss(m, x0, t, eps, s, c, 1e-5)) < 1e-4);
      const Eigen::VectorXd col = oracle::fd_output(m, xt, t, c, 1e-5);
      for (int r = 0; r < 3; ++r) CHECK(oracle::fd_err(J(r, c), col[r]) < 1e-4);
    }
    const Eigen::VectorXd resid = m.forward(xt, t) - eps;
    CHECK(oracle::rel_err(2 * J.transpose() * resid, g) < 1e-10);
  }
}

TEST_CASE("jacobian bias block and scalar output") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  NoisePredictor m(3, {4}, 4);
  m.params().setZero();
  const Eigen::VectorXd x0 = Eigen::VectorXd::Ones(3), eps = Eigen::VectorXd::Zero(3);
  const Eigen::MatrixXd J = output_jacobian(m, x0, 10, eps, s);
  const auto off = m.layers().back().bias_offset;
  CHECK(J.middleCols(off, 3) == Eigen::MatrixXd::Identity(3, 3));

  auto m1 = random_model(1, {5}, 8);
  Eigen::VectorXd a(1), e(1);
  a << 0.5;
  e << -0.3;
  const Eigen::MatrixXd J1 = output_jacobian(m1, a, 400, e, s);
  REQUIRE(J1.rows() == 1);
  const Eigen::VectorXd xt = forward_noise(a, 400, e, s);
  for (Eigen::Index c = 0; c < m1.num_params(); ++c) {
    CHECK(oracle::fd_err(J1(0, c), oracle::fd_output(m1, xt, 400, c, 1e-5)[0]) < 1e-4);
  }
}

TEST_CASE("datasets") {
  const auto g = make_gauss2(200, 7);
  CHECK(g.size() == 200);
  CHECK(g.dim == 2);
  CHECK(make_gauss2(200, 7).points[13].x0 == g.points[13].x0);
  const auto b = make_blobs8(200, 1);
  CHECK(b.dim == 64);
  CHECK(b.points[5].x0.size() == 64);
  CHECK_THROWS_AS(make_dataset("nope", 10, 0), ParameterError);
  for (const auto& p : g.points) CHECK(p.x0.allFinite());

  const auto dir = std::filesystem::temp_directory_path() / "das_unit_data";
  std::filesystem::create_directories(dir);
  write_dataset_csv(b, dir / "b.csv");
  const auto back = read_dataset_csv(dir / "b.csv");
  REQUIRE(back.size() == b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    CHECK(back.points[i].x0 == b.points[i].x0);
    CHECK(back.points[i].id == b.points[i].id);
    CHECK(back.points[i].label == b.points[i].label);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("training is deterministic and reduces the loss") {
  const auto data = make_gauss2(200, 0);
  auto cfg = default_train_config("gauss2");
  const auto schedule = cfg.schedule();
  const auto init = initial_model(2, cfg);
  const auto a = train(data, cfg);
  const auto b = train(data, cfg);
  CHECK(a.model == b.model);
  const double before = mean_simple_loss(init, data, schedule, 5);
  const double after = mean_simple_loss(a.model, data, schedule, 5);
  CHECK(after < before);

  cfg.epochs = 0;
  CHECK(train(data, cfg).model == init);
  CHECK_THROWS_AS(default_train_config("nope"), ParameterError);
}

TEST_CASE("training keeps evenly spaced checkpoints") {
  const auto data = make_gauss2(40, 0);
  auto cfg = default_train_config("gauss2");
  cfg.epochs = 20;
  cfg.num_checkpoints = 4;
  const auto r = train(data, cfg);
  REQUIRE(r.checkpoints.size() == 4);
  CHECK(r.checkpoints.back() == r.model);
  CHECK_FALSE(r.checkpoints.front() == r.model);
}

TEST_CASE("training divergence names the step") {
  const auto data = make_gauss2(40, 0);
  auto cfg = default_train_config("gauss2");
  cfg.optimizer = Optimizer::kSgd;
  cfg.learning_rate = 1e6;
  cfg.epochs = 50;
  CHECK_THROWS_AS(train(data, cfg), TrainingDivergedError);
}

TEST_CASE("sampler") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  const auto m = random_model(2, {6}, 3, 0.3);
  const auto a = sample(m, s, 50, 9);
  const auto b = sample(m, s, 50, 9);
  CHECK(a.x0 == b.x0);
  CHECK(a.trajectory.size() == 50);
  CHECK(a.trajectory.front().t == 1000);
  const auto other = random_model(2, {6}, 4, 0.3);
  CHECK((sample(other, s, 50, 9).x0 - a.x0).norm() > 0.0);
  const auto full = sample(m, s, 1000, 9);
  CHECK(full.trajectory.size() == 1000);
  CHECK(full.x0.allFinite());
  CHECK(initial_latent(2, 9) == a.trajectory.front().x_t);
}

TEST_CASE("model file round trip and corruption") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  auto m = random_model(3, {5, 4}, 12);
  m.set_skip(s, 0.1);
  const std::string bytes = encode_model(m, s);
  CHECK(bytes.substr(0, 4) == "DAS1");
  const auto back = decode_model(bytes);
  CHECK(back.model == m);
  CHECK(back.schedule.betas() == s.betas());
  CHECK(encode_model(back.model, back.schedule) == bytes);
  CHECK_THROWS_AS(decode_model(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(decode_model(bytes.substr(0, 10)), FormatError);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_model(bad), FormatError);
}
