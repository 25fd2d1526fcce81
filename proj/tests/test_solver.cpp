#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pirate/solver.hpp"
#include "support.hpp"

using namespace pirate;

TEST_CASE("step schedule endpoints and midpoint") {
  StepSchedule s{2.0, 100, StepSchedule::Mode::cosine};
  CHECK(step_size(s, 0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(step_size(s, 100) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(step_size(s, 50) == doctest::Approx(1.0).epsilon(1e-12));

  StepSchedule fixed{2.0, 100, StepSchedule::Mode::fixed};
  CHECK(step_size(fixed, 0) == 2.0);
  CHECK(step_size(fixed, 100) == 2.0);

  CHECK_THROWS_AS(step_size(s, -1), std::out_of_range);
  CHECK_THROWS_AS(step_size(s, 101), std::out_of_range);
}

TEST_CASE("cosine schedule is monotone non-increasing") {
  StepSchedule s{1.0, 37, StepSchedule::Mode::cosine};
  double prev = step_size(s, 0);
  for (int t = 1; t <= 37; ++t) {
    const double g = step_size(s, t);
    CHECK(g <= prev + 1e-15);
    prev = g;
  }
}

TEST_CASE("fixed point of the identity returns immediately") {
  AndersonConfig cfg;
  auto identity = [](const std::vector<double>& x) { return x; };
  FixedPointResult r =
      fixed_point(identity, std::vector<double>{1.0, -2.0, 3.0}, cfg);
  CHECK(r.converged);
  CHECK(r.iterations == 1);
  REQUIRE(r.residual_history.size() == 1);
  CHECK(r.residual_history[0] == 0.0);
  CHECK(r.state == std::vector<double>{1.0, -2.0, 3.0});
}

namespace {

// Random 8x8 affine contraction x -> Ax + b with spectral radius ~0.5.
struct AffineMap {
  std::vector<double> a;  // row-major 8x8
  std::vector<double> b;

  std::vector<double> operator()(const std::vector<double>& x) const {
    std::vector<double> y(8, 0.0);
    for (int i = 0; i < 8; ++i) {
      double acc = b[i];
      for (int j = 0; j < 8; ++j) acc += a[i * 8 + j] * x[j];
      y[i] = acc;
    }
    return y;
  }
};

AffineMap make_contraction(std::uint64_t seed) {
  pirate::Rng rng(seed);
  AffineMap map;
  map.a.resize(64);
  map.b.resize(8);
  for (auto& v : map.a) v = rng.uniform(-1.0, 1.0);
  for (auto& v : map.b) v = rng.uniform(-1.0, 1.0);
  // Estimate the spectral radius by power iteration and rescale to 0.5.
  std::vector<double> x(8, 1.0);
  double norm = 1.0;
  for (int it = 0; it < 200; ++it) {
    std::vector<double> y(8, 0.0);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) y[i] += map.a[i * 8 + j] * x[j];
    norm = testsupport::l2_norm(y);
    for (int i = 0; i < 8; ++i) x[i] = y[i] / norm;
  }
  for (auto& v : map.a) v *= 0.5 / norm;
  return map;
}

// Closed-form fixed point (I - A)^{-1} b by Gaussian elimination.
std::vector<double> closed_form_fixed_point(const AffineMap& map) {
  std::vector<double> m(64);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      m[i * 8 + j] = (i == j ? 1.0 : 0.0) - map.a[i * 8 + j];
  std::vector<double> rhs = map.b;
  for (int col = 0; col < 8; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 8; ++r)
      if (std::abs(m[r * 8 + col]) > std::abs(m[pivot * 8 + col])) pivot = r;
    for (int c = 0; c < 8; ++c) std::swap(m[col * 8 + c], m[pivot * 8 + c]);
    std::swap(rhs[col], rhs[pivot]);
    for (int r = col + 1; r < 8; ++r) {
      const double factor = m[r * 8 + col] / m[col * 8 + col];
      for (int c = col; c < 8; ++c) m[r * 8 + c] -= factor * m[col * 8 + c];
      rhs[r] -= factor * rhs[col];
    }
  }
  std::vector<double> x(8);
  for (int r = 7; r >= 0; --r) {
    double acc = rhs[r];
    for (int c = r + 1; c < 8; ++c) acc -= m[r * 8 + c] * x[c];
    x[r] = acc / m[r * 8 + r];
  }
  return x;
}

}  // namespace

TEST_CASE("anderson reaches the affine fixed point at least as fast as plain") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    AffineMap map = make_contraction(seed);
    const std::vector<double> expected = closed_form_fixed_point(map);

    AndersonConfig cfg;
    cfg.tolerance = 1e-8;
    cfg.max_iters = 200;
    std::vector<double> x0(8, 0.0);

    FixedPointResult plain = fixed_point(map, x0, cfg, FixedPointMode::plain);
    FixedPointResult anderson = fixed_point(map, x0, cfg, FixedPointMode::anderson);

    CHECK(plain.converged);
    CHECK(anderson.converged);
    CHECK(anderson.iterations <= plain.iterations);
    for (int i = 0; i < 8; ++i) {
      CHECK(std::abs(plain.state[i] - expected[i]) < 1e-6);
      CHECK(std::abs(anderson.state[i] - expected[i]) < 1e-6);
    }
  }
}

TEST_CASE("divergent operators raise the divergence flag") {
  auto blowup = [](const std::vector<double>& x) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = 10.0 * x[i] + 1.0;
    return y;
  };
  AndersonConfig cfg;
  cfg.max_iters = 500;
  FixedPointResult r =
      fixed_point(blowup, std::vector<double>{1.0, 1.0}, cfg, FixedPointMode::plain);
  CHECK(r.diverged);
  CHECK_FALSE(r.converged);
  CHECK(all_finite(r.state));
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  AdamState state;
  std::vector<double> params{1.0, -2.0};
  std::vector<double> grads{0.0, 0.0};
  adam_step(state, params, grads, 0.1);
  adam_step(state, params, grads, 0.1);
  CHECK(params == std::vector<double>{1.0, -2.0});
  CHECK(state.step == 2);
}

TEST_CASE("one adam step from zero state matches the hand-evaluated update") {
  // With g = 1, lr = 0.1 and zero state: m_hat = 1, v_hat = 1, so the
  // parameter moves by -0.1 / (1 + eps).
  AdamState state;
  std::vector<double> params{0.0};
  std::vector<double> grads{1.0};
  adam_step(state, params, grads, 0.1);
  const double expected = -0.1 / (1.0 + 1e-8);
  CHECK(params[0] == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("adam trajectories are deterministic") {
  auto run = [] {
    AdamState state;
    std::vector<double> params{0.5, -0.5, 2.0};
    pirate::Rng rng(77);
    for (int i = 0; i < 50; ++i) {
      std::vector<double> grads{rng.uniform(-1, 1), rng.uniform(-1, 1),
                                rng.uniform(-1, 1)};
      adam_step(state, params, grads, 0.01);
    }
    return params;
  };
  CHECK(run() == run());
}

TEST_CASE("adam rejects non-finite gradients") {
  AdamState state;
  std::vector<double> params{1.0};
  std::vector<double> grads{std::nan("")};
  CHECK_THROWS_AS(adam_step(state, params, grads, 0.1), divergence_error);
}

TEST_CASE("residual history export") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "pirate_tests" / "solver_csv";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_residual_csv(dir / "r.csv", {0.5, 0.25, 0.125}, {3.0, 2.0, 1.0});
  std::ifstream in(dir / "r.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "iteration,residual,objective");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 3);
}
