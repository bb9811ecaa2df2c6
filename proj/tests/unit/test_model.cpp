#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "fixtures.hpp"
#include "mfergodic/errors.hpp"
#include "mfergodic/model.hpp"

using namespace mfergodic;
using fixtures::json;

TEST_CASE("pure OU margin: gamma = eta = 2") {
  const auto spec = fixtures::linear_1d(-2.0, 0.5, fixtures::cos_term());
  const auto r = dissipativity_margin(spec);
  CHECK(*r.gamma == doctest::Approx(2.0));
  CHECK(r.eta == doctest::Approx(2.0));
  CHECK(r.passed);
}

TEST_CASE("expanding drift fails") {
  const auto spec = fixtures::linear_1d(1.0, 1.0, fixtures::cos_term());
  const auto r = dissipativity_margin(spec);
  CHECK(r.eta == doctest::Approx(-1.0));
  CHECK_FALSE(r.passed);
  CHECK_FALSE(sample_check_dissipativity(spec, 64, 8, 1).passed);
}

TEST_CASE("mean-field OU: eta = theta - kappa, K from the moment bound") {
  // B = -1.5, Bbar = 0.5, s0 = 1: gamma = 1.5, L_bmu = 0.5, M = 1.
  const auto spec = fixtures::linear_1d(-1.5, 1.0, fixtures::cos_term(), 0.5);
  const auto r = dissipativity_margin(spec);
  CHECK(r.eta == doctest::Approx(1.0));
  CHECK(r.K == doctest::Approx(2.0));
}

TEST_CASE("state-dependent noise enters gamma through S^T S / 2") {
  json j{{"dim", 2},
         {"drift", {{"B", {{-1.0, 2.0}, {0.0, -1.0}}}}},
         {"diffusion", {{"s0", {1.0, 1.0}}, {"S", {{0.5, 0.0}, {0.0, 0.0}}}, {"Sbar", {{0.0, 0.0}, {0.0, 0.1}}}}},
         {"reward", {{"terms", json::array({fixtures::cos_term()})}}}};
  const auto spec = ModelSpec::from_json(j);
  // sym(B) + S^T S / 2 = [[-0.875, 1], [1, -1]]
  Eigen::Matrix2d Q;
  Q << -0.875, 1.0, 1.0, -1.0;
  const double gamma = -Q.selfadjointView<Eigen::Upper>().eigenvalues().maxCoeff();
  const auto r = dissipativity_margin(spec);
  CHECK(*r.gamma == doctest::Approx(gamma).epsilon(1e-13));
  CHECK(r.eta == doctest::Approx(gamma - (0.0 + 0.5 * 0.1 + 0.5 * 0.01)).epsilon(1e-13));
}

TEST_CASE("property: sampled dissipativity holds whenever the analytic margin is positive") {
  RngStream rng(42, 0);
  int positive = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t d = 1 + trial % 3;
    json s0 = json::array();
    for (std::size_t i = 0; i < d; ++i) s0.push_back(0.5 + rng.uniform());
    json j{{"dim", d},
           {"drift", {{"B", fixtures::random_matrix(rng, d, 0.4, -1.5)}, {"Bbar", fixtures::random_matrix(rng, d, 0.2, 0.0)}}},
           {"diffusion", {{"s0", s0}, {"S", fixtures::random_matrix(rng, d, 0.2, 0.0)}, {"Sbar", fixtures::random_matrix(rng, d, 0.1, 0.0)}}},
           {"reward", {{"terms", json::array({fixtures::cos_term()})}}}};
    const auto spec = ModelSpec::from_json(j);
    const auto analytic = dissipativity_margin(spec);
    if (!analytic.passed) continue;
    ++positive;
    const auto sampled = sample_check_dissipativity(spec, 200, 16, 1000 + trial);
    CHECK(sampled.violations == 0);
    CHECK(sampled.worst_violation <= 1e-10);
  }
  CHECK(positive > 10);
}

TEST_CASE("Lipschitz constants of the affine family") {
  const auto spec = fixtures::linear_1d(-1.0, 1.0, {{"shape", "tanh"}, {"amplitude", 2.0}, {"scale", 0.5}}, 0.3, 1.0,
                                        {{-1.0}, {0.0}, {2.0}});
  const auto c = lipschitz_constants(spec);
  CHECK(c.L_bx == doctest::Approx(1.0));
  CHECK(c.L_bmu == doctest::Approx(0.3));
  CHECK(c.M == doctest::Approx(2.0 + 1.0));  // max |G a| + |s0|
  CHECK(c.M_f == doctest::Approx(2.0));
  CHECK(c.L_f == doctest::Approx(4.0));  // amplitude / scale
}

TEST_CASE("reward shapes") {
  RewardTerm t;
  t.shape = RewardShape::ClippedQuadratic;
  t.param = 4.0;
  CHECK(t.value(1.5) == doctest::Approx(2.25));
  CHECK(t.value(-3.0) == doctest::Approx(4.0));
  CHECK(t.bound() == doctest::Approx(4.0));
  t.shape = RewardShape::Cosine;
  t.param = 2.0;
  t.center = 0.5;
  CHECK(t.value(0.5) == doctest::Approx(1.0));
  CHECK(t.lipschitz() == doctest::Approx(2.0));
}

TEST_CASE("action sets") {
  const auto box = ActionSet::box({-1.0}, {1.0}, 5);
  const auto grid = box.grid();
  REQUIRE(grid.size() == 5);
  CHECK(grid[1][0] == doctest::Approx(-0.5));
  std::vector<double> a{3.0};
  box.project(a);
  CHECK(a[0] == 1.0);
  const auto fin = ActionSet::finite({{-1.0}, {0.0}, {1.0}});
  a = {0.5};
  fin.project(a);  // tie between 0 and 1 goes to the lower index
  CHECK(a[0] == 0.0);
  CHECK(fin.contains(std::vector<double>{1.0}));
  CHECK_FALSE(fin.contains(std::vector<double>{0.3}));
  CHECK(ActionSet::from_json(box.to_json()).grid() == grid);
}

TEST_CASE("model JSON round trip") {
  const auto spec = fixtures::linear_1d(-1.0, 1.0, {{"shape", "gaussian_bump"}, {"width", 0.7}, {"on", "mean"}}, 0.2,
                                        1.0, {{-1.0}, {1.0}});
  const auto again = ModelSpec::from_json(spec.to_json());
  CHECK(again.to_json() == spec.to_json());
}

TEST_CASE("model errors name the key") {
  json j{{"dim", 2}, {"drift", {{"B", {{-1.0}}}}}, {"diffusion", {{"s0", {1.0, 1.0}}}}};
  CHECK_THROWS_WITH_AS(ModelSpec::from_json(j), doctest::Contains("B"), ConfigError);
  json k{{"dim", 1}, {"drift", {{"B", {{-1.0}}}}}, {"diffusion", {{"s0", {1.0}}}}, {"bogus", 1}};
  CHECK_THROWS_WITH_AS(ModelSpec::from_json(k), doctest::Contains("bogus"), ConfigError);
}

TEST_CASE("frozen model agrees with direct evaluation") {
  const auto spec = fixtures::linear_1d(-1.2, 0.8, fixtures::cos_term(), 0.4, 0.5, {{-1.0}, {1.0}});
  MeasureSummary mu{{0.7}, 1.3};
  const auto fm = spec.freeze(mu);
  const double x = -0.4, a = 1.0;
  double b1, b2, s1, s2;
  fm.drift(&x, &a, &b1);
  spec.drift(std::span<const double>(&x, 1), mu, std::span<const double>(&a, 1), std::span<double>(&b2, 1));
  fm.diffusion(&x, &a, &s1);
  spec.diffusion(std::span<const double>(&x, 1), mu, std::span<const double>(&a, 1), std::span<double>(&s2, 1));
  CHECK(b1 == doctest::Approx(-1.2 * x + 0.4 * 0.7 + 0.5));
  CHECK(b1 == b2);
  CHECK(s1 == s2);
  CHECK(fm.reward(&x, &a) == doctest::Approx(std::cos(x)));
}
