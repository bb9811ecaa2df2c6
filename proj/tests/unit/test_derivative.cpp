#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "mfergodic/derivative.hpp"
#include "mfergodic/errors.hpp"

using namespace mfergodic;

namespace {

Ensemble random_cloud(RngStream& rng, std::size_t n, std::size_t d = 1) {
  Ensemble e;
  e.dim = d;
  for (std::size_t i = 0; i < n * d; ++i) e.positions.push_back(1.5 * rng.normal() + 0.3);
  return e;
}

}  // namespace

TEST_CASE("property: quadratic moment functionals are differentiated exactly") {
  RngStream rng(8, 0);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 1 + trial % 2;
    const auto e = random_cloud(rng, 128, d);
    const double cm = rng.normal(), cs = rng.normal(), cq = rng.normal();
    const QuadraticMomentFunctional u(cm, cs, cq);
    const auto s = e.summary();
    for (double h : {1e-3, 1e-5}) {
      const auto f = lions_derivative(u, e, h);
      for (std::size_t i = 0; i < 128; ++i)
        for (std::size_t c = 0; c < d; ++c) {
          // d_mu u(x) = cm + 2 cs x + 2 cq m; d_x d_mu u = 2 cs (diagonal), plus the
          // self-interaction 2 cq / N of the lift.
          const double x = e.positions[i * d + c];
          CHECK(f.first(i, c) == doctest::Approx(cm + 2.0 * cs * x + 2.0 * cq * s.mean[c]).epsilon(1e-9));
          CHECK(f.second(i, c, c) == doctest::Approx(2.0 * cs + 2.0 * cq / 128.0).epsilon(1e-8));
        }
    }
  }
}

TEST_CASE("generic functional: O(h^2) on a cubic moment") {
  RngStream rng(9, 0);
  const auto e = random_cloud(rng, 64);
  const CallableFunctional u([](const Ensemble& en) {
    double s = 0.0;
    for (double x : en.positions) s += x * x * x;
    return s / static_cast<double>(en.size());
  });
  const auto f = lions_derivative(u, e, 1e-3);
  for (std::size_t i = 0; i < 64; ++i) {
    const double x = e.positions[i];
    CHECK(f.first(i) == doctest::Approx(3.0 * x * x).epsilon(1e-5));
    CHECK(f.second(i) == doctest::Approx(6.0 * x).epsilon(1e-4));
  }
}

TEST_CASE("summary functional: chain rule on m^2 and sd") {
  RngStream rng(10, 0);
  const auto e = random_cloud(rng, 200);
  const auto s = e.summary();
  const SummaryFunctional u([](const MeasureSummary& m) { return m.mean[0] * m.mean[0]; });
  const auto f = lions_derivative(u, e, 1e-4);
  CHECK(f.first(5) == doctest::Approx(2.0 * s.mean[0]).epsilon(1e-6));
  const SummaryDerivativeSource src("sd", [](double, double sd) { return sd; });
  std::vector<double> dmu, dxdmu;
  const std::vector<double> xs{s.mean[0] + 1.0};
  src.at_points(e, xs, dmu, dxdmu);
  // d_mu sd(x) = (x - m) / sd
  CHECK(dmu[0] == doctest::Approx(1.0 / s.sd()).epsilon(1e-5));
}

TEST_CASE("lions_derivative rejects bad steps and non-finite values") {
  RngStream rng(1, 0);
  const auto e = random_cloud(rng, 4);
  CHECK_THROWS_AS(lions_derivative(QuadraticMomentFunctional(1, 0, 0), e, 0.0), ConfigError);
  const CallableFunctional bad([](const Ensemble&) { return std::nan(""); });
  CHECK_THROWS_AS(lions_derivative(bad, e, 1e-3), NumericalError);
}

TEST_CASE("Poisson oracle: lambda and the Poisson equation") {
  // dx = -x dt + sqrt(2) dW, f = cos: stationary N(0, 1), lambda = e^{-1/2}.
  const auto spec = fixtures::linear_1d(-1.0, std::sqrt(2.0), fixtures::cos_term());
  const PoissonOracle o(spec, {0.0});
  CHECK(o.lambda() == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(o.stationary_var() == doctest::Approx(1.0));
  for (double x : {-3.0, -1.0, 0.0, 0.4, 2.5}) {
    // psi'' - x psi' = lambda - cos x
    CHECK(o.psi_second(x) - x * o.psi_prime(x) == doctest::Approx(o.lambda() - std::cos(x)).epsilon(1e-5));
    // psi is an antiderivative of psi'
    const double h = 1e-4;
    CHECK((o.psi(x + h) - o.psi(x - h)) / (2 * h) == doctest::Approx(o.psi_prime(x)).epsilon(1e-5));
  }
}

TEST_CASE("Poisson oracle on a clipped quadratic") {
  const auto spec =
      fixtures::linear_1d(-1.0, std::sqrt(2.0), {{"shape", "clipped_quadratic"}, {"clip", 4.0}});
  const PoissonOracle o(spec, {0.0});
  // E min(X^2, 4), X ~ N(0, 1), by scipy.integrate.quad
  CHECK(o.lambda() == doctest::Approx(0.9205369256363232).epsilon(1e-10));
}

TEST_CASE("HJB residual with the exact bias function is small") {
  const auto spec = fixtures::linear_1d(-1.0, std::sqrt(2.0), fixtures::cos_term());
  const PoissonOracle o(spec, {0.0});
  std::vector<std::pair<std::string, Ensemble>> probes;
  probes.emplace_back("stationary", quantile_cloud(InitialLaw::gaussian({0.0}, {1.0}), 2048));
  probes.emplace_back("shifted", quantile_cloud(InitialLaw::gaussian({1.0}, {0.25}), 2048));
  const auto r = hjb_residual(spec, o.lambda(), o, probes);
  REQUIRE(r.probes.size() == 2);
  CHECK(r.max_abs_residual < 1e-5);
  CHECK(r.csv().rfind("probe,residual,stderr", 0) == 0);
}

TEST_CASE("Hamiltonian picks the best action") {
  // b = a, f = 0 + action reward 0: F = mean of max_a a * dmu = |dmu| for a in {-1, 1}.
  const auto spec = fixtures::linear_1d(-1.0, 1.0, fixtures::const_term(0.0), 0.0, 1.0, {{-1.0}, {1.0}});
  Ensemble e;
  e.positions = {0.0, 0.0};
  DerivativeField f;
  f.n = 2;
  f.dim = 1;
  f.dmu = {2.0, -3.0};
  f.dxdmu = {0.0, 0.0};
  // drift also has -x = 0 at the origin
  CHECK(hamiltonian_F(spec, e, f) == doctest::Approx(2.5));
}

TEST_CASE("greedy feedback on a monotone drive is the top action") {
  const auto spec = fixtures::linear_1d(-1.0, 1.0, {{"shape", "tanh"}}, 0.0, 1.0, {{-1.0}, {0.0}, {1.0}});
  const PoissonOracle o(spec, {1.0});
  for (double x = -3.0; x <= 3.0; x += 0.5) CHECK(o.psi_prime(x) > 0.0);
  GreedyConfig cfg;
  cfg.cloud_size = 64;
  const auto p = greedy_feedback(spec, o, cfg);
  for (double v : p.table()) CHECK(v == 1.0);
}
