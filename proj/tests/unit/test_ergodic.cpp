#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "mfergodic/ergodic.hpp"
#include "mfergodic/errors.hpp"

using namespace mfergodic;

namespace {

SimConfig tiny_sim() {
  SimConfig s;
  s.particles = 64;
  s.replicas = 3;
  s.dt = 0.02;
  return s;
}

ErgodicConfig tiny_ergodic() {
  ErgodicConfig c;
  c.grid_means = {-1.0, 0.0, 1.0};
  c.grid_sds = {0.0, 1.0};
  c.probe_sim = tiny_sim();
  return c;
}

// Pair with a synthetic bilinear phi on a 3 x 3 grid.
ErgodicPair synthetic_pair() {
  ErgodicPair p;
  p.lambda = {0.5, 0.01};
  p.grid_means = {-1.0, 0.0, 2.0};
  p.grid_sds = {0.0, 0.5, 1.0};
  for (double m : p.grid_means)
    for (double s : p.grid_sds) {
      PhiEntry e;
      e.mean = m;
      e.sd = s;
      e.on_grid = true;
      e.law = InitialLaw::gaussian({m}, {s * s});
      e.id = "g" + std::to_string(p.phi_table.size());
      e.value = {1.0 + 2.0 * m - 3.0 * s + 0.5 * m * s, 0.0};
      p.phi_table.push_back(e);
    }
  return p;
}

}  // namespace

TEST_CASE("property: intercept weights recover the constant term of exact polynomials") {
  RngStream rng(31, 0);
  const std::vector<double> x{0.4, 0.2, 0.1, 0.05};
  for (int degree = 1; degree <= 3; ++degree) {
    const auto w = intercept_weights(x, degree);
    double sum = 0.0;
    for (double v : w) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> c(degree + 1);
      for (double& v : c) v = rng.normal();
      double fit = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) {
        double y = 0.0;
        for (int k = degree; k >= 0; --k) y = y * x[j] + c[k];
        fit += w[j] * y;
      }
      CHECK(fit == doctest::Approx(c[0]).epsilon(1e-10));
    }
  }
}

TEST_CASE("phi interpolant is exact on bilinear tables and flags extrapolation") {
  const auto p = synthetic_pair();
  RngStream rng(5, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const double m = -1.0 + 3.0 * rng.uniform(), s = rng.uniform();
    const auto r = p.phi(m, s);
    CHECK(r.value == doctest::Approx(1.0 + 2.0 * m - 3.0 * s + 0.5 * m * s).epsilon(1e-12));
    CHECK_FALSE(r.extrapolated);
  }
  const auto out = p.phi(5.0, 0.5);
  CHECK(out.extrapolated);
  CHECK(out.value == doctest::Approx(p.phi(2.0, 0.5).value));
  CHECK(p.phi("g4").value == doctest::Approx(-0.5));
  CHECK_THROWS_AS(p.phi("nope"), ConfigError);
  CHECK(p.phi(InitialLaw::gaussian({0.0}, {0.25})).value == doctest::Approx(1.0 - 1.5));
}

TEST_CASE("pair JSON round trip") {
  const auto p = synthetic_pair();
  const auto q = ErgodicPair::from_json(p.to_json());
  CHECK(q.to_json() == p.to_json());
  CHECK(q.phi(0.3, 0.7).value == p.phi(0.3, 0.7).value);
}

TEST_CASE("terminal reward from the pair counts clamped lookups") {
  const auto p = synthetic_pair();
  auto counter = std::make_shared<std::atomic<std::size_t>>(0);
  const auto g = p.terminal_reward(counter);
  Ensemble e;
  e.positions = {10.0, 12.0};
  g(e);
  CHECK(counter->load() == 1);
}

TEST_CASE("closed-form W2 between laws") {
  CHECK(law_w2(InitialLaw::gaussian({0.0}, {1.0}), InitialLaw::gaussian({1.0}, {4.0})) ==
        doctest::Approx(std::sqrt(2.0)));
  CHECK(law_w2(InitialLaw::point_mass({0.0}), InitialLaw::gaussian({1.0}, {4.0})) == doctest::Approx(std::sqrt(5.0)));
  CHECK(law_w2(InitialLaw::point_mass({-1.0}), InitialLaw::point_mass({2.0})) == doctest::Approx(3.0));
}

TEST_CASE("long-run windows scale with 1 / eta") {
  const auto w = LraWindow::from_eta(2.0, 0.01);
  CHECK(w.T == doctest::Approx(25.0));
  CHECK(w.burn_in == doctest::Approx(5.0));
  CHECK_THROWS_AS(LraWindow::from_eta(0.0, 0.01), ConfigError);
}

TEST_CASE("windowed families") {
  const auto fin = ActionSet::finite({{-1.0}, {1.0}});
  const auto w = windowed(PolicyFamily::constant(fin), 3.0, 4);
  CHECK(w.kind == PolicyFamily::Kind::PiecewiseConstantInTime);
  CHECK(w.windows == 4);
  CHECK(w.horizon == doctest::Approx(3.0));
  CHECK(windowed(PolicyFamily::constant(ActionSet::singleton({0.0})), 3.0, 4).kind == PolicyFamily::Kind::Constant);
}

TEST_CASE("constant reward: lambda = c, phi = 0, zero residuals") {
  const auto spec = fixtures::linear_1d(-1.0, 1.0, fixtures::const_term(0.7));
  const auto fam = PolicyFamily::constant(spec.actions);
  auto cfg = tiny_ergodic();
  cfg.probes.push_back({"far", InitialLaw::gaussian({3.0}, {0.5})});
  const auto pair = vanishing_discount(spec, InitialLaw::point_mass({0.0}), fam, cfg, {}, tiny_sim(), 1);
  CHECK(pair.lambda.value == doctest::Approx(0.7).epsilon(1e-9));
  REQUIRE(pair.phi_table.size() == 7);
  for (const auto& e : pair.phi_table) CHECK(std::abs(e.value.value) < 1e-9);
  CHECK(pair.phi_table.back().id == "far");

  const auto lra = long_run_average(spec, fam.constant_candidates()[0], InitialLaw::point_mass({0.0}), 10.0, 2.0,
                                    tiny_sim(), 2);
  CHECK(lra.estimate.value == doctest::Approx(0.7).epsilon(1e-12));

  const auto fp = fixed_point_residual(spec, pair, {"origin", InitialLaw::point_mass({0.0})}, 2.0, fam, {},
                                       tiny_sim(), 3);
  CHECK(fp.lhs.value == doctest::Approx(1.4).epsilon(1e-9));
  CHECK(fp.rhs.value == doctest::Approx(1.4).epsilon(1e-9));
  CHECK(fp.relative < 1e-8);

  const auto ver = verification_run(spec, fam.constant_candidates()[0], InitialLaw::point_mass({0.0}), pair,
                                    {10.0, 2.0}, tiny_sim(), 4);
  CHECK(std::abs(ver.slope.value) < 1e-8);
}

TEST_CASE("vanishing discount on OU + cos lands near e^{-1/2}") {
  const auto spec = fixtures::linear_1d(-1.0, std::sqrt(2.0), fixtures::cos_term());
  ErgodicConfig cfg;
  cfg.grid_means.clear();
  cfg.grid_sds.clear();
  SimConfig sim;
  sim.particles = 512;
  sim.replicas = 4;
  sim.dt = 0.02;
  const auto pair = vanishing_discount(spec, InitialLaw::point_mass({0.0}), PolicyFamily::constant(spec.actions), cfg,
                                       {}, sim, 9);
  CHECK(pair.fit_degree == 2);
  CHECK(pair.lambda_by_beta.size() == 4);
  CHECK(std::abs(pair.lambda.value - std::exp(-0.5)) < 0.03);
}

TEST_CASE("ergodic and tauberian configs validate and round trip") {
  ErgodicConfig c;
  CHECK(ErgodicConfig::from_json(c.to_json()).to_json() == c.to_json());
  c.betas = {0.1, 0.2, 0.05};
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("betas"), ConfigError);
  TauberianConfig t;
  t.second_law = NamedLaw{"g", InitialLaw::gaussian({2.0}, {1.0}, "g")};
  CHECK(TauberianConfig::from_json(t.to_json()).to_json() == t.to_json());
}

TEST_CASE("tauberian report CSV and plot inputs") {
  TauberianReport r;
  r.betas = {0.2, 0.1};
  r.horizons = {5.0};
  r.first.law = "origin";
  r.first.discount_by_beta = {{0.5, 0.01}, {0.55, 0.01}};
  r.first.horizon_by_T = {{0.6, 0.02}};
  r.first.lra = {0.62, 0.01};
  const auto csv = r.csv();
  CHECK(csv.rfind("law,route,x,estimate,stderr\n", 0) == 0);
  CHECK(csv.find("origin,lra,inf,0.62,0.01") != std::string::npos);
}
