#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "meanflowq/gauss1d.hpp"
#include "meanflowq/rng.hpp"

using namespace meanflowq;

namespace {

Gauss1dModel model_a() {
  Gauss1dModel m;
  m.alpha = 0.5;
  m.gamma = 0.9;
  m.m = -10.0;
  m.r = 0.1;
  m.w = 1.0;
  return m;
}

Gauss1dModel model_b() {
  Gauss1dModel m;
  m.alpha = 0.5;
  m.gamma = 0.9;
  m.r = 1.0;
  m.m = -1.0;
  m.w = 10.0;
  return m;
}

Gauss1dModel model_c() {
  Gauss1dModel m = model_b();
  m.w = -10.0;
  return m;
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> g(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
  return g;
}

}  // namespace

TEST_CASE("moments") {
  SECTION("AR(1) stationary deviation") {
    REQUIRE(model_b().stationary_std() == Catch::Approx(std::sqrt(4.0 / 3.0)).margin(1e-15));
  }

  SECTION("constant feature override gives unit moments") {
    Gauss1dModel m = model_b();
    m.psi0_override = [](double) { return 1.0; };
    m.psi1_override = [](double) { return 1.0; };
    const Gauss1dMoments mo = moments(m);
    REQUIRE(mo.R == Catch::Approx(1.0).margin(1e-10));
    REQUIRE(mo.R1_plus == Catch::Approx(1.0).margin(1e-10));
    REQUIRE(mo.R1_minus == Catch::Approx(1.0).margin(1e-10));
    // E[psi c] = E[X^2] + w/2 with psi constant.
    const double var = 1.0 / (1.0 - 0.25);
    REQUIRE(mo.E_psi_c == Catch::Approx(var + 5.0).margin(1e-8));
  }

  SECTION("order doubling stabilizes every moment to 1e-8") {
    Gauss1dModel m = model_b();
    m.quad_order = 64;
    REQUIRE(moments(m).check_error <= 1e-8);
    // Also for the kinked basis of set (a).
    REQUIRE(moments(model_a()).check_error <= 1e-8);
  }

  SECTION("quadrature matches a 10^7-sample Monte Carlo within 4 standard errors") {
    const Gauss1dModel m = model_b();
    const Gauss1dMoments mo = moments(m);
    const long n = 10000000;
    std::mt19937_64 rng(123);
    const double sigma = m.stationary_std();
    double s[4] = {0, 0, 0, 0}, ss[4] = {0, 0, 0, 0};
    for (long k = 0; k < n; ++k) {
      const double x = sigma * gaussian(rng);
      const double w = gaussian(rng);
      const int u = u01(rng) < 0.5 ? 0 : 1;
      const double xp = m.alpha * x + w;
      const double psi = m.psi(x, u);
      const double v[4] = {psi * psi, psi * m.psi(xp, m.phi_plus(xp)),
                           psi * m.psi(xp, m.phi_minus(xp)), psi * m.cost(x, u)};
      for (int i = 0; i < 4; ++i) {
        s[i] += v[i];
        ss[i] += v[i] * v[i];
      }
    }
    const double targets[4] = {mo.R, mo.R1_plus, mo.R1_minus, mo.E_psi_c};
    for (int i = 0; i < 4; ++i) {
      const double mean = s[i] / n;
      const double se = std::sqrt((ss[i] / n - mean * mean) / n);
      REQUIRE(std::abs(mean - targets[i]) < 4.0 * se);
    }
  }
}

TEST_CASE("case classification") {
  REQUIRE(classify(model_a()).label == CaseLabel::Case1);
  REQUIRE(classify(model_b()).label == CaseLabel::Case2);
  REQUIRE(classify(model_c()).label == CaseLabel::Case3);
}

TEST_CASE("one-dimensional mean flow") {
  SECTION("oblivious value at zero is E[psi c]") {
    const Gauss1dModel m = model_b();
    const Gauss1dMoments mo = moments(m);
    REQUIRE(barf_1d(m, 0.0, Gauss1dPolicy::oblivious()) == Catch::Approx(mo.E_psi_c).margin(1e-10));
  }

  SECTION("case (b): two roots bracketing zero with divergence below the left one") {
    const Gauss1dModel m = model_b();
    const Gauss1dMoments mo = moments(m);
    const double slope_left = -mo.R + m.gamma * mo.R1_minus;
    const double slope_right = -mo.R + m.gamma * mo.R1_plus;
    REQUIRE(slope_left > 0.0);
    REQUIRE(slope_right < 0.0);
    const double root_left = -mo.E_psi_c / slope_left;
    const double root_right = -mo.E_psi_c / slope_right;
    REQUIRE(root_left < 0.0);
    REQUIRE(root_right > 0.0);

    const std::vector<double> grid = linspace(-50, 50, 401);
    const std::vector<double> f = barf_1d_grid(m, grid, Gauss1dPolicy::oblivious());
    int sign_changes = 0;
    for (std::size_t i = 1; i < f.size(); ++i)
      if ((f[i - 1] < 0) != (f[i] < 0)) ++sign_changes;
    REQUIRE(sign_changes == 2);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (grid[i] < root_left - 1e-6) REQUIRE(f[i] < 0.0);
      if (grid[i] > root_left + 1e-6 && grid[i] < root_right - 1e-6) REQUIRE(f[i] > 0.0);
      if (grid[i] > root_right + 1e-6) REQUIRE(f[i] < 0.0);
    }

    // Instability witness: positive drift ratio just below the left root.
    const double theta = root_left - 0.5;
    const double ratio = theta * barf_1d(m, theta, Gauss1dPolicy::oblivious()) / (theta * theta);
    REQUIRE(ratio > 0.0);
  }

  SECTION("case (c): no root on [-50, 50]") {
    const std::vector<double> grid = linspace(-50, 50, 401);
    const std::vector<double> f = barf_1d_grid(model_c(), grid, Gauss1dPolicy::oblivious());
    for (double v : f) REQUIRE(v < 0.0);
  }

  SECTION("tamed Gibbs curves are strictly decreasing in cases (a) and (c)") {
    for (const Gauss1dModel& m : {model_a(), model_c()}) {
      const std::vector<double> grid = linspace(-50, 50, 1000);
      const std::vector<double> f = barf_1d_grid(m, grid, Gauss1dPolicy::tamed_gibbs(5.0, 0.0));
      for (std::size_t i = 1; i < f.size(); ++i) REQUIRE(f[i] < f[i - 1]);
    }
  }

  SECTION("slope asymmetry A(theta) <= A(-theta) for positive theta") {
    for (const Gauss1dModel& m : {model_a(), model_b(), model_c()}) {
      const Gauss1dMoments mo = moments(m);
      REQUIRE(m.gamma * mo.R1_plus <= m.gamma * mo.R1_minus + 1e-12);
    }
  }

  SECTION("oblivious field is piecewise linear with one kink at zero") {
    const Gauss1dModel m = model_b();
    for (double base : {1.0, -8.0}) {
      const double f0 = barf_1d(m, base, Gauss1dPolicy::oblivious());
      const double f1 = barf_1d(m, base + 0.5, Gauss1dPolicy::oblivious());
      const double f2 = barf_1d(m, base + 1.0, Gauss1dPolicy::oblivious());
      REQUIRE(std::abs(f2 - 2 * f1 + f0) < 1e-9);
    }
  }

  SECTION("tamed Gibbs drift is inward for large |theta| on all three sets") {
    for (const Gauss1dModel& m : {model_a(), model_b(), model_c()}) {
      for (double theta : {-50.0, -20.0, -10.0, 10.0, 20.0, 50.0}) {
        const double f = barf_1d(m, theta, Gauss1dPolicy::tamed_gibbs(5.0, 0.0));
        REQUIRE(theta * f < 0.0);
      }
    }
  }
}

TEST_CASE("model validation") {
  Gauss1dModel bad = model_b();
  bad.alpha = 1.0;
  REQUIRE_THROWS_AS(bad.validate(), ModelError);
  Gauss1dModel low_order = model_b();
  low_order.quad_order = 8;
  REQUIRE_THROWS_AS(low_order.validate(), ModelError);
}
