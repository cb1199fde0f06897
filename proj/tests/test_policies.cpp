#include <catch2/catch_amalgamated.hpp>

#include "meanflowq/counterexample.hpp"
#include "meanflowq/policies.hpp"
#include "oracles.hpp"

using namespace meanflowq;

namespace {

LinearBasis sec32_basis() {
  const ModelFile mf = oracles::sec32_model();
  return build_instance(mf.mdp, mf.c, *mf.c_diamond).basis;
}

Theta vec2(double a, double b) {
  Theta t(2);
  t << a, b;
  return t;
}

}  // namespace

TEST_CASE("linear Q-values") {
  const LinearBasis basis = sec32_basis();

  SECTION("zero parameter gives the zero table") {
    REQUIRE(q_values(basis, vec2(0, 0)).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("theta = (1,0) realizes Q*") {
    const ModelFile mf = oracles::sec32_model();
    const QFunction qs = value_iteration(mf.mdp, mf.c);
    REQUIRE((q_values(basis, vec2(1, 0)) - qs).cwiseAbs().maxCoeff() < 1e-12);
  }

  SECTION("tabular unit vectors give indicators") {
    const LinearBasis tab = LinearBasis::tabular(2, 2);
    for (int i = 0; i < 4; ++i) {
      Theta e = Theta::Zero(4);
      e(i) = 1.0;
      const QFunction q = q_values(tab, e);
      for (int x = 0; x < 2; ++x)
        for (int u = 0; u < 2; ++u)
          REQUIRE(q(x, u) == (x * 2 + u == i ? 1.0 : 0.0));
    }
  }

  SECTION("dimension mismatch is rejected") {
    REQUIRE_THROWS_AS(q_values(basis, Theta::Zero(3)), DimensionError);
  }
}

TEST_CASE("tamed Gibbs policy") {
  const LinearBasis basis = sec32_basis();

  SECTION("eps = 1 returns nu regardless of theta and kappa") {
    Eigen::VectorXd nu(2);
    nu << 0.3, 0.7;
    const RandomizedPolicy pol = tamed_gibbs(basis, vec2(-3, 11), TamedGibbsParams{55.0, 1.0, nu});
    for (int x = 0; x < 2; ++x) {
      REQUIRE(pol.probs(x, 0) == Catch::Approx(0.3).margin(1e-15));
      REQUIRE(pol.probs(x, 1) == Catch::Approx(0.7).margin(1e-15));
    }
  }

  SECTION("theta = 0 mixes the uniform Gibbs part with nu") {
    Eigen::VectorXd nu(2);
    nu << 0.25, 0.75;
    const double eps = 0.2;
    const RandomizedPolicy pol = tamed_gibbs(basis, vec2(0, 0), TamedGibbsParams{20.0, eps, nu});
    for (int x = 0; x < 2; ++x)
      for (int u = 0; u < 2; ++u)
        REQUIRE(pol.probs(x, u) == Catch::Approx((1 - eps) * 0.5 + eps * nu(u)).margin(1e-14));
  }

  SECTION("concentrates on the greedy action as kappa grows") {
    const ModelFile mf = oracles::sec32_model();
    const DeterministicPolicy greedy = greedy_policy(value_iteration(mf.mdp, mf.c)).policy;
    double prev_mass[2] = {0.0, 0.0};
    for (double kappa : {20.0, 50.0, 100.0}) {
      const RandomizedPolicy pol = tamed_gibbs(basis, vec2(1, 0), TamedGibbsParams{kappa, 0.0, {}});
      for (int x = 0; x < 2; ++x) {
        // total variation to the point mass on the greedy action
        double tv = 0.0;
        for (int u = 0; u < 2; ++u)
          tv += 0.5 * std::abs(pol.probs(x, u) - (u == greedy[static_cast<std::size_t>(x)] ? 1.0 : 0.0));
        if (kappa == 20.0) REQUIRE(tv < 0.05);
        const double mass = pol.probs(x, greedy[static_cast<std::size_t>(x)]);
        REQUIRE(mass > prev_mass[x]);
        prev_mass[x] = mass;
      }
    }
  }

  SECTION("rows are exactly stochastic") {
    const RandomizedPolicy pol = tamed_gibbs(basis, vec2(0.37, -1.91), TamedGibbsParams{200.0, 0.13, {}});
    for (int x = 0; x < 2; ++x) REQUIRE(std::abs(pol.probs.row(x).sum() - 1.0) < 1e-12);
    REQUIRE_NOTHROW(pol.validate());
  }

  SECTION("policy table converges along rays r*theta") {
    const Theta dir = vec2(0.8, -0.6);
    double prev_diff = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd prev;
    for (double r : {10.0, 100.0, 1000.0, 10000.0}) {
      const Eigen::MatrixXd probs =
          tamed_gibbs(basis, r * dir, TamedGibbsParams{20.0, 1e-3, {}}).probs;
      if (prev.size()) {
        const double diff = (probs - prev).cwiseAbs().maxCoeff();
        REQUIRE(diff < prev_diff);
        prev_diff = diff;
      }
      prev = probs;
    }
    REQUIRE(prev_diff < 1e-4);
  }

  SECTION("mass on the greedy action tends to 1 with eps = 0") {
    double prev = 0.0;
    for (double kappa : {10.0, 100.0, 1000.0}) {
      const RandomizedPolicy pol = tamed_gibbs(basis, vec2(1, 0), TamedGibbsParams{kappa, 0.0, {}});
      const DeterministicPolicy greedy = greedy_policy(q_values(basis, vec2(1, 0))).policy;
      double min_mass = 1.0;
      for (int x = 0; x < 2; ++x)
        min_mass = std::min(min_mass, pol.probs(x, greedy[static_cast<std::size_t>(x)]));
      REQUIRE(min_mass > prev);
      prev = min_mass;
    }
    REQUIRE(prev > 0.99);
  }
}

TEST_CASE("epsilon-greedy policy") {
  const LinearBasis basis = sec32_basis();

  SECTION("eps = 0 is the greedy point mass") {
    const RandomizedPolicy pol = epsilon_greedy(basis, vec2(1, 0), 0.0);
    const DeterministicPolicy greedy = greedy_policy(q_values(basis, vec2(1, 0))).policy;
    for (int x = 0; x < 2; ++x)
      REQUIRE(pol.probs(x, greedy[static_cast<std::size_t>(x)]) == 1.0);
  }

  SECTION("eps = 1 is nu") {
    Eigen::VectorXd nu(2);
    nu << 0.6, 0.4;
    const RandomizedPolicy pol = epsilon_greedy(basis, vec2(1, 0), 1.0, nu);
    for (int x = 0; x < 2; ++x) {
      REQUIRE(pol.probs(x, 0) == Catch::Approx(0.6).margin(1e-15));
      REQUIRE(pol.probs(x, 1) == Catch::Approx(0.4).margin(1e-15));
    }
  }

  SECTION("diamond-greedy mass at eps = 0.1") {
    const RandomizedPolicy pol = epsilon_greedy(basis, vec2(0, 1), 0.1);
    for (int x = 0; x < 2; ++x)
      REQUIRE(pol.probs(x, x) == Catch::Approx(0.95).margin(1e-14));
  }
}

TEST_CASE("score function") {
  const LinearBasis basis = sec32_basis();

  SECTION("oblivious family has zero score") {
    const Eigen::VectorXd s = score_function(PolicyFamily::oblivious(), basis, vec2(0.4, 0.2), 1, 0);
    REQUIRE(s.cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("symmetric one-dimensional basis has zero score") {
    LinearBasis sym;
    sym.n_states = 1;
    sym.n_actions = 2;
    sym.psi = Eigen::MatrixXd::Constant(2, 1, 0.7);
    Theta t(1);
    t << 1.3;
    const Eigen::VectorXd s = score_function(PolicyFamily::tamed_gibbs(8.0, 0.05), sym, t, 0, 1);
    REQUIRE(s.cwiseAbs().maxCoeff() < 1e-12);
  }

  SECTION("matches an independent Richardson stencil") {
    const PolicyFamily fam = PolicyFamily::tamed_gibbs(20.0, 1e-3);
    const Theta theta = vec2(0.5, 0.6);
    for (int x = 0; x < 2; ++x)
      for (int u = 0; u < 2; ++u) {
        const Eigen::VectorXd s = score_function(fam, basis, theta, x, u);
        // Richardson extrapolation of central differences at steps h and h/2.
        const double h = 1e-5;
        Eigen::VectorXd rich(2);
        for (int j = 0; j < 2; ++j) {
          const auto diff = [&](double step) {
            Theta tp = theta, tm = theta;
            tp(j) += step;
            tm(j) -= step;
            return (std::log(fam.evaluate(basis, tp).probs(x, u)) -
                    std::log(fam.evaluate(basis, tm).probs(x, u))) /
                   (2.0 * step);
          };
          rich(j) = (4.0 * diff(h / 2) - diff(h)) / 3.0;
        }
        REQUIRE((s - rich).norm() < 1e-5 * rich.norm());
      }
  }

  SECTION("integrates to zero against the policy") {
    const PolicyFamily fam = PolicyFamily::tamed_gibbs(12.0, 0.02);
    const Theta theta = vec2(-0.3, 0.9);
    const RandomizedPolicy pol = fam.evaluate(basis, theta);
    for (int x = 0; x < 2; ++x) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(2);
      for (int u = 0; u < 2; ++u) acc += pol.probs(x, u) * score_function(fam, basis, theta, x, u);
      REQUIRE(acc.cwiseAbs().maxCoeff() < 1e-6);
    }
  }

  SECTION("zero-probability pairs are rejected") {
    REQUIRE_THROWS_AS(score_function(PolicyFamily::greedy(), basis, vec2(1, 0), 0, 0),
                      ZeroProbabilityError);
  }
}
