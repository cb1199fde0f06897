#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "meanflowq/counterexample.hpp"
#include "meanflowq/mean_flow.hpp"
#include "oracles.hpp"

using namespace meanflowq;

namespace {

TwoBasisInstance sec32_instance() {
  const ModelFile mf = oracles::sec32_model();
  return build_instance(mf.mdp, mf.c, *mf.c_diamond);
}

Theta vec2(double a, double b) {
  Theta t(2);
  t << a, b;
  return t;
}

const std::vector<PolicyFamily>& all_families() {
  static const std::vector<PolicyFamily> fams = {
      PolicyFamily::tamed_gibbs(20.0, 1e-3), PolicyFamily::eps_greedy(0.1),
      PolicyFamily::oblivious(), PolicyFamily::greedy()};
  return fams;
}

}  // namespace

TEST_CASE("mean flow vanishes at theta* for every family and eligibility") {
  const TwoBasisInstance inst = sec32_instance();
  for (const PolicyFamily& fam : all_families())
    for (Eligibility elig : {Eligibility::Pbe, Eligibility::Msbe}) {
      const MeanFlowConfig cfg = inst.config(fam, elig);
      REQUIRE(barf(cfg, vec2(1, 0)).norm() < 1e-12);
    }
}

TEST_CASE("greedy-family mean flow at theta_diamond equals the pair moment") {
  const TwoBasisInstance inst = sec32_instance();
  const MeanFlowConfig cfg = inst.config(PolicyFamily::greedy());
  const Theta diamond = vec2(0, 1);
  const Eigen::VectorXd f = barf(cfg, diamond);

  // Hand evaluation of E_{varpi_diamond}[psi (c - c_diamond)].
  const DeterministicPolicy phi = greedy_policy(inst.q_diamond).policy;
  const Eigen::MatrixXd T = joint_transition(inst.mdp, RandomizedPolicy::point_mass(phi, 2));
  const JointPmf w = stationary_joint_pmf(T);
  Eigen::Vector2d expected = Eigen::Vector2d::Zero();
  for (int x = 0; x < 2; ++x)
    for (int u = 0; u < 2; ++u) {
      const int z = inst.mdp.zindex(x, u);
      expected += w(z) * (inst.c(x, u) - inst.c_diamond(x, u)) *
                  inst.basis.psi.row(z).transpose().head<2>();
    }
  REQUIRE((f - expected).norm() < 1e-13);
  // The published instance pins c_diamond to c on the diamond-policy support,
  // so theta_diamond is an exact root.
  REQUIRE(f.norm() < 1e-12);
}

TEST_CASE("tabular oblivious mean flow at zero is the weighted cost") {
  const ModelFile mf = oracles::sec32_model();
  const LinearBasis tab = LinearBasis::tabular(2, 2);
  MeanFlowConfig cfg{mf.mdp, mf.c, tab, PolicyFamily::oblivious(), Eligibility::Pbe};
  const Eigen::VectorXd f = barf(cfg, Theta::Zero(4));

  const Eigen::MatrixXd T =
      joint_transition(mf.mdp, PolicyFamily::oblivious().evaluate(tab, Theta::Zero(4)));
  const Eigen::VectorXd w_oracle = oracles::power_iteration_pmf(T);
  const Eigen::VectorXd f_oracle =
      oracles::brute_force_mean_flow(mf.mdp, mf.c, tab.psi, Theta::Zero(4), w_oracle);
  REQUIRE((f - f_oracle).cwiseAbs().maxCoeff() < 1e-8);
  for (int x = 0; x < 2; ++x)
    for (int u = 0; u < 2; ++u) {
      const int z = mf.mdp.zindex(x, u);
      REQUIRE(f(z) == Catch::Approx(w_oracle(z) * mf.c(x, u)).margin(1e-8));
    }
}

TEST_CASE("MSBE loss") {
  const TwoBasisInstance inst = sec32_instance();

  SECTION("zero at the Bellman point") {
    REQUIRE(msbe_loss(inst.config(PolicyFamily::tamed_gibbs(20, 1e-3), Eligibility::Msbe),
                      vec2(1, 0)) < 1e-12);
  }

  SECTION("at theta_diamond the residual is c - c_diamond pointwise") {
    const MeanFlowConfig cfg = inst.config(PolicyFamily::tamed_gibbs(20, 1e-3), Eligibility::Msbe);
    const Theta diamond = vec2(0, 1);
    const double loss = msbe_loss(cfg, diamond);
    const JointPmf w =
        stationary_joint_pmf(joint_transition(inst.mdp, cfg.family.evaluate(inst.basis, diamond)));
    double expected = 0.0;
    for (int x = 0; x < 2; ++x)
      for (int u = 0; u < 2; ++u)
        expected += w(inst.mdp.zindex(x, u)) *
                    std::pow(inst.c(x, u) - inst.c_diamond(x, u), 2);
    REQUIRE(loss == Catch::Approx(expected).margin(1e-12));
  }

  SECTION("quadratic homogeneity in the cost scale") {
    std::mt19937_64 rng(7);
    for (int k = 0; k < 3; ++k) {
      const Theta theta = vec2(u01(rng) * 2 - 1, u01(rng) * 2 - 1);
      const double s = 2.5;
      MeanFlowConfig scaled = inst.config(PolicyFamily::oblivious(), Eligibility::Msbe);
      scaled.cost = s * inst.c;
      const double lhs = msbe_loss(scaled, s * theta);
      const double rhs =
          s * s * msbe_loss(inst.config(PolicyFamily::oblivious(), Eligibility::Msbe), theta);
      REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-12));
    }
  }
}

TEST_CASE("finite-difference Jacobian") {
  const TwoBasisInstance inst = sec32_instance();

  SECTION("matches the closed form for oblivious PBE") {
    const MeanFlowConfig cfg = inst.config(PolicyFamily::oblivious());
    for (const Theta& theta : {vec2(0.7, 0.4), vec2(-1.2, 0.3), vec2(0.2, -0.8)}) {
      const JacobianResult fd = jacobian_fd(cfg, theta);
      const ObliviousJacobian cf = jacobian_oblivious(cfg, theta);
      REQUIRE((fd.A - cf.jacobian.A).cwiseAbs().maxCoeff() < 1e-4);
    }
  }

  SECTION("theta* is Hurwitz under the greedy family") {
    const JacobianResult jr = jacobian_fd(inst.config(PolicyFamily::greedy()), vec2(1, 0));
    REQUIRE(jr.hurwitz);
  }

  SECTION("single-pair tabular field has slope -(1-gamma)") {
    FiniteMdp mdp;
    mdp.n_states = 1;
    mdp.n_actions = 1;
    mdp.transitions = {Eigen::MatrixXd::Ones(1, 1)};
    mdp.discount = 0.75;
    MeanFlowConfig cfg{mdp, Eigen::MatrixXd::Ones(1, 1), LinearBasis::tabular(1, 1),
                       PolicyFamily::oblivious(), Eligibility::Pbe};
    Theta t(1);
    t << 0.3;
    const JacobianResult jr = jacobian_fd(cfg, t);
    REQUIRE(jr.A(0, 0) == Catch::Approx(-(1.0 - 0.75)).margin(1e-8));
    REQUIRE(jr.hurwitz);
  }

  SECTION("stencils straddling a greedy boundary are rejected") {
    const MeanFlowConfig cfg = inst.config(PolicyFamily::tamed_gibbs(20, 1e-3));
    // Bisect the segment from theta* to theta_diamond for the pattern change.
    Theta a = vec2(1, 0), b = vec2(0, 1);
    const DeterministicPolicy pa = greedy_policy(q_values(inst.basis, a)).policy;
    for (int it = 0; it < 80; ++it) {
      const Theta mid = 0.5 * (a + b);
      if (greedy_policy(q_values(inst.basis, mid)).policy == pa)
        a = mid;
      else
        b = mid;
    }
    REQUIRE_THROWS_AS(jacobian_fd(cfg, 0.5 * (a + b)), PolicyBoundaryError);
  }
}

TEST_CASE("oblivious closed-form Jacobian") {
  const TwoBasisInstance inst = sec32_instance();
  const MeanFlowConfig cfg = inst.config(PolicyFamily::oblivious());

  SECTION("affine identity f = A theta - b at 100 random points") {
    std::mt19937_64 rng(42);
    int tested = 0;
    while (tested < 100) {
      const Theta theta = vec2(6 * u01(rng) - 3, 6 * u01(rng) - 3);
      if (!greedy_policy(q_values(inst.basis, theta)).continuous) continue;
      const ObliviousJacobian oj = jacobian_oblivious(cfg, theta);
      const Eigen::VectorXd reconstructed = oj.jacobian.A * theta - oj.b;
      REQUIRE((barf(cfg, theta) - reconstructed).cwiseAbs().maxCoeff() < 1e-10);
      ++tested;
    }
  }

  SECTION("tabular structure: A = -Diag(w)(I - gamma S)") {
    const ModelFile mf = oracles::sec32_model();
    const LinearBasis tab = LinearBasis::tabular(2, 2);
    MeanFlowConfig tab_cfg{mf.mdp, mf.c, tab, PolicyFamily::oblivious(), Eligibility::Pbe};
    Theta theta(4);
    theta << 0.9, 0.1, -0.4, 0.7;
    const GreedyResult greedy = greedy_policy(q_values(tab, theta));
    REQUIRE(greedy.continuous);
    const ObliviousJacobian oj = jacobian_oblivious(tab_cfg, theta);

    const JointPmf w = stationary_joint_pmf(
        joint_transition(mf.mdp, PolicyFamily::oblivious().evaluate(tab, theta)));
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(4, 4);
    for (int x = 0; x < 2; ++x)
      for (int u = 0; u < 2; ++u)
        for (int xp = 0; xp < 2; ++xp)
          S(mf.mdp.zindex(x, u),
            mf.mdp.zindex(xp, greedy.policy[static_cast<std::size_t>(xp)])) += mf.mdp.P(u)(x, xp);
    const Eigen::MatrixXd expected =
        -w.asDiagonal() * (Eigen::MatrixXd::Identity(4, 4) - mf.mdp.discount * S);
    REQUIRE((oj.jacobian.A - expected).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((jacobian_fd(tab_cfg, theta).A - expected).cwiseAbs().maxCoeff() < 1e-6);
  }

  SECTION("single pair gives -(1-gamma)") {
    FiniteMdp mdp;
    mdp.n_states = 1;
    mdp.n_actions = 1;
    mdp.transitions = {Eigen::MatrixXd::Ones(1, 1)};
    mdp.discount = 0.6;
    MeanFlowConfig cfg1{mdp, Eigen::MatrixXd::Ones(1, 1), LinearBasis::tabular(1, 1),
                        PolicyFamily::oblivious(), Eligibility::Pbe};
    Theta t(1);
    t << 2.0;
    REQUIRE(jacobian_oblivious(cfg1, t).jacobian.A(0, 0) == Catch::Approx(-0.4).margin(1e-14));
  }

  SECTION("preconditions are enforced") {
    REQUIRE_THROWS_AS(jacobian_oblivious(inst.config(PolicyFamily::tamed_gibbs(20, 1e-3)),
                                         vec2(0.5, 0.5)),
                      NotObliviousError);
    REQUIRE_THROWS_AS(jacobian_oblivious(cfg, vec2(0, 0)), NotContinuousError);
    REQUIRE_THROWS_AS(jacobian_oblivious(inst.config(PolicyFamily::oblivious(), Eligibility::Msbe),
                                         vec2(0.5, 0.5)),
                      std::invalid_argument);
  }
}

TEST_CASE("Jacobian decomposition A = A0 + A1") {
  const TwoBasisInstance inst = sec32_instance();

  SECTION("oblivious family: A1 = 0 and A0 is the closed form") {
    const MeanFlowConfig cfg = inst.config(PolicyFamily::oblivious());
    const Theta theta = vec2(0.4, 0.7);
    const JacobianDecomposition dec = jacobian_decomposition(cfg, theta);
    REQUIRE(dec.a1.cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(dec.score_part.cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((dec.a0 - jacobian_oblivious(cfg, theta).jacobian.A).cwiseAbs().maxCoeff() < 1e-6);
  }

  SECTION("tamed Gibbs at the second root: small defect") {
    const MeanFlowConfig cfg = inst.config(PolicyFamily::tamed_gibbs(20, 1e-3));
    const std::optional<Theta> root = refine_root(cfg, vec2(0, 1));
    REQUIRE(root.has_value());
    const JacobianDecomposition dec = jacobian_decomposition(cfg, *root);
    REQUIRE(dec.defect <= 1e-3);
    // The pmf-sensitivity block genuinely differs from the one-step score
    // term; the correction carries the difference.
    REQUIRE((dec.a0 + dec.a1 - dec.total).cwiseAbs().maxCoeff() <= 1e-3);
  }

  SECTION("eps = 1 tamed Gibbs is oblivious in effect") {
    const MeanFlowConfig cfg = inst.config(PolicyFamily::tamed_gibbs(20, 1.0));
    const JacobianDecomposition dec = jacobian_decomposition(cfg, vec2(-0.6, 0.9));
    REQUIRE(dec.a1.cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("root finding on the published instance") {
  const TwoBasisInstance inst = sec32_instance();

  SECTION("tamed Gibbs kappa=20 eps=1e-3: exactly two roots") {
    const RootSet rs =
        find_roots(inst.config(PolicyFamily::tamed_gibbs(20, 1e-3)), Box::cube(2, -2, 2), 64, 1);
    REQUIRE(rs.roots.size() == 2);
    bool near_paper_root = false, near_star = false;
    for (const Root& r : rs.roots) {
      REQUIRE(r.residual <= 1e-8);
      REQUIRE(r.jacobian.has_value());
      REQUIRE(r.jacobian->hurwitz);
      if ((r.theta - vec2(0.0076, 0.9942)).norm() < 5e-3) near_paper_root = true;
      if ((r.theta - vec2(1, 0)).norm() < 5e-2) near_star = true;
    }
    REQUIRE(near_paper_root);
    REQUIRE(near_star);
  }

  SECTION("oblivious training: unique root at theta*") {
    const RootSet rs =
        find_roots(inst.config(PolicyFamily::tamed_gibbs(20, 1.0)), Box::cube(2, -2, 2), 64, 1);
    REQUIRE(rs.roots.size() == 1);
    REQUIRE((rs.roots[0].theta - vec2(1, 0)).norm() < 5e-2);
    REQUIRE(rs.roots[0].jacobian->hurwitz);
  }

  SECTION("greedy family: roots at both unit directions") {
    const RootSet rs =
        find_roots(inst.config(PolicyFamily::greedy()), Box::cube(2, -2, 2), 64, 1);
    bool at_star = false, at_diamond = false;
    for (const Root& r : rs.roots) {
      REQUIRE(r.residual <= 1e-8);
      if ((r.theta - vec2(1, 0)).norm() < 1e-6) at_star = true;
      if ((r.theta - vec2(0, 1)).norm() < 1e-6) at_diamond = true;
    }
    REQUIRE(at_star);
    REQUIRE(at_diamond);
  }
}

TEST_CASE("mean-flow integration") {
  const TwoBasisInstance inst = sec32_instance();
  const MeanFlowConfig cfg = inst.config(PolicyFamily::tamed_gibbs(20, 1e-3));

  SECTION("an equilibrium stays put") {
    const FlowTrajectory traj = integrate_mean_flow(cfg, vec2(1, 0), 5.0, 0.01);
    REQUIRE_FALSE(traj.diverged);
    REQUIRE((traj.points.back() - vec2(1, 0)).norm() < 1e-9);
  }

  SECTION("flows from the common start into one of the two roots") {
    const FlowTrajectory traj = integrate_mean_flow(cfg, vec2(0.5, 0.6), 30.0, 0.005);
    REQUIRE_FALSE(traj.diverged);
    REQUIRE(barf(cfg, traj.points.back()).norm() <= 1e-6);
  }

  SECTION("step halving moves the converged endpoint by at most 1e-6") {
    const FlowTrajectory a = integrate_mean_flow(cfg, vec2(0.5, 0.6), 30.0, 0.005);
    const FlowTrajectory b = integrate_mean_flow(cfg, vec2(0.5, 0.6), 30.0, 0.0025);
    REQUIRE((a.points.back() - b.points.back()).norm() <= 1e-6);
  }

  SECTION("divergent flows trip the guard") {
    // Oblivious two-action model whose left branch has positive slope:
    // f(theta) = 0.2 theta for theta < 0, so the flow runs to -infinity.
    FiniteMdp mdp;
    mdp.n_states = 1;
    mdp.n_actions = 2;
    mdp.transitions = {Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Ones(1, 1)};
    mdp.discount = 0.9;
    LinearBasis basis;
    basis.n_states = 1;
    basis.n_actions = 2;
    basis.psi.resize(2, 1);
    basis.psi << 1.0, 2.0;
    MeanFlowConfig div_cfg{mdp, Eigen::MatrixXd::Zero(1, 2), basis, PolicyFamily::oblivious(),
                           Eligibility::Pbe};
    Theta t0(1);
    t0 << -1.0;
    const FlowTrajectory traj = integrate_mean_flow(div_cfg, t0, 200.0, 0.01);
    REQUIRE(traj.diverged);
    REQUIRE(traj.points.back().norm() > 1e6);
  }

  SECTION("dt must be positive") {
    REQUIRE_THROWS_AS(integrate_mean_flow(cfg, vec2(0, 0), 1.0, 0.0), std::invalid_argument);
  }
}

TEST_CASE("Lyapunov sphere scan") {
  const TwoBasisInstance inst = sec32_instance();

  SECTION("published instance drifts inward on every sampled sphere") {
    const LyapunovScan scan =
        lyapunov_scan(inst.config(PolicyFamily::tamed_gibbs(20, 1e-3)), {5.0, 10.0, 50.0}, 200, 3);
    for (const auto& stats : scan.per_radius) REQUIRE(stats.max_ratio < 0.0);
    REQUIRE(scan.epsilon0 > 0.0);
    REQUIRE(scan.b0 == 5.0);
  }

  SECTION("pure contraction toy meets the closed-form bound") {
    FiniteMdp mdp;
    mdp.n_states = 2;
    mdp.n_actions = 1;
    Eigen::MatrixXd P(2, 2);
    P << 0.3, 0.7, 0.6, 0.4;
    mdp.transitions = {P};
    mdp.discount = 0.75;
    MeanFlowConfig cfg{mdp, Eigen::MatrixXd::Zero(2, 1), LinearBasis::tabular(2, 1),
                       PolicyFamily::oblivious(), Eligibility::Pbe};
    const JointPmf w = stationary_joint_pmf(joint_transition(
        mdp, PolicyFamily::oblivious().evaluate(cfg.basis, Theta::Zero(2))));
    const double bound = -(1.0 - mdp.discount) * w.minCoeff();
    const LyapunovScan scan = lyapunov_scan(cfg, {1.0, 5.0}, 300, 11);
    for (const auto& stats : scan.per_radius) REQUIRE(stats.max_ratio <= bound + 1e-12);
  }
}

TEST_CASE("mean-flow structural properties") {
  const TwoBasisInstance inst = sec32_instance();

  SECTION("componentwise concavity for non-negative features under oblivious training") {
    REQUIRE(inst.basis.nonnegative());
    const MeanFlowConfig cfg = inst.config(PolicyFamily::oblivious());
    std::mt19937_64 rng(5);
    for (int k = 0; k < 1000; ++k) {
      const Theta t1 = vec2(6 * u01(rng) - 3, 6 * u01(rng) - 3);
      const Theta t2 = vec2(6 * u01(rng) - 3, 6 * u01(rng) - 3);
      const Eigen::VectorXd fmid = barf(cfg, 0.5 * (t1 + t2));
      const Eigen::VectorXd favg = 0.5 * (barf(cfg, t1) + barf(cfg, t2));
      REQUIRE((fmid - favg).minCoeff() >= -1e-10);
    }
  }

  SECTION("MSBE gradient identity: f = -(1/2) grad of the loss") {
    const MeanFlowConfig cfg = inst.config(PolicyFamily::oblivious(), Eligibility::Msbe);
    std::mt19937_64 rng(17);
    int tested = 0;
    while (tested < 50) {
      const Theta theta = vec2(4 * u01(rng) - 2, 4 * u01(rng) - 2);
      const double h = 1e-6 * (1.0 + theta.norm());
      // Stay clear of greedy-pattern changes across the stencil.
      const DeterministicPolicy base = greedy_policy(q_values(inst.basis, theta)).policy;
      bool interior = greedy_policy(q_values(inst.basis, theta)).continuous;
      Eigen::VectorXd grad(2);
      for (int j = 0; j < 2 && interior; ++j) {
        Theta tp = theta, tm = theta;
        tp(j) += h;
        tm(j) -= h;
        interior = greedy_policy(q_values(inst.basis, tp)).policy == base &&
                   greedy_policy(q_values(inst.basis, tm)).policy == base;
        if (interior) grad(j) = (msbe_loss(cfg, tp) - msbe_loss(cfg, tm)) / (2.0 * h);
      }
      if (!interior) continue;
      const Eigen::VectorXd f = barf(cfg, theta);
      REQUIRE((f + 0.5 * grad).norm() <= 1e-5 * (1.0 + f.norm()));
      ++tested;
    }
  }

  SECTION("piecewise affinity of the oblivious PBE field") {
    const MeanFlowConfig cfg = inst.config(PolicyFamily::oblivious());
    std::mt19937_64 rng(23);
    int tested = 0;
    while (tested < 200) {
      const Theta a = vec2(6 * u01(rng) - 3, 6 * u01(rng) - 3);
      const Theta b = vec2(6 * u01(rng) - 3, 6 * u01(rng) - 3);
      const DeterministicPolicy pat = greedy_policy(q_values(inst.basis, a)).policy;
      bool same_pattern = true;
      for (int s = 0; s <= 6 && same_pattern; ++s)
        same_pattern =
            greedy_policy(q_values(inst.basis, a + (b - a) * (s / 6.0))).policy == pat;
      if (!same_pattern) continue;
      // Second differences vanish on a pattern-constant segment.
      const Eigen::VectorXd f0 = barf(cfg, a);
      const Eigen::VectorXd f1 = barf(cfg, a + (b - a) / 3.0);
      const Eigen::VectorXd f2 = barf(cfg, a + 2.0 * (b - a) / 3.0);
      const Eigen::VectorXd f3 = barf(cfg, b);
      REQUIRE((f2 - 2.0 * f1 + f0).cwiseAbs().maxCoeff() < 1e-10);
      REQUIRE((f3 - 2.0 * f2 + f1).cwiseAbs().maxCoeff() < 1e-10);
      ++tested;
    }
  }

  SECTION("Hurwitz roots attract perturbed flows back") {
    const MeanFlowConfig cfg = inst.config(PolicyFamily::tamed_gibbs(20, 1e-3));
    const RootSet rs = find_roots(cfg, Box::cube(2, -2, 2), 32, 9);
    REQUIRE_FALSE(rs.roots.empty());
    std::mt19937_64 rng(31);
    for (const Root& root : rs.roots) {
      if (!root.jacobian || !root.jacobian->hurwitz) continue;
      const Theta start = root.theta + sphere_point(rng, 2, 1e-3);
      const FlowTrajectory traj = integrate_mean_flow(cfg, start, 20.0, 0.005);
      REQUIRE_FALSE(traj.diverged);
      REQUIRE(barf(cfg, traj.points.back()).norm() <= 1e-6);
      REQUIRE((traj.points.back() - root.theta).norm() < 1e-2);
    }
  }
}
