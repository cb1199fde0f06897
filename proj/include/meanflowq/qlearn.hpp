#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "meanflowq/mdp.hpp"
#include "meanflowq/mean_flow.hpp"
#include "meanflowq/parallel.hpp"
#include "meanflowq/policies.hpp"
#include "meanflowq/rng.hpp"

namespace meanflowq {

struct StepSizeSchedule {
  enum class Kind { Constant, Polynomial };

  Kind kind = Kind::Polynomial;
  double a = 1.0;
  double n0 = 1.0;
  double rho = 0.85;  // in (0.5, 1] for the polynomial kind

  /// Step used for the n-th update, n >= 1.
  double alpha(long n) const {
    if (kind == Kind::Constant) return a;
    return a / std::pow(n0 + static_cast<double>(n), rho);
  }

  void validate() const {
    if (!(a >= 0.0)) throw ModelError("step-size scale must be non-negative");
    if (kind == Kind::Polynomial) {
      if (!(rho > 0.5 && rho <= 1.0)) throw ModelError("polynomial exponent must lie in (0.5, 1]");
      if (!(n0 >= 0.0)) throw ModelError("n0 must be non-negative");
      if (n0 == 0.0 && a > 0.0) throw ModelError("n0 = 0 makes the first step size infinite");
    }
  }

  static StepSizeSchedule constant(double a) { return StepSizeSchedule{Kind::Constant, a, 0.0, 1.0}; }
  static StepSizeSchedule polynomial(double a, double n0, double rho) {
    return StepSizeSchedule{Kind::Polynomial, a, n0, rho};
  }
};

struct RunConfig {
  Theta theta0;
  long n_steps = 0;
  std::uint64_t seed = 0;
  StepSizeSchedule schedule;
  PolicyFamily family;
  Eligibility eligibility = Eligibility::Pbe;
  int x0 = 0;
  long stride = 10;  // theta sampling stride
  double divergence_threshold = 1e8;

  void validate(const FiniteMdp& mdp, const LinearBasis& basis) const {
    if (n_steps < 1) throw ModelError("n_steps must be at least 1");
    if (stride < 1) throw ModelError("stride must be at least 1");
    if (x0 < 0 || x0 >= mdp.n_states) throw ModelError("initial state out of range");
    check_theta(basis, theta0);
    schedule.validate();
  }
};

using VisitCounts = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct Trajectory {
  std::vector<long> steps;    // update indices at the configured stride (plus the start)
  std::vector<Theta> thetas;  // parameter at those indices
  Theta final_theta;
  bool diverged = false;
  VisitCounts visit_counts;
};

namespace detail {

inline Eigen::RowVectorXd policy_row(const PolicyFamily& family, const LinearBasis& basis,
                                     const Theta& theta, int x) {
  // Full-table evaluation: tables here are tiny and this keeps one code path.
  return family.evaluate(basis, theta).probs.row(x);
}

}  // namespace detail

/// Stochastic recursion theta_{n+1} = theta_n + alpha_{n+1} zeta_n D_{n+1}
/// with the PBE eligibility zeta = psi(Z_n) or the model-based MSBE
/// eligibility zeta = psi(Z_n) - gamma sum_x' P_{U_n}(X_n,x') psi(x',
/// phi^theta(x')). Randomness is consumed in a fixed order, two draws per
/// step: the action U_n from the training policy, then the transition
/// X_{n+1}; runs are therefore bit-reproducible per seed. Divergence
/// (|theta| > threshold) sets a flag and stops the run; it is data, not an
/// exception.
inline Trajectory simulate(const FiniteMdp& mdp, const CostMatrix& cost, const LinearBasis& basis,
                           const RunConfig& config) {
  mdp.validate();
  check_cost_shape(mdp, cost);
  basis.validate();
  config.validate(mdp, basis);

  std::mt19937_64 rng(config.seed);
  Trajectory traj;
  traj.visit_counts = VisitCounts::Zero(mdp.n_states, mdp.n_actions);
  Theta theta = config.theta0;
  int x = config.x0;
  traj.steps.push_back(0);
  traj.thetas.push_back(theta);

  for (long n = 0; n < config.n_steps; ++n) {
    const Eigen::RowVectorXd row = detail::policy_row(config.family, basis, theta, x);
    const int u = sample_categorical(rng, row);
    const int xnext = sample_categorical(rng, mdp.P(u).row(x));
    traj.visit_counts(x, u) += 1;

    const QFunction q = q_values(basis, theta);
    const double td = cost(x, u) + mdp.discount * q.row(xnext).minCoeff() - q(x, u);

    Eigen::VectorXd zeta = basis.row(x, u).transpose();
    if (config.eligibility == Eligibility::Msbe) {
      const DeterministicPolicy phi = greedy_policy(q).policy;
      Eigen::VectorXd expected = Eigen::VectorXd::Zero(basis.dim());
      for (int xp = 0; xp < mdp.n_states; ++xp)
        expected += mdp.P(u)(x, xp) * basis.row(xp, phi[static_cast<std::size_t>(xp)]).transpose();
      zeta -= mdp.discount * expected;
    }

    theta += config.schedule.alpha(n + 1) * td * zeta;
    x = xnext;

    if (!theta.allFinite() || theta.norm() > config.divergence_threshold) {
      traj.diverged = true;
      traj.steps.push_back(n + 1);
      traj.thetas.push_back(theta);
      break;
    }
    if ((n + 1) % config.stride == 0 || n + 1 == config.n_steps) {
      traj.steps.push_back(n + 1);
      traj.thetas.push_back(theta);
    }
  }
  traj.final_theta = theta;
  return traj;
}

struct RunOutcome {
  Theta final_theta;
  bool diverged = false;
  double j_estimate = 0.0;
  double j_std_error = 0.0;
};

struct BestOfM {
  std::vector<RunOutcome> runs;
  int best_index = -1;  // -1 when every run diverged
};

/// M independent seeded runs (run i draws its simulation seed from substream
/// 2i and its evaluation seed from substream 2i+1 of the master seed). Each
/// final parameter is scored by extracting the Q^theta-greedy policy and
/// estimating its discounted cost from eval_x0 by Monte Carlo; diverged runs
/// are flagged and excluded from the argmin.
inline BestOfM best_of_m(const FiniteMdp& mdp, const CostMatrix& cost, const LinearBasis& basis,
                         const RunConfig& config, int m_runs, int eval_x0, long eval_paths,
                         double eval_bias = 1e-6) {
  if (m_runs < 1) throw std::invalid_argument("M must be at least 1");
  if (eval_x0 < 0 || eval_x0 >= mdp.n_states) throw std::invalid_argument("eval state out of range");
  const long horizon = horizon_for_bias(mdp, cost, eval_bias);
  BestOfM out;
  out.runs.resize(static_cast<std::size_t>(m_runs));
  parallel_for_index(m_runs, [&](int i) {
    RunConfig rc = config;
    rc.seed = derive_seed(config.seed, 2 * static_cast<std::uint64_t>(i));
    const Trajectory traj = simulate(mdp, cost, basis, rc);
    RunOutcome& run = out.runs[static_cast<std::size_t>(i)];
    run.final_theta = traj.final_theta;
    run.diverged = traj.diverged;
    if (!traj.diverged) {
      const DeterministicPolicy greedy = greedy_policy(q_values(basis, traj.final_theta)).policy;
      const McEstimate est =
          discounted_cost_mc(mdp, cost, greedy, eval_x0, horizon, eval_paths,
                             derive_seed(config.seed, 2 * static_cast<std::uint64_t>(i) + 1));
      run.j_estimate = est.mean;
      run.j_std_error = est.std_error;
    }
  });
  for (int i = 0; i < m_runs; ++i) {
    const RunOutcome& run = out.runs[static_cast<std::size_t>(i)];
    if (run.diverged) continue;
    if (out.best_index < 0 || run.j_estimate < out.runs[static_cast<std::size_t>(out.best_index)].j_estimate)
      out.best_index = i;
  }
  return out;
}

}  // namespace meanflowq
