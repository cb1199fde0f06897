#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "meanflowq/errors.hpp"
#include "meanflowq/rng.hpp"

namespace meanflowq {

using CostMatrix = Eigen::MatrixXd;  // n_states x n_actions
using QFunction = Eigen::MatrixXd;   // n_states x n_actions
using DeterministicPolicy = std::vector<int>;
using JointPmf = Eigen::VectorXd;  // over pairs z = x*n_actions + u
using StatePmf = Eigen::VectorXd;

/// Finite MDP: per-action row-stochastic transition matrices and a discount.
struct FiniteMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<Eigen::MatrixXd> transitions;  // one n_states x n_states matrix per action
  double discount = 0.0;

  int joint_size() const { return n_states * n_actions; }
  int zindex(int x, int u) const { return x * n_actions + u; }

  const Eigen::MatrixXd& P(int u) const { return transitions[static_cast<std::size_t>(u)]; }

  void validate() const {
    if (n_states < 1 || n_actions < 1) throw ModelError("state and action counts must be positive");
    if (static_cast<int>(transitions.size()) != n_actions)
      throw ModelError("expected one transition matrix per action");
    // gamma = 0 is admitted: several identities are exercised at the
    // undiscounted-degenerate point even though models of interest have
    // gamma in (0,1).
    if (!(discount >= 0.0 && discount < 1.0)) throw ModelError("discount must lie in [0,1)");
    for (const auto& P : transitions) {
      if (P.rows() != n_states || P.cols() != n_states)
        throw ModelError("transition matrix has wrong shape");
      if ((P.array() < 0.0).any()) throw ModelError("negative transition probability");
      for (int x = 0; x < n_states; ++x)
        if (std::abs(P.row(x).sum() - 1.0) > 1e-12)
          throw ModelError("transition row " + std::to_string(x) + " does not sum to 1");
    }
  }
};

/// Row-stochastic table phi(u|x).
struct RandomizedPolicy {
  Eigen::MatrixXd probs;  // n_states x n_actions

  int n_states() const { return static_cast<int>(probs.rows()); }
  int n_actions() const { return static_cast<int>(probs.cols()); }

  void validate() const {
    if ((probs.array() < 0.0).any()) throw ModelError("negative policy probability");
    for (int x = 0; x < probs.rows(); ++x)
      if (std::abs(probs.row(x).sum() - 1.0) > 1e-12)
        throw ModelError("policy row does not sum to 1");
  }

  static RandomizedPolicy point_mass(const DeterministicPolicy& policy, int n_actions) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(static_cast<int>(policy.size()), n_actions);
    for (int x = 0; x < static_cast<int>(policy.size()); ++x) p(x, policy[static_cast<std::size_t>(x)]) = 1.0;
    return RandomizedPolicy{std::move(p)};
  }
};

inline void check_policy_shape(const FiniteMdp& mdp, const RandomizedPolicy& policy) {
  if (policy.n_states() != mdp.n_states || policy.n_actions() != mdp.n_actions)
    throw DimensionError("policy table does not match the MDP dimensions");
}

/// Transition matrix of the joint pair process:
/// T(z,z') = P_u(x,x') phi(u'|x') for z=(x,u), z'=(x',u').
inline Eigen::MatrixXd joint_transition(const FiniteMdp& mdp, const RandomizedPolicy& policy) {
  check_policy_shape(mdp, policy);
  const int n = mdp.joint_size();
  Eigen::MatrixXd T(n, n);
  for (int x = 0; x < mdp.n_states; ++x)
    for (int u = 0; u < mdp.n_actions; ++u) {
      const int z = mdp.zindex(x, u);
      for (int xp = 0; xp < mdp.n_states; ++xp) {
        const double p = mdp.P(u)(x, xp);
        for (int up = 0; up < mdp.n_actions; ++up)
          T(z, mdp.zindex(xp, up)) = p * policy.probs(xp, up);
      }
    }
  return T;
}

/// Stationary pmf of a row-stochastic matrix by a direct nullspace solve of
/// (T' - I) w = 0. Throws MultichainError when the nullspace has dimension
/// greater than one (singular values below 1e-9).
inline JointPmf stationary_pmf(const Eigen::MatrixXd& T) {
  const int n = static_cast<int>(T.rows());
  if (T.cols() != n) throw DimensionError("transition matrix must be square");
  if (n == 1) return JointPmf::Ones(1);
  Eigen::MatrixXd M = T.transpose() - Eigen::MatrixXd::Identity(n, n);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  int null_dim = 0;
  for (int i = 0; i < n; ++i)
    if (sv(i) < 1e-9) ++null_dim;
  if (null_dim > 1) throw MultichainError("stationary pmf is not unique (multichain)");
  Eigen::VectorXd v = svd.matrixV().col(n - 1);
  if (v.sum() < 0) v = -v;
  v = v.cwiseMax(0.0);  // shave round-off noise on transient pairs
  const double s = v.sum();
  if (s <= 0) throw ConvergenceError("stationary solve produced a degenerate vector");
  return v / s;
}

inline JointPmf stationary_joint_pmf(const Eigen::MatrixXd& T) { return stationary_pmf(T); }

/// Marginal over actions of a joint pmf.
inline StatePmf state_marginal(const FiniteMdp& mdp, const JointPmf& joint) {
  StatePmf pi = StatePmf::Zero(mdp.n_states);
  for (int x = 0; x < mdp.n_states; ++x)
    for (int u = 0; u < mdp.n_actions; ++u) pi(x) += joint(mdp.zindex(x, u));
  return pi;
}

inline void check_cost_shape(const FiniteMdp& mdp, const CostMatrix& cost) {
  if (cost.rows() != mdp.n_states || cost.cols() != mdp.n_actions)
    throw DimensionError("cost matrix does not match the MDP dimensions");
  if (!cost.allFinite()) throw ModelError("cost matrix has non-finite entries");
}

/// Greedy policy of a Q table: per-state argmin with ties resolved to the
/// lowest action index. `continuous` is true iff the minimizer gap exceeds
/// gap_tol at every state.
struct GreedyResult {
  DeterministicPolicy policy;
  bool continuous = false;
  double min_gap = 0.0;  // smallest over states of (second smallest - smallest)
};

inline GreedyResult greedy_policy(const QFunction& q, double gap_tol = 1e-9) {
  const int n = static_cast<int>(q.rows());
  const int m = static_cast<int>(q.cols());
  GreedyResult out;
  out.policy.resize(static_cast<std::size_t>(n));
  out.min_gap = std::numeric_limits<double>::infinity();
  for (int x = 0; x < n; ++x) {
    int best = 0;
    for (int u = 1; u < m; ++u)
      if (q(x, u) < q(x, best)) best = u;
    out.policy[static_cast<std::size_t>(x)] = best;
    double second = std::numeric_limits<double>::infinity();
    for (int u = 0; u < m; ++u)
      if (u != best) second = std::min(second, q(x, u));
    out.min_gap = std::min(out.min_gap, m > 1 ? second - q(x, best) : std::numeric_limits<double>::infinity());
  }
  out.continuous = out.min_gap > gap_tol;
  return out;
}

/// Fixed-policy Q-function by direct linear solve of
/// Q(x,u) = c(x,u) + gamma * sum_x' P_u(x,x') Q(x', phi(x')).
inline QFunction policy_q_evaluation(const FiniteMdp& mdp, const CostMatrix& cost,
                                     const DeterministicPolicy& policy) {
  check_cost_shape(mdp, cost);
  if (static_cast<int>(policy.size()) != mdp.n_states)
    throw DimensionError("policy does not cover every state");
  for (int a : policy)
    if (a < 0 || a >= mdp.n_actions) throw DimensionError("policy action out of range");
  const int n = mdp.joint_size();
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd rhs(n);
  for (int x = 0; x < mdp.n_states; ++x)
    for (int u = 0; u < mdp.n_actions; ++u) {
      const int z = mdp.zindex(x, u);
      rhs(z) = cost(x, u);
      for (int xp = 0; xp < mdp.n_states; ++xp)
        M(z, mdp.zindex(xp, policy[static_cast<std::size_t>(xp)])) -= mdp.discount * mdp.P(u)(x, xp);
    }
  const Eigen::VectorXd q = M.partialPivLu().solve(rhs);
  QFunction out(mdp.n_states, mdp.n_actions);
  for (int x = 0; x < mdp.n_states; ++x)
    for (int u = 0; u < mdp.n_actions; ++u) out(x, u) = q(mdp.zindex(x, u));
  return out;
}

/// Optimal Q-function. Value iteration down to a successive-difference
/// threshold that guarantees a 1e-10 Bellman residual, then a policy-iteration
/// polish (exact linear solves) so the returned table solves the Bellman
/// equation to round-off. Needed because several identities downstream are
/// asserted at 1e-12 scale.
inline QFunction value_iteration(const FiniteMdp& mdp, const CostMatrix& cost,
                                 long max_iterations = 1000000) {
  mdp.validate();
  check_cost_shape(mdp, cost);
  const double g = mdp.discount;
  const double stop = g > 0.0 ? (1.0 - g) * 1e-10 / g : 1e-10;
  QFunction q = CostMatrix::Zero(mdp.n_states, mdp.n_actions);
  long it = 0;
  for (;; ++it) {
    if (it >= max_iterations) throw ConvergenceError("value iteration exceeded its iteration cap");
    Eigen::VectorXd qmin(mdp.n_states);
    for (int x = 0; x < mdp.n_states; ++x) qmin(x) = q.row(x).minCoeff();
    QFunction next(mdp.n_states, mdp.n_actions);
    for (int u = 0; u < mdp.n_actions; ++u)
      next.col(u) = cost.col(u) + g * (mdp.P(u) * qmin);
    const double diff = (next - q).cwiseAbs().maxCoeff();
    q = next;
    if (diff <= stop) break;
  }
  // Policy-iteration finish: greedy is optimal at this accuracy, so one or
  // two exact evaluations land on the fixed point.
  for (int round = 0; round < 100; ++round) {
    const DeterministicPolicy phi = greedy_policy(q).policy;
    q = policy_q_evaluation(mdp, cost, phi);
    if (greedy_policy(q).policy == phi) break;
  }
  return q;
}

/// Sup-norm residual of the Bellman equation at Q.
inline double bellman_residual(const FiniteMdp& mdp, const CostMatrix& cost, const QFunction& q) {
  Eigen::VectorXd qmin(mdp.n_states);
  for (int x = 0; x < mdp.n_states; ++x) qmin(x) = q.row(x).minCoeff();
  double r = 0.0;
  for (int u = 0; u < mdp.n_actions; ++u) {
    const Eigen::VectorXd t = cost.col(u) + mdp.discount * (mdp.P(u) * qmin) - q.col(u);
    r = std::max(r, t.cwiseAbs().maxCoeff());
  }
  return r;
}

/// Horizon H with gamma^H * max|c| / (1-gamma) <= bias: truncating the
/// discounted sum at H keeps the bias below the requested bound.
inline long horizon_for_bias(const FiniteMdp& mdp, const CostMatrix& cost, double bias = 1e-6) {
  const double cmax = cost.cwiseAbs().maxCoeff();
  if (cmax == 0.0 || mdp.discount == 0.0) return 1;
  const double target = bias * (1.0 - mdp.discount) / cmax;
  long h = static_cast<long>(std::ceil(std::log(target) / std::log(mdp.discount)));
  return std::max<long>(h, 1);
}

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Monte Carlo estimate of the discounted cost J(x0) under a randomized
/// policy. Each step consumes exactly two draws, in this order: the action
/// (inverse CDF on the policy row), then the next state (inverse CDF on the
/// transition row); runs are reproducible per seed.
inline McEstimate discounted_cost_mc(const FiniteMdp& mdp, const CostMatrix& cost,
                                     const RandomizedPolicy& policy, int x0, long horizon,
                                     long n_paths, std::uint64_t seed) {
  check_policy_shape(mdp, policy);
  check_cost_shape(mdp, cost);
  if (x0 < 0 || x0 >= mdp.n_states) throw std::invalid_argument("initial state out of range");
  if (n_paths < 1) throw std::invalid_argument("n_paths must be positive");
  if (horizon < 1) throw std::invalid_argument("horizon must be positive");
  std::mt19937_64 rng(seed);
  double sum = 0.0, sumsq = 0.0;
  for (long p = 0; p < n_paths; ++p) {
    int x = x0;
    double total = 0.0, disc = 1.0;
    for (long k = 0; k < horizon; ++k) {
      const int u = sample_categorical(rng, policy.probs.row(x));
      total += disc * cost(x, u);
      x = sample_categorical(rng, mdp.P(u).row(x));
      disc *= mdp.discount;
    }
    sum += total;
    sumsq += total * total;
  }
  McEstimate est;
  est.mean = sum / static_cast<double>(n_paths);
  if (n_paths > 1) {
    const double var = (sumsq - sum * sum / static_cast<double>(n_paths)) / static_cast<double>(n_paths - 1);
    est.std_error = std::sqrt(std::max(var, 0.0) / static_cast<double>(n_paths));
  }
  return est;
}

inline McEstimate discounted_cost_mc(const FiniteMdp& mdp, const CostMatrix& cost,
                                     const DeterministicPolicy& policy, int x0, long horizon,
                                     long n_paths, std::uint64_t seed) {
  return discounted_cost_mc(mdp, cost, RandomizedPolicy::point_mass(policy, mdp.n_actions), x0,
                            horizon, n_paths, seed);
}

}  // namespace meanflowq
