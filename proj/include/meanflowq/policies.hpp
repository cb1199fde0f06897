#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "meanflowq/errors.hpp"
#include "meanflowq/mdp.hpp"

namespace meanflowq {

using Theta = Eigen::VectorXd;

/// Feature table psi(x,u) in R^d, stored one row per pair z = x*n_actions+u.
struct LinearBasis {
  Eigen::MatrixXd psi;  // (n_states*n_actions) x d
  int n_states = 0;
  int n_actions = 0;

  int dim() const { return static_cast<int>(psi.cols()); }
  Eigen::RowVectorXd row(int x, int u) const { return psi.row(x * n_actions + u); }

  /// Needed by the concavity lemma tests: concavity of the mean flow
  /// components is only guaranteed for non-negative features.
  bool nonnegative() const { return (psi.array() >= 0.0).all(); }

  void validate() const {
    if (n_states < 1 || n_actions < 1) throw ModelError("basis dimensions must be positive");
    if (psi.rows() != static_cast<long>(n_states) * n_actions)
      throw ModelError("basis row count does not equal n_states*n_actions");
    if (!psi.allFinite()) throw ModelError("basis has non-finite entries");
  }

  /// One-hot tabular basis, d = n_states*n_actions.
  static LinearBasis tabular(int n_states, int n_actions) {
    LinearBasis b;
    b.n_states = n_states;
    b.n_actions = n_actions;
    b.psi = Eigen::MatrixXd::Identity(n_states * n_actions, n_states * n_actions);
    return b;
  }
};

inline void check_theta(const LinearBasis& basis, const Theta& theta) {
  if (theta.size() != basis.dim()) throw DimensionError("theta dimension does not match basis");
  if (!theta.allFinite()) throw ModelError("theta has non-finite entries");
}

/// Q^theta(x,u) = theta . psi(x,u).
inline QFunction q_values(const LinearBasis& basis, const Theta& theta) {
  check_theta(basis, theta);
  const Eigen::VectorXd flat = basis.psi * theta;
  QFunction q(basis.n_states, basis.n_actions);
  for (int x = 0; x < basis.n_states; ++x)
    for (int u = 0; u < basis.n_actions; ++u) q(x, u) = flat(x * basis.n_actions + u);
  return q;
}

inline Eigen::VectorXd uniform_pmf(int n) { return Eigen::VectorXd::Constant(n, 1.0 / n); }

struct TamedGibbsParams {
  double kappa = 20.0;
  double epsilon = 1e-3;
  Eigen::VectorXd nu;  // empty means uniform

  void validate(int n_actions) const {
    if (!(kappa > 0.0)) throw ModelError("kappa must be positive");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ModelError("epsilon must lie in [0,1]");
    if (nu.size() != 0) {
      if (nu.size() != n_actions) throw DimensionError("nu dimension does not match action count");
      if ((nu.array() < 0.0).any() || std::abs(nu.sum() - 1.0) > 1e-12)
        throw ModelError("nu is not a pmf");
    }
  }
};

/// (epsilon,kappa)-tamed Gibbs policy:
///   phi(u|x) = (1-eps) exp(-kappa_theta Q^theta(x,u)) / Z(x) + eps nu(u),
/// with kappa_theta = kappa / sqrt(1 + |theta|^2). The Gibbs weights are
/// computed with max-subtraction so large kappa*Q cannot overflow.
inline RandomizedPolicy tamed_gibbs(const LinearBasis& basis, const Theta& theta,
                                    const TamedGibbsParams& params) {
  params.validate(basis.n_actions);
  const QFunction q = q_values(basis, theta);
  const Eigen::VectorXd nu = params.nu.size() ? params.nu : uniform_pmf(basis.n_actions);
  const double kappa_theta = params.kappa / std::sqrt(1.0 + theta.squaredNorm());
  Eigen::MatrixXd probs(basis.n_states, basis.n_actions);
  for (int x = 0; x < basis.n_states; ++x) {
    const double qmin = q.row(x).minCoeff();
    Eigen::ArrayXd w = (-kappa_theta * (q.row(x).transpose().array() - qmin)).exp();
    w /= w.sum();
    probs.row(x) = ((1.0 - params.epsilon) * w + params.epsilon * nu.array()).transpose();
  }
  return RandomizedPolicy{std::move(probs)};
}

/// phi(u|x) = (1-eps) 1{u = greedy(x)} + eps nu(u), greedy ties to the lowest
/// action index.
inline RandomizedPolicy epsilon_greedy(const LinearBasis& basis, const Theta& theta, double epsilon,
                                       const Eigen::VectorXd& nu_in = Eigen::VectorXd()) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ModelError("epsilon must lie in [0,1]");
  const Eigen::VectorXd nu = nu_in.size() ? nu_in : uniform_pmf(basis.n_actions);
  if (nu.size() != basis.n_actions) throw DimensionError("nu dimension does not match action count");
  const DeterministicPolicy greedy = greedy_policy(q_values(basis, theta)).policy;
  Eigen::MatrixXd probs(basis.n_states, basis.n_actions);
  for (int x = 0; x < basis.n_states; ++x) {
    probs.row(x) = (epsilon * nu).transpose();
    probs(x, greedy[static_cast<std::size_t>(x)]) += 1.0 - epsilon;
  }
  return RandomizedPolicy{std::move(probs)};
}

/// Training-policy selector used by experiment configs.
struct PolicyFamily {
  enum class Kind { TamedGibbs, EpsGreedy, Oblivious, Greedy };

  Kind kind = Kind::TamedGibbs;
  double kappa = 20.0;
  double epsilon = 1e-3;
  Eigen::VectorXd nu;  // empty means uniform

  static PolicyFamily tamed_gibbs(double kappa, double epsilon) {
    return PolicyFamily{Kind::TamedGibbs, kappa, epsilon, {}};
  }
  static PolicyFamily eps_greedy(double epsilon) { return PolicyFamily{Kind::EpsGreedy, 1.0, epsilon, {}}; }
  static PolicyFamily oblivious() { return PolicyFamily{Kind::Oblivious, 1.0, 1.0, {}}; }
  static PolicyFamily greedy() { return PolicyFamily{Kind::Greedy, 1.0, 0.0, {}}; }

  /// True when the policy table cannot depend on theta.
  bool is_oblivious() const {
    if (kind == Kind::Oblivious) return true;
    if ((kind == Kind::TamedGibbs || kind == Kind::EpsGreedy) && epsilon == 1.0) return true;
    return false;
  }

  RandomizedPolicy evaluate(const LinearBasis& basis, const Theta& theta) const {
    switch (kind) {
      case Kind::TamedGibbs:
        return meanflowq::tamed_gibbs(basis, theta, TamedGibbsParams{kappa, epsilon, nu});
      case Kind::EpsGreedy:
        return epsilon_greedy(basis, theta, epsilon, nu);
      case Kind::Oblivious: {
        const Eigen::VectorXd p = nu.size() ? nu : uniform_pmf(basis.n_actions);
        Eigen::MatrixXd probs(basis.n_states, basis.n_actions);
        for (int x = 0; x < basis.n_states; ++x) probs.row(x) = p.transpose();
        return RandomizedPolicy{std::move(probs)};
      }
      case Kind::Greedy:
        return RandomizedPolicy::point_mass(greedy_policy(q_values(basis, theta)).policy,
                                            basis.n_actions);
    }
    throw std::logic_error("unreachable");
  }

  std::string name() const {
    switch (kind) {
      case Kind::TamedGibbs: return "tamed_gibbs";
      case Kind::EpsGreedy: return "eps_greedy";
      case Kind::Oblivious: return "oblivious";
      case Kind::Greedy: return "greedy";
    }
    return "?";
  }
};

/// Score Lambda(x,u) = d/dtheta log phi^theta(u|x), by central finite
/// differences with step 1e-6 (1+|theta|). Family-agnostic; accuracy O(h^2).
inline Eigen::VectorXd score_function(const PolicyFamily& family, const LinearBasis& basis,
                                      const Theta& theta, int x, int u) {
  if (x < 0 || x >= basis.n_states || u < 0 || u >= basis.n_actions)
    throw DimensionError("state-action pair out of range");
  const double p0 = family.evaluate(basis, theta).probs(x, u);
  if (p0 < 1e-300) throw ZeroProbabilityError("score requested at a zero-probability pair");
  const int d = basis.dim();
  const double h = 1e-6 * (1.0 + theta.norm());
  Eigen::VectorXd grad(d);
  for (int j = 0; j < d; ++j) {
    Theta tp = theta, tm = theta;
    tp(j) += h;
    tm(j) -= h;
    const double pp = family.evaluate(basis, tp).probs(x, u);
    const double pm = family.evaluate(basis, tm).probs(x, u);
    if (pp < 1e-300 || pm < 1e-300)
      throw ZeroProbabilityError("score stencil hit a zero-probability pair");
    grad(j) = (std::log(pp) - std::log(pm)) / (2.0 * h);
  }
  return grad;
}

}  // namespace meanflowq
