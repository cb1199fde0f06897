#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "meanflowq/errors.hpp"
#include "meanflowq/quadrature.hpp"

namespace meanflowq {

/// Scalar-Gaussian model: X_{k+1} = alpha X_k + W_{k+1} with W ~ N(0,1)
/// i.i.d., two actions, cost c(x,u) = x^2 + w u^2, and the one-dimensional
/// function class Q^theta(x,u) = theta [(1-u) psi0(x) + u psi1(x)] with
/// psi1(x) = e^x/(1+e^x) and psi0(x) = r + psi1(m - x). The default training
/// input is i.i.d. uniform on {0,1}. The state dynamics ignore the action, so
/// the stationary state law is N(0, 1/(1-alpha^2)) under every policy and all
/// steady-state expectations reduce to quadrature.
struct Gauss1dModel {
  double alpha = 0.5;
  double gamma = 0.9;
  double r = 1.0;
  double m = -1.0;
  double w = 10.0;
  int quad_order = 64;

  // Test hooks: replace the feature functions (degenerate bases have closed
  // moment values).
  std::function<double(double)> psi0_override;
  std::function<double(double)> psi1_override;

  double psi1(double x) const {
    if (psi1_override) return psi1_override(x);
    return 1.0 / (1.0 + std::exp(-x));
  }
  double psi0(double x) const {
    if (psi0_override) return psi0_override(x);
    return r + 1.0 / (1.0 + std::exp(-(m - x)));
  }
  double psi(double x, int u) const { return u == 0 ? psi0(x) : psi1(x); }
  double cost(double x, int u) const { return x * x + w * static_cast<double>(u * u); }

  double stationary_std() const { return std::sqrt(1.0 / (1.0 - alpha * alpha)); }

  // Printed tie conventions: the theta >= 0 greedy branch keeps ">=", the
  // theta < 0 branch keeps "<=" (a measure-zero set either way).
  int phi_plus(double x) const { return psi0(x) >= psi1(x) ? 1 : 0; }
  int phi_minus(double x) const { return psi0(x) <= psi1(x) ? 1 : 0; }

  void validate() const {
    if (!(std::abs(alpha) < 1.0)) throw ModelError("|alpha| must be below 1 for stationarity");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ModelError("discount must lie in [0,1)");
    if (quad_order < 16) throw ModelError("quadrature order must be at least 16");
  }

  /// Crossing points of psi0 - psi1. Compositions with the greedy selectors
  /// are smooth except at these points, so conditional expectations split
  /// panels there.
  std::vector<double> feature_crossings() const {
    const double span = 40.0 + 10.0 * stationary_std();
    return scan_zeros([&](double x) { return psi0(x) - psi1(x); }, -span, span);
  }
};

/// Steady-state moments under the oblivious uniform input:
///   R        = E[psi(Z)^2]
///   R1_plus  = E[psi(Z_k) psi(X_{k+1}, phi_plus(X_{k+1}))]
///   R1_minus = E[psi(Z_k) psi(X_{k+1}, phi_minus(X_{k+1}))]
///   E_psi_c  = E[psi(Z) c(Z)]
/// Values are taken at twice the configured order; check_error records the
/// relative change under order doubling and is required to be <= 1e-8.
struct Gauss1dMoments {
  double R = 0.0;
  double R1_plus = 0.0;
  double R1_minus = 0.0;
  double E_psi_c = 0.0;
  double check_error = 0.0;
};

namespace detail {

struct Gauss1dRules {
  GaussHermite outer;   // stationary-law direction, smooth integrands
  GaussLegendre panel;  // conditional direction, split at feature crossings
  std::vector<double> crossings;
};

inline Gauss1dRules gauss1d_rules(const Gauss1dModel& model, int order) {
  return Gauss1dRules{gauss_hermite(order), gauss_legendre(order), model.feature_crossings()};
}

struct RawMoments {
  double R, R1p, R1m, Epc;
};

inline RawMoments gauss1d_raw_moments(const Gauss1dModel& model, const Gauss1dRules& rules) {
  const double sigma = model.stationary_std();
  RawMoments mo{0.0, 0.0, 0.0, 0.0};
  mo.R = gauss_expectation(rules.outer, 0.0, sigma, [&](double x) {
    const double p0 = model.psi0(x), p1 = model.psi1(x);
    return 0.5 * (p0 * p0 + p1 * p1);
  });
  mo.Epc = gauss_expectation(rules.outer, 0.0, sigma, [&](double x) {
    return 0.5 * (model.psi0(x) * model.cost(x, 0) + model.psi1(x) * model.cost(x, 1));
  });
  // U_k is independent of X_{k+1}, so psi(Z_k) averages to (psi0+psi1)/2.
  // The inner conditional expectation is kinked at the feature crossings;
  // its Gaussian smoothing in x keeps the outer integrand smooth.
  mo.R1p = gauss_expectation(rules.outer, 0.0, sigma, [&](double x) {
    const double mean_psi = 0.5 * (model.psi0(x) + model.psi1(x));
    return mean_psi *
           gauss_expectation_split(rules.panel, model.alpha * x, 1.0, rules.crossings,
                                   [&](double xp) { return model.psi(xp, model.phi_plus(xp)); });
  });
  mo.R1m = gauss_expectation(rules.outer, 0.0, sigma, [&](double x) {
    const double mean_psi = 0.5 * (model.psi0(x) + model.psi1(x));
    return mean_psi *
           gauss_expectation_split(rules.panel, model.alpha * x, 1.0, rules.crossings,
                                   [&](double xp) { return model.psi(xp, model.phi_minus(xp)); });
  });
  return mo;
}

}  // namespace detail

inline Gauss1dMoments moments(const Gauss1dModel& model) {
  model.validate();
  const detail::RawMoments lo =
      detail::gauss1d_raw_moments(model, detail::gauss1d_rules(model, model.quad_order));
  const detail::RawMoments hi =
      detail::gauss1d_raw_moments(model, detail::gauss1d_rules(model, 2 * model.quad_order));
  const auto rel = [](double a, double b) { return std::abs(a - b) / (1.0 + std::abs(b)); };
  Gauss1dMoments out;
  out.R = hi.R;
  out.R1_plus = hi.R1p;
  out.R1_minus = hi.R1m;
  out.E_psi_c = hi.Epc;
  out.check_error =
      std::max({rel(lo.R, hi.R), rel(lo.R1p, hi.R1p), rel(lo.R1m, hi.R1m), rel(lo.Epc, hi.Epc)});
  if (out.check_error > 1e-8)
    throw ConvergenceError("quadrature did not stabilize under order doubling");
  return out;
}

enum class CaseLabel { Case1, Case2, Case3 };

inline std::string to_string(CaseLabel c) {
  switch (c) {
    case CaseLabel::Case1: return "Case1";
    case CaseLabel::Case2: return "Case2";
    case CaseLabel::Case3: return "Case3";
  }
  return "?";
}

struct CaseReport {
  CaseLabel label = CaseLabel::Case1;
  Gauss1dMoments witness;
  double margin = 0.0;  // gamma*R1_minus - R
};

/// Three-way outcome classification for Q-learning under the oblivious
/// uniform policy:
///   Case1: gamma R1_minus < R  -> unique PBE solution, stable mean flow.
///   Case2: gamma R1_minus > R and E[psi c] > 0 -> two PBE solutions
///          theta*- < 0 < theta*+; the flow diverges below theta*-.
///   Case3: gamma R1_minus > R and E[psi c] < 0 -> no PBE solution.
/// The sign split follows the field geometry: with the left slope
/// -R + gamma R1_minus positive, the piecewise-linear field crosses zero on
/// both sides of the origin exactly when f(0) = E[psi c] is positive.
/// Refuses to label (Marginal) when the slope inequality is within 1e-6 of
/// equality.
inline CaseReport classify(const Gauss1dModel& model) {
  CaseReport rep;
  rep.witness = moments(model);
  rep.margin = model.gamma * rep.witness.R1_minus - rep.witness.R;
  if (std::abs(rep.margin) < 1e-6)
    throw MarginalError("gamma*R1_minus is within tolerance of R; refusing to classify");
  if (rep.margin < 0.0)
    rep.label = CaseLabel::Case1;
  else
    rep.label = rep.witness.E_psi_c > 0.0 ? CaseLabel::Case2 : CaseLabel::Case3;
  return rep;
}

struct Gauss1dPolicy {
  enum class Kind { Oblivious, Greedy, TamedGibbs };
  Kind kind = Kind::Oblivious;
  double kappa = 5.0;
  double epsilon = 0.0;

  static Gauss1dPolicy oblivious() { return Gauss1dPolicy{Kind::Oblivious, 0.0, 0.0}; }
  static Gauss1dPolicy greedy() { return Gauss1dPolicy{Kind::Greedy, 0.0, 0.0}; }
  static Gauss1dPolicy tamed_gibbs(double kappa, double epsilon) {
    return Gauss1dPolicy{Kind::TamedGibbs, kappa, epsilon};
  }
};

namespace detail {

// P{U=1 | X=x} at parameter theta.
inline double action_one_prob(const Gauss1dModel& model, double theta, const Gauss1dPolicy& policy,
                              double x) {
  switch (policy.kind) {
    case Gauss1dPolicy::Kind::Oblivious:
      return 0.5;
    case Gauss1dPolicy::Kind::Greedy:
      return theta >= 0.0 ? static_cast<double>(model.phi_plus(x))
                          : static_cast<double>(model.phi_minus(x));
    case Gauss1dPolicy::Kind::TamedGibbs: {
      const double kt = policy.kappa / std::sqrt(1.0 + theta * theta);
      const double q0 = theta * model.psi0(x), q1 = theta * model.psi1(x);
      const double qmin = std::min(q0, q1);
      const double w0 = std::exp(-kt * (q0 - qmin)), w1 = std::exp(-kt * (q1 - qmin));
      return (1.0 - policy.epsilon) * w1 / (w0 + w1) + policy.epsilon * 0.5;
    }
  }
  return 0.5;
}

inline double barf_1d_quadrature(const Gauss1dModel& model, double theta,
                                 const Gauss1dPolicy& policy, const Gauss1dRules& rules) {
  const double sigma = model.stationary_std();
  const auto integrand = [&](double x) {
    const double future =
        gauss_expectation_split(rules.panel, model.alpha * x, 1.0, rules.crossings, [&](double xp) {
          return std::min(theta * model.psi0(xp), theta * model.psi1(xp));
        });
    const double p1 = action_one_prob(model, theta, policy, x);
    double acc = 0.0;
    for (int u = 0; u < 2; ++u) {
      const double pu = u == 1 ? p1 : 1.0 - p1;
      if (pu == 0.0) continue;
      const double psi = model.psi(x, u);
      acc += pu * psi * (-theta * psi + model.cost(x, u) + model.gamma * future);
    }
    return acc;
  };
  // The greedy selector makes the outer integrand itself kinked; the smooth
  // families keep it smooth and take the Hermite route.
  if (policy.kind == Gauss1dPolicy::Kind::Greedy)
    return gauss_expectation_split(rules.panel, 0.0, sigma, rules.crossings, integrand);
  return gauss_expectation(rules.outer, 0.0, sigma, integrand);
}

}  // namespace detail

/// One-dimensional mean flow on a grid of parameters under the chosen
/// training policy. The oblivious branch uses the closed form
/// A(theta) theta + E[psi c] with A(theta) = -R + gamma (R1_plus for
/// theta >= 0, else R1_minus), cross-checked per point against direct
/// quadrature of the defining expectation to 1e-8.
inline std::vector<double> barf_1d_grid(const Gauss1dModel& model,
                                        const std::vector<double>& thetas,
                                        const Gauss1dPolicy& policy) {
  model.validate();
  const detail::Gauss1dRules rules = detail::gauss1d_rules(model, 2 * model.quad_order);
  std::vector<double> out;
  out.reserve(thetas.size());
  if (policy.kind == Gauss1dPolicy::Kind::Oblivious) {
    const Gauss1dMoments mo = moments(model);
    for (double theta : thetas) {
      const double slope = -mo.R + model.gamma * (theta >= 0.0 ? mo.R1_plus : mo.R1_minus);
      const double closed = slope * theta + mo.E_psi_c;
      const double direct = detail::barf_1d_quadrature(model, theta, policy, rules);
      if (std::abs(closed - direct) > 1e-8 * (1.0 + std::abs(closed)))
        throw ConvergenceError("oblivious closed form disagrees with direct quadrature");
      out.push_back(closed);
    }
    return out;
  }
  for (double theta : thetas) out.push_back(detail::barf_1d_quadrature(model, theta, policy, rules));
  return out;
}

inline double barf_1d(const Gauss1dModel& model, double theta, const Gauss1dPolicy& policy) {
  return barf_1d_grid(model, {theta}, policy).front();
}

}  // namespace meanflowq
