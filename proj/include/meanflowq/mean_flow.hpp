#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "meanflowq/errors.hpp"
#include "meanflowq/mdp.hpp"
#include "meanflowq/parallel.hpp"
#include "meanflowq/policies.hpp"
#include "meanflowq/rng.hpp"

namespace meanflowq {

enum class Eligibility { Pbe, Msbe };

/// Everything needed to evaluate the mean-flow field exactly: the model, the
/// cost, the function class, the training-policy family and the eligibility
/// choice.
struct MeanFlowConfig {
  FiniteMdp mdp;
  CostMatrix cost;
  LinearBasis basis;
  PolicyFamily family;
  Eligibility eligibility = Eligibility::Pbe;

  void validate() const {
    mdp.validate();
    check_cost_shape(mdp, cost);
    basis.validate();
    if (basis.n_states != mdp.n_states || basis.n_actions != mdp.n_actions)
      throw DimensionError("basis does not match the MDP dimensions");
  }
};

namespace detail {

/// Greedy action pattern of Q^theta; the field is smooth only where this
/// pattern is locally constant.
inline DeterministicPolicy greedy_pattern(const MeanFlowConfig& cfg, const Theta& theta) {
  return greedy_policy(q_values(cfg.basis, theta)).policy;
}

/// bracket(z) = -Q^theta(z) + c(z) + gamma * sum_x' P_u(x,x') min_u' Q^theta(x',u').
inline Eigen::VectorXd td_bracket(const MeanFlowConfig& cfg, const Theta& theta) {
  const QFunction q = q_values(cfg.basis, theta);
  Eigen::VectorXd qmin(cfg.mdp.n_states);
  for (int x = 0; x < cfg.mdp.n_states; ++x) qmin(x) = q.row(x).minCoeff();
  Eigen::VectorXd out(cfg.mdp.joint_size());
  for (int x = 0; x < cfg.mdp.n_states; ++x)
    for (int u = 0; u < cfg.mdp.n_actions; ++u)
      out(cfg.mdp.zindex(x, u)) =
          -q(x, u) + cfg.cost(x, u) + cfg.mdp.discount * cfg.mdp.P(u).row(x).dot(qmin);
  return out;
}

/// Eligibility rows zeta(z): psi(z) for the PBE choice, or
/// psi(z) - gamma * sum_x' P_u(x,x') psi(x', phi^theta(x')) for MSBE, where
/// phi^theta is the greedy policy of Q^theta.
inline Eigen::MatrixXd eligibility_rows(const MeanFlowConfig& cfg, const Theta& theta) {
  if (cfg.eligibility == Eligibility::Pbe) return cfg.basis.psi;
  const DeterministicPolicy phi = greedy_pattern(cfg, theta);
  Eigen::MatrixXd greedy_psi(cfg.mdp.n_states, cfg.basis.dim());
  for (int xp = 0; xp < cfg.mdp.n_states; ++xp)
    greedy_psi.row(xp) = cfg.basis.row(xp, phi[static_cast<std::size_t>(xp)]);
  Eigen::MatrixXd zeta = cfg.basis.psi;
  for (int x = 0; x < cfg.mdp.n_states; ++x)
    for (int u = 0; u < cfg.mdp.n_actions; ++u)
      zeta.row(cfg.mdp.zindex(x, u)) -= cfg.mdp.discount * cfg.mdp.P(u).row(x) * greedy_psi;
  return zeta;
}

inline JointPmf stationary_at(const MeanFlowConfig& cfg, const Theta& theta) {
  return stationary_pmf(joint_transition(cfg.mdp, cfg.family.evaluate(cfg.basis, theta)));
}

/// Mean flow with the stationary pmf frozen at `w`.
inline Eigen::VectorXd barf_frozen(const MeanFlowConfig& cfg, const Theta& theta,
                                   const JointPmf& w) {
  const Eigen::VectorXd weighted = w.cwiseProduct(td_bracket(cfg, theta));
  return eligibility_rows(cfg, theta).transpose() * weighted;
}

}  // namespace detail

/// Exact mean-flow vector field f(theta) (the steady-state expectation of the
/// update direction) for the configured policy family and eligibility.
inline Eigen::VectorXd barf(const MeanFlowConfig& cfg, const Theta& theta) {
  return detail::barf_frozen(cfg, theta, detail::stationary_at(cfg, theta));
}

/// Mean-square Bellman error at theta under the configured training policy.
inline double msbe_loss(const MeanFlowConfig& cfg, const Theta& theta) {
  const JointPmf w = detail::stationary_at(cfg, theta);
  const Eigen::VectorXd b = detail::td_bracket(cfg, theta);
  return w.dot(b.cwiseAbs2());
}

struct JacobianResult {
  enum class Method { FiniteDifference, ClosedFormOblivious, Decomposition };

  Eigen::MatrixXd A;
  Eigen::VectorXcd eigenvalues;
  bool hurwitz = false;
  Method method = Method::FiniteDifference;
};

namespace detail {

inline void fill_spectrum(JacobianResult& jr) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(jr.A, /*computeEigenvectors=*/false);
  jr.eigenvalues = es.eigenvalues();
  jr.hurwitz = (jr.eigenvalues.real().array() < -1e-9).all();
}

inline void check_stencil_interior(const MeanFlowConfig& cfg, const Theta& theta, double h) {
  const DeterministicPolicy base = greedy_pattern(cfg, theta);
  for (int j = 0; j < theta.size(); ++j)
    for (const double step : {h, 10.0 * h, -h, -10.0 * h}) {
      Theta t = theta;
      t(j) += step;
      if (greedy_pattern(cfg, t) != base)
        throw PolicyBoundaryError("greedy action pattern changes within the stencil");
    }
}

}  // namespace detail

/// Jacobian A(theta) by central differences, column by column, with step
/// h = 1e-6 (1+|theta|). Rejects points within 10h of a greedy-policy
/// boundary instead of smoothing across it: the derivative genuinely fails
/// to exist there.
inline JacobianResult jacobian_fd(const MeanFlowConfig& cfg, const Theta& theta) {
  const int d = static_cast<int>(theta.size());
  const double h = 1e-6 * (1.0 + theta.norm());
  detail::check_stencil_interior(cfg, theta, h);
  JacobianResult jr;
  jr.method = JacobianResult::Method::FiniteDifference;
  jr.A.resize(d, d);
  for (int j = 0; j < d; ++j) {
    Theta tp = theta, tm = theta;
    tp(j) += h;
    tm(j) -= h;
    jr.A.col(j) = (barf(cfg, tp) - barf(cfg, tm)) / (2.0 * h);
  }
  detail::fill_spectrum(jr);
  return jr;
}

struct ObliviousJacobian {
  JacobianResult jacobian;
  Eigen::VectorXd b;  // f(theta) = A(theta) theta - b on the pattern region
};

/// Closed-form Jacobian for an oblivious training policy with PBE
/// eligibility:
///   A(theta) = -E[ psi_n (psi_n - gamma psi^theta_{n+1})^T ],
///   b        = -E[ psi_n c_n ],
/// expectations under the stationary joint pmf. Requires theta in the region
/// of policy continuity.
inline ObliviousJacobian jacobian_oblivious(const MeanFlowConfig& cfg, const Theta& theta) {
  if (!cfg.family.is_oblivious())
    throw NotObliviousError("closed-form Jacobian requires an oblivious training policy");
  if (cfg.eligibility != Eligibility::Pbe)
    throw std::invalid_argument("closed-form Jacobian is for the PBE eligibility");
  const GreedyResult greedy = greedy_policy(q_values(cfg.basis, theta));
  if (!greedy.continuous)
    throw NotContinuousError("theta lies outside the region of policy continuity");
  const JointPmf w = detail::stationary_at(cfg, theta);
  Eigen::MatrixXd greedy_psi(cfg.mdp.n_states, cfg.basis.dim());
  for (int xp = 0; xp < cfg.mdp.n_states; ++xp)
    greedy_psi.row(xp) = cfg.basis.row(xp, greedy.policy[static_cast<std::size_t>(xp)]);
  const int d = cfg.basis.dim();
  ObliviousJacobian out;
  out.jacobian.method = JacobianResult::Method::ClosedFormOblivious;
  out.jacobian.A = Eigen::MatrixXd::Zero(d, d);
  out.b = Eigen::VectorXd::Zero(d);
  for (int x = 0; x < cfg.mdp.n_states; ++x)
    for (int u = 0; u < cfg.mdp.n_actions; ++u) {
      const int z = cfg.mdp.zindex(x, u);
      const Eigen::RowVectorXd next = cfg.mdp.P(u).row(x) * greedy_psi;  // E[psi'|z]
      out.jacobian.A -=
          w(z) * cfg.basis.psi.row(z).transpose() * (cfg.basis.psi.row(z) - cfg.mdp.discount * next);
      out.b -= w(z) * cfg.cost(x, u) * cfg.basis.psi.row(z).transpose();
    }
  detail::fill_spectrum(out.jacobian);
  return out;
}

/// Actor-critic style split A = A0 + A1: A0 differentiates the update with
/// the stationary pmf frozen; A1 carries the pmf sensitivity, reported as the
/// one-step score term E[f Lambda^T] plus the stationarity correction. The
/// defect |A0 + A1 - A| against the direct finite-difference Jacobian is
/// returned for inspection.
struct JacobianDecomposition {
  Eigen::MatrixXd a0;
  Eigen::MatrixXd a1;
  Eigen::MatrixXd score_part;  // E[f Lambda^T]; a1 - score_part is the correction
  Eigen::MatrixXd total;       // jacobian_fd result
  double defect = 0.0;
};

inline JacobianDecomposition jacobian_decomposition(const MeanFlowConfig& cfg, const Theta& theta) {
  const int d = static_cast<int>(theta.size());
  const double h = 1e-6 * (1.0 + theta.norm());
  detail::check_stencil_interior(cfg, theta, h);
  const JointPmf w = detail::stationary_at(cfg, theta);

  JacobianDecomposition out;
  out.a0.resize(d, d);
  out.a1.resize(d, d);
  for (int j = 0; j < d; ++j) {
    Theta tp = theta, tm = theta;
    tp(j) += h;
    tm(j) -= h;
    out.a0.col(j) = (detail::barf_frozen(cfg, tp, w) - detail::barf_frozen(cfg, tm, w)) / (2.0 * h);
    const JointPmf wp = detail::stationary_at(cfg, tp);
    const JointPmf wm = detail::stationary_at(cfg, tm);
    out.a1.col(j) =
        detail::eligibility_rows(cfg, theta).transpose() *
        ((wp - wm) / (2.0 * h)).cwiseProduct(detail::td_bracket(cfg, theta));
  }

  // One-step score term; pairs of vanishing stationary mass contribute
  // nothing and are skipped (their policy probability may be exactly zero).
  out.score_part = Eigen::MatrixXd::Zero(d, d);
  const Eigen::VectorXd bracket = detail::td_bracket(cfg, theta);
  const Eigen::MatrixXd zeta = detail::eligibility_rows(cfg, theta);
  for (int x = 0; x < cfg.mdp.n_states; ++x)
    for (int u = 0; u < cfg.mdp.n_actions; ++u) {
      const int z = cfg.mdp.zindex(x, u);
      if (w(z) < 1e-300) continue;
      const Eigen::VectorXd fz = zeta.row(z).transpose() * bracket(z);
      out.score_part += w(z) * fz * score_function(cfg.family, cfg.basis, theta, x, u).transpose();
    }

  out.total = jacobian_fd(cfg, theta).A;
  out.defect = (out.a0 + out.a1 - out.total).cwiseAbs().maxCoeff();
  return out;
}

struct Root {
  Theta theta;
  double residual = 0.0;
  std::optional<JacobianResult> jacobian;  // absent when the root sits on a policy boundary
};

struct RootSet {
  std::vector<Root> roots;
  double dedup_radius = 1e-4;
};

struct Box {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  static Box cube(int dim, double lo, double hi) {
    return Box{Eigen::VectorXd::Constant(dim, lo), Eigen::VectorXd::Constant(dim, hi)};
  }
};

namespace detail {

inline double radical_inverse(unsigned long long i, int base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= base;
    r += f * static_cast<double>(i % static_cast<unsigned long long>(base));
    i /= static_cast<unsigned long long>(base);
  }
  return r;
}

// Halton point with a seed-derived Cranley-Patterson rotation.
inline Eigen::VectorXd halton_point(unsigned long long index, int dim, std::uint64_t seed) {
  static const int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
  if (dim > static_cast<int>(sizeof(primes) / sizeof(primes[0])))
    throw DimensionError("multistart supports at most 12 parameter dimensions");
  Eigen::VectorXd p(dim);
  for (int j = 0; j < dim; ++j) {
    const double rot =
        static_cast<double>(derive_seed(seed, static_cast<std::uint64_t>(j)) >> 11) * 0x1.0p-53;
    const double v = radical_inverse(index + 1, primes[j]) + rot;
    p(j) = v - std::floor(v);
  }
  return p;
}

// A short stretch of mean-flow integration; used when Newton stalls near a
// policy boundary. Returns false when the flow blows up.
inline bool ode_escape(const MeanFlowConfig& cfg, Theta& theta, int steps = 100, double dt = 0.02) {
  for (int s = 0; s < steps; ++s) {
    const Eigen::VectorXd k1 = barf(cfg, theta);
    const Eigen::VectorXd k2 = barf(cfg, theta + 0.5 * dt * k1);
    const Eigen::VectorXd k3 = barf(cfg, theta + 0.5 * dt * k2);
    const Eigen::VectorXd k4 = barf(cfg, theta + dt * k3);
    theta += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!theta.allFinite() || theta.norm() > 1e6) return false;
  }
  return true;
}

inline std::optional<Theta> polish_root(const MeanFlowConfig& cfg, Theta theta, double tol) {
  int ode_budget = 4;
  const auto escape = [&]() -> bool { return ode_budget-- > 0 && ode_escape(cfg, theta); };
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::VectorXd f;
    try {
      f = barf(cfg, theta);
    } catch (const MultichainError&) {
      return std::nullopt;
    }
    const double r = f.norm();
    if (r <= tol) return theta;

    Eigen::MatrixXd J;
    try {
      J = jacobian_fd(cfg, theta).A;
    } catch (const PolicyBoundaryError&) {
      if (!escape()) return std::nullopt;
      continue;
    } catch (const MultichainError&) {
      return std::nullopt;
    }
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
    if (!lu.isInvertible()) {
      if (!escape()) return std::nullopt;
      continue;
    }
    Eigen::VectorXd p = lu.solve(-f);
    const double cap = 10.0 * (1.0 + theta.norm());
    if (p.norm() > cap) p *= cap / p.norm();

    bool accepted = false;
    for (double lambda = 1.0; lambda >= 1e-10; lambda *= 0.5) {
      const Theta candidate = theta + lambda * p;
      double rc;
      try {
        rc = barf(cfg, candidate).norm();
      } catch (const MultichainError&) {
        continue;
      }
      if (rc < (1.0 - 1e-4 * lambda) * r) {
        theta = candidate;
        accepted = true;
        break;
      }
    }
    if (!accepted && !escape()) return std::nullopt;
    if (theta.norm() > 1e6) return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace detail

/// Damped-Newton refinement of a single root from a warm start; nullopt when
/// the iteration fails to reach the residual tolerance. Used for branch
/// continuation, where the previous root seeds the next solve.
inline std::optional<Theta> refine_root(const MeanFlowConfig& cfg, const Theta& start,
                                        double residual_tol = 1e-8) {
  return detail::polish_root(cfg, start, residual_tol);
}

/// Multistart damped-Newton root search over an axis-aligned box. Converged
/// points (residual <= residual_tol) are deduplicated at dedup_radius; each
/// surviving root carries its finite-difference Jacobian and Hurwitz flag.
/// An empty RootSet is a legitimate outcome (the PBE can have no solution).
inline RootSet find_roots(const MeanFlowConfig& cfg, const Box& box, int n_starts,
                          std::uint64_t seed, double residual_tol = 1e-8,
                          double dedup_radius = 1e-4) {
  cfg.validate();
  if (n_starts < 1) throw std::invalid_argument("n_starts must be positive");
  const int d = cfg.basis.dim();
  if (box.lo.size() != d || box.hi.size() != d)
    throw DimensionError("box dimension does not match the basis");
  if (((box.hi - box.lo).array() < 0.0).any()) throw std::invalid_argument("empty search box");

  std::vector<std::optional<Theta>> hits(static_cast<std::size_t>(n_starts));
  parallel_for_index(n_starts, [&](int i) {
    const Eigen::VectorXd r = detail::halton_point(static_cast<unsigned long long>(i), d, seed);
    const Theta start = box.lo + r.cwiseProduct(box.hi - box.lo);
    hits[static_cast<std::size_t>(i)] = detail::polish_root(cfg, start, residual_tol);
  });

  RootSet out;
  out.dedup_radius = dedup_radius;
  for (const auto& hit : hits) {
    if (!hit) continue;
    const double res = barf(cfg, *hit).norm();
    bool merged = false;
    for (auto& root : out.roots) {
      if ((root.theta - *hit).norm() <= dedup_radius) {
        if (res < root.residual) {
          root.theta = *hit;
          root.residual = res;
        }
        merged = true;
        break;
      }
    }
    if (!merged) out.roots.push_back(Root{*hit, res, std::nullopt});
  }
  for (auto& root : out.roots) {
    try {
      root.jacobian = jacobian_fd(cfg, root.theta);
    } catch (const PolicyBoundaryError&) {
      root.jacobian = std::nullopt;
    }
  }
  return out;
}

struct FlowTrajectory {
  std::vector<double> times;
  std::vector<Theta> points;
  bool diverged = false;
};

/// Classical fixed-step RK4 integration of d theta/dt = f(theta), sampled at
/// every step. Terminates with the diverged flag once |theta| exceeds 1e6;
/// divergence is a documented outcome of the flow, not an error.
inline FlowTrajectory integrate_mean_flow(const MeanFlowConfig& cfg, const Theta& theta0,
                                          double t_end, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  const long n_steps = static_cast<long>(std::llround(t_end / dt));
  FlowTrajectory traj;
  traj.times.reserve(static_cast<std::size_t>(n_steps) + 1);
  traj.points.reserve(static_cast<std::size_t>(n_steps) + 1);
  Theta theta = theta0;
  traj.times.push_back(0.0);
  traj.points.push_back(theta);
  for (long s = 1; s <= n_steps; ++s) {
    const Eigen::VectorXd k1 = barf(cfg, theta);
    const Eigen::VectorXd k2 = barf(cfg, theta + 0.5 * dt * k1);
    const Eigen::VectorXd k3 = barf(cfg, theta + 0.5 * dt * k2);
    const Eigen::VectorXd k4 = barf(cfg, theta + dt * k3);
    theta += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    traj.times.push_back(dt * static_cast<double>(s));
    traj.points.push_back(theta);
    if (!theta.allFinite() || theta.norm() > 1e6) {
      traj.diverged = true;
      break;
    }
  }
  return traj;
}

/// Sphere scan of the Lyapunov drift ratio theta.f(theta)/|theta|^2 per
/// radius, plus the sampled quadratic-form bound y^T A(theta) y / |y|^2.
/// Reports the implied empirical (epsilon0, b0) pair for the ultimate
/// boundedness inequality.
struct LyapunovScan {
  struct RadiusStats {
    double radius = 0.0;
    double min_ratio = 0.0;
    double max_ratio = 0.0;
  };
  std::vector<RadiusStats> per_radius;
  double epsilon0 = 0.0;  // 0 when no radius qualifies
  double b0 = 0.0;        // +inf when no radius qualifies
  double max_quad_form = 0.0;
  int jacobian_skipped = 0;  // samples rejected by the policy-boundary guard
};

inline LyapunovScan lyapunov_scan(const MeanFlowConfig& cfg, const std::vector<double>& radii,
                                  int n_samples, std::uint64_t seed) {
  cfg.validate();
  if (n_samples < 1) throw std::invalid_argument("n_samples must be positive");
  for (double r : radii)
    if (!(r > 0.0)) throw std::invalid_argument("radii must be positive");
  const int d = cfg.basis.dim();
  LyapunovScan out;
  out.max_quad_form = -std::numeric_limits<double>::infinity();
  for (std::size_t ri = 0; ri < radii.size(); ++ri) {
    const double r = radii[ri];
    std::vector<double> ratios(static_cast<std::size_t>(n_samples));
    std::vector<double> quads(static_cast<std::size_t>(n_samples),
                              -std::numeric_limits<double>::infinity());
    std::vector<char> skipped(static_cast<std::size_t>(n_samples), 0);
    parallel_for_index(n_samples, [&](int s) {
      std::mt19937_64 rng(derive_seed(seed, ri * static_cast<std::size_t>(n_samples) +
                                                static_cast<std::size_t>(s)));
      const Theta theta = sphere_point(rng, d, r);
      ratios[static_cast<std::size_t>(s)] = theta.dot(barf(cfg, theta)) / (r * r);
      const Eigen::VectorXd y = sphere_point(rng, d, 1.0);
      try {
        quads[static_cast<std::size_t>(s)] = y.dot(jacobian_fd(cfg, theta).A * y);
      } catch (const PolicyBoundaryError&) {
        skipped[static_cast<std::size_t>(s)] = 1;
      }
    });
    LyapunovScan::RadiusStats stats;
    stats.radius = r;
    stats.min_ratio = *std::min_element(ratios.begin(), ratios.end());
    stats.max_ratio = *std::max_element(ratios.begin(), ratios.end());
    out.per_radius.push_back(stats);
    for (int s = 0; s < n_samples; ++s) {
      if (skipped[static_cast<std::size_t>(s)])
        ++out.jacobian_skipped;
      else
        out.max_quad_form = std::max(out.max_quad_form, quads[static_cast<std::size_t>(s)]);
    }
  }
  // Empirical (epsilon0, b0): smallest listed radius from which every larger
  // listed radius keeps the drift ratio negative.
  out.b0 = std::numeric_limits<double>::infinity();
  out.epsilon0 = 0.0;
  for (std::size_t i = 0; i < out.per_radius.size(); ++i) {
    bool all_negative = true;
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t j = i; j < out.per_radius.size(); ++j) {
      all_negative = all_negative && out.per_radius[j].max_ratio < 0.0;
      worst = std::max(worst, out.per_radius[j].max_ratio);
    }
    if (all_negative) {
      out.b0 = out.per_radius[i].radius;
      out.epsilon0 = -worst;
      break;
    }
  }
  return out;
}

}  // namespace meanflowq
