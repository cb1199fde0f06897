#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "meanflowq/errors.hpp"

namespace meanflowq {

/// Gauss-Hermite rule for the weight exp(-t^2): integral g(t) e^{-t^2} dt
/// ~= sum w_i g(t_i). Nodes and weights by Golub-Welsch on the symmetric
/// tridiagonal Jacobi matrix.
struct GaussHermite {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

inline GaussHermite gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("quadrature order must be positive");
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double b = std::sqrt(static_cast<double>(k) / 2.0);
    J(k - 1, k) = b;
    J(k, k - 1) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  if (es.info() != Eigen::Success) throw ConvergenceError("Gauss-Hermite eigensolve failed");
  GaussHermite gh;
  gh.nodes = es.eigenvalues();
  gh.weights.resize(n);
  const double sqrt_pi = std::sqrt(3.14159265358979323846264338327950288);
  for (int i = 0; i < n; ++i) {
    const double v = es.eigenvectors()(0, i);
    gh.weights(i) = sqrt_pi * v * v;
  }
  return gh;
}

/// E[g(X)] for X ~ N(mu, sigma^2) via a Gauss-Hermite rule. Exponentially
/// accurate for smooth integrands.
template <typename Fn>
double gauss_expectation(const GaussHermite& gh, double mu, double sigma, Fn&& g) {
  const double inv_sqrt_pi = 0.5641895835477562869480794515607726;
  double acc = 0.0;
  for (int i = 0; i < gh.nodes.size(); ++i)
    acc += gh.weights(i) * g(mu + 1.4142135623730950488016887242097 * sigma * gh.nodes(i));
  return inv_sqrt_pi * acc;
}

/// Gauss-Legendre rule on (-1, 1).
struct GaussLegendre {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

inline GaussLegendre gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("quadrature order must be positive");
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double kk = static_cast<double>(k);
    const double b = kk / std::sqrt(4.0 * kk * kk - 1.0);
    J(k - 1, k) = b;
    J(k, k - 1) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  if (es.info() != Eigen::Success) throw ConvergenceError("Gauss-Legendre eigensolve failed");
  GaussLegendre gl;
  gl.nodes = es.eigenvalues();
  gl.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    const double v = es.eigenvectors()(0, i);
    gl.weights(i) = 2.0 * v * v;
  }
  return gl;
}

/// E[g(X)] for X ~ N(mu, sigma^2) with the integration range [mu - span
/// sigma, mu + span sigma] split at the given cut points. Each panel uses the
/// supplied Gauss-Legendre rule, so integrands that are smooth between cuts
/// (min/max compositions, greedy selections) converge exponentially; the
/// truncated tail mass at the default span is ~1e-22.
template <typename Fn>
double gauss_expectation_split(const GaussLegendre& gl, double mu, double sigma,
                               const std::vector<double>& cuts, Fn&& g, double span = 10.0) {
  const double lo = mu - span * sigma, hi = mu + span * sigma;
  std::vector<double> edges{lo};
  for (double c : cuts)
    if (c > lo && c < hi) edges.push_back(c);
  edges.push_back(hi);
  std::sort(edges.begin(), edges.end());
  const double inv_norm = 1.0 / (sigma * std::sqrt(2.0 * 3.14159265358979323846264338327950288));
  double acc = 0.0;
  for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
    const double a = edges[p], b = edges[p + 1];
    if (b - a < 1e-300) continue;
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    double panel = 0.0;
    for (int i = 0; i < gl.nodes.size(); ++i) {
      const double t = mid + half * gl.nodes(i);
      const double zn = (t - mu) / sigma;
      panel += gl.weights(i) * g(t) * std::exp(-0.5 * zn * zn);
    }
    acc += half * inv_norm * panel;
  }
  return acc;
}

/// Zeros of a scalar function located by a sign-change scan plus bisection.
/// Used to find the feature-crossing points that create quadrature kinks.
template <typename Fn>
std::vector<double> scan_zeros(Fn&& f, double lo, double hi, int grid = 8192) {
  std::vector<double> zeros;
  double xprev = lo, fprev = f(lo);
  for (int i = 1; i <= grid; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) / grid;
    const double fx = f(x);
    if ((fprev < 0.0 && fx > 0.0) || (fprev > 0.0 && fx < 0.0)) {
      double a = xprev, b = x, fa = fprev;
      for (int it = 0; it < 200; ++it) {
        const double m = 0.5 * (a + b);
        const double fm = f(m);
        if (fm == 0.0 || b - a < 1e-14 * (1.0 + std::abs(m))) {
          a = b = m;
          break;
        }
        if ((fm < 0.0) == (fa < 0.0)) {
          a = m;
          fa = fm;
        } else {
          b = m;
        }
      }
      zeros.push_back(0.5 * (a + b));
    }
    xprev = x;
    fprev = fx;
  }
  return zeros;
}

}  // namespace meanflowq
