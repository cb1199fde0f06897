#pragma once

#include <stdexcept>
#include <string>

namespace meanflowq {

/// Inputs whose shapes do not agree (basis vs. MDP, policy vs. MDP, ...).
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed model data: bad file contents or violated type invariants.
struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The joint chain has more than one recurrent class, so the stationary
/// pmf is not unique.
struct MultichainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A finite-difference stencil straddles a greedy-action change; the
/// derivative does not exist there.
struct PolicyBoundaryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Score function requested at a state-action pair of zero probability.
struct ZeroProbabilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotObliviousError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Parameter lies outside the region of policy continuity.
struct NotContinuousError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// No positive beta solves the two-basis root condition.
struct NoBetaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Case classification refused: the deciding inequality is within tolerance
/// of an equality.
struct MarginalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An iteration cap was hit or an internal accuracy check failed.
struct ConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace meanflowq
