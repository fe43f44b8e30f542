#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dynasparse/diff_engine.hpp"
#include "dynasparse/rng.hpp"

namespace dynasparse {

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

enum class EnvId { decoupled_pair, cartpole, tethered_ball, bouncer, reacher2 };

// A named differentiable dynamical system. Immutable after make_env.
struct EnvSpec {
  std::string name;
  EnvId id{};
  int d_s = 0;
  int d_a = 0;
  double dt = 0.0;
  int horizon = 0;
  std::map<std::string, double> params;
  Eigen::VectorXd action_low;
  Eigen::VectorXd action_high;
  // Ground-truth global adjacency, d_s x (d_s + d_a), true = edge may exist.
  // Present only for environments where it is analytically tight.
  std::optional<BoolMatrix> known_mask;
};

struct State {
  Eigen::VectorXd values;
  int t = 0;
};

// Environment registry. Overrides may rebind any documented param plus the
// reserved keys "dt" and "horizon"; unknown names are an error.
std::vector<std::string> env_names();
EnvSpec make_env(const std::string& name,
                 const std::map<std::string, double>& overrides = {});

// Deterministic initial state from the per-env reset distribution.
State reset(const EnvSpec& env, std::uint64_t seed);

// One semi-implicit Euler step. Validates action bounds, state finiteness
// and the episode horizon; throws DivergenceError on non-finite results.
State step(const EnvSpec& env, const State& s, const Eigen::VectorXd& a);

// step() plus exact forward-mode Jacobians. The returned state is bitwise
// identical to step()'s.
std::pair<State, JacobianPair> step_with_jacobians(const EnvSpec& env,
                                                   const State& s,
                                                   const Eigen::VectorXd& a);

// Signed distance (in the branch gap variable) to the nearest contact or
// string switching surface; +inf for everywhere-smooth environments. Used
// to exclude boundary-straddling points from finite-difference sweeps.
double switch_distance(const EnvSpec& env, const Eigen::VectorXd& s,
                       const Eigen::VectorXd& a);

// Uniform (s, a) draw from the documented per-env verification box; actions
// stay strictly inside bounds so central differences cannot leave them.
std::pair<Eigen::VectorXd, Eigen::VectorXd> sample_state_action(const EnvSpec& env,
                                                                Rng& rng);

// The transition as a map on the stacked input [s; a], for the diff engine.
DualMap make_dual_step(const EnvSpec& env);
RealMap make_real_step(const EnvSpec& env);

}  // namespace dynasparse
