#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <vector>

#include "dynasparse/dual.hpp"

namespace dynasparse {

// Vector-valued dual evaluation result: value plus the tangent matrix with
// one column per seeded input direction.
struct DualVector {
  Eigen::VectorXd value;
  Eigen::MatrixXd tangents;  // rows match value, cols = seeded inputs
};

// State and action Jacobians of one environment transition.
struct JacobianPair {
  Eigen::MatrixXd j_state;   // d_s x d_s
  Eigen::MatrixXd j_action;  // d_s x d_a
};

// A map evaluable with dual arithmetic: m dual inputs -> n dual outputs.
using DualMap = std::function<std::vector<Dual>(std::span<const Dual>)>;
// A plain real map, used by the finite-difference oracle.
using RealMap = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Exact Jacobian of f at x by seeding all m directions in one forward pass.
// Throws DivergenceError naming the first non-finite output component.
Eigen::MatrixXd jacobian_forward(const DualMap& f, const Eigen::VectorXd& x);

// Same, but also returns the function value (bitwise equal to evaluating
// the plain-double instantiation of the same code).
DualVector eval_with_jacobian(const DualMap& f, const Eigen::VectorXd& x);

// Central finite differences, (f(x+h e_i) - f(x-h e_i)) / (2h) per column.
// The independent oracle for every derivative in this project; h must be > 0.
Eigen::MatrixXd jacobian_fd(const RealMap& f, const Eigen::VectorXd& x, double h);

}  // namespace dynasparse
