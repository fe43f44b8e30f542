#pragma once

#include <Eigen/Dense>

#include "dynasparse/rollout.hpp"

namespace dynasparse {

// Z-score statistics for the transition map (s, a) -> s_next, with the
// epsilon-guarded reciprocals used throughout training. sigma is the
// population standard deviation.
struct NormStats {
  Eigen::VectorXd mu_in;
  Eigen::VectorXd sigma_in;
  Eigen::VectorXd mu_out;
  Eigen::VectorXd sigma_out;
  double epsilon = 1e-8;
};

// Per-dimension stats over every sample; inputs are the stacked (s, a).
NormStats fit_stats(const Dataset& d);

// Same, restricted to an explicit flat sample list (training split).
NormStats fit_stats(const std::vector<const Sample*>& samples, int d_s, int d_a);

Eigen::VectorXd normalize_vec(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                              const Eigen::VectorXd& sigma, double eps);
Eigen::VectorXd denormalize_vec(const Eigen::VectorXd& xn, const Eigen::VectorXd& mu,
                                const Eigen::VectorXd& sigma, double eps);

// Jacobian of the normalized map: element-wise J * M with
// M_ij = (sigma_in_j + eps) / (sigma_out_i + eps). Exact zeros of J are
// preserved since M is strictly positive.
Eigen::MatrixXd normalize_jacobian(const Eigen::MatrixXd& j, const NormStats& stats);

}  // namespace dynasparse
