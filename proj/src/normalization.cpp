#include "dynasparse/normalization.hpp"

#include <cmath>

#include "dynasparse/errors.hpp"

namespace dynasparse {
namespace {

void accumulate(Eigen::VectorXd& sum, Eigen::VectorXd& sumsq,
                const Eigen::VectorXd& x) {
  sum += x;
  sumsq.array() += x.array().square();
}

Eigen::VectorXd finish_sigma(const Eigen::VectorXd& sum, const Eigen::VectorXd& sumsq,
                             std::size_t n) {
  const double inv = 1.0 / static_cast<double>(n);
  // max(0, .) guards tiny negative values from cancellation on constant dims
  return ((sumsq * inv).array() - (sum * inv).array().square())
      .max(0.0)
      .sqrt()
      .matrix();
}

}  // namespace

NormStats fit_stats(const std::vector<const Sample*>& samples, int d_s, int d_a) {
  if (samples.empty()) throw ParameterError("fit_stats: empty sample set");
  const int d_in = d_s + d_a;

  Eigen::VectorXd sum_in = Eigen::VectorXd::Zero(d_in);
  Eigen::VectorXd sumsq_in = Eigen::VectorXd::Zero(d_in);
  Eigen::VectorXd sum_out = Eigen::VectorXd::Zero(d_s);
  Eigen::VectorXd sumsq_out = Eigen::VectorXd::Zero(d_s);

  Eigen::VectorXd in(d_in);
  for (const Sample* s : samples) {
    in << s->s, s->a;
    accumulate(sum_in, sumsq_in, in);
    accumulate(sum_out, sumsq_out, s->s_next);
  }

  NormStats stats;
  const double inv = 1.0 / static_cast<double>(samples.size());
  stats.mu_in = sum_in * inv;
  stats.mu_out = sum_out * inv;
  stats.sigma_in = finish_sigma(sum_in, sumsq_in, samples.size());
  stats.sigma_out = finish_sigma(sum_out, sumsq_out, samples.size());
  return stats;
}

NormStats fit_stats(const Dataset& d) {
  std::vector<const Sample*> samples;
  samples.reserve(d.total_samples());
  for (const auto& ep : d.episodes)
    for (const auto& s : ep.samples) samples.push_back(&s);
  return fit_stats(samples, d.d_s, d.d_a);
}

Eigen::VectorXd normalize_vec(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                              const Eigen::VectorXd& sigma, double eps) {
  if (x.size() != mu.size() || x.size() != sigma.size())
    throw ParameterError("normalize_vec: dimension mismatch");
  return ((x - mu).array() / (sigma.array() + eps)).matrix();
}

Eigen::VectorXd denormalize_vec(const Eigen::VectorXd& xn, const Eigen::VectorXd& mu,
                                const Eigen::VectorXd& sigma, double eps) {
  if (xn.size() != mu.size() || xn.size() != sigma.size())
    throw ParameterError("denormalize_vec: dimension mismatch");
  return (xn.array() * (sigma.array() + eps)).matrix() + mu;
}

Eigen::MatrixXd normalize_jacobian(const Eigen::MatrixXd& j, const NormStats& stats) {
  if (j.rows() != stats.sigma_out.size() || j.cols() != stats.sigma_in.size())
    throw ParameterError("normalize_jacobian: shape mismatch (" +
                         std::to_string(j.rows()) + "x" + std::to_string(j.cols()) +
                         " vs stats " + std::to_string(stats.sigma_out.size()) + "x" +
                         std::to_string(stats.sigma_in.size()) + ")");
  // Chain rule through x = xn .* (sigma_in + eps) + mu_in and
  // yn = (y - mu_out) ./ (sigma_out + eps):
  //   Jn_ij = J_ij * (sigma_in_j + eps) / (sigma_out_i + eps),
  // the exact Jacobian of the normalized map (checked against finite
  // differences of the composed map in the verification suite).
  const Eigen::ArrayXd out_scale = stats.sigma_out.array() + stats.epsilon;
  const Eigen::ArrayXd in_scale = stats.sigma_in.array() + stats.epsilon;
  return (j.array().colwise() / out_scale).rowwise() * in_scale.transpose();
}

}  // namespace dynasparse
