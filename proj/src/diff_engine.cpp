#include "dynasparse/diff_engine.hpp"

#include <cmath>

#include "dynasparse/errors.hpp"

namespace dynasparse {

DualVector eval_with_jacobian(const DualMap& f, const Eigen::VectorXd& x) {
  const int m = static_cast<int>(x.size());
  if (m < 1) throw ParameterError("jacobian_forward: input dimension must be >= 1");

  std::vector<Dual> in;
  in.reserve(m);
  for (int i = 0; i < m; ++i) in.push_back(Dual::seeded(x(i), m, i));

  const std::vector<Dual> out = f(in);
  const int n = static_cast<int>(out.size());
  if (n < 1) throw ParameterError("jacobian_forward: output dimension must be >= 1");

  DualVector result;
  result.value.resize(n);
  result.tangents = Eigen::MatrixXd::Zero(n, m);
  for (int j = 0; j < n; ++j) {
    if (!std::isfinite(out[j].v))
      throw DivergenceError("jacobian_forward: non-finite value at output index " +
                            std::to_string(j));
    result.value(j) = out[j].v;
    if (out[j].d.size() != 0) {
      if (out[j].d.size() != m)
        throw ParameterError("jacobian_forward: tangent width mismatch at output " +
                             std::to_string(j));
      if (!out[j].d.allFinite())
        throw DivergenceError(
            "jacobian_forward: non-finite derivative at output index " +
            std::to_string(j));
      result.tangents.row(j) = out[j].d;
    }
  }
  return result;
}

Eigen::MatrixXd jacobian_forward(const DualMap& f, const Eigen::VectorXd& x) {
  return eval_with_jacobian(f, x).tangents;
}

Eigen::MatrixXd jacobian_fd(const RealMap& f, const Eigen::VectorXd& x, double h) {
  if (!(h > 0.0)) throw ParameterError("jacobian_fd: step h must be > 0");
  const int m = static_cast<int>(x.size());
  if (m < 1) throw ParameterError("jacobian_fd: input dimension must be >= 1");

  Eigen::MatrixXd jac;
  for (int i = 0; i < m; ++i) {
    Eigen::VectorXd xp = x;
    Eigen::VectorXd xm = x;
    xp(i) += h;
    xm(i) -= h;
    const Eigen::VectorXd col = (f(xp) - f(xm)) / (2.0 * h);
    if (jac.size() == 0) jac.resize(col.size(), m);
    jac.col(i) = col;
  }
  return jac;
}

}  // namespace dynasparse
