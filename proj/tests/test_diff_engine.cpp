#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dynasparse/diff_engine.hpp"
#include "dynasparse/environments.hpp"
#include "dynasparse/errors.hpp"
#include "dynasparse/rng.hpp"

using namespace dynasparse;

namespace {

DualMap identity_map(int n) {
  return [n](std::span<const Dual> x) {
    return std::vector<Dual>(x.begin(), x.begin() + n);
  };
}

Eigen::VectorXd stack(const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
  Eigen::VectorXd x(s.size() + a.size());
  x << s, a;
  return x;
}

}  // namespace

TEST_CASE("jacobian_forward: identity map gives identity matrix") {
  Eigen::VectorXd x(3);
  x << 0.3, -1.2, 5.0;
  const Eigen::MatrixXd jac = jacobian_forward(identity_map(3), x);
  CHECK((jac - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("jacobian_forward: product/sum map has the hand derivative") {
  const DualMap f = [](std::span<const Dual> x) {
    return std::vector<Dual>{x[0] * x[1], x[0] + x[1]};
  };
  Eigen::VectorXd x(2);
  x << 2.0, 3.0;
  const Eigen::MatrixXd jac = jacobian_forward(f, x);
  Eigen::MatrixXd expect(2, 2);
  expect << 3.0, 2.0, 1.0, 1.0;
  CHECK((jac - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("jacobian_forward matches finite differences on cartpole") {
  const EnvSpec env = make_env("cartpole");
  Rng rng(42);
  auto [s, a] = sample_state_action(env, rng);
  const Eigen::VectorXd x = stack(s, a);
  const Eigen::MatrixXd fwd = jacobian_forward(make_dual_step(env), x);
  const Eigen::MatrixXd fd = jacobian_fd(make_real_step(env), x, 1e-6);
  const double rel =
      (fwd - fd).cwiseAbs().maxCoeff() / (1.0 + fd.cwiseAbs().maxCoeff());
  CHECK(rel < 1e-6);
}

TEST_CASE("jacobian_forward and jacobian_fd agree on a taut tethered_ball state") {
  const EnvSpec env = make_env("tethered_ball");
  Eigen::VectorXd s(8);
  // Ball 0.75 m below the cup: well past the 0.5 m rest length.
  s << 0.1, 0.2, 0.3, -0.2, 0.25, -0.55, 0.5, -1.0;
  Eigen::VectorXd a(2);
  a << 0.4, -0.3;
  REQUIRE(switch_distance(env, s, a) > 0.1);
  const Eigen::VectorXd x = stack(s, a);
  const Eigen::MatrixXd fwd = jacobian_forward(make_dual_step(env), x);
  const Eigen::MatrixXd fd = jacobian_fd(make_real_step(env), x, 1e-6);
  const double rel =
      (fwd - fd).cwiseAbs().maxCoeff() / (1.0 + fd.cwiseAbs().maxCoeff());
  CHECK(rel < 1e-5);
  // String coupling is active: ball rows respond to cup coordinates.
  CHECK(fwd.block(4, 0, 4, 4).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("jacobian_fd: analytic square, constant map, parameter errors") {
  const RealMap square = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd y(1);
    y(0) = x(0) * x(0);
    return y;
  };
  Eigen::VectorXd x(1);
  x << 1.0;
  CHECK(std::abs(jacobian_fd(square, x, 1e-5)(0, 0) - 2.0) < 1e-8);

  const RealMap constant = [](const Eigen::VectorXd& xx) {
    (void)xx;
    return Eigen::VectorXd::Ones(3).eval();
  };
  Eigen::VectorXd x3(2);
  x3 << 0.5, -0.5;
  CHECK(jacobian_fd(constant, x3, 1e-6).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(jacobian_fd(square, x, 0.0), ParameterError);
  CHECK_THROWS_AS(jacobian_fd(square, x, -1e-6), ParameterError);
}

TEST_CASE("jacobian_forward: non-finite output names the component") {
  const DualMap bad = [](std::span<const Dual> x) {
    return std::vector<Dual>{x[0], 1.0 / (x[0] - x[0])};
  };
  Eigen::VectorXd x(1);
  x << 2.0;
  try {
    jacobian_forward(bad, x);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("index 1") != std::string::npos);
  }
}

TEST_CASE("affine maps differentiate to their coefficient matrix exactly") {
  Rng rng(7);
  Eigen::MatrixXd coef(4, 6);
  for (Eigen::Index i = 0; i < coef.size(); ++i) coef(i) = rng.uniform(-3.0, 3.0);
  const DualMap affine = [&coef](std::span<const Dual> in) {
    std::vector<Dual> out(4);
    for (int r = 0; r < 4; ++r) {
      Dual acc(0.5 * r);
      for (int c = 0; c < 6; ++c) acc += coef(r, c) * in[static_cast<std::size_t>(c)];
      out[static_cast<std::size_t>(r)] = acc;
    }
    return out;
  };
  Eigen::VectorXd x(6);
  for (int i = 0; i < 6; ++i) x(i) = rng.uniform(-2.0, 2.0);
  CHECK((jacobian_forward(affine, x) - coef).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("chain rule: two chained steps equal the product of step Jacobians") {
  const EnvSpec env = make_env("reacher2");
  Rng rng(11);
  auto [s, a] = sample_state_action(env, rng);
  const Eigen::VectorXd x = stack(s, a);
  const DualMap one = make_dual_step(env);
  const DualMap two = [&one, &env](std::span<const Dual> in) {
    std::vector<Dual> mid = one(in);
    for (int i = 0; i < env.d_a; ++i)
      mid.push_back(in[static_cast<std::size_t>(env.d_s + i)]);
    return one(mid);
  };

  const DualVector first = eval_with_jacobian(one, x);
  const Eigen::MatrixXd j2 =
      jacobian_forward(one, stack(first.value, a)).leftCols(env.d_s);
  const Eigen::MatrixXd chained = j2 * first.tangents.leftCols(env.d_s);
  const Eigen::MatrixXd direct = jacobian_forward(two, x).leftCols(env.d_s);
  CHECK((direct - chained).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("forward vs finite differences over random in-range points, all envs") {
  for (const std::string& name : env_names()) {
    CAPTURE(name);
    const EnvSpec env = make_env(name);
    const DualMap dual_step = make_dual_step(env);
    const RealMap real_step = make_real_step(env);
    Rng rng(derive_seed(123, 0x7E57));
    const double h = 1e-6;
    int excluded = 0;
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      auto [s, a] = sample_state_action(env, rng);
      if (switch_distance(env, s, a) < 4.0 * h) {
        ++excluded;
        continue;
      }
      const Eigen::VectorXd x = stack(s, a);
      const Eigen::MatrixXd fwd = jacobian_forward(dual_step, x);
      const Eigen::MatrixXd fd = jacobian_fd(real_step, x, h);
      worst = std::max(worst, (fwd - fd).cwiseAbs().maxCoeff() /
                                  (1.0 + fd.cwiseAbs().maxCoeff()));
    }
    CHECK(worst <= 1e-5);
    CHECK(excluded <= 2);
  }
}
