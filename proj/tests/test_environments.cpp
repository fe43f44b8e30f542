#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dynasparse/environments.hpp"
#include "dynasparse/errors.hpp"
#include "dynasparse/rng.hpp"

using namespace dynasparse;

TEST_CASE("make_env: documented rosters and dims") {
  const EnvSpec cartpole = make_env("cartpole");
  CHECK(cartpole.d_s == 4);
  CHECK(cartpole.d_a == 1);
  CHECK(cartpole.dt == 0.01);
  CHECK(cartpole.horizon == 1000);
  CHECK(!cartpole.known_mask.has_value());

  const EnvSpec pair = make_env("decoupled_pair");
  CHECK(pair.d_s == 8);
  CHECK(pair.d_a == 2);
  REQUIRE(pair.known_mask.has_value());
  const BoolMatrix& mask = *pair.known_mask;
  REQUIRE(mask.rows() == 8);
  REQUIRE(mask.cols() == 10);
  // Block diagonal state part, one action column per subsystem.
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c)
      CHECK(mask(r, c) == ((r / 4) == (c / 4)));
    CHECK(mask(r, 8) == (r < 4));
    CHECK(mask(r, 9) == (r >= 4));
  }
}

TEST_CASE("make_env: overrides echo and errors") {
  const EnvSpec env = make_env("bouncer", {{"stiffness", 2000.0}});
  CHECK(env.params.at("stiffness") == 2000.0);

  CHECK_THROWS_AS(make_env("quadcopter"), ParameterError);
  try {
    make_env("quadcopter");
  } catch (const ParameterError& e) {
    const std::string msg = e.what();
    for (const auto& name : env_names())
      CHECK(msg.find(name) != std::string::npos);
  }
  CHECK_THROWS_AS(make_env("bouncer", {{"no_such_param", 1.0}}), ParameterError);
  CHECK_THROWS_AS(make_env("bouncer", {{"dt", -0.5}}), ParameterError);
}

TEST_CASE("reset: deterministic per seed") {
  const EnvSpec env = make_env("cartpole");
  const State a = reset(env, 7);
  const State b = reset(env, 7);
  CHECK(a.values == b.values);
  CHECK(a.t == 0);
  const State c = reset(env, 8);
  CHECK(a.values != c.values);
}

TEST_CASE("reset: tethered_ball starts slack on 100 seeds") {
  const EnvSpec env = make_env("tethered_ball");
  const double rest = env.params.at("string_length");
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const State s = reset(env, seed);
    const double dx = s.values(4) - s.values(0);
    const double dy = s.values(5) - s.values(1);
    CHECK(std::sqrt(dx * dx + dy * dy) < rest);
  }
}

TEST_CASE("reset: bouncer starts airborne on 100 seeds") {
  const EnvSpec env = make_env("bouncer");
  for (std::uint64_t seed = 0; seed < 100; ++seed)
    CHECK(reset(env, seed).values(0) > 0.0);
}

TEST_CASE("step: cartpole upright rest is a fixed point") {
  const EnvSpec env = make_env("cartpole");
  State s;
  s.values = Eigen::VectorXd::Zero(4);
  const State next = step(env, s, Eigen::VectorXd::Zero(1));
  CHECK(next.t == 1);
  CHECK(next.values.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("step: decoupled_pair subsystem B ignores subsystem A bitwise") {
  const EnvSpec env = make_env("decoupled_pair");
  State s = reset(env, 3);
  Eigen::VectorXd a(2);
  a << 0.7, -0.4;
  const State base = step(env, s, a);
  State perturbed = s;
  perturbed.values.head(4).array() += 0.37;  // touch only subsystem A
  const State moved = step(env, perturbed, a);
  for (int i = 4; i < 8; ++i) {
    CHECK(moved.values(i) == base.values(i));  // bitwise
  }
  CHECK(moved.values.head(4) != base.values.head(4));
}

TEST_CASE("step: bouncer free fall drops by g*dt^2 on the first step") {
  const EnvSpec env = make_env("bouncer", {{"air_drag", 0.0}});
  State s;
  s.values.resize(2);
  s.values << 1.0, 0.0;
  const State next = step(env, s, Eigen::VectorXd::Zero(1));
  const double g = env.params.at("gravity");
  const double drop = 1.0 - next.values(0);
  const double half_gdt2 = 0.5 * g * env.dt * env.dt;
  CHECK(drop > 0.0);
  // Semi-implicit Euler lands within one integrator order of the closed form.
  CHECK(std::abs(drop - half_gdt2) <= half_gdt2 + 1e-12);
}

TEST_CASE("step: contract violations throw") {
  const EnvSpec env = make_env("cartpole");
  State s = reset(env, 1);
  Eigen::VectorXd a(1);
  a << 2.0;  // outside [-1, 1]
  CHECK_THROWS_AS(step(env, s, a), ParameterError);
  Eigen::VectorXd wrong(2);
  wrong << 0.0, 0.0;
  CHECK_THROWS_AS(step(env, s, wrong), ParameterError);
  s.t = env.horizon;
  CHECK_THROWS_AS(step(env, s, Eigen::VectorXd::Zero(1)), ParameterError);
}

TEST_CASE("step_with_jacobians: value is bitwise identical to step") {
  for (const std::string& name : env_names()) {
    CAPTURE(name);
    const EnvSpec env = make_env(name);
    Rng rng(derive_seed(5, 0xB17));
    for (int trial = 0; trial < 20; ++trial) {
      auto [sv, a] = sample_state_action(env, rng);
      State s;
      s.values = sv;
      const State plain = step(env, s, a);
      const auto [with_jac, jac] = step_with_jacobians(env, s, a);
      CHECK(plain.values == with_jac.values);
      CHECK(jac.j_state.rows() == env.d_s);
      CHECK(jac.j_action.cols() == env.d_a);
    }
  }
}

TEST_CASE("step_with_jacobians: decoupled_pair off-blocks are exactly zero") {
  const EnvSpec env = make_env("decoupled_pair");
  Rng rng(17);
  auto [sv, a] = sample_state_action(env, rng);
  State s;
  s.values = sv;
  const auto [next, jac] = step_with_jacobians(env, s, a);
  CHECK(jac.j_state.block(0, 4, 4, 4).cwiseAbs().maxCoeff() == 0.0);
  CHECK(jac.j_state.block(4, 0, 4, 4).cwiseAbs().maxCoeff() == 0.0);
  CHECK(jac.j_state.block(0, 0, 4, 4).cwiseAbs().minCoeff() > 0.0);
}

TEST_CASE("step_with_jacobians: reacher2 target rows are identity rows") {
  const EnvSpec env = make_env("reacher2");
  Rng rng(23);
  auto [sv, a] = sample_state_action(env, rng);
  State s;
  s.values = sv;
  const auto [next, jac] = step_with_jacobians(env, s, a);
  for (int r = 4; r < 6; ++r) {
    for (int c = 0; c < 6; ++c)
      CHECK(jac.j_state(r, c) == (r == c ? 1.0 : 0.0));
    CHECK(jac.j_action(r, 0) == 0.0);
    CHECK(jac.j_action(r, 1) == 0.0);
  }
  // Nothing depends on the target coordinates either.
  CHECK(jac.j_state.block(0, 4, 4, 2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("step_with_jacobians: cartpole J_s is dense at a random state") {
  const EnvSpec env = make_env("cartpole");
  Rng rng(31);
  auto [sv, a] = sample_state_action(env, rng);
  State s;
  s.values = sv;
  const auto [next, jac] = step_with_jacobians(env, s, a);
  CHECK(jac.j_state.cwiseAbs().minCoeff() >= 1e-12);
  CHECK(jac.j_action.cwiseAbs().minCoeff() >= 1e-12);
}

TEST_CASE("known_mask absent edges force Jacobian zeros at sampled points") {
  for (const std::string& name : env_names()) {
    const EnvSpec env = make_env(name);
    if (!env.known_mask) continue;
    CAPTURE(name);
    Rng rng(derive_seed(9, 0x3A5));
    for (int trial = 0; trial < 200; ++trial) {
      auto [sv, a] = sample_state_action(env, rng);
      State s;
      s.values = sv;
      const auto [next, jac] = step_with_jacobians(env, s, a);
      for (int r = 0; r < env.d_s; ++r) {
        for (int c = 0; c < env.d_s; ++c)
          if (!(*env.known_mask)(r, c)) CHECK(std::abs(jac.j_state(r, c)) < 1e-12);
        for (int c = 0; c < env.d_a; ++c)
          if (!(*env.known_mask)(r, env.d_s + c))
            CHECK(std::abs(jac.j_action(r, c)) < 1e-12);
      }
    }
  }
}

TEST_CASE("tethered_ball: slack decouples ball from cup, taut couples it") {
  const EnvSpec env = make_env("tethered_ball");

  State slack;
  slack.values.resize(8);
  slack.values << 0.0, 0.0, 0.2, -0.1, 0.1, -0.3, 0.0, 0.4;  // dist ~0.32 < 0.5
  Eigen::VectorXd a(2);
  a << 0.3, 0.2;
  REQUIRE(switch_distance(env, slack.values, a) > 0.01);
  const auto [n1, j1] = step_with_jacobians(env, slack, a);
  CHECK(j1.j_state.block(4, 0, 4, 4).cwiseAbs().maxCoeff() < 1e-12);

  State taut;
  taut.values.resize(8);
  taut.values << 0.0, 0.0, 0.2, -0.1, 0.3, -0.6, 0.0, 0.4;  // dist ~0.67 > 0.5
  const auto [n2, j2] = step_with_jacobians(env, taut, a);
  CHECK(j2.j_state.block(4, 0, 4, 4).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("bouncer: velocity'/height derivative switches with contact") {
  const EnvSpec env = make_env("bouncer");
  const double k = env.params.at("stiffness");

  State air;
  air.values.resize(2);
  air.values << 0.8, -1.0;
  const auto [n1, j1] = step_with_jacobians(env, air, Eigen::VectorXd::Zero(1));
  CHECK(std::abs(j1.j_state(1, 0)) < 1e-12);

  State contact;
  contact.values.resize(2);
  contact.values << -0.01, -1.0;  // penetrating
  const auto [n2, j2] = step_with_jacobians(env, contact, Eigen::VectorXd::Zero(1));
  CHECK(std::abs(j2.j_state(1, 0)) >= k * env.dt / 2.0);
}

TEST_CASE("decoupled_pair conserves energy without damping or action") {
  const EnvSpec env =
      make_env("decoupled_pair", {{"damping", 0.0}, {"cross_damping", 0.0}});
  const double m = env.params.at("mass");
  const double detune = env.params.at("detune");

  const auto energy = [&](const Eigen::VectorXd& v) {
    double e = 0.0;
    for (int sub = 0; sub < 2; ++sub) {
      const int o = 4 * sub;
      const double scale = sub == 0 ? 1.0 : detune;
      const double k = env.params.at("stiffness") * scale;
      const double kc = env.params.at("cross_stiffness") * scale;
      const double x = v(o), y = v(o + 1), vx = v(o + 2), vy = v(o + 3);
      e += 0.5 * m * (vx * vx + vy * vy);
      e += 0.5 * (k * x * x + 2.0 * kc * x * y + k * y * y);
    }
    return e;
  };

  State s = reset(env, 4);
  const double e0 = energy(s.values);
  REQUIRE(e0 > 0.0);
  const Eigen::VectorXd a = Eigen::VectorXd::Zero(2);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    s = step(env, s, a);
    worst = std::max(worst, std::abs(energy(s.values) - e0) / e0);
  }
  CHECK(worst < 0.01);
}

TEST_CASE("step: divergence is reported, not propagated as NaN") {
  // dt far beyond the oscillator stability limit: the integrator blows up
  // exponentially and must surface a DivergenceError, never NaN states.
  const EnvSpec env = make_env("decoupled_pair", {{"dt", 100.0}});
  State s = reset(env, 2);
  const Eigen::VectorXd a = Eigen::VectorXd::Zero(2);
  bool diverged = false;
  try {
    for (int t = 0; t < 500; ++t) {
      s = step(env, s, a);
      REQUIRE(s.values.allFinite());
    }
  } catch (const DivergenceError&) {
    diverged = true;
  }
  CHECK(diverged);
}
