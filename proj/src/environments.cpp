#include "dynasparse/environments.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "dynasparse/errors.hpp"
#include "dynasparse/rng.hpp"

namespace dynasparse {
namespace {

double param(const EnvSpec& env, const char* key) { return env.params.at(key); }

// ---------------------------------------------------------------------------
// decoupled_pair: two independent planar oscillators, 4 state dims each,
// one force input each. Subsystem B runs with stiffness scaled by "detune".
// Within a subsystem every state/action variable influences every other, so
// the known causal mask is exactly block diagonal.
//
// State layout: [xA, yA, vxA, vyA, xB, yB, vxB, vyB], actions [uA, uB].
// ---------------------------------------------------------------------------
template <class T>
void step_decoupled_pair(const EnvSpec& env, std::span<const T> s,
                         std::span<const T> a, std::span<T> out) {
  const double dt = env.dt;
  const double m = param(env, "mass");
  const double c = param(env, "damping");
  const double cc = param(env, "cross_damping");
  const double bx = param(env, "force_bx");
  const double by = param(env, "force_by");

  for (int sub = 0; sub < 2; ++sub) {
    const int o = 4 * sub;
    const double scale = sub == 0 ? 1.0 : param(env, "detune");
    const double k = param(env, "stiffness") * scale;
    const double kc = param(env, "cross_stiffness") * scale;

    const T& x = s[o + 0];
    const T& y = s[o + 1];
    const T& vx = s[o + 2];
    const T& vy = s[o + 3];
    const T& u = a[sub];

    T ax = (-k * x - kc * y - c * vx - cc * vy + bx * u) / m;
    T ay = (-kc * x - k * y - cc * vx - c * vy + by * u) / m;

    out[o + 2] = vx + dt * ax;
    out[o + 3] = vy + dt * ay;
    out[o + 0] = x + dt * out[o + 2];
    out[o + 1] = y + dt * out[o + 3];
  }
}

// ---------------------------------------------------------------------------
// cartpole: cart on a sprung rail with an inverted pendulum. The rail spring
// and the viscous terms couple every state variable into both accelerations,
// so the Jacobian is dense everywhere (the dense-regime reference system).
//
// State layout: [x, theta, xdot, thetadot] with theta = 0 upright.
// ---------------------------------------------------------------------------
template <class T>
void step_cartpole(const EnvSpec& env, std::span<const T> s, std::span<const T> a,
                   std::span<T> out) {
  const double dt = env.dt;
  const double mc = param(env, "cart_mass");
  const double mp = param(env, "pole_mass");
  const double l = param(env, "pole_length");
  const double g = param(env, "gravity");
  const double kx = param(env, "rail_stiffness");
  const double cx = param(env, "rail_damping");
  const double cth = param(env, "pivot_damping");
  const double fs = param(env, "force_scale");

  const T& x = s[0];
  const T& th = s[1];
  const T& v = s[2];
  const T& w = s[3];

  const T sth = sin(th);
  const T cthv = cos(th);

  // Mass matrix [[m11, m12], [m12, m22]] and generalized forces.
  const double m11 = mc + mp;
  const T m12 = mp * l * cthv;
  const double m22 = mp * l * l;
  const T f1 = fs * a[0] - kx * x - cx * v + mp * l * sth * (w * w);
  const T f2 = mp * g * l * sth - cth * w;

  const T det = m11 * m22 - m12 * m12;
  const T acc_x = (m22 * f1 - m12 * f2) / det;
  const T acc_th = (m11 * f2 - m12 * f1) / det;

  out[2] = v + dt * acc_x;
  out[3] = w + dt * acc_th;
  out[0] = x + dt * out[2];
  out[1] = th + dt * out[3];
}

// ---------------------------------------------------------------------------
// tethered_ball: a force-controlled cup and a free ball joined by a string
// of fixed rest length. Slack string exerts no force (ball and cup evolve
// independently); a taut string acts as a linear spring-damper along the
// string direction, coupling all eight state dimensions at once.
//
// State layout: [cup_x, cup_y, cup_vx, cup_vy, ball_x, ball_y, ball_vx,
// ball_vy], actions = planar force on the cup.
// ---------------------------------------------------------------------------
template <class T>
void step_tethered_ball(const EnvSpec& env, std::span<const T> s,
                        std::span<const T> a, std::span<T> out) {
  const double dt = env.dt;
  const double mc = param(env, "cup_mass");
  const double mb = param(env, "ball_mass");
  const double rest = param(env, "string_length");
  const double ks = param(env, "string_stiffness");
  const double cs = param(env, "string_damping");
  const double ccup = param(env, "cup_damping");
  const double drag = param(env, "ball_drag");
  const double g = param(env, "gravity");
  const double fs = param(env, "force_scale");

  const T rel_x = s[4] - s[0];
  const T rel_y = s[5] - s[1];
  const T dist = sqrt(rel_x * rel_x + rel_y * rel_y);
  const T ext = dist - rest;

  T str_x(0.0), str_y(0.0);  // string force on the ball
  if (value_of(ext) >= 0.0) {
    const T dir_x = rel_x / dist;
    const T dir_y = rel_y / dist;
    const T ext_rate = (s[6] - s[2]) * dir_x + (s[7] - s[3]) * dir_y;
    const T tension = ks * ext + cs * ext_rate;
    str_x = -tension * dir_x;
    str_y = -tension * dir_y;
  }

  const T cup_ax = (fs * a[0] - ccup * s[2] - str_x) / mc;
  const T cup_ay = (fs * a[1] - ccup * s[3] - str_y) / mc;
  const T ball_ax = (str_x - drag * s[6]) / mb;
  const T ball_ay = (str_y - drag * s[7]) / mb - g;

  out[2] = s[2] + dt * cup_ax;
  out[3] = s[3] + dt * cup_ay;
  out[0] = s[0] + dt * out[2];
  out[1] = s[1] + dt * out[3];
  out[6] = s[6] + dt * ball_ax;
  out[7] = s[7] + dt * ball_ay;
  out[4] = s[4] + dt * out[6];
  out[5] = s[5] + dt * out[7];
}

// ---------------------------------------------------------------------------
// bouncer: a vertically thrust point mass over a penalty-spring ground.
// Airborne, the next velocity is independent of height; in contact the
// penalty makes that entry jump to order stiffness*dt. The temporal-
// sparsity reference system.
//
// State layout: [height, velocity], action = vertical force.
// ---------------------------------------------------------------------------
template <class T>
void step_bouncer(const EnvSpec& env, std::span<const T> s, std::span<const T> a,
                  std::span<T> out) {
  const double dt = env.dt;
  const double m = param(env, "mass");
  const double g = param(env, "gravity");
  const double k = param(env, "stiffness");
  const double d = param(env, "damping");
  const double drag = param(env, "air_drag");
  const double fs = param(env, "force_scale");

  const T& h = s[0];
  const T& v = s[1];

  const T pen = max0(-h);
  const T contact_force = k * pen + d * pen * (-v);
  const T acc = (fs * a[0] + contact_force - drag * v) / m - g;

  out[1] = v + dt * acc;
  out[0] = h + dt * out[1];
}

// ---------------------------------------------------------------------------
// reacher2: torque-driven two-link arm in the vertical plane plus a static
// 2D target appended to the state. The target coordinates are copied through
// unchanged and influence nothing, giving exact global Jacobian zeros from
// static variables. Angles are measured from the hanging rest pose.
//
// State layout: [q1, q2, w1, w2, target_x, target_y], actions = joint
// torques.
// ---------------------------------------------------------------------------
template <class T>
void step_reacher2(const EnvSpec& env, std::span<const T> s, std::span<const T> a,
                   std::span<T> out) {
  const double dt = env.dt;
  const double m1 = param(env, "m1");
  const double m2 = param(env, "m2");
  const double l1 = param(env, "l1");
  const double lc1 = param(env, "lc1");
  const double lc2 = param(env, "lc2");
  const double i1 = param(env, "inertia1");
  const double i2 = param(env, "inertia2");
  const double g = param(env, "gravity");
  const double b = param(env, "joint_damping");
  const double ts = param(env, "torque_scale");

  const T& q1 = s[0];
  const T& q2 = s[1];
  const T& w1 = s[2];
  const T& w2 = s[3];

  const T c2 = cos(q2);
  const T s2 = sin(q2);

  const T d11 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2) +
                i1 + i2;
  const T d12 = m2 * (lc2 * lc2 + l1 * lc2 * c2) + i2;
  const double d22 = m2 * lc2 * lc2 + i2;

  const T coriolis = m2 * l1 * lc2 * s2;
  const T c1 = -coriolis * (2.0 * w1 * w2 + w2 * w2);
  const T cg2 = coriolis * (w1 * w1);

  const T grav1 = (m1 * lc1 + m2 * l1) * g * sin(q1) + m2 * lc2 * g * sin(q1 + q2);
  const T grav2 = m2 * lc2 * g * sin(q1 + q2);

  const T rhs1 = ts * a[0] - b * w1 - c1 - grav1;
  const T rhs2 = ts * a[1] - b * w2 - cg2 - grav2;

  const T det = d11 * d22 - d12 * d12;
  const T acc1 = (d22 * rhs1 - d12 * rhs2) / det;
  const T acc2 = (d11 * rhs2 - d12 * rhs1) / det;

  out[2] = w1 + dt * acc1;
  out[3] = w2 + dt * acc2;
  out[0] = q1 + dt * out[2];
  out[1] = q2 + dt * out[3];
  out[4] = s[4];
  out[5] = s[5];
}

template <class T>
std::vector<T> step_generic(const EnvSpec& env, std::span<const T> s,
                            std::span<const T> a) {
  std::vector<T> out(static_cast<std::size_t>(env.d_s));
  switch (env.id) {
    case EnvId::decoupled_pair:
      step_decoupled_pair<T>(env, s, a, out);
      break;
    case EnvId::cartpole:
      step_cartpole<T>(env, s, a, out);
      break;
    case EnvId::tethered_ball:
      step_tethered_ball<T>(env, s, a, out);
      break;
    case EnvId::bouncer:
      step_bouncer<T>(env, s, a, out);
      break;
    case EnvId::reacher2:
      step_reacher2<T>(env, s, a, out);
      break;
  }
  return out;
}

BoolMatrix block_mask(int d_s, int d_a) {
  return BoolMatrix::Constant(d_s, d_s + d_a, false);
}

EnvSpec base_spec(const std::string& name, EnvId id, int d_s, int d_a,
                  double action_abs) {
  EnvSpec env;
  env.name = name;
  env.id = id;
  env.d_s = d_s;
  env.d_a = d_a;
  env.dt = 0.01;
  env.horizon = 1000;
  env.action_low = Eigen::VectorXd::Constant(d_a, -action_abs);
  env.action_high = Eigen::VectorXd::Constant(d_a, action_abs);
  return env;
}

EnvSpec make_decoupled_pair() {
  EnvSpec env = base_spec("decoupled_pair", EnvId::decoupled_pair, 8, 2, 2.0);
  env.params = {{"mass", 1.0},          {"stiffness", 1.5},
                {"cross_stiffness", 0.4}, {"damping", 0.3},
                {"cross_damping", 0.1},   {"detune", 1.2},
                {"force_bx", 1.0},        {"force_by", 0.6}};
  BoolMatrix mask = block_mask(8, 2);
  for (int sub = 0; sub < 2; ++sub) {
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) mask(4 * sub + r, 4 * sub + c) = true;
      mask(4 * sub + r, 8 + sub) = true;
    }
  }
  env.known_mask = mask;
  return env;
}

EnvSpec make_cartpole() {
  EnvSpec env = base_spec("cartpole", EnvId::cartpole, 4, 1, 1.0);
  env.params = {{"cart_mass", 1.0},     {"pole_mass", 0.1},
                {"pole_length", 0.5},   {"gravity", 9.81},
                {"rail_stiffness", 2.0}, {"rail_damping", 0.5},
                {"pivot_damping", 0.05}, {"force_scale", 10.0}};
  return env;
}

EnvSpec make_tethered_ball() {
  EnvSpec env = base_spec("tethered_ball", EnvId::tethered_ball, 8, 2, 1.0);
  env.params = {{"cup_mass", 1.0},        {"ball_mass", 0.2},
                {"string_length", 0.5},   {"string_stiffness", 100.0},
                {"string_damping", 2.0},  {"cup_damping", 4.0},
                {"ball_drag", 0.05},      {"gravity", 9.81},
                {"force_scale", 8.0}};
  return env;
}

EnvSpec make_bouncer() {
  EnvSpec env = base_spec("bouncer", EnvId::bouncer, 2, 1, 1.0);
  env.params = {{"mass", 1.0},     {"gravity", 9.81}, {"stiffness", 1000.0},
                {"damping", 10.0}, {"air_drag", 0.02}, {"force_scale", 8.0}};
  return env;
}

EnvSpec make_reacher2() {
  EnvSpec env = base_spec("reacher2", EnvId::reacher2, 6, 2, 1.0);
  env.params = {{"m1", 1.0},          {"m2", 1.0},
                {"l1", 1.0},          {"lc1", 0.5},
                {"lc2", 0.5},         {"inertia1", 1.0 / 12.0},
                {"inertia2", 1.0 / 12.0}, {"gravity", 9.81},
                {"joint_damping", 0.5},   {"torque_scale", 6.0}};
  BoolMatrix mask = block_mask(6, 2);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) mask(r, c) = true;
    mask(r, 6) = true;
    mask(r, 7) = true;
  }
  mask(4, 4) = true;
  mask(5, 5) = true;
  env.known_mask = mask;
  return env;
}

void check_action(const EnvSpec& env, const Eigen::VectorXd& a) {
  if (a.size() != env.d_a)
    throw ParameterError(env.name + ": action dimension " + std::to_string(a.size()) +
                         " != " + std::to_string(env.d_a));
  for (int i = 0; i < env.d_a; ++i) {
    if (!std::isfinite(a(i)) || a(i) < env.action_low(i) - 1e-12 ||
        a(i) > env.action_high(i) + 1e-12)
      throw ParameterError(env.name + ": action component " + std::to_string(i) +
                           " out of bounds");
  }
}

void check_state(const EnvSpec& env, const State& s) {
  if (s.values.size() != env.d_s)
    throw ParameterError(env.name + ": state dimension " +
                         std::to_string(s.values.size()) + " != " +
                         std::to_string(env.d_s));
  if (!s.values.allFinite())
    throw DivergenceError(env.name + ": non-finite state at t=" + std::to_string(s.t));
  if (s.t < 0 || s.t >= env.horizon)
    throw ParameterError(env.name + ": step index " + std::to_string(s.t) +
                         " outside horizon " + std::to_string(env.horizon));
}

}  // namespace

std::vector<std::string> env_names() {
  return {"decoupled_pair", "cartpole", "tethered_ball", "bouncer", "reacher2"};
}

EnvSpec make_env(const std::string& name,
                 const std::map<std::string, double>& overrides) {
  EnvSpec env;
  if (name == "decoupled_pair")
    env = make_decoupled_pair();
  else if (name == "cartpole")
    env = make_cartpole();
  else if (name == "tethered_ball")
    env = make_tethered_ball();
  else if (name == "bouncer")
    env = make_bouncer();
  else if (name == "reacher2")
    env = make_reacher2();
  else {
    std::ostringstream msg;
    msg << "unknown environment '" << name << "'; valid names:";
    for (const auto& n : env_names()) msg << " " << n;
    throw ParameterError(msg.str());
  }

  for (const auto& [key, value] : overrides) {
    if (key == "dt") {
      if (!(value > 0.0)) throw ParameterError("dt override must be > 0");
      env.dt = value;
    } else if (key == "horizon") {
      if (value < 1.0) throw ParameterError("horizon override must be >= 1");
      env.horizon = static_cast<int>(value);
    } else {
      auto it = env.params.find(key);
      if (it == env.params.end())
        throw ParameterError(env.name + ": no parameter named '" + key + "'");
      it->second = value;
    }
  }
  return env;
}

State reset(const EnvSpec& env, std::uint64_t seed) {
  Rng rng(derive_seed(seed, /*stream=*/0xE5E7));
  State s;
  s.t = 0;
  s.values.resize(env.d_s);
  switch (env.id) {
    case EnvId::decoupled_pair:
      for (int i = 0; i < 8; ++i) s.values(i) = rng.uniform(-0.5, 0.5);
      break;
    case EnvId::cartpole:
      s.values(0) = rng.uniform(-0.1, 0.1);
      s.values(1) = rng.uniform(-0.15, 0.15);
      s.values(2) = rng.uniform(-0.1, 0.1);
      s.values(3) = rng.uniform(-0.1, 0.1);
      break;
    case EnvId::tethered_ball: {
      const double rest = param(env, "string_length");
      s.values(0) = rng.uniform(-0.1, 0.1);
      s.values(1) = rng.uniform(-0.1, 0.1);
      s.values(2) = rng.uniform(-0.1, 0.1);
      s.values(3) = rng.uniform(-0.1, 0.1);
      // Ball hangs slack at 55-80% of the rest length, tilted so lateral
      // string components are exercised once it goes taut.
      const double angle = rng.uniform(-0.6, 0.6);
      const double radius = rest * rng.uniform(0.55, 0.8);
      s.values(4) = s.values(0) + radius * std::sin(angle);
      s.values(5) = s.values(1) - radius * std::cos(angle);
      s.values(6) = rng.uniform(-0.3, 0.3);
      s.values(7) = rng.uniform(-0.3, 0.3);
      break;
    }
    case EnvId::bouncer:
      s.values(0) = rng.uniform(0.5, 1.5);
      s.values(1) = rng.uniform(-0.1, 0.1);
      break;
    case EnvId::reacher2: {
      s.values(0) = rng.uniform(-3.1, 3.1);
      s.values(1) = rng.uniform(-3.1, 3.1);
      s.values(2) = rng.uniform(-0.5, 0.5);
      s.values(3) = rng.uniform(-0.5, 0.5);
      const double r = rng.uniform(0.5, 1.4);
      const double phi = rng.uniform(-3.14159, 3.14159);
      s.values(4) = r * std::cos(phi);
      s.values(5) = r * std::sin(phi);
      break;
    }
  }
  return s;
}

State step(const EnvSpec& env, const State& s, const Eigen::VectorXd& a) {
  check_state(env, s);
  check_action(env, a);
  const std::vector<double> out = step_generic<double>(
      env, std::span<const double>(s.values.data(), static_cast<std::size_t>(env.d_s)),
      std::span<const double>(a.data(), static_cast<std::size_t>(env.d_a)));
  State next;
  next.t = s.t + 1;
  next.values.resize(env.d_s);
  for (int i = 0; i < env.d_s; ++i) {
    if (!std::isfinite(out[static_cast<std::size_t>(i)]))
      throw DivergenceError(env.name + ": diverged at t=" + std::to_string(s.t) +
                            ", state component " + std::to_string(i));
    next.values(i) = out[static_cast<std::size_t>(i)];
  }
  return next;
}

DualMap make_dual_step(const EnvSpec& env) {
  return [env](std::span<const Dual> x) {
    return step_generic<Dual>(env, x.subspan(0, static_cast<std::size_t>(env.d_s)),
                              x.subspan(static_cast<std::size_t>(env.d_s)));
  };
}

RealMap make_real_step(const EnvSpec& env) {
  return [env](const Eigen::VectorXd& x) {
    const std::vector<double> out = step_generic<double>(
        env,
        std::span<const double>(x.data(), static_cast<std::size_t>(env.d_s)),
        std::span<const double>(x.data() + env.d_s, static_cast<std::size_t>(env.d_a)));
    return Eigen::Map<const Eigen::VectorXd>(out.data(),
                                             static_cast<Eigen::Index>(out.size()))
        .eval();
  };
}

std::pair<State, JacobianPair> step_with_jacobians(const EnvSpec& env, const State& s,
                                                   const Eigen::VectorXd& a) {
  check_state(env, s);
  check_action(env, a);
  Eigen::VectorXd x(env.d_s + env.d_a);
  x << s.values, a;
  DualVector res;
  try {
    res = eval_with_jacobian(make_dual_step(env), x);
  } catch (const DivergenceError& e) {
    throw DivergenceError(env.name + " at t=" + std::to_string(s.t) + ": " + e.what());
  }
  State next;
  next.t = s.t + 1;
  next.values = res.value;
  JacobianPair jac;
  jac.j_state = res.tangents.leftCols(env.d_s);
  jac.j_action = res.tangents.rightCols(env.d_a);
  return {next, jac};
}

double switch_distance(const EnvSpec& env, const Eigen::VectorXd& s,
                       const Eigen::VectorXd& a) {
  (void)a;
  switch (env.id) {
    case EnvId::tethered_ball: {
      const double rel_x = s(4) - s(0);
      const double rel_y = s(5) - s(1);
      const double dist = std::sqrt(rel_x * rel_x + rel_y * rel_y);
      return std::abs(dist - param(env, "string_length"));
    }
    case EnvId::bouncer:
      return std::abs(s(0));
    default:
      return std::numeric_limits<double>::infinity();
  }
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> sample_state_action(const EnvSpec& env,
                                                                Rng& rng) {
  Eigen::VectorXd s(env.d_s);
  switch (env.id) {
    case EnvId::decoupled_pair:
      for (int i = 0; i < 8; ++i) s(i) = rng.uniform(-1.0, 1.0);
      break;
    case EnvId::cartpole:
      s(0) = rng.uniform(-1.0, 1.0);
      s(1) = rng.uniform(-3.1, 3.1);
      s(2) = rng.uniform(-3.0, 3.0);
      s(3) = rng.uniform(-6.0, 6.0);
      break;
    case EnvId::tethered_ball: {
      s(0) = rng.uniform(-0.5, 0.5);
      s(1) = rng.uniform(-0.5, 0.5);
      s(2) = rng.uniform(-1.0, 1.0);
      s(3) = rng.uniform(-1.0, 1.0);
      const double rest = param(env, "string_length");
      s(4) = s(0) + rng.uniform(-1.6, 1.6) * rest;
      s(5) = s(1) + rng.uniform(-1.6, 1.6) * rest;
      s(6) = rng.uniform(-2.0, 2.0);
      s(7) = rng.uniform(-2.0, 2.0);
      break;
    }
    case EnvId::bouncer:
      s(0) = rng.uniform(-0.05, 2.0);
      s(1) = rng.uniform(-6.0, 6.0);
      break;
    case EnvId::reacher2:
      s(0) = rng.uniform(-3.1, 3.1);
      s(1) = rng.uniform(-3.1, 3.1);
      s(2) = rng.uniform(-4.0, 4.0);
      s(3) = rng.uniform(-4.0, 4.0);
      s(4) = rng.uniform(-1.5, 1.5);
      s(5) = rng.uniform(-1.5, 1.5);
      break;
  }
  Eigen::VectorXd a(env.d_a);
  for (int i = 0; i < env.d_a; ++i) {
    const double span = env.action_high(i) - env.action_low(i);
    a(i) = rng.uniform(env.action_low(i) + 1e-3 * span,
                       env.action_high(i) - 1e-3 * span);
  }
  return {s, a};
}

}  // namespace dynasparse
