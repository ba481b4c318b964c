#include "dgpmpc/environments.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace dgpmpc {
namespace {

template <typename Deriv>
Vector rk4(const Vector& x, double dt, Deriv&& f) {
  const Vector k1 = f(x);
  const Vector k2 = f(x + 0.5 * dt * k1);
  const Vector k3 = f(x + 0.5 * dt * k2);
  const Vector k4 = f(x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw InvalidState(std::string(what) + ": non-finite state");
}

void require_size(const Vector& v, Index n, const char* what) {
  if (v.size() != n) {
    std::ostringstream msg;
    msg << what << ": expected size " << n << ", got " << v.size();
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace

double wrap_angle(double phi) {
  double w = std::remainder(phi, 2.0 * std::numbers::pi);
  if (w <= -std::numbers::pi) w += 2.0 * std::numbers::pi;
  return w;
}

CartpoleParams CartpoleParams::modified() {
  CartpoleParams p;
  p.start_mode = CartpoleStart::kAtEnd;
  p.goal_x = -p.rail_half_width + 0.3;
  return p;
}

CartpoleParams CartpoleParams::centered() {
  CartpoleParams p;
  p.start_mode = CartpoleStart::kAtCenter;
  p.goal_x = 0.0;
  return p;
}

void CartpoleParams::validate() const {
  if (!(cart_mass > 0 && pole_mass > 0 && pole_half_length > 0 && rail_half_width > 0 &&
        force_limit > 0 && reward_length > 0))
    throw std::invalid_argument("cartpole masses, lengths and limits must be positive");
  if (!(dt > 0.0 && dt <= 0.05)) throw std::invalid_argument("cartpole dt must lie in (0, 0.05]");
  if (std::abs(goal_x) > rail_half_width)
    throw std::invalid_argument("cartpole goal must lie on the rail");
  if (action_cost < 0.0) throw std::invalid_argument("cartpole action cost must be >= 0");
}

Vector cartpole_derivative(const Vector& s, double force, const CartpoleParams& p) {
  const double total = p.cart_mass + p.pole_mass;
  const double l = p.pole_half_length;
  const double sin_phi = std::sin(s(2));
  const double cos_phi = std::cos(s(2));
  const double temp = (force + p.pole_mass * l * s(3) * s(3) * sin_phi) / total;
  const double phi_acc = (p.gravity * sin_phi - cos_phi * temp) /
                         (l * (4.0 / 3.0 - p.pole_mass * cos_phi * cos_phi / total));
  const double x_acc = temp - p.pole_mass * l * phi_acc * cos_phi / total;
  Vector d(4);
  d << s(1), x_acc, s(3), phi_acc;
  return d;
}

Vector cartpole_step(const Vector& state, const Vector& action, const CartpoleParams& p) {
  require_size(state, 4, "cartpole_step");
  require_size(action, 1, "cartpole_step action");
  require_finite(state, "cartpole_step");
  const double force = std::clamp(action(0), -p.force_limit, p.force_limit);
  Vector next = rk4(state, p.dt, [&](const Vector& x) { return cartpole_derivative(x, force, p); });
  if (next(0) > p.rail_half_width) {
    next(0) = p.rail_half_width;
    next(1) = 0.0;
  } else if (next(0) < -p.rail_half_width) {
    next(0) = -p.rail_half_width;
    next(1) = 0.0;
  }
  require_finite(next, "cartpole_step");
  return next;
}

double cartpole_energy(const Vector& s, const CartpoleParams& p) {
  const double l = p.pole_half_length;
  const double m = p.pole_mass;
  const double c = std::cos(s(2));
  const double kinetic = 0.5 * p.cart_mass * s(1) * s(1) +
                         0.5 * m * (s(1) * s(1) + 2.0 * s(1) * l * c * s(3) + l * l * s(3) * s(3)) +
                         0.5 * (m * l * l / 3.0) * s(3) * s(3);
  return kinetic + m * p.gravity * l * c;
}

Eigen::Vector2d cartpole_tip(const Vector& s, const CartpoleParams& p) {
  const double len = 2.0 * p.pole_half_length;
  return {s(0) + len * std::sin(s(2)), len * std::cos(s(2))};
}

double cartpole_reward(const Vector& state, const Vector& action, const CartpoleParams& p) {
  const Eigen::Vector2d goal(p.goal_x, 2.0 * p.pole_half_length);
  const double d2 = (cartpole_tip(state, p) - goal).squaredNorm();
  return std::exp(-d2 / (p.reward_length * p.reward_length)) - p.action_cost * action(0) * action(0);
}

void ReacherParams::validate() const {
  if ((link_lengths.array() <= 0.0).any() || !(dt > 0) || !(torque_limit > 0) || damping < 0 ||
      substeps < 1)
    throw std::invalid_argument("reacher lengths, dt, torque limit and substeps must be positive");
  if ((target_cov_diag.array() < 0.0).any())
    throw std::invalid_argument("reacher target variances must be non-negative");
}

Vector reacher_derivative(const Vector& s, const Eigen::Vector2d& torque,
                          const ReacherParams& p) {
  const double l1 = p.link_lengths(0), l2 = p.link_lengths(1);
  const double c1 = 0.5 * l1, c2 = 0.5 * l2;  // centers of mass
  const double i1 = l1 * l1 / 12.0, i2 = l2 * l2 / 12.0;
  const double cos2 = std::cos(s(1)), sin2 = std::sin(s(1));
  Eigen::Matrix2d M;
  M(0, 0) = i1 + c1 * c1 + i2 + l1 * l1 + c2 * c2 + 2.0 * l1 * c2 * cos2;
  M(0, 1) = i2 + c2 * c2 + l1 * c2 * cos2;
  M(1, 0) = M(0, 1);
  M(1, 1) = i2 + c2 * c2;
  const double h = l1 * c2 * sin2;
  Eigen::Vector2d bias(-h * (2.0 * s(2) * s(3) + s(3) * s(3)), h * s(2) * s(2));
  const Eigen::Vector2d qd(s(2), s(3));
  const Eigen::Vector2d qdd = M.ldlt().solve(torque - bias - p.damping * qd);
  Vector d = Vector::Zero(6);
  d << s(2), s(3), qdd(0), qdd(1), 0.0, 0.0;
  return d;
}

Vector reacher_step(const Vector& state, const Vector& action, const ReacherParams& p) {
  require_size(state, 6, "reacher_step");
  require_size(action, 2, "reacher_step action");
  require_finite(state, "reacher_step");
  const Eigen::Vector2d torque(std::clamp(action(0), -p.torque_limit, p.torque_limit),
                               std::clamp(action(1), -p.torque_limit, p.torque_limit));
  const double h = p.dt / p.substeps;
  Vector next = state;
  for (int i = 0; i < p.substeps; ++i)
    next = rk4(next, h, [&](const Vector& x) { return reacher_derivative(x, torque, p); });
  next.tail<2>() = state.tail<2>();
  require_finite(next, "reacher_step");
  return next;
}

double reacher_kinetic_energy(const Vector& s, const ReacherParams& p) {
  const double l1 = p.link_lengths(0), l2 = p.link_lengths(1);
  const double c1 = 0.5 * l1, c2 = 0.5 * l2;
  const double i1 = l1 * l1 / 12.0, i2 = l2 * l2 / 12.0;
  const double cos2 = std::cos(s(1));
  Eigen::Matrix2d M;
  M(0, 0) = i1 + c1 * c1 + i2 + l1 * l1 + c2 * c2 + 2.0 * l1 * c2 * cos2;
  M(0, 1) = i2 + c2 * c2 + l1 * c2 * cos2;
  M(1, 0) = M(0, 1);
  M(1, 1) = i2 + c2 * c2;
  const Eigen::Vector2d qd(s(2), s(3));
  return 0.5 * qd.dot(M * qd);
}

Eigen::Vector2d reacher_effector(double q1, double q2, const ReacherParams& p) {
  return {p.link_lengths(0) * std::cos(q1) + p.link_lengths(1) * std::cos(q1 + q2),
          p.link_lengths(0) * std::sin(q1) + p.link_lengths(1) * std::sin(q1 + q2)};
}

double reacher_reward(const Vector& state, const Vector& action, const ReacherParams& p) {
  const Eigen::Vector2d effector = reacher_effector(state(0), state(1), p);
  const Eigen::Vector2d target(state(4), state(5));
  return -(effector - target).norm() - p.action_cost_weight * action.squaredNorm();
}

Eigen::Vector2d sample_reacher_target(const ReacherParams& p, RngStream& rng) {
  const double reach = p.link_lengths.sum();
  const Eigen::Vector2d sd = p.target_cov_diag.cwiseSqrt();
  for (int attempt = 0; attempt <= 1000; ++attempt) {
    const double x = p.target_mean(0) + sd(0) * rng.normal();
    const double y = p.target_mean(1) + sd(1) * rng.normal();
    const Eigen::Vector2d t(x, y);
    if (t.norm() <= reach) return t;
  }
  throw ConfigError("reacher target distribution is unreachable (1000 rejections)");
}

ShapedReward cheetah_shaped_reward(const Vector& next_state, const Vector& action) {
  if (next_state.size() < 3)
    throw std::invalid_argument("cheetah_shaped_reward: state needs at least 3 entries");
  const double control = 0.1 * action.squaredNorm();
  const double raw = next_state(0) - control;
  const double tilt = std::floor(std::abs(next_state(2)) / (std::numbers::pi / 9.0));
  return {raw - tilt, raw};
}

Vector cartpole_reset(const CartpoleParams& p, RngStream& rng) {
  Vector s(4);
  const double x0 = p.start_mode == CartpoleStart::kAtEnd ? -p.rail_half_width + 0.01
                                                          : 0.01 * rng.normal();
  s(0) = x0;
  s(1) = 0.01 * rng.normal();
  s(2) = std::numbers::pi + 0.01 * rng.normal();
  s(3) = 0.01 * rng.normal();
  return s;
}

Vector reacher_reset(const ReacherParams& p, RngStream& rng) {
  Vector s = Vector::Zero(6);
  s(0) = 0.1 * rng.normal();
  s(1) = 0.1 * rng.normal();
  s.tail<2>() = sample_reacher_target(p, rng);
  return s;
}

Environment make_cartpole_environment(const std::string& name, const CartpoleParams& params) {
  params.validate();
  Environment env;
  env.name = name;
  env.state_dim = 4;
  env.action_dim = 1;
  env.action_low = Vector::Constant(1, -params.force_limit);
  env.action_high = Vector::Constant(1, params.force_limit);
  env.default_task_horizon = 200;
  env.dt = params.dt;
  env.step = [params](const Vector& s, const Vector& a) { return cartpole_step(s, a, params); };
  env.reward = [params](const Vector& s, const Vector& a) { return cartpole_reward(s, a, params); };
  env.reset = [params](RngStream& rng) { return cartpole_reset(params, rng); };
  return env;
}

Environment make_reacher_environment(const ReacherParams& params) {
  params.validate();
  Environment env;
  env.name = "reacher";
  env.state_dim = 6;
  env.action_dim = 2;
  env.action_low = Vector::Constant(2, -params.torque_limit);
  env.action_high = Vector::Constant(2, params.torque_limit);
  env.default_task_horizon = 150;
  env.dt = params.dt;
  env.step = [params](const Vector& s, const Vector& a) { return reacher_step(s, a, params); };
  env.reward = [params](const Vector& s, const Vector& a) { return reacher_reward(s, a, params); };
  env.reset = [params](RngStream& rng) { return reacher_reset(params, rng); };
  return env;
}

Environment make_environment(const std::string& name) {
  if (name == "cartpole-modified") return make_cartpole_environment(name, CartpoleParams::modified());
  if (name == "cartpole-center") return make_cartpole_environment(name, CartpoleParams::centered());
  if (name == "reacher") return make_reacher_environment(ReacherParams{});
  throw ConfigError("unknown environment '" + name +
                    "' (expected cartpole-modified|cartpole-center|reacher)");
}

}  // namespace dgpmpc
