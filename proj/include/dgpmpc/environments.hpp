#pragma once

#include <functional>
#include <string>

#include "dgpmpc/common.hpp"
#include "dgpmpc/random.hpp"

namespace dgpmpc {

enum class CartpoleStart { kAtEnd, kAtCenter };

// Frictionless cart with a uniform pole on a bounded rail. State is
// (x, x_dot, phi, phi_dot) with phi measured from upright; the rail ends are
// rigid walls.
struct CartpoleParams {
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_half_length = 0.5;
  double gravity = 9.81;
  double rail_half_width = 1.5;
  double dt = 0.05;
  double force_limit = 10.0;
  CartpoleStart start_mode = CartpoleStart::kAtEnd;
  double goal_x = -1.2;
  double reward_length = 0.5;  // l_c in exp(-d^2 / l_c^2)
  double action_cost = 0.0;    // w_a on the squared force

  // Target near the wall the cart starts against.
  static CartpoleParams modified();
  // Cart starts at the rail center and the target is the center.
  static CartpoleParams centered();
  void validate() const;
};

Vector cartpole_step(const Vector& state, const Vector& action, const CartpoleParams& params);
// Continuous-time state derivative under a (clipped) force.
Vector cartpole_derivative(const Vector& state, double force, const CartpoleParams& params);
double cartpole_energy(const Vector& state, const CartpoleParams& params);
Eigen::Vector2d cartpole_tip(const Vector& state, const CartpoleParams& params);
double cartpole_reward(const Vector& state, const Vector& action, const CartpoleParams& params);

// Planar two-link arm, uniform unit-mass links, viscous joint damping, no
// gravity. State is (q1, q2, q1_dot, q2_dot, target_x, target_y).
struct ReacherParams {
  Eigen::Vector2d link_lengths{0.25, 0.25};
  double dt = 0.05;
  double torque_limit = 1.0;
  double damping = 0.1;
  Eigen::Vector2d target_mean{0.35, 0.05};
  Eigen::Vector2d target_cov_diag{0.05 * 0.05, 0.05 * 0.05};
  double action_cost_weight = 0.01;
  // RK4 substeps per control step. The damped arm is stiff at these link
  // lengths (fast mode of M^-1 * damping near 25/s).
  int substeps = 10;

  void validate() const;
};

Vector reacher_step(const Vector& state, const Vector& action, const ReacherParams& params);
Vector reacher_derivative(const Vector& state, const Eigen::Vector2d& torque,
                          const ReacherParams& params);
double reacher_kinetic_energy(const Vector& state, const ReacherParams& params);
Eigen::Vector2d reacher_effector(double q1, double q2, const ReacherParams& params);
double reacher_reward(const Vector& state, const Vector& action, const ReacherParams& params);
// Rejection-samples the target Gaussian inside the reachable disc; throws
// ConfigError after 1000 rejections.
Eigen::Vector2d sample_reacher_target(const ReacherParams& params, RngStream& rng);

struct ShapedReward {
  double shaped = 0.0;
  double raw = 0.0;
};

// Risk-sensitive running reward for a forward-walking robot: next_state[0]
// is forward velocity and next_state[2] the back angle in radians. The
// shaped value subtracts one unit per pi/9 of back tilt.
ShapedReward cheetah_shaped_reward(const Vector& next_state, const Vector& action);

// Uniform interface the harness and planner use for any task.
struct Environment {
  std::string name;
  Index state_dim = 0;
  Index action_dim = 0;
  Vector action_low;
  Vector action_high;
  Index default_task_horizon = 0;
  double dt = 0.0;
  std::function<Vector(const Vector&, const Vector&)> step;
  // Reward of landing in next_state after taking action.
  std::function<double(const Vector&, const Vector&)> reward;
  std::function<Vector(RngStream&)> reset;
};

// "cartpole-modified", "cartpole-center" or "reacher".
Environment make_environment(const std::string& name);
Environment make_cartpole_environment(const std::string& name, const CartpoleParams& params);
Environment make_reacher_environment(const ReacherParams& params);

Vector cartpole_reset(const CartpoleParams& params, RngStream& rng);
Vector reacher_reset(const ReacherParams& params, RngStream& rng);

// Pole angle wrapped to (-pi, pi], zero at upright.
double wrap_angle(double phi);

}  // namespace dgpmpc
