#include <cmath>
#include <numbers>

#include "doctest.h"
#include "dgpmpc/environments.hpp"

using namespace dgpmpc;

namespace {

constexpr double kPi = std::numbers::pi;

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Plain RK4 with 100 substeps per control step and no wall handling.
template <typename Deriv>
Vector fine_step(const Vector& x0, double dt, Deriv&& f) {
  const double h = dt / 100.0;
  Vector x = x0;
  for (int i = 0; i < 100; ++i) {
    const Vector k1 = f(x);
    const Vector k2 = f(x + 0.5 * h * k1);
    const Vector k3 = f(x + 0.5 * h * k2);
    const Vector k4 = f(x + h * k3);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return x;
}

}  // namespace

TEST_CASE("cartpole fixed points") {
  const CartpoleParams p = CartpoleParams::centered();
  const Vector zero = vec({0.0});
  const Vector upright = vec({0.0, 0.0, 0.0, 0.0});
  CHECK(cartpole_step(upright, zero, p) == upright);
  const Vector hanging = vec({0.0, 0.0, kPi, 0.0});
  const Vector next = cartpole_step(hanging, zero, p);
  CHECK((next - hanging).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cartpole pushed into the wall stops there") {
  CartpoleParams p = CartpoleParams::centered();
  const Vector force = vec({10.0});
  Vector s = vec({0.0, 0.0, kPi, 0.0});
  Vector ref = s;
  bool contact = false;
  for (int t = 0; t < 200; ++t) {
    s = cartpole_step(s, force, p);
    if (!contact) {
      ref = fine_step(ref, p.dt, [&](const Vector& x) { return cartpole_derivative(x, 10.0, p); });
      if (ref(0) < p.rail_half_width) {
        CHECK((s - ref).cwiseAbs().maxCoeff() < 1e-3);
      } else {
        contact = true;
      }
    }
    if (contact) {
      CHECK(s(0) == p.rail_half_width);
      CHECK(s(1) == 0.0);
    }
  }
  CHECK(contact);
}

TEST_CASE("cartpole force is clipped") {
  const CartpoleParams p = CartpoleParams::centered();
  const Vector s = vec({0.0, 0.0, kPi, 0.0});
  CHECK(cartpole_step(s, vec({50.0}), p) == cartpole_step(s, vec({p.force_limit}), p));
  CHECK(cartpole_step(s, vec({-50.0}), p) == cartpole_step(s, vec({-p.force_limit}), p));
}

TEST_CASE("cartpole conserves energy away from the walls") {
  CartpoleParams p = CartpoleParams::centered();
  p.dt = 0.02;
  Vector s = vec({0.0, 0.0, 0.3, 0.0});
  const double e0 = cartpole_energy(s, p);
  for (int t = 0; t < 200; ++t) {
    s = cartpole_step(s, vec({0.0}), p);
    REQUIRE(std::abs(s(0)) < p.rail_half_width);
  }
  CHECK(std::abs(cartpole_energy(s, p) - e0) < 1e-3 * std::abs(e0));
}

TEST_CASE("cartpole stays on the rail for random inputs") {
  const CartpoleParams p = CartpoleParams::modified();
  RngStream rng(3);
  for (int i = 0; i < 100000; ++i) {
    Vector s(4);
    s << (2.0 * rng.uniform() - 1.0) * p.rail_half_width, 4.0 * rng.normal(),
        kPi * (2.0 * rng.uniform() - 1.0), 6.0 * rng.normal();
    const Vector a = vec({15.0 * (2.0 * rng.uniform() - 1.0)});
    const Vector next = cartpole_step(s, a, p);
    REQUIRE(std::abs(next(0)) <= p.rail_half_width);
    REQUIRE(next == cartpole_step(s, a, p));
  }
}

TEST_CASE("cartpole rejects non-finite states") {
  const CartpoleParams p = CartpoleParams::modified();
  CHECK_THROWS_AS(cartpole_step(vec({NAN, 0, 0, 0}), vec({0.0}), p), InvalidState);
}

TEST_CASE("cartpole reward") {
  const CartpoleParams p = CartpoleParams::modified();
  const Vector zero = vec({0.0});
  CHECK(cartpole_reward(vec({p.goal_x, 0.0, 0.0, 0.0}), zero, p) == 1.0);

  // Tip offset horizontally by exactly l_c.
  const Vector away = vec({p.goal_x + p.reward_length, 0.0, 0.0, 0.0});
  CHECK(cartpole_reward(away, zero, p) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));

  double previous = 2.0;
  for (double dx : {0.0, 0.05, 0.1, 0.3, 0.6, 1.0, 2.0}) {
    const double r = cartpole_reward(vec({p.goal_x + dx, 0.0, 0.0, 0.0}), zero, p);
    CHECK(r < previous);
    previous = r;
  }

  CartpoleParams costly = p;
  costly.action_cost = 0.01;
  CHECK(cartpole_reward(vec({p.goal_x, 0.0, 0.0, 0.0}), vec({2.0}), costly) ==
        doctest::Approx(1.0 - 0.04));
}

TEST_CASE("cartpole parameter validation") {
  CartpoleParams p = CartpoleParams::modified();
  p.dt = 0.1;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = CartpoleParams::modified();
  p.goal_x = 2.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("reacher at rest stays at rest") {
  const ReacherParams p;
  const Vector s = vec({0.3, -0.7, 0.0, 0.0, 0.2, 0.1});
  CHECK((reacher_step(s, vec({0.0, 0.0}), p) - s).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("reacher dissipates energy without torque") {
  const ReacherParams p;
  Vector s = vec({0.1, 0.5, 2.0, -3.0, 0.3, 0.0});
  double previous = reacher_kinetic_energy(s, p);
  for (int t = 0; t < 100; ++t) {
    s = reacher_step(s, vec({0.0, 0.0}), p);
    const double e = reacher_kinetic_energy(s, p);
    CHECK(e <= previous);
    previous = e;
  }
}

TEST_CASE("reacher matches a fine reference integrator") {
  const ReacherParams p;
  RngStream rng(5);
  Vector s = vec({0.2, -0.4, 0.5, 1.0, 0.3, 0.05});
  Vector ref = s;
  for (int t = 0; t < 50; ++t) {
    const Eigen::Vector2d tau(rng.uniform() * 2 - 1, rng.uniform() * 2 - 1);
    s = reacher_step(s, Vector(tau), p);
    ref = fine_step(ref, p.dt, [&](const Vector& x) { return reacher_derivative(x, tau, p); });
    CHECK((s - ref).cwiseAbs().maxCoeff() < 1e-3);
  }
}

TEST_CASE("reacher forward kinematics and reward") {
  ReacherParams p;
  p.link_lengths = {0.1, 0.1};
  const Eigen::Vector2d e = reacher_effector(0.0, kPi / 2, p);
  CHECK(e(0) == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(e(1) == doctest::Approx(0.1).epsilon(1e-14));
  const Vector zero = vec({0.0, 0.0});
  CHECK(std::abs(reacher_reward(vec({0.0, kPi / 2, 0, 0, 0.1, 0.1}), zero, p)) < 1e-15);

  // Arm stretched along x, effector at (0.2, 0).
  const double r1 = reacher_reward(vec({0, 0, 0, 0, 0.2, 0.05}), zero, p);
  const double r2 = reacher_reward(vec({0, 0, 0, 0, 0.2, 0.10}), zero, p);
  CHECK(r1 == doctest::Approx(-0.05));
  CHECK(r2 == doctest::Approx(2.0 * r1));
  CHECK(reacher_reward(vec({0, 0, 0, 0, 0.2, 0.0}), vec({1.0, 1.0}), p) ==
        doctest::Approx(-2.0 * p.action_cost_weight));
}

TEST_CASE("reacher target sampling") {
  ReacherParams p;
  RngStream rng(7);
  const double reach = p.link_lengths.sum();
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d t = sample_reacher_target(p, rng);
    REQUIRE(t.norm() <= reach);
    sum += t;
  }
  const Eigen::Vector2d mean = sum / n;
  const Eigen::Vector2d se = p.target_cov_diag.cwiseSqrt() / std::sqrt(double(n));
  CHECK(std::abs(mean(0) - p.target_mean(0)) <= 3 * se(0));
  CHECK(std::abs(mean(1) - p.target_mean(1)) <= 3 * se(1));

  p.target_cov_diag.setZero();
  CHECK(sample_reacher_target(p, rng) == p.target_mean);

  p.target_mean = {5.0, 5.0};
  CHECK_THROWS_AS(sample_reacher_target(p, rng), ConfigError);
}

TEST_CASE("cheetah shaped reward") {
  ShapedReward r = cheetah_shaped_reward(vec({2.0, 0.0, 0.0}), vec({0.0}));
  CHECK(r.shaped == 2.0);
  CHECK(r.raw == 2.0);

  r = cheetah_shaped_reward(vec({1.0, 0.0, kPi / 8}), vec({1.0}));
  CHECK(r.shaped == doctest::Approx(-0.1).epsilon(1e-14));
  CHECK(r.raw == doctest::Approx(0.9).epsilon(1e-14));

  r = cheetah_shaped_reward(vec({1.0, 0.0, std::nextafter(kPi / 9, 0.0)}), vec({0.5}));
  CHECK(r.shaped == r.raw);
  r = cheetah_shaped_reward(vec({1.0, 0.0, -kPi / 4}), vec({0.5}));
  CHECK(r.raw - r.shaped == 2.0);

  RngStream rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Vector s = vec({rng.normal(), rng.normal(), 3.0 * rng.normal()});
    const ShapedReward x = cheetah_shaped_reward(s, vec({rng.normal(), rng.normal()}));
    CHECK(x.shaped <= x.raw);
  }
  CHECK_THROWS_AS(cheetah_shaped_reward(vec({1.0, 2.0}), vec({0.0})), std::invalid_argument);
}

TEST_CASE("resets") {
  const CartpoleParams end = CartpoleParams::modified();
  RngStream a(11), b(11);
  for (int i = 0; i < 100; ++i) {
    const Vector s = cartpole_reset(end, a);
    CHECK(s == cartpole_reset(end, b));
    CHECK(s(0) + end.rail_half_width <= 0.05);
    CHECK(std::abs(s(2) - kPi) < 0.1);
  }
  const CartpoleParams center = CartpoleParams::centered();
  CHECK(std::abs(cartpole_reset(center, a)(0)) < 0.1);
  cartpole_reset(center, b);

  const ReacherParams rp;
  for (int i = 0; i < 100; ++i) {
    const Vector s = reacher_reset(rp, a);
    CHECK(s == reacher_reset(rp, b));
    CHECK(s.segment<2>(2).isZero());
    CHECK(s.tail<2>().norm() <= rp.link_lengths.sum());
  }
}

TEST_CASE("environment factory") {
  const Environment env = make_environment("cartpole-modified");
  CHECK(env.state_dim == 4);
  CHECK(env.action_dim == 1);
  CHECK(make_environment("reacher").action_dim == 2);
  CHECK_THROWS_AS(make_environment("pendulum"), ConfigError);
  CHECK(wrap_angle(3 * kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(0.5) == 0.5);
}
