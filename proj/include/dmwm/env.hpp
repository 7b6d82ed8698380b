#pragma once

// Analytic continuous-control environments with action-repeat semantics.
//
// Angles are measured from upright (θ = 0 up, θ = π hanging). Observations
// encode angles as (cos θ, sin θ). Every physics substep uses semi-implicit
// Euler and yields a reward in [0, 1]; a decision step sums action_repeat of
// them. Episodes end only on the time limit.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dmwm/rng.hpp"

namespace dmwm::env {

struct EnvSpec {
  std::string name;
  std::size_t obs_dim = 0;
  std::size_t action_dim = 0;
  int action_repeat = 1;
  int max_episode_steps = 500;
  double dt = 0.01;
};

struct StepResult {
  std::vector<double> observation;
  double reward = 0.0;
  bool terminal = false;
};

class Environment {
 public:
  virtual ~Environment() = default;

  const EnvSpec& spec() const { return spec_; }
  int steps() const { return steps_; }

  std::vector<double> reset(std::uint64_t seed);
  // Clips the action to [-1, 1]; throws InputError on non-finite components or wrong size.
  StepResult step(std::span<const double> action);

  virtual std::vector<double> observe() const = 0;

 protected:
  explicit Environment(EnvSpec spec) : spec_(std::move(spec)) {}
  virtual void reset_state(Rng& rng) = 0;
  // Advances one physics substep and returns its reward in [0, 1].
  virtual double substep(std::span<const double> action) = 0;

 private:
  EnvSpec spec_;
  Rng rng_;
  int steps_ = 0;
};

struct PendulumParams {
  double mass = 1.0;
  double length = 1.0;
  double gravity = 9.81;
  double max_torque = 2.0;
  double damping = 0.0;
  // Initial state: θ = π + angle_noise·U(−1, 1), θ̇ = velocity_noise·U(−1, 1).
  double angle_noise = 0.1;
  double velocity_noise = 0.1;
};

class Pendulum final : public Environment {
 public:
  Pendulum(EnvSpec spec, PendulumParams params);

  std::vector<double> observe() const override;

  double angle() const { return theta_; }
  double velocity() const { return theta_dot_; }
  void set_state(double theta, double theta_dot) {
    theta_ = theta;
    theta_dot_ = theta_dot;
  }
  // ½ml²θ̇² + mgl(1 + cos θ); zero at rest hanging down.
  double energy() const;
  const PendulumParams& params() const { return params_; }

 protected:
  void reset_state(Rng& rng) override;
  double substep(std::span<const double> action) override;

 private:
  PendulumParams params_;
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
};

struct CartpoleParams {
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double half_length = 0.5;
  double gravity = 9.81;
  double max_force = 10.0;
  double track_limit = 3.0;
  double initial_angle = 0.0;  // mean initial θ (0 balance, π swing-up)
  double angle_noise = 0.05;
  double position_noise = 0.05;
};

class Cartpole final : public Environment {
 public:
  Cartpole(EnvSpec spec, CartpoleParams params);

  std::vector<double> observe() const override;

  double angle() const { return theta_; }
  double position() const { return x_; }

 protected:
  void reset_state(Rng& rng) override;
  double substep(std::span<const double> action) override;

 private:
  CartpoleParams params_;
  double x_ = 0.0, x_dot_ = 0.0, theta_ = 0.0, theta_dot_ = 0.0;
};

// Names accepted by make_env.
std::vector<EnvSpec> list_envs();

// Throws ConfigError naming the valid choices for an unknown name.
std::unique_ptr<Environment> make_env(std::string_view name, std::uint64_t seed);

std::unique_ptr<Pendulum> make_pendulum(std::uint64_t seed, PendulumParams params = {});

}  // namespace dmwm::env
