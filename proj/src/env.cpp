#include "dmwm/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dmwm/error.hpp"
#include "dmwm/tensor.hpp"

namespace dmwm::env {

std::vector<double> Environment::reset(std::uint64_t seed) {
  rng_ = Rng(seed);
  steps_ = 0;
  reset_state(rng_);
  return observe();
}

StepResult Environment::step(std::span<const double> action) {
  if (action.size() != spec_.action_dim) {
    throw InputError(spec_.name + ": action has " + std::to_string(action.size()) +
                     " components, expected " + std::to_string(spec_.action_dim));
  }
  if (!all_finite(action)) throw InputError(spec_.name + ": non-finite action");
  std::vector<double> clipped(action.begin(), action.end());
  for (double& a : clipped) a = std::clamp(a, -1.0, 1.0);

  double reward = 0.0;
  for (int k = 0; k < spec_.action_repeat; ++k) reward += substep(clipped);
  ++steps_;
  return StepResult{observe(), reward, steps_ >= spec_.max_episode_steps};
}

Pendulum::Pendulum(EnvSpec spec, PendulumParams params) : Environment(std::move(spec)), params_(params) {}

std::vector<double> Pendulum::observe() const {
  return {std::cos(theta_), std::sin(theta_), theta_dot_};
}

double Pendulum::energy() const {
  const auto& p = params_;
  return 0.5 * p.mass * p.length * p.length * theta_dot_ * theta_dot_ +
         p.mass * p.gravity * p.length * (1.0 + std::cos(theta_));
}

void Pendulum::reset_state(Rng& rng) {
  theta_ = std::numbers::pi + params_.angle_noise * rng.uniform(-1.0, 1.0);
  theta_dot_ = params_.velocity_noise * rng.uniform(-1.0, 1.0);
}

double Pendulum::substep(std::span<const double> action) {
  const auto& p = params_;
  const double dt = spec().dt;
  const double inertia = p.mass * p.length * p.length;
  const double accel = (p.gravity / p.length) * std::sin(theta_) +
                       (action[0] * p.max_torque - p.damping * theta_dot_) / inertia;
  theta_dot_ += dt * accel;
  theta_ += dt * theta_dot_;
  theta_ = std::remainder(theta_, 2.0 * std::numbers::pi);
  return 0.5 * (std::cos(theta_) + 1.0);
}

Cartpole::Cartpole(EnvSpec spec, CartpoleParams params) : Environment(std::move(spec)), params_(params) {}

std::vector<double> Cartpole::observe() const {
  return {x_, std::cos(theta_), std::sin(theta_), x_dot_, theta_dot_};
}

void Cartpole::reset_state(Rng& rng) {
  x_ = params_.position_noise * rng.uniform(-1.0, 1.0);
  x_dot_ = 0.0;
  theta_ = params_.initial_angle + params_.angle_noise * rng.uniform(-1.0, 1.0);
  theta_dot_ = 0.0;
}

double Cartpole::substep(std::span<const double> action) {
  const auto& p = params_;
  const double dt = spec().dt;
  const double total = p.cart_mass + p.pole_mass;
  const double force = action[0] * p.max_force;
  const double s = std::sin(theta_), c = std::cos(theta_);
  const double tmp = (force + p.pole_mass * p.half_length * theta_dot_ * theta_dot_ * s) / total;
  const double theta_acc = (p.gravity * s - c * tmp) /
                           (p.half_length * (4.0 / 3.0 - p.pole_mass * c * c / total));
  const double x_acc = tmp - p.pole_mass * p.half_length * theta_acc * c / total;

  x_dot_ += dt * x_acc;
  theta_dot_ += dt * theta_acc;
  x_ += dt * x_dot_;
  theta_ += dt * theta_dot_;
  theta_ = std::remainder(theta_, 2.0 * std::numbers::pi);
  if (std::abs(x_) > p.track_limit) {
    x_ = std::copysign(p.track_limit, x_);
    x_dot_ = 0.0;
  }
  const double upright = 0.5 * (std::cos(theta_) + 1.0);
  const double rel = x_ / p.track_limit;
  const double centered = 0.5 * (1.0 + std::max(0.0, 1.0 - rel * rel));
  return upright * centered;
}

std::vector<EnvSpec> list_envs() {
  return {
      EnvSpec{"pendulum-swingup", 3, 1, 6, 500, 0.01},
      EnvSpec{"cartpole-balance", 5, 1, 8, 500, 0.01},
      EnvSpec{"cartpole-swingup", 5, 1, 8, 500, 0.01},
  };
}

namespace {
EnvSpec find_spec(std::string_view name) {
  std::string valid;
  for (const EnvSpec& s : list_envs()) {
    if (s.name == name) return s;
    valid += (valid.empty() ? "" : ", ") + s.name;
  }
  throw ConfigError("unknown environment '" + std::string(name) + "'; valid choices: " + valid);
}
}  // namespace

std::unique_ptr<Pendulum> make_pendulum(std::uint64_t seed, PendulumParams params) {
  auto env = std::make_unique<Pendulum>(find_spec("pendulum-swingup"), params);
  env->reset(seed);
  return env;
}

std::unique_ptr<Environment> make_env(std::string_view name, std::uint64_t seed) {
  const EnvSpec spec = find_spec(name);
  std::unique_ptr<Environment> env;
  if (spec.name == "pendulum-swingup") {
    env = std::make_unique<Pendulum>(spec, PendulumParams{});
  } else if (spec.name == "cartpole-balance") {
    env = std::make_unique<Cartpole>(spec, CartpoleParams{});
  } else {
    CartpoleParams p;
    p.initial_angle = std::numbers::pi;
    env = std::make_unique<Cartpole>(spec, p);
  }
  env->reset(seed);
  return env;
}

}  // namespace dmwm::env
