#pragma once

// Decision modules over imagined rollouts: a λ-return actor-critic and a
// gradient-based model-predictive planner.

#include <functional>
#include <vector>

#include "dmwm/autodiff.hpp"
#include "dmwm/nn.hpp"
#include "dmwm/rng.hpp"
#include "dmwm/rssm.hpp"

namespace dmwm::planners {

// R_τ = r_τ + γ((1−λ) v_{τ+1} + λ R_{τ+1}), R_H = v_H.
// `values` holds v(s_0) … v(s_H) (H + 1 entries); returns R_0 … R_{H−1}.
std::vector<double> lambda_returns(const std::vector<double>& rewards, const std::vector<double>& values,
                                   double gamma, double lambda);

// Same recursion over B×1 Vars.
std::vector<ad::Var> lambda_returns(const std::vector<ad::Var>& rewards, const std::vector<ad::Var>& values,
                                    double gamma, double lambda);

struct ActorCriticConfig {
  std::size_t hidden = 400;
  std::size_t layers = 3;  // affine layers per network
  double gamma = 0.99;
  double lambda = 0.95;
  double actor_lr = 1e-4;
  double critic_lr = 1e-4;
  double adam_eps = 1e-4;
  double clip = 100.0;
  std::size_t horizon = 30;
  double explore_noise = 0.3;
  double min_std = 1e-4;
  double init_std = 5.0;
  double mean_scale = 5.0;  // pre-squash mean is mean_scale·tanh(raw / mean_scale)
};

// Feature sequence and predicted rewards of a rollout driven by a policy.
struct Rollout {
  std::vector<ad::Var> features;  // H + 1, each B×feature
  std::vector<ad::Var> rewards;   // H, each B×1
};

using Policy = std::function<ad::Var(ad::Tape&, ad::Var feature)>;
using Dynamics = std::function<Rollout(ad::Tape&, const Policy&)>;

struct ActorCriticStats {
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double mean_return = 0.0;
};

class ActorCritic {
 public:
  ActorCritic(std::size_t feature_dim, std::size_t action_dim, const ActorCriticConfig& cfg, Rng& rng);
  ActorCritic(const ActorCritic&) = delete;
  ActorCritic& operator=(const ActorCritic&) = delete;

  const ActorCriticConfig& config() const { return cfg_; }
  std::size_t action_dim() const { return action_dim_; }

  // Pre-squash Gaussian parameters, each B×action; the mean is bounded by mean_scale.
  rssm::DiagGaussian distribution(ad::Tape& tape, ad::Var feature, nn::Grad mode = nn::Grad::kTrain);
  // tanh(μ + σ·ε), reparameterized.
  ad::Var sample(ad::Tape& tape, ad::Var feature, Rng& rng, nn::Grad mode = nn::Grad::kTrain);
  // tanh(μ).
  ad::Var mode_action(ad::Tape& tape, ad::Var feature, nn::Grad mode = nn::Grad::kFrozen);
  ad::Var value(ad::Tape& tape, ad::Var feature, nn::Grad mode = nn::Grad::kTrain);

  // Environment action for a batch of features. explore samples the policy, adds
  // N(0, noise²) and clips to [−1, 1]; otherwise returns tanh(μ).
  Tensor act(const Tensor& feature, bool explore, Rng& rng);

  // −mean_τ R^λ_τ with gradient into the actor through the rollout; critic frozen.
  ad::Var actor_loss(ad::Tape& tape, const Rollout& rollout);
  // mean_τ ½(v(s_τ) − sg(R^λ_τ))² over detached features; gradient into the critic only.
  ad::Var critic_loss(ad::Tape& tape, const std::vector<Tensor>& features, const std::vector<Tensor>& returns);

  // One actor step and one critic step on a rollout produced by `dynamics`.
  ActorCriticStats update(const Dynamics& dynamics, Rng& rng);
  // Imagines from posterior start states through the frozen world model.
  ActorCriticStats update(rssm::Rssm& model, const rssm::ModelState& start, Rng& rng);

  nn::ParamList actor_parameters() { return actor_.parameters(); }
  nn::ParamList critic_parameters() { return critic_.parameters(); }
  nn::Adam& actor_optimizer() { return actor_opt_; }
  nn::Adam& critic_optimizer() { return critic_opt_; }

 private:
  ActorCriticConfig cfg_;
  std::size_t action_dim_;
  nn::Mlp actor_;
  nn::Mlp critic_;
  nn::Adam actor_opt_;
  nn::Adam critic_opt_;
};

struct PlanConfig {
  std::size_t iterations = 40;
  std::size_t candidates = 1000;
  std::size_t horizon = 30;
  std::vector<double> learning_rates{0.1, 0.01, 0.005, 0.0001};  // equal phases over the iterations
  double init_mean = 0.0;
  double init_std = 0.5;
};

// Total predicted reward (J×1) of J candidate action sequences; actions[τ] is J×action.
using PlanObjective = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>& actions)>;

struct PlanResult {
  std::vector<Tensor> actions;       // H entries, each 1×action
  double best_return = 0.0;
  std::vector<double> best_per_iteration;  // best R among the current candidates, I + 1 entries
};

double plan_learning_rate(const PlanConfig& cfg, std::size_t iteration);

PlanResult plan_grad_mpc(const PlanObjective& objective, std::size_t action_dim, const PlanConfig& cfg, Rng& rng);

// Rollouts through prior means of a frozen world model from a single start state.
PlanObjective world_model_objective(rssm::Rssm& model, const rssm::ModelState& start);

}  // namespace dmwm::planners
