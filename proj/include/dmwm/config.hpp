#pragma once

// Run configuration. The text format is one `Group/Name = value` per line with
// `#` comments; names follow the hyperparameter table. Later lines and
// explicit overrides win.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmwm/logic.hpp"
#include "dmwm/planners.hpp"
#include "dmwm/reasoning.hpp"
#include "dmwm/rssm.hpp"

namespace dmwm::config {

struct RunConfig {
  // General
  std::size_t replay_capacity = 1000000;
  std::size_t batch_size = 50;
  std::size_t sequence_length = 64;
  std::size_t seed_episodes = 5;
  std::size_t training_episodes = 1000;
  std::size_t collect_interval = 100;
  std::size_t max_episode_length = 500;
  double exploration_noise = 0.3;
  std::size_t imagination_horizon = 30;
  double gradient_clipping = 100.0;
  // RSSM-S1
  std::size_t embedding_size = 1024;
  std::size_t hidden_size = 200;
  std::size_t belief_size = 200;
  std::size_t state_size = 30;
  double free_nats = 3.0;
  double dyn_weight = 1.0;
  double rep_weight = 1.0;
  double model_adam_eps = 1e-4;
  double model_lr = 1e-3;
  double min_std = 0.1;
  // LINN-S2
  std::size_t reasoning_depth = 30;
  std::size_t logic_size = 64;
  double l2_weight = 1e-5;
  double reg_weight = 1.0;
  std::size_t logic_mlp_number = 3;
  double logic_lr = 1e-2;
  double kappa = 10.0;
  double not_gain = 1.0;
  double gate_gain = 0.05;
  std::size_t s2_sequences = 0;   // sequences of each batch used for the S2 step; 0 uses all
  std::size_t s2_length = 0;      // leading steps of each sequence used for the S2 step; 0 uses all
  std::size_t reg_samples = 0;    // regularizer sample rows; 0 uses every embedding
  // Actor-Critic
  double return_lambda = 0.95;
  double discount = 0.99;
  double ac_adam_eps = 1e-4;
  double actor_lr = 1e-4;
  double critic_lr = 1e-4;
  std::size_t ac_hidden = 400;
  std::size_t ac_layers = 3;
  // Grad-MPC
  std::size_t mpc_iterations = 40;
  std::size_t mpc_candidates = 1000;
  std::vector<double> mpc_learning_rates{0.1, 0.01, 0.005, 0.0001};
  std::size_t mpc_horizon = 30;
  // Feedback
  double logic_weight = 0.1;
  // Harness
  std::string env = "pendulum-swingup";
  std::string planner = "ac";
  std::uint64_t seed = 0;
  std::size_t eval_episodes = 100;
  std::size_t eval_every = 0;  // training episodes between evaluations; 0 disables periodic evaluation
  std::size_t imagination_starts = 0;  // posterior states used as imagination starts; 0 uses all

  bool operator==(const RunConfig&) const = default;
};

// Every key accepted by the text format, in canonical order.
const std::vector<std::string>& keys();

// Throws ConfigError on an unknown key or unparsable value.
void set(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get(const RunConfig& cfg, const std::string& key);

RunConfig parse(const std::string& text, RunConfig base = {});
RunConfig load(const std::filesystem::path& path, RunConfig base = {});
// Canonical text form; parse(to_text(c)) == c.
std::string to_text(const RunConfig& cfg);

nlohmann::json to_json(const RunConfig& cfg);
RunConfig from_json(const nlohmann::json& j);

// Throws ConfigError describing the first invalid field.
void validate(const RunConfig& cfg);

rssm::RssmConfig rssm_config(const RunConfig& cfg, std::size_t obs_dim, std::size_t action_dim);
logic::LogicConfig logic_config(const RunConfig& cfg, std::size_t latent_dim, std::size_t action_dim);
reasoning::S2LossConfig s2_config(const RunConfig& cfg);
planners::ActorCriticConfig ac_config(const RunConfig& cfg);
planners::PlanConfig plan_config(const RunConfig& cfg);

}  // namespace dmwm::config
