#pragma once

// Dual-system training loop. Each training episode runs `collect_interval`
// update rounds (S1 step, S2 step on detached posterior trajectories,
// actor-critic imagination step, guided S1 step) followed by one exploration
// episode in the real environment. With the MPC planner the actor-critic step
// is skipped and actions come from Grad-MPC.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "dmwm/checkpoint.hpp"
#include "dmwm/config.hpp"
#include "dmwm/env.hpp"
#include "dmwm/logic.hpp"
#include "dmwm/metrics.hpp"
#include "dmwm/nn.hpp"
#include "dmwm/planners.hpp"
#include "dmwm/replay.hpp"
#include "dmwm/rng.hpp"
#include "dmwm/rssm.hpp"

namespace dmwm::harness {

struct RoundStats {
  double pred = 0.0;
  double dyn = 0.0;
  double rep = 0.0;
  double logic_elbo = 0.0;
  double s2 = 0.0;
  std::array<double, logic::kRuleCount> residuals{};
  double actor_loss = 0.0;
  double critic_loss = 0.0;
};

using RowCallback = std::function<void(const metrics::MetricsRow&)>;

class Trainer {
 public:
  // Validates the configuration before allocating anything.
  explicit Trainer(const config::RunConfig& cfg);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const config::RunConfig& config() const { return cfg_; }
  const env::EnvSpec& env_spec() const { return spec_; }

  // Fills the replay with the seed episodes once; later calls do nothing.
  void seed_replay();
  // Seeds if needed, then runs `episodes` training episodes.
  void train(std::size_t episodes, const RowCallback& on_row = {});
  RoundStats update_round();
  // One real-environment episode with exploration, appended to replay. Returns its return.
  double collect_episode();

  // Action for a single filtered state; deterministic unless `explore`.
  Tensor act(const rssm::ModelState& state, bool explore, Rng& rng);

  std::size_t episodes_done() const { return episodes_done_; }
  std::size_t update_rounds() const { return rounds_; }
  std::size_t env_steps() const { return env_steps_; }
  std::size_t env_trials() const { return env_trials_; }
  bool seeded() const { return seeded_; }
  const std::vector<metrics::MetricsRow>& metrics() const { return rows_; }

  rssm::Rssm& model() { return *model_; }
  logic::LogicEngine& logic() { return *logic_; }
  planners::ActorCritic& actor_critic() { return *ac_; }
  replay::ReplayBuffer& replay() { return *replay_; }
  Rng& rng() { return rng_; }

  // Writes checkpoint.bin, metrics.csv and config.txt into `dir` and replay.bin
  // into `replay_dir` (default `dir`).
  void save(const std::filesystem::path& dir, const std::filesystem::path& replay_dir = {}) const;
  static std::unique_ptr<Trainer> load(const std::filesystem::path& dir, const std::filesystem::path& replay_dir = {});

 private:
  metrics::MetricsRow make_row(const std::vector<RoundStats>& rounds) const;
  void restore(const checkpoint::Container& c, const std::filesystem::path& dir, const std::filesystem::path& replay_file);

  config::RunConfig cfg_;
  env::EnvSpec spec_;
  std::unique_ptr<rssm::Rssm> model_;
  std::unique_ptr<logic::LogicEngine> logic_;
  std::unique_ptr<planners::ActorCritic> ac_;
  std::unique_ptr<replay::ReplayBuffer> replay_;
  nn::Adam model_opt_;
  nn::Sgd logic_opt_;
  Rng rng_;

  bool seeded_ = false;
  std::size_t episodes_done_ = 0;
  std::size_t rounds_ = 0;
  std::size_t env_steps_ = 0;
  std::size_t env_trials_ = 0;
  std::vector<metrics::MetricsRow> rows_;
};

}  // namespace dmwm::harness
