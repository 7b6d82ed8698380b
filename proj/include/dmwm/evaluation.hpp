#pragma once

// Evaluation protocols over a trained run: deterministic-action returns, a
// random-policy baseline, consistency tables over imagined rollouts and logic
// heatmaps. Every episode and start state draws from a stream derived from
// (seed, index), so results do not depend on execution order.

#include <cstdint>
#include <string>
#include <vector>

#include "dmwm/reasoning.hpp"
#include "dmwm/trainer.hpp"

namespace dmwm::evaluation {

inline constexpr std::size_t kDefaultEpisodes = 100;
inline constexpr std::size_t kDefaultStarts = 100;

struct ReturnStats {
  std::vector<double> returns;  // per episode, in episode-index order
  double mean = 0.0;
  double stddev = 0.0;  // population std; 0 for one episode
};

ReturnStats summarize(std::vector<double> returns);

// Deterministic-action episodes of the trained policy. A non-empty `env` that
// differs from the run's environment throws ConfigError.
ReturnStats evaluate(harness::Trainer& trainer, std::size_t episodes, std::uint64_t seed,
                     const std::string& env = "");

// Uniform random actions in [−1, 1], scored the same way.
ReturnStats random_baseline(const std::string& env, std::size_t episodes, std::uint64_t seed);

// Imagined rollouts of `horizon` steps from `starts` posterior states. Each
// start is the last posterior of a replay sequence; actions follow the actor's
// mode (actor-critic runs) or uniform random actions (MPC runs). Returns
// horizon + 1 latent features and horizon actions per rollout.
reasoning::Trajectories imagine_trajectories(harness::Trainer& trainer, std::size_t horizon, std::size_t starts,
                                             std::uint64_t seed);

// One report per horizon; all horizons share the same start states.
std::vector<reasoning::ConsistencyReport> consistency_table(harness::Trainer& trainer,
                                                            const std::vector<std::size_t>& horizons,
                                                            std::size_t depth, std::size_t starts,
                                                            std::uint64_t seed);

// alpha×alpha heatmap over rollouts of alpha steps.
Tensor heatmap(harness::Trainer& trainer, std::size_t alpha, std::size_t starts, std::uint64_t seed);

}  // namespace dmwm::evaluation
