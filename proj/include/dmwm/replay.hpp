#pragma once

// Episodic replay storage and fixed-length sequence sampling.
//
// Alignment: entry t of an episode holds (o_t, a_{t-1}, r_{t-1}) with a zero
// action and zero reward at t = 0, so a sequence model consumes the action that
// preceded each observation. Sequences never straddle episodes; episodes
// shorter than the requested length are not sampled.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <shared_mutex>
#include <span>
#include <vector>

#include "dmwm/rng.hpp"
#include "dmwm/tensor.hpp"

namespace dmwm::replay {

struct Episode {
  std::size_t obs_dim = 0;
  std::size_t action_dim = 0;
  std::vector<float> observations;  // length × obs_dim
  std::vector<float> actions;       // length × action_dim
  std::vector<float> rewards;       // length

  std::size_t length() const { return rewards.size(); }
  bool operator==(const Episode&) const = default;
};

// Accumulates an environment rollout into the aligned storage convention.
class EpisodeBuilder {
 public:
  EpisodeBuilder(std::size_t obs_dim, std::size_t action_dim);
  void start(std::span<const double> first_observation);
  // Records that `action` taken at the latest observation produced `reward` and `next_observation`.
  void add(std::span<const double> action, double reward, std::span<const double> next_observation);
  std::size_t length() const { return episode_.length(); }
  Episode finish();

 private:
  Episode episode_;
};

struct SequenceBatch {
  std::size_t batch = 0, length = 0, obs_dim = 0, action_dim = 0;
  std::vector<double> observations;  // [b][t][obs]
  std::vector<double> actions;       // [b][t][act]
  std::vector<double> rewards;       // [b][t]
  std::vector<std::uint8_t> is_first;  // [b][t]

  // B×obs_dim slice at time t.
  Tensor observations_at(std::size_t t) const;
  Tensor actions_at(std::size_t t) const;
  Tensor rewards_at(std::size_t t) const;  // B×1
  Tensor first_mask_at(std::size_t t) const;  // B×1, 1 where is_first
};

class ReplayBuffer {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;
  static constexpr std::size_t kDefaultCapacity = 1000000;

  ReplayBuffer(std::size_t obs_dim, std::size_t action_dim, std::size_t capacity = kDefaultCapacity);

  ReplayBuffer(const ReplayBuffer& o);
  ReplayBuffer& operator=(const ReplayBuffer&) = delete;

  // Throws InputError for non-finite values, mismatched dims, or episodes shorter than 2.
  void add_episode(Episode episode);

  // Draws B start positions uniformly over every (episode, offset) with a full L-step window.
  // Throws NotReady when no stored episode has length ≥ L.
  SequenceBatch sample(std::size_t batch, std::size_t length, Rng& rng) const;

  std::size_t stored_steps() const;
  std::size_t episode_count() const;
  std::size_t capacity() const { return capacity_; }
  std::size_t obs_dim() const { return obs_dim_; }
  std::size_t action_dim() const { return action_dim_; }
  std::vector<Episode> episodes() const;

  void persist(const std::filesystem::path& path) const;
  // Throws VersionError, TruncatedError or FormatError for malformed files.
  static ReplayBuffer load(const std::filesystem::path& path);

  bool operator==(const ReplayBuffer& o) const;

 private:
  using EpisodePtr = std::shared_ptr<const Episode>;
  std::vector<EpisodePtr> snapshot() const;

  std::size_t obs_dim_, action_dim_, capacity_;
  mutable std::shared_mutex mutex_;
  std::deque<EpisodePtr> episodes_;
  std::size_t stored_ = 0;
};

}  // namespace dmwm::replay
