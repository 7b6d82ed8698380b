#include "dmwm/replay.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "dmwm/binary_io.hpp"
#include "dmwm/error.hpp"

namespace dmwm::replay {

namespace {
constexpr std::string_view kMagic = "DMWMRPLY";

bool finite(const std::vector<float>& v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}
}  // namespace

EpisodeBuilder::EpisodeBuilder(std::size_t obs_dim, std::size_t action_dim) {
  episode_.obs_dim = obs_dim;
  episode_.action_dim = action_dim;
}

void EpisodeBuilder::start(std::span<const double> first_observation) {
  if (first_observation.size() != episode_.obs_dim) throw InputError("EpisodeBuilder: observation size");
  episode_.observations.assign(first_observation.begin(), first_observation.end());
  episode_.actions.assign(episode_.action_dim, 0.0f);
  episode_.rewards.assign(1, 0.0f);
}

void EpisodeBuilder::add(std::span<const double> action, double reward,
                         std::span<const double> next_observation) {
  if (episode_.rewards.empty()) throw InputError("EpisodeBuilder: add before start");
  if (action.size() != episode_.action_dim || next_observation.size() != episode_.obs_dim) {
    throw InputError("EpisodeBuilder: dimension mismatch");
  }
  episode_.observations.insert(episode_.observations.end(), next_observation.begin(), next_observation.end());
  episode_.actions.insert(episode_.actions.end(), action.begin(), action.end());
  episode_.rewards.push_back(static_cast<float>(reward));
}

Episode EpisodeBuilder::finish() {
  Episode out = std::move(episode_);
  episode_ = Episode{};
  episode_.obs_dim = out.obs_dim;
  episode_.action_dim = out.action_dim;
  return out;
}

namespace {
Tensor slice_at(const std::vector<double>& src, std::size_t batch, std::size_t length,
                std::size_t dim, std::size_t t) {
  Tensor out(batch, dim);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* p = src.data() + (b * length + t) * dim;
    std::copy(p, p + dim, out.data.begin() + b * dim);
  }
  return out;
}
}  // namespace

Tensor SequenceBatch::observations_at(std::size_t t) const { return slice_at(observations, batch, length, obs_dim, t); }
Tensor SequenceBatch::actions_at(std::size_t t) const { return slice_at(actions, batch, length, action_dim, t); }
Tensor SequenceBatch::rewards_at(std::size_t t) const { return slice_at(rewards, batch, length, 1, t); }

Tensor SequenceBatch::first_mask_at(std::size_t t) const {
  Tensor out(batch, 1);
  for (std::size_t b = 0; b < batch; ++b) out.data[b] = is_first[b * length + t] ? 1.0 : 0.0;
  return out;
}

ReplayBuffer::ReplayBuffer(std::size_t obs_dim, std::size_t action_dim, std::size_t capacity)
    : obs_dim_(obs_dim), action_dim_(action_dim), capacity_(capacity) {
  if (obs_dim == 0 || action_dim == 0 || capacity == 0) throw ConfigError("ReplayBuffer: zero dimension or capacity");
}

ReplayBuffer::ReplayBuffer(const ReplayBuffer& o)
    : obs_dim_(o.obs_dim_), action_dim_(o.action_dim_), capacity_(o.capacity_) {
  std::shared_lock lock(o.mutex_);
  episodes_ = o.episodes_;
  stored_ = o.stored_;
}

void ReplayBuffer::add_episode(Episode episode) {
  const std::size_t len = episode.length();
  if (episode.obs_dim != obs_dim_ || episode.action_dim != action_dim_) {
    throw InputError("add_episode: dimension mismatch with buffer");
  }
  if (episode.observations.size() != len * obs_dim_ || episode.actions.size() != len * action_dim_) {
    throw InputError("add_episode: misaligned observation/action/reward arrays");
  }
  if (len < 2) throw InputError("add_episode: episode must hold at least 2 steps");
  if (len > capacity_) throw InputError("add_episode: episode longer than buffer capacity");
  if (!finite(episode.observations) || !finite(episode.actions) || !finite(episode.rewards)) {
    throw InputError("add_episode: non-finite entries");
  }
  auto ptr = std::make_shared<const Episode>(std::move(episode));
  std::unique_lock lock(mutex_);
  episodes_.push_back(std::move(ptr));
  stored_ += len;
  while (stored_ > capacity_) {
    stored_ -= episodes_.front()->length();
    episodes_.pop_front();
  }
}

std::vector<ReplayBuffer::EpisodePtr> ReplayBuffer::snapshot() const {
  std::shared_lock lock(mutex_);
  return {episodes_.begin(), episodes_.end()};
}

SequenceBatch ReplayBuffer::sample(std::size_t batch, std::size_t length, Rng& rng) const {
  if (batch == 0 || length == 0) throw InputError("sample: batch and length must be positive");
  const std::vector<EpisodePtr> eps = snapshot();
  // Prefix sums of valid window counts per episode.
  std::vector<std::uint64_t> cumulative;
  std::vector<std::size_t> index;
  std::uint64_t total = 0;
  for (std::size_t e = 0; e < eps.size(); ++e) {
    if (eps[e]->length() < length) continue;
    total += eps[e]->length() - length + 1;
    cumulative.push_back(total);
    index.push_back(e);
  }
  if (total == 0) {
    throw NotReady("replay holds no episode with at least " + std::to_string(length) + " steps");
  }

  SequenceBatch out;
  out.batch = batch;
  out.length = length;
  out.obs_dim = obs_dim_;
  out.action_dim = action_dim_;
  out.observations.resize(batch * length * obs_dim_);
  out.actions.resize(batch * length * action_dim_);
  out.rewards.resize(batch * length);
  out.is_first.resize(batch * length);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::uint64_t draw = rng.below(total);
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), draw);
    const std::size_t slot = static_cast<std::size_t>(it - cumulative.begin());
    const std::uint64_t before = slot == 0 ? 0 : cumulative[slot - 1];
    const std::size_t offset = static_cast<std::size_t>(draw - before);
    const Episode& ep = *eps[index[slot]];
    for (std::size_t t = 0; t < length; ++t) {
      const std::size_t src = offset + t;
      std::copy_n(ep.observations.begin() + src * obs_dim_, obs_dim_,
                  out.observations.begin() + (b * length + t) * obs_dim_);
      std::copy_n(ep.actions.begin() + src * action_dim_, action_dim_,
                  out.actions.begin() + (b * length + t) * action_dim_);
      out.rewards[b * length + t] = ep.rewards[src];
      out.is_first[b * length + t] = src == 0 ? 1 : 0;
    }
  }
  return out;
}

std::size_t ReplayBuffer::stored_steps() const {
  std::shared_lock lock(mutex_);
  return stored_;
}

std::size_t ReplayBuffer::episode_count() const {
  std::shared_lock lock(mutex_);
  return episodes_.size();
}

std::vector<Episode> ReplayBuffer::episodes() const {
  std::vector<Episode> out;
  for (const EpisodePtr& e : snapshot()) out.push_back(*e);
  return out;
}

bool ReplayBuffer::operator==(const ReplayBuffer& o) const {
  return obs_dim_ == o.obs_dim_ && action_dim_ == o.action_dim_ && capacity_ == o.capacity_ &&
         episodes() == o.episodes();
}

void ReplayBuffer::persist(const std::filesystem::path& path) const {
  const std::vector<EpisodePtr> eps = snapshot();
  io::Writer w;
  w.put_bytes(kMagic);
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(obs_dim_));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(action_dim_));
  w.put<std::uint64_t>(capacity_);
  w.put<std::uint64_t>(eps.size());
  for (const EpisodePtr& e : eps) {
    w.put<std::uint64_t>(e->length());
    w.put_array<float>(e->observations);
    w.put_array<float>(e->actions);
    w.put_array<float>(e->rewards);
  }
  w.save(path);
}

ReplayBuffer ReplayBuffer::load(const std::filesystem::path& path) {
  io::Reader r = io::Reader::from_file(path);
  if (r.remaining() < kMagic.size() || r.get_bytes(kMagic.size()) != kMagic) {
    throw FormatError(path.string() + ": not a replay file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion) throw VersionError(path.string(), version, kFormatVersion);
  const auto obs_dim = r.get<std::uint32_t>();
  const auto action_dim = r.get<std::uint32_t>();
  const auto capacity = r.get<std::uint64_t>();
  const auto count = r.get<std::uint64_t>();
  if (obs_dim == 0 || action_dim == 0 || capacity == 0) throw FormatError(path.string() + ": zero dimension");
  ReplayBuffer buf(obs_dim, action_dim, capacity);
  r.checked_count(count, sizeof(std::uint64_t));
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::size_t len = r.checked_count(r.get<std::uint64_t>(), sizeof(float) * (obs_dim + action_dim + 1));
    Episode e;
    e.obs_dim = obs_dim;
    e.action_dim = action_dim;
    e.observations.resize(len * obs_dim);
    e.actions.resize(len * action_dim);
    e.rewards.resize(len);
    r.get_array<float>(e.observations);
    r.get_array<float>(e.actions);
    r.get_array<float>(e.rewards);
    buf.add_episode(std::move(e));
  }
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after last episode");
  return buf;
}

}  // namespace dmwm::replay
