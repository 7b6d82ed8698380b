#include "dmwm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include "dmwm/checkpoint.hpp"
#include "dmwm/error.hpp"
#include "dmwm/evaluation.hpp"
#include "dmwm/feedback.hpp"
#include "dmwm/reasoning.hpp"

namespace dmwm::harness {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kEnvStream = 3;
constexpr std::uint64_t kEvalStream = 4;

env::EnvSpec find_spec(const std::string& name) {
  for (const env::EnvSpec& s : env::list_envs()) {
    if (s.name == name) return s;
  }
  env::make_env(name, 0);  // throws ConfigError naming the valid choices
  return {};
}

Tensor vstack(const std::vector<Tensor>& parts) {
  Tensor out(0, parts.empty() ? 0 : parts.front().cols);
  for (const Tensor& p : parts) {
    out.data.insert(out.data.end(), p.data.begin(), p.data.end());
    out.rows += p.rows;
  }
  return out;
}

Tensor select_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  Tensor out(rows.size(), t.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(rows[i] * t.cols), t.cols,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * t.cols));
  }
  return out;
}

// First `length` steps of every trajectory.
reasoning::Trajectories truncate(reasoning::Trajectories traj, std::size_t length) {
  if (length == 0 || length >= traj.length()) return traj;
  traj.states.resize(length);
  traj.actions.resize(length - 1);
  return traj;
}

Tensor feature_of(const rssm::ModelState& s) {
  Tensor f(s.h.rows, s.h.cols + s.z.cols);
  for (std::size_t r = 0; r < s.h.rows; ++r) {
    std::copy_n(s.h.data.begin() + static_cast<std::ptrdiff_t>(r * s.h.cols), s.h.cols,
                f.data.begin() + static_cast<std::ptrdiff_t>(r * f.cols));
    std::copy_n(s.z.data.begin() + static_cast<std::ptrdiff_t>(r * s.z.cols), s.z.cols,
                f.data.begin() + static_cast<std::ptrdiff_t>(r * f.cols + s.h.cols));
  }
  return f;
}

void put_params(checkpoint::Container& c, const std::string& prefix, const nn::ParamList& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.blocks.push_back({prefix + std::to_string(i) + ":" + params[i]->name, params[i]->value});
  }
}

void get_params(const checkpoint::Container& c, const std::string& prefix, const nn::ParamList& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = c.block(prefix + std::to_string(i) + ":" + params[i]->name);
    if (t.rows != params[i]->value.rows || t.cols != params[i]->value.cols) {
      throw FormatError("checkpoint: shape mismatch for " + params[i]->name);
    }
    params[i]->value = t;
  }
}

void put_adam(checkpoint::Container& c, const std::string& prefix, nn::Adam& opt) {
  const auto states = opt.state_tensors();
  for (std::size_t i = 0; i < states.size(); ++i) c.blocks.push_back({prefix + std::to_string(i), *states[i]});
}

void get_adam(const checkpoint::Container& c, const std::string& prefix, nn::Adam& opt, std::int64_t steps) {
  const auto states = opt.state_tensors();
  for (std::size_t i = 0; i < states.size(); ++i) {
    const Tensor& t = c.block(prefix + std::to_string(i));
    if (t.rows != states[i]->rows || t.cols != states[i]->cols) {
      throw FormatError("checkpoint: optimizer state shape mismatch at " + prefix + std::to_string(i));
    }
    *states[i] = t;
  }
  opt.set_steps(steps);
}

}  // namespace

Trainer::Trainer(const config::RunConfig& cfg) : cfg_(cfg) {
  config::validate(cfg_);
  spec_ = find_spec(cfg_.env);
  Rng init(mix_seed(cfg_.seed, kInitStream));
  model_ = std::make_unique<rssm::Rssm>(config::rssm_config(cfg_, spec_.obs_dim, spec_.action_dim), init);
  logic_ = std::make_unique<logic::LogicEngine>(
      config::logic_config(cfg_, model_->feature_size(), spec_.action_dim), init);
  ac_ = std::make_unique<planners::ActorCritic>(model_->feature_size(), spec_.action_dim, config::ac_config(cfg_),
                                                init);
  replay_ = std::make_unique<replay::ReplayBuffer>(spec_.obs_dim, spec_.action_dim, cfg_.replay_capacity);
  model_opt_ = nn::Adam(model_->parameters(), cfg_.model_lr, cfg_.model_adam_eps, cfg_.gradient_clipping);
  logic_opt_ = nn::Sgd(logic_->parameters(), cfg_.logic_lr, cfg_.gradient_clipping);
  rng_ = Rng(mix_seed(cfg_.seed, kTrainStream));
}

void Trainer::seed_replay() {
  if (seeded_) return;
  auto env = env::make_env(cfg_.env, 0);
  const std::size_t steps = std::min<std::size_t>(cfg_.max_episode_length, spec_.max_episode_steps);
  for (std::size_t e = 0; e < cfg_.seed_episodes; ++e) {
    replay::EpisodeBuilder builder(spec_.obs_dim, spec_.action_dim);
    builder.start(env->reset(mix_seed(mix_seed(cfg_.seed, kEnvStream), env_trials_)));
    std::vector<double> action(spec_.action_dim);
    for (std::size_t t = 0; t < steps; ++t) {
      for (double& a : action) a = rng_.uniform(-1.0, 1.0);
      const env::StepResult r = env->step(action);
      builder.add(action, r.reward, r.observation);
      if (r.terminal) break;
    }
    env_steps_ += (builder.length() - 1) * static_cast<std::size_t>(spec_.action_repeat);
    ++env_trials_;
    replay_->add_episode(builder.finish());
  }
  seeded_ = true;
}

RoundStats Trainer::update_round() {
  RoundStats stats;
  const replay::SequenceBatch batch = replay_->sample(cfg_.batch_size, cfg_.sequence_length, rng_);

  // S1 step.
  reasoning::Trajectories traj;
  rssm::ModelState starts;
  {
    ad::Tape tape;
    rssm::S1Loss s1 = model_->s1_loss(tape, batch, rng_);
    stats.pred = s1.pred;
    stats.dyn = s1.dyn;
    stats.rep = s1.rep;
    tape.backward(s1.total);
    model_opt_.step();
    traj = feedback::s1_to_s2_batch(s1.observed, batch);
    std::vector<Tensor> hs, zs;
    for (const rssm::StateVars& s : s1.observed.states) {
      hs.push_back(s.h.value());
      zs.push_back(s.z.value());
    }
    starts = rssm::ModelState{vstack(hs), vstack(zs)};
  }

  // S2 step on the detached posterior trajectories.
  {
    const std::size_t seqs = cfg_.s2_sequences == 0 ? traj.batch() : std::min(cfg_.s2_sequences, traj.batch());
    const reasoning::Trajectories sub = truncate(traj.rows(0, seqs), cfg_.s2_length);
    ad::Tape tape;
    reasoning::S2Loss s2 = reasoning::s2_loss(*logic_, tape, reasoning::bind(tape, sub), config::s2_config(cfg_),
                                              nn::Grad::kTrain, &rng_);
    stats.s2 = s2.total.item();
    stats.residuals = s2.residuals;
    tape.backward(s2.total);
    logic_opt_.step();
  }

  // Actor-critic step from posterior start states.
  if (cfg_.planner == "ac") {
    if (cfg_.imagination_starts != 0 && cfg_.imagination_starts < starts.h.rows) {
      std::vector<std::size_t> rows(starts.h.rows);
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
      for (std::size_t i = 0; i < cfg_.imagination_starts; ++i) {
        std::swap(rows[i], rows[i + rng_.below(rows.size() - i)]);
      }
      rows.resize(cfg_.imagination_starts);
      starts = rssm::ModelState{select_rows(starts.h, rows), select_rows(starts.z, rows)};
    }
    const planners::ActorCriticStats ac = ac_->update(*model_, starts, rng_);
    stats.actor_loss = ac.actor_loss;
    stats.critic_loss = ac.critic_loss;
  }

  // S2 → S1 guided step.
  {
    ad::Tape tape;
    feedback::GuidedLoss g = feedback::guided_s1_loss(*model_, *logic_, tape, batch, rng_, cfg_.logic_weight);
    stats.logic_elbo = g.logic_elbo;
    tape.backward(g.total);
    model_opt_.step();
  }
  ++rounds_;
  return stats;
}

Tensor Trainer::act(const rssm::ModelState& state, bool explore, Rng& rng) {
  if (cfg_.planner == "ac") return ac_->act(feature_of(state), explore, rng);
  Tensor out(state.h.rows, spec_.action_dim);
  for (std::size_t r = 0; r < state.h.rows; ++r) {
    const rssm::ModelState one{select_rows(state.h, {r}), select_rows(state.z, {r})};
    const planners::PlanResult plan = planners::plan_grad_mpc(planners::world_model_objective(*model_, one),
                                                              spec_.action_dim, config::plan_config(cfg_), rng);
    for (std::size_t k = 0; k < spec_.action_dim; ++k) {
      double a = plan.actions.front().data[k];
      if (explore) a = std::clamp(a + cfg_.exploration_noise * rng.normal(), -1.0, 1.0);
      out.data[r * spec_.action_dim + k] = a;
    }
  }
  return out;
}

double Trainer::collect_episode() {
  auto env = env::make_env(cfg_.env, 0);
  const std::size_t steps = std::min<std::size_t>(cfg_.max_episode_length, spec_.max_episode_steps);
  replay::EpisodeBuilder builder(spec_.obs_dim, spec_.action_dim);
  std::vector<double> obs = env->reset(mix_seed(mix_seed(cfg_.seed, kEnvStream), env_trials_));
  builder.start(obs);
  rssm::ModelState state = model_->filter_step(model_->initial_state(1), Tensor(1, spec_.action_dim),
                                               Tensor(1, spec_.obs_dim, obs), nullptr);
  double total = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor action = act(state, true, rng_);
    const env::StepResult r = env->step(action.data);
    builder.add(action.data, r.reward, r.observation);
    total += r.reward;
    if (r.terminal) break;
    state = model_->filter_step(state, action, Tensor(1, spec_.obs_dim, r.observation), nullptr);
  }
  env_steps_ += (builder.length() - 1) * static_cast<std::size_t>(spec_.action_repeat);
  ++env_trials_;
  replay_->add_episode(builder.finish());
  return total;
}

metrics::MetricsRow Trainer::make_row(const std::vector<RoundStats>& rounds) const {
  metrics::MetricsRow row;
  row.step = rounds_;
  row.env_steps = env_steps_;
  row.env_trials = env_trials_;
  const double n = static_cast<double>(std::max<std::size_t>(1, rounds.size()));
  for (const RoundStats& s : rounds) {
    row.loss_pred += s.pred / n;
    row.loss_dyn += s.dyn / n;
    row.loss_rep += s.rep / n;
    row.loss_logic_elbo += s.logic_elbo / n;
    row.loss_s2 += s.s2 / n;
    for (std::size_t i = 0; i < logic::kRuleCount; ++i) row.residuals[i] += s.residuals[i] / n;
  }
  return row;
}

void Trainer::train(std::size_t episodes, const RowCallback& on_row) {
  seed_replay();
  for (std::size_t e = 0; e < episodes; ++e) {
    std::vector<RoundStats> rounds;
    try {
      for (std::size_t c = 0; c < cfg_.collect_interval; ++c) rounds.push_back(update_round());
      collect_episode();
      ++episodes_done_;
      metrics::MetricsRow row = make_row(rounds);
      if (cfg_.eval_every != 0 && episodes_done_ % cfg_.eval_every == 0) {
        const evaluation::ReturnStats ret =
            evaluation::evaluate(*this, cfg_.eval_episodes, mix_seed(cfg_.seed, kEvalStream));
        row.eval_return_mean = ret.mean;
        row.eval_return_std = ret.stddev;
        const auto table = evaluation::consistency_table(*this, {cfg_.imagination_horizon}, cfg_.reasoning_depth,
                                                         evaluation::kDefaultStarts,
                                                         mix_seed(cfg_.seed, kEvalStream + 1));
        row.consistency_mean = table.front().mean;
        row.consistency_std = table.front().stddev;
      }
      metrics::require_finite(row);
      rows_.push_back(row);
      if (on_row) on_row(row);
    } catch (const NumericError& err) {
      std::cerr << "numeric error at update round " << rounds_ << " (episode " << episodes_done_ << "): " << err.what()
                << "\n";
      throw NumericError("update round " + std::to_string(rounds_) + ": " + err.what());
    }
  }
}

void Trainer::save(const std::filesystem::path& dir, const std::filesystem::path& replay_dir) const {
  std::filesystem::create_directories(dir);
  const std::filesystem::path rdir = replay_dir.empty() ? dir : replay_dir;
  std::filesystem::create_directories(rdir);
  auto& self = const_cast<Trainer&>(*this);
  checkpoint::Container c;
  c.meta["config"] = config::to_json(cfg_);
  c.meta["counters"] = {{"seeded", seeded_},
                        {"episodes_done", episodes_done_},
                        {"update_rounds", rounds_},
                        {"env_steps", env_steps_},
                        {"env_trials", env_trials_}};
  c.meta["rng"] = rng_.state();
  c.meta["optimizer_steps"] = {{"model", model_opt_.steps()},
                               {"actor", self.ac_->actor_optimizer().steps()},
                               {"critic", self.ac_->critic_optimizer().steps()}};
  c.meta["metrics"] = metrics::to_json(rows_);
  put_params(c, "s1.", self.model_->parameters());
  put_params(c, "s2.", self.logic_->parameters());
  c.blocks.push_back({"s2.truth", logic_->truth_anchor()});
  put_params(c, "actor.", self.ac_->actor_parameters());
  put_params(c, "critic.", self.ac_->critic_parameters());
  put_adam(c, "adam.model.", self.model_opt_);
  put_adam(c, "adam.actor.", self.ac_->actor_optimizer());
  put_adam(c, "adam.critic.", self.ac_->critic_optimizer());
  checkpoint::save(dir / "checkpoint.bin", c);
  replay_->persist(rdir / "replay.bin");
  metrics::export_metrics(dir / "metrics.csv", rows_, metrics::Format::kCsv);
  std::ofstream(dir / "config.txt") << config::to_text(cfg_);
}

void Trainer::restore(const checkpoint::Container& c, const std::filesystem::path& dir,
                      const std::filesystem::path& replay_file) {
  try {
    const auto& counters = c.meta.at("counters");
    seeded_ = counters.at("seeded").get<bool>();
    episodes_done_ = counters.at("episodes_done").get<std::size_t>();
    rounds_ = counters.at("update_rounds").get<std::size_t>();
    env_steps_ = counters.at("env_steps").get<std::size_t>();
    env_trials_ = counters.at("env_trials").get<std::size_t>();
    rng_.set_state(c.meta.at("rng").get<std::string>());
    const auto& steps = c.meta.at("optimizer_steps");
    get_params(c, "s1.", model_->parameters());
    get_params(c, "s2.", logic_->parameters());
    logic_->set_truth_anchor(c.block("s2.truth"));
    get_params(c, "actor.", ac_->actor_parameters());
    get_params(c, "critic.", ac_->critic_parameters());
    get_adam(c, "adam.model.", model_opt_, steps.at("model").get<std::int64_t>());
    get_adam(c, "adam.actor.", ac_->actor_optimizer(), steps.at("actor").get<std::int64_t>());
    get_adam(c, "adam.critic.", ac_->critic_optimizer(), steps.at("critic").get<std::int64_t>());
    rows_ = metrics::rows_from_json(c.meta.at("metrics"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "checkpoint.bin").string() + ": bad manifest: " + e.what());
  }
  replay_ = std::make_unique<replay::ReplayBuffer>(replay::ReplayBuffer::load(replay_file));
  if (replay_->obs_dim() != spec_.obs_dim || replay_->action_dim() != spec_.action_dim) {
    throw ConfigError(replay_file.string() + ": replay dimensions do not match environment " + cfg_.env);
  }
}

std::unique_ptr<Trainer> Trainer::load(const std::filesystem::path& dir, const std::filesystem::path& replay_dir) {
  const checkpoint::Container c = checkpoint::load(dir / "checkpoint.bin");
  config::RunConfig cfg;
  try {
    cfg = config::from_json(c.meta.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "checkpoint.bin").string() + ": bad manifest: " + e.what());
  }
  auto trainer = std::make_unique<Trainer>(cfg);
  trainer->restore(c, dir, (replay_dir.empty() ? dir : replay_dir) / "replay.bin");
  return trainer;
}

}  // namespace dmwm::harness
