#include "dmwm/evaluation.hpp"

#include <cmath>
#include <memory>

#include "dmwm/error.hpp"

namespace dmwm::evaluation {

namespace {

Tensor rows_of(const Tensor& t, std::size_t r) {
  return Tensor(1, t.cols,
                std::vector<double>(t.data.begin() + static_cast<std::ptrdiff_t>(r * t.cols),
                                    t.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols)));
}

void put_row(Tensor& dst, std::size_t r, const std::vector<double>& values) {
  std::copy(values.begin(), values.end(), dst.data.begin() + static_cast<std::ptrdiff_t>(r * dst.cols));
}

}  // namespace

ReturnStats summarize(std::vector<double> returns) {
  ReturnStats s;
  s.returns = std::move(returns);
  if (s.returns.empty()) return s;
  const double n = static_cast<double>(s.returns.size());
  for (double r : s.returns) s.mean += r / n;
  double var = 0.0;
  for (double r : s.returns) var += (r - s.mean) * (r - s.mean) / n;
  s.stddev = std::sqrt(var);
  return s;
}

ReturnStats evaluate(harness::Trainer& trainer, std::size_t episodes, std::uint64_t seed, const std::string& env) {
  const config::RunConfig& cfg = trainer.config();
  if (!env.empty() && env != cfg.env) {
    throw ConfigError("checkpoint was trained on " + cfg.env + ", cannot evaluate on " + env);
  }
  if (episodes == 0) throw ConfigError("evaluate: episodes must be positive");
  const env::EnvSpec& spec = trainer.env_spec();
  rssm::Rssm& model = trainer.model();

  // Episodes advance in lockstep as rows of one batch; rows never interact.
  std::vector<std::unique_ptr<env::Environment>> envs;
  std::vector<Rng> rngs;
  Tensor obs(episodes, spec.obs_dim);
  for (std::size_t e = 0; e < episodes; ++e) {
    envs.push_back(env::make_env(cfg.env, 0));
    put_row(obs, e, envs.back()->reset(mix_seed(seed, 2 * e)));
    rngs.emplace_back(mix_seed(seed, 2 * e + 1));
  }
  rssm::ModelState state = model.filter_step(model.initial_state(episodes), Tensor(episodes, spec.action_dim), obs,
                                             nullptr);
  std::vector<double> returns(episodes, 0.0);
  const std::size_t steps = std::min<std::size_t>(cfg.max_episode_length, spec.max_episode_steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor action(episodes, spec.action_dim);
    if (cfg.planner == "ac") {
      action = trainer.act(state, false, rngs.front());
    } else {
      for (std::size_t e = 0; e < episodes; ++e) {
        const rssm::ModelState one{rows_of(state.h, e), rows_of(state.z, e)};
        put_row(action, e, trainer.act(one, false, rngs[e]).data);
      }
    }
    bool terminal = false;
    for (std::size_t e = 0; e < episodes; ++e) {
      const env::StepResult r = envs[e]->step(rows_of(action, e).data);
      returns[e] += r.reward;
      put_row(obs, e, r.observation);
      terminal = terminal || r.terminal;
    }
    if (terminal) break;
    state = model.filter_step(state, action, obs, nullptr);
  }
  return summarize(std::move(returns));
}

ReturnStats random_baseline(const std::string& env_name, std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) throw ConfigError("random_baseline: episodes must be positive");
  std::vector<double> returns;
  for (std::size_t e = 0; e < episodes; ++e) {
    auto env = env::make_env(env_name, 0);
    env->reset(mix_seed(seed, 2 * e));
    Rng rng(mix_seed(seed, 2 * e + 1));
    std::vector<double> action(env->spec().action_dim);
    double total = 0.0;
    for (;;) {
      for (double& a : action) a = rng.uniform(-1.0, 1.0);
      const env::StepResult r = env->step(action);
      total += r.reward;
      if (r.terminal) break;
    }
    returns.push_back(total);
  }
  return summarize(std::move(returns));
}

reasoning::Trajectories imagine_trajectories(harness::Trainer& trainer, std::size_t horizon, std::size_t starts,
                                             std::uint64_t seed) {
  if (horizon == 0 || starts == 0) throw ConfigError("imagine_trajectories: horizon and starts must be positive");
  const config::RunConfig& cfg = trainer.config();
  rssm::Rssm& model = trainer.model();
  Rng rng(seed);
  const replay::SequenceBatch batch = trainer.replay().sample(starts, cfg.sequence_length, rng);

  ad::Tape tape;
  const rssm::ObserveResult observed = model.observe_sequence(tape, batch, rng, nn::Grad::kFrozen);
  const rssm::StateVars& last = observed.states.back();
  const rssm::StateVars start{tape.constant(last.h.value()), tape.constant(last.z.value())};

  const std::size_t action_dim = trainer.env_spec().action_dim;
  rssm::Policy policy;
  if (cfg.planner == "ac") {
    policy = [&](ad::Tape& tp, ad::Var f) { return trainer.actor_critic().mode_action(tp, f); };
  } else {
    policy = [&](ad::Tape& tp, ad::Var f) {
      Tensor a(f.rows(), action_dim);
      for (double& x : a.data) x = rng.uniform(-1.0, 1.0);
      return tp.constant(a);
    };
  }
  const rssm::ImaginedTrajectory imagined = model.imagine(tape, start, policy, horizon, rng, nn::Grad::kFrozen, true);
  reasoning::Trajectories out;
  for (const rssm::StateVars& s : imagined.states) out.states.push_back(s.feature().value());
  for (const ad::Var& a : imagined.actions) out.actions.push_back(a.value());
  return out;
}

std::vector<reasoning::ConsistencyReport> consistency_table(harness::Trainer& trainer,
                                                            const std::vector<std::size_t>& horizons,
                                                            std::size_t depth, std::size_t starts,
                                                            std::uint64_t seed) {
  std::vector<reasoning::ConsistencyReport> out;
  for (std::size_t h : horizons) {
    out.push_back(reasoning::logical_consistency(trainer.logic(), imagine_trajectories(trainer, h, starts, seed),
                                                 depth));
  }
  return out;
}

Tensor heatmap(harness::Trainer& trainer, std::size_t alpha, std::size_t starts, std::uint64_t seed) {
  return reasoning::logic_heatmap(trainer.logic(), imagine_trajectories(trainer, alpha, starts, seed));
}

}  // namespace dmwm::evaluation
