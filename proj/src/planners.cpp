#include "dmwm/planners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dmwm/error.hpp"

namespace dmwm::planners {

namespace {

void check_returns_args(std::size_t rewards, std::size_t values, double gamma, double lambda) {
  if (values != rewards + 1) throw InputError("lambda_returns: need H + 1 values for H rewards");
  if (!(gamma >= 0.0 && gamma <= 1.0) || !(lambda >= 0.0 && lambda <= 1.0)) {
    throw InputError("lambda_returns: gamma and lambda must lie in [0, 1]");
  }
}

std::vector<std::size_t> network_sizes(std::size_t in, std::size_t hidden, std::size_t layers, std::size_t out) {
  std::vector<std::size_t> sizes{in};
  for (std::size_t i = 0; i + 1 < layers; ++i) sizes.push_back(hidden);
  sizes.push_back(out);
  return sizes;
}

Tensor clip_unit(Tensor t) {
  for (double& x : t.data) x = std::clamp(x, -1.0, 1.0);
  return t;
}

}  // namespace

std::vector<double> lambda_returns(const std::vector<double>& rewards, const std::vector<double>& values,
                                   double gamma, double lambda) {
  check_returns_args(rewards.size(), values.size(), gamma, lambda);
  const std::size_t H = rewards.size();
  std::vector<double> out(H);
  double next = values[H];
  for (std::size_t k = H; k-- > 0;) {
    next = rewards[k] + gamma * ((1.0 - lambda) * values[k + 1] + lambda * next);
    out[k] = next;
  }
  return out;
}

std::vector<ad::Var> lambda_returns(const std::vector<ad::Var>& rewards, const std::vector<ad::Var>& values,
                                    double gamma, double lambda) {
  check_returns_args(rewards.size(), values.size(), gamma, lambda);
  const std::size_t H = rewards.size();
  std::vector<ad::Var> out(H);
  ad::Var next = values[H];
  for (std::size_t k = H; k-- > 0;) {
    ad::Var mix = ad::add(ad::scale(values[k + 1], 1.0 - lambda), ad::scale(next, lambda));
    next = ad::add(rewards[k], ad::scale(mix, gamma));
    out[k] = next;
  }
  return out;
}

ActorCritic::ActorCritic(std::size_t feature_dim, std::size_t action_dim, const ActorCriticConfig& cfg, Rng& rng)
    : cfg_(cfg), action_dim_(action_dim) {
  if (feature_dim == 0 || action_dim == 0 || cfg.hidden == 0 || cfg.layers == 0 || cfg.horizon == 0) {
    throw ConfigError("ActorCritic: sizes, layer count and horizon must be positive");
  }
  if (!(cfg.init_std > 0.0) || !(cfg.mean_scale > 0.0) || !(cfg.min_std >= 0.0) || !(cfg.explore_noise >= 0.0)) {
    throw ConfigError("ActorCritic: init_std and mean_scale must be positive and noise levels nonnegative");
  }
  actor_ = nn::Mlp("actor", network_sizes(feature_dim, cfg.hidden, cfg.layers, 2 * action_dim), rng);
  critic_ = nn::Mlp("critic", network_sizes(feature_dim, cfg.hidden, cfg.layers, 1), rng);
  actor_opt_ = nn::Adam(actor_.parameters(), cfg.actor_lr, cfg.adam_eps, cfg.clip);
  critic_opt_ = nn::Adam(critic_.parameters(), cfg.critic_lr, cfg.adam_eps, cfg.clip);
}

rssm::DiagGaussian ActorCritic::distribution(ad::Tape& tape, ad::Var feature, nn::Grad mode) {
  ad::Var raw = actor_(tape, feature, mode);
  if (!all_finite(raw.value())) throw NumericError("actor produced a non-finite value");
  // softplus(raw + c) starts at init_std when raw = 0.
  const double shift = std::log(std::expm1(cfg_.init_std));
  ad::Var mean = ad::scale(ad::tanh(ad::scale(ad::slice_cols(raw, 0, action_dim_), 1.0 / cfg_.mean_scale)),
                           cfg_.mean_scale);
  ad::Var std_raw = ad::add_scalar(ad::slice_cols(raw, action_dim_, action_dim_), shift);
  return rssm::DiagGaussian{mean, ad::add_scalar(ad::softplus(std_raw), cfg_.min_std)};
}

ad::Var ActorCritic::sample(ad::Tape& tape, ad::Var feature, Rng& rng, nn::Grad mode) {
  return ad::tanh(distribution(tape, feature, mode).sample(rng));
}

ad::Var ActorCritic::mode_action(ad::Tape& tape, ad::Var feature, nn::Grad mode) {
  return ad::tanh(distribution(tape, feature, mode).mean);
}

ad::Var ActorCritic::value(ad::Tape& tape, ad::Var feature, nn::Grad mode) {
  ad::Var v = critic_(tape, feature, mode);
  if (!all_finite(v.value())) throw NumericError("critic produced a non-finite value");
  return v;
}

Tensor ActorCritic::act(const Tensor& feature, bool explore, Rng& rng) {
  if (!all_finite(feature.data)) throw InputError("act: non-finite feature");
  ad::Tape tape;
  ad::Var f = tape.constant(feature);
  if (!explore) return mode_action(tape, f).value();
  Tensor a = sample(tape, f, rng, nn::Grad::kFrozen).value();
  for (double& x : a.data) x += cfg_.explore_noise * rng.normal();
  return clip_unit(std::move(a));
}

ad::Var ActorCritic::actor_loss(ad::Tape& tape, const Rollout& rollout) {
  if (rollout.features.size() != rollout.rewards.size() + 1 || rollout.rewards.empty()) {
    throw InputError("actor_loss: rollout needs H ≥ 1 rewards and H + 1 features");
  }
  std::vector<ad::Var> values;
  for (const ad::Var& f : rollout.features) values.push_back(value(tape, f, nn::Grad::kFrozen));
  std::vector<ad::Var> returns = lambda_returns(rollout.rewards, values, cfg_.gamma, cfg_.lambda);
  return ad::neg(ad::mean(ad::stack_rows(returns)));
}

ad::Var ActorCritic::critic_loss(ad::Tape& tape, const std::vector<Tensor>& features,
                                 const std::vector<Tensor>& returns) {
  if (features.size() != returns.size() || features.empty()) {
    throw InputError("critic_loss: need one return per feature block");
  }
  std::vector<ad::Var> f, r;
  for (const Tensor& t : features) f.push_back(tape.constant(t));
  for (const Tensor& t : returns) r.push_back(tape.constant(t));
  ad::Var v = value(tape, ad::stack_rows(f));
  ad::Var target = ad::stack_rows(r);
  if (target.rows() != v.rows() || target.cols() != 1) throw InputError("critic_loss: return shape mismatch");
  return ad::scale(ad::mean(ad::square(ad::sub(v, target))), 0.5);
}

ActorCriticStats ActorCritic::update(const Dynamics& dynamics, Rng& rng) {
  ActorCriticStats stats;
  std::vector<Tensor> features, returns;
  {
    ad::Tape tape;
    Policy policy = [&](ad::Tape& tp, ad::Var f) { return sample(tp, f, rng, nn::Grad::kTrain); };
    const Rollout rollout = dynamics(tape, policy);
    ad::Var loss = actor_loss(tape, rollout);
    stats.actor_loss = loss.item();
    stats.mean_return = -stats.actor_loss;
    tape.backward(loss);
    actor_opt_.step();
    // Critic targets come from the pre-update critic on the same rollout.
    std::vector<ad::Var> values;
    for (const ad::Var& f : rollout.features) values.push_back(ad::stop_gradient(value(tape, f, nn::Grad::kFrozen)));
    std::vector<ad::Var> rewards;
    for (const ad::Var& r : rollout.rewards) rewards.push_back(ad::stop_gradient(r));
    for (ad::Var& R : lambda_returns(rewards, values, cfg_.gamma, cfg_.lambda)) returns.push_back(R.value());
    for (std::size_t k = 0; k + 1 < rollout.features.size(); ++k) features.push_back(rollout.features[k].value());
  }
  ad::Tape tape;
  ad::Var loss = critic_loss(tape, features, returns);
  stats.critic_loss = loss.item();
  tape.backward(loss);
  critic_opt_.step();
  return stats;
}

ActorCriticStats ActorCritic::update(rssm::Rssm& model, const rssm::ModelState& start, Rng& rng) {
  Dynamics dynamics = [&](ad::Tape& tape, const Policy& policy) {
    rssm::ImaginedTrajectory traj =
        model.imagine(tape, model.bind(tape, start), policy, cfg_.horizon, rng, nn::Grad::kFrozen, true);
    Rollout out;
    for (const rssm::StateVars& s : traj.states) out.features.push_back(s.feature());
    out.rewards = traj.rewards;
    return out;
  };
  return update(dynamics, rng);
}

double plan_learning_rate(const PlanConfig& cfg, std::size_t iteration) {
  if (cfg.learning_rates.empty()) throw ConfigError("PlanConfig: empty learning-rate schedule");
  const std::size_t phases = cfg.learning_rates.size();
  const std::size_t phase = cfg.iterations == 0 ? 0 : std::min(phases - 1, iteration * phases / cfg.iterations);
  return cfg.learning_rates[phase];
}

PlanResult plan_grad_mpc(const PlanObjective& objective, std::size_t action_dim, const PlanConfig& cfg, Rng& rng) {
  if (cfg.candidates == 0 || cfg.horizon == 0 || action_dim == 0) {
    throw ConfigError("PlanConfig: candidates, horizon and action size must be positive");
  }
  if (!(cfg.init_std >= 0.0)) throw ConfigError("PlanConfig: init_std must be nonnegative");
  for (std::size_t i = 0; i < cfg.learning_rates.size(); ++i) {
    if (!(cfg.learning_rates[i] >= 0.0) || (i > 0 && cfg.learning_rates[i] > cfg.learning_rates[i - 1])) {
      throw ConfigError("PlanConfig: learning rates must be nonnegative and nonincreasing");
    }
  }
  const std::size_t J = cfg.candidates, H = cfg.horizon;
  std::vector<Tensor> actions;
  for (std::size_t t = 0; t < H; ++t) {
    Tensor a(J, action_dim);
    for (double& x : a.data) x = cfg.init_mean + cfg.init_std * rng.normal();
    actions.push_back(clip_unit(std::move(a)));
  }

  PlanResult result;
  result.best_return = -std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it <= cfg.iterations; ++it) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Tensor& a : actions) vars.push_back(tape.variable(a));
    ad::Var R = objective(tape, vars);
    if (R.rows() != J || R.cols() != 1 || !all_finite(R.value())) {
      throw NumericError("plan_grad_mpc: objective must return J finite returns");
    }
    const auto& r = R.value().data;
    const std::size_t best = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    result.best_per_iteration.push_back(r[best]);
    if (r[best] > result.best_return) {
      result.best_return = r[best];
      result.actions.clear();
      for (const Tensor& a : actions) {
        result.actions.emplace_back(1, action_dim, std::vector<double>(a.data.begin() + best * action_dim,
                                                                       a.data.begin() + (best + 1) * action_dim));
      }
    }
    if (it == cfg.iterations) break;
    // Candidates are independent, so the gradient of ΣR gives each one its own ∇R_j.
    tape.backward(ad::sum(R));
    const double lr = plan_learning_rate(cfg, it);
    for (std::size_t t = 0; t < H; ++t) {
      const Tensor g = tape.grad(vars[t]);
      for (std::size_t i = 0; i < g.size(); ++i) actions[t].data[i] += lr * g.data[i];
      actions[t] = clip_unit(std::move(actions[t]));
    }
  }
  return result;
}

PlanObjective world_model_objective(rssm::Rssm& model, const rssm::ModelState& start) {
  if (start.h.rows != 1) throw InputError("world_model_objective: expected a single start state");
  return [&model, start](ad::Tape& tape, const std::vector<ad::Var>& actions) {
    const std::size_t J = actions.front().rows();
    rssm::StateVars s{ad::repeat_rows(tape.constant(start.h), J), ad::repeat_rows(tape.constant(start.z), J)};
    std::vector<ad::Var> rewards;
    for (const ad::Var& a : actions) {
      ad::Var h = model.deterministic_step(tape, s, a, nn::Grad::kFrozen);
      ad::Var z = model.prior(tape, h, nn::Grad::kFrozen).mean;
      s = rssm::StateVars{h, z};
      rewards.push_back(model.predict_reward(tape, h, z, nn::Grad::kFrozen));
    }
    return ad::sum_cols(ad::concat_cols(rewards));
  };
}

}  // namespace dmwm::planners
