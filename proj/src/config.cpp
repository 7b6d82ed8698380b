#include "dmwm/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <type_traits>
#include <variant>

#include "dmwm/env.hpp"
#include "dmwm/error.hpp"

namespace dmwm::config {

namespace {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seed and sizes share one integer type");

using Field = std::variant<std::size_t RunConfig::*, double RunConfig::*, std::string RunConfig::*,
                           std::vector<double> RunConfig::*>;

struct Entry {
  const char* key;
  Field field;
};

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      {"General/Replay memory size", &RunConfig::replay_capacity},
      {"General/Batch size", &RunConfig::batch_size},
      {"General/Sequence length", &RunConfig::sequence_length},
      {"General/Seed episode", &RunConfig::seed_episodes},
      {"General/Training episodes", &RunConfig::training_episodes},
      {"General/Collect Interval", &RunConfig::collect_interval},
      {"General/Max episode length", &RunConfig::max_episode_length},
      {"General/Exploration noise", &RunConfig::exploration_noise},
      {"General/Imagination horizon", &RunConfig::imagination_horizon},
      {"General/Gradient clipping", &RunConfig::gradient_clipping},
      {"RSSM-S1/Embedding size", &RunConfig::embedding_size},
      {"RSSM-S1/Hidden size", &RunConfig::hidden_size},
      {"RSSM-S1/Belief size", &RunConfig::belief_size},
      {"RSSM-S1/State size", &RunConfig::state_size},
      {"RSSM-S1/Free nats", &RunConfig::free_nats},
      {"RSSM-S1/Weight dyn", &RunConfig::dyn_weight},
      {"RSSM-S1/Weight rep", &RunConfig::rep_weight},
      {"RSSM-S1/Adam epsilon", &RunConfig::model_adam_eps},
      {"RSSM-S1/Learning rate", &RunConfig::model_lr},
      {"RSSM-S1/Min std", &RunConfig::min_std},
      {"LINN-S2/Reasoning depth", &RunConfig::reasoning_depth},
      {"LINN-S2/Logic vector size", &RunConfig::logic_size},
      {"LINN-S2/L2 weight", &RunConfig::l2_weight},
      {"LINN-S2/Regularization weight", &RunConfig::reg_weight},
      {"LINN-S2/Logic MLP number", &RunConfig::logic_mlp_number},
      {"LINN-S2/Learning rate", &RunConfig::logic_lr},
      {"LINN-S2/Kappa", &RunConfig::kappa},
      {"LINN-S2/NOT init gain", &RunConfig::not_gain},
      {"LINN-S2/Gate init gain", &RunConfig::gate_gain},
      {"LINN-S2/Sequences per step", &RunConfig::s2_sequences},
      {"LINN-S2/Steps per sequence", &RunConfig::s2_length},
      {"LINN-S2/Regularizer samples", &RunConfig::reg_samples},
      {"Actor-Critic/Return lambda", &RunConfig::return_lambda},
      {"Actor-Critic/Planning horizon discount", &RunConfig::discount},
      {"Actor-Critic/Adam epsilon", &RunConfig::ac_adam_eps},
      {"Actor-Critic/Actor learning rate", &RunConfig::actor_lr},
      {"Actor-Critic/Critic learning rate", &RunConfig::critic_lr},
      {"Actor-Critic/Hidden size", &RunConfig::ac_hidden},
      {"Actor-Critic/Layers", &RunConfig::ac_layers},
      {"Grad-MPC/Iterations", &RunConfig::mpc_iterations},
      {"Grad-MPC/Candidate Size", &RunConfig::mpc_candidates},
      {"Grad-MPC/Learning Rate", &RunConfig::mpc_learning_rates},
      {"Grad-MPC/Horizon", &RunConfig::mpc_horizon},
      {"Feedback/Logic weight", &RunConfig::logic_weight},
      {"Harness/Env", &RunConfig::env},
      {"Harness/Planner", &RunConfig::planner},
      {"Harness/Seed", &RunConfig::seed},
      {"Harness/Eval episodes", &RunConfig::eval_episodes},
      {"Harness/Eval every", &RunConfig::eval_every},
      {"Harness/Imagination starts", &RunConfig::imagination_starts},
  };
  return table;
}

const Entry& find(const std::string& key) {
  for (const Entry& e : entries()) {
    if (key == e.key) return e;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  // Accept integral scientific notation such as 1e6.
  const double d = parse_double(key, value);
  if (!(d >= 0.0) || d != static_cast<double>(static_cast<std::uint64_t>(d)) || d > 1.8e19) {
    throw ConfigError("config key '" + key + "': expected a nonnegative integer, got '" + value + "'");
  }
  std::uint64_t exact = 0;
  const auto res = std::from_chars(value.data(), value.data() + value.size(), exact);
  if (res.ec == std::errc() && res.ptr == value.data() + value.size()) return exact;
  return static_cast<std::size_t>(d);
}

}  // namespace

const std::vector<std::string>& keys() {
  static const std::vector<std::string> out = [] {
    std::vector<std::string> k;
    for (const Entry& e : entries()) k.emplace_back(e.key);
    return k;
  }();
  return out;
}

void set(RunConfig& cfg, const std::string& key, const std::string& raw) {
  const Entry& e = find(key);
  const std::string value = trim(raw);
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(cfg.*member)>;
        if constexpr (std::is_same_v<T, std::size_t>) {
          cfg.*member = parse_size(key, value);
        } else if constexpr (std::is_same_v<T, double>) {
          cfg.*member = parse_double(key, value);
        } else if constexpr (std::is_same_v<T, std::string>) {
          if (value.empty()) throw ConfigError("config key '" + key + "': empty value");
          cfg.*member = value;
        } else {
          std::vector<double> list;
          std::stringstream ss(value);
          std::string item;
          while (std::getline(ss, item, ',')) list.push_back(parse_double(key, trim(item)));
          if (list.empty()) throw ConfigError("config key '" + key + "': empty list");
          cfg.*member = list;
        }
      },
      e.field);
}

std::string get(const RunConfig& cfg, const std::string& key) {
  const Entry& e = find(key);
  return std::visit(
      [&](auto member) -> std::string {
        using T = std::remove_cvref_t<decltype(cfg.*member)>;
        if constexpr (std::is_same_v<T, std::size_t>) {
          return std::to_string(cfg.*member);
        } else if constexpr (std::is_same_v<T, double>) {
          return format_double(cfg.*member);
        } else if constexpr (std::is_same_v<T, std::string>) {
          return cfg.*member;
        } else {
          std::string out;
          for (double v : cfg.*member) out += (out.empty() ? "" : ",") + format_double(v);
          return out;
        }
      },
      e.field);
}

RunConfig parse(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected 'Group/Name = value'");
    }
    set(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

RunConfig load(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const std::string& k : keys()) out += k + " = " + get(cfg, k) + "\n";
  return out;
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const Entry& e : entries()) {
    std::visit([&](auto member) { j[e.key] = cfg.*member; }, e.field);
  }
  return j;
}

RunConfig from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config JSON must be an object");
  RunConfig cfg;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const Entry& e = find(it.key());
    try {
      std::visit(
          [&](auto member) {
            using T = std::remove_reference_t<decltype(cfg.*member)>;
            cfg.*member = it.value().template get<T>();
          },
          e.field);
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError("config key '" + it.key() + "': " + ex.what());
    }
  }
  return cfg;
}

void validate(const RunConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid config: ") + what);
  };
  require(c.replay_capacity > 0, "replay memory size must be positive");
  require(c.batch_size > 0, "batch size must be positive");
  require(c.sequence_length >= 2, "sequence length must be at least 2");
  require(c.seed_episodes > 0, "seed episodes must be positive");
  require(c.collect_interval > 0, "collect interval must be positive");
  require(c.max_episode_length >= c.sequence_length, "max episode length must cover one sequence");
  require(c.exploration_noise >= 0.0, "exploration noise must be nonnegative");
  require(c.imagination_horizon > 0, "imagination horizon must be positive");
  require(c.gradient_clipping > 0.0, "gradient clipping must be positive");
  require(c.embedding_size > 0 && c.hidden_size > 0 && c.belief_size > 0 && c.state_size > 0,
          "model sizes must be positive");
  require(c.free_nats >= 0.0 && c.dyn_weight >= 0.0 && c.rep_weight >= 0.0, "KL settings must be nonnegative");
  require(c.model_adam_eps > 0.0 && c.model_lr > 0.0, "model optimizer settings must be positive");
  require(c.min_std > 0.0, "min std must be positive");
  require(c.logic_size > 0 && c.logic_mlp_number > 0, "logic sizes must be positive");
  require(c.l2_weight >= 0.0 && c.reg_weight >= 0.0, "S2 weights must be nonnegative");
  require(c.logic_lr > 0.0 && c.kappa > 0.0, "logic learning rate and kappa must be positive");
  require(c.not_gain > 0.0 && c.gate_gain > 0.0, "logic init gains must be positive");
  require(c.return_lambda >= 0.0 && c.return_lambda <= 1.0, "return lambda must lie in [0, 1]");
  require(c.discount >= 0.0 && c.discount <= 1.0, "discount must lie in [0, 1]");
  require(c.ac_adam_eps > 0.0 && c.actor_lr > 0.0 && c.critic_lr > 0.0, "actor-critic optimizer settings must be positive");
  require(c.ac_hidden > 0 && c.ac_layers > 0, "actor-critic sizes must be positive");
  require(c.mpc_candidates > 0 && c.mpc_horizon > 0, "MPC candidates and horizon must be positive");
  for (std::size_t i = 0; i < c.mpc_learning_rates.size(); ++i) {
    require(c.mpc_learning_rates[i] >= 0.0, "MPC learning rates must be nonnegative");
    require(i == 0 || c.mpc_learning_rates[i] <= c.mpc_learning_rates[i - 1], "MPC learning rates must be nonincreasing");
  }
  require(!c.mpc_learning_rates.empty(), "MPC learning-rate schedule must be nonempty");
  require(c.logic_weight >= 0.0, "logic weight must be nonnegative");
  require(c.planner == "ac" || c.planner == "mpc", "planner must be 'ac' or 'mpc'");
  require(c.eval_episodes > 0, "eval episodes must be positive");
  bool known = false;
  std::string names;
  for (const env::EnvSpec& s : env::list_envs()) {
    known = known || s.name == c.env;
    names += (names.empty() ? "" : ", ") + s.name;
  }
  if (!known) throw ConfigError("invalid config: unknown env '" + c.env + "' (valid: " + names + ")");
}

rssm::RssmConfig rssm_config(const RunConfig& c, std::size_t obs_dim, std::size_t action_dim) {
  rssm::RssmConfig r;
  r.obs_dim = obs_dim;
  r.action_dim = action_dim;
  r.belief_size = c.belief_size;
  r.state_size = c.state_size;
  r.hidden_size = c.hidden_size;
  r.embedding_size = c.embedding_size;
  r.min_std = c.min_std;
  r.free_nats = c.free_nats;
  r.dyn_weight = c.dyn_weight;
  r.rep_weight = c.rep_weight;
  return r;
}

logic::LogicConfig logic_config(const RunConfig& c, std::size_t latent_dim, std::size_t action_dim) {
  logic::LogicConfig l;
  l.latent_dim = latent_dim;
  l.action_dim = action_dim;
  l.logic_dim = c.logic_size;
  l.mlp_layers = c.logic_mlp_number;
  l.kappa = c.kappa;
  l.not_gain = c.not_gain;
  l.gate_gain = c.gate_gain;
  return l;
}

reasoning::S2LossConfig s2_config(const RunConfig& c) {
  reasoning::S2LossConfig s;
  s.max_depth = c.reasoning_depth;
  s.reg_weight = c.reg_weight;
  s.l2_weight = c.l2_weight;
  s.reg_samples = c.reg_samples;
  return s;
}

planners::ActorCriticConfig ac_config(const RunConfig& c) {
  planners::ActorCriticConfig a;
  a.hidden = c.ac_hidden;
  a.layers = c.ac_layers;
  a.gamma = c.discount;
  a.lambda = c.return_lambda;
  a.actor_lr = c.actor_lr;
  a.critic_lr = c.critic_lr;
  a.adam_eps = c.ac_adam_eps;
  a.clip = c.gradient_clipping;
  a.horizon = c.imagination_horizon;
  a.explore_noise = c.exploration_noise;
  return a;
}

planners::PlanConfig plan_config(const RunConfig& c) {
  planners::PlanConfig p;
  p.iterations = c.mpc_iterations;
  p.candidates = c.mpc_candidates;
  p.horizon = c.mpc_horizon;
  p.learning_rates = c.mpc_learning_rates;
  return p;
}

}  // namespace dmwm::config
