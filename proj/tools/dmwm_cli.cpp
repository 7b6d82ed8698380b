// Command-line harness: train, evaluate and inspect dual-mind world model runs.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dmwm/config.hpp"
#include "dmwm/env.hpp"
#include "dmwm/error.hpp"
#include "dmwm/evaluation.hpp"
#include "dmwm/logic.hpp"
#include "dmwm/metrics.hpp"
#include "dmwm/reasoning.hpp"
#include "dmwm/trainer.hpp"

namespace fs = std::filesystem;
using namespace dmwm;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir = "run";
  std::string replay_dir;
  std::string planner;
  std::size_t mpc_iters = 0;
  std::size_t mpc_candidates = 0;
  double logic_weight = -1.0;
  std::vector<std::string> overrides;
};

config::RunConfig build_config(const GlobalOptions& g) {
  config::RunConfig cfg;
  if (!g.config_path.empty()) cfg = config::load(g.config_path);
  for (const std::string& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got " + kv);
    config::set(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed_set) cfg.seed = g.seed;
  if (!g.planner.empty()) cfg.planner = g.planner;
  if (g.mpc_iters > 0) cfg.mpc_iterations = g.mpc_iters;
  if (g.mpc_candidates > 0) cfg.mpc_candidates = g.mpc_candidates;
  if (g.logic_weight >= 0.0) cfg.logic_weight = g.logic_weight;
  config::validate(cfg);
  return cfg;
}

std::unique_ptr<harness::Trainer> load_run(const GlobalOptions& g) {
  return harness::Trainer::load(g.out_dir, g.replay_dir);
}

std::uint64_t eval_seed(const GlobalOptions& g, const harness::Trainer& t) {
  return g.seed_set ? g.seed : mix_seed(t.config().seed, 4);
}

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const unsigned long long v = std::stoull(item, &used);
    if (used != item.size() || v == 0) throw ConfigError("expected a comma-separated list of positive integers: " + text);
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ConfigError("empty list: " + text);
  return out;
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << content;
  if (!out) throw IoError(path.string() + ": write failed");
}

int run_train(const GlobalOptions& g, std::size_t episodes, bool resume, bool quiet) {
  std::unique_ptr<harness::Trainer> trainer;
  if (resume) {
    trainer = load_run(g);
  } else {
    trainer = std::make_unique<harness::Trainer>(build_config(g));
  }
  const std::size_t total = episodes > 0 ? episodes : trainer->config().training_episodes;
  const std::size_t remaining = total > trainer->episodes_done() ? total - trainer->episodes_done() : 0;
  fs::create_directories(g.out_dir);
  std::ofstream stream(fs::path(g.out_dir) / "metrics.stream.csv");
  stream << metrics::csv_header() << '\n';
  trainer->train(remaining, [&](const metrics::MetricsRow& row) {
    stream << metrics::csv_line(row) << '\n' << std::flush;
    if (quiet) return;
    std::cerr << "episode " << row.env_trials << " step " << row.step << " pred " << row.loss_pred << " s2 "
              << row.loss_s2;
    if (row.eval_return_mean) std::cerr << " eval " << *row.eval_return_mean << " ± " << *row.eval_return_std;
    std::cerr << '\n';
  });
  trainer->save(g.out_dir, g.replay_dir);
  stream.close();
  fs::remove(fs::path(g.out_dir) / "metrics.stream.csv");
  nlohmann::json summary{{"out_dir", g.out_dir},
                         {"episodes_done", trainer->episodes_done()},
                         {"update_rounds", trainer->update_rounds()},
                         {"env_steps", trainer->env_steps()},
                         {"env_trials", trainer->env_trials()}};
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int run_eval(const GlobalOptions& g, std::size_t episodes, const std::string& env, bool baseline) {
  auto trainer = load_run(g);
  const std::uint64_t seed = eval_seed(g, *trainer);
  const evaluation::ReturnStats stats = evaluation::evaluate(*trainer, episodes, seed, env);
  nlohmann::json out{{"env", trainer->config().env},
                     {"planner", trainer->config().planner},
                     {"episodes", episodes},
                     {"seed", seed},
                     {"return_mean", stats.mean},
                     {"return_std", stats.stddev},
                     {"returns", stats.returns}};
  if (baseline) {
    const evaluation::ReturnStats rb = evaluation::random_baseline(trainer->config().env, episodes, seed);
    out["random_mean"] = rb.mean;
    out["random_std"] = rb.stddev;
    out["ratio"] = rb.mean > 0.0 ? stats.mean / rb.mean : 0.0;
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

int run_consistency(const GlobalOptions& g, const std::string& horizons, std::size_t depth, std::size_t starts,
                    const std::string& out_path) {
  auto trainer = load_run(g);
  const auto table = evaluation::consistency_table(*trainer, parse_list(horizons), depth, starts,
                                                   eval_seed(g, *trainer));
  std::ostringstream csv;
  reasoning::write_consistency_csv(csv, trainer->config().env, table);
  if (out_path.empty()) {
    std::cout << csv.str();
  } else {
    write_file(out_path, csv.str());
  }
  return 0;
}

int run_heatmap(const GlobalOptions& g, std::size_t alpha, std::size_t starts, const std::string& out_path) {
  auto trainer = load_run(g);
  const Tensor m = evaluation::heatmap(*trainer, alpha, starts, eval_seed(g, *trainer));
  std::ostringstream csv;
  reasoning::write_matrix_csv(csv, m);
  if (out_path.empty()) {
    std::cout << csv.str();
  } else {
    write_file(out_path, csv.str());
  }
  return 0;
}

int run_envs() {
  nlohmann::json out = nlohmann::json::array();
  for (const env::EnvSpec& s : env::list_envs()) {
    out.push_back({{"name", s.name},
                   {"obs_dim", s.obs_dim},
                   {"action_dim", s.action_dim},
                   {"action_repeat", s.action_repeat},
                   {"max_episode_steps", s.max_episode_steps},
                   {"dt", s.dt}});
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

int run_export(const GlobalOptions& g, const std::string& format, const std::string& out_path) {
  const metrics::Format f = metrics::parse_format(format);
  const fs::path source = fs::path(g.out_dir) / "metrics.csv";
  const std::vector<metrics::MetricsRow> rows = metrics::import_metrics(source);
  const fs::path target = out_path.empty() ? fs::path(g.out_dir) / (f == metrics::Format::kCsv ? "metrics_export.csv"
                                                                                               : "metrics.json")
                                           : fs::path(out_path);
  metrics::export_metrics(target, rows, f);
  std::cout << target.string() << '\n';
  return 0;
}

int run_laws(const GlobalOptions& g, std::size_t samples) {
  auto trainer = load_run(g);
  logic::LogicEngine& engine = trainer->logic();
  Rng rng(eval_seed(g, *trainer));
  Tensor w(samples, engine.dim());
  for (std::size_t i = 0; i < samples; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < engine.dim(); ++j) {
      const double x = rng.normal();
      w.data[i * engine.dim() + j] = x;
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < engine.dim(); ++j) w.data[i * engine.dim() + j] /= norm;
  }
  ad::Tape tape;
  const logic::RegularizerResult r = engine.regularizer_loss(tape, tape.constant(w), nn::Grad::kFrozen);
  nlohmann::json out = nlohmann::json::object();
  for (std::size_t k = 0; k < logic::kRuleCount; ++k) out[logic::rule_names()[k]] = r.residuals[k];
  std::cout << out.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-mind world model harness"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config_path, "Config file of `Group/Name = value` lines")->check(CLI::ExistingFile);
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { g.seed = s; g.seed_set = true; }, "Global seed");
  app.add_option("--out-dir", g.out_dir, "Run directory for checkpoints and metrics")->capture_default_str();
  app.add_option("--replay-dir", g.replay_dir, "Directory of replay.bin (default: the run directory)");
  app.add_option("--planner", g.planner, "Planner")->check(CLI::IsMember({"ac", "mpc"}));
  app.add_option("--mpc-iters", g.mpc_iters, "Grad-MPC iterations");
  app.add_option("--mpc-candidates", g.mpc_candidates, "Grad-MPC candidates");
  app.add_option("--logic-weight", g.logic_weight, "Weight of the logic term in the guided S1 loss");
  app.add_option("--set", g.overrides, "Config override KEY=VALUE, repeatable");

  auto* train = app.add_subcommand("train", "Seed, train and checkpoint a run");
  std::size_t episodes = 0;
  bool resume = false, quiet = false;
  train->add_option("--episodes", episodes, "Total training episodes (default: config)");
  train->add_flag("--resume", resume, "Continue the checkpoint in --out-dir");
  train->add_flag("--quiet", quiet, "No per-episode progress on stderr");

  auto* eval = app.add_subcommand("eval", "Deterministic-action returns of a checkpoint");
  std::size_t eval_episodes = evaluation::kDefaultEpisodes;
  std::string eval_env;
  bool baseline = false;
  eval->add_option("--episodes", eval_episodes, "Evaluation episodes")->capture_default_str();
  eval->add_option("--env", eval_env, "Expected environment; a mismatch is an error");
  eval->add_flag("--baseline", baseline, "Also score a uniform random policy");

  auto* consistency = app.add_subcommand("consistency", "Logical consistency of imagined rollouts per horizon");
  std::string horizons = "10,30,50,100", cons_out;
  std::size_t depth = 30, starts = evaluation::kDefaultStarts;
  consistency->add_option("--horizons", horizons, "Comma-separated horizons")->capture_default_str();
  consistency->add_option("--depth", depth, "Reasoning depth")->capture_default_str();
  consistency->add_option("--starts", starts, "Posterior start states")->capture_default_str();
  consistency->add_option("--output", cons_out, "CSV path (default: stdout)");

  auto* heat = app.add_subcommand("heatmap", "Logic correlation heatmap as a CSV matrix");
  std::size_t alpha = 30, heat_starts = evaluation::kDefaultStarts;
  std::string heat_out;
  heat->add_option("--alpha", alpha, "Rollout length and matrix size")->capture_default_str();
  heat->add_option("--starts", heat_starts, "Posterior start states")->capture_default_str();
  heat->add_option("--output", heat_out, "CSV path (default: stdout)");

  auto* envs = app.add_subcommand("envs", "List environments as JSON");

  auto* exp = app.add_subcommand("export", "Export the run's metrics as CSV or JSON");
  std::string format = "json", exp_out;
  exp->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
  exp->add_option("--output", exp_out, "Output path");

  auto* laws = app.add_subcommand("laws", "Logic-law residuals of a checkpoint on random unit vectors");
  std::size_t law_samples = 256;
  laws->add_option("--samples", law_samples, "Unit vectors")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return run_train(g, episodes, resume, quiet);
    if (*eval) return run_eval(g, eval_episodes, eval_env, baseline);
    if (*consistency) return run_consistency(g, horizons, depth, starts, cons_out);
    if (*heat) return run_heatmap(g, alpha, heat_starts, heat_out);
    if (*envs) return run_envs();
    if (*exp) return run_export(g, format, exp_out);
    if (*laws) return run_laws(g, law_samples);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
