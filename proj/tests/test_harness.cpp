#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "dmwm/checkpoint.hpp"
#include "dmwm/config.hpp"
#include "dmwm/error.hpp"
#include "dmwm/evaluation.hpp"
#include "dmwm/metrics.hpp"
#include "dmwm/trainer.hpp"

using namespace dmwm;

namespace {

config::RunConfig tiny_config() {
  config::RunConfig c;
  c.batch_size = 3;
  c.sequence_length = 8;
  c.seed_episodes = 2;
  c.collect_interval = 2;
  c.max_episode_length = 20;
  c.imagination_horizon = 5;
  c.embedding_size = 8;
  c.hidden_size = 8;
  c.belief_size = 8;
  c.state_size = 4;
  c.reasoning_depth = 3;
  c.logic_size = 8;
  c.ac_hidden = 8;
  c.mpc_iterations = 2;
  c.mpc_candidates = 4;
  c.mpc_horizon = 3;
  c.eval_episodes = 2;
  c.seed = 17;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("dmwm_test_harness_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::string csv_of(const std::vector<metrics::MetricsRow>& rows) {
  std::ostringstream out;
  metrics::write_csv(out, rows);
  return out.str();
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

metrics::MetricsRow sample_row(std::size_t k) {
  metrics::MetricsRow r;
  r.step = 10 * k;
  r.env_steps = 3000 * k;
  r.env_trials = k;
  r.loss_pred = 1.0 / 3.0 + static_cast<double>(k);
  r.loss_dyn = 3.0;
  r.loss_rep = 2.9999999999999996;
  r.loss_logic_elbo = -1e-300;
  r.loss_s2 = -12.5;
  for (std::size_t i = 0; i < logic::kRuleCount; ++i) r.residuals[i] = 0.01 * static_cast<double>(i + k);
  if (k % 2 == 0) {
    r.eval_return_mean = 123.456;
    r.eval_return_std = 0.0;
    r.consistency_mean = 0.7;
    r.consistency_std = 0.05;
  }
  return r;
}

}  // namespace

TEST_CASE("config defaults follow the hyperparameter table") {
  const config::RunConfig c;
  CHECK(c.seed_episodes == 5);
  CHECK(c.training_episodes == 1000);
  CHECK(c.collect_interval == 100);
  CHECK(c.batch_size == 50);
  CHECK(c.sequence_length == 64);
  CHECK(c.imagination_horizon == 30);
  CHECK(c.reasoning_depth == 30);
  CHECK(c.logic_size == 64);
  CHECK(c.gradient_clipping == 100.0);
  CHECK(c.exploration_noise == 0.3);
  CHECK(c.replay_capacity == 1000000);
  CHECK(c.max_episode_length == 500);
  CHECK(c.mpc_learning_rates == std::vector<double>{0.1, 0.01, 0.005, 0.0001});
  CHECK_NOTHROW(config::validate(c));
}

TEST_CASE("config text round-trips and later lines win") {
  config::RunConfig c = tiny_config();
  c.logic_weight = 0.25;
  c.env = "cartpole-balance";
  c.planner = "mpc";
  c.mpc_learning_rates = {0.3, 0.2};
  CHECK(config::parse(config::to_text(c)) == c);
  CHECK(config::from_json(config::to_json(c)) == c);

  const config::RunConfig p = config::parse(
      "# comment\nGeneral/Batch size = 7\n\nGeneral/Batch size = 9   # trailing\nHarness/Planner = mpc\n");
  CHECK(p.batch_size == 9);
  CHECK(p.planner == "mpc");
  CHECK(config::get(p, "General/Batch size") == "9");
  for (const std::string& key : config::keys()) CHECK_NOTHROW(config::get(c, key));
}

TEST_CASE("config errors name the offending key or field") {
  CHECK_THROWS_AS(config::parse("General/Batch sise = 3\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("General/Batch size = three\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("General/Batch size\n"), ConfigError);
  config::RunConfig c;
  c.env = "acrobot";
  CHECK_THROWS_AS(config::validate(c), ConfigError);
  c = config::RunConfig{};
  c.planner = "cem";
  CHECK_THROWS_AS(config::validate(c), ConfigError);
  c = config::RunConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(config::validate(c), ConfigError);
  c = config::RunConfig{};
  c.mpc_learning_rates = {0.1, 0.2};
  CHECK_THROWS_AS(config::validate(c), ConfigError);
  try {
    config::parse("General/Batch sise = 3\n");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("Batch sise") != std::string::npos);
  }
  CHECK_THROWS_AS(config::load("/nonexistent/dmwm.cfg"), IoError);
}

TEST_CASE("metrics csv header matches the documented schema exactly") {
  std::string expected = "step,env_steps,env_trials,loss_pred,loss_dyn,loss_rep,loss_logic_elbo,loss_s2";
  for (int i = 1; i <= 14; ++i) expected += ",r" + std::to_string(i);
  expected += ",eval_return_mean,eval_return_std,consistency_mean,consistency_std";
  CHECK(metrics::csv_header() == expected);
  std::ostringstream out;
  metrics::write_csv(out, {});
  CHECK(out.str() == expected + "\n");
}

TEST_CASE("metrics round-trip through csv and json bit for bit") {
  std::vector<metrics::MetricsRow> rows;
  for (std::size_t k = 1; k <= 4; ++k) rows.push_back(sample_row(k));
  std::istringstream in(csv_of(rows));
  CHECK(metrics::read_csv(in) == rows);
  CHECK(metrics::rows_from_json(metrics::to_json(rows)) == rows);
  CHECK(metrics::csv_line(rows[0]).substr(metrics::csv_line(rows[0]).size() - 4) == ",,,,");

  const auto dir = temp_dir("metrics");
  std::filesystem::create_directories(dir);
  metrics::export_metrics(dir / "m.csv", rows, metrics::Format::kCsv);
  metrics::export_metrics(dir / "m.json", rows, metrics::Format::kJson);
  CHECK(metrics::import_metrics(dir / "m.csv") == rows);
  CHECK(metrics::import_metrics(dir / "m.json") == rows);
  CHECK(metrics::parse_format("json") == metrics::Format::kJson);
  CHECK_THROWS_AS(metrics::parse_format("xml"), ConfigError);
  CHECK_THROWS_AS(metrics::export_metrics("/nonexistent/dir/m.csv", rows, metrics::Format::kCsv), IoError);
  std::filesystem::remove_all(dir);

  std::istringstream bad("step,env_steps\n1,2\n");
  CHECK_THROWS_AS(metrics::read_csv(bad), FormatError);
}

TEST_CASE("non-finite loss components abort with the field named") {
  metrics::MetricsRow r = sample_row(1);
  CHECK_NOTHROW(metrics::require_finite(r));
  r.loss_dyn = std::numeric_limits<double>::quiet_NaN();
  try {
    metrics::require_finite(r);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("loss_dyn") != std::string::npos);
  }
  r = sample_row(1);
  r.residuals[6] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(metrics::require_finite(r), NumericError);
}

TEST_CASE("checkpoint container round-trips and rejects corruption") {
  checkpoint::Container c;
  c.meta = {{"name", "x"}, {"n", 3}};
  c.blocks.push_back({"a", Tensor(2, 3, {1, 2, 3, 4, 5, 6})});
  c.blocks.push_back({"b", Tensor(1, 1, {-0.1})});
  const auto dir = temp_dir("ckpt");
  std::filesystem::create_directories(dir);
  const auto path = dir / "c.bin";
  checkpoint::save(path, c);
  const checkpoint::Container back = checkpoint::load(path);
  CHECK(back.meta == c.meta);
  CHECK(back.blocks == c.blocks);
  CHECK(back.block("a").data == c.blocks[0].value.data);
  CHECK_THROWS_AS(back.block("missing"), FormatError);

  const std::vector<char> good = read_bytes(path);
  SUBCASE("bad magic") {
    auto bad = good;
    bad[1] ^= 0x20;
    write_bytes(path, bad);
    CHECK_THROWS_AS(checkpoint::load(path), FormatError);
  }
  SUBCASE("future version") {
    auto bad = good;
    bad[8] = 7;
    write_bytes(path, bad);
    try {
      checkpoint::load(path);
      FAIL("expected VersionError");
    } catch (const VersionError& e) {
      CHECK(e.found() == 7);
      CHECK(e.supported() == checkpoint::kFormatVersion);
    }
  }
  SUBCASE("flipped payload byte fails the checksum") {
    auto bad = good;
    bad[bad.size() - 12] ^= 0x01;
    write_bytes(path, bad);
    CHECK_THROWS_AS(checkpoint::load(path), FormatError);
  }
  SUBCASE("truncated") {
    write_bytes(path, std::vector<char>(good.begin(), good.begin() + 20));
    CHECK_THROWS_AS(checkpoint::load(path), TruncatedError);
  }
  SUBCASE("missing") {
    std::filesystem::remove(path);
    CHECK_THROWS_AS(checkpoint::load(path), IoError);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("zero training episodes leaves only seed replay and no gradient steps") {
  harness::Trainer t(tiny_config());
  std::vector<double> before;
  for (const Parameter* p : t.model().parameters()) before.insert(before.end(), p->value.data.begin(), p->value.data.end());
  t.train(0);
  CHECK(t.replay().episode_count() == 2);
  CHECK(t.env_trials() == 2);
  CHECK(t.env_steps() == 2 * 20 * 6);
  CHECK(t.update_rounds() == 0);
  CHECK(t.metrics().empty());
  std::vector<double> after;
  for (const Parameter* p : t.model().parameters()) after.insert(after.end(), p->value.data.begin(), p->value.data.end());
  CHECK(before == after);
}

TEST_CASE("invalid configs fail before any compute") {
  config::RunConfig c = tiny_config();
  c.env = "acrobot";
  CHECK_THROWS_AS(harness::Trainer{c}, ConfigError);
}

TEST_CASE("training rows are finite with strictly increasing counters") {
  harness::Trainer t(tiny_config());
  std::size_t streamed = 0;
  t.train(3, [&](const metrics::MetricsRow&) { ++streamed; });
  REQUIRE(t.metrics().size() == 3);
  CHECK(streamed == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& r = t.metrics()[i];
    CHECK_NOTHROW(metrics::require_finite(r));
    CHECK(r.step == 2 * (i + 1));
    CHECK(r.env_trials == 3 + i);
    if (i > 0) CHECK(r.env_steps > t.metrics()[i - 1].env_steps);
  }
}

TEST_CASE("identical config and seed give bitwise-identical metrics") {
  harness::Trainer a(tiny_config()), b(tiny_config());
  a.train(3);
  b.train(3);
  CHECK(csv_of(a.metrics()) == csv_of(b.metrics()));
  config::RunConfig other = tiny_config();
  other.seed = 18;
  harness::Trainer c(other);
  c.train(3);
  CHECK(csv_of(a.metrics()) != csv_of(c.metrics()));
}

TEST_CASE("checkpoint resume equals straight-through training bitwise") {
  for (const std::string planner : {"ac", "mpc"}) {
    config::RunConfig cfg = tiny_config();
    cfg.planner = planner;
    harness::Trainer straight(cfg);
    straight.train(4);

    const auto dir = temp_dir("resume_" + planner);
    {
      harness::Trainer first(cfg);
      first.train(2);
      first.save(dir);
    }
    auto resumed = harness::Trainer::load(dir);
    CHECK(resumed->episodes_done() == 2);
    resumed->train(2);
    CHECK(csv_of(resumed->metrics()) == csv_of(straight.metrics()));
    CHECK(resumed->replay() == straight.replay());
    CHECK(std::ifstream(dir / "metrics.csv").good());
    CHECK(config::load(dir / "config.txt") == cfg);
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("corrupted run directories raise format errors") {
  const auto dir = temp_dir("corrupt_run");
  harness::Trainer t(tiny_config());
  t.train(1);
  t.save(dir);
  auto bytes = read_bytes(dir / "checkpoint.bin");
  bytes[bytes.size() / 2] ^= 0x10;
  write_bytes(dir / "checkpoint.bin", bytes);
  CHECK_THROWS_AS(harness::Trainer::load(dir), FormatError);
  t.save(dir);
  auto replay = read_bytes(dir / "replay.bin");
  write_bytes(dir / "replay.bin", std::vector<char>(replay.begin(), replay.end() - 3));
  CHECK_THROWS_AS(harness::Trainer::load(dir), TruncatedError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("evaluation is deterministic, order independent and checks the env") {
  harness::Trainer t(tiny_config());
  t.train(1);
  const auto one = evaluation::evaluate(t, 1, 5);
  CHECK(one.stddev == 0.0);
  CHECK(one.returns.size() == 1);
  const auto four = evaluation::evaluate(t, 4, 5);
  CHECK(four.returns.front() == one.returns.front());
  CHECK(evaluation::evaluate(t, 4, 5).returns == four.returns);
  CHECK(four.mean == doctest::Approx((four.returns[0] + four.returns[1] + four.returns[2] + four.returns[3]) / 4));
  CHECK_THROWS_AS(evaluation::evaluate(t, 2, 5, "cartpole-balance"), ConfigError);
  CHECK_NOTHROW(evaluation::evaluate(t, 1, 5, "pendulum-swingup"));

  const auto r1 = evaluation::random_baseline("pendulum-swingup", 3, 9);
  const auto r2 = evaluation::random_baseline("pendulum-swingup", 5, 9);
  CHECK(r1.returns[2] == r2.returns[2]);
  for (double r : r2.returns) CHECK((r >= 0.0 && r <= 500.0 * 6.0));
}

TEST_CASE("consistency tables and heatmaps have the documented shapes") {
  harness::Trainer t(tiny_config());
  t.train(1);
  const auto table = evaluation::consistency_table(t, {2, 5, 9}, 3, 6, 11);
  REQUIRE(table.size() == 3);
  const double lo = t.logic().sim_floor(), hi = t.logic().sim_ceiling();
  for (const auto& row : table) {
    CHECK(row.episodes == 6);
    CHECK(row.depth == 3);
    CHECK(row.mean > lo);
    CHECK(row.mean < hi);
  }
  CHECK(table[0].horizon == 2);
  CHECK(table[2].horizon == 9);
  CHECK(evaluation::consistency_table(t, {5}, 3, 6, 11).size() == 1);
  const auto traj = evaluation::imagine_trajectories(t, 5, 6, 11);
  CHECK(traj.length() == 6);
  CHECK(traj.actions.size() == 5);
  CHECK(traj.batch() == 6);
  const Tensor m = evaluation::heatmap(t, 4, 6, 11);
  CHECK(m.rows == 4);
  CHECK(m.cols == 4);
}
