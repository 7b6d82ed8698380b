#include <doctest.h>

#include <chrono>
#include <cmath>

#include "dmwm/error.hpp"
#include "dmwm/planners.hpp"
#include "gradcheck.hpp"

using namespace dmwm;
using dmwm::testing::check_gradients;
using dmwm::testing::jitter_biases;
using dmwm::testing::kFdTol;
using dmwm::testing::random_tensor;

namespace {

// V^N_k(s_τ): k-step return bootstrapped at min(τ + k, H).
double n_step(const std::vector<double>& r, const std::vector<double>& v, double gamma, std::size_t tau,
              std::size_t k) {
  const std::size_t H = r.size();
  const std::size_t h = std::min(tau + k, H);
  double out = 0.0;
  for (std::size_t n = tau; n < h; ++n) out += std::pow(gamma, static_cast<double>(n - tau)) * r[n];
  return out + std::pow(gamma, static_cast<double>(h - tau)) * v[h];
}

// (1 − λ) Σ_{n=1}^{H−1} λ^{n−1} V^N_n + λ^{H−1} V^N_H, evaluated term by term.
std::vector<double> direct_lambda_returns(const std::vector<double>& r, const std::vector<double>& v, double gamma,
                                          double lambda) {
  const std::size_t H = r.size();
  std::vector<double> out(H);
  for (std::size_t tau = 0; tau < H; ++tau) {
    double acc = 0.0;
    for (std::size_t n = 1; n < H; ++n) {
      acc += (1.0 - lambda) * std::pow(lambda, static_cast<double>(n - 1)) * n_step(r, v, gamma, tau, n);
    }
    out[tau] = acc + std::pow(lambda, static_cast<double>(H - 1)) * n_step(r, v, gamma, tau, H);
  }
  return out;
}

rssm::RssmConfig tiny_rssm() {
  rssm::RssmConfig cfg;
  cfg.obs_dim = 3;
  cfg.action_dim = 1;
  cfg.belief_size = 5;
  cfg.state_size = 3;
  cfg.hidden_size = 6;
  cfg.embedding_size = 4;
  return cfg;
}

planners::ActorCriticConfig tiny_ac() {
  planners::ActorCriticConfig cfg;
  cfg.hidden = 8;
  cfg.horizon = 4;
  return cfg;
}

// Linear toy dynamics s' = A s + B a with reward c·s'.
struct LinearToy {
  Tensor A{3, 3, {0.9, 0.1, 0.0, -0.2, 0.8, 0.1, 0.0, 0.3, 0.7}};
  Tensor B{2, 3, {0.5, -0.3, 0.2, 0.1, 0.4, -0.6}};
  Tensor c{3, 1, {1.0, -0.5, 0.25}};

  planners::Dynamics dynamics(const Tensor& start, std::size_t steps) const {
    return [this, start, steps](ad::Tape& tape, const planners::Policy& policy) {
      planners::Rollout out;
      ad::Var s = tape.constant(start);
      out.features.push_back(s);
      for (std::size_t k = 0; k < steps; ++k) {
        ad::Var a = policy(tape, s);
        s = ad::add(ad::matmul(s, tape.constant(A)), ad::matmul(a, tape.constant(B)));
        out.features.push_back(s);
        out.rewards.push_back(ad::matmul(s, tape.constant(c)));
      }
      return out;
    };
  }
};

}  // namespace

TEST_CASE("lambda returns on the two-step example") {
  const std::vector<double> r{1.0, 1.0}, v{0.0, 0.0, 10.0};
  const auto rec = planners::lambda_returns(r, v, 0.9, 0.95);
  const auto direct = direct_lambda_returns(r, v, 0.9, 0.95);
  REQUIRE(rec.size() == 2);
  CHECK(std::abs(rec[0] - direct[0]) <= 1e-12);
  CHECK(std::abs(rec[1] - direct[1]) <= 1e-12);
  CHECK(std::abs(rec[1] - 10.0) <= 1e-12);
  CHECK(std::abs(rec[0] - (1.0 + 0.9 * 0.95 * 10.0)) <= 1e-12);
}

TEST_CASE("lambda returns agree with direct evaluation on random instances") {
  Rng rng(1);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t H = 1 + rng.below(16);
    std::vector<double> r(H), v(H + 1);
    for (double& x : r) x = rng.normal();
    for (double& x : v) x = 3.0 * rng.normal();
    const double gamma = rng.uniform(), lambda = rng.uniform();
    const auto rec = planners::lambda_returns(r, v, gamma, lambda);
    const auto direct = direct_lambda_returns(r, v, gamma, lambda);
    for (std::size_t k = 0; k < H; ++k) worst = std::max(worst, std::abs(rec[k] - direct[k]));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("lambda returns collapse at lambda 0 and 1") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t H = 1 + rng.below(16);
    std::vector<double> r(H), v(H + 1);
    for (double& x : r) x = rng.normal();
    for (double& x : v) x = rng.normal();
    const double gamma = rng.uniform();
    const auto zero = planners::lambda_returns(r, v, gamma, 0.0);
    const auto one = planners::lambda_returns(r, v, gamma, 1.0);
    double nested = v[H];
    for (std::size_t k = H; k-- > 0;) {
      CHECK(zero[k] == r[k] + gamma * v[k + 1]);
      nested = r[k] + gamma * nested;
      CHECK(one[k] == nested);
      double sum = std::pow(gamma, static_cast<double>(H - k)) * v[H];
      for (std::size_t n = k; n < H; ++n) sum += std::pow(gamma, static_cast<double>(n - k)) * r[n];
      CHECK(std::abs(one[k] - sum) <= 1e-12);
    }
  }
}

TEST_CASE("lambda returns reject bad arguments") {
  CHECK_THROWS_AS(planners::lambda_returns(std::vector<double>{1.0}, std::vector<double>{1.0}, 0.9, 0.9),
                  InputError);
  CHECK_THROWS_AS(planners::lambda_returns(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}, 1.5, 0.9),
                  InputError);
}

TEST_CASE("tape lambda returns match the scalar recursion and differentiate") {
  Rng rng(3);
  const std::size_t H = 6, B = 3;
  std::vector<Tensor> inputs;
  for (std::size_t k = 0; k < 2 * H + 1; ++k) inputs.push_back(random_tensor(B, 1, rng));
  ad::Tape tape;
  std::vector<ad::Var> rv, vv;
  for (std::size_t k = 0; k < H; ++k) rv.push_back(tape.constant(inputs[k]));
  for (std::size_t k = H; k < 2 * H + 1; ++k) vv.push_back(tape.constant(inputs[k]));
  const auto R = planners::lambda_returns(rv, vv, 0.99, 0.95);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> r, v;
    for (std::size_t k = 0; k < H; ++k) r.push_back(inputs[k].data[b]);
    for (std::size_t k = H; k < 2 * H + 1; ++k) v.push_back(inputs[k].data[b]);
    const auto expected = planners::lambda_returns(r, v, 0.99, 0.95);
    for (std::size_t k = 0; k < H; ++k) CHECK(R[k].value().data[b] == expected[k]);
  }
  const Tensor weights = random_tensor(H * B, 1, rng);
  testing::Objective f = [&](ad::Tape& tp, const std::vector<ad::Var>& x) {
    std::vector<ad::Var> r(x.begin(), x.begin() + H), v(x.begin() + H, x.end());
    return ad::sum(ad::mul(ad::stack_rows(planners::lambda_returns(r, v, 0.99, 0.95)), tp.constant(weights)));
  };
  CHECK(check_gradients(f, inputs).worst() < kFdTol);
}

TEST_CASE("critic loss vanishes at its own targets") {
  Rng rng(4);
  planners::ActorCritic ac(3, 2, tiny_ac(), rng);
  std::vector<Tensor> features{random_tensor(4, 3, rng), random_tensor(4, 3, rng)};
  std::vector<Tensor> targets;
  for (const Tensor& f : features) {
    ad::Tape tape;
    targets.push_back(ac.value(tape, tape.constant(f), nn::Grad::kFrozen).value());
  }
  nn::zero_grads(ac.critic_parameters());
  ad::Tape tape;
  ad::Var loss = ac.critic_loss(tape, features, targets);
  CHECK(loss.item() == 0.0);
  tape.backward(loss);
  CHECK(nn::grad_norm(ac.critic_parameters()) == 0.0);
}

TEST_CASE("actor gradient through linear toy dynamics matches finite differences") {
  Rng rng(5);
  planners::ActorCritic ac(3, 2, tiny_ac(), rng);
  jitter_biases(ac.actor_parameters(), rng);
  LinearToy toy;
  const Tensor start = random_tensor(4, 3, rng);
  testing::Objective f = [&](ad::Tape& tape, const std::vector<ad::Var>&) {
    Rng noise(77);
    planners::Policy policy = [&](ad::Tape& tp, ad::Var s) { return ac.sample(tp, s, noise); };
    return ac.actor_loss(tape, toy.dynamics(start, 2)(tape, policy));
  };
  const auto report = check_gradients(f, {}, ac.actor_parameters());
  CHECK(report.worst() < kFdTol);
}

TEST_CASE("actor and critic updates touch only their own parameters") {
  Rng rng(6);
  planners::ActorCritic ac(3, 2, tiny_ac(), rng);
  LinearToy toy;
  const Tensor start = random_tensor(4, 3, rng);
  {
    ad::Tape tape;
    Rng noise(1);
    planners::Policy policy = [&](ad::Tape& tp, ad::Var s) { return ac.sample(tp, s, noise); };
    tape.backward(ac.actor_loss(tape, toy.dynamics(start, 3)(tape, policy)));
    CHECK(nn::grad_norm(ac.actor_parameters()) > 0.0);
    CHECK(nn::grad_norm(ac.critic_parameters()) == 0.0);
    nn::zero_grads(ac.actor_parameters());
  }
  {
    ad::Tape tape;
    tape.backward(ac.critic_loss(tape, {random_tensor(4, 3, rng)}, {random_tensor(4, 1, rng)}));
    CHECK(nn::grad_norm(ac.critic_parameters()) > 0.0);
    CHECK(nn::grad_norm(ac.actor_parameters()) == 0.0);
    nn::zero_grads(ac.critic_parameters());
  }
  const auto stats = ac.update(toy.dynamics(start, 3), rng);
  CHECK(std::isfinite(stats.actor_loss));
  CHECK(std::isfinite(stats.critic_loss));
}

TEST_CASE("act is bounded and deterministic without exploration") {
  Rng rng(7);
  planners::ActorCritic ac(3, 2, tiny_ac(), rng);
  const Tensor f = random_tensor(50, 3, rng, 10.0);
  Rng a(1), b(2);
  const Tensor x = ac.act(f, false, a);
  CHECK(x.data == ac.act(f, false, b).data);
  ad::Tape tape;
  CHECK(x.data == ad::tanh(ac.distribution(tape, tape.constant(f), nn::Grad::kFrozen).mean).value().data);
  const Tensor y = ac.act(f, true, a);
  for (double v : x.data) CHECK(std::abs(v) <= 1.0);
  for (double v : y.data) CHECK(std::abs(v) <= 1.0);
  CHECK(y.data != x.data);
}

TEST_CASE("actor-critic update through the world model") {
  Rng rng(8);
  rssm::Rssm model(tiny_rssm(), rng);
  planners::ActorCritic ac(5 + 3, 1, tiny_ac(), rng);
  rssm::ModelState start{random_tensor(6, 5, rng), random_tensor(6, 3, rng)};
  const auto before = nn::squared_norm(model.parameters());
  const auto stats = ac.update(model, start, rng);
  CHECK(std::isfinite(stats.mean_return));
  CHECK(nn::squared_norm(model.parameters()) == before);
  CHECK(nn::grad_norm(model.parameters()) == 0.0);
}

TEST_CASE("mpc learning-rate phases") {
  planners::PlanConfig cfg;
  cfg.iterations = 40;
  CHECK(planners::plan_learning_rate(cfg, 0) == 0.1);
  CHECK(planners::plan_learning_rate(cfg, 9) == 0.1);
  CHECK(planners::plan_learning_rate(cfg, 10) == 0.01);
  CHECK(planners::plan_learning_rate(cfg, 20) == 0.005);
  CHECK(planners::plan_learning_rate(cfg, 39) == 0.0001);
}

TEST_CASE("mpc without iterations returns the best raw sample") {
  planners::PlanConfig cfg;
  cfg.iterations = 0;
  cfg.candidates = 64;
  cfg.horizon = 3;
  std::vector<Tensor> seen;
  planners::PlanObjective objective = [&](ad::Tape&, const std::vector<ad::Var>& a) {
    for (const ad::Var& x : a) seen.push_back(x.value());
    ad::Var total = ad::sum_cols(a[0]);
    for (std::size_t k = 1; k < a.size(); ++k) total = ad::add(total, ad::sum_cols(a[k]));
    return total;
  };
  Rng rng(9);
  const auto plan = planners::plan_grad_mpc(objective, 2, cfg, rng);
  REQUIRE(seen.size() == 3);
  double best = -1e9;
  std::size_t arg = 0;
  for (std::size_t j = 0; j < 64; ++j) {
    double r = 0.0;
    for (const Tensor& t : seen) r += t(j, 0) + t(j, 1);
    if (r > best) {
      best = r;
      arg = j;
    }
  }
  CHECK(plan.best_return == best);
  CHECK(plan.best_per_iteration.size() == 1);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(plan.actions[k](0, 0) == seen[k](arg, 0));
    CHECK(plan.actions[k](0, 1) == seen[k](arg, 1));
  }
}

TEST_CASE("mpc reaches the quadratic optimum monotonically") {
  planners::PlanConfig cfg;
  cfg.iterations = 40;
  cfg.candidates = 100;
  cfg.horizon = 5;
  planners::PlanObjective objective = [](ad::Tape&, const std::vector<ad::Var>& a) {
    ad::Var total = ad::neg(ad::sum_cols(ad::square(a[0])));
    for (std::size_t k = 1; k < a.size(); ++k) total = ad::sub(total, ad::sum_cols(ad::square(a[k])));
    return total;
  };
  Rng rng(10);
  const auto t0 = std::chrono::steady_clock::now();
  const auto plan = planners::plan_grad_mpc(objective, 2, cfg, rng);
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 60.0);
  CHECK(plan.best_per_iteration.size() == 41);
  for (std::size_t k = 1; k < plan.best_per_iteration.size(); ++k) {
    CHECK(plan.best_per_iteration[k] >= plan.best_per_iteration[k - 1] - 1e-9);
  }
  CHECK(std::abs(plan.best_return) < 1e-2);
}

TEST_CASE("mpc through the world model stays in bounds") {
  Rng rng(11);
  rssm::Rssm model(tiny_rssm(), rng);
  rssm::ModelState start{random_tensor(1, 5, rng), random_tensor(1, 3, rng)};
  planners::PlanConfig cfg;
  cfg.iterations = 8;
  cfg.candidates = 16;
  cfg.horizon = 4;
  const auto plan = planners::plan_grad_mpc(planners::world_model_objective(model, start), 1, cfg, rng);
  REQUIRE(plan.actions.size() == 4);
  for (const Tensor& a : plan.actions) {
    CHECK(a.rows == 1);
    CHECK(std::abs(a(0, 0)) <= 1.0);
  }
  for (std::size_t k = 1; k < plan.best_per_iteration.size(); ++k) {
    CHECK(std::isfinite(plan.best_per_iteration[k]));
  }
  cfg.learning_rates = {0.1, 0.2};
  CHECK_THROWS_AS(planners::plan_grad_mpc(planners::world_model_objective(model, start), 1, cfg, rng),
                  ConfigError);
}
