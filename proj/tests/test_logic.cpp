#include <doctest.h>

#include <cmath>

#include "dmwm/error.hpp"
#include "dmwm/logic.hpp"
#include "gradcheck.hpp"

using namespace dmwm;
using dmwm::testing::check_gradients;
using dmwm::testing::kFdTol;
using dmwm::testing::project;
using dmwm::testing::random_tensor;

namespace {

logic::LogicConfig small_config() {
  logic::LogicConfig cfg;
  cfg.latent_dim = 5;
  cfg.action_dim = 2;
  cfg.logic_dim = 6;
  return cfg;
}

// Materializes grid[i][j] = v_i m_j, applies a zero-padded 3×3 convolution and
// averages each output row.
Tensor grid_conv_reference(const Tensor& v, const Tensor& m, const Tensor& k) {
  const std::size_t d = v.cols;
  Tensor out(v.rows, d);
  for (std::size_t r = 0; r < v.rows; ++r) {
    std::vector<double> grid(d * d);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) grid[i * d + j] = v(r, i) * m(r, j);
    }
    for (std::size_t i = 0; i < d; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int a = -1; a <= 1; ++a) {
          for (int b = -1; b <= 1; ++b) {
            const long ii = static_cast<long>(i) + a, jj = static_cast<long>(j) + b;
            if (ii < 0 || jj < 0 || ii >= static_cast<long>(d) || jj >= static_cast<long>(d)) continue;
            acc += k.data[(a + 1) * 3 + (b + 1)] * grid[ii * d + jj];
          }
        }
        row += acc;
      }
      out(r, i) = row / static_cast<double>(d);
    }
  }
  return out;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("kronecker convolution branch matches a materialized grid") {
  Rng rng(1);
  for (std::size_t d : {1u, 2u, 3u, 8u, 64u}) {
    const Tensor v = random_tensor(3, d, rng), m = random_tensor(3, d, rng), k = random_tensor(1, 9, rng);
    ad::Tape tape;
    const Tensor got = ad::kron_conv_rowmean(tape.constant(v), tape.constant(m), tape.constant(k)).value();
    const Tensor want = grid_conv_reference(v, m, k);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("kronecker convolution gradients match finite differences") {
  Rng rng(2);
  auto f = [](ad::Tape&, const std::vector<ad::Var>& in) {
    return project(ad::kron_conv_rowmean(in[0], in[1], in[2]));
  };
  auto report = check_gradients(f, {random_tensor(2, 7, rng), random_tensor(2, 7, rng), random_tensor(1, 9, rng)});
  for (double e : report.input_errors) CHECK(e < kFdTol);
}

TEST_CASE("embedders and gates match finite differences in inputs and weights") {
  Rng rng(3);
  logic::LogicEngine eng(small_config(), rng);
  dmwm::testing::jitter_biases(eng.parameters(), rng);
  auto f = [&](ad::Tape& tape, const std::vector<ad::Var>& in) {
    ad::Var v = eng.embed_state(tape, in[0]);
    ad::Var m = eng.embed_action(tape, in[0], in[1]);
    ad::Var a = eng.gate_and(tape, v, m);
    ad::Var o = eng.gate_or(tape, m, in[2]);
    ad::Var i = eng.gate_imply(tape, a, o);
    return ad::add(project(i, 5), project(eng.gate_not(tape, in[2]), 6));
  };
  auto report = check_gradients(f, {random_tensor(3, 5, rng), random_tensor(3, 2, rng), random_tensor(3, 6, rng)},
                                eng.parameters());
  for (double e : report.input_errors) CHECK(e < kFdTol);
  for (double e : report.param_errors) CHECK(e < kFdTol);
}

TEST_CASE("gates have the documented shapes and no built-in symmetry") {
  Rng rng(4);
  logic::LogicConfig cfg;
  cfg.latent_dim = 230;
  logic::LogicEngine eng(cfg, rng);
  ad::Tape tape;
  ad::Var s = tape.constant(random_tensor(1, 230, rng));
  ad::Var v = eng.embed_state(tape, s);
  ad::Var m = eng.embed_action(tape, s, tape.constant(random_tensor(1, 1, rng)));
  CHECK(v.cols() == 64);
  CHECK(m.cols() == 64);
  CHECK(eng.gate_and(tape, v, m).value() != eng.gate_and(tape, m, v).value());
  CHECK(eng.gate_or(tape, v, m).value() != eng.gate_or(tape, m, v).value());
  CHECK(eng.gate_not(tape, v).cols() == 64);
  CHECK(all_finite(eng.embed_state(tape, tape.constant(Tensor(1, 230))).value().data));
}

TEST_CASE("zero NOT weights give the identity") {
  Rng rng(5);
  logic::LogicEngine eng(small_config(), rng);
  for (Parameter* p : eng.not_parameters()) p->value = Tensor(p->value.rows, p->value.cols);
  ad::Tape tape;
  const Tensor x = random_tensor(4, 6, rng);
  CHECK(eng.gate_not(tape, tape.constant(x)).value() == x);
}

TEST_CASE("IMPLY is OR after NOT, bit for bit") {
  Rng rng(6);
  logic::LogicConfig cfg;
  logic::LogicEngine eng(cfg, rng);
  ad::Tape tape;
  ad::Var v = tape.constant(random_tensor(1000, 64, rng));
  ad::Var m = tape.constant(random_tensor(1000, 64, rng));
  const Tensor lhs = eng.gate_imply(tape, v, m).value();
  const Tensor rhs = eng.gate_or(tape, eng.gate_not(tape, v), m).value();
  CHECK(lhs == rhs);
}

TEST_CASE("similarity hits its closed-form values and bounds") {
  Rng rng(7);
  logic::LogicEngine eng(small_config(), rng);
  ad::Tape tape;
  const Tensor x = random_tensor(1, 6, rng);
  Tensor neg = x;
  for (double& e : neg.data) e = -e;
  Tensor a(1, 6), b(1, 6);
  a.data[0] = 2.0;
  b.data[3] = -1.5;
  CHECK(eng.sim(tape.constant(x), tape.constant(x)).item() == doctest::Approx(logistic(10.0)).epsilon(1e-14));
  CHECK(eng.sim(tape.constant(x), tape.constant(neg)).item() == doctest::Approx(logistic(-10.0)).epsilon(1e-12));
  CHECK(eng.sim(tape.constant(a), tape.constant(b)).item() == 0.5);
  CHECK(eng.sim_ceiling() == doctest::Approx(0.9999546));
  const Tensor s = eng.sim(tape.constant(random_tensor(200, 6, rng)), tape.constant(random_tensor(200, 6, rng))).value();
  for (double e : s.data) {
    CHECK(e >= eng.sim_floor());
    CHECK(e <= eng.sim_ceiling());
  }
  CHECK(eng.sim(tape.constant(Tensor(1, 6)), tape.constant(x)).item() == 0.5);
}

TEST_CASE("truth anchor is a unit vector outside the trainable set") {
  Rng rng(8);
  logic::LogicEngine eng(small_config(), rng);
  const Tensor before = eng.truth_anchor();
  double n2 = 0.0;
  for (double x : before.data) n2 += x * x;
  CHECK(n2 == doctest::Approx(1.0));
  for (const Parameter* p : eng.parameters()) CHECK(&p->value != &eng.truth_anchor());

  nn::Sgd opt(eng.parameters(), 0.1, 100.0);
  ad::Tape tape;
  auto reg = eng.regularizer_loss(tape, tape.constant(random_tensor(8, 6, rng)));
  tape.backward(reg.loss);
  opt.step();
  CHECK(eng.truth_anchor() == before);
  ad::Tape t2;
  CHECK_FALSE(eng.truth(t2).requires_grad());
}

TEST_CASE("regularizer residuals match a row-by-row oracle") {
  Rng rng(9);
  logic::LogicEngine eng(small_config(), rng);
  const Tensor W = random_tensor(5, 6, rng);
  ad::Tape tape;
  auto reg = eng.regularizer_loss(tape, tape.constant(W));

  // Independent evaluation: one sample at a time, Sim computed here.
  std::array<double, logic::kRuleCount> want{};
  ad::Tape ref;
  ad::Var T = ref.constant(eng.truth_anchor());
  ad::Var F = eng.gate_not(ref, T);
  auto S = [](const ad::Var& a, const ad::Var& b) { return logistic(10.0 * cosine(a.value().data, b.value().data)); };
  for (std::size_t r = 0; r < W.rows; ++r) {
    ad::Var w = ref.constant(Tensor(1, 6, std::vector<double>(W.row(r).begin(), W.row(r).end())));
    ad::Var nw = eng.gate_not(ref, w);
    want[0] += S(nw, w);
    want[1] += 1 - S(eng.gate_not(ref, nw), w);
    want[2] += 1 - S(eng.gate_and(ref, w, T), w);
    want[3] += 1 - S(eng.gate_and(ref, w, F), F);
    want[4] += 1 - S(eng.gate_and(ref, w, w), w);
    want[5] += 1 - S(eng.gate_and(ref, w, nw), F);
    want[6] += 1 - S(eng.gate_or(ref, w, F), w);
    want[7] += 1 - S(eng.gate_or(ref, w, T), T);
    want[8] += 1 - S(eng.gate_or(ref, w, w), w);
    want[9] += 1 - S(eng.gate_or(ref, w, nw), T);
    want[10] += 1 - S(eng.gate_or(ref, nw, T), T);
    want[11] += 1 - S(eng.gate_or(ref, nw, F), nw);
    want[12] += 1 - S(eng.gate_or(ref, nw, w), T);
    want[13] += 1 - S(eng.gate_or(ref, nw, nw), nw);
  }
  want[0] += S(F, T);
  want[0] /= static_cast<double>(W.rows + 1);
  for (std::size_t i = 1; i < logic::kRuleCount; ++i) want[i] /= static_cast<double>(W.rows);
  double mean = 0.0;
  for (std::size_t i = 0; i < logic::kRuleCount; ++i) {
    CHECK(reg.residuals[i] == doctest::Approx(want[i]).epsilon(1e-12));
    mean += want[i] / logic::kRuleCount;
  }
  CHECK(reg.loss.item() == doctest::Approx(mean).epsilon(1e-12));
  CHECK(logic::rule_names()[4] == "r5");
}

TEST_CASE("regularizer loss gradient matches finite differences") {
  Rng rng(10);
  logic::LogicEngine eng(small_config(), rng);
  dmwm::testing::jitter_biases(eng.parameters(), rng);
  auto f = [&](ad::Tape& tape, const std::vector<ad::Var>& in) { return eng.regularizer_loss(tape, in[0]).loss; };
  auto report = check_gradients(f, {random_tensor(3, 6, rng)}, eng.parameters());
  CHECK(report.worst() < kFdTol);
}

TEST_CASE("operand shuffling swaps AND inputs about half the time") {
  Rng rng(11);
  logic::LogicEngine eng(small_config(), rng);
  ad::Tape tape;
  ad::Var v = tape.constant(random_tensor(1, 6, rng));
  ad::Var m = tape.constant(random_tensor(1, 6, rng));
  const Tensor straight = eng.gate_and(tape, v, m).value();
  const Tensor swapped = eng.gate_and(tape, m, v).value();
  Rng shuffle(12);
  int n_swapped = 0;
  for (int i = 0; i < 2000; ++i) {
    const Tensor out = eng.gate_and(tape, v, m, nn::Grad::kFrozen, &shuffle).value();
    if (out == swapped) ++n_swapped;
    else CHECK(out == straight);
  }
  CHECK(std::abs(n_swapped - 1000) < 120);
}
