#include "dmwm/reasoning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "dmwm/error.hpp"

namespace dmwm::reasoning {

namespace {

void require_trajectory(const Trajectories& traj) {
  if (traj.states.size() < 2) throw InputError("trajectory needs at least two states");
  if (traj.actions.size() + 1 != traj.states.size()) throw InputError("trajectory needs T−1 actions for T states");
  const std::size_t B = traj.states.front().rows;
  for (const Tensor& t : traj.states) {
    if (t.rows != B || !all_finite(t.data)) throw InputError("trajectory states must be finite with equal batch");
  }
  for (const Tensor& t : traj.actions) {
    if (t.rows != B || !all_finite(t.data)) throw InputError("trajectory actions must be finite with equal batch");
  }
}

std::vector<std::size_t> permutation(std::size_t n, Rng* rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  if (rng != nullptr) {
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng->below(i)]);
  }
  return p;
}

}  // namespace

Trajectories Trajectories::rows(std::size_t first, std::size_t count) const {
  auto cut = [&](const Tensor& t) {
    return Tensor(count, t.cols,
                  std::vector<double>(t.data.begin() + first * t.cols, t.data.begin() + (first + count) * t.cols));
  };
  Trajectories out;
  for (const Tensor& s : states) out.states.push_back(cut(s));
  for (const Tensor& a : actions) out.actions.push_back(cut(a));
  return out;
}

TrajectoryVars bind(ad::Tape& tape, const Trajectories& traj) {
  TrajectoryVars out;
  for (const Tensor& s : traj.states) out.states.push_back(tape.constant(s));
  for (const Tensor& a : traj.actions) out.actions.push_back(tape.constant(a));
  return out;
}

ad::Var compose_local(logic::LogicEngine& engine, ad::Tape& tape, ad::Var v, ad::Var m, nn::Grad mode,
                      Rng* shuffle) {
  return engine.gate_and(tape, v, m, mode, shuffle);
}

Embedded embed(logic::LogicEngine& engine, ad::Tape& tape, const TrajectoryVars& traj, nn::Grad mode,
               Rng* shuffle) {
  if (traj.states.size() < 2 || traj.actions.size() + 1 != traj.states.size()) {
    throw InputError("embed: trajectory needs T ≥ 2 states and T−1 actions");
  }
  const std::size_t T = traj.states.size(), B = traj.states.front().rows();
  // Batch all steps through the embedders at once, then split per step.
  ad::Var V = engine.embed_state(tape, ad::stack_rows(traj.states), mode);
  std::vector<ad::Var> ctx(traj.states.begin(), traj.states.end() - 1);
  ad::Var M = engine.embed_action(tape, ad::stack_rows(ctx), ad::stack_rows(traj.actions), mode);
  ad::Var C = compose_local(engine, tape, ad::slice_rows(V, 0, (T - 1) * B), M, mode, shuffle);
  Embedded e;
  for (std::size_t t = 0; t < T; ++t) e.v.push_back(ad::slice_rows(V, t * B, B));
  for (std::size_t t = 0; t + 1 < T; ++t) {
    e.m.push_back(ad::slice_rows(M, t * B, B));
    e.c.push_back(ad::slice_rows(C, t * B, B));
  }
  return e;
}

ad::Var implication_step(logic::LogicEngine& engine, ad::Tape& tape, const std::vector<ad::Var>& window,
                         ad::Var v_next, nn::Grad mode, Rng* shuffle) {
  if (window.empty()) throw InputError("implication_step: empty window");
  const std::vector<std::size_t> order = permutation(window.size(), shuffle);
  ad::Var acc = window[order[0]];
  for (std::size_t k = 1; k < order.size(); ++k) acc = engine.gate_and(tape, acc, window[order[k]], mode, shuffle);
  return engine.gate_imply(tape, acc, v_next, mode, shuffle);
}

ad::Var implications(logic::LogicEngine& engine, ad::Tape& tape, const Embedded& e, std::size_t alpha,
                     nn::Grad mode, Rng* shuffle) {
  const std::size_t steps = e.c.size();
  if (steps == 0 || e.v.size() != steps + 1) throw InputError("implications: malformed embedding");
  const std::size_t B = e.c.front().rows();
  ad::Var C = ad::stack_rows(e.c);
  std::vector<ad::Var> next(e.v.begin() + 1, e.v.end());
  ad::Var V_next = ad::stack_rows(next);

  // One window permutation per call; a truncated window keeps the relative order of its members.
  const std::size_t width = std::min(alpha, steps - 1) + 1;
  const std::vector<std::size_t> perm = permutation(width, shuffle);
  std::vector<std::vector<std::size_t>> order(width + 1);
  for (std::size_t len = 1; len <= width; ++len) {
    for (std::size_t p : perm) {
      if (p < len) order[len].push_back(p);
    }
  }
  auto member = [&](std::size_t t, std::size_t k) {
    const std::size_t start = t >= alpha ? t - alpha : 0;
    const std::size_t len = t - start + 1;
    return start + order[std::min(len, width)][k];
  };

  std::vector<std::size_t> idx(steps * B);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < B; ++b) idx[t * B + b] = member(t, 0) * B + b;
  }
  ad::Var acc = ad::gather_rows(C, idx);
  // Step k only touches windows longer than k, i.e. the t-major suffix t ≥ k.
  for (std::size_t k = 1; k < width; ++k) {
    const std::size_t first = k * B, count = (steps - k) * B;
    std::vector<std::size_t> rhs(count);
    for (std::size_t t = k; t < steps; ++t) {
      for (std::size_t b = 0; b < B; ++b) rhs[(t - k) * B + b] = member(t, k) * B + b;
    }
    ad::Var folded = engine.gate_and(tape, ad::slice_rows(acc, first, count), ad::gather_rows(C, std::move(rhs)),
                                     mode, shuffle);
    acc = ad::stack_rows({ad::slice_rows(acc, 0, first), folded});
  }
  return engine.gate_imply(tape, acc, V_next, mode, shuffle);
}

ad::Var global_chain(logic::LogicEngine& engine, ad::Tape& tape, const std::vector<ad::Var>& phis, nn::Grad mode,
                     Rng* shuffle) {
  if (phis.empty()) throw InputError("global_chain: no implications");
  ad::Var acc = phis.front();
  for (std::size_t i = 1; i < phis.size(); ++i) acc = engine.gate_and(tape, acc, phis[i], mode, shuffle);
  return engine.gate_imply(tape, acc, ad::repeat_rows(engine.truth(tape), acc.rows()), mode, shuffle);
}

S2Loss s2_loss(logic::LogicEngine& engine, ad::Tape& tape, const TrajectoryVars& traj, const S2LossConfig& cfg,
               nn::Grad mode, Rng* rng) {
  const Embedded e = embed(engine, tape, traj, mode, rng);
  const std::size_t steps = e.c.size(), B = e.c.front().rows();
  ad::Var T = engine.truth(tape);
  ad::Var F = engine.falsity(tape, mode);

  std::vector<ad::Var> per_depth;
  ad::Var deepest;
  for (std::size_t alpha = 0; alpha <= cfg.max_depth; ++alpha) {
    ad::Var phi = implications(engine, tape, e, alpha, mode, rng);
    per_depth.push_back(ad::mean(ad::sub(engine.sim(phi, F), engine.sim(phi, T))));
    deepest = phi;
  }
  ad::Var logic_term = ad::sum(ad::concat_cols(per_depth));

  ad::Var V = ad::stack_rows(e.v);
  ad::Var M = ad::stack_rows(e.m);
  ad::Var W = ad::stack_rows({V, M});
  if (cfg.reg_samples > 0 && cfg.reg_samples < W.rows()) {
    std::vector<std::size_t> pick(W.rows());
    std::iota(pick.begin(), pick.end(), 0);
    if (rng != nullptr) {
      for (std::size_t i = 0; i < cfg.reg_samples; ++i) std::swap(pick[i], pick[i + rng->below(pick.size() - i)]);
    }
    pick.resize(cfg.reg_samples);
    W = ad::gather_rows(W, std::move(pick));
  }
  logic::RegularizerResult reg = engine.regularizer_loss(tape, W, mode, rng);

  std::vector<ad::Var> l2_parts{ad::sum(ad::square(V)), ad::sum(ad::square(M))};
  for (Parameter* p : engine.parameters()) l2_parts.push_back(ad::sum(ad::square(nn::bind(tape, *p, mode))));
  ad::Var l2 = ad::sum(ad::concat_cols(l2_parts));

  S2Loss out;
  out.total = ad::add(logic_term, ad::add(ad::scale(reg.loss, cfg.reg_weight), ad::scale(l2, cfg.l2_weight)));
  if (!all_finite(out.total.value())) throw NumericError("s2_loss produced a non-finite value");
  out.logic = logic_term.item();
  out.reg = reg.loss.item();
  out.l2 = l2.item();
  out.residuals = reg.residuals;
  {
    // Diagnostic only: global chain at the deepest level, kept off the gradient path.
    std::vector<ad::Var> phis;
    ad::Var fixed = ad::stop_gradient(deepest);
    for (std::size_t t = 0; t < steps; ++t) phis.push_back(ad::slice_rows(fixed, t * B, B));
    ad::Var chain = global_chain(engine, tape, phis, nn::Grad::kFrozen, nullptr);
    out.chain_consistency = ad::mean(engine.sim(chain, T)).item();
  }
  return out;
}

std::vector<double> consistency_per_episode(logic::LogicEngine& engine, const Trajectories& traj,
                                            std::size_t alpha) {
  require_trajectory(traj);
  ad::Tape tape;
  const Embedded e = embed(engine, tape, bind(tape, traj), nn::Grad::kFrozen);
  ad::Var phi = implications(engine, tape, e, alpha, nn::Grad::kFrozen);
  const Tensor& s = engine.sim(phi, engine.truth(tape)).value();
  const std::size_t B = traj.batch(), steps = traj.length() - 1;
  std::vector<double> means(B, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < B; ++b) means[b] += s.data[t * B + b];
  }
  for (double& m : means) m /= static_cast<double>(steps);
  return means;
}

ConsistencyReport logical_consistency(logic::LogicEngine& engine, const Trajectories& traj, std::size_t alpha) {
  const std::vector<double> means = consistency_per_episode(engine, traj, alpha);
  ConsistencyReport r;
  r.horizon = traj.length() - 1;
  r.depth = alpha;
  r.episodes = means.size();
  r.mean = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
  double var = 0.0;
  for (double m : means) var += (m - r.mean) * (m - r.mean);
  r.stddev = std::sqrt(var / static_cast<double>(means.size()));
  return r;
}

Tensor logic_heatmap(logic::LogicEngine& engine, const Trajectories& traj) {
  require_trajectory(traj);
  const std::size_t n = traj.length() - 1, B = traj.batch();
  ad::Tape tape;
  const Embedded e = embed(engine, tape, bind(tape, traj), nn::Grad::kFrozen);
  ad::Var V = ad::stack_rows(std::vector<ad::Var>(e.v.begin(), e.v.end() - 1));
  ad::Var M = ad::stack_rows(e.m);
  std::vector<std::size_t> vi, mj;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t b = 0; b < B; ++b) {
        vi.push_back(i * B + b);
        mj.push_back(j * B + b);
      }
    }
  }
  std::vector<std::size_t> target(n * n * B);
  for (std::size_t k = 0; k < target.size(); ++k) target[k] = k % B;
  ad::Var pair = engine.gate_and(tape, ad::gather_rows(V, std::move(vi)), ad::gather_rows(M, std::move(mj)),
                                 nn::Grad::kFrozen);
  ad::Var phi = engine.gate_imply(tape, pair, ad::gather_rows(e.v.back(), std::move(target)), nn::Grad::kFrozen);
  const Tensor& s = engine.sim(phi, engine.truth(tape)).value();
  Tensor out(n, n);
  for (std::size_t k = 0; k < n * n; ++k) {
    double acc = 0.0;
    for (std::size_t b = 0; b < B; ++b) acc += s.data[k * B + b];
    out.data[k] = acc / static_cast<double>(B);
  }
  return out;
}

void write_consistency_csv(std::ostream& out, const std::string& env, const std::vector<ConsistencyReport>& rows) {
  out << "env,horizon,depth,mean,std,episodes\n";
  out.precision(17);
  for (const ConsistencyReport& r : rows) {
    out << env << ',' << r.horizon << ',' << r.depth << ',' << r.mean << ',' << r.stddev << ',' << r.episodes << '\n';
  }
}

void write_matrix_csv(std::ostream& out, const Tensor& m) {
  out.precision(17);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) out << (j ? "," : "") << m(i, j);
    out << '\n';
  }
}

}  // namespace dmwm::reasoning
