#pragma once

// Hierarchical reasoning over latent trajectories:
//
//   c_t      = v_t ∧ m_t
//   φ^α_t    = (c_{t−α} ∧ … ∧ c_t) → v_{t+1}     window truncated to c_0 when t < α
//   L^α_T    = (φ^α_0 ∧ … ∧ φ^α_{T−2}) → T
//
// Trajectories are batched: B independent sequences advance in lockstep and
// every per-step quantity is a B×d row block. Stacked quantities are t-major
// (row t·B + b).

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "dmwm/logic.hpp"

namespace dmwm::reasoning {

// B trajectories of T states and the T−1 actions taken between them.
struct Trajectories {
  std::vector<Tensor> states;   // T entries, each B×latent
  std::vector<Tensor> actions;  // T−1 entries, each B×action

  std::size_t batch() const { return states.empty() ? 0 : states.front().rows; }
  std::size_t length() const { return states.size(); }
  // Rows [first, first + count) of every step.
  Trajectories rows(std::size_t first, std::size_t count) const;
};

struct TrajectoryVars {
  std::vector<ad::Var> states;
  std::vector<ad::Var> actions;
};

TrajectoryVars bind(ad::Tape& tape, const Trajectories& traj);

struct Embedded {
  std::vector<ad::Var> v;  // T
  std::vector<ad::Var> m;  // T−1
  std::vector<ad::Var> c;  // T−1
};

// c_t = gate_and(v_t, m_t).
ad::Var compose_local(logic::LogicEngine& engine, ad::Tape& tape, ad::Var v, ad::Var m,
                      nn::Grad mode = nn::Grad::kTrain, Rng* shuffle = nullptr);

Embedded embed(logic::LogicEngine& engine, ad::Tape& tape, const TrajectoryVars& traj,
               nn::Grad mode = nn::Grad::kTrain, Rng* shuffle = nullptr);

// Folds `window` left to right with AND (in a random order when shuffling) and implies v_next.
ad::Var implication_step(logic::LogicEngine& engine, ad::Tape& tape, const std::vector<ad::Var>& window,
                         ad::Var v_next, nn::Grad mode = nn::Grad::kTrain, Rng* shuffle = nullptr);

// φ^α_t for every t in one pass, stacked t-major: ((T−1)·B)×d. Row blocks equal
// implication_step over the truncated windows exactly when shuffling is off.
ad::Var implications(logic::LogicEngine& engine, ad::Tape& tape, const Embedded& e, std::size_t alpha,
                     nn::Grad mode = nn::Grad::kTrain, Rng* shuffle = nullptr);

// L^α_T from per-step implications (each B×d).
ad::Var global_chain(logic::LogicEngine& engine, ad::Tape& tape, const std::vector<ad::Var>& phis,
                     nn::Grad mode = nn::Grad::kTrain, Rng* shuffle = nullptr);

struct S2LossConfig {
  std::size_t max_depth = 30;      // Λ
  double reg_weight = 1.0;         // β_reg
  double l2_weight = 1e-5;         // β_ℓ2
  std::size_t reg_samples = 0;     // rows of W drawn for the regularizer; 0 uses every v and m
};

struct S2Loss {
  ad::Var total;
  double logic = 0.0;  // Σ_α L^α_log
  double reg = 0.0;
  double l2 = 0.0;
  double chain_consistency = 0.0;  // mean Sim(L^Λ_T, T), diagnostic only
  std::array<double, logic::kRuleCount> residuals{};
};

// L_S2 = Σ_{α=0}^{Λ} (1/(T−1)) Σ_t [Sim(φ^α_t, F) − Sim(φ^α_t, T)] + β_reg L_reg + β_ℓ2 L_ℓ2.
// `rng` drives operand shuffling and regularizer subsampling; null disables both.
S2Loss s2_loss(logic::LogicEngine& engine, ad::Tape& tape, const TrajectoryVars& traj, const S2LossConfig& cfg,
               nn::Grad mode = nn::Grad::kTrain, Rng* rng = nullptr);

struct ConsistencyReport {
  std::size_t horizon = 0;
  std::size_t depth = 0;
  double mean = 0.0;
  double stddev = 0.0;  // across per-episode means
  std::size_t episodes = 0;
};

// Mean over steps of Sim(φ^α_t, T) per trajectory, summarized across trajectories.
ConsistencyReport logical_consistency(logic::LogicEngine& engine, const Trajectories& traj, std::size_t alpha);

// Per-trajectory step means of Sim(φ^α_t, T).
std::vector<double> consistency_per_episode(logic::LogicEngine& engine, const Trajectories& traj,
                                            std::size_t alpha);

// M[i][j] = Sim(IMPLY(AND(v_i, m_j), v_n), T) for a trajectory of n + 1 states,
// averaged over the batch. Returns n×n.
Tensor logic_heatmap(logic::LogicEngine& engine, const Trajectories& traj);

void write_consistency_csv(std::ostream& out, const std::string& env, const std::vector<ConsistencyReport>& rows);
void write_matrix_csv(std::ostream& out, const Tensor& m);

}  // namespace dmwm::reasoning
