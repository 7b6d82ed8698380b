#pragma once

// Coupling between the two systems. S1 posterior trajectories become constant
// supervision for S2; S2's logical consistency enters S1's objective as
// −λ · mean ln Sim(IMPLY(AND(v_{t−1}, m_{t−1}), v_t), T) with S2 frozen.

#include "dmwm/logic.hpp"
#include "dmwm/reasoning.hpp"
#include "dmwm/replay.hpp"
#include "dmwm/rssm.hpp"

namespace dmwm::feedback {

// Detached posterior features and the actions between them: L states and L−1
// actions per sequence, giving L−1 triples (s_t, a_t, s_{t+1}).
reasoning::Trajectories s1_to_s2_batch(const rssm::ObserveResult& observed, const replay::SequenceBatch& batch);

// ln Sim(IMPLY(AND(v_prev, m_prev), v_next), T) per row (B×1), with S2 frozen.
// Gradient flows only into the latent and action arguments.
ad::Var logic_elbo_term(logic::LogicEngine& engine, ad::Tape& tape, ad::Var next, ad::Var prev, ad::Var action);

struct GuidedLoss {
  rssm::S1Loss s1;
  ad::Var total;
  double logic_elbo = 0.0;  // mean of the per-step log terms
};

// L_S1 − λ · mean_{t,b} logic_elbo_term over consecutive posterior features.
GuidedLoss guided_s1_loss(rssm::Rssm& model, logic::LogicEngine& engine, ad::Tape& tape,
                          const replay::SequenceBatch& batch, Rng& rng, double logic_weight,
                          nn::Grad mode = nn::Grad::kTrain);

}  // namespace dmwm::feedback
