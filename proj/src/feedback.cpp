#include "dmwm/feedback.hpp"

#include "dmwm/error.hpp"

namespace dmwm::feedback {

reasoning::Trajectories s1_to_s2_batch(const rssm::ObserveResult& observed, const replay::SequenceBatch& batch) {
  if (observed.states.size() != batch.length || batch.length < 2) {
    throw InputError("s1_to_s2_batch: need the posterior states of a sequence of length ≥ 2");
  }
  reasoning::Trajectories out;
  for (const rssm::StateVars& s : observed.states) out.states.push_back(s.feature().value());
  // Entry t + 1 holds the action taken between observations t and t + 1.
  for (std::size_t t = 0; t + 1 < batch.length; ++t) out.actions.push_back(batch.actions_at(t + 1));
  return out;
}

ad::Var logic_elbo_term(logic::LogicEngine& engine, ad::Tape& tape, ad::Var next, ad::Var prev, ad::Var action) {
  const nn::Grad frozen = nn::Grad::kFrozen;
  ad::Var v_prev = engine.embed_state(tape, prev, frozen);
  ad::Var m_prev = engine.embed_action(tape, prev, action, frozen);
  ad::Var v_next = engine.embed_state(tape, next, frozen);
  ad::Var phi = engine.gate_imply(tape, engine.gate_and(tape, v_prev, m_prev, frozen), v_next, frozen);
  return ad::log(engine.sim(phi, engine.truth(tape)));
}

GuidedLoss guided_s1_loss(rssm::Rssm& model, logic::LogicEngine& engine, ad::Tape& tape,
                          const replay::SequenceBatch& batch, Rng& rng, double logic_weight, nn::Grad mode) {
  if (!(logic_weight >= 0.0)) throw ConfigError("logic weight must be nonnegative");
  if (batch.length < 2) throw InputError("guided_s1_loss: sequences need at least two steps");
  GuidedLoss out;
  out.s1 = model.s1_loss(tape, batch, rng, mode);
  const std::size_t B = batch.batch, L = batch.length;
  ad::Var features = out.s1.observed.features;
  std::vector<ad::Var> actions;
  for (std::size_t t = 1; t < L; ++t) actions.push_back(tape.constant(batch.actions_at(t)));
  ad::Var term = ad::mean(logic_elbo_term(engine, tape, ad::slice_rows(features, B, (L - 1) * B),
                                          ad::slice_rows(features, 0, (L - 1) * B), ad::stack_rows(actions)));
  out.logic_elbo = term.item();
  out.total = ad::sub(out.s1.total, ad::scale(term, logic_weight));
  if (!all_finite(out.total.value())) throw NumericError("guided_s1_loss produced a non-finite value");
  return out;
}

}  // namespace dmwm::feedback
