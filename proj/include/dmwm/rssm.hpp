#pragma once

// Recurrent state-space world model (System 1).
//
//   h_t = f(h_{t-1}, z_{t-1}, a_{t-1})       deterministic recurrent state
//   ẑ_t ~ p(ẑ_t | h_t)                       prior
//   z_t ~ q(z_t | h_t, e_t),  e_t = enc(o_t)  posterior
//   ô_t = dec(h_t, z_t),  r̂_t = rew(h_t, z_t)
//
// Standard deviations are softplus(raw) + min_std. Samples use z = μ + σ·ε.

#include <functional>
#include <vector>

#include "dmwm/autodiff.hpp"
#include "dmwm/nn.hpp"
#include "dmwm/replay.hpp"
#include "dmwm/rng.hpp"

namespace dmwm::rssm {

struct RssmConfig {
  std::size_t obs_dim = 3;
  std::size_t action_dim = 1;
  std::size_t belief_size = 200;
  std::size_t state_size = 30;
  std::size_t hidden_size = 200;
  std::size_t embedding_size = 1024;
  double min_std = 0.1;
  double free_nats = 3.0;
  double dyn_weight = 1.0;
  double rep_weight = 1.0;
};

// Batch of model states (rows are independent samples).
struct ModelState {
  Tensor h;  // B×belief
  Tensor z;  // B×state
  bool operator==(const ModelState&) const = default;
};

// Model state living on a tape.
struct StateVars {
  ad::Var h;
  ad::Var z;
  ad::Var feature() const { return ad::concat_cols({h, z}); }
};

struct DiagGaussian {
  ad::Var mean;
  ad::Var stddev;
  // Reparameterized sample μ + σ·ε with ε drawn from rng.
  ad::Var sample(Rng& rng) const;
};

// Per-row KL(q ‖ p) between diagonal Gaussians, returned as B×1.
ad::Var kl_divergence(const DiagGaussian& q, const DiagGaussian& p);

// ½e² + ½ln(2π) summed over columns, per row (B×1).
ad::Var unit_gaussian_nll(ad::Var prediction, ad::Var target);

struct ObserveResult {
  std::vector<StateVars> states;          // length L, posterior samples
  std::vector<DiagGaussian> posteriors;   // length L
  DiagGaussian priors;                    // stacked over time: (L·B)×state, rows t-major
  DiagGaussian posteriors_stacked;        // same layout as priors
  ad::Var features;                       // (L·B)×(belief+state)
};

struct S1Loss {
  ad::Var total;
  ad::Var pred_term;
  ad::Var dyn_term;   // KL(sg(q) ‖ p), clamped
  ad::Var rep_term;   // KL(q ‖ sg(p)), clamped
  double pred = 0.0;
  double dyn = 0.0;   // after the free-nats clamp
  double rep = 0.0;   // after the free-nats clamp
  double kl = 0.0;    // mean KL before clamping
  ObserveResult observed;
};

// Action source for imagination: maps B×feature to B×action_dim.
using Policy = std::function<ad::Var(ad::Tape&, ad::Var feature)>;

struct ImaginedTrajectory {
  std::vector<StateVars> states;  // H + 1
  std::vector<ad::Var> actions;   // H
  std::vector<ad::Var> rewards;   // H, reward predicted at states[τ + 1]
};

class Rssm {
 public:
  Rssm(const RssmConfig& cfg, Rng& rng);
  Rssm(const Rssm&) = delete;
  Rssm& operator=(const Rssm&) = delete;

  const RssmConfig& config() const { return cfg_; }
  std::size_t feature_size() const { return cfg_.belief_size + cfg_.state_size; }

  ModelState initial_state(std::size_t batch = 1) const;
  StateVars bind(ad::Tape& tape, const ModelState& s) const;

  ad::Var deterministic_step(ad::Tape& tape, const StateVars& prev, ad::Var action,
                             nn::Grad mode = nn::Grad::kTrain);
  ad::Var encode(ad::Tape& tape, ad::Var observation, nn::Grad mode = nn::Grad::kTrain);
  DiagGaussian prior(ad::Tape& tape, ad::Var h, nn::Grad mode = nn::Grad::kTrain);
  DiagGaussian posterior(ad::Tape& tape, ad::Var h, ad::Var embedding, nn::Grad mode = nn::Grad::kTrain);
  ad::Var decode(ad::Tape& tape, ad::Var h, ad::Var z, nn::Grad mode = nn::Grad::kTrain);
  ad::Var predict_reward(ad::Tape& tape, ad::Var h, ad::Var z, nn::Grad mode = nn::Grad::kTrain);

  // Posterior filtering over a replay batch; rows reset to the initial state where is_first.
  ObserveResult observe_sequence(ad::Tape& tape, const replay::SequenceBatch& batch, Rng& rng,
                                 nn::Grad mode = nn::Grad::kTrain);

  // Prediction loss plus free-nats-clamped dynamics and representation KL terms.
  S1Loss s1_loss(ad::Tape& tape, const replay::SequenceBatch& batch, Rng& rng,
                 nn::Grad mode = nn::Grad::kTrain);

  // Rolls the prior forward H steps under `policy`. No observation is consumed.
  // sample=false follows prior means instead of samples.
  ImaginedTrajectory imagine(ad::Tape& tape, const StateVars& start, const Policy& policy,
                             std::size_t horizon, Rng& rng, nn::Grad mode = nn::Grad::kTrain,
                             bool sample = true);

  // One filtering step for acting in the real environment: returns the posterior state
  // after observing `observation` given the previous state and the action that preceded it.
  ModelState filter_step(const ModelState& prev, const Tensor& prev_action, const Tensor& observation,
                         Rng* rng);

  nn::ParamList parameters();
  nn::ParamList recurrent_parameters();
  nn::ParamList encoder_parameters() { return encoder_.parameters(); }
  nn::ParamList prior_parameters() { return prior_.parameters(); }
  nn::ParamList posterior_parameters() { return posterior_.parameters(); }
  nn::ParamList decoder_parameters() { return decoder_.parameters(); }
  nn::ParamList reward_parameters() { return reward_.parameters(); }

 private:
  DiagGaussian split_gaussian(ad::Var raw) const;

  RssmConfig cfg_;
  nn::Linear input_;  // [z, a] → hidden, ReLU
  nn::GruCell cell_;
  nn::Mlp encoder_;
  nn::Mlp prior_;
  nn::Mlp posterior_;
  nn::Mlp decoder_;
  nn::Mlp reward_;
};

}  // namespace dmwm::rssm
