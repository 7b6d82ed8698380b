#include "dmwm/rssm.hpp"

#include <cmath>
#include <numbers>

#include "dmwm/error.hpp"

namespace dmwm::rssm {

namespace {

void require_finite(const ad::Var& v, const char* what) {
  if (!all_finite(v.value())) throw NumericError(std::string(what) + " produced a non-finite value");
}

Tensor noise(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor eps(rows, cols);
  for (double& x : eps.data) x = rng.normal();
  return eps;
}

}  // namespace

ad::Var DiagGaussian::sample(Rng& rng) const {
  ad::Tape& tape = mean.tape();
  ad::Var eps = tape.constant(noise(mean.rows(), mean.cols(), rng));
  return ad::add(mean, ad::mul(stddev, eps));
}

ad::Var kl_divergence(const DiagGaussian& q, const DiagGaussian& p) {
  // Σ log(σp/σq) + (σq² + (μq − μp)²) / (2σp²) − ½
  ad::Var log_ratio = ad::sub(ad::log(p.stddev), ad::log(q.stddev));
  ad::Var num = ad::add(ad::square(q.stddev), ad::square(ad::sub(q.mean, p.mean)));
  ad::Var quad = ad::div(num, ad::scale(ad::square(p.stddev), 2.0));
  return ad::sum_cols(ad::add_scalar(ad::add(log_ratio, quad), -0.5));
}

ad::Var unit_gaussian_nll(ad::Var prediction, ad::Var target) {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  ad::Var sq = ad::scale(ad::square(ad::sub(prediction, target)), 0.5);
  return ad::sum_cols(ad::add_scalar(sq, half_log_2pi));
}

Rssm::Rssm(const RssmConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.obs_dim == 0 || cfg.action_dim == 0 || cfg.belief_size == 0 || cfg.state_size == 0 ||
      cfg.hidden_size == 0 || cfg.embedding_size == 0 || !(cfg.min_std > 0.0)) {
    throw ConfigError("RssmConfig: all sizes and min_std must be positive");
  }
  const std::size_t hid = cfg.hidden_size;
  const std::size_t feat = cfg.belief_size + cfg.state_size;
  input_ = nn::Linear("rssm.input", cfg.state_size + cfg.action_dim, hid, rng);
  cell_ = nn::GruCell("rssm.gru", hid, cfg.belief_size, rng);
  encoder_ = nn::Mlp("rssm.encoder", {cfg.obs_dim, hid, hid, cfg.embedding_size}, rng);
  prior_ = nn::Mlp("rssm.prior", {cfg.belief_size, hid, 2 * cfg.state_size}, rng);
  posterior_ = nn::Mlp("rssm.posterior", {cfg.belief_size + cfg.embedding_size, hid, 2 * cfg.state_size}, rng);
  decoder_ = nn::Mlp("rssm.decoder", {feat, hid, hid, cfg.obs_dim}, rng);
  reward_ = nn::Mlp("rssm.reward", {feat, hid, hid, 1}, rng);
}

ModelState Rssm::initial_state(std::size_t batch) const {
  return ModelState{Tensor(batch, cfg_.belief_size), Tensor(batch, cfg_.state_size)};
}

StateVars Rssm::bind(ad::Tape& tape, const ModelState& s) const {
  return StateVars{tape.constant(s.h), tape.constant(s.z)};
}

ad::Var Rssm::deterministic_step(ad::Tape& tape, const StateVars& prev, ad::Var action, nn::Grad mode) {
  ad::Var x = ad::relu(input_(tape, ad::concat_cols({prev.z, action}), mode));
  ad::Var h = cell_(tape, x, prev.h, mode);
  require_finite(h, "deterministic_step");
  return h;
}

ad::Var Rssm::encode(ad::Tape& tape, ad::Var observation, nn::Grad mode) {
  ad::Var e = encoder_(tape, observation, mode);
  require_finite(e, "encode_obs");
  return e;
}

DiagGaussian Rssm::split_gaussian(ad::Var raw) const {
  const std::size_t n = cfg_.state_size;
  ad::Var mean = ad::slice_cols(raw, 0, n);
  ad::Var stddev = ad::add_scalar(ad::softplus(ad::slice_cols(raw, n, n)), cfg_.min_std);
  return DiagGaussian{mean, stddev};
}

DiagGaussian Rssm::prior(ad::Tape& tape, ad::Var h, nn::Grad mode) {
  ad::Var raw = prior_(tape, h, mode);
  require_finite(raw, "prior");
  return split_gaussian(raw);
}

DiagGaussian Rssm::posterior(ad::Tape& tape, ad::Var h, ad::Var embedding, nn::Grad mode) {
  ad::Var raw = posterior_(tape, ad::concat_cols({h, embedding}), mode);
  require_finite(raw, "posterior");
  return split_gaussian(raw);
}

ad::Var Rssm::decode(ad::Tape& tape, ad::Var h, ad::Var z, nn::Grad mode) {
  return decoder_(tape, ad::concat_cols({h, z}), mode);
}

ad::Var Rssm::predict_reward(ad::Tape& tape, ad::Var h, ad::Var z, nn::Grad mode) {
  return reward_(tape, ad::concat_cols({h, z}), mode);
}

ObserveResult Rssm::observe_sequence(ad::Tape& tape, const replay::SequenceBatch& batch, Rng& rng,
                                     nn::Grad mode) {
  if (batch.obs_dim != cfg_.obs_dim || batch.action_dim != cfg_.action_dim || batch.length == 0) {
    throw InputError("observe_sequence: batch does not match model dimensions");
  }
  const std::size_t B = batch.batch, L = batch.length;
  // Encode every observation in one pass; rows are t-major.
  std::vector<ad::Var> obs_rows;
  obs_rows.reserve(L);
  for (std::size_t t = 0; t < L; ++t) obs_rows.push_back(tape.constant(batch.observations_at(t)));
  ad::Var embeddings = encode(tape, ad::stack_rows(obs_rows), mode);

  ObserveResult out;
  StateVars prev = bind(tape, initial_state(B));
  std::vector<ad::Var> hs, post_raw_mean, post_raw_std;
  for (std::size_t t = 0; t < L; ++t) {
    if (t > 0) {
      Tensor keep = batch.first_mask_at(t);
      for (double& k : keep.data) k = 1.0 - k;
      ad::Var mask = tape.constant(std::move(keep));
      prev = StateVars{ad::mul(prev.h, mask), ad::mul(prev.z, mask)};
    }
    ad::Var action = tape.constant(batch.actions_at(t));
    ad::Var h = deterministic_step(tape, prev, action, mode);
    DiagGaussian post = posterior(tape, h, ad::slice_rows(embeddings, t * B, B), mode);
    ad::Var z = post.sample(rng);
    out.states.push_back(StateVars{h, z});
    out.posteriors.push_back(post);
    hs.push_back(h);
    post_raw_mean.push_back(post.mean);
    post_raw_std.push_back(post.stddev);
    prev = StateVars{h, z};
  }
  ad::Var h_all = ad::stack_rows(hs);
  out.priors = prior(tape, h_all, mode);
  out.posteriors_stacked = DiagGaussian{ad::stack_rows(post_raw_mean), ad::stack_rows(post_raw_std)};
  std::vector<ad::Var> zs;
  for (const StateVars& s : out.states) zs.push_back(s.z);
  out.features = ad::concat_cols({h_all, ad::stack_rows(zs)});
  return out;
}

S1Loss Rssm::s1_loss(ad::Tape& tape, const replay::SequenceBatch& batch, Rng& rng, nn::Grad mode) {
  S1Loss loss;
  loss.observed = observe_sequence(tape, batch, rng, mode);
  const ObserveResult& ob = loss.observed;
  const std::size_t L = batch.length;

  std::vector<ad::Var> obs_rows, rew_rows;
  for (std::size_t t = 0; t < L; ++t) {
    obs_rows.push_back(tape.constant(batch.observations_at(t)));
    rew_rows.push_back(tape.constant(batch.rewards_at(t)));
  }
  ad::Var obs_pred = decoder_(tape, ob.features, mode);
  ad::Var rew_pred = reward_(tape, ob.features, mode);
  ad::Var pred = ad::mean(ad::add(unit_gaussian_nll(obs_pred, ad::stack_rows(obs_rows)),
                                  unit_gaussian_nll(rew_pred, ad::stack_rows(rew_rows))));

  const DiagGaussian& q = ob.posteriors_stacked;
  const DiagGaussian& p = ob.priors;
  const DiagGaussian q_sg{ad::stop_gradient(q.mean), ad::stop_gradient(q.stddev)};
  const DiagGaussian p_sg{ad::stop_gradient(p.mean), ad::stop_gradient(p.stddev)};
  ad::Var kl_dyn = ad::mean(kl_divergence(q_sg, p));
  ad::Var kl_rep = ad::mean(kl_divergence(q, p_sg));
  ad::Var dyn = ad::clamp_min(kl_dyn, cfg_.free_nats);
  ad::Var rep = ad::clamp_min(kl_rep, cfg_.free_nats);

  loss.pred_term = pred;
  loss.dyn_term = dyn;
  loss.rep_term = rep;
  loss.total = ad::add(pred, ad::add(ad::scale(dyn, cfg_.dyn_weight), ad::scale(rep, cfg_.rep_weight)));
  require_finite(loss.total, "s1_loss");
  loss.pred = pred.item();
  loss.dyn = dyn.item();
  loss.rep = rep.item();
  loss.kl = kl_dyn.item();
  return loss;
}

ImaginedTrajectory Rssm::imagine(ad::Tape& tape, const StateVars& start, const Policy& policy,
                                 std::size_t horizon, Rng& rng, nn::Grad mode, bool sample) {
  if (horizon < 1) throw InputError("imagine: horizon must be at least 1");
  ImaginedTrajectory traj;
  traj.states.push_back(start);
  StateVars s = start;
  for (std::size_t tau = 0; tau < horizon; ++tau) {
    ad::Var a = policy(tape, s.feature());
    ad::Var h = deterministic_step(tape, s, a, mode);
    DiagGaussian p = prior(tape, h, mode);
    ad::Var z = sample ? p.sample(rng) : p.mean;
    s = StateVars{h, z};
    traj.actions.push_back(a);
    traj.states.push_back(s);
    traj.rewards.push_back(predict_reward(tape, h, z, mode));
  }
  return traj;
}

ModelState Rssm::filter_step(const ModelState& prev, const Tensor& prev_action, const Tensor& observation,
                             Rng* rng) {
  ad::Tape tape;
  StateVars p = bind(tape, prev);
  ad::Var h = deterministic_step(tape, p, tape.constant(prev_action), nn::Grad::kFrozen);
  DiagGaussian post = posterior(tape, h, encode(tape, tape.constant(observation), nn::Grad::kFrozen),
                                nn::Grad::kFrozen);
  ad::Var z = rng != nullptr ? post.sample(*rng) : post.mean;
  return ModelState{h.value(), z.value()};
}

nn::ParamList Rssm::recurrent_parameters() {
  nn::ParamList out = input_.parameters();
  nn::append(out, cell_.parameters());
  return out;
}

nn::ParamList Rssm::parameters() {
  nn::ParamList out = recurrent_parameters();
  nn::append(out, encoder_.parameters());
  nn::append(out, prior_.parameters());
  nn::append(out, posterior_.parameters());
  nn::append(out, decoder_.parameters());
  nn::append(out, reward_.parameters());
  return out;
}

}  // namespace dmwm::rssm
