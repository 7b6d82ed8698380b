#include "dmwm/logic.hpp"

#include <cmath>

#include "dmwm/error.hpp"

namespace dmwm::logic {

namespace {

std::vector<std::size_t> mlp_sizes(std::size_t in, std::size_t d, std::size_t layers) {
  std::vector<std::size_t> sizes{in};
  for (std::size_t i = 0; i < layers; ++i) sizes.push_back(d);
  return sizes;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require_finite(const ad::Var& v, const char* what) {
  if (!all_finite(v.value())) throw NumericError(std::string(what) + " produced a non-finite value");
}

}  // namespace

const std::array<std::string, kRuleCount>& rule_names() {
  static const std::array<std::string, kRuleCount> names = [] {
    std::array<std::string, kRuleCount> n;
    for (std::size_t i = 0; i < kRuleCount; ++i) n[i] = "r" + std::to_string(i + 1);
    return n;
  }();
  return names;
}

BinaryGate::BinaryGate(const std::string& name, std::size_t d, std::size_t layers, Rng& rng, double gain)
    : mlp_(name + ".mlp", mlp_sizes(2 * d, d, layers), rng, gain, std::sqrt(2.0)),
      kernel_(name + ".kernel", Tensor(1, 9)),
      bias_(name + ".bias_k", Tensor(1, d)) {
  for (double& k : kernel_.value.data) k = rng.uniform(-1.0 / 3.0, 1.0 / 3.0);
}

ad::Var BinaryGate::operator()(ad::Tape& tape, ad::Var v, ad::Var m, nn::Grad mode) {
  ad::Var mlp_branch = mlp_(tape, ad::concat_cols({v, m}), mode);
  ad::Var conv_branch = ad::kron_conv_rowmean(v, m, nn::bind(tape, kernel_, mode));
  return ad::add(ad::add(mlp_branch, conv_branch), nn::bind(tape, bias_, mode));
}

nn::ParamList BinaryGate::parameters() {
  nn::ParamList out = mlp_.parameters();
  out.push_back(&kernel_);
  out.push_back(&bias_);
  return out;
}

LogicEngine::LogicEngine(const LogicConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.latent_dim == 0 || cfg.action_dim == 0 || cfg.logic_dim == 0 || cfg.mlp_layers == 0 ||
      !(cfg.kappa > 0.0)) {
    throw ConfigError("LogicConfig: sizes, layer count and kappa must be positive");
  }
  const std::size_t d = cfg.logic_dim;
  state_embed_ = nn::Mlp("s2.embed_state", mlp_sizes(cfg.latent_dim, d, cfg.mlp_layers), rng);
  action_embed_ = nn::Mlp("s2.embed_action", mlp_sizes(cfg.latent_dim + cfg.action_dim, d, cfg.mlp_layers), rng);
  and_ = BinaryGate("s2.and", d, cfg.mlp_layers, rng, cfg.gate_gain);
  or_ = BinaryGate("s2.or", d, cfg.mlp_layers, rng, cfg.gate_gain);
  not_ = nn::Mlp("s2.not", mlp_sizes(d, d, cfg.mlp_layers), rng, cfg.not_gain);
  // Uniform on the unit sphere.
  truth_ = Tensor(1, d);
  double norm2 = 0.0;
  while (norm2 < 1e-12) {
    norm2 = 0.0;
    for (double& x : truth_.data) {
      x = rng.normal();
      norm2 += x * x;
    }
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : truth_.data) x *= inv;
}

void LogicEngine::set_truth_anchor(const Tensor& t) {
  if (t.rows != 1 || t.cols != cfg_.logic_dim || !all_finite(t.data)) {
    throw InputError("set_truth_anchor: expected a finite 1×d vector");
  }
  truth_ = t;
}

ad::Var LogicEngine::embed_state(ad::Tape& tape, ad::Var s, nn::Grad mode) {
  ad::Var v = state_embed_(tape, s, mode);
  require_finite(v, "embed_state");
  return v;
}

ad::Var LogicEngine::embed_action(ad::Tape& tape, ad::Var s, ad::Var a, nn::Grad mode) {
  ad::Var m = action_embed_(tape, ad::concat_cols({s, a}), mode);
  require_finite(m, "embed_action");
  return m;
}

ad::Var LogicEngine::gate_and(ad::Tape& tape, ad::Var v, ad::Var m, nn::Grad mode, Rng* shuffle) {
  if (shuffle != nullptr && shuffle->uniform() < 0.5) std::swap(v, m);
  ad::Var out = and_(tape, v, m, mode);
  require_finite(out, "gate_and");
  return out;
}

ad::Var LogicEngine::gate_or(ad::Tape& tape, ad::Var v, ad::Var m, nn::Grad mode, Rng* shuffle) {
  if (shuffle != nullptr && shuffle->uniform() < 0.5) std::swap(v, m);
  ad::Var out = or_(tape, v, m, mode);
  require_finite(out, "gate_or");
  return out;
}

ad::Var LogicEngine::gate_not(ad::Tape& tape, ad::Var v, nn::Grad mode) {
  ad::Var out = ad::add(v, not_(tape, v, mode));
  require_finite(out, "gate_not");
  return out;
}

ad::Var LogicEngine::gate_imply(ad::Tape& tape, ad::Var v, ad::Var m, nn::Grad mode, Rng* shuffle) {
  return gate_or(tape, gate_not(tape, v, mode), m, mode, shuffle);
}

ad::Var LogicEngine::sim(ad::Var v, ad::Var m) const {
  return ad::sigmoid(ad::scale(ad::cosine_rows(v, m), cfg_.kappa));
}

double LogicEngine::sim_floor() const { return logistic(-cfg_.kappa); }
double LogicEngine::sim_ceiling() const { return logistic(cfg_.kappa); }

RegularizerResult LogicEngine::regularizer_loss(ad::Tape& tape, ad::Var samples, nn::Grad mode, Rng* shuffle) {
  if (samples.rows() == 0 || samples.cols() != cfg_.logic_dim) {
    throw InputError("regularizer_loss: sample set must be a nonempty n×d matrix");
  }
  ad::Var T1 = truth(tape);
  ad::Var w = samples;
  const std::size_t n = w.rows();
  ad::Var T = ad::repeat_rows(T1, n);
  // NOT over W ∪ {T}; the last row is F.
  ad::Var nwt = gate_not(tape, ad::stack_rows({w, T1}), mode);
  ad::Var nw = ad::slice_rows(nwt, 0, n);
  ad::Var F = ad::repeat_rows(ad::slice_rows(nwt, n, 1), n);

  auto gap = [&](ad::Var x, ad::Var y) { return ad::add_scalar(ad::neg(ad::mean(sim(x, y))), 1.0); };
  auto AND = [&](ad::Var x, ad::Var y) { return gate_and(tape, x, y, mode, shuffle); };
  auto OR = [&](ad::Var x, ad::Var y) { return gate_or(tape, x, y, mode, shuffle); };

  std::array<ad::Var, kRuleCount> r = {
      ad::mean(sim(nwt, ad::stack_rows({w, T1}))),  // r1  NOT w ≠ w over W ∪ {T}
      gap(gate_not(tape, nw, mode), w),     // r2  NOT NOT w = w
      gap(AND(w, T), w),                    // r3  w ∧ T = w
      gap(AND(w, F), F),                    // r4  w ∧ F = F
      gap(AND(w, w), w),                    // r5  w ∧ w = w
      gap(AND(w, nw), F),                   // r6  w ∧ ¬w = F
      gap(OR(w, F), w),                     // r7  w ∨ F = w
      gap(OR(w, T), T),                     // r8  w ∨ T = T
      gap(OR(w, w), w),                     // r9  w ∨ w = w
      gap(OR(w, nw), T),                    // r10 w ∨ ¬w = T
      gap(OR(nw, T), T),                    // r11 ¬w ∨ T = T
      gap(OR(nw, F), nw),                   // r12 ¬w ∨ F = ¬w
      gap(OR(nw, w), T),                    // r13 ¬w ∨ w = T
      gap(OR(nw, nw), nw),                  // r14 ¬w ∨ ¬w = ¬w
  };
  RegularizerResult out;
  std::vector<ad::Var> parts(r.begin(), r.end());
  for (std::size_t i = 0; i < kRuleCount; ++i) out.residuals[i] = r[i].item();
  out.loss = ad::scale(ad::sum(ad::concat_cols(parts)), 1.0 / static_cast<double>(kRuleCount));
  return out;
}

nn::ParamList LogicEngine::embedder_parameters() {
  nn::ParamList out = state_embed_.parameters();
  nn::append(out, action_embed_.parameters());
  return out;
}

nn::ParamList LogicEngine::parameters() {
  nn::ParamList out = embedder_parameters();
  nn::append(out, and_.parameters());
  nn::append(out, or_.parameters());
  nn::append(out, not_.parameters());
  return out;
}

}  // namespace dmwm::logic
