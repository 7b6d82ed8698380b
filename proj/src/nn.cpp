#include "dmwm/nn.hpp"

#include <cmath>

#include "dmwm/error.hpp"

namespace dmwm::nn {

void append(ParamList& dst, const ParamList& src) { dst.insert(dst.end(), src.begin(), src.end()); }

void zero_grads(const ParamList& params) {
  for (Parameter* p : params) p->zero_grad();
}

double grad_norm(const ParamList& params) {
  double s = 0.0;
  for (const Parameter* p : params) {
    for (double g : p->grad.data) s += g * g;
  }
  return std::sqrt(s);
}

double clip_grad_norm(const ParamList& params, double max_norm) {
  const double norm = grad_norm(params);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Parameter* p : params) {
      for (double& g : p->grad.data) g *= s;
    }
  }
  return norm;
}

std::size_t count_values(const ParamList& params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += p->value.size();
  return n;
}

double squared_norm(const ParamList& params) {
  double s = 0.0;
  for (const Parameter* p : params) {
    for (double x : p->value.data) s += x * x;
  }
  return s;
}

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, double gain)
    : w_(name + ".w", Tensor(in, out)), b_(name + ".b", Tensor(1, out)) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(in + out));
  for (double& x : w_.value.data) x = rng.uniform(-limit, limit);
}

ad::Var Linear::operator()(ad::Tape& tape, ad::Var x, Grad mode) {
  return ad::linear(x, bind(tape, w_, mode), bind(tape, b_, mode));
}

Mlp::Mlp(const std::string& name, const std::vector<std::size_t>& sizes, Rng& rng, double last_gain,
         double hidden_gain) {
  if (sizes.size() < 2) throw ConfigError("Mlp " + name + ": needs at least input and output sizes");
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const bool last = i + 2 == sizes.size();
    layers_.emplace_back(name + "." + std::to_string(i), sizes[i], sizes[i + 1], rng, last ? last_gain : hidden_gain);
  }
}

ad::Var Mlp::operator()(ad::Tape& tape, ad::Var x, Grad mode) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i](tape, x, mode);
    if (i + 1 < layers_.size()) x = ad::relu(x);
  }
  return x;
}

ParamList Mlp::parameters() {
  ParamList out;
  for (Linear& l : layers_) append(out, l.parameters());
  return out;
}

GruCell::GruCell(const std::string& name, std::size_t input, std::size_t hidden, Rng& rng)
    : wx_(name + ".wx", Tensor(input, 3 * hidden)),
      bx_(name + ".bx", Tensor(1, 3 * hidden)),
      wh_(name + ".wh", Tensor(hidden, 3 * hidden)),
      bh_(name + ".bh", Tensor(1, 3 * hidden)) {
  const double lx = std::sqrt(6.0 / static_cast<double>(input + hidden));
  const double lh = std::sqrt(6.0 / static_cast<double>(2 * hidden));
  for (double& x : wx_.value.data) x = rng.uniform(-lx, lx);
  for (double& x : wh_.value.data) x = rng.uniform(-lh, lh);
}

ad::Var GruCell::operator()(ad::Tape& tape, ad::Var x, ad::Var h, Grad mode) {
  const std::size_t n = hidden();
  ad::Var gx = ad::linear(x, bind(tape, wx_, mode), bind(tape, bx_, mode));
  ad::Var gh = ad::linear(h, bind(tape, wh_, mode), bind(tape, bh_, mode));
  ad::Var r = ad::sigmoid(ad::add(ad::slice_cols(gx, 0, n), ad::slice_cols(gh, 0, n)));
  ad::Var u = ad::sigmoid(ad::add(ad::slice_cols(gx, n, n), ad::slice_cols(gh, n, n)));
  ad::Var c = ad::tanh(ad::add(ad::slice_cols(gx, 2 * n, n), ad::mul(r, ad::slice_cols(gh, 2 * n, n))));
  // h' = h + u ⊙ (c − h)
  return ad::add(h, ad::mul(u, ad::sub(c, h)));
}

Adam::Adam(ParamList params, double lr, double eps, double clip_norm, double beta1, double beta2)
    : params_(std::move(params)), lr_(lr), eps_(eps), clip_(clip_norm), b1_(beta1), b2_(beta2) {
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.rows, p->value.cols);
    v_.emplace_back(p->value.rows, p->value.cols);
  }
}

void Adam::step() {
  clip_grad_norm(params_, clip_);
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    double* m = m_[k].data.data();
    double* v = v_[k].data.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data[i];
      m[i] = b1_ * m[i] + (1.0 - b1_) * g;
      v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
      p.value.data[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
    p.zero_grad();
  }
}

std::vector<Tensor*> Adam::state_tensors() {
  std::vector<Tensor*> out;
  for (std::size_t k = 0; k < m_.size(); ++k) {
    out.push_back(&m_[k]);
    out.push_back(&v_[k]);
  }
  return out;
}

Sgd::Sgd(ParamList params, double lr, double clip_norm) : params_(std::move(params)), lr_(lr), clip_(clip_norm) {}

void Sgd::step() {
  clip_grad_norm(params_, clip_);
  for (Parameter* p : params_) {
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value.data[i] -= lr_ * p->grad.data[i];
    p->zero_grad();
  }
}

}  // namespace dmwm::nn
