#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmwm/autodiff.hpp"
#include "dmwm/rng.hpp"

namespace dmwm::nn {

// Whether a parameter group enters a tape as trainable leaves or as constants.
enum class Grad { kTrain, kFrozen };

inline ad::Var bind(ad::Tape& tape, Parameter& p, Grad mode) {
  return mode == Grad::kTrain ? tape.param(p) : tape.frozen(p);
}

using ParamList = std::vector<Parameter*>;

void append(ParamList& dst, const ParamList& src);
void zero_grads(const ParamList& params);
double grad_norm(const ParamList& params);
// Rescales gradients so the global L2 norm is at most max_norm. Returns the pre-clip norm.
double clip_grad_norm(const ParamList& params, double max_norm);
std::size_t count_values(const ParamList& params);
double squared_norm(const ParamList& params);

// Fully connected layer y = x W + b with W stored in×out.
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);

  ad::Var operator()(ad::Tape& tape, ad::Var x, Grad mode = Grad::kTrain);
  ParamList parameters() { return {&w_, &b_}; }
  std::size_t in() const { return w_.value.rows; }
  std::size_t out() const { return w_.value.cols; }

  Parameter& weight() { return w_; }
  Parameter& bias() { return b_; }

 private:
  Parameter w_;
  Parameter b_;
};

// Stack of Linear layers with ReLU between them (none after the last).
class Mlp {
 public:
  Mlp() = default;
  // sizes = {in, hidden..., out}
  Mlp(const std::string& name, const std::vector<std::size_t>& sizes, Rng& rng, double last_gain = 1.0,
      double hidden_gain = 1.0);

  ad::Var operator()(ad::Tape& tape, ad::Var x, Grad mode = Grad::kTrain);
  ParamList parameters();
  std::size_t in() const { return layers_.front().in(); }
  std::size_t out() const { return layers_.back().out(); }
  std::size_t depth() const { return layers_.size(); }
  Linear& layer(std::size_t i) { return layers_[i]; }

 private:
  std::vector<Linear> layers_;
};

// Gated recurrent cell: r, u gates and a reset-gated candidate;
// h' = u ⊙ c + (1 − u) ⊙ h.
class GruCell {
 public:
  GruCell() = default;
  GruCell(const std::string& name, std::size_t input, std::size_t hidden, Rng& rng);

  ad::Var operator()(ad::Tape& tape, ad::Var x, ad::Var h, Grad mode = Grad::kTrain);
  ParamList parameters() { return {&wx_, &bx_, &wh_, &bh_}; }
  std::size_t hidden() const { return wh_.value.rows; }

 private:
  Parameter wx_, bx_, wh_, bh_;
};

// Adam with global-norm clipping.
class Adam {
 public:
  Adam() = default;
  Adam(ParamList params, double lr, double eps, double clip_norm, double beta1 = 0.9, double beta2 = 0.999);

  // Clips, applies one update, zeroes gradients.
  void step();

  double lr() const { return lr_; }
  std::int64_t steps() const { return t_; }
  const ParamList& params() const { return params_; }

  // Moment buffers for checkpointing, in parameter order: m_0, v_0, m_1, v_1, ...
  std::vector<Tensor*> state_tensors();
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  ParamList params_;
  std::vector<Tensor> m_, v_;
  double lr_ = 1e-3, eps_ = 1e-8, clip_ = 0.0, b1_ = 0.9, b2_ = 0.999;
  std::int64_t t_ = 0;
};

// Plain stochastic gradient descent with global-norm clipping.
class Sgd {
 public:
  Sgd() = default;
  Sgd(ParamList params, double lr, double clip_norm);
  void step();
  double lr() const { return lr_; }

 private:
  ParamList params_;
  double lr_ = 1e-2, clip_ = 0.0;
};

}  // namespace dmwm::nn
