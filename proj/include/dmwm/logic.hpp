#pragma once

// Logic-space engine (System 2): embedders into R^d, differentiable AND / OR /
// NOT gates, IMPLY = OR(NOT v, m), the sigmoid-cosine similarity and the truth
// anchors T (fixed) and F = NOT(T).
//
// All operations are batched: LogicVectors are rows of a B×d Var.

#include <array>
#include <string>
#include <vector>

#include "dmwm/autodiff.hpp"
#include "dmwm/nn.hpp"
#include "dmwm/rng.hpp"

namespace dmwm::logic {

struct LogicConfig {
  std::size_t latent_dim = 230;
  std::size_t action_dim = 1;
  std::size_t logic_dim = 64;
  std::size_t mlp_layers = 3;
  double kappa = 10.0;
  // Init gain of the NOT branch's output layer.
  double not_gain = 1.0;
  // Init gain of the AND / OR MLP output layers; their hidden layers use sqrt(2).
  double gate_gain = 0.05;
};

inline constexpr std::size_t kRuleCount = 14;

// "r1" … "r14".
const std::array<std::string, kRuleCount>& rule_names();

struct RegularizerResult {
  ad::Var loss;                               // mean of the 14 rule residuals
  std::array<double, kRuleCount> residuals{};  // r1 … r14
};

// AND / OR gate: MLP(v ⊕ m) + rowmean(Conv3×3(v ⊗ m)) + b_k.
class BinaryGate {
 public:
  BinaryGate() = default;
  BinaryGate(const std::string& name, std::size_t d, std::size_t layers, Rng& rng, double gain = 1.0);
  ad::Var operator()(ad::Tape& tape, ad::Var v, ad::Var m, nn::Grad mode);
  nn::ParamList parameters();
  nn::Mlp& mlp() { return mlp_; }
  Parameter& kernel() { return kernel_; }
  Parameter& bias() { return bias_; }

 private:
  nn::Mlp mlp_;
  Parameter kernel_;  // 1×9, row-major 3×3
  Parameter bias_;    // 1×d
};

class LogicEngine {
 public:
  LogicEngine(const LogicConfig& cfg, Rng& rng);
  LogicEngine(const LogicEngine&) = delete;
  LogicEngine& operator=(const LogicEngine&) = delete;

  const LogicConfig& config() const { return cfg_; }
  std::size_t dim() const { return cfg_.logic_dim; }

  ad::Var embed_state(ad::Tape& tape, ad::Var s, nn::Grad mode = nn::Grad::kTrain);
  ad::Var embed_action(ad::Tape& tape, ad::Var s, ad::Var a, nn::Grad mode = nn::Grad::kTrain);

  // With a non-null `shuffle`, the operands of each call are swapped with probability ½.
  ad::Var gate_and(ad::Tape& tape, ad::Var v, ad::Var m, nn::Grad mode = nn::Grad::kTrain,
                   Rng* shuffle = nullptr);
  ad::Var gate_or(ad::Tape& tape, ad::Var v, ad::Var m, nn::Grad mode = nn::Grad::kTrain,
                  Rng* shuffle = nullptr);
  ad::Var gate_not(ad::Tape& tape, ad::Var v, nn::Grad mode = nn::Grad::kTrain);
  ad::Var gate_imply(ad::Tape& tape, ad::Var v, ad::Var m, nn::Grad mode = nn::Grad::kTrain,
                     Rng* shuffle = nullptr);

  // σ(κ cos(v, m)) per row, B×1. m may be 1×d. A zero row has cosine 0.
  ad::Var sim(ad::Var v, ad::Var m) const;
  double sim_floor() const;
  double sim_ceiling() const;

  // T as a constant 1×d leaf; it never receives gradient.
  ad::Var truth(ad::Tape& tape) const { return tape.constant(truth_); }
  // F = NOT(T) under the current NOT weights.
  ad::Var falsity(ad::Tape& tape, nn::Grad mode = nn::Grad::kTrain) { return gate_not(tape, truth(tape), mode); }
  const Tensor& truth_anchor() const { return truth_; }
  void set_truth_anchor(const Tensor& t);

  // Logical-law residuals over the sample set W (rows); r1 also covers T.
  RegularizerResult regularizer_loss(ad::Tape& tape, ad::Var samples, nn::Grad mode = nn::Grad::kTrain,
                                     Rng* shuffle = nullptr);

  nn::ParamList parameters();
  nn::ParamList embedder_parameters();
  nn::ParamList not_parameters() { return not_.parameters(); }
  nn::ParamList and_parameters() { return and_.parameters(); }
  nn::ParamList or_parameters() { return or_.parameters(); }
  nn::Mlp& not_mlp() { return not_; }

 private:
  LogicConfig cfg_;
  nn::Mlp state_embed_;
  nn::Mlp action_embed_;
  BinaryGate and_;
  BinaryGate or_;
  nn::Mlp not_;
  Tensor truth_;
};

}  // namespace dmwm::logic
