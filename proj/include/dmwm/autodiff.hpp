#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation applied to Vars. backward() walks the
// record in reverse and accumulates gradients into the trainable Parameters
// the tape was given. Nodes whose inputs are all constants carry no backward
// closure, so stop-gradient and frozen parameter groups receive exactly zero.

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmwm/tensor.hpp"

namespace dmwm {

// A named trainable array with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

namespace ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
  double item() const;  // requires a 1×1 value
  bool requires_grad() const;

  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf without gradient.
  Var constant(Tensor value);
  // Leaf whose gradient is readable via grad() after backward().
  Var variable(Tensor value);
  // Trainable parameter leaf; backward() adds into p.grad. One node per parameter per tape.
  Var param(Parameter& p);
  // Parameter used as a constant (frozen group).
  Var frozen(const Parameter& p);

  // Seeds d(loss)/d(loss) = 1 for a 1×1 loss and propagates.
  void backward(Var loss);
  // Gradient of a leaf created with variable(); zero tensor if it received none.
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

  // --- used by op implementations ---
  using Backward = std::function<void(Tape&, int self)>;
  Var push(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var push(Tensor value, const std::vector<Var>& inputs, Backward backward);
  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of node id (allocated on first access during backward).
  Tensor& grad_buffer(int id);
  const Tensor& grad_of_self(int id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  std::unordered_map<const Parameter*, int> frozen_nodes_;
};

// Elementwise binary ops broadcast b over rows (b is 1×n) or columns (b is B×1) or both (1×1).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);

Var matmul(Var x, Var w);
Var linear(Var x, Var w, Var b);  // x·w + b, b is 1×n

Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var stack_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var repeat_rows(Var a, std::size_t n);  // a is 1×c
// out row r = a row index[r]; repeated indices accumulate gradient.
Var gather_rows(Var a, std::vector<std::size_t> index);

Var sum(Var a);       // 1×1
Var mean(Var a);      // 1×1
Var sum_cols(Var a);  // B×1, sums each row

// max(a, floor) elementwise; zero gradient where a <= floor.
Var clamp_min(Var a, double floor);
Var stop_gradient(Var a);

// Per-row x·y / (max(‖x‖, ε) max(‖y‖, ε)) with ε = kCosineEps; b may be 1×d (broadcast).
inline constexpr double kCosineEps = 1e-8;
Var cosine_rows(Var a, Var b);

// Row-wise mean of Conv2D(v ⊗ m, K) where v ⊗ m is laid out as a d×d single-channel grid
// (grid[i][j] = v_i m_j), convolved with a 3×3 kernel K (1×9, row-major), stride 1 and zero
// padding 1. Output is B×d. Uses the separable closed form; see logic tests for the
// grid-materializing reference.
Var kron_conv_rowmean(Var v, Var m, Var kernel);

}  // namespace ad
}  // namespace dmwm
