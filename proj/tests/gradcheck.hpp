#pragma once

// Central finite-difference oracle for the autodiff layer. Test-only; it
// re-evaluates the forward pass with perturbed inputs and never consults the
// tape's backward closures.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dmwm/autodiff.hpp"
#include "dmwm/nn.hpp"
#include "dmwm/rng.hpp"

namespace dmwm::testing {

inline constexpr double kFdEps = 1e-5;
inline constexpr double kFdTol = 1e-4;

// ‖a − b‖ / max(‖a‖, ‖b‖), or 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

inline Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (double& x : t.data) x = scale * rng.normal();
  return t;
}

// Scalar objective over input tensors (each bound as a tape leaf).
using Objective = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

struct GradReport {
  std::vector<double> input_errors;  // one per input tensor
  std::vector<double> param_errors;  // one per parameter
  double worst() const {
    double w = 0.0;
    for (double e : input_errors) w = std::max(w, e);
    for (double e : param_errors) w = std::max(w, e);
    return w;
  }
};

inline double evaluate(const Objective& f, const std::vector<Tensor>& inputs) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  return f(tape, vars).item();
}

// Compares tape gradients against central differences for every input and
// every parameter in `params` (which the objective must bind via tape.param).
// When `numeric` is given, differences are taken of it instead of `f`; this
// lets objectives containing stop-gradients be checked against the function
// whose full derivative they are meant to reproduce.
inline GradReport check_gradients(const Objective& f, std::vector<Tensor> inputs,
                                  const nn::ParamList& params = {}, double eps = kFdEps,
                                  const Objective* numeric = nullptr) {
  const Objective& g = numeric != nullptr ? *numeric : f;
  GradReport report;
  nn::zero_grads(params);
  std::vector<Tensor> analytic_inputs;
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
    ad::Var loss = f(tape, vars);
    tape.backward(loss);
    for (const ad::Var& v : vars) analytic_inputs.push_back(tape.grad(v));
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> numeric(inputs[k].size());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k].data[i];
      inputs[k].data[i] = orig + eps;
      const double fp = evaluate(g, inputs);
      inputs[k].data[i] = orig - eps;
      const double fm = evaluate(g, inputs);
      inputs[k].data[i] = orig;
      numeric[i] = (fp - fm) / (2.0 * eps);
    }
    report.input_errors.push_back(relative_error(analytic_inputs[k].data, numeric));
  }
  for (Parameter* p : params) {
    const std::vector<double> analytic = p->grad.data;
    std::vector<double> numeric(p->value.size());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value.data[i];
      p->value.data[i] = orig + eps;
      const double fp = evaluate(g, inputs);
      p->value.data[i] = orig - eps;
      const double fm = evaluate(g, inputs);
      p->value.data[i] = orig;
      numeric[i] = (fp - fm) / (2.0 * eps);
    }
    report.param_errors.push_back(relative_error(analytic, numeric));
  }
  nn::zero_grads(params);
  return report;
}

// Zero-initialized biases can leave a ReLU input exactly at its kink when a
// whole hidden row is inactive; small random offsets keep the checks away from it.
inline void jitter_biases(const nn::ParamList& params, Rng& rng, double scale = 0.1) {
  for (Parameter* p : params) {
    if (p->value.rows != 1) continue;
    for (double& x : p->value.data) x += scale * rng.normal();
  }
}

// Projects an arbitrary-shaped output onto a fixed random direction so vector
// outputs can be checked through a scalar objective.
inline ad::Var project(ad::Var out, std::uint64_t seed = 99) {
  Rng rng(seed);
  Tensor w(out.rows(), out.cols());
  for (double& x : w.data) x = rng.normal();
  return ad::sum(ad::mul(out, out.tape().constant(std::move(w))));
}

}  // namespace dmwm::testing
