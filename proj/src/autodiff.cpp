#include "dmwm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dmwm/error.hpp"
#include "dmwm/kernels.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dmwm {

namespace {

#if defined(__GLIBC__)
// Tape buffers are large and short-lived; keep them on the heap instead of
// round-tripping every one through mmap/munmap.
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
  return true;
}();
#endif

}  // namespace

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

namespace ad {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::item() const {
  const Tensor& v = value();
  if (v.rows != 1 || v.cols != 1) throw InputError("Var::item on a non-scalar value");
  return v.data[0];
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  nodes_.push_back(Node{p.value, {}, true, {}, &p});
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::frozen(const Parameter& p) {
  if (auto it = frozen_nodes_.find(&p); it != frozen_nodes_.end()) return Var(this, it->second);
  Var v = constant(p.value);
  frozen_nodes_.emplace(&p, v.id());
  return v;
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool rg = false;
  for (const Var& v : inputs) rg = rg || nodes_[v.id()].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, rg, rg ? std::move(backward) : Backward{}, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Tensor value, const std::vector<Var>& inputs, Backward backward) {
  bool rg = false;
  for (const Var& v : inputs) rg = rg || nodes_[v.id()].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, rg, rg ? std::move(backward) : Backward{}, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.rows, n.value.cols);
  return n.grad;
}

void Tape::backward(Var loss) {
  const Tensor& lv = value(loss.id());
  if (lv.rows != 1 || lv.cols != 1) throw InputError("Tape::backward: loss must be 1x1");
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id()).data[0] += 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      Tensor& pg = n.param->grad;
      if (pg.empty()) pg = Tensor(n.value.rows, n.value.cols);
      for (std::size_t i = 0; i < pg.size(); ++i) pg.data[i] += n.grad.data[i];
    }
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor(n.value.rows, n.value.cols);
  return n.grad;
}

namespace {

struct Broadcast {
  std::size_t rows, cols;
  bool row_b, col_b;
  std::size_t at(std::size_t r, std::size_t c) const {
    return (row_b ? 0 : r) * (col_b ? 1 : cols) + (col_b ? 0 : c);
  }
};

Broadcast check_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  const bool rows_ok = b.rows == a.rows || b.rows == 1;
  const bool cols_ok = b.cols == a.cols || b.cols == 1;
  if (!rows_ok || !cols_ok) {
    throw InputError(std::string(op) + ": shape mismatch " + std::to_string(a.rows) + "x" +
                     std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                     std::to_string(b.cols));
  }
  return Broadcast{a.rows, a.cols, b.rows == 1 && a.rows != 1, b.cols == 1 && a.cols != 1};
}

template <class Fwd, class DA, class DB>
Var binary(const char* name, Var a, Var b, Fwd fwd, DA da, DB db) {
  Tape& t = a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast bc = check_broadcast(name, av, bv);
  Tensor out(av.rows, av.cols);
  for (std::size_t r = 0; r < av.rows; ++r) {
    for (std::size_t c = 0; c < av.cols; ++c) {
      const std::size_t i = r * av.cols + c;
      out.data[i] = fwd(av.data[i], bv.data[bc.at(r, c)]);
    }
  }
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), {a, b}, [ia, ib, bc, da, db](Tape& tp, int self) {
    const Tensor& g = tp.grad_of_self(self);
    const Tensor& av = tp.value(ia);
    const Tensor& bv = tp.value(ib);
    const bool ga = tp.requires_grad(ia), gb = tp.requires_grad(ib);
    Tensor* gat = ga ? &tp.grad_buffer(ia) : nullptr;
    Tensor* gbt = gb ? &tp.grad_buffer(ib) : nullptr;
    for (std::size_t r = 0; r < bc.rows; ++r) {
      for (std::size_t c = 0; c < bc.cols; ++c) {
        const std::size_t i = r * bc.cols + c;
        const std::size_t j = bc.at(r, c);
        if (ga) gat->data[i] += g.data[i] * da(av.data[i], bv.data[j]);
        if (gb) gbt->data[j] += g.data[i] * db(av.data[i], bv.data[j]);
      }
    }
  });
}

template <class Fwd, class Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  // deriv(x, y) gives dy/dx from input x and output y.
  Tape& t = a.tape();
  const Tensor& av = a.value();
  Tensor out(av.rows, av.cols);
  for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = fwd(av.data[i]);
  const int ia = a.id();
  return t.push(std::move(out), {a}, [ia, deriv](Tape& tp, int self) {
    const Tensor& g = tp.grad_of_self(self);
    const Tensor& x = tp.value(ia);
    const Tensor& y = tp.value(self);
    Tensor& gx = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] * deriv(x.data[i], y.data[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var matmul(Var x, Var w) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.cols != wv.rows) {
    throw InputError("matmul: inner dimensions " + std::to_string(xv.cols) + " vs " +
                     std::to_string(wv.rows));
  }
  Tensor out(xv.rows, wv.cols);
  kernels::gemm_nn(xv.rows, wv.cols, xv.cols, xv.data.data(), wv.data.data(), out.data.data());
  const int ix = x.id(), iw = w.id();
  return x.tape().push(std::move(out), {x, w}, [ix, iw](Tape& tp, int self) {
    const Tensor& g = tp.grad_of_self(self);
    const Tensor& xv = tp.value(ix);
    const Tensor& wv = tp.value(iw);
    if (tp.requires_grad(ix)) {
      Tensor& gx = tp.grad_buffer(ix);
      kernels::gemm_nt(xv.rows, xv.cols, wv.cols, g.data.data(), wv.data.data(), gx.data.data());
    }
    if (tp.requires_grad(iw)) {
      Tensor& gw = tp.grad_buffer(iw);
      kernels::gemm_tn(wv.rows, wv.cols, xv.rows, xv.data.data(), g.data.data(), gw.data.data());
    }
  });
}

Var linear(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.cols != wv.rows || bv.rows != 1 || bv.cols != wv.cols) {
    throw InputError("linear: shape mismatch");
  }
  Tensor out(xv.rows, wv.cols);
  for (std::size_t r = 0; r < xv.rows; ++r) {
    std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + r * wv.cols);
  }
  kernels::gemm_nn(xv.rows, wv.cols, xv.cols, xv.data.data(), wv.data.data(), out.data.data());
  const int ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape().push(std::move(out), {x, w, b}, [ix, iw, ib](Tape& tp, int self) {
    const Tensor& g = tp.grad_of_self(self);
    const Tensor& xv = tp.value(ix);
    const Tensor& wv = tp.value(iw);
    if (tp.requires_grad(ix)) {
      Tensor& gx = tp.grad_buffer(ix);
      kernels::gemm_nt(xv.rows, xv.cols, wv.cols, g.data.data(), wv.data.data(), gx.data.data());
    }
    if (tp.requires_grad(iw)) {
      Tensor& gw = tp.grad_buffer(iw);
      kernels::gemm_tn(wv.rows, wv.cols, xv.rows, xv.data.data(), g.data.data(), gw.data.data());
    }
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad_buffer(ib);
      for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t c = 0; c < g.cols; ++c) gb.data[c] += g.data[r * g.cols + c];
      }
    }
  });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

namespace {
double sigmoid_fn(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Var a) {
  return unary(a, sigmoid_fn, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
               [](double x, double) { return sigmoid_fn(x); });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw InputError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw InputError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(v.data.begin() + r * v.cols, v.data.begin() + (r + 1) * v.cols,
                out.data.begin() + r * cols + off);
    }
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.cols;
  }
  return parts[0].tape().push(std::move(out), parts, [ids, offsets](Tape& tp, int self) {
    const Tensor& g = tp.grad_of_self(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad(ids[k])) continue;
      Tensor& gp = tp.grad_buffer(ids[k]);
      for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t c = 0; c < gp.cols; ++c) gp.data[r * gp.cols + c] += g.data[r * g.cols + offsets[k] + c];
      }
    }
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  if (start + count > av.cols) throw InputError("slice_cols: out of range");
  Tensor out(av.rows, count);
  for (std::size_t r = 0; r < av.rows; ++r) {
    std::copy(av.data.begin() + r * av.cols + start, av.data.begin() + r * av.cols + start + count,
              out.data.begin() + r * count);
  }
  const int ia = a.id();
  return a.tape().push(std::move(out), {a}, [ia, start](Tape& tp, int self) {
    const Tensor& g = tp.grad_of_self(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t r = 0; r < g.rows; ++r) {
      for (std::size_t c = 0; c < g.cols; ++c) ga.data[r * ga.cols + start + c] += g.data[r * g.cols + c];
    }
  });
}

Var stack_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw InputError("stack_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw InputError("stack_rows: column mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + off * cols);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.rows;
  }
  return parts[0].tape().push(std::move(out), parts, [ids, offsets](Tape& tp, int self) {
    const Tensor& g = tp.grad_of_self(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad(ids[k])) continue;
      Tensor& gp = tp.grad_buffer(ids[k]);
      const double* src = g.data.data() + offsets[k] * g.cols;
      for (std::size_t i = 0; i < gp.size(); ++i) gp.data[i] += src[i];
    }
  });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  if (start + count > av.rows) throw InputError("slice_rows: out of range");
  Tensor out(count, av.cols,
             std::vector<double>(av.data.begin() + start * av.cols,
                                 av.data.begin() + (start + count) * av.cols));
  const int ia = a.id();
  return a.tape().push(std::move(out), {a}, [ia, start](Tape& tp, int self) {
    const Tensor& g = tp.grad_of_self(self);
    Tensor& ga = tp.grad_buffer(ia);
    double* dst = ga.data.data() + start * ga.cols;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g.data[i];
  });
}

Var gather_rows(Var a, std::vector<std::size_t> index) {
  const Tensor& av = a.value();
  Tensor out(index.size(), av.cols);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= av.rows) throw InputError("gather_rows: index out of range");
    std::copy_n(av.data.begin() + index[r] * av.cols, av.cols, out.data.begin() + r * av.cols);
  }
  const int ia = a.id();
  return a.tape().push(std::move(out), {a}, [ia, index = std::move(index)](Tape& tp, int self) {
    const Tensor& g = tp.grad_of_self(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t r = 0; r < index.size(); ++r) {
      double* dst = ga.data.data() + index[r] * ga.cols;
      for (std::size_t c = 0; c < g.cols; ++c) dst[c] += g.data[r * g.cols + c];
    }
  });
}

Var repeat_rows(Var a, std::size_t n) {
  const Tensor& av = a.value();
  if (av.rows != 1) throw InputError("repeat_rows: expects a single row");
  Tensor out(n, av.cols);
  for (std::size_t r = 0; r < n; ++r) std::copy(av.data.begin(), av.data.end(), out.data.begin() + r * av.cols);
  const int ia = a.id();
  return a.tape().push(std::move(out), {a}, [ia](Tape& tp, int self) {
    const Tensor& g = tp.grad_of_self(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t r = 0; r < g.rows; ++r) {
      for (std::size_t c = 0; c < g.cols; ++c) ga.data[c] += g.data[r * g.cols + c];
    }
  });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double x : av.data) s += x;
  const int ia = a.id();
  return a.tape().push(Tensor(1, 1, s), {a}, [ia](Tape& tp, int self) {
    const double g = tp.grad_of_self(self).data[0];
    Tensor& ga = tp.grad_buffer(ia);
    for (double& x : ga.data) x += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw InputError("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_cols(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.rows, 1);
  for (std::size_t r = 0; r < av.rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < av.cols; ++c) s += av.data[r * av.cols + c];
    out.data[r] = s;
  }
  const int ia = a.id();
  return a.tape().push(std::move(out), {a}, [ia](Tape& tp, int self) {
    const Tensor& g = tp.grad_of_self(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t r = 0; r < ga.rows; ++r) {
      for (std::size_t c = 0; c < ga.cols; ++c) ga.data[r * ga.cols + c] += g.data[r];
    }
  });
}

Var clamp_min(Var a, double floor) {
  return unary(a, [floor](double x) { return x > floor ? x : floor; },
               [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Var stop_gradient(Var a) { return a.tape().constant(a.value()); }

Var cosine_rows(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols != bv.cols || !(bv.rows == av.rows || bv.rows == 1)) {
    throw InputError("cosine_rows: shape mismatch");
  }
  const bool bcast = bv.rows == 1 && av.rows != 1;
  const std::size_t d = av.cols;
  Tensor out(av.rows, 1);
  for (std::size_t r = 0; r < av.rows; ++r) {
    const double* x = av.data.data() + r * d;
    const double* y = bv.data.data() + (bcast ? 0 : r) * d;
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      xy += x[c] * y[c];
      xx += x[c] * x[c];
      yy += y[c] * y[c];
    }
    out.data[r] = xy / (std::max(std::sqrt(xx), kCosineEps) * std::max(std::sqrt(yy), kCosineEps));
  }
  const int ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {a, b}, [ia, ib, bcast, d](Tape& tp, int self) {
    const Tensor& g = tp.grad_of_self(self);
    const Tensor& av = tp.value(ia);
    const Tensor& bv = tp.value(ib);
    const Tensor& cosv = tp.value(self);
    const bool ga = tp.requires_grad(ia), gb = tp.requires_grad(ib);
    Tensor* gat = ga ? &tp.grad_buffer(ia) : nullptr;
    Tensor* gbt = gb ? &tp.grad_buffer(ib) : nullptr;
    for (std::size_t r = 0; r < av.rows; ++r) {
      const double* x = av.data.data() + r * d;
      const std::size_t yr = bcast ? 0 : r;
      const double* y = bv.data.data() + yr * d;
      double xx = 0.0, yy = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        xx += x[c] * x[c];
        yy += y[c] * y[c];
      }
      const double nx = std::max(std::sqrt(xx), kCosineEps), ny = std::max(std::sqrt(yy), kCosineEps);
      // A clamped norm is constant, so its radial term drops out.
      const double rx = std::sqrt(xx) > kCosineEps ? 1.0 / xx : 0.0;
      const double ry = std::sqrt(yy) > kCosineEps ? 1.0 / yy : 0.0;
      const double cs = cosv.data[r];
      const double gr = g.data[r];
      for (std::size_t c = 0; c < d; ++c) {
        if (ga) gat->data[r * d + c] += gr * (y[c] / (nx * ny) - cs * x[c] * rx);
        if (gb) gbt->data[yr * d + c] += gr * (x[c] / (nx * ny) - cs * y[c] * ry);
      }
    }
  });
}

Var kron_conv_rowmean(Var v, Var m, Var kernel) {
  const Tensor& vv = v.value();
  const Tensor& mv = m.value();
  const Tensor& kv = kernel.value();
  if (!vv.same_shape(mv) || kv.size() != 9) throw InputError("kron_conv_rowmean: shape mismatch");
  const std::size_t rows = vv.rows, d = vv.cols;
  const double inv_d = 1.0 / static_cast<double>(d);
  Tensor out(rows, d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = vv.data.data() + r * d;
    const double* y = mv.data.data() + r * d;
    double total = 0.0;
    for (std::size_t c = 0; c < d; ++c) total += y[c];
    // Column sums of the shifted operand: S_{-1}, S_0, S_{+1}.
    const double s[3] = {total - y[d - 1], total, total - y[0]};
    double w[3];
    for (int a = 0; a < 3; ++a) w[a] = kv.data[a * 3 + 0] * s[0] + kv.data[a * 3 + 1] * s[1] + kv.data[a * 3 + 2] * s[2];
    double* o = out.data.data() + r * d;
    for (std::size_t i = 0; i < d; ++i) {
      double acc = w[1] * x[i];
      if (i > 0) acc += w[0] * x[i - 1];
      if (i + 1 < d) acc += w[2] * x[i + 1];
      o[i] = acc * inv_d;
    }
  }
  const int iv = v.id(), im = m.id(), ik = kernel.id();
  return v.tape().push(std::move(out), {v, m, kernel}, [iv, im, ik, d, inv_d](Tape& tp, int self) {
    const Tensor& g = tp.grad_of_self(self);
    const Tensor& vv = tp.value(iv);
    const Tensor& mv = tp.value(im);
    const Tensor& kv = tp.value(ik);
    const bool gv = tp.requires_grad(iv), gm = tp.requires_grad(im), gk = tp.requires_grad(ik);
    Tensor* gvt = gv ? &tp.grad_buffer(iv) : nullptr;
    Tensor* gmt = gm ? &tp.grad_buffer(im) : nullptr;
    Tensor* gkt = gk ? &tp.grad_buffer(ik) : nullptr;
    for (std::size_t r = 0; r < vv.rows; ++r) {
      const double* x = vv.data.data() + r * d;
      const double* y = mv.data.data() + r * d;
      const double* gr = g.data.data() + r * d;
      double total = 0.0;
      for (std::size_t c = 0; c < d; ++c) total += y[c];
      const double s[3] = {total - y[d - 1], total, total - y[0]};
      double w[3];
      for (int a = 0; a < 3; ++a) w[a] = kv.data[a * 3 + 0] * s[0] + kv.data[a * 3 + 1] * s[1] + kv.data[a * 3 + 2] * s[2];
      // out_i = inv_d * (w0 x_{i-1} + w1 x_i + w2 x_{i+1})
      double dw[3] = {0.0, 0.0, 0.0};
      for (std::size_t i = 0; i < d; ++i) {
        const double gi = gr[i] * inv_d;
        dw[1] += gi * x[i];
        if (i > 0) dw[0] += gi * x[i - 1];
        if (i + 1 < d) dw[2] += gi * x[i + 1];
        if (gv) {
          double* gx = gvt->data.data() + r * d;
          gx[i] += gi * w[1];
          if (i > 0) gx[i - 1] += gi * w[0];
          if (i + 1 < d) gx[i + 1] += gi * w[2];
        }
      }
      if (gk) {
        for (int a = 0; a < 3; ++a) {
          for (int b = 0; b < 3; ++b) gkt->data[a * 3 + b] += dw[a] * s[b];
        }
      }
      if (gm) {
        double ds[3];
        for (int b = 0; b < 3; ++b) ds[b] = dw[0] * kv.data[0 * 3 + b] + dw[1] * kv.data[1 * 3 + b] + dw[2] * kv.data[2 * 3 + b];
        double* gy = gmt->data.data() + r * d;
        const double base = ds[0] + ds[1] + ds[2];
        for (std::size_t c = 0; c < d; ++c) gy[c] += base;
        gy[d - 1] -= ds[0];
        gy[0] -= ds[2];
      }
    }
  });
}

}  // namespace ad
}  // namespace dmwm
