#include "dgmkit/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace dgmkit {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

void check_same_shape(const Tape& t, Var a, Var b, const char* op) {
  if (t.shape(a) != t.shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(t.shape(a)) + " vs " +
                                shape_str(t.shape(b)));
  }
}

void check_same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape) {
    throw std::invalid_argument(std::string(op) +
                                ": operands on different tapes");
  }
}

}  // namespace

Var Tape::leaf(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw std::invalid_argument("leaf: " + shape_str(shape) + " needs " +
                                std::to_string(numel(shape)) + " values, got " +
                                std::to_string(values.size()));
  }
  Node n;
  n.shape = std::move(shape);
  n.val = std::move(values);
  n.grad.assign(n.val.size(), 0.0);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Shape shape, std::vector<double> values) {
  return leaf(std::move(shape), std::move(values));
}

Var Tape::make(Shape shape, std::vector<double> values,
               std::function<void(Tape&, std::size_t)> backprop) {
  Node n;
  n.shape = std::move(shape);
  n.val = std::move(values);
  n.grad.assign(n.val.size(), 0.0);
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

const Shape& Tape::shape(Var v) const { return nodes_.at(v.id).shape; }
const std::vector<double>& Tape::val(Var v) const { return nodes_.at(v.id).val; }
const std::vector<double>& Tape::grad(Var v) const {
  return nodes_.at(v.id).grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) {
    throw std::invalid_argument("backward: loss is not on this tape");
  }
  if (backward_run_) {
    throw std::logic_error("backward: already run on this tape");
  }
  Node& top = nodes_.at(loss.id);
  if (numel(top.shape) != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(top.shape));
  }
  backward_run_ = true;
  top.grad[0] = 1.0;
  // Nodes are appended in topological order, so the reverse of creation
  // order visits every node after all its consumers.
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (nodes_[i].backprop) nodes_[i].backprop(*this, i);
  }
}

// ---------------------------------------------------------------------------
// Primitive ops

Var matmul(Var a, Var b) {
  check_same_tape(a, b, "matmul");
  Tape& t = *a.tape;
  const Shape& sa = t.shape(a);
  const Shape& sb = t.shape(b);
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_str(sa) + " vs " + shape_str(sb));
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  const auto& va = t.val(a);
  const auto& vb = t.val(b);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = va[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &vb[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  const std::size_t ia = a.id, ib = b.id;
  return t.make({m, n}, std::move(out), [ia, ib, m, k, n](Tape& tp,
                                                          std::size_t self) {
    const auto& g = tp.grad_mut(self);
    const auto& va = tp.val_of(ia);
    const auto& vb = tp.val_of(ib);
    auto& ga = tp.grad_mut(ia);
    auto& gb = tp.grad_mut(ib);
    // dA += G B^T
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        double acc = 0.0;
        const double* grow = &g[i * n];
        const double* brow = &vb[p * n];
        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
        ga[i * k + p] += acc;
      }
    }
    // dB += A^T G
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t i = 0; i < m; ++i) {
        const double aip = va[i * k + p];
        if (aip == 0.0) continue;
        const double* grow = &g[i * n];
        double* brow = &gb[p * n];
        for (std::size_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
      }
    }
  });
}

namespace {

// Shared builder for same-shape binary elementwise ops.
template <typename Fwd, typename Bwd>
Var binary_elementwise(Var a, Var b, const char* name, Fwd fwd, Bwd bwd) {
  check_same_tape(a, b, name);
  Tape& t = *a.tape;
  check_same_shape(t, a, b, name);
  const auto& va = t.val(a);
  const auto& vb = t.val(b);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = fwd(va[i], vb[i]);
  const std::size_t ia = a.id, ib = b.id;
  return t.make(t.shape(a), std::move(out),
                [ia, ib, bwd](Tape& tp, std::size_t self) {
                  const auto& g = tp.grad_mut(self);
                  const auto& va = tp.val_of(ia);
                  const auto& vb = tp.val_of(ib);
                  auto& ga = tp.grad_mut(ia);
                  auto& gb = tp.grad_mut(ib);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    auto [da, db] = bwd(va[i], vb[i]);
                    ga[i] += g[i] * da;
                    gb[i] += g[i] * db;
                  }
                });
}

template <typename Fwd, typename Bwd>
Var unary_elementwise(Var a, Fwd fwd, Bwd bwd) {
  Tape& t = *a.tape;
  const auto& va = t.val(a);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = fwd(va[i]);
  const std::size_t ia = a.id;
  return t.make(t.shape(a), std::move(out),
                [ia, bwd](Tape& tp, std::size_t self) {
                  const auto& g = tp.grad_mut(self);
                  const auto& va = tp.val_of(ia);
                  const auto& vo = tp.val_of(self);
                  auto& ga = tp.grad_mut(ia);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * bwd(va[i], vo[i]);
                  }
                });
}

}  // namespace

Var add(Var a, Var b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

Var sub(Var a, Var b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

Var mul(Var a, Var b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair<double, double>{y, x}; });
}

Var neg(Var a) {
  return unary_elementwise(
      a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(Var a, double c) {
  return unary_elementwise(
      a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary_elementwise(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var exp(Var a) {
  return unary_elementwise(
      a, [](double x) { return std::exp(x); },
      [](double, double out) { return out; });
}

Var log(Var a) {
  return unary_elementwise(
      a, [](double x) { return std::log(x < kLogFloor ? kLogFloor : x); },
      [](double x, double) { return x < kLogFloor ? 0.0 : 1.0 / x; });
}

Var relu(Var a) {
  return unary_elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  return unary_elementwise(
      a, [](double x) { return std::tanh(x); },
      [](double, double out) { return 1.0 - out * out; });
}

Var sigmoid(Var a) {
  return unary_elementwise(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double out) { return out * (1.0 - out); });
}

Var softmax_rows(Var m) {
  Tape& t = *m.tape;
  const Shape& s = t.shape(m);
  if (s.size() != 2) {
    throw std::invalid_argument("softmax_rows: expected matrix, got " +
                                shape_str(s));
  }
  const std::size_t rows = s[0], cols = s[1];
  const auto& v = t.val(m);
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &v[r * cols];
    double* o = &out[r * cols];
    double mx = in[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  const std::size_t im = m.id;
  return t.make(s, std::move(out),
                [im, rows, cols](Tape& tp, std::size_t self) {
                  const auto& g = tp.grad_mut(self);
                  const auto& so = tp.val_of(self);
                  auto& gm = tp.grad_mut(im);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* gr = &g[r * cols];
                    const double* sr = &so[r * cols];
                    double dot = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * sr[c];
                    for (std::size_t c = 0; c < cols; ++c) {
                      gm[r * cols + c] += sr[c] * (gr[c] - dot);
                    }
                  }
                });
}

Var add_bias(Var m, Var bias) {
  check_same_tape(m, bias, "add_bias");
  Tape& t = *m.tape;
  const Shape& sm = t.shape(m);
  const Shape& sb = t.shape(bias);
  if (sm.size() != 2 || numel(sb) != sm[1]) {
    throw std::invalid_argument("add_bias: incompatible shapes " +
                                shape_str(sm) + " vs " + shape_str(sb));
  }
  const std::size_t rows = sm[0], cols = sm[1];
  const auto& vm = t.val(m);
  const auto& vb = t.val(bias);
  std::vector<double> out(vm.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = vm[r * cols + c] + vb[c];
    }
  }
  const std::size_t im = m.id, ib = bias.id;
  return t.make(sm, std::move(out),
                [im, ib, rows, cols](Tape& tp, std::size_t self) {
                  const auto& g = tp.grad_mut(self);
                  auto& gm = tp.grad_mut(im);
                  auto& gb = tp.grad_mut(ib);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                      gm[r * cols + c] += g[r * cols + c];
                      gb[c] += g[r * cols + c];
                    }
                  }
                });
}

Var row_sum(Var m) {
  Tape& t = *m.tape;
  const Shape& s = t.shape(m);
  if (s.size() != 2) {
    throw std::invalid_argument("row_sum: expected matrix, got " +
                                shape_str(s));
  }
  const std::size_t rows = s[0], cols = s[1];
  const auto& v = t.val(m);
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r] += v[r * cols + c];
  }
  const std::size_t im = m.id;
  return t.make({rows}, std::move(out),
                [im, rows, cols](Tape& tp, std::size_t self) {
                  const auto& g = tp.grad_mut(self);
                  auto& gm = tp.grad_mut(im);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                      gm[r * cols + c] += g[r];
                    }
                  }
                });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  const auto& v = t.val(a);
  double acc = 0.0;
  for (double x : v) acc += x;
  const std::size_t ia = a.id;
  return t.make({1}, {acc}, [ia](Tape& tp, std::size_t self) {
    const double g = tp.grad_mut(self)[0];
    auto& ga = tp.grad_mut(ia);
    for (double& x : ga) x += g;
  });
}

Var mean(Var a) {
  Tape& t = *a.tape;
  const auto& v = t.val(a);
  if (v.empty()) throw std::invalid_argument("mean: empty tensor");
  double acc = 0.0;
  for (double x : v) acc += x;
  const double n = static_cast<double>(v.size());
  const std::size_t ia = a.id;
  return t.make({1}, {acc / n}, [ia, n](Tape& tp, std::size_t self) {
    const double g = tp.grad_mut(self)[0] / n;
    auto& ga = tp.grad_mut(ia);
    for (double& x : ga) x += g;
  });
}

Var concat_cols(Var a, Var b) {
  check_same_tape(a, b, "concat_cols");
  Tape& t = *a.tape;
  const Shape& sa = t.shape(a);
  const Shape& sb = t.shape(b);
  if (sa.size() != 2 || sb.size() != 2 || sa[0] != sb[0]) {
    throw std::invalid_argument("concat_cols: incompatible shapes " +
                                shape_str(sa) + " vs " + shape_str(sb));
  }
  const std::size_t rows = sa[0], ca = sa[1], cb = sb[1];
  const auto& va = t.val(a);
  const auto& vb = t.val(b);
  std::vector<double> out(rows * (ca + cb));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < ca; ++c) out[r * (ca + cb) + c] = va[r * ca + c];
    for (std::size_t c = 0; c < cb; ++c) {
      out[r * (ca + cb) + ca + c] = vb[r * cb + c];
    }
  }
  const std::size_t ia = a.id, ib = b.id;
  return t.make({rows, ca + cb}, std::move(out),
                [ia, ib, rows, ca, cb](Tape& tp, std::size_t self) {
                  const auto& g = tp.grad_mut(self);
                  auto& ga = tp.grad_mut(ia);
                  auto& gb = tp.grad_mut(ib);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < ca; ++c) {
                      ga[r * ca + c] += g[r * (ca + cb) + c];
                    }
                    for (std::size_t c = 0; c < cb; ++c) {
                      gb[r * cb + c] += g[r * (ca + cb) + ca + c];
                    }
                  }
                });
}

}  // namespace dgmkit
