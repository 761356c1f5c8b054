#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

// Dense tensors with reverse-mode automatic differentiation on a
// define-by-run tape. Big enough for MLPs and ELBO graphs, nothing more.

namespace dgmkit {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

// Lightweight handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A differentiable input (parameter) node.
  Var leaf(Shape shape, std::vector<double> values);
  // A node gradients are never read from (data, noise, one-hot labels).
  Var constant(Shape shape, std::vector<double> values);

  const Shape& shape(Var v) const;
  const std::vector<double>& val(Var v) const;
  const std::vector<double>& grad(Var v) const;

  // Reverse pass from a scalar loss. All grad slots of nodes reachable
  // from the loss are populated; the rest stay zero. Calling twice on
  // the same tape is an error.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Internal node-building API used by the op free functions.
  Var make(Shape shape, std::vector<double> values,
           std::function<void(Tape&, std::size_t)> backprop);
  std::vector<double>& grad_mut(std::size_t id) { return nodes_[id].grad; }
  const std::vector<double>& val_of(std::size_t id) const {
    return nodes_[id].val;
  }
  const Shape& shape_of(std::size_t id) const { return nodes_[id].shape; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;
    // Accumulates into the grads of this node's inputs. Null for leaves.
    std::function<void(Tape&, std::size_t)> backprop;
  };
  std::vector<Node> nodes_;
  bool backward_run_ = false;
};

// Probability floor applied before log() so Bernoulli terms with
// dynamically binarized data never produce NaN/Inf.
inline constexpr double kLogFloor = 1e-10;

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var exp(Var a);
Var log(Var a);  // input floored at kLogFloor
Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var m);
Var add_bias(Var m, Var bias);   // [R x C] + [C], broadcast over rows
Var row_sum(Var m);              // [R x C] -> [R]
Var sum(Var a);                  // any shape -> scalar
Var mean(Var a);                 // any shape -> scalar
Var concat_cols(Var a, Var b);   // [R x C1], [R x C2] -> [R x (C1+C2)]

inline Var square(Var a) { return mul(a, a); }

}  // namespace dgmkit
