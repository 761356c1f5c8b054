#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dgmkit/tensor.hpp"

// Shared helpers for the test binaries: central finite differences
// against tape gradients, and small random-input generators.

namespace testutil {

using GraphBuilder = std::function<dgmkit::Var(
    dgmkit::Tape&, const std::vector<dgmkit::Var>&)>;

inline double eval_scalar(const std::vector<dgmkit::Shape>& shapes,
                          const std::vector<std::vector<double>>& values,
                          const GraphBuilder& build) {
  dgmkit::Tape tape;
  std::vector<dgmkit::Var> leaves;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    leaves.push_back(tape.leaf(shapes[i], values[i]));
  }
  return tape.val(build(tape, leaves))[0];
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central differences with step h on every coordinate of every leaf.
// Relative error uses max(|a|, |n|, floor) in the denominator so tiny
// gradients compare on an absolute scale.
inline GradCheckResult check_gradients(
    const std::vector<dgmkit::Shape>& shapes,
    const std::vector<std::vector<double>>& values, const GraphBuilder& build,
    double h = 1e-5, double denom_floor = 1e-6) {
  dgmkit::Tape tape;
  std::vector<dgmkit::Var> leaves;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    leaves.push_back(tape.leaf(shapes[i], values[i]));
  }
  dgmkit::Var loss = build(tape, leaves);
  tape.backward(loss);

  GradCheckResult res;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& analytic = tape.grad(leaves[i]);
    for (std::size_t j = 0; j < values[i].size(); ++j) {
      auto perturbed = values;
      perturbed[i][j] += h;
      const double up = eval_scalar(shapes, perturbed, build);
      perturbed[i][j] = values[i][j] - h;
      const double dn = eval_scalar(shapes, perturbed, build);
      const double numeric = (up - dn) / (2.0 * h);
      const double denom = std::max(
          {std::abs(analytic[j]), std::abs(numeric), denom_floor});
      const double rel = std::abs(analytic[j] - numeric) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_analytic = analytic[j];
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n,
                                         double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> out(n);
  for (double& x : out) x = d(rng);
  return out;
}

}  // namespace testutil
