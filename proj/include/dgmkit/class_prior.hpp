#pragma once

#include <vector>

namespace dgmkit {

// Prior p(y) over the augmented label space: the first n_labelled
// entries share one value, the trailing n_aug entries another. With
// n_aug = 0 it is plain uniform.
struct ClassPrior {
  std::vector<double> probs;
  int n_labelled = 0;
  int n_aug = 0;
};

ClassPrior build_class_prior(int n_labelled, int n_aug);

}  // namespace dgmkit
