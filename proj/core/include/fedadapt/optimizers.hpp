#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedadapt/parameter_tree.hpp"

namespace fedadapt {

struct SgdState {
  real learning_rate = real(1e-4);
};

struct AdamState {
  real learning_rate = real(2e-4);
  real beta1 = real(0.9);
  real beta2 = real(0.999);
  real epsilon = real(1e-8);
  std::uint64_t step = 0;
  std::map<std::string, std::vector<real>> m;  // first moments, trainable leaves
  std::map<std::string, std::vector<real>> v;  // second moments
};

// theta <- theta - lr * g on trainable leaves. `grads` must cover exactly
// the trainable paths; anything missing or extra (including a grad for a
// frozen leaf) is an error.
void sgd_step(ParameterTree& tree, const GradMap& grads, const SgdState& state);

// Standard bias-corrected Adam on the trainable leaves. Moment tensors are
// created lazily on first use and must match the trainable set thereafter.
void adam_step(ParameterTree& tree, const GradMap& grads, AdamState& state);

}  // namespace fedadapt
