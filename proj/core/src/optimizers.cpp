#include "fedadapt/optimizers.hpp"

#include <cmath>
#include <stdexcept>

namespace fedadapt {

namespace {

// grads must be keyed by exactly the trainable paths.
void check_grad_cover(const ParameterTree& tree, const GradMap& grads,
                      const char* op) {
  for (const auto& [path, leaf] : tree.leaves()) {
    auto it = grads.find(path);
    if (leaf.frozen) {
      if (it != grads.end())
        throw std::invalid_argument(std::string(op) +
                                    ": grad supplied for frozen leaf " + path);
      continue;
    }
    if (it == grads.end())
      throw std::invalid_argument(std::string(op) +
                                  ": missing grad for trainable leaf " + path);
    if (it->second.size() != leaf.tensor.size())
      throw std::invalid_argument(std::string(op) + ": grad size mismatch at " +
                                  path);
  }
  for (const auto& [path, g] : grads)
    if (!tree.has(path))
      throw std::invalid_argument(std::string(op) + ": grad for unknown path " +
                                  path);
}

}  // namespace

void sgd_step(ParameterTree& tree, const GradMap& grads,
              const SgdState& state) {
  check_grad_cover(tree, grads, "sgd_step");
  for (const auto& [path, g] : grads) {
    auto& values = tree.at(path).values();
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] -= state.learning_rate * g[i];
  }
}

void adam_step(ParameterTree& tree, const GradMap& grads, AdamState& state) {
  check_grad_cover(tree, grads, "adam_step");
  state.step += 1;
  const real bc1 = real(1) - std::pow(state.beta1, real(state.step));
  const real bc2 = real(1) - std::pow(state.beta2, real(state.step));
  for (const auto& [path, g] : grads) {
    auto& values = tree.at(path).values();
    auto& m = state.m[path];
    auto& v = state.v[path];
    if (m.empty()) m.assign(values.size(), real(0));
    if (v.empty()) v.assign(values.size(), real(0));
    if (m.size() != values.size() || v.size() != values.size())
      throw std::invalid_argument("adam_step: moment size mismatch at " + path);
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = state.beta1 * m[i] + (real(1) - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (real(1) - state.beta2) * g[i] * g[i];
      const real m_hat = m[i] / bc1;
      const real v_hat = v[i] / bc2;
      values[i] -= state.learning_rate * m_hat /
                   (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace fedadapt
