#include "fedadapt/parameter_tree.hpp"

#include <stdexcept>

namespace fedadapt {

const char* to_string(FreezePolicy policy) {
  switch (policy) {
    case FreezePolicy::all_trainable:
      return "all_trainable";
    case FreezePolicy::freeze_encoder_base:
      return "freeze_encoder_base";
    case FreezePolicy::freeze_all_but_adapters:
      return "freeze_all_but_adapters";
  }
  return "?";
}

bool is_adapter_path(const std::string& path) {
  std::size_t pos = 0;
  while (true) {
    if (path.compare(pos, 7, "adapter") == 0) return true;
    pos = path.find('/', pos);
    if (pos == std::string::npos) return false;
    ++pos;
  }
}

void ParameterTree::insert(const std::string& path, Tensor tensor,
                           bool frozen) {
  if (leaves_.count(path))
    throw std::invalid_argument("ParameterTree: duplicate path " + path);
  tensor.set_requires_grad(!frozen);
  tensor.bind_tape(tape_);
  leaves_[path] = ParamLeaf{std::move(tensor), frozen};
}

Tensor& ParameterTree::at(const std::string& path) {
  auto it = leaves_.find(path);
  if (it == leaves_.end())
    throw std::out_of_range("ParameterTree: no leaf " + path);
  return it->second.tensor;
}

const Tensor& ParameterTree::at(const std::string& path) const {
  auto it = leaves_.find(path);
  if (it == leaves_.end())
    throw std::out_of_range("ParameterTree: no leaf " + path);
  return it->second.tensor;
}

bool ParameterTree::frozen(const std::string& path) const {
  auto it = leaves_.find(path);
  if (it == leaves_.end())
    throw std::out_of_range("ParameterTree: no leaf " + path);
  return it->second.frozen;
}

void ParameterTree::set_frozen(const std::string& path, bool frozen) {
  auto it = leaves_.find(path);
  if (it == leaves_.end())
    throw std::out_of_range("ParameterTree: no leaf " + path);
  it->second.frozen = frozen;
  it->second.tensor.set_requires_grad(!frozen);
}

std::uint64_t ParameterTree::total_count() const {
  std::uint64_t n = 0;
  for (const auto& [path, leaf] : leaves_) n += leaf.tensor.size();
  return n;
}

std::uint64_t ParameterTree::trainable_count() const {
  std::uint64_t n = 0;
  for (const auto& [path, leaf] : leaves_)
    if (!leaf.frozen) n += leaf.tensor.size();
  return n;
}

std::uint64_t ParameterTree::frozen_count() const {
  return total_count() - trainable_count();
}

std::vector<std::string> ParameterTree::paths() const {
  std::vector<std::string> out;
  out.reserve(leaves_.size());
  for (const auto& [path, leaf] : leaves_) out.push_back(path);
  return out;
}

std::vector<std::string> ParameterTree::trainable_paths() const {
  std::vector<std::string> out;
  for (const auto& [path, leaf] : leaves_)
    if (!leaf.frozen) out.push_back(path);
  return out;
}

bool ParameterTree::has_adapter_paths() const {
  for (const auto& [path, leaf] : leaves_)
    if (is_adapter_path(path)) return true;
  return false;
}

void ParameterTree::set_freeze(FreezePolicy policy) {
  if (policy == FreezePolicy::freeze_all_but_adapters && !has_adapter_paths())
    throw std::invalid_argument(
        "set_freeze: freeze_all_but_adapters on a tree with no adapter paths");
  for (auto& [path, leaf] : leaves_) {
    bool frozen = false;
    switch (policy) {
      case FreezePolicy::all_trainable:
        frozen = false;
        break;
      case FreezePolicy::freeze_encoder_base:
        frozen = path.rfind("encoder/", 0) == 0 && !is_adapter_path(path);
        break;
      case FreezePolicy::freeze_all_but_adapters:
        frozen = !is_adapter_path(path);
        break;
    }
    leaf.frozen = frozen;
    leaf.tensor.set_requires_grad(!frozen);
  }
}

void ParameterTree::bind_tape(Tape* tape) {
  tape_ = tape;
  for (auto& [path, leaf] : leaves_) leaf.tensor.bind_tape(tape);
}

ParameterTree ParameterTree::clone(Tape* tape) const {
  ParameterTree out;
  out.tape_ = tape;
  for (const auto& [path, leaf] : leaves_)
    out.leaves_[path] = ParamLeaf{leaf.tensor.clone(tape), leaf.frozen};
  return out;
}

void ParameterTree::zero_grads() {
  for (auto& [path, leaf] : leaves_)
    if (!leaf.frozen) leaf.tensor.zero_grad();
}

GradMap collect_grads(const ParameterTree& tree) {
  GradMap grads;
  for (const auto& [path, leaf] : tree.leaves())
    if (!leaf.frozen) grads[path] = leaf.tensor.grad();
  return grads;
}

}  // namespace fedadapt
