#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedadapt/tensor.hpp"

namespace fedadapt {

enum class FreezePolicy {
  all_trainable,
  freeze_encoder_base,
  freeze_all_but_adapters,
};

const char* to_string(FreezePolicy policy);

// True when any slash-delimited segment of the path starts with "adapter".
bool is_adapter_path(const std::string& path);

struct ParamLeaf {
  Tensor tensor;
  bool frozen = false;
};

// Named, hierarchical store of model parameters. Paths are slash-delimited
// and unique; std::map keeps iteration lexicographic, which is the canonical
// order for serialization, delta packing, and aggregation.
class ParameterTree {
 public:
  void insert(const std::string& path, Tensor tensor, bool frozen = false);
  bool has(const std::string& path) const { return leaves_.count(path) > 0; }
  Tensor& at(const std::string& path);
  const Tensor& at(const std::string& path) const;
  bool frozen(const std::string& path) const;
  void set_frozen(const std::string& path, bool frozen);

  const std::map<std::string, ParamLeaf>& leaves() const { return leaves_; }
  std::size_t num_leaves() const { return leaves_.size(); }

  std::uint64_t total_count() const;
  std::uint64_t trainable_count() const;
  std::uint64_t frozen_count() const;

  std::vector<std::string> paths() const;
  std::vector<std::string> trainable_paths() const;
  bool has_adapter_paths() const;

  void set_freeze(FreezePolicy policy);

  // Binds every leaf (and future forward passes through them) to one tape.
  void bind_tape(Tape* tape);
  Tape* tape() const { return tape_; }

  // Deep copy of all leaves, bound to the given tape.
  ParameterTree clone(Tape* tape = nullptr) const;

  void zero_grads();

 private:
  std::map<std::string, ParamLeaf> leaves_;
  Tape* tape_ = nullptr;
};

using GradMap = std::map<std::string, std::vector<real>>;

// Snapshot of the gradients of every trainable leaf, keyed by path.
GradMap collect_grads(const ParameterTree& tree);

}  // namespace fedadapt
