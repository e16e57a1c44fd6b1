#pragma once

#include <optional>
#include <string>

#include "fedadapt/adapter.hpp"
#include "fedadapt/conformer.hpp"
#include "fedadapt/optimizers.hpp"
#include "fedadapt/parameter_tree.hpp"

namespace fedadapt {

// Versioned on-disk model state: header (format version, model config,
// adapter spec), then leaves in lexicographic path order as
// {path, shape, raw 64-bit little-endian values, frozen flag}, then an
// optional server Adam state block. Round-trips bit-exact.
struct Checkpoint {
  ModelConfig model;
  std::optional<AdapterSpec> adapters;
  ParameterTree tree;
  std::optional<AdamState> server_opt;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over the canonical leaf serialization; hex string.
std::string tree_digest(const ParameterTree& tree);
std::string trainable_digest(const ParameterTree& tree);
std::string string_digest(const std::string& text);

}  // namespace fedadapt
