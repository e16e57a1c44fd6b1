#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedadapt/adapter.hpp"
#include "fedadapt/parameter_tree.hpp"
#include "fedadapt/tensor.hpp"

namespace fedadapt {

struct ModelConfig {
  std::size_t d_in = 16;  // input feature dimension
  std::size_t d = 32;     // hidden dimension
  std::size_t layers = 4;
  std::size_t ffn_mult = 4;
  std::size_t kernel = 8;  // depthwise conv kernel width
  bool use_attention = true;
  bool use_conv = true;
  std::size_t vocab = 12;  // token count V; decoder head emits V+1 with blank
  real layernorm_eps = real(1e-5);

  void validate() const;
  std::size_t blank_id() const { return vocab; }
};

std::string layer_prefix(std::size_t layer);

// Builds the encoder parameter tree: frontend projection, `layers` conformer
// layers, and (when spec is set) adapters placed per variant. Base weights
// and adapter weights draw from independent seeded streams, so the base
// init is unchanged by the presence of adapters.
ParameterTree build_encoder(const ModelConfig& cfg,
                            const std::optional<AdapterSpec>& spec,
                            std::uint64_t seed);

// Inserts fresh adapters (per spec) into an encoder tree that has none.
void insert_adapters(ParameterTree& tree, const ModelConfig& cfg,
                     const AdapterSpec& spec, std::uint64_t seed);

void add_decoder_head(ParameterTree& tree, const ModelConfig& cfg, Rng& rng);
void add_ssl_head(ParameterTree& tree, const ModelConfig& cfg,
                  std::size_t codebook_size, Rng& rng);

std::size_t count_adapter_instances(const ParameterTree& tree);

// [T, d_in] features -> [T, d] hidden states.
Tensor encoder_forward(const ParameterTree& tree, const ModelConfig& cfg,
                       const std::optional<AdapterSpec>& spec,
                       const Tensor& features);

// [T, d_in] -> [T, V+1] frame logits through the decoder head.
Tensor model_logits(const ParameterTree& tree, const ModelConfig& cfg,
                    const std::optional<AdapterSpec>& spec,
                    const Tensor& features);

// [T, d_in] -> [T, C] logits through the ssl head.
Tensor ssl_logits(const ParameterTree& tree, const ModelConfig& cfg,
                  const std::optional<AdapterSpec>& spec,
                  const Tensor& features);

// Per-frame argmax, collapse adjacent repeats, drop blanks.
std::vector<int> decode_greedy(const Tensor& logits);

// Collapses adjacent repeats (no blank involved); the reference transcript
// of a frame-label sequence.
std::vector<int> collapse_repeats(const std::vector<int>& frame_labels);

}  // namespace fedadapt
