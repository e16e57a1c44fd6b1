#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedadapt/rng.hpp"
#include "fedadapt/tensor.hpp"

namespace fedadapt {

struct Example {
  Tensor features;          // [T, d_in], constant
  std::vector<int> tokens;  // per-frame labels in [0, vocab)
};

// Synthetic sequence corpus: token-conditioned Gaussian frame clusters with
// run-length structure, optionally pushed through a fixed domain transform
// (orthogonal rotation + bias + tilted token prior).
struct DomainSpec {
  int domain_id = 0;
  std::size_t d_in = 16;
  std::size_t vocab = 12;
  std::vector<double> token_means;  // vocab * d_in, row per token
  double noise_scale = 0.1;
  std::vector<double> token_prior;  // vocab, sums to 1

  bool has_transform = false;
  double rotation_angle = 0.0;          // Givens rotation per plane pair
  std::vector<double> transform_bias;   // d_in (empty = zero)

  std::size_t t_min = 8, t_max = 32;    // frames per example
  std::size_t run_min = 2, run_max = 5; // frames per token run

  void validate() const;
  // Token means after the domain transform (identity when has_transform
  // is false).
  std::vector<double> effective_means() const;
};

struct DomainDataset {
  int domain_id = 0;
  std::size_t d_in = 0;
  std::size_t vocab = 0;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
};

// Shared knobs for building a (source, target) domain pair over the same
// token means.
struct CorpusConfig {
  std::size_t d_in = 16;
  std::size_t vocab = 12;
  double mean_scale = 1.5;
  double noise_scale = 0.1;
  double target_rotation = 0.5;
  double target_bias_scale = 0.3;
  double target_prior_tilt = 1.0;  // 0 = uniform prior in both domains
  std::size_t t_min = 8, t_max = 32;
  std::size_t run_min = 2, run_max = 5;
};

DomainSpec make_source_spec(const CorpusConfig& cfg, std::uint64_t seed);
DomainSpec make_target_spec(const CorpusConfig& cfg, std::uint64_t seed);

DomainDataset generate_domain(const DomainSpec& spec, std::size_t n_examples,
                              std::uint64_t seed);

// Binary fixture round-trip (pinned corpora instead of regeneration).
void save_dataset(const std::string& path, const DomainDataset& ds);
DomainDataset load_dataset(const std::string& path);

}  // namespace fedadapt
