#pragma once

#include <cstdint>
#include <vector>

#include "fedadapt/rng.hpp"
#include "fedadapt/tensor.hpp"

namespace fedadapt {

// Frozen random projection + codebook mapping continuous frames to discrete
// codes: code(x) = argmin_c || normalize(P x) - codebook[c] ||, ties broken
// toward the lowest index. Never receives gradients.
class RandomProjectionQuantizer {
 public:
  RandomProjectionQuantizer(std::size_t d_in, std::size_t d_q,
                            std::size_t codebook_size, std::uint64_t seed);

  int code(const real* frame) const;
  std::vector<int> codes(const Tensor& features) const;  // [T, d_in] -> T

  std::size_t input_dim() const { return d_in_; }
  std::size_t projected_dim() const { return d_q_; }
  std::size_t codebook_size() const { return codebook_size_; }
  const std::vector<double>& codebook() const { return codebook_; }
  const std::vector<double>& projection() const { return projection_; }

 private:
  std::size_t d_in_, d_q_, codebook_size_;
  std::vector<double> projection_;  // [d_in, d_q]
  std::vector<double> codebook_;    // [codebook_size, d_q], unit rows
};

struct SslBatch {
  Tensor features;         // [T, d_in] with masked spans replaced
  std::vector<bool> mask;  // per frame
  std::vector<int> labels; // code where mask is true, -1 elsewhere
};

// Fixed mask replacement vector for a run (a constant, derived from seed).
std::vector<real> make_mask_vector(std::size_t d_in, std::uint64_t seed);

// Mask spans start at Bernoulli(mask_prob) positions and extend span_len
// frames; labels are the quantizer codes of the original frames. Resamples
// until at least one frame is masked.
SslBatch make_ssl_batch(const Tensor& features, double mask_prob,
                        std::size_t span_len,
                        const RandomProjectionQuantizer& quantizer,
                        const std::vector<real>& mask_vector, Rng& rng);

}  // namespace fedadapt
