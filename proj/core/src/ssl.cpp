#include "fedadapt/ssl.hpp"

#include <cmath>
#include <stdexcept>

namespace fedadapt {

RandomProjectionQuantizer::RandomProjectionQuantizer(std::size_t d_in,
                                                     std::size_t d_q,
                                                     std::size_t codebook_size,
                                                     std::uint64_t seed)
    : d_in_(d_in), d_q_(d_q), codebook_size_(codebook_size) {
  if (d_in < 1 || d_q < 1 || codebook_size < 2)
    throw std::invalid_argument(
        "RandomProjectionQuantizer: need d_in >= 1, d_q >= 1, codebook >= 2");
  Rng rng(seed);
  projection_.resize(d_in * d_q);
  for (double& v : projection_) v = rng.normal();
  codebook_.resize(codebook_size * d_q);
  for (std::size_t c = 0; c < codebook_size; ++c) {
    double norm2 = 0;
    for (std::size_t j = 0; j < d_q; ++j) {
      codebook_[c * d_q + j] = rng.normal();
      norm2 += codebook_[c * d_q + j] * codebook_[c * d_q + j];
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t j = 0; j < d_q; ++j) codebook_[c * d_q + j] *= inv;
  }
}

int RandomProjectionQuantizer::code(const real* frame) const {
  std::vector<double> proj(d_q_, 0.0);
  for (std::size_t i = 0; i < d_in_; ++i) {
    const double f = double(frame[i]);
    for (std::size_t j = 0; j < d_q_; ++j) proj[j] += f * projection_[i * d_q_ + j];
  }
  double norm2 = 0;
  for (double v : proj) norm2 += v * v;
  if (norm2 > 0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : proj) v *= inv;
  }
  int best = 0;
  double best_d = 0;
  for (std::size_t c = 0; c < codebook_size_; ++c) {
    double dist = 0;
    for (std::size_t j = 0; j < d_q_; ++j) {
      const double diff = proj[j] - codebook_[c * d_q_ + j];
      dist += diff * diff;
    }
    if (c == 0 || dist < best_d) {
      best_d = dist;
      best = static_cast<int>(c);
    }
  }
  return best;
}

std::vector<int> RandomProjectionQuantizer::codes(const Tensor& features) const {
  if (features.rank() != 2 || features.extent(1) != d_in_)
    throw std::invalid_argument("quantizer: features must be [T," +
                                std::to_string(d_in_) + "]");
  const std::size_t T = features.extent(0);
  std::vector<int> out(T);
  for (std::size_t t = 0; t < T; ++t)
    out[t] = code(features.values().data() + t * d_in_);
  return out;
}

std::vector<real> make_mask_vector(std::size_t d_in, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<real> v(d_in);
  for (real& x : v) x = real(rng.normal() * 0.1);
  return v;
}

SslBatch make_ssl_batch(const Tensor& features, double mask_prob,
                        std::size_t span_len,
                        const RandomProjectionQuantizer& quantizer,
                        const std::vector<real>& mask_vector, Rng& rng) {
  if (!(mask_prob > 0.0) || !(mask_prob < 1.0))
    throw std::invalid_argument("make_ssl_batch: need 0 < mask_prob < 1");
  if (span_len < 1)
    throw std::invalid_argument("make_ssl_batch: span_len must be >= 1");
  const std::size_t T = features.extent(0);
  const std::size_t d_in = features.extent(1);
  if (T < span_len)
    throw std::invalid_argument("make_ssl_batch: sequence length " +
                                std::to_string(T) + " < span_len " +
                                std::to_string(span_len));
  if (mask_vector.size() != d_in)
    throw std::invalid_argument("make_ssl_batch: mask vector size mismatch");

  std::vector<bool> mask(T, false);
  bool any = false;
  while (!any) {
    for (std::size_t t = 0; t < T; ++t) {
      if (!rng.bernoulli(mask_prob)) continue;
      for (std::size_t j = 0; j < span_len && t + j < T; ++j) {
        mask[t + j] = true;
        any = true;
      }
    }
  }

  const std::vector<int> codes = quantizer.codes(features);
  SslBatch batch;
  batch.features = features.clone();
  batch.mask = mask;
  batch.labels.assign(T, -1);
  for (std::size_t t = 0; t < T; ++t) {
    if (!mask[t]) continue;
    batch.labels[t] = codes[t];
    for (std::size_t i = 0; i < d_in; ++i)
      batch.features.values()[t * d_in + i] = mask_vector[i];
  }
  return batch;
}

}  // namespace fedadapt
