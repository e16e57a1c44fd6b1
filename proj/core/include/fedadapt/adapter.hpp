#pragma once

#include <cstdint>
#include <string>

#include "fedadapt/parameter_tree.hpp"
#include "fedadapt/rng.hpp"
#include "fedadapt/tensor.hpp"

namespace fedadapt {

enum class AdapterVariant {
  separate,       // one adapter between consecutive layers (and after the last)
  seq_end,        // last FFM output h becomes f_A(h)
  seq_both,       // same at both FFMs
  parallel_end,   // last FFM output h becomes h + f_A(x), x the FFM input
  parallel_both,  // same at both FFMs
};

enum class Nonlinearity { relu, sigmoid, swish };

const char* to_string(AdapterVariant v);
const char* to_string(Nonlinearity n);
AdapterVariant adapter_variant_from_string(const std::string& s);
Nonlinearity nonlinearity_from_string(const std::string& s);

struct AdapterSpec {
  AdapterVariant variant = AdapterVariant::seq_end;
  std::size_t bottleneck = 8;
  Nonlinearity nonlinearity = Nonlinearity::relu;
  bool internal_residual = true;

  bool both_positions() const {
    return variant == AdapterVariant::seq_both ||
           variant == AdapterVariant::parallel_both;
  }
  bool parallel() const {
    return variant == AdapterVariant::parallel_end ||
           variant == AdapterVariant::parallel_both;
  }
  std::size_t instances_per_layer() const { return both_positions() ? 2 : 1; }

  // throws std::invalid_argument unless 1 <= bottleneck < model_dim
  void validate(std::size_t model_dim) const;
};

// Parameter count of one bottleneck adapter: w_down [d,b] + b_down [b] +
// w_up [b,d] + b_up [d].
inline std::uint64_t adapter_params_per_instance(std::uint64_t d,
                                                 std::uint64_t b) {
  return 2 * d * b + b + d;
}

// Handle onto the four leaves of one adapter instance (storage lives in a
// ParameterTree).
struct Adapter {
  Tensor w_down;  // [d, b]
  Tensor b_down;  // [b]
  Tensor w_up;    // [b, d]
  Tensor b_up;    // [d]

  std::size_t dim() const { return w_down.extent(0); }
  std::size_t bottleneck() const { return w_down.extent(1); }
  std::uint64_t param_count() const {
    return adapter_params_per_instance(dim(), bottleneck());
  }
};

// act(h w_down + b_down) w_up + b_up, plus h when with_residual.
Tensor adapter_forward(const Adapter& a, const Tensor& h, Nonlinearity act,
                       bool with_residual);

inline Tensor adapter_forward(const Adapter& a, const Tensor& h,
                              const AdapterSpec& spec) {
  return adapter_forward(a, h, spec.nonlinearity, spec.internal_residual);
}

// Inserts a fresh adapter's leaves under `prefix` (e.g.
// "encoder/layer03/adapter_end"). w_down ~ U(+-1/sqrt(d)); w_up starts at
// zero in residual mode so the adapter is a no-op at init, and uses the
// same uniform init otherwise.
void insert_adapter(ParameterTree& tree, const std::string& prefix,
                    std::size_t d, const AdapterSpec& spec, Rng& rng);

// Collects the four leaves under `prefix`.
Adapter adapter_at(const ParameterTree& tree, const std::string& prefix);

}  // namespace fedadapt
