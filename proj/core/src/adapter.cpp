#include "fedadapt/adapter.hpp"

#include <cmath>
#include <stdexcept>

namespace fedadapt {

const char* to_string(AdapterVariant v) {
  switch (v) {
    case AdapterVariant::separate:
      return "separate";
    case AdapterVariant::seq_end:
      return "seq_end";
    case AdapterVariant::seq_both:
      return "seq_both";
    case AdapterVariant::parallel_end:
      return "parallel_end";
    case AdapterVariant::parallel_both:
      return "parallel_both";
  }
  return "?";
}

const char* to_string(Nonlinearity n) {
  switch (n) {
    case Nonlinearity::relu:
      return "relu";
    case Nonlinearity::sigmoid:
      return "sigmoid";
    case Nonlinearity::swish:
      return "swish";
  }
  return "?";
}

AdapterVariant adapter_variant_from_string(const std::string& s) {
  if (s == "separate") return AdapterVariant::separate;
  if (s == "seq_end") return AdapterVariant::seq_end;
  if (s == "seq_both") return AdapterVariant::seq_both;
  if (s == "parallel_end") return AdapterVariant::parallel_end;
  if (s == "parallel_both") return AdapterVariant::parallel_both;
  throw std::invalid_argument("unknown adapter variant: " + s);
}

Nonlinearity nonlinearity_from_string(const std::string& s) {
  if (s == "relu") return Nonlinearity::relu;
  if (s == "sigmoid") return Nonlinearity::sigmoid;
  if (s == "swish") return Nonlinearity::swish;
  throw std::invalid_argument("unknown nonlinearity: " + s);
}

void AdapterSpec::validate(std::size_t model_dim) const {
  if (bottleneck < 1)
    throw std::invalid_argument("AdapterSpec: bottleneck must be >= 1");
  if (bottleneck >= model_dim)
    throw std::invalid_argument(
        "AdapterSpec: bottleneck " + std::to_string(bottleneck) +
        " must be smaller than model dim " + std::to_string(model_dim));
}

Tensor adapter_forward(const Adapter& a, const Tensor& h, Nonlinearity act,
                       bool with_residual) {
  if (h.rank() != 2 || h.extent(1) != a.dim())
    throw std::invalid_argument("adapter_forward: input " +
                                shape_str(h.shape()) + " does not end in dim " +
                                std::to_string(a.dim()));
  Tensor z = add_bias(matmul(h, a.w_down), a.b_down);
  switch (act) {
    case Nonlinearity::relu:
      z = relu(z);
      break;
    case Nonlinearity::sigmoid:
      z = sigmoid(z);
      break;
    case Nonlinearity::swish:
      z = swish(z);
      break;
  }
  Tensor out = add_bias(matmul(z, a.w_up), a.b_up);
  if (with_residual) out = add(out, h);
  return out;
}

void insert_adapter(ParameterTree& tree, const std::string& prefix,
                    std::size_t d, const AdapterSpec& spec, Rng& rng) {
  spec.validate(d);
  const std::size_t b = spec.bottleneck;
  const real bound = real(1) / std::sqrt(real(d));
  Tensor w_down = Tensor::zeros({d, b});
  for (real& v : w_down.values()) v = real(rng.uniform(-bound, bound));
  Tensor w_up = Tensor::zeros({b, d});
  if (!spec.internal_residual) {
    // Zero w_up would pin the output at a constant forever (dead gradients
    // through the up projection), so the literal reading starts random.
    for (real& v : w_up.values()) v = real(rng.uniform(-bound, bound));
  }
  tree.insert(prefix + "/w_down", std::move(w_down));
  tree.insert(prefix + "/b_down", Tensor::zeros({b}));
  tree.insert(prefix + "/w_up", std::move(w_up));
  tree.insert(prefix + "/b_up", Tensor::zeros({d}));
}

Adapter adapter_at(const ParameterTree& tree, const std::string& prefix) {
  return Adapter{tree.at(prefix + "/w_down"), tree.at(prefix + "/b_down"),
                 tree.at(prefix + "/w_up"), tree.at(prefix + "/b_up")};
}

}  // namespace fedadapt
