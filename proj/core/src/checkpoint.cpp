#include "fedadapt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "io_util.hpp"

namespace fedadapt {

namespace {

constexpr std::uint32_t kCkptMagic = 0x4b434146;  // "FACK"
constexpr std::uint32_t kCkptVersion = 1;

void write_model_config(std::ostream& os, const ModelConfig& cfg) {
  io::write_u32(os, static_cast<std::uint32_t>(cfg.d_in));
  io::write_u32(os, static_cast<std::uint32_t>(cfg.d));
  io::write_u32(os, static_cast<std::uint32_t>(cfg.layers));
  io::write_u32(os, static_cast<std::uint32_t>(cfg.ffn_mult));
  io::write_u32(os, static_cast<std::uint32_t>(cfg.kernel));
  io::write_u8(os, cfg.use_attention ? 1 : 0);
  io::write_u8(os, cfg.use_conv ? 1 : 0);
  io::write_u32(os, static_cast<std::uint32_t>(cfg.vocab));
  io::write_f64(os, double(cfg.layernorm_eps));
}

ModelConfig read_model_config(std::istream& is) {
  ModelConfig cfg;
  cfg.d_in = io::read_u32(is);
  cfg.d = io::read_u32(is);
  cfg.layers = io::read_u32(is);
  cfg.ffn_mult = io::read_u32(is);
  cfg.kernel = io::read_u32(is);
  cfg.use_attention = io::read_u8(is) != 0;
  cfg.use_conv = io::read_u8(is) != 0;
  cfg.vocab = io::read_u32(is);
  cfg.layernorm_eps = real(io::read_f64(is));
  return cfg;
}

void write_adapter_spec(std::ostream& os, const AdapterSpec& spec) {
  io::write_string(os, to_string(spec.variant));
  io::write_u32(os, static_cast<std::uint32_t>(spec.bottleneck));
  io::write_string(os, to_string(spec.nonlinearity));
  io::write_u8(os, spec.internal_residual ? 1 : 0);
}

AdapterSpec read_adapter_spec(std::istream& is) {
  AdapterSpec spec;
  spec.variant = adapter_variant_from_string(io::read_string(is));
  spec.bottleneck = io::read_u32(is);
  spec.nonlinearity = nonlinearity_from_string(io::read_string(is));
  spec.internal_residual = io::read_u8(is) != 0;
  return spec;
}

void write_value_block(std::ostream& os, const std::vector<real>& values) {
  io::write_u64(os, values.size());
  for (real v : values) io::write_f64(os, double(v));
}

std::vector<real> read_value_block(std::istream& is) {
  const std::uint64_t n = io::read_u64(is);
  std::vector<real> values(n);
  for (real& v : values) v = real(io::read_f64(is));
  return values;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  io::write_u32(os, kCkptMagic);
  io::write_u32(os, kCkptVersion);
  write_model_config(os, ckpt.model);
  io::write_u8(os, ckpt.adapters ? 1 : 0);
  if (ckpt.adapters) write_adapter_spec(os, *ckpt.adapters);

  io::write_u64(os, ckpt.tree.num_leaves());
  for (const auto& [leaf_path, leaf] : ckpt.tree.leaves()) {
    io::write_string(os, leaf_path);
    const Shape& shape = leaf.tensor.shape();
    io::write_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t e : shape) io::write_u64(os, e);
    io::write_u8(os, leaf.frozen ? 1 : 0);
    for (real v : leaf.tensor.values()) io::write_f64(os, double(v));
  }

  io::write_u8(os, ckpt.server_opt ? 1 : 0);
  if (ckpt.server_opt) {
    const AdamState& adam = *ckpt.server_opt;
    io::write_f64(os, double(adam.learning_rate));
    io::write_f64(os, double(adam.beta1));
    io::write_f64(os, double(adam.beta2));
    io::write_f64(os, double(adam.epsilon));
    io::write_u64(os, adam.step);
    io::write_u64(os, adam.m.size());
    for (const auto& [moment_path, m] : adam.m) {
      io::write_string(os, moment_path);
      write_value_block(os, m);
      write_value_block(os, adam.v.at(moment_path));
    }
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  if (io::read_u32(is) != kCkptMagic)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  if (io::read_u32(is) != kCkptVersion)
    throw std::runtime_error("load_checkpoint: unsupported version in " + path);
  Checkpoint ckpt;
  ckpt.model = read_model_config(is);
  if (io::read_u8(is)) ckpt.adapters = read_adapter_spec(is);

  const std::uint64_t n_leaves = io::read_u64(is);
  for (std::uint64_t i = 0; i < n_leaves; ++i) {
    const std::string leaf_path = io::read_string(is);
    const std::uint32_t rank = io::read_u32(is);
    Shape shape(rank);
    for (std::size_t& e : shape) e = io::read_u64(is);
    const bool frozen = io::read_u8(is) != 0;
    Tensor t = Tensor::zeros(shape);
    for (real& v : t.values()) v = real(io::read_f64(is));
    ckpt.tree.insert(leaf_path, std::move(t), frozen);
  }

  if (io::read_u8(is)) {
    AdamState adam;
    adam.learning_rate = real(io::read_f64(is));
    adam.beta1 = real(io::read_f64(is));
    adam.beta2 = real(io::read_f64(is));
    adam.epsilon = real(io::read_f64(is));
    adam.step = io::read_u64(is);
    const std::uint64_t n_moments = io::read_u64(is);
    for (std::uint64_t i = 0; i < n_moments; ++i) {
      const std::string moment_path = io::read_string(is);
      adam.m[moment_path] = read_value_block(is);
      adam.v[moment_path] = read_value_block(is);
    }
    ckpt.server_opt = std::move(adam);
  }
  return ckpt;
}

namespace {

class Fnv1a {
 public:
  void feed(const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= bytes[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void feed_f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    unsigned char le[8];
    for (int i = 0; i < 8; ++i) le[i] = (bits >> (8 * i)) & 0xff;
    feed(le, 8);
  }
  std::string hex() const {
    std::ostringstream os;
    os << std::hex;
    for (int i = 15; i >= 0; --i) os << ((hash_ >> (4 * i)) & 0xf);
    return os.str();
  }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

std::string digest_leaves(const ParameterTree& tree, bool trainable_only) {
  Fnv1a h;
  for (const auto& [path, leaf] : tree.leaves()) {
    if (trainable_only && leaf.frozen) continue;
    h.feed(path.data(), path.size());
    h.feed("\0", 1);
    for (real v : leaf.tensor.values()) h.feed_f64(double(v));
  }
  return h.hex();
}

}  // namespace

std::string tree_digest(const ParameterTree& tree) {
  return digest_leaves(tree, false);
}

std::string trainable_digest(const ParameterTree& tree) {
  return digest_leaves(tree, true);
}

std::string string_digest(const std::string& text) {
  Fnv1a h;
  h.feed(text.data(), text.size());
  return h.hex();
}

}  // namespace fedadapt
