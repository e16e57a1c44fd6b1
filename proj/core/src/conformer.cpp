#include "fedadapt/conformer.hpp"

#include <cmath>
#include <stdexcept>

namespace fedadapt {

void ModelConfig::validate() const {
  if (d < 2) throw std::invalid_argument("ModelConfig: d must be >= 2");
  if (layers < 1) throw std::invalid_argument("ModelConfig: layers must be >= 1");
  if (d_in < 1) throw std::invalid_argument("ModelConfig: d_in must be >= 1");
  if (ffn_mult < 1)
    throw std::invalid_argument("ModelConfig: ffn_mult must be >= 1");
  if (use_conv && kernel < 1)
    throw std::invalid_argument("ModelConfig: kernel must be >= 1");
  if (vocab < 2) throw std::invalid_argument("ModelConfig: vocab must be >= 2");
  if (layernorm_eps <= real(0))
    throw std::invalid_argument("ModelConfig: layernorm_eps must be > 0");
}

std::string layer_prefix(std::size_t layer) {
  std::string idx = std::to_string(layer);
  if (idx.size() < 2) idx = "0" + idx;
  return "encoder/layer" + idx;
}

namespace {

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (real& v : t.values()) v = real(rng.uniform(-bound, bound));
  return t;
}

void insert_linear(ParameterTree& tree, const std::string& prefix,
                   std::size_t in, std::size_t out, Rng& rng) {
  tree.insert(prefix + "/w", uniform_init({in, out}, in, rng));
  tree.insert(prefix + "/b", Tensor::zeros({out}));
}

void insert_layernorm(ParameterTree& tree, const std::string& prefix,
                      std::size_t d) {
  tree.insert(prefix + "/gain", Tensor::full({d}, real(1)));
  tree.insert(prefix + "/bias", Tensor::zeros({d}));
}

void insert_ffm(ParameterTree& tree, const std::string& prefix, std::size_t d,
                std::size_t mult, Rng& rng) {
  insert_layernorm(tree, prefix + "/ln", d);
  insert_linear(tree, prefix + "/lin1", d, d * mult, rng);
  insert_linear(tree, prefix + "/lin2", d * mult, d, rng);
}

void insert_attention(ParameterTree& tree, const std::string& prefix,
                      std::size_t d, Rng& rng) {
  insert_layernorm(tree, prefix + "/ln", d);
  insert_linear(tree, prefix + "/q", d, d, rng);
  insert_linear(tree, prefix + "/k", d, d, rng);
  insert_linear(tree, prefix + "/v", d, d, rng);
  insert_linear(tree, prefix + "/out", d, d, rng);
}

void insert_conv(ParameterTree& tree, const std::string& prefix, std::size_t d,
                 std::size_t kernel, Rng& rng) {
  insert_layernorm(tree, prefix + "/ln", d);
  insert_linear(tree, prefix + "/pw1", d, d, rng);
  tree.insert(prefix + "/dw/w", uniform_init({kernel, d}, kernel, rng));
  tree.insert(prefix + "/dw/b", Tensor::zeros({d}));
  insert_linear(tree, prefix + "/pw2", d, d, rng);
}

Tensor linear(const ParameterTree& tree, const std::string& prefix,
              const Tensor& x) {
  return add_bias(matmul(x, tree.at(prefix + "/w")), tree.at(prefix + "/b"));
}

Tensor apply_layernorm(const ParameterTree& tree, const std::string& prefix,
                       const Tensor& x, real eps) {
  return layernorm(x, tree.at(prefix + "/gain"), tree.at(prefix + "/bias"),
                   eps);
}

// layernorm -> lin d->md -> swish -> lin md->d, half-step residual
Tensor ffm_forward(const ParameterTree& tree, const std::string& prefix,
                   const Tensor& x, real eps) {
  Tensor h = apply_layernorm(tree, prefix + "/ln", x, eps);
  h = swish(linear(tree, prefix + "/lin1", h));
  h = linear(tree, prefix + "/lin2", h);
  return add(x, scale(h, real(0.5)));
}

Tensor attention_forward(const ParameterTree& tree, const std::string& prefix,
                         const Tensor& x, real eps) {
  Tensor h = apply_layernorm(tree, prefix + "/ln", x, eps);
  Tensor q = linear(tree, prefix + "/q", h);
  Tensor k = linear(tree, prefix + "/k", h);
  Tensor v = linear(tree, prefix + "/v", h);
  const real inv_sqrt_d =
      real(1) / std::sqrt(static_cast<real>(q.extent(1)));
  Tensor attn = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d));
  Tensor ctx = linear(tree, prefix + "/out", matmul(attn, v));
  return add(x, ctx);
}

Tensor conv_forward(const ParameterTree& tree, const std::string& prefix,
                    const Tensor& x, real eps) {
  Tensor h = apply_layernorm(tree, prefix + "/ln", x, eps);
  h = linear(tree, prefix + "/pw1", h);
  h = depthwise_conv1d(h, tree.at(prefix + "/dw/w"), tree.at(prefix + "/dw/b"));
  h = swish(h);
  h = linear(tree, prefix + "/pw2", h);
  return add(x, h);
}

// FFM output combined with its adapter, if one is attached at this position.
// Sequential insertion transforms the module output; parallel insertion adds
// the adapter core (no internal skip, the module output already carries the
// signal path) applied to the module input.
Tensor ffm_with_adapter(const ParameterTree& tree, const std::string& ffm_prefix,
                        const std::string& adapter_prefix, const Tensor& x,
                        const std::optional<AdapterSpec>& spec, real eps) {
  Tensor h = ffm_forward(tree, ffm_prefix, x, eps);
  if (adapter_prefix.empty()) return h;
  const Adapter a = adapter_at(tree, adapter_prefix);
  if (spec->parallel())
    return add(h, adapter_forward(a, x, spec->nonlinearity, false));
  return adapter_forward(a, h, spec->nonlinearity, spec->internal_residual);
}

Tensor layer_forward(const ParameterTree& tree, const ModelConfig& cfg,
                     const std::optional<AdapterSpec>& spec, std::size_t layer,
                     const Tensor& x) {
  const std::string prefix = layer_prefix(layer);
  const real eps = cfg.layernorm_eps;
  const bool at_ffms = spec && spec->variant != AdapterVariant::separate;
  const std::string begin_prefix =
      at_ffms && spec->both_positions() ? prefix + "/adapter_begin" : "";
  const std::string end_prefix = at_ffms ? prefix + "/adapter_end" : "";

  Tensor h = ffm_with_adapter(tree, prefix + "/ffm1", begin_prefix, x, spec, eps);
  if (cfg.use_attention) h = attention_forward(tree, prefix + "/attn", h, eps);
  if (cfg.use_conv) h = conv_forward(tree, prefix + "/conv", h, eps);
  h = ffm_with_adapter(tree, prefix + "/ffm2", end_prefix, h, spec, eps);
  h = apply_layernorm(tree, prefix + "/ln_out", h, eps);

  if (spec && spec->variant == AdapterVariant::separate) {
    const Adapter a = adapter_at(tree, prefix + "/adapter_sep");
    h = adapter_forward(a, h, spec->nonlinearity, spec->internal_residual);
  }
  return h;
}

}  // namespace

ParameterTree build_encoder(const ModelConfig& cfg,
                            const std::optional<AdapterSpec>& spec,
                            std::uint64_t seed) {
  cfg.validate();
  if (spec) spec->validate(cfg.d);
  Rng rng(Rng::derive_seed(seed, 0));

  ParameterTree tree;
  insert_linear(tree, "encoder/frontend", cfg.d_in, cfg.d, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string prefix = layer_prefix(l);
    insert_ffm(tree, prefix + "/ffm1", cfg.d, cfg.ffn_mult, rng);
    if (cfg.use_attention) insert_attention(tree, prefix + "/attn", cfg.d, rng);
    if (cfg.use_conv) insert_conv(tree, prefix + "/conv", cfg.d, cfg.kernel, rng);
    insert_ffm(tree, prefix + "/ffm2", cfg.d, cfg.ffn_mult, rng);
    insert_layernorm(tree, prefix + "/ln_out", cfg.d);
  }
  if (spec) insert_adapters(tree, cfg, *spec, Rng::derive_seed(seed, 1));
  return tree;
}

void insert_adapters(ParameterTree& tree, const ModelConfig& cfg,
                     const AdapterSpec& spec, std::uint64_t seed) {
  cfg.validate();
  spec.validate(cfg.d);
  if (tree.has_adapter_paths())
    throw std::invalid_argument("insert_adapters: tree already has adapters");
  Rng rng(seed);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string prefix = layer_prefix(l);
    switch (spec.variant) {
      case AdapterVariant::separate:
        insert_adapter(tree, prefix + "/adapter_sep", cfg.d, spec, rng);
        break;
      case AdapterVariant::seq_end:
      case AdapterVariant::parallel_end:
        insert_adapter(tree, prefix + "/adapter_end", cfg.d, spec, rng);
        break;
      case AdapterVariant::seq_both:
      case AdapterVariant::parallel_both:
        insert_adapter(tree, prefix + "/adapter_begin", cfg.d, spec, rng);
        insert_adapter(tree, prefix + "/adapter_end", cfg.d, spec, rng);
        break;
    }
  }
}

void add_decoder_head(ParameterTree& tree, const ModelConfig& cfg, Rng& rng) {
  insert_linear(tree, "decoder", cfg.d, cfg.vocab + 1, rng);
}

void add_ssl_head(ParameterTree& tree, const ModelConfig& cfg,
                  std::size_t codebook_size, Rng& rng) {
  insert_linear(tree, "ssl/head", cfg.d, codebook_size, rng);
}

std::size_t count_adapter_instances(const ParameterTree& tree) {
  std::size_t n = 0;
  for (const auto& [path, leaf] : tree.leaves())
    if (is_adapter_path(path) && path.size() >= 7 &&
        path.compare(path.size() - 7, 7, "/w_down") == 0)
      ++n;
  return n;
}

Tensor encoder_forward(const ParameterTree& tree, const ModelConfig& cfg,
                       const std::optional<AdapterSpec>& spec,
                       const Tensor& features) {
  if (features.rank() != 2 || features.extent(1) != cfg.d_in)
    throw std::invalid_argument("encoder_forward: features " +
                                shape_str(features.shape()) +
                                " do not match d_in=" +
                                std::to_string(cfg.d_in));
  if (features.extent(0) < 1)
    throw std::invalid_argument("encoder_forward: empty input");
  Tensor h = linear(tree, "encoder/frontend", features);
  for (std::size_t l = 0; l < cfg.layers; ++l)
    h = layer_forward(tree, cfg, spec, l, h);
  return h;
}

Tensor model_logits(const ParameterTree& tree, const ModelConfig& cfg,
                    const std::optional<AdapterSpec>& spec,
                    const Tensor& features) {
  return linear(tree, "decoder", encoder_forward(tree, cfg, spec, features));
}

Tensor ssl_logits(const ParameterTree& tree, const ModelConfig& cfg,
                  const std::optional<AdapterSpec>& spec,
                  const Tensor& features) {
  return linear(tree, "ssl/head", encoder_forward(tree, cfg, spec, features));
}

std::vector<int> decode_greedy(const Tensor& logits) {
  if (logits.rank() != 2)
    throw std::invalid_argument("decode_greedy: logits must be rank 2");
  const std::size_t T = logits.extent(0), C = logits.extent(1);
  const int blank = static_cast<int>(C) - 1;
  std::vector<int> out;
  int prev = -1;
  for (std::size_t t = 0; t < T; ++t) {
    int best = 0;
    real best_v = logits.at(t, 0);
    for (std::size_t j = 1; j < C; ++j)
      if (logits.at(t, j) > best_v) {
        best_v = logits.at(t, j);
        best = static_cast<int>(j);
      }
    if (best != prev && best != blank) out.push_back(best);
    prev = best;
  }
  return out;
}

std::vector<int> collapse_repeats(const std::vector<int>& frame_labels) {
  std::vector<int> out;
  for (int t : frame_labels)
    if (out.empty() || out.back() != t) out.push_back(t);
  return out;
}

}  // namespace fedadapt
