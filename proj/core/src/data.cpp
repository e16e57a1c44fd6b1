#include "fedadapt/data.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "io_util.hpp"

namespace fedadapt {

void DomainSpec::validate() const {
  if (vocab < 2) throw std::invalid_argument("DomainSpec: vocab must be >= 2");
  if (d_in < 1) throw std::invalid_argument("DomainSpec: d_in must be >= 1");
  if (token_means.size() != vocab * d_in)
    throw std::invalid_argument("DomainSpec: token_means must be vocab*d_in");
  if (token_prior.size() != vocab)
    throw std::invalid_argument("DomainSpec: token_prior must have vocab entries");
  double prior_sum = 0;
  std::size_t positive = 0;
  for (double p : token_prior) {
    if (p < 0) throw std::invalid_argument("DomainSpec: negative prior weight");
    if (p > 0) ++positive;
    prior_sum += p;
  }
  if (std::abs(prior_sum - 1.0) > 1e-9)
    throw std::invalid_argument("DomainSpec: token_prior must sum to 1");
  if (positive < 2)
    throw std::invalid_argument(
        "DomainSpec: token_prior must give positive weight to >= 2 tokens");
  if (noise_scale < 0)
    throw std::invalid_argument("DomainSpec: noise_scale must be >= 0");
  if (t_min < 1 || t_max < t_min)
    throw std::invalid_argument("DomainSpec: need 1 <= t_min <= t_max");
  if (run_min < 1 || run_max < run_min)
    throw std::invalid_argument("DomainSpec: need 1 <= run_min <= run_max");
  if (has_transform && !transform_bias.empty() && transform_bias.size() != d_in)
    throw std::invalid_argument("DomainSpec: transform_bias must have d_in entries");
}

namespace {

// Orthogonal rotation built from Givens rotations on the plane pairs
// (0,1), (2,3), ... with a common angle.
void rotate_in_place(std::vector<double>& vec, std::size_t d, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  for (std::size_t i = 0; i + 1 < d; i += 2) {
    const double a = vec[i], b = vec[i + 1];
    vec[i] = c * a - s * b;
    vec[i + 1] = s * a + c * b;
  }
}

std::size_t sample_from_prior(const std::vector<double>& prior, Rng& rng) {
  double u = rng.uniform();
  double acc = 0;
  for (std::size_t v = 0; v < prior.size(); ++v) {
    acc += prior[v];
    if (u < acc) return v;
  }
  return prior.size() - 1;
}

}  // namespace

std::vector<double> DomainSpec::effective_means() const {
  std::vector<double> means = token_means;
  if (!has_transform) return means;
  for (std::size_t v = 0; v < vocab; ++v) {
    std::vector<double> row(means.begin() + v * d_in,
                            means.begin() + (v + 1) * d_in);
    rotate_in_place(row, d_in, rotation_angle);
    for (std::size_t i = 0; i < d_in; ++i) {
      if (!transform_bias.empty()) row[i] += transform_bias[i];
      means[v * d_in + i] = row[i];
    }
  }
  return means;
}

DomainSpec make_source_spec(const CorpusConfig& cfg, std::uint64_t seed) {
  DomainSpec spec;
  spec.domain_id = 0;
  spec.d_in = cfg.d_in;
  spec.vocab = cfg.vocab;
  spec.noise_scale = cfg.noise_scale;
  spec.t_min = cfg.t_min;
  spec.t_max = cfg.t_max;
  spec.run_min = cfg.run_min;
  spec.run_max = cfg.run_max;
  Rng rng(Rng::derive_seed(seed, 7001));
  spec.token_means.resize(cfg.vocab * cfg.d_in);
  for (double& m : spec.token_means) m = cfg.mean_scale * rng.normal();
  spec.token_prior.assign(cfg.vocab, 1.0 / static_cast<double>(cfg.vocab));
  spec.validate();
  return spec;
}

DomainSpec make_target_spec(const CorpusConfig& cfg, std::uint64_t seed) {
  DomainSpec spec = make_source_spec(cfg, seed);
  spec.domain_id = 1;
  spec.has_transform = true;
  spec.rotation_angle = cfg.target_rotation;
  Rng rng(Rng::derive_seed(seed, 7002));
  spec.transform_bias.resize(cfg.d_in);
  for (double& b : spec.transform_bias)
    b = cfg.target_bias_scale * rng.normal();
  // Tilted prior: heavier weight on high token ids.
  double z = 0;
  for (std::size_t v = 0; v < cfg.vocab; ++v) {
    spec.token_prior[v] =
        1.0 + cfg.target_prior_tilt * static_cast<double>(v) /
                  static_cast<double>(cfg.vocab - 1);
    z += spec.token_prior[v];
  }
  for (double& p : spec.token_prior) p /= z;
  spec.validate();
  return spec;
}

DomainDataset generate_domain(const DomainSpec& spec, std::size_t n_examples,
                              std::uint64_t seed) {
  spec.validate();
  if (n_examples < 1)
    throw std::invalid_argument("generate_domain: need at least one example");
  const std::vector<double> means = spec.effective_means();
  Rng rng(seed);

  DomainDataset ds;
  ds.domain_id = spec.domain_id;
  ds.d_in = spec.d_in;
  ds.vocab = spec.vocab;
  ds.examples.reserve(n_examples);

  for (std::size_t e = 0; e < n_examples; ++e) {
    const std::size_t T =
        spec.t_min + rng.below(spec.t_max - spec.t_min + 1);
    std::vector<int> tokens;
    tokens.reserve(T);
    int prev = -1;
    while (tokens.size() < T) {
      // no adjacent repeats in the transcript, so collapse() inverts runs
      int tok = static_cast<int>(sample_from_prior(spec.token_prior, rng));
      while (tok == prev)
        tok = static_cast<int>(sample_from_prior(spec.token_prior, rng));
      const std::size_t run =
          spec.run_min + rng.below(spec.run_max - spec.run_min + 1);
      for (std::size_t i = 0; i < run && tokens.size() < T; ++i)
        tokens.push_back(tok);
      prev = tok;
    }
    Tensor features = Tensor::zeros({T, spec.d_in});
    for (std::size_t t = 0; t < T; ++t) {
      const double* mean = means.data() + tokens[t] * spec.d_in;
      for (std::size_t i = 0; i < spec.d_in; ++i)
        features.values()[t * spec.d_in + i] =
            real(mean[i] + spec.noise_scale * rng.normal());
    }
    ds.examples.push_back(Example{std::move(features), std::move(tokens)});
  }
  return ds;
}

namespace {
constexpr std::uint32_t kFixtureMagic = 0x53444146;  // "FADS"
constexpr std::uint32_t kFixtureVersion = 1;
}  // namespace

void save_dataset(const std::string& path, const DomainDataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_dataset: cannot open " + path);
  io::write_u32(os, kFixtureMagic);
  io::write_u32(os, kFixtureVersion);
  io::write_i32(os, ds.domain_id);
  io::write_u32(os, static_cast<std::uint32_t>(ds.d_in));
  io::write_u32(os, static_cast<std::uint32_t>(ds.vocab));
  io::write_u64(os, ds.examples.size());
  for (const Example& ex : ds.examples) {
    const std::size_t T = ex.features.extent(0);
    io::write_u32(os, static_cast<std::uint32_t>(T));
    for (real v : ex.features.values()) io::write_f64(os, double(v));
    for (int t : ex.tokens) io::write_i32(os, t);
  }
  if (!os) throw std::runtime_error("save_dataset: write failed for " + path);
}

DomainDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_dataset: cannot open " + path);
  if (io::read_u32(is) != kFixtureMagic)
    throw std::runtime_error("load_dataset: bad magic in " + path);
  if (io::read_u32(is) != kFixtureVersion)
    throw std::runtime_error("load_dataset: unsupported version in " + path);
  DomainDataset ds;
  ds.domain_id = io::read_i32(is);
  ds.d_in = io::read_u32(is);
  ds.vocab = io::read_u32(is);
  const std::uint64_t n = io::read_u64(is);
  ds.examples.reserve(n);
  for (std::uint64_t e = 0; e < n; ++e) {
    const std::size_t T = io::read_u32(is);
    Tensor features = Tensor::zeros({T, ds.d_in});
    for (real& v : features.values()) v = real(io::read_f64(is));
    std::vector<int> tokens(T);
    for (int& t : tokens) t = io::read_i32(is);
    ds.examples.push_back(Example{std::move(features), std::move(tokens)});
  }
  return ds;
}

}  // namespace fedadapt
