#include "fedadapt/accounting.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fedadapt {

std::uint64_t encoder_base_param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::uint64_t d = cfg.d, m = cfg.ffn_mult, k = cfg.kernel;
  const std::uint64_t frontend = cfg.d_in * d + d;
  // ffm: ln (2d) + lin d->md (m d^2 + m d) + lin md->d (m d^2 + d)
  const std::uint64_t ffm = 2 * d + 2 * m * d * d + m * d + d;
  // attention: ln + 4 square projections with bias
  const std::uint64_t attn = 2 * d + 4 * (d * d + d);
  // conv: ln + pointwise + depthwise (k d + d) + pointwise
  const std::uint64_t conv = 2 * d + (d * d + d) + (k * d + d) + (d * d + d);
  std::uint64_t layer = 2 * ffm + 2 * d;  // two ffms + final layernorm
  if (cfg.use_attention) layer += attn;
  if (cfg.use_conv) layer += conv;
  return frontend + cfg.layers * layer;
}

std::uint64_t adapter_param_count(const ModelConfig& cfg,
                                  const AdapterSpec& spec) {
  spec.validate(cfg.d);
  const std::uint64_t instances = cfg.layers * spec.instances_per_layer();
  return instances * adapter_params_per_instance(cfg.d, spec.bottleneck);
}

AccountingReport account(const ModelConfig& cfg,
                         const std::optional<AdapterSpec>& spec,
                         std::uint64_t decoder_params, FreezePolicy policy,
                         std::optional<std::uint64_t> encoder_base_override,
                         std::size_t num_clients) {
  AccountingReport report;
  report.encoder_base_params =
      encoder_base_override ? *encoder_base_override
                            : encoder_base_param_count(cfg);
  report.decoder_params = decoder_params;
  report.adapter_params = spec ? adapter_param_count(cfg, *spec) : 0;
  report.num_clients = num_clients;
  switch (policy) {
    case FreezePolicy::all_trainable:
      report.trainable = report.total();
      break;
    case FreezePolicy::freeze_encoder_base:
      report.trainable = report.decoder_params + report.adapter_params;
      break;
    case FreezePolicy::freeze_all_but_adapters:
      if (!spec)
        throw std::invalid_argument(
            "account: freeze_all_but_adapters without adapters");
      report.trainable = report.adapter_params;
      break;
  }
  return report;
}

void write_variant_report_csv(const std::string& path,
                              const std::vector<VariantReportRow>& rows) {
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("write_variant_report_csv: cannot open " + path);
  os << "variant,updated_para_pct,adapter_params,trainable,total,"
        "source_wer,target_wer\n";
  for (const VariantReportRow& row : rows) {
    std::ostringstream line;
    line << row.variant << ',' << row.updated_percent << ','
         << row.adapter_params << ',' << row.trainable << ',' << row.total
         << ',';
    if (row.source_wer) line << *row.source_wer;
    line << ',';
    if (row.target_wer) line << *row.target_wer;
    os << line.str() << '\n';
  }
}

}  // namespace fedadapt
