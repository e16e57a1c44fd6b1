#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedadapt/adapter.hpp"
#include "fedadapt/conformer.hpp"
#include "fedadapt/parameter_tree.hpp"

namespace fedadapt {

struct AccountingReport {
  std::uint64_t encoder_base_params = 0;
  std::uint64_t decoder_params = 0;
  std::uint64_t adapter_params = 0;
  std::uint64_t trainable = 0;
  std::size_t bytes_per_value = sizeof(real);
  std::size_t num_clients = 1;

  std::uint64_t total() const {
    return encoder_base_params + decoder_params + adapter_params;
  }
  double updated_percent() const {
    return 100.0 * static_cast<double>(trainable) /
           static_cast<double>(total());
  }
  std::uint64_t bytes_per_round() const {
    return trainable * bytes_per_value * num_clients;
  }
};

// Closed-form parameter counts for the encoder base (frontend + conformer
// layers, no adapters) at a given config.
std::uint64_t encoder_base_param_count(const ModelConfig& cfg);

// Adapter total for a variant: instances * (2db + b + d).
std::uint64_t adapter_param_count(const ModelConfig& cfg,
                                  const AdapterSpec& spec);

// Closed-form accounting. The encoder base is computed from the config
// unless an override is supplied (full-scale runs use the published totals,
// which include components outside this model's shapes). `trainable`
// follows the freeze policy.
AccountingReport account(const ModelConfig& cfg,
                         const std::optional<AdapterSpec>& spec,
                         std::uint64_t decoder_params, FreezePolicy policy,
                         std::optional<std::uint64_t> encoder_base_override =
                             std::nullopt,
                         std::size_t num_clients = 1);

struct VariantReportRow {
  std::string variant;
  double updated_percent = 0.0;
  std::uint64_t adapter_params = 0;
  std::uint64_t trainable = 0;
  std::uint64_t total = 0;
  std::optional<double> source_wer;
  std::optional<double> target_wer;
};

// CSV with one row per model/variant: variant, updated-param %, source WER,
// target WER (WER columns blank when not evaluated).
void write_variant_report_csv(const std::string& path,
                              const std::vector<VariantReportRow>& rows);

}  // namespace fedadapt
