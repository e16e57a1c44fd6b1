#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedadapt/accounting.hpp"
#include "fedadapt/adapter.hpp"
#include "fedadapt/checkpoint.hpp"
#include "fedadapt/conformer.hpp"
#include "fedadapt/data.hpp"
#include "fedadapt/fed.hpp"
#include "fedadapt/metrics.hpp"

namespace fedadapt {

struct DataPaths {
  std::string ssl_fixture;
  std::string source_train, source_eval;
  std::string target_train, target_eval;
};

struct TrainLoopConfig {
  std::size_t steps = 0;
  std::size_t batch = 8;
  real lr = real(1e-3);
  OptimizerKind optimizer = OptimizerKind::adam;
  std::size_t eval_every = 0;
};

struct SslStageConfig : TrainLoopConfig {
  std::size_t codebook = 16;
  std::size_t dq = 8;
  double mask_prob = 0.15;
  std::size_t span = 2;
};

enum class DecoderStrategy { without_adapters, with_adapters };
const char* to_string(DecoderStrategy s);
DecoderStrategy decoder_strategy_from_string(const std::string& s);

struct DecoderStageConfig : TrainLoopConfig {
  DecoderStrategy strategy = DecoderStrategy::without_adapters;
  std::string encoder_checkpoint;
};

struct FedStageConfig {
  FedConfig fed;
  std::size_t eval_every = 0;
  std::string checkpoint;
};

struct CentralizedStageConfig {
  std::size_t iterations = 5000;
  std::size_t batch = 128;
  real lr = real(2e-4);
  OptimizerKind optimizer = OptimizerKind::adam;
  std::size_t eval_every = 0;
  std::string checkpoint;
};

struct AccountingStageConfig {
  bool full_scale = false;
  std::optional<std::uint64_t> encoder_base_params;
  std::uint64_t decoder_params = 0;  // 0 = closed form from the model config
  std::optional<std::size_t> bottleneck;
  std::size_t num_clients = 64;
};

struct GenerateStageConfig {
  CorpusConfig corpus;
  std::map<std::string, std::size_t> counts;  // fixture name -> examples
};

// One experiment = one config file. Parsing is strict: unknown keys are
// rejected at every level.
struct ExperimentConfig {
  std::string stage;  // optional; must match the invoked stage when set
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  ModelConfig model;
  std::optional<AdapterSpec> adapter;
  DataPaths data;
  SslStageConfig ssl;
  DecoderStageConfig decoder_train;
  FedStageConfig fed;
  CentralizedStageConfig centralized;
  AccountingStageConfig accounting;
  GenerateStageConfig generate;
  std::string eval_checkpoint;
  std::string canonical_json;  // sorted-key dump, hashed into manifests

  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig load(const std::string& path);
};

struct StageResult {
  std::string checkpoint_path;
  std::string manifest_path;
  std::map<std::string, double> metrics;
};

StageResult stage_make_data(const ExperimentConfig& cfg);
StageResult stage_pretrain_encoder(const ExperimentConfig& cfg);
StageResult stage_pretrain_decoder(const ExperimentConfig& cfg);
StageResult stage_fedtune(const ExperimentConfig& cfg);
StageResult stage_centralized_tune(const ExperimentConfig& cfg);
StageResult stage_ablation(const ExperimentConfig& cfg);
StageResult stage_eval(const ExperimentConfig& cfg);
StageResult stage_params_report(const ExperimentConfig& cfg);

// The ten stage-3 combinations: five variants, adapters either carried over
// from the decoder-pretraining stage or freshly inserted.
struct FamilyCombo {
  AdapterVariant variant;
  bool adapters_pretrained;
};
std::vector<FamilyCombo> enumerate_stage3_family();

// Batch loss used by the decoder/fedtune/centralized stages: mean per-frame
// cross-entropy over the batch.
BatchLossFn frame_xent_loss(const ModelConfig& cfg,
                            const std::optional<AdapterSpec>& spec);

}  // namespace fedadapt
