// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Fixture seeds and thresholds are pinned; every run is
// deterministic.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fedadapt/accounting.hpp"
#include "fedadapt/checkpoint.hpp"
#include "fedadapt/fed.hpp"
#include "fedadapt/metrics.hpp"
#include "fedadapt/pipeline.hpp"

using namespace fedadapt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome fail(std::string detail) { return {false, std::move(detail)}; }
Outcome pass(std::string detail) { return {true, std::move(detail)}; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

const AdapterVariant kVariants[] = {
    AdapterVariant::separate, AdapterVariant::seq_end, AdapterVariant::seq_both,
    AdapterVariant::parallel_end, AdapterVariant::parallel_both};

// ---- criterion 1: parameter accounting at the published scale --------------

Outcome criterion_accounting() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig cfg;
  cfg.d = 512;
  cfg.layers = 17;
  cfg.kernel = 32;
  const std::uint64_t encoder_base = 103050000;
  const std::uint64_t decoder = 3910000;

  std::ostringstream detail;
  for (AdapterVariant v : kVariants) {
    AdapterSpec spec;
    spec.variant = v;
    spec.bottleneck = 256;
    const AccountingReport report =
        account(cfg, spec, decoder, FreezePolicy::freeze_all_but_adapters,
                encoder_base, 64);
    const double expected = spec.both_positions() ? 7.71 : 4.01;
    const double got = report.updated_percent();
    if (std::abs(got - expected) > 0.02)
      return fail(std::string(to_string(v)) + " updated% " +
                  std::to_string(got) + " vs " + std::to_string(expected));
    if (!spec.both_positions() && report.adapter_params != 4469504)
      return fail(std::string(to_string(v)) + " adapter params " +
                  std::to_string(report.adapter_params) + " != 4469504");
  }
  const double elapsed = seconds_since(t0);
  if (elapsed >= 1.0) return fail("runtime " + std::to_string(elapsed) + "s");
  detail << "4.01% / 7.71% within 0.02pp, 4,469,504 per single position, "
         << elapsed << "s";
  return pass(detail.str());
}

// ---- criterion 2: sample-budget parity --------------------------------------

Outcome criterion_budget_parity() {
  const FedConfig fed;  // defaults: 64 clients x batch 10 x 1000 x 1
  const CentralizedStageConfig central;  // defaults: 5000 x 128
  const std::uint64_t fed_samples = fed.samples_total();
  const std::uint64_t central_samples =
      std::uint64_t(central.iterations) * central.batch;
  if (fed_samples != 640000)
    return fail("federated default budget " + std::to_string(fed_samples));
  if (central_samples != 640000)
    return fail("centralized default budget " + std::to_string(central_samples));
  const ExperimentConfig from_empty =
      ExperimentConfig::from_json_text(R"({"seed": 0})");
  if (from_empty.fed.fed.samples_total() != 640000)
    return fail("config-default federated budget mismatch");
  return pass("64*10*1000*1 == 5000*128 == 640000, exact");
}

// ---- criterion 3: gradient oracle over every trainable parameter ------------

Outcome criterion_gradient_oracle() {
  ModelConfig cfg;
  cfg.d_in = 4;
  cfg.d = 8;
  cfg.layers = 2;
  cfg.ffn_mult = 2;
  cfg.kernel = 3;
  cfg.vocab = 5;
  cfg.use_attention = true;
  cfg.use_conv = true;

  std::ostringstream detail;
  for (AdapterVariant v : kVariants) {
    const auto t0 = std::chrono::steady_clock::now();
    AdapterSpec spec;
    spec.variant = v;
    spec.bottleneck = 4;
    Tape tape;
    ParameterTree tree = build_encoder(cfg, spec, 99);
    Rng rng(100);
    add_decoder_head(tree, cfg, rng);
    tree.bind_tape(&tape);
    tree.set_freeze(FreezePolicy::all_trainable);
    // move adapters off their zero init so their gradients are generic
    for (const auto& [path, leaf] : tree.leaves())
      if (is_adapter_path(path)) {
        Tensor t = leaf.tensor;
        Rng leaf_rng(path.size() * 131);
        for (real& x : t.values()) x = real(leaf_rng.uniform(-0.4, 0.4));
      }

    Rng feat_rng(777);
    Tensor features = Tensor::zeros({5, cfg.d_in});
    for (real& x : features.values()) x = real(feat_rng.uniform(-1, 1));
    const std::vector<int> labels{0, 1, 2, 3, 4};
    const std::vector<bool> mask(5, true);
    auto forward = [&] {
      return softmax_xent(model_logits(tree, cfg, spec, features), labels,
                          mask);
    };

    tape.rewind();
    tree.zero_grads();
    Tensor loss = forward();
    backward(loss);
    GradMap analytic = collect_grads(tree);
    tape.rewind();

    double max_rel = 0;
    std::size_t checked = 0;
    const double step = 1e-5;
    NoGradGuard guard(&tape);
    for (auto& [path, grads] : analytic) {
      Tensor leaf = tree.at(path);
      for (std::size_t i = 0; i < leaf.size(); ++i) {
        const double v0 = double(leaf.values()[i]);
        leaf.values()[i] = real(v0 + step);
        const double up = double(forward().item());
        leaf.values()[i] = real(v0 - step);
        const double down = double(forward().item());
        leaf.values()[i] = real(v0);
        const double numeric = (up - down) / (2 * step);
        const double denom = std::max(
            {std::abs(double(grads[i])), std::abs(numeric), 1e-6});
        max_rel = std::max(max_rel,
                           std::abs(double(grads[i]) - numeric) / denom);
        ++checked;
      }
    }
    const double elapsed = seconds_since(t0);
    if (max_rel >= 1e-4)
      return fail(std::string(to_string(v)) + " max rel err " +
                  std::to_string(max_rel));
    if (elapsed >= 60.0)
      return fail(std::string(to_string(v)) + " runtime " +
                  std::to_string(elapsed) + "s");
    detail << to_string(v) << ":" << checked << " params, rel<" << max_rel
           << "; ";
  }
  return pass(detail.str());
}

// ---- criterion 4: FedAvg equivalences ---------------------------------------

struct FedFixture {
  ModelConfig model;
  std::optional<AdapterSpec> spec;
  DomainDataset data;
  BatchLossFn loss;
};

FedFixture small_fed_fixture(std::size_t n_examples) {
  FedFixture fx;
  fx.model.d_in = 6;
  fx.model.d = 12;
  fx.model.layers = 1;
  fx.model.ffn_mult = 2;
  fx.model.kernel = 3;
  fx.model.vocab = 5;
  AdapterSpec spec;
  spec.variant = AdapterVariant::seq_end;
  spec.bottleneck = 4;
  fx.spec = spec;
  CorpusConfig corpus;
  corpus.d_in = 6;
  corpus.vocab = 5;
  corpus.t_min = 5;
  corpus.t_max = 9;
  fx.data = generate_domain(make_source_spec(corpus, 51), n_examples, 52);
  fx.loss = frame_xent_loss(fx.model, fx.spec);
  return fx;
}

ParameterTree fed_fixture_tree(const FedFixture& fx, std::uint64_t seed) {
  ParameterTree tree = build_encoder(fx.model, fx.spec, seed);
  Rng rng(seed + 1);
  add_decoder_head(tree, fx.model, rng);
  // nonzero adapters so trainable values actually move
  for (const auto& [path, leaf] : tree.leaves())
    if (is_adapter_path(path)) {
      Tensor t = leaf.tensor;
      Rng leaf_rng(path.size() * 7 + seed);
      for (real& x : t.values()) x = real(leaf_rng.uniform(-0.3, 0.3));
    }
  tree.set_freeze(FreezePolicy::freeze_all_but_adapters);
  return tree;
}

double max_trainable_diff(const ParameterTree& a, const ParameterTree& b) {
  double worst = 0;
  for (const auto& [path, leaf] : a.leaves()) {
    if (leaf.frozen) continue;
    const auto& av = leaf.tensor.values();
    const auto& bv = b.at(path).values();
    for (std::size_t i = 0; i < av.size(); ++i)
      worst = std::max(worst, std::abs(double(av[i]) - double(bv[i])));
  }
  return worst;
}

Outcome criterion_fedavg_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();

  // (a) K=1 with additive server apply == centralized SGD, 50 rounds
  const FedFixture fx = small_fed_fixture(20);
  ParameterTree fed_tree = fed_fixture_tree(fx, 7);
  FedConfig cfg;
  cfg.num_clients = 1;
  cfg.client_batch = 4;
  cfg.rounds = 50;
  cfg.client_lr = real(0.05);
  cfg.plain_average = true;
  cfg.seed = 1;
  AdamState server;
  Rng rng(2);
  auto clients = make_clients(fed_tree, {fx.data}, cfg);
  for (std::size_t r = 0; r < cfg.rounds; ++r)
    run_round(fed_tree, clients, cfg, server, rng, fx.loss);

  Tape central_tape;
  ParameterTree central_tree = fed_fixture_tree(fx, 7);
  central_tree.bind_tape(&central_tape);
  run_centralized(central_tree, 50, 4, real(0.05), OptimizerKind::sgd, fx.data,
                  fx.loss, nullptr, 0);
  const double diff_k1 = max_trainable_diff(fed_tree, central_tree);
  if (!(diff_k1 <= 1e-12))
    return fail("K=1 equivalence: max param diff " + std::to_string(diff_k1));

  // (b) K=64 aggregation invariant to client permutation
  const FedFixture fx64 = small_fed_fixture(128);
  FedConfig cfg64;
  cfg64.num_clients = 64;
  cfg64.client_batch = 2;
  cfg64.rounds = 1;
  cfg64.client_lr = real(0.05);
  cfg64.server_lr = real(0.01);
  cfg64.seed = 3;

  auto run_one_round = [&](bool permute) {
    ParameterTree global = fed_fixture_tree(fx64, 11);
    Rng shard_rng(4);
    auto shards = partition_dataset(fx64.data, 64, PartitionScheme::iid_shard,
                                    shard_rng);
    auto clients64 = make_clients(global, shards, cfg64);
    if (permute) {
      // reverse presentation order; ids stay with their shards
      std::reverse(clients64.begin(), clients64.end());
    }
    AdamState server64;
    Rng round_rng(5);
    run_round(global, clients64, cfg64, server64, round_rng, fx64.loss);
    return global;
  };
  ParameterTree natural = run_one_round(false);
  ParameterTree permuted = run_one_round(true);
  const double diff_perm = max_trainable_diff(natural, permuted);
  if (!(diff_perm <= 1e-12))
    return fail("K=64 permutation: max param diff " + std::to_string(diff_perm));

  const double elapsed = seconds_since(t0);
  if (elapsed >= 60.0) return fail("runtime " + std::to_string(elapsed) + "s");
  std::ostringstream detail;
  detail << "K=1 diff " << diff_k1 << ", K=64 permutation diff " << diff_perm
         << ", " << elapsed << "s";
  return pass(detail.str());
}

// ---- criterion 5: freeze contract over a 100-round fedtune ------------------

Outcome criterion_freeze_contract() {
  const FedFixture fx = small_fed_fixture(64);
  ParameterTree global = fed_fixture_tree(fx, 23);

  std::map<std::string, std::vector<real>> base_before;
  for (const auto& [path, leaf] : global.leaves())
    if (leaf.frozen) base_before[path] = leaf.tensor.values();
  const std::string adapters_before = trainable_digest(global);

  FedConfig cfg;
  cfg.num_clients = 8;
  cfg.client_batch = 2;
  cfg.rounds = 100;
  cfg.client_lr = real(0.05);
  cfg.server_lr = real(0.01);
  cfg.seed = 9;
  AdamState server;
  run_federated(global, server, fx.data, cfg, fx.loss, nullptr, 0);

  std::size_t frozen_checked = 0;
  for (const auto& [path, before] : base_before) {
    ++frozen_checked;
    if (global.at(path).values() != before)
      return fail("frozen leaf changed: " + path);
  }
  if (trainable_digest(global) == adapters_before)
    return fail("adapter leaves did not change at all");
  return pass(std::to_string(frozen_checked) +
              " frozen leaves bitwise unchanged after 100 rounds; adapters "
              "moved");
}

// ---- criterion 6: identity at init, bitwise on logits -----------------------

Outcome criterion_identity_at_init() {
  ModelConfig cfg;
  cfg.d_in = 6;
  cfg.d = 12;
  cfg.layers = 2;
  cfg.ffn_mult = 2;
  cfg.kernel = 3;
  cfg.vocab = 5;

  Tape bare_tape;
  ParameterTree bare = build_encoder(cfg, std::nullopt, 61);
  Rng head_rng(62);
  add_decoder_head(bare, cfg, head_rng);
  bare.bind_tape(&bare_tape);

  for (AdapterVariant v : kVariants) {
    AdapterSpec spec;
    spec.variant = v;
    spec.bottleneck = 4;
    spec.internal_residual = true;
    Tape tape;
    ParameterTree adapted = bare.clone(&tape);
    insert_adapters(adapted, cfg, spec, 63);
    adapted.set_freeze(FreezePolicy::freeze_all_but_adapters);
    for (int trial = 0; trial < 20; ++trial) {
      Rng feat_rng(1000 + trial);
      const std::size_t T = 3 + trial % 8;
      Tensor x = Tensor::zeros({T, cfg.d_in});
      for (real& val : x.values()) val = real(feat_rng.uniform(-1, 1));
      NoGradGuard g1(&bare_tape), g2(&tape);
      const Tensor bare_logits = model_logits(bare, cfg, std::nullopt, x);
      const Tensor adapted_logits = model_logits(adapted, cfg, spec, x);
      if (bare_logits.values() != adapted_logits.values())
        return fail(std::string(to_string(v)) +
                    ": logits differ bitwise at init");
    }
  }
  return pass("5 variants x 20 inputs: logits bitwise identical to the "
              "adapter-free model");
}

// ---- criteria 7+8: pipeline fixture with pinned thresholds ------------------

// Measured once at the pinned seed and committed; see the per-variant fed vs
// centralized target-WER gaps of the fixture run.
constexpr double kMaxTargetWerGap = 0.05;
constexpr std::uint64_t kFixtureSeed = 2024;

struct ArmResult {
  double target_before = 0, target_after = 0;
  double source_before = 0, source_after = 0;
};

struct PipelineFixtureResult {
  std::map<std::string, ArmResult> fed;      // by variant
  std::map<std::string, ArmResult> central;  // by variant
  bool budget_checked = false;
  std::string error;
};

std::string fixture_config_json(const std::string& root) {
  return R"({
    "seed": 2024,
    "out_dir": ")" + root + R"(",
    "model": {"d_in": 8, "d": 16, "layers": 2, "ffn_mult": 2, "kernel": 3,
              "use_attention": true, "use_conv": true, "vocab": 8},
    "adapter": {"variant": "seq_end", "bottleneck": 4},
    "data": {
      "ssl_fixture": ")" + root + R"(/ssl.fixture",
      "source_train": ")" + root + R"(/source_train.fixture",
      "source_eval": ")" + root + R"(/source_eval.fixture",
      "target_train": ")" + root + R"(/target_train.fixture",
      "target_eval": ")" + root + R"(/target_eval.fixture"
    },
    "generate": {"d_in": 8, "vocab": 8, "noise": 0.3, "mean_scale": 1.2,
                 "target_rotation": 1.2, "target_bias": 0.8, "prior_tilt": 1.5,
                 "t_min": 6, "t_max": 12, "run_min": 2, "run_max": 4,
                 "counts": {"ssl": 96, "source_train": 192, "source_eval": 48,
                            "target_train": 192, "target_eval": 48}},
    "ssl": {"codebook": 8, "dq": 4, "mask_prob": 0.2, "span": 2,
            "steps": 300, "batch": 8, "lr": 0.01, "optimizer": "adam"},
    "decoder_train": {"steps": 250, "batch": 8, "lr": 0.01, "optimizer": "adam",
                      "encoder_checkpoint": ")" + root + R"(/enc/checkpoint.bin"},
    "fed": {"clients": 8, "client_batch": 4, "rounds": 150,
            "local_iterations": 1, "client_lr": 0.02, "server_lr": 0.005,
            "eval_every": 50, "checkpoint": ")" + root + R"(/dec/checkpoint.bin"},
    "centralized": {"iterations": 150, "batch": 32, "lr": 0.005,
                    "optimizer": "adam",
                    "checkpoint": ")" + root + R"(/dec/checkpoint.bin"}
  })";
}

const PipelineFixtureResult& pipeline_fixture() {
  static PipelineFixtureResult result = [] {
    PipelineFixtureResult out;
    try {
      const std::string root = "acceptance_fixture_out";
      fs::remove_all(root);
      ExperimentConfig cfg =
          ExperimentConfig::from_json_text(fixture_config_json(root));

      stage_make_data(cfg);
      ExperimentConfig enc = cfg;
      enc.out_dir = root + "/enc";
      stage_pretrain_encoder(enc);
      ExperimentConfig dec = cfg;
      dec.out_dir = root + "/dec";
      dec.decoder_train.strategy = DecoderStrategy::without_adapters;
      stage_pretrain_decoder(dec);

      // hard budget parity: 8*4*150 == 150*32 == 4800 samples per arm
      const std::uint64_t fed_budget = cfg.fed.fed.samples_total();
      const std::uint64_t central_budget =
          std::uint64_t(cfg.centralized.iterations) * cfg.centralized.batch;
      if (fed_budget != central_budget)
        throw std::logic_error("fixture budgets differ");
      out.budget_checked = true;

      for (AdapterVariant v : kVariants) {
        ExperimentConfig fed = cfg;
        fed.out_dir = root + "/fed_" + to_string(v);
        fed.adapter->variant = v;
        const StageResult fr = stage_fedtune(fed);
        out.fed[to_string(v)] =
            ArmResult{fr.metrics.at("target_wer_before"),
                      fr.metrics.at("target_wer_after"),
                      fr.metrics.at("source_wer_before"),
                      fr.metrics.at("source_wer_after")};

        ExperimentConfig cen = cfg;
        cen.out_dir = root + "/cen_" + to_string(v);
        cen.adapter->variant = v;
        const StageResult cr = stage_centralized_tune(cen);
        out.central[to_string(v)] =
            ArmResult{cr.metrics.at("target_wer_before"),
                      cr.metrics.at("target_wer_after"),
                      cr.metrics.at("source_wer_before"),
                      cr.metrics.at("source_wer_after")};
      }
    } catch (const std::exception& e) {
      out.error = e.what();
    }
    return out;
  }();
  return result;
}

Outcome criterion_tradeoff_direction() {
  const PipelineFixtureResult& fx = pipeline_fixture();
  if (!fx.error.empty()) return fail("fixture failed: " + fx.error);
  std::ostringstream detail;
  for (const auto& [variant, arm] : fx.fed) {
    if (!(arm.target_after < arm.target_before))
      return fail(variant + ": target WER did not strictly decrease (" +
                  std::to_string(arm.target_before) + " -> " +
                  std::to_string(arm.target_after) + ")");
    if (arm.source_after < arm.source_before)
      return fail(variant + ": source WER decreased (" +
                  std::to_string(arm.source_before) + " -> " +
                  std::to_string(arm.source_after) + ")");
    detail << variant << " tgt " << arm.target_before << "->"
           << arm.target_after << " src " << arm.source_before << "->"
           << arm.source_after << "; ";
  }
  return pass(detail.str());
}

Outcome criterion_fed_vs_centralized() {
  const PipelineFixtureResult& fx = pipeline_fixture();
  if (!fx.error.empty()) return fail("fixture failed: " + fx.error);
  if (!fx.budget_checked) return fail("budget parity was not enforced");
  std::size_t within = 0;
  std::ostringstream detail;
  for (const auto& [variant, fed_arm] : fx.fed) {
    const ArmResult& central_arm = fx.central.at(variant);
    const double gap =
        std::abs(fed_arm.target_after - central_arm.target_after);
    if (gap < kMaxTargetWerGap) ++within;
    detail << variant << " gap " << gap << "; ";
  }
  detail << within << "/5 within " << kMaxTargetWerGap;
  if (within < 4) return fail(detail.str());
  return pass(detail.str());
}

// ---- criterion 9: WER oracle ------------------------------------------------

// Exhaustive-alignment recursion (match/substitute, delete, insert), memoized
// per pair; no op-count bookkeeping shared with the production DP.
int oracle_distance(const std::vector<int>& a, const std::vector<int>& b,
                    std::size_t i, std::size_t j, std::vector<int>& memo,
                    std::size_t cols) {
  if (i == a.size()) return static_cast<int>(b.size() - j);
  if (j == b.size()) return static_cast<int>(a.size() - i);
  int& slot = memo[i * cols + j];
  if (slot >= 0) return slot;
  const int sub = oracle_distance(a, b, i + 1, j + 1, memo, cols) +
                  (a[i] == b[j] ? 0 : 1);
  const int del = oracle_distance(a, b, i + 1, j, memo, cols) + 1;
  const int ins = oracle_distance(a, b, i, j + 1, memo, cols) + 1;
  slot = std::min(sub, std::min(del, ins));
  return slot;
}

int oracle_distance(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t cols = b.size() + 1;
  std::vector<int> memo((a.size() + 1) * cols, -1);
  return oracle_distance(a, b, 0, 0, memo, cols);
}

// Pure enumeration with no memo, for cross-checking the oracle itself on
// short pairs.
int enumerated_distance(const std::vector<int>& a, const std::vector<int>& b,
                        std::size_t i, std::size_t j) {
  if (i == a.size()) return static_cast<int>(b.size() - j);
  if (j == b.size()) return static_cast<int>(a.size() - i);
  const int sub =
      enumerated_distance(a, b, i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
  const int del = enumerated_distance(a, b, i + 1, j) + 1;
  const int ins = enumerated_distance(a, b, i, j + 1) + 1;
  return std::min(sub, std::min(del, ins));
}

Outcome criterion_wer_oracle() {
  std::vector<std::vector<int>> sequences{{}};
  for (std::size_t len = 1; len <= 6; ++len) {
    const std::size_t start = sequences.size();
    for (std::size_t s = 0; s < start; ++s) {
      if (sequences[s].size() != len - 1) continue;
      for (int symbol = 0; symbol < 3; ++symbol) {
        std::vector<int> next = sequences[s];
        next.push_back(symbol);
        sequences.push_back(std::move(next));
      }
    }
  }
  // 1 + 3 + 9 + ... + 729 = 1093 sequences
  if (sequences.size() != 1093)
    return fail("sequence enumeration produced " +
                std::to_string(sequences.size()));

  std::size_t pairs = 0;
  for (const auto& ref : sequences)
    for (const auto& hyp : sequences) {
      const WerBreakdown wb = edit_distance(ref, hyp);
      const int expected = oracle_distance(ref, hyp);
      if (static_cast<int>(wb.total_errors()) != expected)
        return fail("mismatch at pair " + std::to_string(pairs));
      if (ref.size() + hyp.size() <= 6 &&
          enumerated_distance(ref, hyp, 0, 0) != expected)
        return fail("oracle self-check failed at pair " +
                    std::to_string(pairs));
      ++pairs;
    }
  return pass(std::to_string(pairs) + " pairs exact on S+D+I totals");
}

}  // namespace

int main() {
  const struct {
    int id;
    const char* name;
    std::function<Outcome()> run;
  } criteria[] = {
      {1, "parameter accounting (paper-exact)", criterion_accounting},
      {2, "sample-budget parity", criterion_budget_parity},
      {3, "gradient oracle over 5 adapter variants", criterion_gradient_oracle},
      {4, "FedAvg equivalence and permutation invariance",
       criterion_fedavg_equivalence},
      {5, "freeze contract over 100 federated rounds",
       criterion_freeze_contract},
      {6, "identity-at-init, bitwise logits", criterion_identity_at_init},
      {7, "trade-off direction after federated tuning",
       criterion_tradeoff_direction},
      {8, "federated ~ centralized within pinned gap",
       criterion_fed_vs_centralized},
      {9, "WER oracle, exhaustive alignment", criterion_wer_oracle},
  };

  bool all_pass = true;
  for (const auto& criterion : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = criterion.run();
    } catch (const std::exception& e) {
      outcome = fail(std::string("exception: ") + e.what());
    }
    const double elapsed = seconds_since(t0);
    std::printf("%s criterion %d: %s [%.2fs] %s\n",
                outcome.pass ? "PASS" : "FAIL", criterion.id, criterion.name,
                elapsed, outcome.detail.c_str());
    std::fflush(stdout);
    all_pass = all_pass && outcome.pass;
  }
  return all_pass ? 0 : 1;
}
