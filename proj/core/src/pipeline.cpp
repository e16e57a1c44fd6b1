#include "fedadapt/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "fedadapt/ssl.hpp"

namespace fedadapt {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(DecoderStrategy s) {
  return s == DecoderStrategy::without_adapters ? "without_adapters"
                                                : "with_adapters";
}

DecoderStrategy decoder_strategy_from_string(const std::string& s) {
  if (s == "without_adapters") return DecoderStrategy::without_adapters;
  if (s == "with_adapters") return DecoderStrategy::with_adapters;
  throw std::invalid_argument("unknown decoder strategy: " + s);
}

// ---- config parsing ---------------------------------------------------------

namespace {

void check_keys(const json& j, const std::string& section,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw std::invalid_argument("config: " + section + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (key == a) {
        known = true;
        break;
      }
    if (!known)
      throw std::invalid_argument("config: unknown key \"" + key + "\" in " +
                                  section);
  }
}

ModelConfig parse_model(const json& j) {
  check_keys(j, "model",
             {"d_in", "d", "layers", "ffn_mult", "kernel", "use_attention",
              "use_conv", "vocab", "layernorm_eps"});
  ModelConfig cfg;
  if (j.contains("d_in")) cfg.d_in = j.at("d_in").get<std::size_t>();
  if (j.contains("d")) cfg.d = j.at("d").get<std::size_t>();
  if (j.contains("layers")) cfg.layers = j.at("layers").get<std::size_t>();
  if (j.contains("ffn_mult")) cfg.ffn_mult = j.at("ffn_mult").get<std::size_t>();
  if (j.contains("kernel")) cfg.kernel = j.at("kernel").get<std::size_t>();
  if (j.contains("use_attention"))
    cfg.use_attention = j.at("use_attention").get<bool>();
  if (j.contains("use_conv")) cfg.use_conv = j.at("use_conv").get<bool>();
  if (j.contains("vocab")) cfg.vocab = j.at("vocab").get<std::size_t>();
  if (j.contains("layernorm_eps"))
    cfg.layernorm_eps = real(j.at("layernorm_eps").get<double>());
  cfg.validate();
  return cfg;
}

AdapterSpec parse_adapter(const json& j) {
  check_keys(j, "adapter",
             {"variant", "bottleneck", "nonlinearity", "internal_residual"});
  AdapterSpec spec;
  if (j.contains("variant"))
    spec.variant = adapter_variant_from_string(j.at("variant").get<std::string>());
  if (j.contains("bottleneck"))
    spec.bottleneck = j.at("bottleneck").get<std::size_t>();
  if (j.contains("nonlinearity"))
    spec.nonlinearity =
        nonlinearity_from_string(j.at("nonlinearity").get<std::string>());
  if (j.contains("internal_residual"))
    spec.internal_residual = j.at("internal_residual").get<bool>();
  return spec;
}

DataPaths parse_data(const json& j) {
  check_keys(j, "data", {"ssl_fixture", "source_train", "source_eval",
                         "target_train", "target_eval"});
  DataPaths d;
  if (j.contains("ssl_fixture")) d.ssl_fixture = j.at("ssl_fixture");
  if (j.contains("source_train")) d.source_train = j.at("source_train");
  if (j.contains("source_eval")) d.source_eval = j.at("source_eval");
  if (j.contains("target_train")) d.target_train = j.at("target_train");
  if (j.contains("target_eval")) d.target_eval = j.at("target_eval");
  return d;
}

void parse_train_loop(const json& j, TrainLoopConfig& cfg) {
  if (j.contains("steps")) cfg.steps = j.at("steps").get<std::size_t>();
  if (j.contains("batch")) cfg.batch = j.at("batch").get<std::size_t>();
  if (j.contains("lr")) cfg.lr = real(j.at("lr").get<double>());
  if (j.contains("optimizer"))
    cfg.optimizer =
        optimizer_kind_from_string(j.at("optimizer").get<std::string>());
  if (j.contains("eval_every"))
    cfg.eval_every = j.at("eval_every").get<std::size_t>();
}

SslStageConfig parse_ssl(const json& j) {
  check_keys(j, "ssl", {"codebook", "dq", "mask_prob", "span", "steps", "batch",
                        "lr", "optimizer", "eval_every"});
  SslStageConfig cfg;
  parse_train_loop(j, cfg);
  if (j.contains("codebook")) cfg.codebook = j.at("codebook").get<std::size_t>();
  if (j.contains("dq")) cfg.dq = j.at("dq").get<std::size_t>();
  if (j.contains("mask_prob")) cfg.mask_prob = j.at("mask_prob").get<double>();
  if (j.contains("span")) cfg.span = j.at("span").get<std::size_t>();
  return cfg;
}

DecoderStageConfig parse_decoder(const json& j) {
  check_keys(j, "decoder_train", {"strategy", "encoder_checkpoint", "steps",
                                  "batch", "lr", "optimizer", "eval_every"});
  DecoderStageConfig cfg;
  parse_train_loop(j, cfg);
  if (j.contains("strategy"))
    cfg.strategy =
        decoder_strategy_from_string(j.at("strategy").get<std::string>());
  if (j.contains("encoder_checkpoint"))
    cfg.encoder_checkpoint = j.at("encoder_checkpoint");
  return cfg;
}

FedStageConfig parse_fed(const json& j) {
  check_keys(j, "fed",
             {"clients", "client_batch", "rounds", "local_iterations",
              "client_lr", "server_lr", "plain_average", "participation",
              "eval_every", "checkpoint"});
  FedStageConfig cfg;
  if (j.contains("clients"))
    cfg.fed.num_clients = j.at("clients").get<std::size_t>();
  if (j.contains("client_batch"))
    cfg.fed.client_batch = j.at("client_batch").get<std::size_t>();
  if (j.contains("rounds")) cfg.fed.rounds = j.at("rounds").get<std::size_t>();
  if (j.contains("local_iterations"))
    cfg.fed.local_iterations_per_round =
        j.at("local_iterations").get<std::size_t>();
  if (j.contains("client_lr"))
    cfg.fed.client_lr = real(j.at("client_lr").get<double>());
  if (j.contains("server_lr"))
    cfg.fed.server_lr = real(j.at("server_lr").get<double>());
  if (j.contains("plain_average"))
    cfg.fed.plain_average = j.at("plain_average").get<bool>();
  if (j.contains("participation"))
    cfg.fed.participation = j.at("participation").get<double>();
  if (j.contains("eval_every"))
    cfg.eval_every = j.at("eval_every").get<std::size_t>();
  if (j.contains("checkpoint")) cfg.checkpoint = j.at("checkpoint");
  return cfg;
}

CentralizedStageConfig parse_centralized(const json& j) {
  check_keys(j, "centralized", {"iterations", "batch", "lr", "optimizer",
                                "eval_every", "checkpoint"});
  CentralizedStageConfig cfg;
  if (j.contains("iterations"))
    cfg.iterations = j.at("iterations").get<std::size_t>();
  if (j.contains("batch")) cfg.batch = j.at("batch").get<std::size_t>();
  if (j.contains("lr")) cfg.lr = real(j.at("lr").get<double>());
  if (j.contains("optimizer"))
    cfg.optimizer =
        optimizer_kind_from_string(j.at("optimizer").get<std::string>());
  if (j.contains("eval_every"))
    cfg.eval_every = j.at("eval_every").get<std::size_t>();
  if (j.contains("checkpoint")) cfg.checkpoint = j.at("checkpoint");
  return cfg;
}

AccountingStageConfig parse_accounting(const json& j) {
  check_keys(j, "accounting", {"full_scale", "encoder_base_params",
                               "decoder_params", "bottleneck", "num_clients"});
  AccountingStageConfig cfg;
  if (j.contains("full_scale")) cfg.full_scale = j.at("full_scale").get<bool>();
  if (j.contains("encoder_base_params"))
    cfg.encoder_base_params = j.at("encoder_base_params").get<std::uint64_t>();
  if (j.contains("decoder_params"))
    cfg.decoder_params = j.at("decoder_params").get<std::uint64_t>();
  if (j.contains("bottleneck"))
    cfg.bottleneck = j.at("bottleneck").get<std::size_t>();
  if (j.contains("num_clients"))
    cfg.num_clients = j.at("num_clients").get<std::size_t>();
  return cfg;
}

GenerateStageConfig parse_generate(const json& j) {
  check_keys(j, "generate",
             {"d_in", "vocab", "mean_scale", "noise", "target_rotation",
              "target_bias", "prior_tilt", "t_min", "t_max", "run_min",
              "run_max", "counts"});
  GenerateStageConfig cfg;
  CorpusConfig& c = cfg.corpus;
  if (j.contains("d_in")) c.d_in = j.at("d_in").get<std::size_t>();
  if (j.contains("vocab")) c.vocab = j.at("vocab").get<std::size_t>();
  if (j.contains("mean_scale")) c.mean_scale = j.at("mean_scale").get<double>();
  if (j.contains("noise")) c.noise_scale = j.at("noise").get<double>();
  if (j.contains("target_rotation"))
    c.target_rotation = j.at("target_rotation").get<double>();
  if (j.contains("target_bias"))
    c.target_bias_scale = j.at("target_bias").get<double>();
  if (j.contains("prior_tilt"))
    c.target_prior_tilt = j.at("prior_tilt").get<double>();
  if (j.contains("t_min")) c.t_min = j.at("t_min").get<std::size_t>();
  if (j.contains("t_max")) c.t_max = j.at("t_max").get<std::size_t>();
  if (j.contains("run_min")) c.run_min = j.at("run_min").get<std::size_t>();
  if (j.contains("run_max")) c.run_max = j.at("run_max").get<std::size_t>();
  if (j.contains("counts")) {
    check_keys(j.at("counts"), "generate.counts",
               {"ssl", "source_train", "source_eval", "target_train",
                "target_eval"});
    for (const auto& [key, value] : j.at("counts").items())
      cfg.counts[key] = value.get<std::size_t>();
  }
  return cfg;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") +
                                e.what());
  }
  check_keys(j, "config root",
             {"stage", "seed", "out_dir", "model", "adapter", "data", "ssl",
              "decoder_train", "fed", "centralized", "accounting", "generate",
              "eval"});
  ExperimentConfig cfg;
  if (j.contains("stage")) cfg.stage = j.at("stage").get<std::string>();
  if (j.contains("seed")) {
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.seed_set = true;
  }
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("model")) cfg.model = parse_model(j.at("model"));
  if (j.contains("adapter") && !j.at("adapter").is_null())
    cfg.adapter = parse_adapter(j.at("adapter"));
  if (j.contains("data")) cfg.data = parse_data(j.at("data"));
  if (j.contains("ssl")) cfg.ssl = parse_ssl(j.at("ssl"));
  if (j.contains("decoder_train"))
    cfg.decoder_train = parse_decoder(j.at("decoder_train"));
  if (j.contains("fed")) cfg.fed = parse_fed(j.at("fed"));
  if (j.contains("centralized"))
    cfg.centralized = parse_centralized(j.at("centralized"));
  if (j.contains("accounting"))
    cfg.accounting = parse_accounting(j.at("accounting"));
  if (j.contains("generate")) cfg.generate = parse_generate(j.at("generate"));
  if (j.contains("eval")) {
    check_keys(j.at("eval"), "eval", {"checkpoint"});
    if (j.at("eval").contains("checkpoint"))
      cfg.eval_checkpoint = j.at("eval").at("checkpoint");
  }
  cfg.canonical_json = j.dump();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return from_json_text(buf.str());
}

// ---- stage plumbing ---------------------------------------------------------

namespace {

void require_seed(const ExperimentConfig& cfg) {
  if (!cfg.seed_set)
    throw std::invalid_argument("config: seed is required (no wall-clock seeding)");
}

void require_out_dir(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty())
    throw std::invalid_argument("config: out_dir is required for this stage");
  fs::create_directories(cfg.out_dir);
}

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / name).string();
}

DomainDataset load_fixture(const std::string& path, const char* role) {
  if (path.empty())
    throw std::invalid_argument(std::string("config: no ") + role +
                                " fixture configured");
  if (!fs::exists(path))
    throw std::runtime_error(std::string("missing ") + role + " fixture: " +
                             path);
  return load_dataset(path);
}

std::string write_manifest(const ExperimentConfig& cfg,
                           const std::string& stage,
                           const std::string& input_digest,
                           const std::string& output_digest,
                           const std::map<std::string, double>& metrics) {
  json j;
  j["stage"] = stage;
  j["seed"] = cfg.seed;
  j["config_digest"] = string_digest(cfg.canonical_json);
  j["input_checkpoint_digest"] = input_digest.empty() ? json() : json(input_digest);
  j["output_checkpoint_digest"] =
      output_digest.empty() ? json() : json(output_digest);
  j["metrics"] = metrics;
  const std::string path = out_path(cfg, "manifest.json");
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest " + path);
  os << j.dump(2) << '\n';
  return path;
}

void check_stage_match(const ExperimentConfig& cfg, const char* stage) {
  if (!cfg.stage.empty() && cfg.stage != stage)
    throw std::invalid_argument("config: stage \"" + cfg.stage +
                                "\" does not match invoked stage \"" + stage +
                                "\"");
}

struct TrainEvalSets {
  std::optional<DomainDataset> source_eval;
  std::optional<DomainDataset> target_eval;
};

TrainEvalSets load_eval_sets(const ExperimentConfig& cfg) {
  TrainEvalSets sets;
  if (!cfg.data.source_eval.empty())
    sets.source_eval = load_fixture(cfg.data.source_eval, "source_eval");
  if (!cfg.data.target_eval.empty())
    sets.target_eval = load_fixture(cfg.data.target_eval, "target_eval");
  return sets;
}

EvalFn make_eval_fn(const ModelConfig& model,
                    const std::optional<AdapterSpec>& spec,
                    const TrainEvalSets& sets) {
  if (!sets.source_eval && !sets.target_eval) return nullptr;
  return [&model, &spec, &sets](const ParameterTree& tree) {
    std::vector<EvalEntry> entries;
    if (sets.source_eval) {
      const EvalResult r = evaluate(tree, model, spec, *sets.source_eval);
      entries.push_back({"source", r.wer, r.mean_loss});
    }
    if (sets.target_eval) {
      const EvalResult r = evaluate(tree, model, spec, *sets.target_eval);
      entries.push_back({"target", r.wer, r.mean_loss});
    }
    return entries;
  };
}

void add_eval_metrics(std::map<std::string, double>& metrics,
                      const ParameterTree& tree, const ModelConfig& model,
                      const std::optional<AdapterSpec>& spec,
                      const TrainEvalSets& sets, const std::string& suffix) {
  if (sets.source_eval) {
    const EvalResult r = evaluate(tree, model, spec, *sets.source_eval);
    metrics["source_wer_" + suffix] = r.wer;
    metrics["source_loss_" + suffix] = r.mean_loss;
  }
  if (sets.target_eval) {
    const EvalResult r = evaluate(tree, model, spec, *sets.target_eval);
    metrics["target_wer_" + suffix] = r.wer;
    metrics["target_loss_" + suffix] = r.mean_loss;
  }
}

// Copies the leaves under `prefix` (values only; freeze flags are
// reassigned by the caller's policy).
void copy_subtree(ParameterTree& dst, const ParameterTree& src,
                  const std::string& prefix) {
  for (const auto& [path, leaf] : src.leaves())
    if (path.rfind(prefix, 0) == 0) dst.insert(path, leaf.tensor.clone());
}

}  // namespace

BatchLossFn frame_xent_loss(const ModelConfig& cfg,
                            const std::optional<AdapterSpec>& spec) {
  return [cfg, spec](const ParameterTree& tree, const Batch& batch) {
    if (batch.empty())
      throw std::invalid_argument("frame_xent_loss: empty batch");
    Tensor total;
    for (const Example* ex : batch) {
      const std::vector<bool> mask(ex->tokens.size(), true);
      Tensor loss =
          softmax_xent(model_logits(tree, cfg, spec, ex->features), ex->tokens,
                       mask);
      total = total.defined() ? add(total, loss) : loss;
    }
    return scale(total, real(1) / real(batch.size()));
  };
}

std::vector<FamilyCombo> enumerate_stage3_family() {
  std::vector<FamilyCombo> combos;
  for (AdapterVariant v :
       {AdapterVariant::separate, AdapterVariant::seq_end,
        AdapterVariant::seq_both, AdapterVariant::parallel_end,
        AdapterVariant::parallel_both})
    for (bool pretrained : {false, true})
      combos.push_back(FamilyCombo{v, pretrained});
  return combos;
}

// ---- stages -----------------------------------------------------------------

StageResult stage_make_data(const ExperimentConfig& cfg) {
  check_stage_match(cfg, "make_data");
  require_seed(cfg);
  require_out_dir(cfg);
  const GenerateStageConfig& gen = cfg.generate;
  if (gen.counts.empty())
    throw std::invalid_argument("make_data: generate.counts is empty");

  const DomainSpec source = make_source_spec(gen.corpus, cfg.seed);
  const DomainSpec target = make_target_spec(gen.corpus, cfg.seed);

  StageResult result;
  std::uint64_t idx = 0;
  for (const auto& [name, count] : gen.counts) {
    const bool is_target = name.rfind("target", 0) == 0;
    const DomainSpec& spec = is_target ? target : source;
    const DomainDataset ds =
        generate_domain(spec, count, Rng::derive_seed(cfg.seed, 100 + idx++));
    save_dataset(out_path(cfg, name + ".fixture"), ds);
    result.metrics["count_" + name] = static_cast<double>(count);
  }
  result.manifest_path = write_manifest(cfg, "make_data", "", "", result.metrics);
  return result;
}

StageResult stage_pretrain_encoder(const ExperimentConfig& cfg) {
  check_stage_match(cfg, "pretrain_encoder");
  require_seed(cfg);
  require_out_dir(cfg);
  const DomainDataset ssl_data = load_fixture(cfg.data.ssl_fixture, "ssl");
  const SslStageConfig& ssl_cfg = cfg.ssl;

  Rng init_rng(Rng::derive_seed(cfg.seed, 11));
  ParameterTree tree = build_encoder(cfg.model, std::nullopt, cfg.seed);
  add_ssl_head(tree, cfg.model, ssl_cfg.codebook, init_rng);
  Tape tape;
  tree.bind_tape(&tape);
  tree.set_freeze(FreezePolicy::all_trainable);

  const RandomProjectionQuantizer quantizer(cfg.model.d_in, ssl_cfg.dq,
                                            ssl_cfg.codebook,
                                            Rng::derive_seed(cfg.seed, 12));
  const std::vector<real> mask_vec =
      make_mask_vector(cfg.model.d_in, Rng::derive_seed(cfg.seed, 13));
  Rng mask_rng(Rng::derive_seed(cfg.seed, 14));

  SgdState sgd{ssl_cfg.lr};
  AdamState adam;
  adam.learning_rate = ssl_cfg.lr;

  auto batch_loss = [&](std::size_t& cursor) {
    Tensor total;
    for (std::size_t i = 0; i < ssl_cfg.batch; ++i) {
      const Example& ex = ssl_data.examples[cursor];
      cursor = (cursor + 1) % ssl_data.examples.size();
      const SslBatch sb =
          make_ssl_batch(ex.features, ssl_cfg.mask_prob, ssl_cfg.span,
                         quantizer, mask_vec, mask_rng);
      Tensor loss = softmax_xent(
          ssl_logits(tree, cfg.model, std::nullopt, sb.features), sb.labels,
          sb.mask);
      total = total.defined() ? add(total, loss) : loss;
    }
    return scale(total, real(1) / real(ssl_cfg.batch));
  };

  std::ofstream log(out_path(cfg, "ssl_loss.jsonl"));
  StageResult result;
  std::size_t cursor = 0;
  double first_loss = 0, last_loss = 0;
  for (std::size_t step = 0; step < ssl_cfg.steps; ++step) {
    tree.zero_grads();
    Tensor loss = batch_loss(cursor);
    backward(loss);
    const GradMap grads = collect_grads(tree);
    if (ssl_cfg.optimizer == OptimizerKind::sgd)
      sgd_step(tree, grads, sgd);
    else
      adam_step(tree, grads, adam);
    tape.rewind();
    const double value = double(loss.item());
    if (step == 0) first_loss = value;
    last_loss = value;
    log << json{{"step", step}, {"loss", value}}.dump() << '\n';
  }
  result.metrics["ssl_loss_first"] = first_loss;
  result.metrics["ssl_loss_last"] = last_loss;
  result.metrics["steps"] = static_cast<double>(ssl_cfg.steps);

  Checkpoint ckpt{cfg.model, std::nullopt, std::move(tree), std::nullopt};
  result.checkpoint_path = out_path(cfg, "checkpoint.bin");
  save_checkpoint(result.checkpoint_path, ckpt);
  result.manifest_path = write_manifest(cfg, "pretrain_encoder", "",
                                        tree_digest(ckpt.tree), result.metrics);
  return result;
}

StageResult stage_pretrain_decoder(const ExperimentConfig& cfg) {
  check_stage_match(cfg, "pretrain_decoder");
  require_seed(cfg);
  require_out_dir(cfg);
  const DecoderStageConfig& dec = cfg.decoder_train;
  if (dec.encoder_checkpoint.empty())
    throw std::invalid_argument(
        "pretrain_decoder: decoder_train.encoder_checkpoint is required");
  const Checkpoint input = load_checkpoint(dec.encoder_checkpoint);
  if (input.adapters)
    throw std::invalid_argument(
        "pretrain_decoder: encoder checkpoint already carries adapters");
  const std::string input_digest = tree_digest(input.tree);

  std::optional<AdapterSpec> spec;
  if (dec.strategy == DecoderStrategy::with_adapters) {
    if (!cfg.adapter)
      throw std::invalid_argument(
          "pretrain_decoder: with_adapters strategy needs an adapter config");
    spec = cfg.adapter;
  }

  ParameterTree tree;
  copy_subtree(tree, input.tree, "encoder/");
  Rng head_rng(Rng::derive_seed(cfg.seed, 21));
  add_decoder_head(tree, cfg.model, head_rng);
  if (spec) insert_adapters(tree, cfg.model, *spec, Rng::derive_seed(cfg.seed, 22));
  Tape tape;
  tree.bind_tape(&tape);
  tree.set_freeze(FreezePolicy::freeze_encoder_base);

  const DomainDataset train =
      load_fixture(cfg.data.source_train, "source_train");
  const TrainEvalSets evals = load_eval_sets(cfg);
  StageResult result;
  add_eval_metrics(result.metrics, tree, cfg.model, spec, evals, "before");

  const BatchLossFn loss = frame_xent_loss(cfg.model, spec);
  const EvalFn eval_fn = make_eval_fn(cfg.model, spec, evals);
  std::vector<RoundRecord> records =
      run_centralized(tree, dec.steps, dec.batch, dec.lr, dec.optimizer, train,
                      loss, eval_fn, dec.eval_every);
  write_round_records_jsonl(out_path(cfg, "train.jsonl"), records);

  add_eval_metrics(result.metrics, tree, cfg.model, spec, evals, "after");

  Checkpoint ckpt{cfg.model, spec, std::move(tree), std::nullopt};
  result.checkpoint_path = out_path(cfg, "checkpoint.bin");
  save_checkpoint(result.checkpoint_path, ckpt);
  result.manifest_path = write_manifest(cfg, "pretrain_decoder", input_digest,
                                        tree_digest(ckpt.tree), result.metrics);
  return result;
}

namespace {

struct TuneOutcome {
  ParameterTree tree;
  std::vector<RoundRecord> records;
  std::map<std::string, double> metrics;
  std::optional<AdamState> server;
};

// Shared core of fedtune / centralized-tune / ablation arms: load -> insert
// adapters if absent -> freeze all but adapters -> tune on the target domain.
TuneOutcome tune_arm(const ExperimentConfig& cfg, const Checkpoint& input,
                     Tape& tape, bool federated,
                     const DomainDataset& train, const TrainEvalSets& evals) {
  if (!cfg.adapter)
    throw std::invalid_argument("tune: an adapter config is required");
  if (input.adapters) {
    const AdapterSpec& have = *input.adapters;
    const AdapterSpec& want = *cfg.adapter;
    if (have.variant != want.variant || have.bottleneck != want.bottleneck ||
        have.nonlinearity != want.nonlinearity ||
        have.internal_residual != want.internal_residual)
      throw std::invalid_argument(
          std::string("tune: checkpoint adapter variant ") +
          to_string(have.variant) + " does not match configured variant " +
          to_string(want.variant));
  }

  TuneOutcome outcome;
  outcome.tree = input.tree.clone(&tape);
  if (!input.adapters)
    insert_adapters(outcome.tree, cfg.model, *cfg.adapter,
                    Rng::derive_seed(cfg.seed, 31));
  outcome.tree.bind_tape(&tape);
  outcome.tree.set_freeze(FreezePolicy::freeze_all_but_adapters);

  add_eval_metrics(outcome.metrics, outcome.tree, cfg.model, cfg.adapter,
                   evals, "before");
  const BatchLossFn loss = frame_xent_loss(cfg.model, cfg.adapter);
  const EvalFn eval_fn = make_eval_fn(cfg.model, cfg.adapter, evals);

  if (federated) {
    FedConfig fed = cfg.fed.fed;
    fed.seed = cfg.seed;
    AdamState server;
    server.learning_rate = fed.server_lr;
    if (input.server_opt) server = *input.server_opt;
    outcome.records = run_federated(outcome.tree, server, train, fed, loss,
                                    eval_fn, cfg.fed.eval_every);
    outcome.server = std::move(server);
  } else {
    outcome.records = run_centralized(
        outcome.tree, cfg.centralized.iterations, cfg.centralized.batch,
        cfg.centralized.lr, cfg.centralized.optimizer, train, loss, eval_fn,
        cfg.centralized.eval_every);
  }
  add_eval_metrics(outcome.metrics, outcome.tree, cfg.model, cfg.adapter,
                   evals, "after");
  return outcome;
}

}  // namespace

StageResult stage_fedtune(const ExperimentConfig& cfg) {
  check_stage_match(cfg, "fedtune");
  require_seed(cfg);
  require_out_dir(cfg);
  if (cfg.fed.checkpoint.empty())
    throw std::invalid_argument("fedtune: fed.checkpoint is required");
  const Checkpoint input = load_checkpoint(cfg.fed.checkpoint);
  const std::string input_digest = tree_digest(input.tree);
  const DomainDataset train =
      load_fixture(cfg.data.target_train, "target_train");
  const TrainEvalSets evals = load_eval_sets(cfg);

  Tape tape;
  TuneOutcome outcome = tune_arm(cfg, input, tape, true, train, evals);
  write_round_records_jsonl(out_path(cfg, "rounds.jsonl"), outcome.records);
  write_round_records_csv(out_path(cfg, "rounds.csv"), outcome.records);

  StageResult result;
  result.metrics = outcome.metrics;
  Checkpoint ckpt{cfg.model, cfg.adapter, std::move(outcome.tree),
                  std::move(outcome.server)};
  result.checkpoint_path = out_path(cfg, "checkpoint.bin");
  save_checkpoint(result.checkpoint_path, ckpt);
  result.manifest_path = write_manifest(cfg, "fedtune", input_digest,
                                        tree_digest(ckpt.tree), result.metrics);
  return result;
}

StageResult stage_centralized_tune(const ExperimentConfig& cfg) {
  check_stage_match(cfg, "centralized_tune");
  require_seed(cfg);
  require_out_dir(cfg);
  if (cfg.centralized.checkpoint.empty())
    throw std::invalid_argument(
        "centralized_tune: centralized.checkpoint is required");
  const Checkpoint input = load_checkpoint(cfg.centralized.checkpoint);
  const std::string input_digest = tree_digest(input.tree);
  const DomainDataset train =
      load_fixture(cfg.data.target_train, "target_train");
  const TrainEvalSets evals = load_eval_sets(cfg);

  Tape tape;
  TuneOutcome outcome = tune_arm(cfg, input, tape, false, train, evals);
  write_round_records_jsonl(out_path(cfg, "iterations.jsonl"), outcome.records);

  StageResult result;
  result.metrics = outcome.metrics;
  Checkpoint ckpt{cfg.model, cfg.adapter, std::move(outcome.tree), std::nullopt};
  result.checkpoint_path = out_path(cfg, "checkpoint.bin");
  save_checkpoint(result.checkpoint_path, ckpt);
  result.manifest_path = write_manifest(cfg, "centralized_tune", input_digest,
                                        tree_digest(ckpt.tree), result.metrics);
  return result;
}

StageResult stage_ablation(const ExperimentConfig& cfg) {
  check_stage_match(cfg, "ablation");
  require_seed(cfg);
  require_out_dir(cfg);
  const std::string ckpt_path =
      !cfg.fed.checkpoint.empty() ? cfg.fed.checkpoint
                                  : cfg.centralized.checkpoint;
  if (ckpt_path.empty())
    throw std::invalid_argument("ablation: fed.checkpoint is required");

  const std::uint64_t fed_samples = cfg.fed.fed.samples_total();
  const std::uint64_t central_samples =
      std::uint64_t(cfg.centralized.iterations) * cfg.centralized.batch;
  if (fed_samples != central_samples)
    throw std::invalid_argument(
        "ablation: sample budgets differ (federated " +
        std::to_string(fed_samples) + " vs centralized " +
        std::to_string(central_samples) + ")");

  const Checkpoint input = load_checkpoint(ckpt_path);
  const std::string input_digest = tree_digest(input.tree);
  const DomainDataset train =
      load_fixture(cfg.data.target_train, "target_train");
  const TrainEvalSets evals = load_eval_sets(cfg);

  Tape fed_tape, central_tape;
  TuneOutcome fed_arm = tune_arm(cfg, input, fed_tape, true, train, evals);
  TuneOutcome central_arm =
      tune_arm(cfg, input, central_tape, false, train, evals);

  write_round_records_jsonl(out_path(cfg, "fed_rounds.jsonl"),
                            fed_arm.records);
  write_round_records_jsonl(out_path(cfg, "centralized_iterations.jsonl"),
                            central_arm.records);

  // paired WER-delta curves: one row per eval point per arm
  {
    std::ofstream os(out_path(cfg, "ablation_curves.csv"));
    os << "arm,step,samples,source_wer,target_wer,source_wer_delta,"
          "target_wer_delta\n";
    auto emit = [&](const char* arm, const std::vector<RoundRecord>& records,
                    std::uint64_t samples_per_step,
                    const std::map<std::string, double>& metrics) {
      const double src0 = metrics.count("source_wer_before")
                              ? metrics.at("source_wer_before")
                              : 0.0;
      const double tgt0 = metrics.count("target_wer_before")
                              ? metrics.at("target_wer_before")
                              : 0.0;
      for (const RoundRecord& rec : records) {
        if (rec.evals.empty()) continue;
        double src = src0, tgt = tgt0;
        for (const EvalEntry& e : rec.evals) {
          if (e.name == "source") src = e.wer;
          if (e.name == "target") tgt = e.wer;
        }
        os << arm << ',' << rec.round << ','
           << (rec.round + 1) * samples_per_step << ',' << src << ',' << tgt
           << ',' << (src - src0) << ',' << (tgt - tgt0) << '\n';
      }
    };
    emit("federated", fed_arm.records,
         std::uint64_t(cfg.fed.fed.num_clients) * cfg.fed.fed.client_batch *
             cfg.fed.fed.local_iterations_per_round,
         fed_arm.metrics);
    emit("centralized", central_arm.records, cfg.centralized.batch,
         central_arm.metrics);
  }

  StageResult result;
  for (const auto& [key, value] : fed_arm.metrics)
    result.metrics["fed_" + key] = value;
  for (const auto& [key, value] : central_arm.metrics)
    result.metrics["centralized_" + key] = value;
  result.metrics["samples_per_arm"] = static_cast<double>(fed_samples);
  if (fed_arm.metrics.count("target_wer_after") &&
      central_arm.metrics.count("target_wer_after"))
    result.metrics["target_wer_gap"] =
        std::abs(fed_arm.metrics.at("target_wer_after") -
                 central_arm.metrics.at("target_wer_after"));

  Checkpoint fed_ckpt{cfg.model, cfg.adapter, std::move(fed_arm.tree),
                      std::move(fed_arm.server)};
  save_checkpoint(out_path(cfg, "fed_checkpoint.bin"), fed_ckpt);
  Checkpoint central_ckpt{cfg.model, cfg.adapter, std::move(central_arm.tree),
                          std::nullopt};
  save_checkpoint(out_path(cfg, "centralized_checkpoint.bin"), central_ckpt);

  result.manifest_path =
      write_manifest(cfg, "ablation", input_digest,
                     tree_digest(fed_ckpt.tree), result.metrics);
  return result;
}

StageResult stage_eval(const ExperimentConfig& cfg) {
  check_stage_match(cfg, "eval");
  require_seed(cfg);
  require_out_dir(cfg);
  if (cfg.eval_checkpoint.empty())
    throw std::invalid_argument("eval: eval.checkpoint is required");
  Checkpoint ckpt = load_checkpoint(cfg.eval_checkpoint);
  Tape tape;
  ckpt.tree.bind_tape(&tape);
  const TrainEvalSets evals = load_eval_sets(cfg);
  if (!evals.source_eval && !evals.target_eval)
    throw std::invalid_argument("eval: no eval fixtures configured");

  StageResult result;
  add_eval_metrics(result.metrics, ckpt.tree, ckpt.model, ckpt.adapters, evals,
                   "eval");
  json j = result.metrics;
  std::ofstream os(out_path(cfg, "eval.json"));
  os << j.dump(2) << '\n';
  result.manifest_path = write_manifest(cfg, "eval", tree_digest(ckpt.tree), "",
                                        result.metrics);
  return result;
}

StageResult stage_params_report(const ExperimentConfig& cfg) {
  check_stage_match(cfg, "params_report");
  require_seed(cfg);
  require_out_dir(cfg);
  const AccountingStageConfig& acc = cfg.accounting;
  const std::uint64_t decoder_params =
      acc.decoder_params > 0
          ? acc.decoder_params
          : std::uint64_t(cfg.model.d) * (cfg.model.vocab + 1) +
                (cfg.model.vocab + 1);
  std::size_t bottleneck = 0;
  if (acc.bottleneck)
    bottleneck = *acc.bottleneck;
  else if (cfg.adapter)
    bottleneck = cfg.adapter->bottleneck;
  else
    throw std::invalid_argument(
        "params_report: accounting.bottleneck or adapter.bottleneck required");

  std::vector<VariantReportRow> rows;
  {
    const AccountingReport report =
        account(cfg.model, std::nullopt, decoder_params,
                FreezePolicy::all_trainable, acc.encoder_base_params,
                acc.num_clients);
    rows.push_back(VariantReportRow{"none", report.updated_percent(), 0,
                                    report.trainable, report.total(),
                                    std::nullopt, std::nullopt});
  }
  StageResult result;
  for (AdapterVariant v :
       {AdapterVariant::separate, AdapterVariant::seq_end,
        AdapterVariant::seq_both, AdapterVariant::parallel_end,
        AdapterVariant::parallel_both}) {
    AdapterSpec spec;
    spec.variant = v;
    spec.bottleneck = bottleneck;
    const AccountingReport report =
        account(cfg.model, spec, decoder_params,
                FreezePolicy::freeze_all_but_adapters, acc.encoder_base_params,
                acc.num_clients);
    rows.push_back(VariantReportRow{to_string(v), report.updated_percent(),
                                    report.adapter_params, report.trainable,
                                    report.total(), std::nullopt,
                                    std::nullopt});
    result.metrics[std::string("updated_pct_") + to_string(v)] =
        report.updated_percent();
    result.metrics[std::string("adapter_params_") + to_string(v)] =
        static_cast<double>(report.adapter_params);
  }
  write_variant_report_csv(out_path(cfg, "params_report.csv"), rows);
  result.manifest_path =
      write_manifest(cfg, "params_report", "", "", result.metrics);
  return result;
}

}  // namespace fedadapt
