#include <benchmark/benchmark.h>

#include "fedadapt/fed.hpp"
#include "fedadapt/pipeline.hpp"

using namespace fedadapt;

namespace {

// One full federated round at desk scale: K clients, one local iteration,
// delta aggregation and the server Adam step.
void BM_FederatedRound(benchmark::State& state) {
  const std::size_t num_clients = state.range(0);

  ModelConfig cfg;
  cfg.d_in = 8;
  cfg.d = 16;
  cfg.layers = 2;
  cfg.kernel = 3;
  cfg.vocab = 6;
  AdapterSpec spec;
  spec.variant = AdapterVariant::seq_end;
  spec.bottleneck = 4;

  CorpusConfig corpus;
  corpus.d_in = 8;
  corpus.vocab = 6;
  corpus.t_min = 6;
  corpus.t_max = 12;
  const DomainDataset data =
      generate_domain(make_source_spec(corpus, 1), num_clients * 4, 2);

  ParameterTree global = build_encoder(cfg, spec, 3);
  Rng head_rng(4);
  add_decoder_head(global, cfg, head_rng);
  global.set_freeze(FreezePolicy::freeze_all_but_adapters);

  FedConfig fed;
  fed.num_clients = num_clients;
  fed.client_batch = 4;
  fed.client_lr = real(0.01);
  fed.server_lr = real(0.005);
  fed.seed = 5;
  Rng shard_rng(6);
  auto shards =
      partition_dataset(data, num_clients, PartitionScheme::iid_shard, shard_rng);
  auto clients = make_clients(global, shards, fed);
  AdamState server;
  Rng round_rng(7);
  const BatchLossFn loss = frame_xent_loss(cfg, spec);

  for (auto _ : state)
    benchmark::DoNotOptimize(
        run_round(global, clients, fed, server, round_rng, loss));
  state.SetItemsProcessed(state.iterations() * num_clients * fed.client_batch);
}

}  // namespace

BENCHMARK(BM_FederatedRound)->Arg(4)->Arg(16)->Arg(64);

BENCHMARK_MAIN();
