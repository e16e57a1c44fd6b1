#include <algorithm>
#include <set>

#include <doctest.h>

#include "fedadapt/checkpoint.hpp"
#include "fedadapt/fed.hpp"

using namespace fedadapt;

namespace {

// Toy task: one scalar parameter w, loss = w * mean(feature[0]) over the
// batch, so dL/dw is exactly the mean of the first feature values.
BatchLossFn toy_loss() {
  return [](const ParameterTree& tree, const Batch& batch) {
    Tensor total;
    for (const Example* ex : batch) {
      Tensor term = mul(tree.at("w"), Tensor::scalar(ex->features.at(0)));
      total = total.defined() ? add(total, term) : term;
    }
    return scale(total, real(1) / real(batch.size()));
  };
}

Example scalar_example(real c) {
  return Example{Tensor::from({1, 1}, {c}), {0}};
}

DomainDataset scalar_dataset(std::vector<real> cs) {
  DomainDataset ds;
  ds.d_in = 1;
  ds.vocab = 2;
  for (real c : cs) ds.examples.push_back(scalar_example(c));
  return ds;
}

ParameterTree scalar_global(real w0) {
  ParameterTree tree;
  tree.insert("w", Tensor::scalar(w0));
  return tree;
}

FedConfig toy_fed(std::size_t clients, std::size_t batch, real lr) {
  FedConfig cfg;
  cfg.num_clients = clients;
  cfg.client_batch = batch;
  cfg.rounds = 1;
  cfg.client_lr = lr;
  cfg.server_lr = real(0.01);
  cfg.seed = 1;
  return cfg;
}

}  // namespace

TEST_CASE("partition produces disjoint exhaustive near-equal shards") {
  CorpusConfig corpus;
  corpus.d_in = 3;
  corpus.vocab = 4;
  corpus.t_min = corpus.t_max = 4;
  const DomainSpec spec = make_source_spec(corpus, 1);

  SUBCASE("640 over 64 gives shards of 10") {
    const DomainDataset ds = generate_domain(spec, 640, 2);
    Rng rng(3);
    const auto shards = partition_dataset(ds, 64, PartitionScheme::iid_shard, rng);
    REQUIRE(shards.size() == 64);
    for (const auto& shard : shards) CHECK(shard.size() == 10);
  }

  SUBCASE("65 over 64 gives one shard of 2") {
    const DomainDataset ds = generate_domain(spec, 65, 2);
    Rng rng(3);
    const auto shards = partition_dataset(ds, 64, PartitionScheme::iid_shard, rng);
    std::size_t twos = 0, total = 0;
    for (const auto& shard : shards) {
      total += shard.size();
      if (shard.size() == 2) ++twos;
      else CHECK(shard.size() == 1);
    }
    CHECK(twos == 1);
    CHECK(total == 65);
  }

  SUBCASE("union of shards is the dataset with no duplicates") {
    const DomainDataset ds = generate_domain(spec, 37, 5);
    Rng rng(7);
    const auto shards = partition_dataset(ds, 5, PartitionScheme::iid_shard, rng);
    std::multiset<double> original, sharded;
    for (const Example& ex : ds.examples)
      original.insert(double(ex.features.at(0)));
    std::size_t total = 0;
    for (const auto& shard : shards) {
      total += shard.size();
      for (const Example& ex : shard.examples)
        sharded.insert(double(ex.features.at(0)));
    }
    CHECK(total == ds.size());
    CHECK(original == sharded);
  }

  SUBCASE("too few examples is an error") {
    const DomainDataset ds = generate_domain(spec, 3, 2);
    Rng rng(3);
    CHECK_THROWS_AS(partition_dataset(ds, 4, PartitionScheme::iid_shard, rng),
                    std::invalid_argument);
  }
}

TEST_CASE("client with an empty shard is rejected at setup") {
  ParameterTree global = scalar_global(real(1));
  std::vector<DomainDataset> shards(2);
  shards[0] = scalar_dataset({1});
  // shards[1] left empty
  CHECK_THROWS_AS(make_clients(global, shards, toy_fed(2, 1, real(0.1))),
                  std::invalid_argument);
}

TEST_CASE("hand-set gradients: deltas -0.1/-0.3 average to -0.2") {
  ParameterTree global = scalar_global(real(1));
  std::vector<DomainDataset> shards{scalar_dataset({1}), scalar_dataset({3})};
  const FedConfig cfg = toy_fed(2, 1, real(0.1));
  auto clients = make_clients(global, shards, cfg);

  std::vector<ClientUpdate> updates;
  for (auto& client : clients)
    updates.push_back(client_local_update(*client, cfg, toy_loss()));
  CHECK(updates[0].delta.at("w")[0] == doctest::Approx(-0.1).epsilon(1e-12));
  CHECK(updates[1].delta.at("w")[0] == doctest::Approx(-0.3).epsilon(1e-12));

  const GradMap avg = average_deltas(updates);
  CHECK(avg.at("w")[0] == doctest::Approx(-0.2).epsilon(1e-12));
}

TEST_CASE("clients with identical data produce the common delta") {
  ParameterTree global = scalar_global(real(0.5));
  std::vector<DomainDataset> shards(4, scalar_dataset({2}));
  const FedConfig cfg = toy_fed(4, 1, real(0.05));
  auto clients = make_clients(global, shards, cfg);
  std::vector<ClientUpdate> updates;
  for (auto& client : clients)
    updates.push_back(client_local_update(*client, cfg, toy_loss()));
  const GradMap avg = average_deltas(updates);
  for (const ClientUpdate& u : updates)
    CHECK(u.delta.at("w")[0] == avg.at("w")[0]);
}

TEST_CASE("aggregation order does not depend on update arrival order") {
  std::vector<ClientUpdate> updates;
  Rng rng(99);
  for (int id = 0; id < 8; ++id) {
    ClientUpdate u;
    u.client_id = id;
    u.delta["a"] = {real(rng.uniform(-1, 1)), real(rng.uniform(-1, 1))};
    u.delta["b"] = {real(rng.uniform(-1, 1))};
    updates.push_back(std::move(u));
  }
  const GradMap forward_order = average_deltas(updates);
  std::reverse(updates.begin(), updates.end());
  const GradMap reverse_order = average_deltas(updates);
  CHECK(forward_order == reverse_order);  // bitwise: same summation order
}

TEST_CASE("single client with plain averaging equals centralized SGD") {
  const DomainDataset data = scalar_dataset({1, -2, 3, 0.5, -1});

  // federated arm: K=1, additive server apply
  ParameterTree fed_tree = scalar_global(real(2));
  FedConfig cfg = toy_fed(1, 2, real(0.1));
  cfg.plain_average = true;
  cfg.rounds = 50;
  AdamState server;
  Rng rng(1);
  auto clients = make_clients(fed_tree, {data}, cfg);
  for (std::size_t r = 0; r < cfg.rounds; ++r)
    run_round(fed_tree, clients, cfg, server, rng, toy_loss());

  // centralized arm on the same data order
  Tape tape;
  ParameterTree central_tree = scalar_global(real(2));
  central_tree.bind_tape(&tape);
  run_centralized(central_tree, 50, 2, real(0.1), OptimizerKind::sgd, data,
                  toy_loss(), nullptr, 0);

  CHECK(std::abs(double(fed_tree.at("w").item() -
                        central_tree.at("w").item())) < 1e-12);
}

TEST_CASE("round records carry the derived byte ledger") {
  ParameterTree global = scalar_global(real(1));
  std::vector<DomainDataset> shards{scalar_dataset({1, 2}),
                                    scalar_dataset({3, 4})};
  FedConfig cfg = toy_fed(2, 1, real(0.1));
  auto clients = make_clients(global, shards, cfg);
  AdamState server;
  Rng rng(1);
  RoundRecord rec = run_round(global, clients, cfg, server, rng, toy_loss());
  CHECK(rec.trainable_count == 1);
  CHECK(rec.num_clients == 2);
  CHECK(rec.bytes_up() == 1 * sizeof(real) * 2);
  CHECK(rec.bytes_down() == rec.bytes_up());
  CHECK(rec.client_delta_norms.size() == 2);

  const std::string line = round_record_to_json(rec);
  CHECK(line.find("\"bytes_up\"") != std::string::npos);
  CHECK(line.find("\"round\"") != std::string::npos);
}

TEST_CASE("client payload exposes exactly the trainable delta map") {
  ParameterTree global = scalar_global(real(1));
  global.insert("frozen_leaf", Tensor::from({2}, {5, 6}), true);
  std::vector<DomainDataset> shards{scalar_dataset({2})};
  const FedConfig cfg = toy_fed(1, 1, real(0.1));
  auto clients = make_clients(global, shards, cfg);
  const ClientUpdate update =
      client_local_update(*clients[0], cfg, toy_loss());
  // the only client->server payload: trainable paths, nothing else
  CHECK(update.delta.size() == 1);
  CHECK(update.delta.count("w") == 1);
  CHECK(update.delta.count("frozen_leaf") == 0);
}

TEST_CASE("rounds=0 leaves the global untouched with no records") {
  ModelConfig mc;
  mc.d_in = 2;
  mc.d = 4;
  mc.layers = 1;
  mc.ffn_mult = 2;
  mc.kernel = 3;
  mc.vocab = 3;
  ParameterTree global = build_encoder(mc, std::nullopt, 3);
  const std::string digest = tree_digest(global);
  FedConfig cfg = toy_fed(1, 1, real(0.1));
  cfg.rounds = 0;
  AdamState server;
  const DomainDataset data = scalar_dataset({1, 2});
  global.insert("w", Tensor::scalar(real(1)));  // give the toy loss its leaf
  const auto records =
      run_federated(global, server, data, cfg, toy_loss(), nullptr, 0);
  CHECK(records.empty());
}

TEST_CASE("federated runs are digest-deterministic; frozen leaves never move") {
  CorpusConfig corpus;
  corpus.d_in = 1;
  corpus.vocab = 2;
  corpus.t_min = corpus.t_max = 1;
  const DomainSpec spec = make_source_spec(corpus, 8);
  const DomainDataset data = generate_domain(spec, 12, 9);

  auto run_once = [&]() {
    ParameterTree global;
    global.insert("w", Tensor::scalar(real(1)));
    global.insert("frozen_leaf", Tensor::from({3}, {1, 2, 3}), true);
    FedConfig cfg = toy_fed(4, 1, real(0.05));
    cfg.rounds = 20;
    AdamState server;
    run_federated(global, server, data, cfg, toy_loss(), nullptr, 0);
    return global;
  };
  ParameterTree a = run_once();
  ParameterTree b = run_once();
  CHECK(trainable_digest(a) == trainable_digest(b));
  CHECK(a.at("frozen_leaf").values() == std::vector<real>{1, 2, 3});
}
