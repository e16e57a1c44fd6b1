#include "fedadapt/fed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace fedadapt {

using nlohmann::json;

void FedConfig::validate() const {
  if (num_clients < 1)
    throw std::invalid_argument("FedConfig: num_clients must be >= 1");
  if (client_batch < 1)
    throw std::invalid_argument("FedConfig: client_batch must be >= 1");
  if (local_iterations_per_round < 1)
    throw std::invalid_argument("FedConfig: local iterations must be >= 1");
  if (!(client_lr > 0) || !(server_lr > 0))
    throw std::invalid_argument("FedConfig: learning rates must be > 0");
  if (!(participation > 0.0) || participation > 1.0)
    throw std::invalid_argument("FedConfig: participation must be in (0, 1]");
}

std::string round_record_to_json(const RoundRecord& rec) {
  json j;
  j["round"] = rec.round;
  j["client_delta_norms"] = rec.client_delta_norms;
  j["aggregated_delta_norm"] = rec.aggregated_delta_norm;
  j["trainable_count"] = rec.trainable_count;
  j["num_clients"] = rec.num_clients;
  j["bytes_per_value"] = rec.bytes_per_value;
  j["bytes_up"] = rec.bytes_up();
  j["bytes_down"] = rec.bytes_down();
  if (!rec.evals.empty()) {
    json evals = json::object();
    for (const EvalEntry& e : rec.evals)
      evals[e.name] = {{"wer", e.wer}, {"mean_loss", e.mean_loss}};
    j["eval"] = evals;
  }
  return j.dump();
}

void write_round_records_jsonl(const std::string& path,
                               const std::vector<RoundRecord>& records) {
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("write_round_records_jsonl: cannot open " + path);
  for (const RoundRecord& rec : records) os << round_record_to_json(rec) << '\n';
}

void write_round_records_csv(const std::string& path,
                             const std::vector<RoundRecord>& records) {
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("write_round_records_csv: cannot open " + path);
  // collect eval set names across records for stable columns
  std::vector<std::string> names;
  for (const RoundRecord& rec : records)
    for (const EvalEntry& e : rec.evals)
      if (std::find(names.begin(), names.end(), e.name) == names.end())
        names.push_back(e.name);
  std::sort(names.begin(), names.end());
  os << "round,aggregated_delta_norm,trainable_count,bytes_up";
  for (const std::string& n : names) os << ',' << n << "_wer," << n << "_loss";
  os << '\n';
  for (const RoundRecord& rec : records) {
    os << rec.round << ',' << rec.aggregated_delta_norm << ','
       << rec.trainable_count << ',' << rec.bytes_up();
    for (const std::string& n : names) {
      auto it = std::find_if(rec.evals.begin(), rec.evals.end(),
                             [&](const EvalEntry& e) { return e.name == n; });
      if (it != rec.evals.end())
        os << ',' << it->wer << ',' << it->mean_loss;
      else
        os << ",,";
    }
    os << '\n';
  }
}

std::vector<DomainDataset> partition_dataset(const DomainDataset& ds,
                                             std::size_t num_clients,
                                             PartitionScheme scheme, Rng& rng) {
  (void)scheme;  // iid_shard is the only scheme
  if (num_clients < 1)
    throw std::invalid_argument("partition_dataset: need >= 1 client");
  if (ds.size() < num_clients)
    throw std::invalid_argument("partition_dataset: " +
                                std::to_string(ds.size()) +
                                " examples cannot cover " +
                                std::to_string(num_clients) + " clients");
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);

  const std::size_t base = ds.size() / num_clients;
  const std::size_t extra = ds.size() % num_clients;
  std::vector<DomainDataset> shards(num_clients);
  std::size_t pos = 0;
  for (std::size_t c = 0; c < num_clients; ++c) {
    shards[c].domain_id = ds.domain_id;
    shards[c].d_in = ds.d_in;
    shards[c].vocab = ds.vocab;
    const std::size_t take = base + (c < extra ? 1 : 0);
    for (std::size_t i = 0; i < take; ++i) {
      const Example& src = ds.examples[order[pos++]];
      shards[c].examples.push_back(Example{src.features.clone(), src.tokens});
    }
  }
  return shards;
}

std::vector<std::unique_ptr<ClientState>> make_clients(
    const ParameterTree& global, const std::vector<DomainDataset>& shards,
    const FedConfig& cfg) {
  cfg.validate();
  if (shards.size() != cfg.num_clients)
    throw std::invalid_argument("make_clients: shard count " +
                                std::to_string(shards.size()) +
                                " != num_clients " +
                                std::to_string(cfg.num_clients));
  std::vector<std::unique_ptr<ClientState>> clients;
  clients.reserve(shards.size());
  for (std::size_t c = 0; c < shards.size(); ++c) {
    if (shards[c].examples.empty())
      throw std::invalid_argument("make_clients: client " + std::to_string(c) +
                                  " has an empty shard");
    auto client = std::make_unique<ClientState>();
    client->id = static_cast<int>(c);
    client->shard = shards[c];
    client->tree = global.clone(&client->tape);
    client->sgd.learning_rate = cfg.client_lr;
    clients.push_back(std::move(client));
  }
  return clients;
}

namespace {

Batch next_batch(const DomainDataset& ds, std::size_t& cursor,
                 std::size_t batch_size) {
  Batch batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    batch.push_back(&ds.examples[cursor]);
    cursor = (cursor + 1) % ds.examples.size();
  }
  return batch;
}

double l2_norm(const std::map<std::string, std::vector<real>>& values) {
  double acc = 0;
  for (const auto& [path, v] : values)
    for (real x : v) acc += double(x) * double(x);
  return std::sqrt(acc);
}

void sync_trainable(ParameterTree& dst, const ParameterTree& src) {
  for (const auto& [path, leaf] : src.leaves())
    if (!leaf.frozen) dst.at(path).values() = leaf.tensor.values();
}

}  // namespace

ClientUpdate client_local_update(ClientState& client, const FedConfig& cfg,
                                 const BatchLossFn& loss) {
  // snapshot of the starting point, for the delta
  std::map<std::string, std::vector<real>> start;
  for (const auto& [path, leaf] : client.tree.leaves())
    if (!leaf.frozen) start[path] = leaf.tensor.values();

  for (std::size_t it = 0; it < cfg.local_iterations_per_round; ++it) {
    const Batch batch =
        next_batch(client.shard, client.cursor, cfg.client_batch);
    client.tree.zero_grads();
    Tensor batch_loss = loss(client.tree, batch);
    backward(batch_loss);
    sgd_step(client.tree, collect_grads(client.tree), client.sgd);
    client.tape.rewind();
  }

  ClientUpdate update;
  update.client_id = client.id;
  for (auto& [path, before] : start) {
    const auto& after = client.tree.at(path).values();
    std::vector<real> delta(after.size());
    for (std::size_t i = 0; i < after.size(); ++i)
      delta[i] = after[i] - before[i];
    update.delta[path] = std::move(delta);
  }
  update.delta_norm = l2_norm(update.delta);
  return update;
}

GradMap average_deltas(const std::vector<ClientUpdate>& updates) {
  if (updates.empty())
    throw std::invalid_argument("average_deltas: no updates");
  std::vector<const ClientUpdate*> ordered;
  ordered.reserve(updates.size());
  for (const ClientUpdate& u : updates) ordered.push_back(&u);
  std::sort(ordered.begin(), ordered.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) {
              return a->client_id < b->client_id;
            });
  for (const ClientUpdate* u : ordered)
    if (u->delta.size() != ordered.front()->delta.size())
      throw std::invalid_argument(
          "average_deltas: clients disagree on trainable paths");
  const real inv_k = real(1) / real(updates.size());
  GradMap avg;
  for (const auto& [path, first_delta] : ordered.front()->delta) {
    std::vector<real> acc(first_delta.size(), real(0));
    for (const ClientUpdate* u : ordered) {
      auto it = u->delta.find(path);
      if (it == u->delta.end() || it->second.size() != acc.size())
        throw std::invalid_argument(
            "average_deltas: clients disagree on path " + path);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += it->second[i];
    }
    for (real& v : acc) v *= inv_k;
    avg[path] = std::move(acc);
  }
  return avg;
}

RoundRecord run_round(ParameterTree& global,
                      std::vector<std::unique_ptr<ClientState>>& clients,
                      const FedConfig& cfg, AdamState& server, Rng& rng,
                      const BatchLossFn& loss) {
  cfg.validate();
  // participating clients (all of them at the default participation = 1)
  std::vector<ClientState*> active;
  if (cfg.participation >= 1.0) {
    for (auto& c : clients) active.push_back(c.get());
  } else {
    const std::size_t k = std::max<std::size_t>(
        1, static_cast<std::size_t>(cfg.participation * clients.size()));
    std::vector<std::size_t> order(clients.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.below(i)]);
    order.resize(k);
    std::sort(order.begin(), order.end());
    for (std::size_t i : order) active.push_back(clients[i].get());
  }

  std::vector<ClientUpdate> updates;
  updates.reserve(active.size());
  for (ClientState* client : active)
    updates.push_back(client_local_update(*client, cfg, loss));

  GradMap avg_delta = average_deltas(updates);

  RoundRecord rec;
  rec.client_delta_norms.reserve(updates.size());
  for (const ClientUpdate& u : updates)
    rec.client_delta_norms.push_back(u.delta_norm);
  rec.aggregated_delta_norm = l2_norm(avg_delta);
  rec.trainable_count = global.trainable_count();
  rec.num_clients = active.size();

  if (cfg.plain_average) {
    for (const auto& [path, delta] : avg_delta) {
      auto& values = global.at(path).values();
      for (std::size_t i = 0; i < values.size(); ++i) values[i] += delta[i];
    }
  } else {
    GradMap pseudo_grad;
    for (const auto& [path, delta] : avg_delta) {
      std::vector<real> g(delta.size());
      for (std::size_t i = 0; i < delta.size(); ++i) g[i] = -delta[i];
      pseudo_grad[path] = std::move(g);
    }
    server.learning_rate = cfg.server_lr;
    adam_step(global, pseudo_grad, server);
  }

  for (auto& client : clients) sync_trainable(client->tree, global);
  return rec;
}

std::vector<RoundRecord> run_federated(ParameterTree& global,
                                       AdamState& server,
                                       const DomainDataset& train_data,
                                       const FedConfig& cfg,
                                       const BatchLossFn& loss,
                                       const EvalFn& eval,
                                       std::size_t eval_every) {
  cfg.validate();
  Rng rng(Rng::derive_seed(cfg.seed, 0x0fed));
  auto shards =
      partition_dataset(train_data, cfg.num_clients, PartitionScheme::iid_shard,
                        rng);
  auto clients = make_clients(global, shards, cfg);
  std::vector<RoundRecord> records;
  records.reserve(cfg.rounds);
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    RoundRecord rec = run_round(global, clients, cfg, server, rng, loss);
    rec.round = r;
    if (eval && eval_every > 0 && (r + 1) % eval_every == 0)
      rec.evals = eval(global);
    records.push_back(std::move(rec));
  }
  return records;
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer kind: " + s);
}

const char* to_string(OptimizerKind kind) {
  return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

std::vector<RoundRecord> run_centralized(ParameterTree& tree,
                                         std::size_t iterations,
                                         std::size_t batch, real lr,
                                         OptimizerKind optimizer,
                                         const DomainDataset& data,
                                         const BatchLossFn& loss,
                                         const EvalFn& eval,
                                         std::size_t eval_every) {
  if (batch < 1)
    throw std::invalid_argument("run_centralized: batch must be >= 1");
  if (data.examples.empty())
    throw std::invalid_argument("run_centralized: dataset is empty");
  if (tree.tape() == nullptr)
    throw std::invalid_argument("run_centralized: tree is not bound to a tape");
  SgdState sgd{lr};
  AdamState adam;
  adam.learning_rate = lr;
  std::size_t cursor = 0;
  std::vector<RoundRecord> records;
  records.reserve(iterations);
  for (std::size_t it = 0; it < iterations; ++it) {
    const Batch b = next_batch(data, cursor, batch);
    tree.zero_grads();
    Tensor l = loss(tree, b);
    backward(l);
    const GradMap grads = collect_grads(tree);
    if (optimizer == OptimizerKind::sgd)
      sgd_step(tree, grads, sgd);
    else
      adam_step(tree, grads, adam);
    tree.tape()->rewind();

    RoundRecord rec;
    rec.round = it;
    rec.trainable_count = tree.trainable_count();
    rec.num_clients = 0;
    rec.aggregated_delta_norm = 0.0;
    if (eval && eval_every > 0 && (it + 1) % eval_every == 0)
      rec.evals = eval(tree);
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace fedadapt
