#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fedadapt/data.hpp"
#include "fedadapt/optimizers.hpp"
#include "fedadapt/parameter_tree.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {

struct FedConfig {
  std::size_t num_clients = 64;
  std::size_t client_batch = 10;
  std::size_t rounds = 1000;
  std::size_t local_iterations_per_round = 1;
  real client_lr = real(1e-4);
  real server_lr = real(2e-4);
  bool plain_average = false;   // theta += avg delta instead of server Adam
  double participation = 1.0;   // fraction of clients per round
  std::uint64_t seed = 0;

  void validate() const;
  std::uint64_t samples_total() const {
    return std::uint64_t(num_clients) * client_batch * rounds *
           local_iterations_per_round;
  }
};

// The training task seen by the engine: a differentiable batch loss over a
// bound parameter tree. Keeping the engine generic over this closure is
// what lets tests drive rounds with hand-built gradients.
using Batch = std::vector<const Example*>;
using BatchLossFn = std::function<Tensor(const ParameterTree&, const Batch&)>;

struct EvalEntry {
  std::string name;
  double wer = 0.0;
  double mean_loss = 0.0;
};
using EvalFn = std::function<std::vector<EvalEntry>(const ParameterTree&)>;

struct ClientState {
  int id = 0;
  DomainDataset shard;
  std::size_t cursor = 0;  // cyclic batch pointer
  Tape tape;
  ParameterTree tree;  // deep copy of the global tree
  SgdState sgd;
};

// The only payload a client sends to the server: deltas of its trainable
// leaves plus their norm. Raw features and labels never cross this boundary.
struct ClientUpdate {
  int client_id = 0;
  std::map<std::string, std::vector<real>> delta;
  double delta_norm = 0.0;
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<double> client_delta_norms;
  double aggregated_delta_norm = 0.0;
  std::uint64_t trainable_count = 0;
  std::size_t num_clients = 0;
  std::size_t bytes_per_value = sizeof(real);
  std::vector<EvalEntry> evals;

  std::uint64_t bytes_up() const {
    return trainable_count * bytes_per_value * num_clients;
  }
  std::uint64_t bytes_down() const { return bytes_up(); }
};

std::string round_record_to_json(const RoundRecord& rec);
void write_round_records_jsonl(const std::string& path,
                               const std::vector<RoundRecord>& records);
void write_round_records_csv(const std::string& path,
                             const std::vector<RoundRecord>& records);

enum class PartitionScheme { iid_shard };

// Disjoint, exhaustive shards with sizes differing by at most one.
std::vector<DomainDataset> partition_dataset(const DomainDataset& ds,
                                             std::size_t num_clients,
                                             PartitionScheme scheme, Rng& rng);

std::vector<std::unique_ptr<ClientState>> make_clients(
    const ParameterTree& global, const std::vector<DomainDataset>& shards,
    const FedConfig& cfg);

// Runs local_iterations_per_round SGD steps on the client's next cyclic
// batches and returns the trainable-leaf delta against the client's
// starting point (== the current global).
ClientUpdate client_local_update(ClientState& client, const FedConfig& cfg,
                                 const BatchLossFn& loss);

// (1/K) sum of deltas in canonical order: lexicographic path outer,
// ascending client id inner.
GradMap average_deltas(const std::vector<ClientUpdate>& updates);

// One broadcast -> local train -> aggregate cycle. The averaged delta is
// applied either directly (plain_average) or through the server optimizer
// as pseudo-gradient -avgDelta; clients are then re-synced to the new
// global trainable leaves.
RoundRecord run_round(ParameterTree& global,
                      std::vector<std::unique_ptr<ClientState>>& clients,
                      const FedConfig& cfg, AdamState& server, Rng& rng,
                      const BatchLossFn& loss);

// Full federated run: partitions train_data, builds clients, executes
// cfg.rounds rounds, evaluating every eval_every rounds (0 = never).
std::vector<RoundRecord> run_federated(ParameterTree& global,
                                       AdamState& server,
                                       const DomainDataset& train_data,
                                       const FedConfig& cfg,
                                       const BatchLossFn& loss,
                                       const EvalFn& eval,
                                       std::size_t eval_every);

enum class OptimizerKind { sgd, adam };
OptimizerKind optimizer_kind_from_string(const std::string& s);
const char* to_string(OptimizerKind kind);

// Plain minibatch loop with cyclic in-order batches; emits the same record
// schema as the federated path (num_clients = 0, so the byte ledger is 0).
std::vector<RoundRecord> run_centralized(ParameterTree& tree,
                                         std::size_t iterations,
                                         std::size_t batch, real lr,
                                         OptimizerKind optimizer,
                                         const DomainDataset& data,
                                         const BatchLossFn& loss,
                                         const EvalFn& eval,
                                         std::size_t eval_every);

}  // namespace fedadapt
