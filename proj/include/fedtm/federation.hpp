#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedtm/common.hpp"
#include "fedtm/corpus.hpp"
#include "fedtm/model.hpp"
#include "fedtm/pruning.hpp"
#include "fedtm/rng.hpp"

namespace fedtm {

// Approximate wall time of one FL round: a constant overhead plus a
// per-parameter cost, constant within each layer.
struct TimeModel {
  double constant_overhead_s = 0.005;
  double per_param_s = 1e-6;
  std::map<std::string, double> per_layer_s;  // by tensor name, overrides per_param_s

  double coeff_for(const std::string& layer_name) const {
    auto it = per_layer_s.find(layer_name);
    return it == per_layer_s.end() ? per_param_s : it->second;
  }
};

struct FederationConfig {
  int num_clients = 10;
  int local_iterations = 10;  // mini-batch steps per round per client
  int rounds = 0;
  int prune_interval = 0;  // 0 -> max(1, rounds / 20)
  int eval_interval = 10;  // 0 -> no periodic evaluation
  bool eval_final = true;  // evaluate after the last round regardless
  std::optional<PruneSchedule> schedule;
  ModelConfig model;  // model.vocab_size 0 -> derived from the corpus
  TimeModel time_model;
  PartitionSpec::Mode partition_mode = PartitionSpec::Mode::IID;
  double dirichlet_concentration = 1.0;
  enum class Weighting { DocCount, Uniform };
  Weighting weighting = Weighting::DocCount;
  int threads = 0;  // 0 -> hardware concurrency
  std::uint64_t seed = 0;

  int effective_prune_interval() const;
  void validate() const;
};

struct RoundReport {
  int round = 0;
  double mean_loss = 0.0;  // mean over clients of per-document step loss
  double density = 1.0;    // after this round's aggregation (and pruning)
  long active_params = 0;
  double round_time_s = 0.0;  // Eq.-style cost of the round as executed
  double cum_time_s = 0.0;
  std::optional<double> accuracy;
  std::optional<double> coherence;
  std::optional<double> diversity;
};

struct ClientState {
  Corpus data;
  ModelParams params;
  OptimizerState opt;  // persists across rounds
  GradientAccumulator z;
  std::uint64_t id = 0;
};

struct ServerState {
  ModelParams global;
  PruneMask mask;
  int round = 0;
  double cum_time_s = 0.0;
};

// Per-client per-round random stream; independent of thread scheduling.
Rng client_round_rng(std::uint64_t seed, std::uint64_t client_id, std::uint64_t round);

// Walks a shuffled permutation of 0..n-1, reshuffling from the stream when
// exhausted. local_train consumes batch indices first, then the noise
// matrix, in this order, once per step.
class MinibatchCycler {
 public:
  MinibatchCycler(int n, Rng& rng) : n_(n), rng_(rng), order_(rng.shuffled_indices(n)) {}
  int next() {
    if (cursor_ == n_) {
      order_ = rng_.shuffled_indices(n_);
      cursor_ = 0;
    }
    return order_[static_cast<std::size_t>(cursor_++)];
  }

 private:
  int n_;
  Rng& rng_;
  std::vector<int> order_;
  int cursor_ = 0;
};

// Dense batch of count vectors for the given documents.
Mat batch_matrix(const Corpus& corpus, const std::vector<int>& doc_indices);

// Phase 1: merge client vocabularies and remap every client corpus.
std::pair<Vocabulary, std::vector<Corpus>> vocabulary_consensus(
    const std::vector<Corpus>& client_corpora);

// Entrywise weighted mean of every tensor (biases included), weights
// normalized to sum 1.
ModelParams fedavg(const std::vector<ModelParams>& models, const std::vector<double>& weights);

// Copies the global model into the client, then runs `iterations` masked
// mini-batch steps with the client's (seed, id, round) stream. Squared
// gradients are accumulated into client.z when record_z is set. Returns the
// mean per-document loss over the steps (0 when iterations == 0).
double local_train(ClientState& client, const ModelParams& global_params, const PruneMask& mask,
                   int iterations, bool record_z, const ModelConfig& model_config,
                   std::uint64_t run_seed, int round);

// c plus the per-layer coefficient summed over active parameters;
// non-prunable tensors always count in full.
double round_time(const TimeModel& time_model, const PruneMask& mask,
                  const std::vector<LayerShape>& shapes);

// Pruning-round aggregation: FedAvg of params and accumulators, schedule
// lookup, mask selection with gradient recovery, mask application.
void prune_round(ServerState& server, const std::vector<ModelParams>& client_params,
                 const std::vector<GradientAccumulator>& client_zs,
                 const std::vector<double>& weights, const PruneSchedule& schedule,
                 double learning_rate);

using RoundObserver = std::function<void(const RoundReport&, const ServerState&)>;

// Executes the full federated run: partition, consensus, per-round local
// training (clients may run on several threads; results are independent of
// scheduling), FedAvg, pruning at round boundaries (round % P == 0), the
// simulated-time ledger, and periodic evaluation. Deterministic in config.
std::vector<RoundReport> run_federation(const FederationConfig& config, const Corpus& train,
                                        const Corpus& test, const RoundObserver& observer = {});

}  // namespace fedtm
