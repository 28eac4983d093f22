#include "fedtm/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "fedtm/metrics.hpp"

namespace fedtm {

int FederationConfig::effective_prune_interval() const {
  if (prune_interval > 0) return prune_interval;
  return std::max(1, rounds / 20);
}

void FederationConfig::validate() const {
  if (num_clients < 1) throw Error("FederationConfig: num_clients must be >= 1");
  if (local_iterations < 0) throw Error("FederationConfig: local_iterations must be >= 0");
  if (rounds < 0) throw Error("FederationConfig: rounds must be >= 0");
  if (prune_interval < 0) throw Error("FederationConfig: prune_interval must be >= 0");
  if (eval_interval < 0) throw Error("FederationConfig: eval_interval must be >= 0");
  if (threads < 0) throw Error("FederationConfig: threads must be >= 0");
  if (schedule) schedule->validate();
  if (partition_mode == PartitionSpec::Mode::LabelDirichlet && !(dirichlet_concentration > 0.0))
    throw Error("FederationConfig: dirichlet_concentration must be > 0");
  if (!(time_model.constant_overhead_s >= 0.0))
    throw Error("FederationConfig: constant_overhead_s must be >= 0");
  if (!(time_model.per_param_s > 0.0)) throw Error("FederationConfig: per_param_s must be > 0");
  for (const auto& [name, coeff] : time_model.per_layer_s)
    if (!(coeff > 0.0)) throw Error("FederationConfig: per-layer coefficient for '" + name +
                                    "' must be > 0");
}

Rng client_round_rng(std::uint64_t seed, std::uint64_t client_id, std::uint64_t round) {
  return Rng(mix_seed(seed, 0x636c69656e74ULL + client_id, round));
}

Mat batch_matrix(const Corpus& corpus, const std::vector<int>& doc_indices) {
  Mat x = Mat::Zero(static_cast<long>(doc_indices.size()), corpus.vocab.size());
  for (std::size_t i = 0; i < doc_indices.size(); ++i)
    for (const auto& [idx, cnt] : corpus.docs[static_cast<std::size_t>(doc_indices[i])].counts)
      x(static_cast<long>(i), idx) = static_cast<double>(cnt);
  return x;
}

std::pair<Vocabulary, std::vector<Corpus>> vocabulary_consensus(
    const std::vector<Corpus>& client_corpora) {
  if (client_corpora.empty()) throw Error("vocabulary_consensus: no clients");
  std::vector<Vocabulary> vocabs;
  vocabs.reserve(client_corpora.size());
  for (const auto& c : client_corpora) vocabs.push_back(c.vocab);
  Vocabulary global = merge_vocabularies(vocabs);
  std::vector<Corpus> remapped;
  remapped.reserve(client_corpora.size());
  for (const auto& c : client_corpora) remapped.push_back(remap_corpus(c, global));
  return {std::move(global), std::move(remapped)};
}

ModelParams fedavg(const std::vector<ModelParams>& models, const std::vector<double>& weights) {
  if (models.empty()) throw Error("fedavg: empty model list");
  if (models.size() != weights.size()) throw Error("fedavg: weight count mismatch");
  double total_w = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total_w > 0.0)) throw Error("fedavg: weights must sum > 0");

  ModelParams out = zeros_like(models[0]);
  std::vector<TensorRef> out_refs;
  for_each_tensor(out, [&](const TensorRef& t) { out_refs.push_back(t); });

  for (std::size_t c = 0; c < models.size(); ++c) {
    const double scale = weights[c] / total_w;
    std::vector<TensorRef> in_refs;
    for_each_tensor(models[c], [&](const TensorRef& t) { in_refs.push_back(t); });
    if (in_refs.size() != out_refs.size()) throw Error("fedavg: model shape mismatch");
    for (std::size_t ti = 0; ti < out_refs.size(); ++ti) {
      if (in_refs[ti].rows != out_refs[ti].rows || in_refs[ti].cols != out_refs[ti].cols)
        throw Error("fedavg: model shape mismatch at " + out_refs[ti].name);
      const long n = out_refs[ti].rows * out_refs[ti].cols;
      for (long i = 0; i < n; ++i) out_refs[ti].data[i] += scale * in_refs[ti].data[i];
    }
  }
  return out;
}

double local_train(ClientState& client, const ModelParams& global_params, const PruneMask& mask,
                   int iterations, bool record_z, const ModelConfig& model_config,
                   std::uint64_t run_seed, int round) {
  client.params = global_params;
  if (iterations == 0) return 0.0;
  if (client.data.docs.empty()) throw Error("local_train: client corpus is empty");

  LogisticNormalPrior prior =
      prior_from_alpha(model_config.prior_alpha, global_params.num_topics());
  Rng rng = client_round_rng(run_seed, client.id, static_cast<std::uint64_t>(round));
  MinibatchCycler cycler(client.data.num_docs(), rng);
  const int batch = std::min(model_config.batch_size, client.data.num_docs());
  const int num_topics = global_params.num_topics();

  double loss_sum = 0.0;
  for (int step = 0; step < iterations; ++step) {
    std::vector<int> idx(static_cast<std::size_t>(batch));
    for (auto& i : idx) i = cycler.next();
    Mat x = batch_matrix(client.data, idx);
    Mat eps(batch, num_topics);
    for (long i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();

    try {
      auto [trace, loss] = forward_pass(client.params, x, eps, prior);
      Gradients grads = backward(trace, x, prior, client.params);
      if (record_z) accumulate(client.z, grads);
      apply_update(client.params, grads, client.opt, &mask, model_config.learning_rate,
                   model_config.optimizer);
      loss_sum += loss.total / static_cast<double>(batch);
    } catch (const Error& e) {
      throw Error("client " + std::to_string(client.id) + ", round " + std::to_string(round) +
                  ": " + e.what());
    }
  }
  return loss_sum / static_cast<double>(iterations);
}

double round_time(const TimeModel& time_model, const PruneMask& mask,
                  const std::vector<LayerShape>& shapes) {
  double t = time_model.constant_overhead_s;
  std::size_t mi = 0;
  for (const auto& shape : shapes) {
    long active = shape.size();
    if (shape.prunable) {
      if (mi >= mask.tensors.size() || mask.tensors[mi].size() != shape.size())
        throw Error("round_time: mask/shape mismatch");
      active = static_cast<long>(mask.tensors[mi].cast<long>().sum());
      ++mi;
    }
    t += time_model.coeff_for(shape.name) * static_cast<double>(active);
  }
  return t;
}

void prune_round(ServerState& server, const std::vector<ModelParams>& client_params,
                 const std::vector<GradientAccumulator>& client_zs,
                 const std::vector<double>& weights, const PruneSchedule& schedule,
                 double learning_rate) {
  server.global = fedavg(client_params, weights);
  GradientAccumulator z = aggregate_accumulators(client_zs, weights);
  double density = target_density(schedule, server.round);
  server.mask = select_mask(server.global, z, density, learning_rate);
  apply_mask(server.global, server.mask);
}

namespace {

// Runs fn(client_index) over [0, n) on up to `threads` workers. Exceptions
// are re-thrown in client order, so failures are deterministic too.
void parallel_clients(int n, int threads, const std::function<void(int)>& fn) {
  int workers = std::max(1, std::min(threads, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);
}

struct Evaluator {
  const Corpus& train;
  const Corpus& test;
  std::optional<CooccurrenceStats> cooc;

  Mat theta_of(const ModelParams& params, const Corpus& corpus) {
    Mat theta(corpus.num_docs(), params.num_topics());
    constexpr long kChunk = 512;
    for (long start = 0; start < corpus.num_docs(); start += kChunk) {
      long count = std::min<long>(kChunk, corpus.num_docs() - start);
      std::vector<int> idx(static_cast<std::size_t>(count));
      std::iota(idx.begin(), idx.end(), static_cast<int>(start));
      theta.middleRows(start, count) = infer_theta(params, batch_matrix(corpus, idx));
    }
    return theta;
  }

  void evaluate(const ModelParams& params, RoundReport& report) {
    const int v = params.vocab_size();
    if (!cooc) cooc = build_cooccurrence(train);
    report.coherence = npmi_coherence(top_words(params.beta, std::min(10, v)), *cooc);
    report.diversity = topic_diversity(top_words(params.beta, std::min(25, v)));
    if (train.num_labels >= 2 && test.num_docs() > 0) {
      Mat theta_train = theta_of(params, train);
      Mat theta_test = theta_of(params, test);
      std::vector<int> y_train, y_test;
      for (const auto& d : train.docs) y_train.push_back(d.label);
      for (const auto& d : test.docs) y_test.push_back(d.label);
      report.accuracy =
          classify_accuracy(theta_train, y_train, theta_test, y_test, train.num_labels);
    }
  }
};

}  // namespace

std::vector<RoundReport> run_federation(const FederationConfig& config, const Corpus& train,
                                        const Corpus& test, const RoundObserver& observer) {
  config.validate();
  if (train.docs.empty()) throw Error("run_federation: empty training corpus");
  if (test.num_docs() > 0 && !(test.vocab == train.vocab))
    throw Error("run_federation: test corpus must share the training vocabulary "
                "(remap or filter it first)");

  PartitionSpec part;
  part.num_clients = config.num_clients;
  part.mode = config.partition_mode;
  part.concentration = config.dirichlet_concentration;
  part.seed = config.seed;
  auto [global_vocab, client_corpora] = vocabulary_consensus(partition(train, part));

  ModelConfig model_config = config.model;
  if (model_config.vocab_size == 0) model_config.vocab_size = global_vocab.size();
  if (model_config.vocab_size != global_vocab.size())
    throw Error("run_federation: model vocab_size does not match the corpus vocabulary");
  model_config.validate();

  ServerState server;
  server.global = init_params(model_config, config.seed);
  server.mask = PruneMask::ones_like(server.global);
  const auto shapes = layer_shapes(server.global);

  std::vector<ClientState> clients(static_cast<std::size_t>(config.num_clients));
  std::vector<double> weights(static_cast<std::size_t>(config.num_clients), 1.0);
  for (int i = 0; i < config.num_clients; ++i) {
    auto& client = clients[static_cast<std::size_t>(i)];
    client.data = std::move(client_corpora[static_cast<std::size_t>(i)]);
    client.id = static_cast<std::uint64_t>(i);
    client.opt = init_optimizer_state(server.global);
    client.z = GradientAccumulator::zeros_like(server.global);
    if (config.weighting == FederationConfig::Weighting::DocCount)
      weights[static_cast<std::size_t>(i)] = static_cast<double>(client.data.num_docs());
  }

  const int prune_every = config.effective_prune_interval();
  const bool pruning_enabled = config.schedule.has_value();
  int threads = config.threads > 0 ? config.threads
                                   : static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;

  Evaluator evaluator{train, test, std::nullopt};
  std::vector<RoundReport> reports;
  reports.reserve(static_cast<std::size_t>(config.rounds));
  std::vector<double> client_loss(static_cast<std::size_t>(config.num_clients), 0.0);

  for (int round = 1; round <= config.rounds; ++round) {
    server.round = round;
    // The cost of this round reflects the mask the clients trained under.
    const double t_round = round_time(config.time_model, server.mask, shapes);

    parallel_clients(config.num_clients, threads, [&](int i) {
      client_loss[static_cast<std::size_t>(i)] =
          local_train(clients[static_cast<std::size_t>(i)], server.global, server.mask,
                      config.local_iterations, pruning_enabled, model_config, config.seed, round);
    });

    const bool is_prune_round = pruning_enabled && round % prune_every == 0;
    std::vector<ModelParams> uploads;
    uploads.reserve(clients.size());
    for (auto& client : clients) uploads.push_back(client.params);
    if (is_prune_round) {
      std::vector<GradientAccumulator> zs;
      zs.reserve(clients.size());
      for (auto& client : clients) zs.push_back(client.z);
      prune_round(server, uploads, zs, weights, *config.schedule,
                  model_config.learning_rate);
      for (auto& client : clients) client.z.reset();
    } else {
      server.global = fedavg(uploads, weights);
      apply_mask(server.global, server.mask);
    }

    server.cum_time_s += t_round;

    RoundReport report;
    report.round = round;
    report.mean_loss =
        std::accumulate(client_loss.begin(), client_loss.end(), 0.0) /
        static_cast<double>(config.num_clients);
    SizeReport size = model_size(server.mask, shapes);
    report.density = size.density;
    report.active_params = size.active_params;
    report.round_time_s = t_round;
    report.cum_time_s = server.cum_time_s;

    const bool eval_due = (config.eval_interval > 0 && round % config.eval_interval == 0) ||
                          (round == config.rounds && config.eval_final);
    if (eval_due) evaluator.evaluate(server.global, report);

    if (observer) observer(report, server);
    reports.push_back(std::move(report));
  }
  return reports;
}

}  // namespace fedtm
