#include "fedtm/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "fedtm/checkpoint.hpp"

namespace fedtm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_g9(double value) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 9);
  if (ec != std::errc{}) throw Error("number formatting failed");
  return std::string(buf, ptr);
}

void reject_unknown_keys(const json& obj, const std::string& context,
                         std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw Error("config: unknown key '" + context + key + "'");
  }
}

template <typename T>
T get_or(const json& obj, const std::string& context, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error("config: bad value for '" + context + key + "'");
  }
}

template <typename T>
T get_required(const json& obj, const std::string& context, const char* key) {
  if (!obj.contains(key)) throw Error("config: missing key '" + context + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error("config: bad value for '" + context + key + "'");
  }
}

void check_range(bool ok, const std::string& context, const char* key) {
  if (!ok) throw Error("config: value out of range for '" + context + key + "'");
}

std::string resolve_path(const std::string& p, const std::string& base_dir) {
  fs::path path(p);
  if (path.is_absolute() || base_dir.empty()) return path.lexically_normal().string();
  return (fs::path(base_dir) / path).lexically_normal().string();
}

ModelConfig parse_model(const json& obj) {
  const std::string ctx = "model.";
  reject_unknown_keys(obj, ctx,
                      {"num_topics", "hidden_sizes", "prior_alpha", "learning_rate",
                       "batch_size", "optimizer", "adam_beta1", "adam_beta2", "adam_eps"});
  ModelConfig model;
  model.num_topics = get_required<int>(obj, ctx, "num_topics");
  check_range(model.num_topics >= 2, ctx, "num_topics");
  model.hidden_sizes = get_or<std::vector<int>>(obj, ctx, "hidden_sizes", {100, 100});
  check_range(!model.hidden_sizes.empty(), ctx, "hidden_sizes");
  for (int h : model.hidden_sizes) check_range(h >= 1, ctx, "hidden_sizes");
  model.prior_alpha = get_or<double>(obj, ctx, "prior_alpha", 0.02);
  check_range(model.prior_alpha > 0.0, ctx, "prior_alpha");
  model.learning_rate = get_or<double>(obj, ctx, "learning_rate", 2e-3);
  check_range(model.learning_rate > 0.0, ctx, "learning_rate");
  model.batch_size = get_or<int>(obj, ctx, "batch_size", 64);
  check_range(model.batch_size >= 1, ctx, "batch_size");
  std::string opt = get_or<std::string>(obj, ctx, "optimizer", "adam");
  if (opt == "adam")
    model.optimizer.kind = OptimizerConfig::Kind::Adam;
  else if (opt == "sgd")
    model.optimizer.kind = OptimizerConfig::Kind::Sgd;
  else
    throw Error("config: value out of range for 'model.optimizer' (adam|sgd)");
  model.optimizer.beta1 = get_or<double>(obj, ctx, "adam_beta1", 0.9);
  model.optimizer.beta2 = get_or<double>(obj, ctx, "adam_beta2", 0.999);
  model.optimizer.eps = get_or<double>(obj, ctx, "adam_eps", 1e-8);
  check_range(model.optimizer.beta1 > 0.0 && model.optimizer.beta1 < 1.0, ctx, "adam_beta1");
  check_range(model.optimizer.beta2 > 0.0 && model.optimizer.beta2 < 1.0, ctx, "adam_beta2");
  check_range(model.optimizer.eps > 0.0, ctx, "adam_eps");
  return model;
}

TimeModel parse_time_model(const json& obj) {
  const std::string ctx = "time_model.";
  reject_unknown_keys(obj, ctx, {"constant_overhead_s", "per_param_s", "per_layer_s"});
  TimeModel tm;
  tm.constant_overhead_s = get_or<double>(obj, ctx, "constant_overhead_s", 0.005);
  check_range(tm.constant_overhead_s >= 0.0, ctx, "constant_overhead_s");
  tm.per_param_s = get_or<double>(obj, ctx, "per_param_s", 1e-6);
  check_range(tm.per_param_s > 0.0, ctx, "per_param_s");
  if (obj.contains("per_layer_s")) {
    if (!obj.at("per_layer_s").is_object())
      throw Error("config: bad value for 'time_model.per_layer_s'");
    for (const auto& [name, coeff] : obj.at("per_layer_s").items()) {
      if (!coeff.is_number() || !(coeff.get<double>() > 0.0))
        throw Error("config: value out of range for 'time_model.per_layer_s." + name + "'");
      tm.per_layer_s[name] = coeff.get<double>();
    }
  }
  return tm;
}

std::vector<RunSpec> parse_runs(const json& arr) {
  if (!arr.is_array() || arr.empty())
    throw Error("config: 'runs' must be a non-empty array");
  std::vector<RunSpec> runs;
  for (const auto& item : arr) {
    const std::string ctx = "runs[" + std::to_string(runs.size()) + "].";
    if (!item.is_object()) throw Error("config: entries of 'runs' must be objects");
    reject_unknown_keys(item, ctx, {"label", "schedule", "final_density", "ramp_fraction"});
    RunSpec run;
    run.label = get_required<std::string>(item, ctx, "label");
    check_range(!run.label.empty(), ctx, "label");
    for (char c : run.label)
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.'))
        throw Error("config: value out of range for '" + ctx +
                    "label' (use letters, digits, '-', '_', '.')");
    std::string sched = get_or<std::string>(item, ctx, "schedule", "none");
    if (sched == "none") {
      run.schedule_kind.reset();
      if (item.contains("final_density") || item.contains("ramp_fraction"))
        throw Error("config: '" + ctx + "final_density' requires a pruning schedule");
    } else if (sched == "normal" || sched == "fast") {
      run.schedule_kind =
          sched == "normal" ? PruneSchedule::Kind::Normal : PruneSchedule::Kind::Fast;
      run.final_density = get_required<double>(item, ctx, "final_density");
      check_range(run.final_density > 0.0 && run.final_density <= 1.0, ctx, "final_density");
      run.ramp_fraction = get_or<double>(item, ctx, "ramp_fraction", 0.2);
      check_range(run.ramp_fraction > 0.0 && run.ramp_fraction <= 1.0, ctx, "ramp_fraction");
    } else {
      throw Error("config: value out of range for '" + ctx + "schedule' (none|normal|fast)");
    }
    runs.push_back(std::move(run));
  }
  for (std::size_t i = 0; i < runs.size(); ++i)
    for (std::size_t j = i + 1; j < runs.size(); ++j)
      if (runs[i].label == runs[j].label)
        throw Error("config: duplicate run label '" + runs[i].label + "'");
  return runs;
}

}  // namespace

ExperimentSpec parse_config_text(const std::string& json_text, const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("config: JSON parse failed: ") + e.what());
  }
  if (!doc.is_object()) throw Error("config: top level must be an object");
  reject_unknown_keys(doc, "",
                      {"train_corpus", "test_corpus", "output_dir", "rounds", "num_clients",
                       "local_iterations", "prune_interval", "eval_interval", "seed", "threads",
                       "fedavg_weighting", "partition", "model", "time_model",
                       "accuracy_thresholds", "runs"});

  ExperimentSpec spec;
  spec.train_corpus = resolve_path(get_required<std::string>(doc, "", "train_corpus"), base_dir);
  spec.test_corpus = resolve_path(get_required<std::string>(doc, "", "test_corpus"), base_dir);
  spec.output_dir = resolve_path(get_or<std::string>(doc, "", "output_dir", "out"), base_dir);
  if (const char* env = std::getenv("FEDTM_OUTPUT_DIR"); env && *env) spec.output_dir = env;

  auto& fed = spec.federation;
  fed.rounds = get_required<int>(doc, "", "rounds");
  check_range(fed.rounds >= 1, "", "rounds");
  fed.num_clients = get_or<int>(doc, "", "num_clients", 10);
  check_range(fed.num_clients >= 1, "", "num_clients");
  fed.local_iterations = get_or<int>(doc, "", "local_iterations", 10);
  check_range(fed.local_iterations >= 0, "", "local_iterations");
  fed.prune_interval = get_or<int>(doc, "", "prune_interval", 0);
  check_range(fed.prune_interval >= 0, "", "prune_interval");
  fed.eval_interval = get_or<int>(doc, "", "eval_interval", 10);
  check_range(fed.eval_interval >= 0, "", "eval_interval");
  fed.seed = get_or<std::uint64_t>(doc, "", "seed", 0);
  fed.threads = get_or<int>(doc, "", "threads", 0);
  check_range(fed.threads >= 0, "", "threads");
  std::string weighting = get_or<std::string>(doc, "", "fedavg_weighting", "doc_count");
  if (weighting == "doc_count")
    fed.weighting = FederationConfig::Weighting::DocCount;
  else if (weighting == "uniform")
    fed.weighting = FederationConfig::Weighting::Uniform;
  else
    throw Error("config: value out of range for 'fedavg_weighting' (doc_count|uniform)");

  if (doc.contains("partition")) {
    const json& part = doc.at("partition");
    reject_unknown_keys(part, "partition.", {"mode", "concentration"});
    std::string mode = get_or<std::string>(part, "partition.", "mode", "iid");
    if (mode == "iid") {
      fed.partition_mode = PartitionSpec::Mode::IID;
      if (part.contains("concentration"))
        throw Error("config: 'partition.concentration' requires label_dirichlet mode");
    } else if (mode == "label_dirichlet") {
      fed.partition_mode = PartitionSpec::Mode::LabelDirichlet;
      fed.dirichlet_concentration = get_or<double>(part, "partition.", "concentration", 1.0);
      check_range(fed.dirichlet_concentration > 0.0, "partition.", "concentration");
    } else {
      throw Error("config: value out of range for 'partition.mode' (iid|label_dirichlet)");
    }
  }

  if (!doc.contains("model")) throw Error("config: missing key 'model'");
  fed.model = parse_model(doc.at("model"));
  if (doc.contains("time_model")) fed.time_model = parse_time_model(doc.at("time_model"));

  spec.accuracy_thresholds =
      get_or<std::vector<double>>(doc, "", "accuracy_thresholds", {});
  for (double t : spec.accuracy_thresholds)
    check_range(t > 0.0 && t <= 1.0, "", "accuracy_thresholds");

  if (!doc.contains("runs")) throw Error("config: missing key 'runs'");
  spec.runs = parse_runs(doc.at("runs"));
  return spec;
}

ExperimentSpec parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), fs::path(path).parent_path().string());
}

std::string serialize_spec(const ExperimentSpec& spec) {
  const auto& fed = spec.federation;
  json doc;
  doc["train_corpus"] = spec.train_corpus;
  doc["test_corpus"] = spec.test_corpus;
  doc["output_dir"] = spec.output_dir;
  doc["rounds"] = fed.rounds;
  doc["num_clients"] = fed.num_clients;
  doc["local_iterations"] = fed.local_iterations;
  doc["prune_interval"] = fed.prune_interval;
  doc["eval_interval"] = fed.eval_interval;
  doc["seed"] = fed.seed;
  doc["threads"] = fed.threads;
  doc["fedavg_weighting"] =
      fed.weighting == FederationConfig::Weighting::DocCount ? "doc_count" : "uniform";
  if (fed.partition_mode == PartitionSpec::Mode::IID) {
    doc["partition"] = {{"mode", "iid"}};
  } else {
    doc["partition"] = {{"mode", "label_dirichlet"},
                        {"concentration", fed.dirichlet_concentration}};
  }
  json model;
  model["num_topics"] = fed.model.num_topics;
  model["hidden_sizes"] = fed.model.hidden_sizes;
  model["prior_alpha"] = fed.model.prior_alpha;
  model["learning_rate"] = fed.model.learning_rate;
  model["batch_size"] = fed.model.batch_size;
  model["optimizer"] = fed.model.optimizer.kind == OptimizerConfig::Kind::Adam ? "adam" : "sgd";
  model["adam_beta1"] = fed.model.optimizer.beta1;
  model["adam_beta2"] = fed.model.optimizer.beta2;
  model["adam_eps"] = fed.model.optimizer.eps;
  doc["model"] = std::move(model);
  json tm;
  tm["constant_overhead_s"] = fed.time_model.constant_overhead_s;
  tm["per_param_s"] = fed.time_model.per_param_s;
  if (!fed.time_model.per_layer_s.empty()) {
    json layers;
    for (const auto& [name, coeff] : fed.time_model.per_layer_s) layers[name] = coeff;
    tm["per_layer_s"] = std::move(layers);
  }
  doc["time_model"] = std::move(tm);
  doc["accuracy_thresholds"] = spec.accuracy_thresholds;
  json runs = json::array();
  for (const auto& run : spec.runs) {
    json r;
    r["label"] = run.label;
    if (!run.schedule_kind) {
      r["schedule"] = "none";
    } else {
      r["schedule"] = *run.schedule_kind == PruneSchedule::Kind::Normal ? "normal" : "fast";
      r["final_density"] = run.final_density;
      if (*run.schedule_kind == PruneSchedule::Kind::Fast)
        r["ramp_fraction"] = run.ramp_fraction;
    }
    runs.push_back(std::move(r));
  }
  doc["runs"] = std::move(runs);
  return doc.dump(2);
}

void emit_round_csv(const std::vector<RoundReport>& reports, const std::string& path) {
  if (reports.empty()) throw Error("emit_round_csv: no reports");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("emit_round_csv: cannot open '" + path + "'");
  out << "round,loss,density,active_params,round_time_s,cum_time_s,accuracy,coherence,diversity\n";
  for (const auto& r : reports) {
    out << r.round << ',' << fmt_g9(r.mean_loss) << ',' << fmt_g9(r.density) << ','
        << r.active_params << ',' << fmt_g9(r.round_time_s) << ',' << fmt_g9(r.cum_time_s) << ',';
    if (r.accuracy) out << fmt_g9(*r.accuracy);
    out << ',';
    if (r.coherence) out << fmt_g9(*r.coherence);
    out << ',';
    if (r.diversity) out << fmt_g9(*r.diversity);
    out << '\n';
  }
  if (!out) throw Error("emit_round_csv: write failed for '" + path + "'");
}

int run_experiment(const ExperimentSpec& spec) {
  LoadedCorpus train_loaded = load_corpus(spec.train_corpus);
  if (train_loaded.empty_docs_dropped > 0)
    std::cout << "note: dropped " << train_loaded.empty_docs_dropped
              << " empty training documents\n";
  LoadedCorpus test_loaded = load_corpus(spec.test_corpus);
  FilteredCorpus test_filtered =
      filter_to_vocab(test_loaded.corpus, train_loaded.corpus.vocab);
  if (test_filtered.dropped_tokens > 0 || test_filtered.dropped_docs > 0)
    std::cout << "note: test corpus: dropped " << test_filtered.dropped_tokens
              << " out-of-vocabulary tokens and " << test_filtered.dropped_docs
              << " documents\n";
  const Corpus& train = train_loaded.corpus;
  const Corpus& test = test_filtered.corpus;

  fs::create_directories(spec.output_dir);
  const fs::path out_dir(spec.output_dir);

  struct RunResult {
    const RunSpec* run;
    std::vector<RoundReport> reports;
    bool ok = false;
    std::string error;
  };
  std::vector<RunResult> results;

  for (const auto& run : spec.runs) {
    RunResult result;
    result.run = &run;
    FederationConfig config = spec.federation;
    if (run.schedule_kind) {
      PruneSchedule schedule;
      schedule.kind = *run.schedule_kind;
      schedule.final_density = run.final_density;
      schedule.ramp_fraction = run.ramp_fraction;
      schedule.total_rounds = config.rounds;
      config.schedule = schedule;
    }
    try {
      ServerState final_state;
      auto observer = [&](const RoundReport&, const ServerState& server) {
        if (server.round == config.rounds) final_state = server;
      };
      result.reports = run_federation(config, train, test, observer);
      emit_round_csv(result.reports, (out_dir / (run.label + "_rounds.csv")).string());
      save_checkpoint((out_dir / (run.label + ".ckpt")).string(), final_state.global,
                      final_state.mask, train.vocab);
      result.ok = true;
      std::cout << "run '" << run.label << "': " << result.reports.size() << " rounds, total "
                << fmt_g9(result.reports.empty() ? 0.0 : result.reports.back().cum_time_s)
                << " s simulated\n";
    } catch (const std::exception& e) {
      result.error = e.what();
      std::ofstream err(out_dir / (run.label + "_error.txt"));
      err << e.what() << '\n';
      std::cerr << "run '" << run.label << "' failed: " << e.what() << '\n';
    }
    results.push_back(std::move(result));
  }

  {
    std::ofstream out(out_dir / "summary.csv", std::ios::binary);
    out << "label,final_accuracy,final_coherence,final_diversity,total_time_s,final_density,"
           "active_params\n";
    for (const auto& result : results) {
      if (!result.ok || result.reports.empty()) continue;
      const RoundReport& last = result.reports.back();
      out << result.run->label << ',';
      if (last.accuracy) out << fmt_g9(*last.accuracy);
      out << ',';
      if (last.coherence) out << fmt_g9(*last.coherence);
      out << ',';
      if (last.diversity) out << fmt_g9(*last.diversity);
      out << ',' << fmt_g9(last.cum_time_s) << ',' << fmt_g9(last.density) << ','
          << last.active_params << '\n';
    }
  }

  {
    std::ofstream out(out_dir / "time_to_accuracy.csv", std::ios::binary);
    out << "label";
    for (double t : spec.accuracy_thresholds) out << ",acc_" << fmt_g9(t);
    out << '\n';
    for (const auto& result : results) {
      if (!result.ok) continue;
      out << result.run->label;
      for (double threshold : spec.accuracy_thresholds) {
        std::optional<double> reached;
        for (const auto& r : result.reports) {
          if (r.accuracy && *r.accuracy >= threshold) {
            reached = r.cum_time_s;
            break;
          }
        }
        out << ',' << (reached ? fmt_g9(*reached) : "-");
      }
      out << '\n';
    }
  }

  {
    std::ofstream out(out_dir / "size_vs_time.csv", std::ios::binary);
    out << "label,round,cum_time_s,active_params,density\n";
    for (const auto& result : results) {
      if (!result.ok) continue;
      for (const auto& r : result.reports)
        out << result.run->label << ',' << r.round << ',' << fmt_g9(r.cum_time_s) << ','
            << r.active_params << ',' << fmt_g9(r.density) << '\n';
    }
  }

  bool any_failed = std::any_of(results.begin(), results.end(),
                                [](const RunResult& r) { return !r.ok; });
  return any_failed ? 1 : 0;
}

}  // namespace fedtm
