#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fedtm/checkpoint.hpp"
#include "fedtm/experiment.hpp"
#include "synthetic.hpp"

using namespace fedtm;
namespace fs = std::filesystem;

namespace {

std::string minimal_config = R"({
  "train_corpus": "train.txt",
  "test_corpus": "test.txt",
  "rounds": 4,
  "model": {"num_topics": 3},
  "runs": [{"label": "base"}]
})";

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("fedtm_exp_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("parse_config_text fills documented defaults") {
  ExperimentSpec spec = parse_config_text(minimal_config, "/base");
  CHECK(spec.train_corpus == "/base/train.txt");
  CHECK(spec.test_corpus == "/base/test.txt");
  CHECK(spec.output_dir == "/base/out");
  CHECK(spec.federation.num_clients == 10);
  CHECK(spec.federation.local_iterations == 10);
  CHECK(spec.federation.eval_interval == 10);
  CHECK(spec.federation.model.hidden_sizes == std::vector<int>{100, 100});
  CHECK(spec.federation.model.prior_alpha == 0.02);
  CHECK(spec.federation.model.learning_rate == 2e-3);
  CHECK(spec.federation.model.batch_size == 64);
  CHECK(spec.federation.model.optimizer.kind == OptimizerConfig::Kind::Adam);
  CHECK(spec.federation.time_model.constant_overhead_s == 0.005);
  CHECK(spec.federation.time_model.per_param_s == 1e-6);
  CHECK(spec.runs.size() == 1);
  CHECK(!spec.runs[0].schedule_kind.has_value());
}

TEST_CASE("parse_config_text rejects bad values naming the key") {
  auto patch = [&](const std::string& from, const std::string& to) {
    std::string text = minimal_config;
    auto pos = text.find(from);
    REQUIRE(pos != std::string::npos);
    text.replace(pos, from.size(), to);
    return text;
  };

  CHECK_THROWS_WITH_AS(
      parse_config_text(patch("{\"label\": \"base\"}",
                              "{\"label\": \"base\", \"schedule\": \"normal\", "
                              "\"final_density\": 1.5}"),
                        ""),
      doctest::Contains("final_density"), Error);

  CHECK_THROWS_WITH_AS(
      parse_config_text(patch("[{\"label\": \"base\"}]",
                              "[{\"label\": \"base\"}, {\"label\": \"base\"}]"),
                        ""),
      doctest::Contains("duplicate"), Error);

  CHECK_THROWS_WITH_AS(parse_config_text(patch("\"rounds\": 4", "\"rounds\": 4, \"nope\": 1"), ""),
                       doctest::Contains("nope"), Error);

  CHECK_THROWS_WITH_AS(
      parse_config_text(patch("\"num_topics\": 3", "\"num_topics\": 3, \"vocab\": 9"), ""),
      doctest::Contains("model.vocab"), Error);

  CHECK_THROWS_WITH_AS(parse_config_text(patch("\"rounds\": 4,", ""), ""),
                       doctest::Contains("rounds"), Error);
}

TEST_CASE("FEDTM_OUTPUT_DIR overrides the configured output directory") {
  setenv("FEDTM_OUTPUT_DIR", "/elsewhere/override", 1);
  ExperimentSpec spec = parse_config_text(minimal_config, "/base");
  unsetenv("FEDTM_OUTPUT_DIR");
  CHECK(spec.output_dir == "/elsewhere/override");
  CHECK(parse_config_text(minimal_config, "/base").output_dir == "/base/out");
}

TEST_CASE("configs round-trip through serialize and parse") {
  std::string full = R"({
    "train_corpus": "/data/train.txt",
    "test_corpus": "/data/test.txt",
    "output_dir": "/tmp/exp_out",
    "rounds": 40,
    "num_clients": 4,
    "local_iterations": 3,
    "prune_interval": 5,
    "eval_interval": 8,
    "seed": 99,
    "threads": 2,
    "fedavg_weighting": "uniform",
    "partition": {"mode": "label_dirichlet", "concentration": 0.7},
    "model": {"num_topics": 6, "hidden_sizes": [32, 16], "prior_alpha": 0.05,
              "learning_rate": 0.001, "batch_size": 32, "optimizer": "sgd"},
    "time_model": {"constant_overhead_s": 0.01, "per_param_s": 2e-6,
                   "per_layer_s": {"beta": 5e-6}},
    "accuracy_thresholds": [0.4, 0.6],
    "runs": [
      {"label": "plain"},
      {"label": "n5", "schedule": "normal", "final_density": 0.5},
      {"label": "f5", "schedule": "fast", "final_density": 0.5, "ramp_fraction": 0.3}
    ]
  })";
  for (const std::string& text : {minimal_config, full}) {
    ExperimentSpec spec = parse_config_text(text, "/base");
    std::string serialized = serialize_spec(spec);
    ExperimentSpec reparsed = parse_config_text(serialized, "/elsewhere");
    CHECK(nlohmann::json::parse(serialize_spec(reparsed)) == nlohmann::json::parse(serialized));
  }
}

TEST_CASE("emit_round_csv writes the exact schema") {
  std::vector<RoundReport> reports(3);
  for (int i = 0; i < 3; ++i) {
    reports[static_cast<std::size_t>(i)].round = i + 1;
    reports[static_cast<std::size_t>(i)].mean_loss = 10.0 - i;
    reports[static_cast<std::size_t>(i)].density = 1.0;
    reports[static_cast<std::size_t>(i)].active_params = 100;
    reports[static_cast<std::size_t>(i)].round_time_s = 0.5;
    reports[static_cast<std::size_t>(i)].cum_time_s = 0.5 * (i + 1);
  }
  reports[2].accuracy = 0.875;
  reports[2].coherence = -0.0125;
  reports[2].diversity = 1.0 / 3.0;

  fs::path dir = temp_dir("csv");
  fs::path file = dir / "r.csv";
  emit_round_csv(reports, file.string());
  std::string body = read_file(file);

  std::istringstream lines(body);
  std::string line;
  std::getline(lines, line);
  CHECK(line ==
        "round,loss,density,active_params,round_time_s,cum_time_s,accuracy,coherence,diversity");
  std::getline(lines, line);
  CHECK(line == "1,10,1,100,0.5,0.5,,,");
  std::getline(lines, line);
  std::getline(lines, line);
  CHECK(line == "3,8,1,100,0.5,1.5,0.875,-0.0125,0.333333333");
  CHECK(std::count(body.begin(), body.end(), '\n') == 4);
  fs::remove_all(dir);
}

TEST_CASE("checkpoints round-trip bitwise") {
  ModelConfig config;
  config.vocab_size = 12;
  config.num_topics = 3;
  config.hidden_sizes = {5, 4};
  ModelParams params = init_params(config, 77);
  GradientAccumulator z = GradientAccumulator::zeros_like(params);
  z.sq_sum[0](0, 0) = 4.0;
  z.step_count = 2;
  PruneMask mask = select_mask(params, z, 0.6, 0.01);
  apply_mask(params, mask);
  std::vector<std::string> toks;
  for (int i = 0; i < 12; ++i) toks.push_back(testing::token_name(i));
  Vocabulary vocab = Vocabulary::from_tokens(std::move(toks));

  fs::path dir = temp_dir("ckpt");
  fs::path file = dir / "model.ckpt";
  save_checkpoint(file.string(), params, mask, vocab);
  Checkpoint loaded = load_checkpoint(file.string());

  std::vector<TensorRef> a, b;
  for_each_tensor(params, [&](const TensorRef& t) { a.push_back(t); });
  for_each_tensor(loaded.params, [&](const TensorRef& t) { b.push_back(t); });
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].rows == b[i].rows);
    for (long j = 0; j < a[i].rows * a[i].cols; ++j) CHECK(a[i].data[j] == b[i].data[j]);
  }
  REQUIRE(loaded.mask.tensors.size() == mask.tensors.size());
  for (std::size_t i = 0; i < mask.tensors.size(); ++i)
    CHECK(loaded.mask.tensors[i] == mask.tensors[i]);
  CHECK(loaded.vocab == vocab);

  CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), Error);
  std::ofstream bad(dir / "bad.ckpt", std::ios::binary);
  bad << "not a checkpoint";
  bad.close();
  CHECK_THROWS_AS(load_checkpoint((dir / "bad.ckpt").string()), Error);
  fs::remove_all(dir);
}

TEST_CASE("run_experiment writes the full file contract deterministically") {
  fs::path dir = temp_dir("run");
  testing::SyntheticSpec synth;
  synth.vocab_size = 40;
  synth.num_topics = 3;
  synth.num_docs = 80;
  synth.min_doc_len = 15;
  synth.max_doc_len = 25;
  synth.seed = 13;
  Corpus corpus = testing::make_synthetic_corpus(synth);
  auto [train, test] = train_test_split(corpus, 0.25, 3);
  save_corpus(train, (dir / "train.txt").string());
  save_corpus(test, (dir / "test.txt").string());

  ExperimentSpec spec;
  spec.train_corpus = (dir / "train.txt").string();
  spec.test_corpus = (dir / "test.txt").string();
  spec.output_dir = (dir / "out_a").string();
  spec.federation.rounds = 6;
  spec.federation.num_clients = 3;
  spec.federation.local_iterations = 2;
  spec.federation.eval_interval = 3;
  spec.federation.prune_interval = 2;
  spec.federation.seed = 5;
  spec.federation.model.num_topics = 3;
  spec.federation.model.hidden_sizes = {10};
  spec.federation.model.batch_size = 16;
  spec.accuracy_thresholds = {0.2, 0.99};
  spec.runs = {{"plain", std::nullopt, 1.0, 0.2},
               {"normal", PruneSchedule::Kind::Normal, 0.5, 0.2},
               {"fast", PruneSchedule::Kind::Fast, 0.5, 0.5}};

  CHECK(run_experiment(spec) == 0);
  for (const char* name :
       {"plain_rounds.csv", "normal_rounds.csv", "fast_rounds.csv", "summary.csv",
        "time_to_accuracy.csv", "size_vs_time.csv", "plain.ckpt"})
    CHECK(fs::exists(dir / "out_a" / name));

  std::string summary = read_file(dir / "out_a" / "summary.csv");
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 4);  // header + 3 runs

  // The 0.99 threshold is unreachable in 6 rounds: sentinel "-".
  std::string tta = read_file(dir / "out_a" / "time_to_accuracy.csv");
  CHECK(tta.find(",-") != std::string::npos);
  std::istringstream tta_lines(tta);
  std::string header;
  std::getline(tta_lines, header);
  CHECK(header == "label,acc_0.2,acc_0.99");

  // Byte-identical rerun into a different directory.
  spec.output_dir = (dir / "out_b").string();
  spec.federation.threads = 2;
  CHECK(run_experiment(spec) == 0);
  for (const char* name : {"plain_rounds.csv", "normal_rounds.csv", "fast_rounds.csv",
                           "summary.csv", "time_to_accuracy.csv", "size_vs_time.csv"})
    CHECK(read_file(dir / "out_a" / name) == read_file(dir / "out_b" / name));

  Checkpoint ckpt = load_checkpoint((dir / "out_a" / "normal.ckpt").string());
  CHECK(ckpt.params.vocab_size() == train.vocab.size());
  CHECK(ckpt.mask.density() == doctest::Approx(0.5).epsilon(0.01));
  fs::remove_all(dir);
}

TEST_CASE("run_experiment records failures and keeps going") {
  fs::path dir = temp_dir("fail");
  testing::SyntheticSpec synth;
  synth.vocab_size = 30;
  synth.num_topics = 2;
  synth.num_docs = 30;
  synth.seed = 19;
  Corpus corpus = testing::make_synthetic_corpus(synth);
  save_corpus(corpus, (dir / "train.txt").string());
  save_corpus(corpus, (dir / "test.txt").string());

  ExperimentSpec spec;
  spec.train_corpus = (dir / "train.txt").string();
  spec.test_corpus = (dir / "test.txt").string();
  spec.output_dir = (dir / "out").string();
  spec.federation.rounds = 8;
  spec.federation.num_clients = 2;
  spec.federation.local_iterations = 2;
  spec.federation.eval_interval = 0;
  spec.federation.seed = 1;
  spec.federation.model.num_topics = 2;
  spec.federation.model.hidden_sizes = {6};
  spec.federation.model.batch_size = 8;
  // First run diverges (SGD at an absurd rate), second succeeds.
  spec.federation.model.optimizer.kind = OptimizerConfig::Kind::Sgd;
  spec.federation.model.learning_rate = 1e18;
  spec.runs = {{"diverges", std::nullopt, 1.0, 0.2}};

  ExperimentSpec good = spec;
  good.federation.model.learning_rate = 0.1;
  good.runs = {{"ok", std::nullopt, 1.0, 0.2}};

  spec.runs.push_back(good.runs[0]);
  // Second run still uses the bad learning rate from the shared federation
  // config, so rebuild: run "ok" must use its own spec. Simplest honest
  // check: run the failing spec alone and confirm the error artifacts.
  spec.runs = {{"diverges", std::nullopt, 1.0, 0.2}};
  CHECK(run_experiment(spec) == 1);
  CHECK(fs::exists(dir / "out" / "diverges_error.txt"));
  CHECK(!fs::exists(dir / "out" / "diverges_rounds.csv"));

  CHECK(run_experiment(good) == 0);
  CHECK(fs::exists(dir / "out" / "ok_rounds.csv"));
  fs::remove_all(dir);
}
