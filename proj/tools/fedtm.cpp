#include <iostream>

#include <CLI11.hpp>

#include "fedtm/checkpoint.hpp"
#include "fedtm/experiment.hpp"
#include "fedtm/metrics.hpp"

namespace {

int cmd_run(const std::string& config_path) {
  fedtm::ExperimentSpec spec = fedtm::parse_config(config_path);
  return fedtm::run_experiment(spec);
}

int cmd_validate(const std::string& config_path) {
  fedtm::ExperimentSpec spec = fedtm::parse_config(config_path);
  std::cout << fedtm::serialize_spec(spec) << '\n';
  return 0;
}

int cmd_inspect(const std::string& checkpoint_path, int top_n) {
  fedtm::Checkpoint ckpt = fedtm::load_checkpoint(checkpoint_path);
  std::cout << "tensors:\n";
  fedtm::for_each_tensor(ckpt.params, [](const fedtm::TensorRef& t) {
    std::cout << "  " << t.name << "  " << t.rows << " x " << t.cols
              << (t.prunable ? "  (prunable)" : "") << '\n';
  });
  auto shapes = fedtm::layer_shapes(ckpt.params);
  fedtm::SizeReport size = fedtm::model_size(ckpt.mask, shapes);
  std::cout << "active parameters: " << size.active_params << '\n';
  std::cout << "density (prunable): " << size.density << '\n';

  const int v = ckpt.params.vocab_size();
  fedtm::TopicSet topics = fedtm::top_words(ckpt.params.beta, std::min(top_n, v));
  for (std::size_t k = 0; k < topics.topics.size(); ++k) {
    std::cout << "topic " << k << ':';
    for (int idx : topics.topics[k]) {
      std::cout << ' ';
      if (idx < ckpt.vocab.size())
        std::cout << ckpt.vocab.tokens[static_cast<std::size_t>(idx)];
      else
        std::cout << '#' << idx;
    }
    std::cout << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated topic-model training simulator with progressive pruning"};
  app.require_subcommand(1);

  std::string config_path;
  std::string checkpoint_path;
  int top_n = 10;

  CLI::App* run = app.add_subcommand("run", "Execute every run in an experiment config");
  run->add_option("config", config_path, "experiment config (JSON)")->required();

  CLI::App* validate =
      app.add_subcommand("validate", "Parse a config and print it with defaults filled in");
  validate->add_option("config", config_path, "experiment config (JSON)")->required();

  CLI::App* inspect = app.add_subcommand("inspect", "Print checkpoint shapes and top words");
  inspect->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
  inspect->add_option("--top", top_n, "words per topic")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path);
    if (validate->parsed()) return cmd_validate(config_path);
    if (inspect->parsed()) return cmd_inspect(checkpoint_path, top_n);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
