#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedtm/federation.hpp"

namespace fedtm {

// One training run within an experiment: a label plus its pruning schedule
// (absent kind = unpruned baseline).
struct RunSpec {
  std::string label;
  std::optional<PruneSchedule::Kind> schedule_kind;
  double final_density = 1.0;
  double ramp_fraction = 0.2;
};

struct ExperimentSpec {
  std::string train_corpus;
  std::string test_corpus;
  std::string output_dir = "out";
  FederationConfig federation;  // per-run schedules are filled from runs
  std::vector<RunSpec> runs;
  std::vector<double> accuracy_thresholds;
};

// Strict JSON parse: unknown keys, missing required keys, and out-of-range
// values all raise Error naming the key. Relative paths are resolved against
// the config file's directory; FEDTM_OUTPUT_DIR overrides output_dir.
ExperimentSpec parse_config(const std::string& path);

// Same validation applied to an in-memory JSON document (base_dir resolves
// relative paths).
ExperimentSpec parse_config_text(const std::string& json_text, const std::string& base_dir);

// Full round-trippable serialization with defaults materialized.
std::string serialize_spec(const ExperimentSpec& spec);

// Writes `<label>_rounds.csv` rows: metric columns are empty on non-eval
// rounds, numbers carry 9 significant digits, locale independent.
void emit_round_csv(const std::vector<RoundReport>& reports, const std::string& path);

// Executes every run: per-round CSVs, summary.csv, time_to_accuracy.csv
// (first cumulative time each run crosses each threshold, "-" if never),
// size_vs_time.csv, and a final checkpoint per run. A failing run is
// recorded in <label>_error.txt and the rest continue. Returns 0 when all
// runs succeeded, 1 otherwise.
int run_experiment(const ExperimentSpec& spec);

}  // namespace fedtm
