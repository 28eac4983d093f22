#pragma once

#include <optional>
#include <vector>

#include "fedtm/common.hpp"
#include "fedtm/model.hpp"

namespace fedtm {

// Binary mask over the prunable tensors (weight matrices including beta,
// biases excluded), aligned with the for_each_tensor prunable order.
struct PruneMask {
  std::vector<MaskMat> tensors;

  static PruneMask ones_like(const ModelParams& params);

  long total() const;
  long active() const;
  double density() const;  // 1.0 when there are no prunable entries
  bool congruent_with(const ModelParams& params) const;
};

// Sum of squared per-parameter gradients since the last reset.
struct GradientAccumulator {
  std::vector<Mat> sq_sum;
  long step_count = 0;

  static GradientAccumulator zeros_like(const ModelParams& params);
  void reset();
};

// Z += g^2 entrywise over the prunable tensors; step_count incremented.
void accumulate(GradientAccumulator& z, const Gradients& grads);

// Entrywise weighted average, weights normalized to sum 1. step_count of the
// result is the weighted average of the inputs' counts, rounded.
GradientAccumulator aggregate_accumulators(const std::vector<GradientAccumulator>& zs,
                                           const std::vector<double>& weights);

// Target-density schedules. Round 0 is always density 1; the target reaches
// final_density at total_rounds (Normal) or at ramp_fraction * total_rounds
// (Fast) and stays there.
struct PruneSchedule {
  enum class Kind { Normal, Fast };
  Kind kind = Kind::Normal;
  double final_density = 1.0;   // in (0, 1]
  double ramp_fraction = 0.2;   // Fast only, in (0, 1]
  int total_rounds = 0;

  void validate() const;
};

double target_density(const PruneSchedule& schedule, int round);

// Keeps exactly round(density * M) entries with the largest scores
//   s_j = |w_j| + lr * sqrt(Z_j / max(step_count, 1)),
// ranked globally across all prunable tensors, ties broken by lower flat
// index. A zero weight with a large accumulated gradient can re-enter the
// kept set (gradient recovery). Every tensor keeps at least one entry when
// the budget allows (swapping out the worst kept entry elsewhere).
PruneMask select_mask(const std::vector<Mat>& weights, const std::vector<Mat>& z_sq,
                      long z_steps, double density, double learning_rate);

PruneMask select_mask(const ModelParams& params, const GradientAccumulator& z, double density,
                      double learning_rate);

// Entrywise product on the prunable tensors; biases untouched.
void apply_mask(ModelParams& params, const PruneMask& mask);

}  // namespace fedtm
