#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fedtm/common.hpp"

namespace fedtm {

struct OptimizerConfig {
  enum class Kind { Adam, Sgd };
  Kind kind = Kind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ModelConfig {
  int vocab_size = 0;
  int num_topics = 0;
  std::vector<int> hidden_sizes = {100, 100};
  double prior_alpha = 0.02;
  double learning_rate = 2e-3;
  OptimizerConfig optimizer;
  int batch_size = 64;

  void validate() const;  // throws Error on bad values
};

// Gaussian approximation of a symmetric Dirichlet prior in softmax space.
struct LogisticNormalPrior {
  Vec mu0;
  Vec var0;
};

// mu0_k = log(a_k) - mean_i log(a_i)  (zero for symmetric alpha)
// var0_k = (1/a_k)(1 - 2/K) + (1/K^2) sum_i 1/a_i
LogisticNormalPrior prior_from_alpha(double alpha, int num_topics);

struct DenseLayer {
  Mat weight;  // out x in
  Vec bias;    // out
};

// All trainable tensors: softplus encoder stack, Gaussian heads, and the
// topic-word matrix beta (K x V, unnormalized).
struct ModelParams {
  std::vector<DenseLayer> encoder;
  DenseLayer mu_head;
  DenseLayer logvar_head;
  Mat beta;

  int vocab_size() const { return static_cast<int>(beta.cols()); }
  int num_topics() const { return static_cast<int>(beta.rows()); }
};

// Gradients share the parameter tree shape.
using Gradients = ModelParams;

// Visits every tensor as a flat span in a fixed order (encoder weights and
// biases, heads, beta). `prunable` marks weight matrices; biases are not
// prunable. The order defines global flat indices for mask tie-breaking and
// the checkpoint layout.
struct TensorRef {
  std::string name;
  double* data;
  long rows;
  long cols;
  bool prunable;
};
void for_each_tensor(ModelParams& params, const std::function<void(const TensorRef&)>& fn);
void for_each_tensor(const ModelParams& params,
                     const std::function<void(const TensorRef&)>& fn);

struct LayerShape {
  std::string name;
  long rows = 0;
  long cols = 0;
  bool prunable = false;
  long size() const { return rows * cols; }
};
std::vector<LayerShape> layer_shapes(const ModelParams& params);

Gradients zeros_like(const ModelParams& params);

// Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases.
// Deterministic in (config, seed); fill order follows for_each_tensor.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Cached intermediates for one mini-batch, consumed by backward().
struct ForwardTrace {
  std::vector<Mat> pre;  // per encoder layer, batch x out
  std::vector<Mat> act;
  Mat mu;          // batch x K
  Mat logvar_raw;  // before clamping
  Mat logvar;      // clamped to [-10, 10]
  Mat eps;         // noise used by sample_theta
  Mat theta;       // batch x K, rows on the simplex
  Mat probs;       // batch x V, softmax of theta * beta
  Mat log_probs;   // batch x V
};

// Softplus MLP over the counts, then linear heads. Throws Error on
// non-finite activations (training divergence).
ForwardTrace encode(const ModelParams& params, const Mat& x);

// softmax(mu + exp(0.5 logvar) .* eps), row-wise.
Mat sample_theta(const Mat& mu, const Mat& logvar, const Mat& eps);

// log_softmax(theta * beta), row-wise.
Mat decode(const ModelParams& params, const Mat& theta);

struct Losses {
  double recon = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

// recon = -sum x .* log_probs; kl = diagonal-Gaussian KL against the prior.
// Both summed over the batch. Throws Error on non-finite values.
Losses elbo_loss(const Mat& x, const Mat& log_probs, const Mat& mu, const Mat& logvar,
                 const LogisticNormalPrior& prior);

// encode + sample_theta + decode + elbo_loss with the trace fully populated.
std::pair<ForwardTrace, Losses> forward_pass(const ModelParams& params, const Mat& x,
                                             const Mat& eps, const LogisticNormalPrior& prior);

// Exact backpropagation of d total / d p through the whole pass, noise held
// fixed. The trace must come from forward_pass on the same params and x.
Gradients backward(const ForwardTrace& trace, const Mat& x, const LogisticNormalPrior& prior,
                   const ModelParams& params);

struct OptimizerState {
  long step = 0;
  ModelParams m;  // first moments (Adam)
  ModelParams v;  // second moments (Adam)
};
OptimizerState init_optimizer_state(const ModelParams& params);

struct PruneMask;  // pruning.hpp

// One optimizer step. With a mask, masked entries receive zero update, stay
// exactly zero, and have their moments zeroed.
void apply_update(ModelParams& params, const Gradients& grads, OptimizerState& state,
                  const PruneMask* mask, double learning_rate, const OptimizerConfig& opt);

// Evaluation-mode document-topic proportions: softmax(mu), no sampling.
Mat infer_theta(const ModelParams& params, const Mat& x);

}  // namespace fedtm
