#include "fedtm/model.hpp"

#include <cmath>

#include "fedtm/pruning.hpp"
#include "fedtm/rng.hpp"

namespace fedtm {

namespace {

constexpr double kLogvarClamp = 10.0;

double softplus(double a) { return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a))); }

double sigmoid(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  double e = std::exp(a);
  return e / (1.0 + e);
}

// Row-wise softmax with max subtraction.
Mat softmax_rows(const Mat& z) {
  Mat out(z.rows(), z.cols());
  for (long i = 0; i < z.rows(); ++i) {
    double mx = z.row(i).maxCoeff();
    double sum = 0.0;
    for (long j = 0; j < z.cols(); ++j) {
      double e = std::exp(z(i, j) - mx);
      out(i, j) = e;
      sum += e;
    }
    out.row(i) /= sum;
  }
  return out;
}

Mat log_softmax_rows(const Mat& z) {
  Mat out(z.rows(), z.cols());
  for (long i = 0; i < z.rows(); ++i) {
    double mx = z.row(i).maxCoeff();
    double sum = 0.0;
    for (long j = 0; j < z.cols(); ++j) sum += std::exp(z(i, j) - mx);
    double lse = mx + std::log(sum);
    for (long j = 0; j < z.cols(); ++j) out(i, j) = z(i, j) - lse;
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) throw Error("ModelConfig: vocab_size must be >= 2");
  if (num_topics < 2) throw Error("ModelConfig: num_topics must be >= 2");
  if (hidden_sizes.empty()) throw Error("ModelConfig: hidden_sizes must be non-empty");
  for (int h : hidden_sizes)
    if (h < 1) throw Error("ModelConfig: hidden sizes must be >= 1");
  if (!(prior_alpha > 0.0)) throw Error("ModelConfig: prior_alpha must be > 0");
  if (!(learning_rate > 0.0)) throw Error("ModelConfig: learning_rate must be > 0");
  if (batch_size < 1) throw Error("ModelConfig: batch_size must be >= 1");
}

LogisticNormalPrior prior_from_alpha(double alpha, int num_topics) {
  if (!(alpha > 0.0)) throw Error("prior_from_alpha: alpha must be > 0");
  if (num_topics < 2) throw Error("prior_from_alpha: need at least 2 topics");
  const double k = static_cast<double>(num_topics);
  LogisticNormalPrior prior;
  prior.mu0 = Vec::Zero(num_topics);  // log a - mean log a = 0 when symmetric
  double var = (1.0 / alpha) * (1.0 - 2.0 / k) + 1.0 / (k * alpha);
  prior.var0 = Vec::Constant(num_topics, var);
  return prior;
}

void for_each_tensor(ModelParams& params, const std::function<void(const TensorRef&)>& fn) {
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    auto& layer = params.encoder[l];
    std::string base = "encoder" + std::to_string(l);
    fn({base + ".weight", layer.weight.data(), layer.weight.rows(), layer.weight.cols(), true});
    fn({base + ".bias", layer.bias.data(), layer.bias.size(), 1, false});
  }
  fn({"mu.weight", params.mu_head.weight.data(), params.mu_head.weight.rows(),
      params.mu_head.weight.cols(), true});
  fn({"mu.bias", params.mu_head.bias.data(), params.mu_head.bias.size(), 1, false});
  fn({"logvar.weight", params.logvar_head.weight.data(), params.logvar_head.weight.rows(),
      params.logvar_head.weight.cols(), true});
  fn({"logvar.bias", params.logvar_head.bias.data(), params.logvar_head.bias.size(), 1, false});
  fn({"beta", params.beta.data(), params.beta.rows(), params.beta.cols(), true});
}

void for_each_tensor(const ModelParams& params,
                     const std::function<void(const TensorRef&)>& fn) {
  for_each_tensor(const_cast<ModelParams&>(params), fn);
}

std::vector<LayerShape> layer_shapes(const ModelParams& params) {
  std::vector<LayerShape> shapes;
  for_each_tensor(params, [&](const TensorRef& t) {
    shapes.push_back({t.name, t.rows, t.cols, t.prunable});
  });
  return shapes;
}

Gradients zeros_like(const ModelParams& params) {
  Gradients g;
  g.encoder.resize(params.encoder.size());
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    g.encoder[l].weight = Mat::Zero(params.encoder[l].weight.rows(), params.encoder[l].weight.cols());
    g.encoder[l].bias = Vec::Zero(params.encoder[l].bias.size());
  }
  g.mu_head.weight = Mat::Zero(params.mu_head.weight.rows(), params.mu_head.weight.cols());
  g.mu_head.bias = Vec::Zero(params.mu_head.bias.size());
  g.logvar_head.weight =
      Mat::Zero(params.logvar_head.weight.rows(), params.logvar_head.weight.cols());
  g.logvar_head.bias = Vec::Zero(params.logvar_head.bias.size());
  g.beta = Mat::Zero(params.beta.rows(), params.beta.cols());
  return g;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams params;
  int in = config.vocab_size;
  for (int h : config.hidden_sizes) {
    params.encoder.push_back({Mat::Zero(h, in), Vec::Zero(h)});
    in = h;
  }
  params.mu_head = {Mat::Zero(config.num_topics, in), Vec::Zero(config.num_topics)};
  params.logvar_head = {Mat::Zero(config.num_topics, in), Vec::Zero(config.num_topics)};
  params.beta = Mat::Zero(config.num_topics, config.vocab_size);

  Rng rng(mix_seed(seed, 0x696e6974ULL, static_cast<std::uint64_t>(config.vocab_size)));
  for_each_tensor(params, [&](const TensorRef& t) {
    if (!t.prunable) return;  // biases stay zero
    double bound = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
    for (long i = 0; i < t.rows * t.cols; ++i) t.data[i] = rng.uniform(-bound, bound);
  });
  return params;
}

ForwardTrace encode(const ModelParams& params, const Mat& x) {
  if (x.cols() != params.vocab_size()) throw Error("encode: input width != vocab size");
  ForwardTrace trace;
  Mat h = x;
  for (const auto& layer : params.encoder) {
    Mat pre = (h * layer.weight.transpose()).rowwise() + layer.bias.transpose();
    Mat act(pre.rows(), pre.cols());
    for (long i = 0; i < pre.size(); ++i) act.data()[i] = softplus(pre.data()[i]);
    trace.pre.push_back(pre);
    trace.act.push_back(act);
    h = std::move(act);
  }
  const Mat& top = trace.act.back();
  trace.mu = (top * params.mu_head.weight.transpose()).rowwise() +
             params.mu_head.bias.transpose();
  trace.logvar_raw = (top * params.logvar_head.weight.transpose()).rowwise() +
                     params.logvar_head.bias.transpose();
  trace.logvar = trace.logvar_raw.cwiseMax(-kLogvarClamp).cwiseMin(kLogvarClamp);
  if (!trace.mu.allFinite() || !trace.logvar.allFinite())
    throw Error("encode: non-finite activation (training diverged; reduce learning rate)");
  return trace;
}

Mat sample_theta(const Mat& mu, const Mat& logvar, const Mat& eps) {
  if (mu.rows() != eps.rows() || mu.cols() != eps.cols() || mu.rows() != logvar.rows() ||
      mu.cols() != logvar.cols())
    throw Error("sample_theta: shape mismatch");
  Mat z = mu + (0.5 * logvar).array().exp().matrix().cwiseProduct(eps);
  return softmax_rows(z);
}

Mat decode(const ModelParams& params, const Mat& theta) {
  if (theta.cols() != params.num_topics()) throw Error("decode: theta width != num topics");
  return log_softmax_rows(theta * params.beta);
}

Losses elbo_loss(const Mat& x, const Mat& log_probs, const Mat& mu, const Mat& logvar,
                 const LogisticNormalPrior& prior) {
  Losses loss;
  loss.recon = -(x.cwiseProduct(log_probs)).sum();
  for (long i = 0; i < mu.rows(); ++i) {
    for (long k = 0; k < mu.cols(); ++k) {
      double var0 = prior.var0(k);
      double dmu = mu(i, k) - prior.mu0(k);
      loss.kl += 0.5 * (std::exp(logvar(i, k)) / var0 + dmu * dmu / var0 - 1.0 +
                        std::log(var0) - logvar(i, k));
    }
  }
  loss.total = loss.recon + loss.kl;
  if (!std::isfinite(loss.total)) throw Error("elbo_loss: non-finite loss (diverged)");
  return loss;
}

std::pair<ForwardTrace, Losses> forward_pass(const ModelParams& params, const Mat& x,
                                             const Mat& eps, const LogisticNormalPrior& prior) {
  ForwardTrace trace = encode(params, x);
  trace.eps = eps;
  trace.theta = sample_theta(trace.mu, trace.logvar, eps);
  trace.log_probs = decode(params, trace.theta);
  trace.probs = trace.log_probs.array().exp();
  Losses loss = elbo_loss(x, trace.log_probs, trace.mu, trace.logvar, prior);
  return {std::move(trace), loss};
}

Gradients backward(const ForwardTrace& trace, const Mat& x, const LogisticNormalPrior& prior,
                   const ModelParams& params) {
  if (x.rows() != trace.mu.rows()) throw Error("backward: batch mismatch");
  Gradients grads = zeros_like(params);
  const long batch = x.rows();
  const long num_topics = trace.mu.cols();

  // d recon / d logits = N_b * softmax(logits) - x  (per row).
  Mat dlogits = trace.probs;
  for (long i = 0; i < batch; ++i) dlogits.row(i) *= x.row(i).sum();
  dlogits -= x;

  grads.beta = trace.theta.transpose() * dlogits;
  Mat dtheta = dlogits * params.beta.transpose();

  // Through the softmax producing theta.
  Mat dz(batch, num_topics);
  for (long i = 0; i < batch; ++i) {
    double dot = dtheta.row(i).dot(trace.theta.row(i));
    for (long k = 0; k < num_topics; ++k)
      dz(i, k) = trace.theta(i, k) * (dtheta(i, k) - dot);
  }

  // z = mu + exp(0.5 logvar) .* eps, plus the KL terms.
  Mat sigma = (0.5 * trace.logvar).array().exp();
  Mat dmu = dz;
  Mat dlogvar = 0.5 * dz.cwiseProduct(trace.eps).cwiseProduct(sigma);
  for (long i = 0; i < batch; ++i) {
    for (long k = 0; k < num_topics; ++k) {
      double var0 = prior.var0(k);
      dmu(i, k) += (trace.mu(i, k) - prior.mu0(k)) / var0;
      dlogvar(i, k) += 0.5 * (std::exp(trace.logvar(i, k)) / var0 - 1.0);
      // Clamp is flat outside its range.
      if (std::abs(trace.logvar_raw(i, k)) > kLogvarClamp) dlogvar(i, k) = 0.0;
    }
  }

  const Mat& top = trace.act.back();
  grads.mu_head.weight = dmu.transpose() * top;
  grads.mu_head.bias = dmu.colwise().sum();
  grads.logvar_head.weight = dlogvar.transpose() * top;
  grads.logvar_head.bias = dlogvar.colwise().sum();

  Mat dh = dmu * params.mu_head.weight + dlogvar * params.logvar_head.weight;
  for (long l = static_cast<long>(params.encoder.size()) - 1; l >= 0; --l) {
    const auto& pre = trace.pre[static_cast<std::size_t>(l)];
    Mat da(dh.rows(), dh.cols());
    for (long i = 0; i < da.size(); ++i)
      da.data()[i] = dh.data()[i] * sigmoid(pre.data()[i]);
    const Mat& below = (l == 0) ? x : trace.act[static_cast<std::size_t>(l - 1)];
    grads.encoder[static_cast<std::size_t>(l)].weight = da.transpose() * below;
    grads.encoder[static_cast<std::size_t>(l)].bias = da.colwise().sum();
    if (l > 0) dh = da * params.encoder[static_cast<std::size_t>(l)].weight;
  }
  return grads;
}

OptimizerState init_optimizer_state(const ModelParams& params) {
  OptimizerState state;
  state.m = zeros_like(params);
  state.v = zeros_like(params);
  return state;
}

void apply_update(ModelParams& params, const Gradients& grads, OptimizerState& state,
                  const PruneMask* mask, double learning_rate, const OptimizerConfig& opt) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));

  std::size_t prunable_idx = 0;
  std::vector<TensorRef> prefs, grefs, mrefs, vrefs;
  for_each_tensor(params, [&](const TensorRef& t) { prefs.push_back(t); });
  for_each_tensor(grads, [&](const TensorRef& t) { grefs.push_back(t); });
  for_each_tensor(state.m, [&](const TensorRef& t) { mrefs.push_back(t); });
  for_each_tensor(state.v, [&](const TensorRef& t) { vrefs.push_back(t); });

  for (std::size_t ti = 0; ti < prefs.size(); ++ti) {
    const TensorRef& p = prefs[ti];
    const std::uint8_t* m = nullptr;
    if (p.prunable) {
      if (mask) m = mask->tensors[prunable_idx].data();
      ++prunable_idx;
    }
    const long n = p.rows * p.cols;
    double* w = p.data;
    const double* g = grefs[ti].data;
    double* m1 = mrefs[ti].data;
    double* m2 = vrefs[ti].data;
    if (opt.kind == OptimizerConfig::Kind::Sgd) {
      for (long i = 0; i < n; ++i) {
        if (m && !m[i]) {
          w[i] = 0.0;
          continue;
        }
        w[i] -= learning_rate * g[i];
      }
    } else {
      for (long i = 0; i < n; ++i) {
        if (m && !m[i]) {
          w[i] = 0.0;
          m1[i] = 0.0;
          m2[i] = 0.0;
          continue;
        }
        m1[i] = opt.beta1 * m1[i] + (1.0 - opt.beta1) * g[i];
        m2[i] = opt.beta2 * m2[i] + (1.0 - opt.beta2) * g[i] * g[i];
        double mhat = m1[i] / bc1;
        double vhat = m2[i] / bc2;
        w[i] -= learning_rate * mhat / (std::sqrt(vhat) + opt.eps);
      }
    }
  }
}

Mat infer_theta(const ModelParams& params, const Mat& x) {
  ForwardTrace trace = encode(params, x);
  return softmax_rows(trace.mu);
}

}  // namespace fedtm
