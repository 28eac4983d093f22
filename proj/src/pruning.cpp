#include "fedtm/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedtm {

namespace {

// Prunable tensors in for_each_tensor order, as (rows, cols).
std::vector<std::pair<long, long>> prunable_shapes(const ModelParams& params) {
  std::vector<std::pair<long, long>> shapes;
  for_each_tensor(params, [&](const TensorRef& t) {
    if (t.prunable) shapes.emplace_back(t.rows, t.cols);
  });
  return shapes;
}

}  // namespace

PruneMask PruneMask::ones_like(const ModelParams& params) {
  PruneMask mask;
  for (auto [r, c] : prunable_shapes(params)) mask.tensors.push_back(MaskMat::Ones(r, c));
  return mask;
}

long PruneMask::total() const {
  long n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

long PruneMask::active() const {
  long n = 0;
  for (const auto& t : tensors)
    n += static_cast<long>(t.cast<long>().sum());
  return n;
}

double PruneMask::density() const {
  long tot = total();
  if (tot == 0) return 1.0;
  return static_cast<double>(active()) / static_cast<double>(tot);
}

bool PruneMask::congruent_with(const ModelParams& params) const {
  auto shapes = prunable_shapes(params);
  if (shapes.size() != tensors.size()) return false;
  for (std::size_t i = 0; i < shapes.size(); ++i)
    if (tensors[i].rows() != shapes[i].first || tensors[i].cols() != shapes[i].second)
      return false;
  return true;
}

GradientAccumulator GradientAccumulator::zeros_like(const ModelParams& params) {
  GradientAccumulator z;
  for (auto [r, c] : prunable_shapes(params)) z.sq_sum.push_back(Mat::Zero(r, c));
  return z;
}

void GradientAccumulator::reset() {
  for (auto& t : sq_sum) t.setZero();
  step_count = 0;
}

void accumulate(GradientAccumulator& z, const Gradients& grads) {
  std::size_t i = 0;
  for_each_tensor(grads, [&](const TensorRef& t) {
    if (!t.prunable) return;
    if (i >= z.sq_sum.size() || z.sq_sum[i].rows() != t.rows || z.sq_sum[i].cols() != t.cols)
      throw Error("accumulate: shape mismatch");
    Eigen::Map<const Mat> g(t.data, t.rows, t.cols);
    z.sq_sum[i] += g.cwiseProduct(g);
    ++i;
  });
  ++z.step_count;
}

GradientAccumulator aggregate_accumulators(const std::vector<GradientAccumulator>& zs,
                                           const std::vector<double>& weights) {
  if (zs.empty()) throw Error("aggregate_accumulators: empty list");
  if (zs.size() != weights.size()) throw Error("aggregate_accumulators: weight count mismatch");
  double total_w = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total_w > 0.0)) throw Error("aggregate_accumulators: weights must sum > 0");

  GradientAccumulator out;
  out.sq_sum.reserve(zs[0].sq_sum.size());
  for (const auto& t : zs[0].sq_sum) out.sq_sum.push_back(Mat::Zero(t.rows(), t.cols()));
  double mean_steps = 0.0;
  for (std::size_t c = 0; c < zs.size(); ++c) {
    double scale = weights[c] / total_w;
    if (zs[c].sq_sum.size() != out.sq_sum.size())
      throw Error("aggregate_accumulators: shape mismatch");
    for (std::size_t i = 0; i < out.sq_sum.size(); ++i) {
      if (zs[c].sq_sum[i].rows() != out.sq_sum[i].rows() ||
          zs[c].sq_sum[i].cols() != out.sq_sum[i].cols())
        throw Error("aggregate_accumulators: shape mismatch");
      out.sq_sum[i] += scale * zs[c].sq_sum[i];
    }
    mean_steps += scale * static_cast<double>(zs[c].step_count);
  }
  out.step_count = static_cast<long>(std::lround(mean_steps));
  return out;
}

void PruneSchedule::validate() const {
  if (!(final_density > 0.0 && final_density <= 1.0))
    throw Error("PruneSchedule: final_density must be in (0,1]");
  if (kind == Kind::Fast && !(ramp_fraction > 0.0 && ramp_fraction <= 1.0))
    throw Error("PruneSchedule: ramp_fraction must be in (0,1]");
  if (total_rounds < 1) throw Error("PruneSchedule: total_rounds must be >= 1");
}

double target_density(const PruneSchedule& schedule, int round) {
  schedule.validate();
  if (round < 0) throw Error("target_density: round must be >= 0");
  double horizon = static_cast<double>(schedule.total_rounds);
  if (schedule.kind == PruneSchedule::Kind::Fast) horizon *= schedule.ramp_fraction;
  if (horizon < 1.0) horizon = 1.0;
  double k = std::min(static_cast<double>(round), horizon);
  return 1.0 - (k / horizon) * (1.0 - schedule.final_density);
}

PruneMask select_mask(const std::vector<Mat>& weights, const std::vector<Mat>& z_sq,
                      long z_steps, double density, double learning_rate) {
  if (!(density > 0.0 && density <= 1.0)) throw Error("select_mask: density must be in (0,1]");
  if (z_sq.size() != weights.size()) throw Error("select_mask: accumulator shape mismatch");
  std::vector<std::pair<long, long>> shapes;
  shapes.reserve(weights.size());
  for (const auto& w : weights) shapes.emplace_back(w.rows(), w.cols());

  long m_total = 0;
  for (auto [r, c] : shapes) m_total += r * c;
  const long n_keep = std::lround(density * static_cast<double>(m_total));

  // Importance scores over the global flat index space.
  std::vector<double> score(static_cast<std::size_t>(m_total));
  std::vector<long> tensor_of(static_cast<std::size_t>(m_total));
  const double steps = static_cast<double>(std::max<long>(z_steps, 1));
  long offset = 0;
  for (std::size_t t = 0; t < shapes.size(); ++t) {
    const long n = shapes[t].first * shapes[t].second;
    if (z_sq[t].rows() != shapes[t].first || z_sq[t].cols() != shapes[t].second)
      throw Error("select_mask: accumulator shape mismatch");
    const double* w = weights[t].data();
    const double* zz = z_sq[t].data();
    for (long i = 0; i < n; ++i) {
      score[static_cast<std::size_t>(offset + i)] =
          std::abs(w[i]) + learning_rate * std::sqrt(zz[i] / steps);
      tensor_of[static_cast<std::size_t>(offset + i)] = static_cast<long>(t);
    }
    offset += n;
  }

  // Global top-n_keep, ties broken by lower flat index.
  std::vector<long> order(static_cast<std::size_t>(m_total));
  std::iota(order.begin(), order.end(), 0L);
  auto better = [&](long a, long b) {
    double sa = score[static_cast<std::size_t>(a)];
    double sb = score[static_cast<std::size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;
  };
  if (n_keep < m_total) {
    std::nth_element(order.begin(), order.begin() + n_keep, order.end(), better);
    order.resize(static_cast<std::size_t>(n_keep));
  }

  std::vector<std::uint8_t> kept(static_cast<std::size_t>(m_total), 0);
  for (long idx : order) kept[static_cast<std::size_t>(idx)] = 1;

  // Keep every tensor alive: pull in its best entry, drop the worst kept
  // entry among tensors that keep more than one.
  std::vector<long> kept_per_tensor(shapes.size(), 0);
  for (long i = 0; i < m_total; ++i)
    if (kept[static_cast<std::size_t>(i)]) ++kept_per_tensor[static_cast<std::size_t>(tensor_of[static_cast<std::size_t>(i)])];
  for (std::size_t t = 0; t < shapes.size(); ++t) {
    if (kept_per_tensor[t] > 0) continue;
    long best = -1;
    long base = 0;
    for (std::size_t u = 0; u < t; ++u) base += shapes[u].first * shapes[u].second;
    const long n = shapes[t].first * shapes[t].second;
    for (long i = base; i < base + n; ++i)
      if (best < 0 || better(i, best)) best = i;
    long worst = -1;
    for (long i = 0; i < m_total; ++i) {
      if (!kept[static_cast<std::size_t>(i)]) continue;
      if (kept_per_tensor[static_cast<std::size_t>(tensor_of[static_cast<std::size_t>(i)])] < 2)
        continue;
      if (worst < 0 || better(worst, i)) worst = i;
    }
    if (worst < 0) break;  // nothing to trade
    kept[static_cast<std::size_t>(worst)] = 0;
    --kept_per_tensor[static_cast<std::size_t>(tensor_of[static_cast<std::size_t>(worst)])];
    kept[static_cast<std::size_t>(best)] = 1;
    ++kept_per_tensor[t];
  }

  PruneMask mask;
  offset = 0;
  for (auto [r, c] : shapes) {
    MaskMat m(r, c);
    for (long i = 0; i < r * c; ++i) m.data()[i] = kept[static_cast<std::size_t>(offset + i)];
    mask.tensors.push_back(std::move(m));
    offset += r * c;
  }
  return mask;
}

PruneMask select_mask(const ModelParams& params, const GradientAccumulator& z, double density,
                      double learning_rate) {
  std::vector<Mat> weights;
  for_each_tensor(params, [&](const TensorRef& t) {
    if (t.prunable) weights.push_back(Eigen::Map<const Mat>(t.data, t.rows, t.cols));
  });
  return select_mask(weights, z.sq_sum, z.step_count, density, learning_rate);
}

void apply_mask(ModelParams& params, const PruneMask& mask) {
  if (!mask.congruent_with(params)) throw Error("apply_mask: shape mismatch");
  std::size_t i = 0;
  for_each_tensor(params, [&](const TensorRef& t) {
    if (!t.prunable) return;
    const std::uint8_t* m = mask.tensors[i].data();
    for (long j = 0; j < t.rows * t.cols; ++j) t.data[j] *= static_cast<double>(m[j]);
    ++i;
  });
}

}  // namespace fedtm
