#include "fedtm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace fedtm {

namespace {

std::uint64_t pair_key(int i, int j) {
  if (i > j) std::swap(i, j);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(i)) << 32) |
         static_cast<std::uint32_t>(j);
}

Mat softmax_rows(const Mat& z) {
  Mat out(z.rows(), z.cols());
  for (long i = 0; i < z.rows(); ++i) {
    double mx = z.row(i).maxCoeff();
    double sum = 0.0;
    for (long j = 0; j < z.cols(); ++j) {
      out(i, j) = std::exp(z(i, j) - mx);
      sum += out(i, j);
    }
    out.row(i) /= sum;
  }
  return out;
}

}  // namespace

TopicSet top_words(const Mat& beta, int n) {
  if (n < 1 || n > beta.cols()) throw Error("top_words: n must be in [1, V]");
  TopicSet out;
  out.top_n = n;
  out.topics.reserve(static_cast<std::size_t>(beta.rows()));
  std::vector<int> idx(static_cast<std::size_t>(beta.cols()));
  for (long k = 0; k < beta.rows(); ++k) {
    for (int v = 0; v < static_cast<int>(beta.cols()); ++v) idx[static_cast<std::size_t>(v)] = v;
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      double wa = beta(k, a);
      double wb = beta(k, b);
      if (wa != wb) return wa > wb;
      return a < b;
    });
    out.topics.emplace_back(idx.begin(), idx.begin() + n);
  }
  return out;
}

long CooccurrenceStats::joint(int i, int j) const {
  auto it = joint_freq.find(pair_key(i, j));
  return it == joint_freq.end() ? 0 : it->second;
}

CooccurrenceStats build_cooccurrence(const Corpus& corpus) {
  if (corpus.docs.empty()) throw Error("build_cooccurrence: empty corpus");
  CooccurrenceStats stats;
  stats.num_docs = corpus.num_docs();
  stats.doc_freq.assign(static_cast<std::size_t>(corpus.vocab.size()), 0);
  for (const auto& doc : corpus.docs) {
    for (std::size_t a = 0; a < doc.counts.size(); ++a) {
      ++stats.doc_freq[static_cast<std::size_t>(doc.counts[a].first)];
      for (std::size_t b = a + 1; b < doc.counts.size(); ++b)
        ++stats.joint_freq[pair_key(doc.counts[a].first, doc.counts[b].first)];
    }
  }
  return stats;
}

double npmi_coherence(const TopicSet& topics, const CooccurrenceStats& stats) {
  if (stats.num_docs <= 0) throw Error("npmi_coherence: empty stats");
  constexpr double kEps = 1e-12;
  const double d = static_cast<double>(stats.num_docs);
  double topic_sum = 0.0;
  for (const auto& words : topics.topics) {
    double pair_sum = 0.0;
    long pairs = 0;
    for (std::size_t a = 0; a < words.size(); ++a) {
      for (std::size_t b = a + 1; b < words.size(); ++b) {
        ++pairs;
        long joint = stats.joint(words[a], words[b]);
        if (joint == 0) {
          pair_sum += -1.0;
          continue;
        }
        double pij = static_cast<double>(joint) / d;
        if (pij >= 1.0) continue;  // degenerate: every document, NPMI -> 0
        double pi = static_cast<double>(stats.doc_freq[static_cast<std::size_t>(words[a])]) / d;
        double pj = static_cast<double>(stats.doc_freq[static_cast<std::size_t>(words[b])]) / d;
        double val = (std::log(pij + kEps) - std::log(pi * pj + kEps)) / (-std::log(pij + kEps));
        pair_sum += std::clamp(val, -1.0, 1.0);
      }
    }
    if (pairs > 0) topic_sum += pair_sum / static_cast<double>(pairs);
  }
  return topics.topics.empty() ? 0.0 : topic_sum / static_cast<double>(topics.topics.size());
}

double topic_diversity(const TopicSet& topics) {
  if (topics.topics.empty()) throw Error("topic_diversity: no topics");
  std::set<int> distinct;
  for (const auto& words : topics.topics) distinct.insert(words.begin(), words.end());
  return static_cast<double>(distinct.size()) /
         (static_cast<double>(topics.top_n) * static_cast<double>(topics.topics.size()));
}

double classify_accuracy(const Mat& theta_train, const std::vector<int>& labels_train,
                         const Mat& theta_test, const std::vector<int>& labels_test,
                         int num_classes) {
  const long n_train = theta_train.rows();
  const long n_test = theta_test.rows();
  const long dim = theta_train.cols();
  if (n_train != static_cast<long>(labels_train.size()) ||
      n_test != static_cast<long>(labels_test.size()))
    throw Error("classify_accuracy: label count mismatch");
  if (theta_test.cols() != dim) throw Error("classify_accuracy: feature width mismatch");
  std::set<int> classes(labels_train.begin(), labels_train.end());
  if (classes.size() < 2) throw Error("classify_accuracy: training labels have a single class");
  for (int y : labels_train)
    if (y < 0 || y >= num_classes) throw Error("classify_accuracy: label out of range");
  for (int y : labels_test)
    if (y < 0 || y >= num_classes) throw Error("classify_accuracy: label out of range");

  const int c = num_classes;
  Mat w = Mat::Zero(c, dim);
  Vec b = Vec::Zero(c);
  constexpr int kSteps = 500;
  constexpr double kRate = 0.1;

  for (int step = 0; step < kSteps; ++step) {
    Mat logits = (theta_train * w.transpose()).rowwise() + b.transpose();
    Mat p = softmax_rows(logits);
    for (long i = 0; i < n_train; ++i) p(i, labels_train[static_cast<std::size_t>(i)]) -= 1.0;
    p /= static_cast<double>(n_train);
    w -= kRate * (p.transpose() * theta_train);
    b -= kRate * p.colwise().sum().transpose();
  }

  Mat logits = (theta_test * w.transpose()).rowwise() + b.transpose();
  long correct = 0;
  for (long i = 0; i < n_test; ++i) {
    int best = 0;
    for (int k = 1; k < c; ++k)
      if (logits(i, k) > logits(i, best)) best = k;
    if (best == labels_test[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n_test);
}

double perplexity(const ModelParams& params, const Corpus& corpus) {
  if (corpus.docs.empty()) throw Error("perplexity: empty corpus");
  const int v = params.vocab_size();
  if (corpus.vocab.size() != v) throw Error("perplexity: corpus vocabulary mismatch");

  double log_lik = 0.0;
  double tokens = 0.0;
  constexpr long kChunk = 256;
  for (long start = 0; start < corpus.num_docs(); start += kChunk) {
    long count = std::min<long>(kChunk, corpus.num_docs() - start);
    Mat x = Mat::Zero(count, v);
    for (long i = 0; i < count; ++i)
      for (const auto& [idx, cnt] : corpus.docs[static_cast<std::size_t>(start + i)].counts)
        x(i, idx) = static_cast<double>(cnt);
    Mat theta = infer_theta(params, x);
    Mat log_probs = decode(params, theta);
    log_lik += x.cwiseProduct(log_probs).sum();
    tokens += x.sum();
  }
  return std::exp(-log_lik / tokens);
}

SizeReport model_size(const PruneMask& mask, const std::vector<LayerShape>& shapes) {
  SizeReport report;
  long prunable_total = 0;
  std::size_t mi = 0;
  for (const auto& shape : shapes) {
    if (shape.prunable) {
      if (mi >= mask.tensors.size() || mask.tensors[mi].rows() != shape.rows ||
          mask.tensors[mi].cols() != shape.cols)
        throw Error("model_size: mask/shape mismatch");
      report.active_params += static_cast<long>(mask.tensors[mi].cast<long>().sum());
      prunable_total += shape.size();
      ++mi;
    } else {
      report.active_params += shape.size();
    }
  }
  report.density = prunable_total == 0
                       ? 1.0
                       : static_cast<double>(mask.active()) / static_cast<double>(prunable_total);
  return report;
}

}  // namespace fedtm
