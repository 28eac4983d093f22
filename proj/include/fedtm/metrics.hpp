#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "fedtm/common.hpp"
#include "fedtm/corpus.hpp"
#include "fedtm/model.hpp"
#include "fedtm/pruning.hpp"

namespace fedtm {

// Per-topic ranked lists of the top-n vocabulary indices by beta weight.
struct TopicSet {
  int top_n = 0;
  std::vector<std::vector<int>> topics;
};

// Ties broken by lower vocabulary index.
TopicSet top_words(const Mat& beta, int n);

// Document frequencies over a reference corpus. joint_freq holds only pairs
// that co-occur at least once, keyed by (lo << 32) | hi.
struct CooccurrenceStats {
  long num_docs = 0;
  std::vector<long> doc_freq;
  std::unordered_map<std::uint64_t, long> joint_freq;

  long joint(int i, int j) const;
};

CooccurrenceStats build_cooccurrence(const Corpus& corpus);

// Mean over topics of the mean pairwise NPMI of the topic's top words.
// NPMI(i,j) = log(p_ij / (p_i p_j)) / -log(p_ij); pairs that never co-occur
// score -1, pairs with p_ij = 1 score 0 (degenerate clamp).
double npmi_coherence(const TopicSet& topics, const CooccurrenceStats& stats);

// Distinct indices across all topic lists / (top_n * K). In [1/K, 1].
double topic_diversity(const TopicSet& topics);

// Multinomial logistic regression on document-topic proportions: zero init,
// 500 full-batch gradient steps at rate 0.1, deterministic. Returns test
// accuracy. Throws if training labels contain a single class.
double classify_accuracy(const Mat& theta_train, const std::vector<int>& labels_train,
                         const Mat& theta_test, const std::vector<int>& labels_test,
                         int num_classes);

// exp(- sum_d sum_w x_dw log p_dw / sum_d N_d) with evaluation-mode theta.
double perplexity(const ModelParams& params, const Corpus& corpus);

struct SizeReport {
  long active_params = 0;
  double density = 1.0;  // over prunable entries only
};
SizeReport model_size(const PruneMask& mask, const std::vector<LayerShape>& shapes);

}  // namespace fedtm
