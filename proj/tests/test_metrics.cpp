#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedtm/metrics.hpp"
#include "fedtm/rng.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace fedtm;

namespace {

CooccurrenceStats stats_from(long num_docs, std::vector<long> df,
                             std::vector<std::tuple<int, int, long>> joint) {
  CooccurrenceStats stats;
  stats.num_docs = num_docs;
  stats.doc_freq = std::move(df);
  for (auto [i, j, c] : joint) {
    if (i > j) std::swap(i, j);
    stats.joint_freq[(static_cast<std::uint64_t>(static_cast<std::uint32_t>(i)) << 32) |
                     static_cast<std::uint32_t>(j)] = c;
  }
  return stats;
}

}  // namespace

TEST_CASE("top_words ranks by weight with index tie-breaking") {
  Mat beta(1, 3);
  beta << 0.1, 0.9, 0.5;
  TopicSet top2 = top_words(beta, 2);
  CHECK(top2.topics[0] == std::vector<int>{1, 2});

  TopicSet all = top_words(beta, 3);
  CHECK(all.topics[0] == std::vector<int>{1, 2, 0});

  Mat tied(1, 9);
  tied.setZero();
  tied(0, 3) = 1.0;
  tied(0, 7) = 1.0;
  TopicSet t = top_words(tied, 2);
  CHECK(t.topics[0] == std::vector<int>{3, 7});

  CHECK_THROWS_AS(top_words(beta, 4), Error);
}

TEST_CASE("build_cooccurrence counts document frequencies") {
  testing::SyntheticSpec spec;
  spec.vocab_size = 20;
  spec.num_topics = 2;
  spec.num_docs = 30;
  spec.seed = 5;
  Corpus corpus = testing::make_synthetic_corpus(spec);
  CooccurrenceStats stats = build_cooccurrence(corpus);
  CHECK(stats.num_docs == 30);
  // Marginals bound the joints.
  for (const auto& [key, joint] : stats.joint_freq) {
    int i = static_cast<int>(key >> 32);
    int j = static_cast<int>(key & 0xffffffffu);
    CHECK(joint <= stats.doc_freq[static_cast<std::size_t>(i)]);
    CHECK(joint <= stats.doc_freq[static_cast<std::size_t>(j)]);
    CHECK(stats.doc_freq[static_cast<std::size_t>(i)] <= stats.num_docs);
  }
}

TEST_CASE("npmi handles the documented special cases") {
  TopicSet pair;
  pair.top_n = 2;
  pair.topics = {{0, 1}};

  // Both words in every document: degenerate p = 1 clamps to 0.
  CHECK(npmi_coherence(pair, stats_from(2, {2, 2}, {{0, 1, 2}})) == doctest::Approx(0.0));

  // Perfectly coupled pair with p = 0.5: NPMI = 1.
  CHECK(npmi_coherence(pair, stats_from(2, {1, 1}, {{0, 1, 1}})) ==
        doctest::Approx(1.0).epsilon(1e-9));

  // Independent pair: p_i = p_j = 0.5, p_ij = 0.25 -> 0.
  CHECK(npmi_coherence(pair, stats_from(4, {2, 2}, {{0, 1, 1}})) ==
        doctest::Approx(0.0).epsilon(1e-9));

  // Never co-occurring pair scores -1.
  CHECK(npmi_coherence(pair, stats_from(4, {2, 2}, {})) == doctest::Approx(-1.0));
}

TEST_CASE("npmi stays within [-1, 1] on random statistics") {
  Rng rng(61);
  for (int trial = 0; trial < 50; ++trial) {
    long docs = 2 + rng.uniform_int(50);
    int v = 6;
    std::vector<long> df(static_cast<std::size_t>(v));
    for (auto& d : df) d = 1 + rng.uniform_int(static_cast<int>(docs));
    std::vector<std::tuple<int, int, long>> joint;
    for (int i = 0; i < v; ++i)
      for (int j = i + 1; j < v; ++j)
        if (rng.uniform01() < 0.7) {
          long cap = std::min(df[static_cast<std::size_t>(i)], df[static_cast<std::size_t>(j)]);
          joint.emplace_back(i, j, 1 + rng.uniform_int(static_cast<int>(cap)));
        }
    TopicSet topics;
    topics.top_n = 4;
    topics.topics = {{0, 1, 2, 3}, {2, 3, 4, 5}};
    double score = npmi_coherence(topics, stats_from(docs, df, joint));
    CHECK(score >= -1.0);
    CHECK(score <= 1.0);
  }
}

TEST_CASE("topic_diversity bounds and arithmetic") {
  TopicSet same;
  same.top_n = 25;
  std::vector<int> list(25);
  std::iota(list.begin(), list.end(), 0);
  same.topics = {list, list, list, list};
  CHECK(topic_diversity(same) == doctest::Approx(0.25));  // 1/K

  TopicSet disjoint;
  disjoint.top_n = 25;
  for (int k = 0; k < 4; ++k) {
    std::vector<int> words(25);
    std::iota(words.begin(), words.end(), k * 25);
    disjoint.topics.push_back(std::move(words));
  }
  CHECK(topic_diversity(disjoint) == doctest::Approx(1.0));

  TopicSet overlap;
  overlap.top_n = 25;
  std::vector<int> a(25), b(25);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), 20);  // shares exactly 5 indices with a
  overlap.topics = {a, b};
  CHECK(topic_diversity(overlap) == doctest::Approx(0.9));
}

TEST_CASE("classify_accuracy degenerate predictor equals test prevalence") {
  // Identical features force the classifier to the majority bias.
  Mat theta_train = Mat::Constant(10, 3, 1.0 / 3.0);
  std::vector<int> y_train = {0, 0, 0, 0, 0, 0, 0, 1, 1, 1};
  Mat theta_test = Mat::Constant(4, 3, 1.0 / 3.0);
  std::vector<int> y_test = {0, 0, 0, 1};
  double acc = classify_accuracy(theta_train, y_train, theta_test, y_test, 2);
  CHECK(acc == doctest::Approx(0.75));
}

TEST_CASE("classify_accuracy separates simplex blobs") {
  Rng rng(63);
  auto blob = [&](double a, double b, double c) {
    Vec v(3);
    v << a + 0.05 * rng.uniform01(), b + 0.05 * rng.uniform01(), c + 0.05 * rng.uniform01();
    v /= v.sum();
    return v;
  };
  Mat train(60, 3), test(40, 3);
  std::vector<int> y_train, y_test;
  for (int i = 0; i < 60; ++i) {
    int label = i % 2;
    train.row(i) = (label == 0 ? blob(0.8, 0.1, 0.1) : blob(0.1, 0.8, 0.1)).transpose();
    y_train.push_back(label);
  }
  for (int i = 0; i < 40; ++i) {
    int label = i % 2;
    test.row(i) = (label == 0 ? blob(0.8, 0.1, 0.1) : blob(0.1, 0.8, 0.1)).transpose();
    y_test.push_back(label);
  }
  double acc = classify_accuracy(train, y_train, test, y_test, 2);
  CHECK(acc >= 0.95);
  CHECK(testing::nearest_centroid_accuracy(train, y_train, test, y_test, 2) >= 0.95);

  // Permuting the test order leaves accuracy unchanged.
  std::vector<int> perm = Rng(64).shuffled_indices(40);
  Mat test_p(40, 3);
  std::vector<int> y_p(40);
  for (int i = 0; i < 40; ++i) {
    test_p.row(i) = test.row(perm[static_cast<std::size_t>(i)]);
    y_p[static_cast<std::size_t>(i)] = y_test[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  CHECK(classify_accuracy(train, y_train, test_p, y_p, 2) == doctest::Approx(acc));

  std::vector<int> single(60, 0);
  CHECK_THROWS_AS(classify_accuracy(train, single, test, y_test, 2), Error);
}

TEST_CASE("perplexity of the uniform model equals the vocabulary size") {
  ModelConfig config;
  config.vocab_size = 30;
  config.num_topics = 3;
  config.hidden_sizes = {8};
  ModelParams params = init_params(config, 3);
  params.beta.setZero();

  testing::SyntheticSpec spec;
  spec.vocab_size = 30;
  spec.num_topics = 3;
  spec.num_docs = 20;
  spec.seed = 9;
  Corpus corpus = testing::make_synthetic_corpus(spec);
  CHECK(perplexity(params, corpus) == doctest::Approx(30.0).epsilon(1e-9));
}

TEST_CASE("perplexity is at least 1 and exactly 1 on a single-word vocabulary") {
  ModelConfig config;
  config.vocab_size = 25;
  config.num_topics = 3;
  config.hidden_sizes = {6};
  ModelParams params = init_params(config, 5);
  testing::SyntheticSpec spec;
  spec.vocab_size = 25;
  spec.num_topics = 3;
  spec.num_docs = 15;
  spec.seed = 11;
  Corpus corpus = testing::make_synthetic_corpus(spec);
  CHECK(perplexity(params, corpus) >= 1.0);

  // V = 1 built by hand (below the ModelConfig minimum, still a valid tensor
  // tree).
  ModelParams tiny;
  tiny.encoder.push_back({Mat::Zero(2, 1), Vec::Zero(2)});
  tiny.mu_head = {Mat::Zero(2, 2), Vec::Zero(2)};
  tiny.logvar_head = {Mat::Zero(2, 2), Vec::Zero(2)};
  tiny.beta = Mat::Zero(2, 1);
  Corpus one;
  one.vocab = Vocabulary::from_tokens({"only"});
  one.num_labels = 1;
  BowDocument doc;
  doc.counts = {{0, 7}};
  doc.total = 7;
  one.docs.push_back(doc);
  CHECK(perplexity(tiny, one) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("model_size counts active plus non-prunable parameters") {
  std::vector<LayerShape> shapes = {{"w", 10, 10, true}, {"b", 10, 1, false}};
  PruneMask mask;
  mask.tensors.push_back(MaskMat::Ones(10, 10));
  SizeReport full = model_size(mask, shapes);
  CHECK(full.active_params == 110);
  CHECK(full.density == 1.0);

  for (long i = 0; i < 50; ++i) mask.tensors[0].data()[i] = 0;
  SizeReport half = model_size(mask, shapes);
  CHECK(half.active_params == 60);
  CHECK(half.density == doctest::Approx(0.5));

  std::vector<LayerShape> none = {{"b", 4, 1, false}};
  PruneMask empty;
  SizeReport conv = model_size(empty, none);
  CHECK(conv.active_params == 4);
  CHECK(conv.density == 1.0);
}

TEST_CASE("planted topics are more coherent than random ones") {
  int planted_wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    testing::SyntheticSpec spec;
    spec.vocab_size = 100;
    spec.num_topics = 4;
    spec.num_docs = 400;
    spec.seed = seed;
    Corpus corpus = testing::make_synthetic_corpus(spec);
    CooccurrenceStats stats = build_cooccurrence(corpus);

    TopicSet planted = testing::true_topics(spec, 10);
    Rng rng(mix_seed(seed, 0xabcULL, 0));
    TopicSet random;
    random.top_n = 10;
    for (int k = 0; k < 4; ++k) {
      std::vector<int> perm = rng.shuffled_indices(100);
      random.topics.emplace_back(perm.begin(), perm.begin() + 10);
    }
    if (npmi_coherence(planted, stats) > npmi_coherence(random, stats)) ++planted_wins;
  }
  CHECK(planted_wins == 10);
}
