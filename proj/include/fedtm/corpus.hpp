#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fedtm/common.hpp"

namespace fedtm {

// Token set in canonical (lexicographic byte) order, so the same set of
// tokens always yields the same index map regardless of where it came from.
struct Vocabulary {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;

  // Sorts, dedups, builds the index.
  static Vocabulary from_tokens(std::vector<std::string> toks);

  int size() const { return static_cast<int>(tokens.size()); }
  bool operator==(const Vocabulary& other) const { return tokens == other.tokens; }
};

struct BowDocument {
  // (vocab index, count), sorted by index, counts > 0.
  std::vector<std::pair<int, int>> counts;
  int label = 0;
  long long total = 0;
};

struct Corpus {
  std::vector<BowDocument> docs;
  Vocabulary vocab;
  int num_labels = 0;

  int num_docs() const { return static_cast<int>(docs.size()); }
};

struct PartitionSpec {
  enum class Mode { IID, LabelDirichlet };
  int num_clients = 10;
  Mode mode = Mode::IID;
  double concentration = 1.0;  // LabelDirichlet only, > 0
  std::uint64_t seed = 0;
};

enum class CorpusFormat { BowText };

struct LoadedCorpus {
  Corpus corpus;
  long empty_docs_dropped = 0;
};

// One document per line: "<label>\t<token>:<count> <token>:<count> ...".
// Lines starting with '#' are comments. Empty documents are dropped and
// counted. Throws Error naming the offending line on malformed input.
LoadedCorpus load_corpus(const std::string& path, CorpusFormat format = CorpusFormat::BowText);

// Optional "<corpus path>.labels" sidecar, one "<id>\t<name>" per line.
// Returns an empty map when the sidecar does not exist.
std::unordered_map<int, std::string> load_label_names(const std::string& corpus_path);

void save_corpus(const Corpus& corpus, const std::string& path);

// Canonical-order union of the token sets. Order-independent, idempotent.
Vocabulary merge_vocabularies(const std::vector<Vocabulary>& vocabs);

// Reindexes every document against global_vocab. Throws if a token of
// corpus.vocab is missing from global_vocab. Per-document totals unchanged.
Corpus remap_corpus(const Corpus& corpus, const Vocabulary& global_vocab);

// Drops counts for tokens absent from vocab, then drops documents that became
// empty. Used to align held-out corpora with a consensus vocabulary.
struct FilteredCorpus {
  Corpus corpus;
  long dropped_tokens = 0;
  long dropped_docs = 0;
};
FilteredCorpus filter_to_vocab(const Corpus& corpus, const Vocabulary& vocab);

// Splits documents across clients. IID shuffles then deals round-robin;
// LabelDirichlet draws per-label client proportions from a symmetric
// Dirichlet. Clients share the input vocabulary. Throws if any client would
// receive zero documents.
std::vector<Corpus> partition(const Corpus& corpus, const PartitionSpec& spec);

// test size = round(fraction * n); both splits must be non-empty.
std::pair<Corpus, Corpus> train_test_split(const Corpus& corpus, double test_fraction,
                                           std::uint64_t seed);

}  // namespace fedtm
