#include "fedtm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "fedtm/rng.hpp"

namespace fedtm {

Vocabulary Vocabulary::from_tokens(std::vector<std::string> toks) {
  std::sort(toks.begin(), toks.end());
  toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
  Vocabulary v;
  v.tokens = std::move(toks);
  v.index.reserve(v.tokens.size());
  for (int i = 0; i < static_cast<int>(v.tokens.size()); ++i) v.index.emplace(v.tokens[i], i);
  return v;
}

namespace {

BowDocument make_doc(std::map<int, long long>& acc, int label) {
  BowDocument doc;
  doc.label = label;
  doc.counts.reserve(acc.size());
  for (const auto& [idx, c] : acc) {
    doc.counts.emplace_back(idx, static_cast<int>(c));
    doc.total += c;
  }
  return doc;
}

}  // namespace

LoadedCorpus load_corpus(const std::string& path, CorpusFormat format) {
  if (format != CorpusFormat::BowText) throw Error("load_corpus: unsupported format");
  std::ifstream in(path);
  if (!in) throw Error("load_corpus: cannot open '" + path + "'");

  struct RawDoc {
    std::vector<std::pair<std::string, int>> tokens;
    int label;
  };
  std::vector<RawDoc> raw;
  std::vector<std::string> all_tokens;
  long dropped = 0;
  int max_label = -1;

  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto fail = [&](const std::string& what) -> Error {
      return Error("load_corpus: " + path + ":" + std::to_string(line_no) + ": " + what);
    };

    std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw fail("expected '<label>\\t<token>:<count> ...'");
    int label = 0;
    try {
      std::size_t used = 0;
      label = std::stoi(line.substr(0, tab), &used);
      if (used != tab) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw fail("bad label '" + line.substr(0, tab) + "'");
    }
    if (label < 0) throw fail("negative label");

    RawDoc doc;
    doc.label = label;
    std::istringstream fields(line.substr(tab + 1));
    std::string field;
    while (fields >> field) {
      std::size_t colon = field.rfind(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == field.size())
        throw fail("bad token field '" + field + "'");
      std::string tok = field.substr(0, colon);
      int count = 0;
      try {
        std::size_t used = 0;
        count = std::stoi(field.substr(colon + 1), &used);
        if (used != field.size() - colon - 1) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw fail("bad count in '" + field + "'");
      }
      if (count <= 0) throw fail("count must be positive in '" + field + "'");
      doc.tokens.emplace_back(std::move(tok), count);
    }

    if (doc.tokens.empty()) {
      ++dropped;
      continue;
    }
    max_label = std::max(max_label, label);
    for (const auto& [tok, c] : doc.tokens) all_tokens.push_back(tok);
    raw.push_back(std::move(doc));
  }

  if (raw.empty()) throw Error("load_corpus: " + path + ": no non-empty documents");

  LoadedCorpus out;
  out.empty_docs_dropped = dropped;
  out.corpus.vocab = Vocabulary::from_tokens(std::move(all_tokens));
  out.corpus.num_labels = max_label + 1;
  out.corpus.docs.reserve(raw.size());
  for (const auto& doc : raw) {
    std::map<int, long long> acc;
    for (const auto& [tok, c] : doc.tokens) acc[out.corpus.vocab.index.at(tok)] += c;
    out.corpus.docs.push_back(make_doc(acc, doc.label));
  }
  return out;
}

std::unordered_map<int, std::string> load_label_names(const std::string& corpus_path) {
  std::unordered_map<int, std::string> names;
  std::ifstream in(corpus_path + ".labels");
  if (!in) return names;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw Error("load_label_names: " + corpus_path + ".labels:" + std::to_string(line_no) +
                  ": expected '<id>\\t<name>'");
    try {
      names[std::stoi(line.substr(0, tab))] = line.substr(tab + 1);
    } catch (const std::exception&) {
      throw Error("load_label_names: " + corpus_path + ".labels:" + std::to_string(line_no) +
                  ": bad label id");
    }
  }
  return names;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("save_corpus: cannot open '" + path + "'");
  for (const auto& doc : corpus.docs) {
    out << doc.label;
    char sep = '\t';
    for (const auto& [idx, c] : doc.counts) {
      out << sep << corpus.vocab.tokens[static_cast<std::size_t>(idx)] << ':' << c;
      sep = ' ';
    }
    out << '\n';
  }
  if (!out) throw Error("save_corpus: write failed for '" + path + "'");
}

Vocabulary merge_vocabularies(const std::vector<Vocabulary>& vocabs) {
  if (vocabs.empty()) throw Error("merge_vocabularies: empty input list");
  std::vector<std::string> all;
  for (const auto& v : vocabs) all.insert(all.end(), v.tokens.begin(), v.tokens.end());
  return Vocabulary::from_tokens(std::move(all));
}

Corpus remap_corpus(const Corpus& corpus, const Vocabulary& global_vocab) {
  std::vector<int> old_to_new(corpus.vocab.tokens.size());
  for (std::size_t i = 0; i < corpus.vocab.tokens.size(); ++i) {
    auto it = global_vocab.index.find(corpus.vocab.tokens[i]);
    if (it == global_vocab.index.end())
      throw Error("remap_corpus: token '" + corpus.vocab.tokens[i] +
                  "' missing from global vocabulary (consensus violated)");
    old_to_new[i] = it->second;
  }
  Corpus out;
  out.vocab = global_vocab;
  out.num_labels = corpus.num_labels;
  out.docs.reserve(corpus.docs.size());
  for (const auto& doc : corpus.docs) {
    std::map<int, long long> acc;
    for (const auto& [idx, c] : doc.counts) acc[old_to_new[static_cast<std::size_t>(idx)]] += c;
    out.docs.push_back(make_doc(acc, doc.label));
  }
  return out;
}

FilteredCorpus filter_to_vocab(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<int> old_to_new(corpus.vocab.tokens.size(), -1);
  for (std::size_t i = 0; i < corpus.vocab.tokens.size(); ++i) {
    auto it = vocab.index.find(corpus.vocab.tokens[i]);
    if (it != vocab.index.end()) old_to_new[i] = it->second;
  }
  FilteredCorpus out;
  out.corpus.vocab = vocab;
  out.corpus.num_labels = corpus.num_labels;
  for (const auto& doc : corpus.docs) {
    std::map<int, long long> acc;
    for (const auto& [idx, c] : doc.counts) {
      int ni = old_to_new[static_cast<std::size_t>(idx)];
      if (ni >= 0)
        acc[ni] += c;
      else
        out.dropped_tokens += c;
    }
    if (acc.empty()) {
      ++out.dropped_docs;
      continue;
    }
    out.corpus.docs.push_back(make_doc(acc, doc.label));
  }
  return out;
}

std::vector<Corpus> partition(const Corpus& corpus, const PartitionSpec& spec) {
  if (spec.num_clients < 1) throw Error("partition: num_clients must be >= 1");
  if (spec.num_clients > corpus.num_docs())
    throw Error("partition: more clients than documents");
  if (spec.mode == PartitionSpec::Mode::LabelDirichlet && spec.concentration <= 0.0)
    throw Error("partition: concentration must be > 0");

  const int n = corpus.num_docs();
  const int m = spec.num_clients;
  std::vector<std::vector<int>> assignment(static_cast<std::size_t>(m));
  Rng rng(mix_seed(spec.seed, 0x7061727469ULL, static_cast<std::uint64_t>(m)));

  if (spec.mode == PartitionSpec::Mode::IID) {
    std::vector<int> order = rng.shuffled_indices(n);
    for (int j = 0; j < n; ++j)
      assignment[static_cast<std::size_t>(j % m)].push_back(order[static_cast<std::size_t>(j)]);
  } else {
    std::vector<std::vector<int>> by_label(static_cast<std::size_t>(corpus.num_labels));
    for (int d = 0; d < n; ++d)
      by_label[static_cast<std::size_t>(corpus.docs[static_cast<std::size_t>(d)].label)]
          .push_back(d);
    for (auto& docs : by_label) {
      if (docs.empty()) continue;
      // Shuffle this label's documents, then hand out consecutive chunks
      // sized by a Dirichlet draw (largest-remainder apportionment).
      std::vector<int> order = rng.shuffled_indices(static_cast<int>(docs.size()));
      std::vector<double> prop = rng.dirichlet(spec.concentration, m);
      const int ln = static_cast<int>(docs.size());
      std::vector<int> take(static_cast<std::size_t>(m));
      std::vector<std::pair<double, int>> frac(static_cast<std::size_t>(m));
      int assigned = 0;
      for (int i = 0; i < m; ++i) {
        double want = prop[static_cast<std::size_t>(i)] * ln;
        take[static_cast<std::size_t>(i)] = static_cast<int>(std::floor(want));
        assigned += take[static_cast<std::size_t>(i)];
        frac[static_cast<std::size_t>(i)] = {want - std::floor(want), i};
      }
      std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      for (int r = 0; r < ln - assigned; ++r)
        ++take[static_cast<std::size_t>(frac[static_cast<std::size_t>(r)].second)];
      int pos = 0;
      for (int i = 0; i < m; ++i)
        for (int t = 0; t < take[static_cast<std::size_t>(i)]; ++t)
          assignment[static_cast<std::size_t>(i)].push_back(
              docs[static_cast<std::size_t>(order[static_cast<std::size_t>(pos++)])]);
    }
  }

  std::vector<Corpus> out;
  out.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    if (assignment[static_cast<std::size_t>(i)].empty())
      throw Error("partition: client " + std::to_string(i) +
                  " received zero documents; use a larger corpus or fewer clients");
    Corpus c;
    c.vocab = corpus.vocab;
    c.num_labels = corpus.num_labels;
    c.docs.reserve(assignment[static_cast<std::size_t>(i)].size());
    for (int d : assignment[static_cast<std::size_t>(i)])
      c.docs.push_back(corpus.docs[static_cast<std::size_t>(d)]);
    out.push_back(std::move(c));
  }
  return out;
}

std::pair<Corpus, Corpus> train_test_split(const Corpus& corpus, double test_fraction,
                                           std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw Error("train_test_split: test_fraction must be in (0,1)");
  const int n = corpus.num_docs();
  const int n_test = static_cast<int>(std::lround(test_fraction * n));
  if (n_test < 1 || n_test >= n)
    throw Error("train_test_split: split would leave an empty side");

  Rng rng(mix_seed(seed, 0x73706c6974ULL, static_cast<std::uint64_t>(n)));
  std::vector<int> order = rng.shuffled_indices(n);

  Corpus train, test;
  train.vocab = test.vocab = corpus.vocab;
  train.num_labels = test.num_labels = corpus.num_labels;
  for (int j = 0; j < n; ++j) {
    const auto& doc = corpus.docs[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])];
    (j < n_test ? test : train).docs.push_back(doc);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace fedtm
