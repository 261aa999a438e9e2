#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "floweval/dialogue.hpp"
#include "floweval/errors.hpp"

namespace floweval {

// Sparse vector over a fixed vocabulary: sorted (index, weight) pairs.
struct SparseVector {
  std::vector<std::pair<std::uint32_t, double>> entries;  // strictly increasing index
  std::uint32_t dim = 0;

  double norm() const {
    double s = 0;
    for (const auto& [i, w] : entries) s += w * w;
    return std::sqrt(s);
  }
};

inline double dot(const SparseVector& a, const SparseVector& b) {
  if (a.dim != b.dim) throw ValidationError("sparse vector dimension mismatch");
  double s = 0;
  std::size_t i = 0, j = 0;
  while (i < a.entries.size() && j < b.entries.size()) {
    if (a.entries[i].first < b.entries[j].first) {
      ++i;
    } else if (a.entries[i].first > b.entries[j].first) {
      ++j;
    } else {
      s += a.entries[i].second * b.entries[j].second;
      ++i;
      ++j;
    }
  }
  return s;
}

// Topic vocabulary: document frequencies over whole dialogues.
struct TfidfVocabulary {
  std::map<std::string, std::uint32_t> df;         // term -> document frequency
  std::map<std::string, std::uint32_t> term_index; // term -> column, sorted term order
  std::uint32_t n_docs = 0;

  std::uint32_t size() const { return static_cast<std::uint32_t>(df.size()); }
};

// Lowercased word tokens: maximal runs of ASCII alphanumerics, everything
// else is a delimiter. Frozen tokenizer for the topic channel.
inline std::vector<std::string> tfidf_tokenize(const std::string& text) {
  std::vector<std::string> terms;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      terms.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) terms.push_back(cur);
  return terms;
}

inline std::string dialogue_text(const Dialogue& d) {
  std::string text;
  for (const auto& u : d.utterances) {
    for (const auto& s : u.segments) {
      if (!text.empty()) text.push_back(' ');
      text += s.text;
    }
  }
  return text;
}

inline TfidfVocabulary build_tfidf(const Corpus& corpus) {
  if (corpus.dialogues.empty()) throw ValidationError("empty corpus");
  TfidfVocabulary vocab;
  vocab.n_docs = static_cast<std::uint32_t>(corpus.dialogues.size());
  for (const auto& d : corpus.dialogues) {
    std::map<std::string, bool> present;
    for (const auto& t : tfidf_tokenize(dialogue_text(d))) present[t] = true;
    for (const auto& [t, _] : present) ++vocab.df[t];
  }
  std::uint32_t col = 0;
  for (const auto& [t, _] : vocab.df) vocab.term_index[t] = col++;
  return vocab;
}

// weight(t) = tf(t) * (ln((1+N)/(1+df(t))) + 1), raw term counts, smoothed
// idf with a +1 floor. Out-of-vocabulary terms are dropped.
inline SparseVector tfidf_vector(const Dialogue& d, const TfidfVocabulary& vocab) {
  std::map<std::string, double> tf;
  for (const auto& t : tfidf_tokenize(dialogue_text(d))) tf[t] += 1.0;
  SparseVector v;
  v.dim = vocab.size();
  // term_index is in sorted term order, so iterating tf (also sorted)
  // yields strictly increasing columns.
  for (const auto& [term, count] : tf) {
    auto it = vocab.term_index.find(term);
    if (it == vocab.term_index.end()) continue;
    double idf = std::log((1.0 + vocab.n_docs) / (1.0 + vocab.df.at(term))) + 1.0;
    v.entries.emplace_back(it->second, count * idf);
  }
  return v;
}

inline void save_tfidf_vocab(const TfidfVocabulary& vocab, const std::string& path) {
  nlohmann::json j;
  j["n_docs"] = vocab.n_docs;
  j["df"] = vocab.df;
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open output file: " + path);
  out << j.dump() << "\n";
}

inline TfidfVocabulary load_tfidf_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open vocabulary file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad vocabulary file " + path + ": " + e.what());
  }
  TfidfVocabulary vocab;
  vocab.n_docs = j.at("n_docs").get<std::uint32_t>();
  vocab.df = j.at("df").get<std::map<std::string, std::uint32_t>>();
  std::uint32_t col = 0;
  for (const auto& [t, _] : vocab.df) vocab.term_index[t] = col++;
  return vocab;
}

}  // namespace floweval
