#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "floweval/act_lm.hpp"
#include "floweval/dialogue.hpp"
#include "floweval/errors.hpp"
#include "floweval/similarity.hpp"
#include "floweval/tfidf.hpp"
#include "floweval/version.hpp"

namespace floweval {

// One pseudo-reference candidate: pooled act feature, TF-IDF topic vector,
// pooled content feature, and the stored act flow for assessment.
struct IndexEntry {
  std::string id;
  std::vector<double> act_feature;
  SparseVector tfidf;
  std::vector<double> content_feature;
  ActFlow flow;
};

struct RetrievalIndex {
  std::vector<IndexEntry> entries;
  TfidfVocabulary vocab;
  int h = 0;  // act-model layer the features came from
  int l = 0;  // content-encoder layer, recorded from the embedding provenance
  std::uint64_t model_hash = 0;  // hash of the act-model checkpoint, 0 if unknown
  std::string source_corpus;     // raw text handle

  const IndexEntry* find(const std::string& id) const {
    for (const auto& e : entries) {
      if (e.id == id) return &e;
    }
    return nullptr;
  }
};

// Query-side features, matching the per-entry layout.
struct QueryFeatures {
  std::string id;
  ActFlow flow;
  std::vector<double> act_feature;
  SparseVector tfidf;
  std::vector<double> content_feature;
};

// Eq-style act-channel similarity: (1 + cos(act features)) * (1 + cos(tfidf)).
inline double s_act(const std::vector<double>& act_u, const SparseVector& tfidf_u,
                    const std::vector<double>& act_r, const SparseVector& tfidf_r) {
  return (1.0 + cosine(act_u, act_r)) * (1.0 + cosine(tfidf_u, tfidf_r));
}

inline double s_act(const QueryFeatures& u, const IndexEntry& r) {
  return s_act(u.act_feature, u.tfidf, r.act_feature, r.tfidf);
}

// Content-channel similarity: cosine of the pooled content features.
inline double s_content(const std::vector<double>& content_u,
                        const std::vector<double>& content_r) {
  return cosine(content_u, content_r);
}

inline double s_content(const QueryFeatures& u, const IndexEntry& r) {
  return s_content(u.content_feature, r.content_feature);
}

struct Neighbor {
  std::string id;
  double similarity = 0;
  std::size_t entry_index = 0;
};

// Union entry keeps whichever channel similarities placed it in the set.
struct RetrievedRef {
  std::string id;
  std::size_t entry_index = 0;
  std::optional<double> act_similarity;
  std::optional<double> content_similarity;
};

struct NeighborSet {
  std::vector<Neighbor> act_channel;      // sorted by similarity desc, id asc
  std::vector<Neighbor> content_channel;  // likewise
  std::vector<RetrievedRef> merged;       // act channel first, then new content hits
};

namespace detail {

inline std::vector<Neighbor> top_k(std::vector<Neighbor>& candidates, std::size_t k) {
  const std::size_t take = std::min(k, candidates.size());
  auto cmp = [](const Neighbor& a, const Neighbor& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.id < b.id;
  };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                    candidates.end(), cmp);
  candidates.resize(take);
  return candidates;
}

}  // namespace detail

// Exhaustive two-channel retrieval: top k_act by the act-channel similarity
// and top k_content by the content-channel similarity, deduplicated union.
// Ties break by ascending dialogue id; channel sizes are clamped to the
// candidate pool. With exclude_self set, the query's own id is removed from
// the pool first.
inline NeighborSet retrieve(const RetrievalIndex& index, const QueryFeatures& query,
                            std::size_t k_act, std::size_t k_content, bool exclude_self) {
  if (k_act + k_content == 0) throw ValidationError("retrieve: k_act + k_content must be >= 1");
  std::vector<std::size_t> pool;
  pool.reserve(index.entries.size());
  for (std::size_t i = 0; i < index.entries.size(); ++i) {
    if (exclude_self && index.entries[i].id == query.id) continue;
    pool.push_back(i);
  }
  if (pool.empty()) throw ValidationError("retrieve: empty candidate pool");

  NeighborSet result;
  if (k_act > 0) {
    std::vector<Neighbor> cand;
    cand.reserve(pool.size());
    for (std::size_t i : pool) {
      cand.push_back({index.entries[i].id, s_act(query, index.entries[i]), i});
    }
    result.act_channel = detail::top_k(cand, k_act);
  }
  if (k_content > 0) {
    std::vector<Neighbor> cand;
    cand.reserve(pool.size());
    for (std::size_t i : pool) {
      cand.push_back({index.entries[i].id, s_content(query, index.entries[i]), i});
    }
    result.content_channel = detail::top_k(cand, k_content);
  }
  for (const auto& n : result.act_channel) {
    result.merged.push_back({n.id, n.entry_index, n.similarity, std::nullopt});
  }
  for (const auto& n : result.content_channel) {
    auto it = std::find_if(result.merged.begin(), result.merged.end(),
                           [&](const RetrievedRef& r) { return r.id == n.id; });
    if (it != result.merged.end()) {
      it->content_similarity = n.similarity;
    } else {
      result.merged.push_back({n.id, n.entry_index, std::nullopt, n.similarity});
    }
  }
  return result;
}

// Builds the pseudo-reference index: one entry per dialogue, all three
// feature kinds. Parallel over dialogues with a deterministic merge (each
// worker writes its own slots).
inline RetrievalIndex build_index(const Corpus& corpus, const ActLmModel& model,
                                  const TfidfVocabulary& vocab,
                                  const std::map<std::string, TokenEmbeddings>& embeddings,
                                  int h, int l, unsigned workers = 1) {
  if (corpus.dialogues.empty()) throw ValidationError("build_index: empty corpus");
  for (const auto& d : corpus.dialogues) {
    if (embeddings.find(d.id) == embeddings.end()) {
      throw ValidationError("build_index: missing embeddings for dialogue \"" + d.id + "\"");
    }
  }
  RetrievalIndex index;
  index.vocab = vocab;
  index.h = h;
  index.l = l;
  index.entries.resize(corpus.dialogues.size());

  auto build_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Dialogue& d = corpus.dialogues[i];
      IndexEntry e;
      e.id = d.id;
      e.flow = act_flow(d);
      // BLEU sees the full flow; only the model input is length-capped.
      ActFlow model_flow = e.flow;
      if (model_flow.size() > static_cast<std::size_t>(model.config().max_seq_len)) {
        model_flow = truncate_flow(model_flow, static_cast<std::size_t>(model.config().max_seq_len));
      }
      e.act_feature = model.act_feature(model_flow, h).vector;
      e.tfidf = tfidf_vector(d, vocab);
      e.content_feature = content_feature(embeddings.at(d.id)).vector;
      index.entries[i] = std::move(e);
    }
  };

  if (workers <= 1 || corpus.dialogues.size() < 2) {
    build_range(0, corpus.dialogues.size());
  } else {
    const std::size_t n = corpus.dialogues.size();
    const unsigned nw = std::min<unsigned>(workers, static_cast<unsigned>(n));
    std::vector<std::thread> threads;
    const std::size_t chunk = (n + nw - 1) / nw;
    for (unsigned w = 0; w < nw; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin >= end) break;
      threads.emplace_back(build_range, begin, end);
    }
    for (auto& t : threads) t.join();
  }
  return index;
}

// ---------------------------------------------------------------------------
// On-disk index: a directory with a versioned JSON manifest, little-endian
// float32 feature arrays (row-major), the sparse tfidf arrays, the id
// table, stored flows, and the vocabulary.

namespace detail {

inline void write_f32(std::ofstream& out, const std::vector<double>& v) {
  for (double x : v) {
    const float f = static_cast<float>(x);
    out.write(reinterpret_cast<const char*>(&f), sizeof(f));
  }
}

inline void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint64_t fnv1a64_bytes(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

inline void save_index(const RetrievalIndex& index, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::size_t count = index.entries.size();
  const std::size_t act_dim = count ? index.entries.front().act_feature.size() : 0;
  const std::size_t content_dim = count ? index.entries.front().content_feature.size() : 0;

  {
    std::ofstream out(dir + "/act_features.bin", std::ios::binary);
    for (const auto& e : index.entries) detail::write_f32(out, e.act_feature);
    if (!out) throw ParseError("failed writing act features");
  }
  {
    std::ofstream out(dir + "/content_features.bin", std::ios::binary);
    for (const auto& e : index.entries) detail::write_f32(out, e.content_feature);
    if (!out) throw ParseError("failed writing content features");
  }
  {
    std::ofstream offsets(dir + "/tfidf_offsets.bin", std::ios::binary);
    std::ofstream indices(dir + "/tfidf_indices.bin", std::ios::binary);
    std::ofstream values(dir + "/tfidf_values.bin", std::ios::binary);
    std::uint32_t offset = 0;
    detail::write_u32(offsets, offset);
    for (const auto& e : index.entries) {
      for (const auto& [col, weight] : e.tfidf.entries) {
        detail::write_u32(indices, col);
        const float f = static_cast<float>(weight);
        values.write(reinterpret_cast<const char*>(&f), sizeof(f));
      }
      offset += static_cast<std::uint32_t>(e.tfidf.entries.size());
      detail::write_u32(offsets, offset);
    }
    if (!offsets || !indices || !values) throw ParseError("failed writing tfidf arrays");
  }
  {
    nlohmann::json ids = nlohmann::json::array();
    nlohmann::json flows = nlohmann::json::array();
    for (const auto& e : index.entries) {
      ids.push_back(e.id);
      nlohmann::json f;
      f["acts"] = nlohmann::json::array();
      for (auto a : e.flow.acts) f["acts"].push_back(std::string(act_name(a)));
      f["speakers"] = e.flow.speakers;
      flows.push_back(std::move(f));
    }
    std::ofstream out(dir + "/ids.json");
    out << ids.dump() << "\n";
    std::ofstream fout(dir + "/flows.json");
    fout << flows.dump() << "\n";
    if (!out || !fout) throw ParseError("failed writing id table");
  }
  save_tfidf_vocab(index.vocab, dir + "/vocab.json");

  nlohmann::json manifest;
  manifest["format"] = kIndexMagic;
  manifest["version"] = kIndexFormatVersion;
  manifest["count"] = count;
  manifest["h"] = index.h;
  manifest["l"] = index.l;
  manifest["act_dim"] = act_dim;
  manifest["content_dim"] = content_dim;
  manifest["tfidf_dim"] = index.vocab.size();
  manifest["model_hash"] = index.model_hash;
  manifest["source_corpus"] = index.source_corpus;
  {
    nlohmann::json vj;
    vj["n_docs"] = index.vocab.n_docs;
    vj["df"] = index.vocab.df;
    manifest["vocab_hash"] = detail::fnv1a64_bytes(vj.dump());
  }
  std::ofstream out(dir + "/manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw ParseError("failed writing index manifest");
}

inline RetrievalIndex load_index(const std::string& dir) {
  auto read_file = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open index file: " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir + "/manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad index manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", std::string{}) != kIndexMagic) {
    throw ParseError("not a retrieval index: " + dir);
  }
  if (manifest.value("version", 0) != kIndexFormatVersion) {
    throw ParseError("unsupported index format version in " + dir);
  }
  RetrievalIndex index;
  index.h = manifest.at("h").get<int>();
  index.l = manifest.at("l").get<int>();
  index.model_hash = manifest.value("model_hash", std::uint64_t{0});
  index.source_corpus = manifest.value("source_corpus", std::string{});
  index.vocab = load_tfidf_vocab(dir + "/vocab.json");
  const std::size_t count = manifest.at("count").get<std::size_t>();
  const std::size_t act_dim = manifest.at("act_dim").get<std::size_t>();
  const std::size_t content_dim = manifest.at("content_dim").get<std::size_t>();

  nlohmann::json ids = nlohmann::json::parse(read_file(dir + "/ids.json"));
  nlohmann::json flows = nlohmann::json::parse(read_file(dir + "/flows.json"));
  if (ids.size() != count || flows.size() != count) {
    throw ParseError("index id/flow table size mismatch in " + dir);
  }

  const std::string act_bytes = read_file(dir + "/act_features.bin");
  const std::string content_bytes = read_file(dir + "/content_features.bin");
  const std::string off_bytes = read_file(dir + "/tfidf_offsets.bin");
  const std::string idx_bytes = read_file(dir + "/tfidf_indices.bin");
  const std::string val_bytes = read_file(dir + "/tfidf_values.bin");
  if (act_bytes.size() != count * act_dim * 4 || content_bytes.size() != count * content_dim * 4 ||
      off_bytes.size() != (count + 1) * 4) {
    throw ParseError("index feature array size mismatch in " + dir);
  }
  auto f32_at = [](const std::string& bytes, std::size_t i) {
    float f;
    std::memcpy(&f, bytes.data() + i * 4, 4);
    return static_cast<double>(f);
  };
  auto u32_at = [](const std::string& bytes, std::size_t i) {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + i * 4, 4);
    return v;
  };

  index.entries.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    IndexEntry& e = index.entries[i];
    e.id = ids[i].get<std::string>();
    e.act_feature.resize(act_dim);
    for (std::size_t j = 0; j < act_dim; ++j) e.act_feature[j] = f32_at(act_bytes, i * act_dim + j);
    e.content_feature.resize(content_dim);
    for (std::size_t j = 0; j < content_dim; ++j) {
      e.content_feature[j] = f32_at(content_bytes, i * content_dim + j);
    }
    const std::uint32_t begin = u32_at(off_bytes, i);
    const std::uint32_t end = u32_at(off_bytes, i + 1);
    e.tfidf.dim = index.vocab.size();
    for (std::uint32_t k = begin; k < end; ++k) {
      e.tfidf.entries.emplace_back(u32_at(idx_bytes, k), f32_at(val_bytes, k));
    }
    for (const auto& a : flows[i].at("acts")) {
      e.flow.acts.push_back(parse_act(a.get<std::string>()));
    }
    e.flow.speakers = flows[i].at("speakers").get<std::vector<int>>();
  }
  return index;
}

}  // namespace floweval
