#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "floweval/bertscore.hpp"
#include "floweval/bleu.hpp"
#include "floweval/dialogue.hpp"
#include "floweval/errors.hpp"
#include "floweval/retrieval.hpp"

namespace floweval {

enum class ScoreVariant { kFull, kSegOnly, kConsensusBertScore };

inline const char* variant_name(ScoreVariant v) {
  switch (v) {
    case ScoreVariant::kFull: return "full";
    case ScoreVariant::kSegOnly: return "seg";
    case ScoreVariant::kConsensusBertScore: return "consensus-bertscore";
  }
  return "full";
}

inline ScoreVariant parse_variant(const std::string& s) {
  if (s == "full") return ScoreVariant::kFull;
  if (s == "seg" || s == "seg_only" || s == "seg-only") return ScoreVariant::kSegOnly;
  if (s == "consensus-bertscore" || s == "consensus_bertscore") {
    return ScoreVariant::kConsensusBertScore;
  }
  throw ValidationError("unknown score variant: " + s);
}

struct AssessmentConfig {
  double w = 0.5;      // act/content mixing weight
  int k_act = 10;      // act-channel neighbors
  int k_content = 10;  // content-channel neighbors
  int h = 3;           // act-model layer for features
  int l = 0;           // content-encoder layer (manifest metadata)
  int bleu_max_order = 4;
  bool normalize_f_act = false;  // divide the act score by 4 into [0, 1]
  bool exclude_self = false;

  void validate() const {
    if (!(w >= 0.0 && w <= 1.0)) throw ValidationError("assessment: w must be in [0, 1]");
    if (k_act < 0 || k_content < 0 || k_act + k_content < 1) {
      throw ValidationError("assessment: need k_act, k_content >= 0 and k_act + k_content >= 1");
    }
    if (bleu_max_order < 1) throw ValidationError("assessment: bleu_max_order must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const AssessmentConfig& c) {
  j = {{"w", c.w},
       {"k_act", c.k_act},
       {"k_content", c.k_content},
       {"h", c.h},
       {"l", c.l},
       {"bleu_max_order", c.bleu_max_order},
       {"normalize_f_act", c.normalize_f_act},
       {"exclude_self", c.exclude_self}};
}

inline void from_json(const nlohmann::json& j, AssessmentConfig& c) {
  AssessmentConfig defaults;
  c.w = j.value("w", defaults.w);
  c.k_act = j.value("k_act", defaults.k_act);
  c.k_content = j.value("k_content", defaults.k_content);
  c.h = j.value("h", defaults.h);
  c.l = j.value("l", defaults.l);
  c.bleu_max_order = j.value("bleu_max_order", defaults.bleu_max_order);
  c.normalize_f_act = j.value("normalize_f_act", defaults.normalize_f_act);
  c.exclude_self = j.value("exclude_self", defaults.exclude_self);
}

// Query-side features against an existing index. The act channel needs the
// same act model the index was built with; the content channel needs the
// query's token embeddings.
inline QueryFeatures make_query_features(const Dialogue& d, const ActLmModel* model,
                                         const RetrievalIndex& index,
                                         const TokenEmbeddings* embeddings,
                                         const AssessmentConfig& cfg) {
  QueryFeatures q;
  q.id = d.id;
  q.flow = act_flow(d);
  const bool need_act = cfg.w > 0.0 || cfg.k_act > 0;
  const bool need_content = cfg.k_content > 0;
  if (need_act) {
    if (model == nullptr) {
      throw ValidationError("query features: act channel requested but no act model given");
    }
    ActFlow flow = q.flow;
    if (flow.size() > static_cast<std::size_t>(model->config().max_seq_len)) {
      flow = truncate_flow(flow, static_cast<std::size_t>(model->config().max_seq_len));
    }
    q.act_feature = model->act_feature(flow, cfg.h).vector;
    q.tfidf = tfidf_vector(d, index.vocab);
  } else {
    q.tfidf.dim = index.vocab.size();
  }
  if (need_content) {
    if (embeddings == nullptr) {
      throw ValidationError("query features: content channel requested but no embeddings for \"" +
                            d.id + "\"");
    }
    q.content_feature = content_feature(*embeddings).vector;
  }
  return q;
}

// Act-side pseudo-reference score: S_act * BLEU over the act flows.
inline double f_act(const QueryFeatures& u, const IndexEntry& r, const AssessmentConfig& cfg) {
  const double value = s_act(u, r) * act_bleu(u.flow, r.flow, cfg.bleu_max_order);
  return cfg.normalize_f_act ? value / 4.0 : value;
}

// Content-side pseudo-reference score: BERTScore F1 over token embeddings.
inline double f_content(const TokenEmbeddings& u, const TokenEmbeddings& r) {
  return bertscore_f1(u, r);
}

struct RefScore {
  std::string id;
  double s_act = 0;
  double act_bleu = 0;
  double f_act = 0;
  double f_content = 0;
  double combined = 0;
};

struct ScoreBreakdown {
  std::string dialogue_id;
  std::string variant = "full";
  double score = 0;
  std::string argmax_reference_id;
  std::vector<RefScore> per_reference;
};

// Consensus score: retrieve pseudo-references, score the query against each
// with w * F_act + (1 - w) * F_content, and keep the best. The act side is
// skipped entirely when w == 0, the content side when w == 1 (no embeddings
// needed in that case).
inline ScoreBreakdown floweval_score(
    const QueryFeatures& query, const TokenEmbeddings* query_embeddings,
    const RetrievalIndex& index, const std::map<std::string, TokenEmbeddings>& ref_embeddings,
    const AssessmentConfig& cfg) {
  cfg.validate();
  const bool need_content = cfg.w < 1.0;
  const bool need_act = cfg.w > 0.0;
  if (need_content && query_embeddings == nullptr) {
    throw ValidationError("floweval_score: missing embeddings for query \"" + query.id + "\"");
  }
  NeighborSet neighbors = retrieve(index, query, static_cast<std::size_t>(cfg.k_act),
                                   static_cast<std::size_t>(cfg.k_content), cfg.exclude_self);
  ScoreBreakdown breakdown;
  breakdown.dialogue_id = query.id;
  for (const auto& ref : neighbors.merged) {
    const IndexEntry& entry = index.entries[ref.entry_index];
    RefScore rs;
    rs.id = ref.id;
    if (need_act) {
      rs.s_act = s_act(query, entry);
      rs.act_bleu = act_bleu(query.flow, entry.flow, cfg.bleu_max_order);
      rs.f_act = cfg.normalize_f_act ? rs.s_act * rs.act_bleu / 4.0 : rs.s_act * rs.act_bleu;
    }
    if (need_content) {
      auto it = ref_embeddings.find(ref.id);
      if (it == ref_embeddings.end()) {
        throw ValidationError("floweval_score: missing embeddings for reference \"" + ref.id +
                              "\"");
      }
      rs.f_content = f_content(*query_embeddings, it->second);
    }
    rs.combined = cfg.w * rs.f_act + (1.0 - cfg.w) * rs.f_content;
    breakdown.per_reference.push_back(std::move(rs));
  }
  const auto best = std::max_element(
      breakdown.per_reference.begin(), breakdown.per_reference.end(),
      [](const RefScore& a, const RefScore& b) { return a.combined < b.combined; });
  breakdown.score = best->combined;
  breakdown.argmax_reference_id = best->id;
  return breakdown;
}

// Ablation variants: seg forces the act-only configuration (k_content = 0,
// w = 1); consensus-bertscore forces the content-only one (k_act = 0, w = 0).
inline AssessmentConfig apply_variant(AssessmentConfig cfg, ScoreVariant variant) {
  switch (variant) {
    case ScoreVariant::kFull:
      break;
    case ScoreVariant::kSegOnly:
      cfg.k_content = 0;
      cfg.w = 1.0;
      break;
    case ScoreVariant::kConsensusBertScore:
      cfg.k_act = 0;
      cfg.w = 0.0;
      break;
  }
  return cfg;
}

inline ScoreBreakdown score_variant(const QueryFeatures& query,
                                    const TokenEmbeddings* query_embeddings,
                                    const RetrievalIndex& index,
                                    const std::map<std::string, TokenEmbeddings>& ref_embeddings,
                                    const AssessmentConfig& cfg, ScoreVariant variant) {
  ScoreBreakdown breakdown =
      floweval_score(query, query_embeddings, index, ref_embeddings, apply_variant(cfg, variant));
  breakdown.variant = variant_name(variant);
  return breakdown;
}

enum class FuseMode { kRawAverage, kZNormalizedAverage };

inline FuseMode parse_fuse_mode(const std::string& s) {
  if (s == "raw" || s == "raw-average") return FuseMode::kRawAverage;
  if (s == "znorm" || s == "z-normalized-average") return FuseMode::kZNormalizedAverage;
  throw ValidationError("unknown fuse mode: " + s);
}

// Metric fusion over a shared id set. Raw mode averages the values as-is;
// znorm standardizes each metric over the ids first.
inline std::map<std::string, double> fuse_metrics(const std::map<std::string, double>& a,
                                                  const std::map<std::string, double>& b,
                                                  FuseMode mode) {
  if (a.size() != b.size()) throw ValidationError("fuse_metrics: id sets differ in size");
  for (const auto& [id, _] : a) {
    if (b.find(id) == b.end()) {
      throw ValidationError("fuse_metrics: id \"" + id + "\" missing from second metric");
    }
  }
  auto znorm = [](const std::map<std::string, double>& m) {
    double mean = 0;
    for (const auto& [_, v] : m) mean += v;
    mean /= static_cast<double>(m.size());
    double var = 0;
    for (const auto& [_, v] : m) var += (v - mean) * (v - mean);
    var /= static_cast<double>(m.size());
    if (var == 0.0) throw ValidationError("fuse_metrics: constant metric cannot be z-normalized");
    const double inv_sd = 1.0 / std::sqrt(var);
    std::map<std::string, double> out;
    for (const auto& [id, v] : m) out[id] = (v - mean) * inv_sd;
    return out;
  };
  std::map<std::string, double> fa = a, fb = b;
  if (mode == FuseMode::kZNormalizedAverage) {
    fa = znorm(a);
    fb = znorm(b);
  }
  std::map<std::string, double> fused;
  for (const auto& [id, v] : fa) fused[id] = 0.5 * (v + fb.at(id));
  return fused;
}

inline nlohmann::json breakdown_to_json(const ScoreBreakdown& b) {
  nlohmann::json j;
  j["dialogue_id"] = b.dialogue_id;
  j["variant"] = b.variant;
  j["score"] = b.score;
  j["argmax_reference_id"] = b.argmax_reference_id;
  j["per_reference"] = nlohmann::json::array();
  for (const auto& r : b.per_reference) {
    j["per_reference"].push_back({{"id", r.id},
                                  {"s_act", r.s_act},
                                  {"act_bleu", r.act_bleu},
                                  {"f_act", r.f_act},
                                  {"f_content", r.f_content},
                                  {"combined", r.combined}});
  }
  return j;
}

}  // namespace floweval
