#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "floweval/acts.hpp"
#include "floweval/errors.hpp"

namespace floweval {

// One utterance fragment carrying a single communicative function.
// The act is optional so corpora can be ingested before tagging.
struct Segment {
  std::string text;
  std::optional<SegmentAct> act;
};

struct Utterance {
  int speaker = 0;  // party id, 0 or 1
  std::vector<Segment> segments;
};

struct Dialogue {
  std::string id;
  std::vector<Utterance> utterances;
  std::optional<double> rating;  // mean human score, when available

  std::size_t segment_count() const {
    std::size_t n = 0;
    for (const auto& u : utterances) n += u.segments.size();
    return n;
  }
};

// The ordered act sequence of a dialogue with a parallel speaker list.
struct ActFlow {
  std::vector<SegmentAct> acts;
  std::vector<int> speakers;

  std::size_t size() const { return acts.size(); }
};

enum class CorpusRole { kRetrievalSet, kEvaluationSet };

struct Corpus {
  std::vector<Dialogue> dialogues;
  CorpusRole role = CorpusRole::kRetrievalSet;
};

// Per-token embedding vectors for one dialogue, produced by an external
// content encoder and ingested from file.
struct TokenEmbeddings {
  std::string dialogue_id;
  std::string provenance;  // names the encoder and its layer
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> vectors;

  std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
};

// Acts in reading order, speakers parallel. Every segment must be labeled.
inline ActFlow act_flow(const Dialogue& d) {
  ActFlow flow;
  flow.acts.reserve(d.segment_count());
  flow.speakers.reserve(d.segment_count());
  for (std::size_t ui = 0; ui < d.utterances.size(); ++ui) {
    const Utterance& u = d.utterances[ui];
    for (std::size_t si = 0; si < u.segments.size(); ++si) {
      const Segment& s = u.segments[si];
      if (!s.act) {
        throw ValidationError("unlabeled segment in dialogue \"" + d.id +
                              "\" (utterance " + std::to_string(ui) +
                              ", segment " + std::to_string(si) + ")");
      }
      flow.acts.push_back(*s.act);
      flow.speakers.push_back(u.speaker);
    }
  }
  if (flow.acts.empty()) {
    throw ValidationError("dialogue \"" + d.id + "\" has no segments");
  }
  return flow;
}

inline bool has_only_whitespace(const std::string& s) {
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

// Collects every type-invariant violation; an empty report means the
// dialogue is well formed. Never throws.
inline std::vector<std::string> validate_dialogue(const Dialogue& d) {
  std::vector<std::string> report;
  auto add = [&](const std::string& msg) { report.push_back("dialogue \"" + d.id + "\": " + msg); };
  if (d.id.empty()) report.push_back("dialogue with empty id");
  if (d.utterances.empty()) add("no utterances");
  for (std::size_t ui = 0; ui < d.utterances.size(); ++ui) {
    const Utterance& u = d.utterances[ui];
    if (u.speaker != 0 && u.speaker != 1) {
      add("utterance " + std::to_string(ui) + " has speaker id " +
          std::to_string(u.speaker) + " (expected 0 or 1)");
    }
    if (u.segments.empty()) {
      add("utterance " + std::to_string(ui) + " has no segments");
    }
    for (std::size_t si = 0; si < u.segments.size(); ++si) {
      if (u.segments[si].text.empty() || has_only_whitespace(u.segments[si].text)) {
        add("utterance " + std::to_string(ui) + ", segment " + std::to_string(si) +
            " has empty text");
      }
    }
  }
  if (d.rating && !std::isfinite(*d.rating)) add("rating is not finite");
  return report;
}

}  // namespace floweval
