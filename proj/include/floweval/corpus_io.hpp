#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "floweval/dialogue.hpp"
#include "floweval/errors.hpp"
#include "floweval/segmenter.hpp"

namespace floweval {

using json = nlohmann::json;

namespace detail {

inline json parse_line(const std::string& line, const std::string& path, std::size_t lineno) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(path + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
  }
}

inline std::string loc(const std::string& path, std::size_t lineno) {
  return path + ":" + std::to_string(lineno) + ": ";
}

}  // namespace detail

inline Dialogue dialogue_from_json(const json& j, const std::string& where = "") {
  Dialogue d;
  try {
    d.id = j.at("id").get<std::string>();
    if (j.contains("rating") && !j.at("rating").is_null()) {
      d.rating = j.at("rating").get<double>();
    }
    for (const auto& ju : j.at("utterances")) {
      Utterance u;
      u.speaker = ju.at("speaker").get<int>();
      for (const auto& js : ju.at("segments")) {
        Segment s;
        s.text = js.at("text").get<std::string>();
        if (js.contains("act") && !js.at("act").is_null()) {
          s.act = parse_act(js.at("act").get<std::string>());
        }
        u.segments.push_back(std::move(s));
      }
      d.utterances.push_back(std::move(u));
    }
  } catch (const json::exception& e) {
    throw ParseError(where + "bad dialogue record: " + e.what());
  }
  return d;
}

inline json dialogue_to_json(const Dialogue& d) {
  json j;
  j["id"] = d.id;
  j["rating"] = d.rating ? json(*d.rating) : json(nullptr);
  j["utterances"] = json::array();
  for (const auto& u : d.utterances) {
    json ju;
    ju["speaker"] = u.speaker;
    ju["segments"] = json::array();
    for (const auto& s : u.segments) {
      json js;
      js["text"] = s.text;
      js["act"] = s.act ? json(std::string(act_name(*s.act))) : json(nullptr);
      ju["segments"].push_back(std::move(js));
    }
    j["utterances"].push_back(std::move(ju));
  }
  return j;
}

// Loads dialogues.jsonl (one record per line). Strict: the first malformed
// line, duplicate id, unknown act, or invariant violation aborts the load
// with the offending line number.
inline Corpus load_corpus(const std::string& path, CorpusRole role) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open corpus file: " + path);
  Corpus corpus;
  corpus.role = role;
  std::map<std::string, std::size_t> seen;  // id -> line
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = detail::parse_line(line, path, lineno);
    Dialogue d;
    try {
      d = dialogue_from_json(j, detail::loc(path, lineno));
    } catch (const ValidationError& e) {
      throw ValidationError(detail::loc(path, lineno) + e.what());
    }
    auto [it, inserted] = seen.emplace(d.id, lineno);
    if (!inserted) {
      throw ValidationError(detail::loc(path, lineno) + "duplicate dialogue id \"" + d.id +
                            "\" (first seen on line " + std::to_string(it->second) + ")");
    }
    auto report = validate_dialogue(d);
    if (!report.empty()) {
      throw ValidationError(detail::loc(path, lineno) + report.front());
    }
    corpus.dialogues.push_back(std::move(d));
  }
  if (corpus.dialogues.empty()) throw ValidationError("empty corpus: " + path);
  return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open output file: " + path);
  for (const auto& d : corpus.dialogues) {
    out << dialogue_to_json(d).dump() << "\n";
  }
}

// Lenient lint pass for the `validate` command: collects every problem
// instead of stopping at the first one.
inline std::vector<std::string> lint_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) return {"cannot open corpus file: " + path};
  std::vector<std::string> report;
  std::map<std::string, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = detail::parse_line(line, path, lineno);
    } catch (const ParseError& e) {
      report.push_back(e.what());
      continue;
    }
    Dialogue d;
    try {
      d = dialogue_from_json(j, detail::loc(path, lineno));
    } catch (const std::exception& e) {
      report.push_back(e.what());
      continue;
    }
    ++count;
    auto [it, inserted] = seen.emplace(d.id, lineno);
    if (!inserted) {
      report.push_back(detail::loc(path, lineno) + "duplicate dialogue id \"" + d.id + "\"");
    }
    for (const auto& v : validate_dialogue(d)) {
      report.push_back(detail::loc(path, lineno) + v);
    }
  }
  if (count == 0) report.push_back("empty corpus: " + path);
  return report;
}

// Token-embedding ingestion: embeddings.jsonl, one record per dialogue.
inline std::map<std::string, TokenEmbeddings> load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open embeddings file: " + path);
  std::map<std::string, TokenEmbeddings> result;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = detail::parse_line(line, path, lineno);
    TokenEmbeddings e;
    try {
      e.dialogue_id = j.at("dialogue_id").get<std::string>();
      e.provenance = j.value("provenance", std::string{});
      e.tokens = j.at("tokens").get<std::vector<std::string>>();
      e.vectors = j.at("vectors").get<std::vector<std::vector<double>>>();
    } catch (const json::exception& ex) {
      throw ParseError(detail::loc(path, lineno) + "bad embeddings record: " + ex.what());
    }
    if (e.tokens.size() != e.vectors.size()) {
      throw ValidationError(detail::loc(path, lineno) + "token/vector count mismatch for \"" +
                            e.dialogue_id + "\"");
    }
    if (e.vectors.empty() || e.vectors.front().empty()) {
      throw ValidationError(detail::loc(path, lineno) + "empty embeddings for \"" +
                            e.dialogue_id + "\"");
    }
    const std::size_t dim = e.vectors.front().size();
    for (const auto& v : e.vectors) {
      if (v.size() != dim) {
        throw ValidationError(detail::loc(path, lineno) + "ragged embedding dimensions for \"" +
                              e.dialogue_id + "\"");
      }
      for (double x : v) {
        if (!std::isfinite(x)) {
          throw ValidationError(detail::loc(path, lineno) + "non-finite embedding entry for \"" +
                                e.dialogue_id + "\"");
        }
      }
    }
    if (!result.emplace(e.dialogue_id, std::move(e)).second) {
      throw ValidationError(detail::loc(path, lineno) + "duplicate embeddings for dialogue id");
    }
  }
  if (result.empty()) throw ValidationError("empty embeddings file: " + path);
  return result;
}

inline void save_embeddings(const std::map<std::string, TokenEmbeddings>& embs,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open output file: " + path);
  for (const auto& [id, e] : embs) {
    json j;
    j["dialogue_id"] = id;
    j["provenance"] = e.provenance;
    j["tokens"] = e.tokens;
    j["vectors"] = e.vectors;
    out << j.dump() << "\n";
  }
}

// Raw input for the `segment` command: utterances carry unsplit "text"
// instead of segments. Output dialogues get act = null everywhere.
inline Corpus load_raw_corpus(const std::string& path, CorpusRole role) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open raw corpus file: " + path);
  Corpus corpus;
  corpus.role = role;
  std::map<std::string, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = detail::parse_line(line, path, lineno);
    Dialogue d;
    try {
      d.id = j.at("id").get<std::string>();
      if (j.contains("rating") && !j.at("rating").is_null()) {
        d.rating = j.at("rating").get<double>();
      }
      for (const auto& ju : j.at("utterances")) {
        Utterance u;
        u.speaker = ju.at("speaker").get<int>();
        for (const auto& seg_text : segment_utterance(ju.at("text").get<std::string>())) {
          u.segments.push_back(Segment{seg_text, std::nullopt});
        }
        d.utterances.push_back(std::move(u));
      }
    } catch (const json::exception& e) {
      throw ParseError(detail::loc(path, lineno) + "bad raw dialogue record: " + e.what());
    }
    if (!seen.emplace(d.id, lineno).second) {
      throw ValidationError(detail::loc(path, lineno) + "duplicate dialogue id \"" + d.id + "\"");
    }
    corpus.dialogues.push_back(std::move(d));
  }
  if (corpus.dialogues.empty()) throw ValidationError("empty corpus: " + path);
  return corpus;
}

}  // namespace floweval
