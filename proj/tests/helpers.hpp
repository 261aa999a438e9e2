#pragma once

// Shared fixture builders for the test suites: synthetic corpora with known
// structure, deterministic token embeddings, and scratch directories.

#include <unistd.h>

#include <atomic>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "floweval/acts.hpp"
#include "floweval/corpus_io.hpp"
#include "floweval/dialogue.hpp"
#include "floweval/tagger.hpp"

namespace testutil {

using namespace floweval;

inline Dialogue make_table1_dialogue() {
  Dialogue d;
  d.id = "coffee";
  Utterance u1;
  u1.speaker = 0;
  u1.segments = {{"How are you?", SegmentAct::kGreeting},
                 {"May I have a cup of coffee?", SegmentAct::kDirective}};
  Utterance u2;
  u2.speaker = 1;
  u2.segments = {{"Hmm.", SegmentAct::kBackchannelSuccess},
                 {"Certainly.", SegmentAct::kCommissive},
                 {"What kind of coffee do you like?", SegmentAct::kQuestion},
                 {"We have espresso and latte.", SegmentAct::kInform}};
  d.utterances = {u1, u2};
  return d;
}

// Deterministic successor permutation over the 11 acts: next = (3 * a + 1) mod 11.
inline SegmentAct grammar_successor(SegmentAct a) {
  return static_cast<SegmentAct>((3 * static_cast<int>(a) + 1) % kNumActs);
}

// Corpus of flows drawn from the deterministic act grammar. Lengths and
// start acts vary per dialogue; segments carry the act name as text so the
// topic channel has something to chew on.
inline Corpus make_grammar_corpus(std::size_t n_dialogues, std::size_t min_len,
                                  std::size_t max_len, std::uint64_t seed,
                                  bool with_ratings = false) {
  std::mt19937_64 rng(seed);
  Corpus corpus;
  corpus.role = CorpusRole::kRetrievalSet;
  for (std::size_t k = 0; k < n_dialogues; ++k) {
    Dialogue d;
    d.id = "g" + std::to_string(1000 + k);
    const std::size_t len = min_len + rng() % (max_len - min_len + 1);
    SegmentAct act = static_cast<SegmentAct>(rng() % kNumActs);
    int speaker = 0;
    std::size_t i = 0;
    while (i < len) {
      Utterance u;
      u.speaker = speaker;
      const std::size_t take = std::min<std::size_t>(1 + rng() % 3, len - i);
      for (std::size_t s = 0; s < take; ++s) {
        u.segments.push_back(
            {std::string(act_name(act)) + " turn " + std::to_string(i + s), act});
        act = grammar_successor(act);
      }
      i += take;
      speaker = 1 - speaker;
      d.utterances.push_back(std::move(u));
    }
    if (with_ratings) d.rating = 1.0 + static_cast<double>(rng() % 5);
    corpus.dialogues.push_back(std::move(d));
  }
  return corpus;
}

// Deterministic per-token embedding: the same token text always maps to the
// same vector, so identical dialogues get identical embedding matrices.
inline TokenEmbeddings synth_embeddings(const Dialogue& d, std::size_t dim,
                                        std::uint64_t salt = 0) {
  TokenEmbeddings e;
  e.dialogue_id = d.id;
  e.provenance = "synthetic-hash-v1";
  for (const auto& u : d.utterances) {
    for (const auto& s : u.segments) {
      std::string cur;
      auto flush = [&] {
        if (cur.empty()) return;
        e.tokens.push_back(cur);
        std::mt19937_64 rng(detail::fnv1a64(cur) ^ salt);
        std::vector<double> v(dim);
        for (auto& x : v) {
          x = 2.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 1.0;
        }
        e.vectors.push_back(std::move(v));
        cur.clear();
      };
      for (char c : s.text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
          flush();
        } else {
          cur.push_back(c);
        }
      }
      flush();
    }
  }
  return e;
}

inline std::map<std::string, TokenEmbeddings> synth_embeddings_for(const Corpus& corpus,
                                                                   std::size_t dim,
                                                                   std::uint64_t salt = 0) {
  std::map<std::string, TokenEmbeddings> out;
  for (const auto& d : corpus.dialogues) out[d.id] = synth_embeddings(d, dim, salt);
  return out;
}

// Labeled corpus whose segment text predicts the label: each act draws from
// its own keyword pool, with one shared noise word. Linearly separable up
// to the noise.
inline Corpus make_textual_corpus(std::size_t n_dialogues, std::uint64_t seed,
                                  int n_labels = 4) {
  std::mt19937_64 rng(seed);
  static const char* kWords[] = {"what", "tell", "please", "will",  "hello", "bye",
                                 "sorry", "thanks", "okay", "pardon", "right"};
  Corpus corpus;
  for (std::size_t k = 0; k < n_dialogues; ++k) {
    Dialogue d;
    d.id = "t" + std::to_string(1000 + k);
    const std::size_t n_utts = 2 + rng() % 3;
    for (std::size_t ui = 0; ui < n_utts; ++ui) {
      Utterance u;
      u.speaker = static_cast<int>(ui % 2);
      const std::size_t n_segs = 1 + rng() % 3;
      for (std::size_t si = 0; si < n_segs; ++si) {
        const int label = static_cast<int>(rng() % static_cast<std::size_t>(n_labels));
        std::string text = std::string(kWords[label]) + " " + kWords[label];
        if (rng() % 4 == 0) text += " filler";
        if (label == 0) text += "?";
        u.segments.push_back({text, static_cast<SegmentAct>(label)});
      }
      d.utterances.push_back(std::move(u));
    }
    corpus.dialogues.push_back(std::move(d));
  }
  return corpus;
}

// Scratch directory, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("floweval_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testutil
