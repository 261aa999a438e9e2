#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <unordered_set>
#include <vector>

#include "floweval/errors.hpp"

namespace floweval {

// Abbreviation list v1. A period directly after one of these words (or after
// a single letter, as in initials) does not end a sentence. Frozen so that
// segmentation stays deterministic across releases.
inline const std::unordered_set<std::string>& abbreviation_list_v1() {
  static const std::unordered_set<std::string> kAbbrev = {
      "mr",   "mrs",  "ms",   "dr",   "prof", "sr",   "jr",   "st",
      "mt",   "capt", "col",  "gen",  "lt",   "sgt",  "rev",  "hon",
      "etc",  "vs",   "inc",  "ltd",  "co",   "corp", "dept", "univ",
      "approx", "appt", "apt", "est",  "fig",  "al",   "ave",  "blvd",
      "jan",  "feb",  "mar",  "apr",  "jun",  "jul",  "aug",  "sep",
      "sept", "oct",  "nov",  "dec",  "mon",  "tue",  "wed",  "thu",
      "fri",  "sat",  "sun",
  };
  return kAbbrev;
}

inline constexpr const char* kSegmenterVersion = "rule-v1";

namespace detail {

inline bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

inline std::string trim_copy(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Word (letter run) immediately preceding position `pos`, lowercased.
inline std::string word_before(const std::string& text, std::size_t pos) {
  std::size_t e = pos;
  std::size_t b = e;
  while (b > 0 && std::isalpha(static_cast<unsigned char>(text[b - 1]))) --b;
  std::string w = text.substr(b, e - b);
  std::transform(w.begin(), w.end(), w.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return w;
}

}  // namespace detail

// Splits an utterance into sentence-like segments. A boundary is a run of
// '.', '!', '?' followed by whitespace; a lone period is guarded by the
// abbreviation list and by single-letter initials. Segments come back
// trimmed, so the function is idempotent on its own output.
inline std::vector<std::string> segment_utterance(const std::string& text) {
  if (detail::trim_copy(text).empty()) {
    throw ValidationError("cannot segment empty or all-whitespace text");
  }
  std::vector<std::string> segments;
  std::size_t start = 0;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    if (!detail::is_terminator(text[i])) {
      ++i;
      continue;
    }
    std::size_t run_begin = i;
    std::size_t run_end = i;
    while (run_end < n && detail::is_terminator(text[run_end])) ++run_end;
    bool followed_by_space =
        run_end < n && std::isspace(static_cast<unsigned char>(text[run_end]));
    bool guarded = false;
    if (run_end - run_begin == 1 && text[run_begin] == '.') {
      std::string w = detail::word_before(text, run_begin);
      guarded = w.size() == 1 || abbreviation_list_v1().count(w) > 0;
    }
    if (followed_by_space && !guarded) {
      std::string seg = detail::trim_copy(text.substr(start, run_end - start));
      if (!seg.empty()) segments.push_back(seg);
      start = run_end;
    }
    i = run_end;
  }
  std::string tail = detail::trim_copy(text.substr(start));
  if (!tail.empty()) segments.push_back(tail);
  if (segments.empty()) {
    // Terminator-only inputs like "..." still form one segment.
    segments.push_back(detail::trim_copy(text));
  }
  return segments;
}

}  // namespace floweval
