#pragma once

#include <algorithm>
#include <vector>

#include "floweval/dialogue.hpp"
#include "floweval/errors.hpp"
#include "floweval/similarity.hpp"

namespace floweval {

struct BertScore {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

// Greedy token matching on raw embeddings: precision is the mean over
// candidate tokens of the best cosine against any reference token, recall
// is symmetric, F1 the harmonic mean. No idf weighting, no baseline
// rescaling.
inline BertScore bertscore(const TokenEmbeddings& cand, const TokenEmbeddings& ref) {
  if (cand.vectors.empty() || ref.vectors.empty()) {
    throw ValidationError("bertscore: empty token list");
  }
  if (cand.dim() != ref.dim()) {
    throw ValidationError("bertscore: embedding dimension mismatch (" +
                          std::to_string(cand.dim()) + " vs " + std::to_string(ref.dim()) + ")");
  }
  auto best_row_match = [](const std::vector<std::vector<double>>& from,
                           const std::vector<std::vector<double>>& to) {
    double sum = 0;
    for (const auto& u : from) {
      double best = -1.0;
      for (const auto& r : to) best = std::max(best, cosine(u, r));
      sum += best;
    }
    return sum / static_cast<double>(from.size());
  };
  BertScore s;
  s.precision = best_row_match(cand.vectors, ref.vectors);
  s.recall = best_row_match(ref.vectors, cand.vectors);
  s.f1 = (s.precision + s.recall) == 0.0
             ? 0.0
             : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

inline double bertscore_f1(const TokenEmbeddings& cand, const TokenEmbeddings& ref) {
  return bertscore(cand, ref).f1;
}

}  // namespace floweval
