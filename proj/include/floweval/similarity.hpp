#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "floweval/dialogue.hpp"
#include "floweval/errors.hpp"
#include "floweval/tfidf.hpp"

namespace floweval {

// Pooled content feature of a dialogue (coordinate-wise max over tokens).
struct ContentFeature {
  std::vector<double> vector;
  std::string provenance;
};

inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;  // zero-norm inputs score 0, never error
  return dot / std::sqrt(na * nb);
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return cosine(std::span<const double>(a), std::span<const double>(b));
}

inline double cosine(const SparseVector& a, const SparseVector& b) {
  if (a.dim != b.dim) throw ValidationError("cosine: dimension mismatch");
  double na2 = 0, nb2 = 0;
  for (const auto& [i, w] : a.entries) na2 += w * w;
  for (const auto& [i, w] : b.entries) nb2 += w * w;
  if (na2 == 0.0 || nb2 == 0.0) return 0.0;
  return dot(a, b) / std::sqrt(na2 * nb2);
}

// Coordinate-wise maximum over the token vectors.
inline ContentFeature content_feature(const TokenEmbeddings& e) {
  if (e.vectors.empty()) throw ValidationError("content_feature: no token vectors");
  ContentFeature f;
  f.provenance = e.provenance;
  f.vector = e.vectors.front();
  for (std::size_t r = 1; r < e.vectors.size(); ++r) {
    const auto& row = e.vectors[r];
    if (row.size() != f.vector.size()) {
      throw ValidationError("content_feature: ragged embedding matrix");
    }
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (row[j] > f.vector[j]) f.vector[j] = row[j];
    }
  }
  return f;
}

}  // namespace floweval
