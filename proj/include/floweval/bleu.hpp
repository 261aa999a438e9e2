#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "floweval/dialogue.hpp"
#include "floweval/errors.hpp"

namespace floweval {

namespace detail {

// clipped n-gram matches and candidate n-gram total for one order
struct NgramPrecision {
  long long matches = 0;
  long long total = 0;
};

inline NgramPrecision ngram_precision(const std::vector<SegmentAct>& cand,
                                      const std::vector<SegmentAct>& ref, int order) {
  std::map<std::vector<SegmentAct>, long long> ref_counts;
  for (std::size_t i = 0; i + order <= ref.size(); ++i) {
    ref_counts[std::vector<SegmentAct>(ref.begin() + i, ref.begin() + i + order)] += 1;
  }
  std::map<std::vector<SegmentAct>, long long> cand_counts;
  for (std::size_t i = 0; i + order <= cand.size(); ++i) {
    cand_counts[std::vector<SegmentAct>(cand.begin() + i, cand.begin() + i + order)] += 1;
  }
  NgramPrecision p;
  for (const auto& [gram, count] : cand_counts) {
    p.total += count;
    auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) p.matches += std::min(count, it->second);
  }
  return p;
}

}  // namespace detail

// BLEU over raw act flows: geometric mean of modified n-gram precisions up
// to min(max_order, |candidate|, |reference|), times the brevity penalty.
// Zero-match precisions use NIST geometric sequence smoothing: the k-th
// zero precision (counting zeros in order of n) becomes 1 / (2^k * total),
// where total is the candidate n-gram count at that order.
inline double act_bleu(const ActFlow& candidate, const ActFlow& reference, int max_order = 4) {
  if (candidate.acts.empty() || reference.acts.empty()) {
    throw ValidationError("act_bleu: empty act flow");
  }
  if (max_order < 1) throw ValidationError("act_bleu: max_order must be >= 1");
  const long long c_len = static_cast<long long>(candidate.acts.size());
  const long long r_len = static_cast<long long>(reference.acts.size());
  const int effective_order =
      static_cast<int>(std::min<long long>({max_order, c_len, r_len}));

  double log_precision_sum = 0.0;
  int zeros_so_far = 0;
  for (int n = 1; n <= effective_order; ++n) {
    auto p = detail::ngram_precision(candidate.acts, reference.acts, n);
    double precision;
    if (p.matches > 0) {
      precision = static_cast<double>(p.matches) / static_cast<double>(p.total);
    } else {
      ++zeros_so_far;
      precision = 1.0 / (std::pow(2.0, zeros_so_far) * static_cast<double>(p.total));
    }
    log_precision_sum += std::log(precision);
  }
  double geo_mean = std::exp(log_precision_sum / effective_order);
  double brevity_penalty =
      c_len < r_len ? std::exp(1.0 - static_cast<double>(r_len) / static_cast<double>(c_len))
                    : 1.0;
  return brevity_penalty * geo_mean;
}

}  // namespace floweval
