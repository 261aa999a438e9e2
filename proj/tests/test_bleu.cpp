#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <random>

#include "floweval/bleu.hpp"
#include "helpers.hpp"

using namespace floweval;

namespace {

ActFlow flow_of(std::initializer_list<int> acts) {
  ActFlow f;
  for (int a : acts) {
    f.acts.push_back(static_cast<SegmentAct>(a));
    f.speakers.push_back(0);
  }
  return f;
}

ActFlow random_flow(std::mt19937_64& rng, std::size_t min_len, std::size_t max_len) {
  ActFlow f;
  const std::size_t len = min_len + rng() % (max_len - min_len + 1);
  for (std::size_t i = 0; i < len; ++i) {
    f.acts.push_back(static_cast<SegmentAct>(rng() % kNumActs));
    f.speakers.push_back(static_cast<int>(i % 2));
  }
  return f;
}

// Independent oracle: direct transcription of clipped n-gram precision with
// NIST geometric smoothing, counting n-grams with nested loops over
// explicit vectors-of-ints keys.
double bleu_oracle(const ActFlow& cand, const ActFlow& ref, int max_order) {
  const std::size_t clen = cand.acts.size(), rlen = ref.acts.size();
  const int eff = static_cast<int>(std::min<std::size_t>(
      {static_cast<std::size_t>(max_order), clen, rlen}));
  double log_sum = 0;
  int zeros = 0;
  for (int n = 1; n <= eff; ++n) {
    std::map<std::vector<int>, int> cand_counts, ref_counts;
    for (std::size_t i = 0; i + n <= clen; ++i) {
      std::vector<int> gram;
      for (int k = 0; k < n; ++k) gram.push_back(static_cast<int>(cand.acts[i + k]));
      cand_counts[gram] += 1;
    }
    for (std::size_t i = 0; i + n <= rlen; ++i) {
      std::vector<int> gram;
      for (int k = 0; k < n; ++k) gram.push_back(static_cast<int>(ref.acts[i + k]));
      ref_counts[gram] += 1;
    }
    long long clipped = 0, total = 0;
    for (const auto& [gram, count] : cand_counts) {
      total += count;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) clipped += std::min(count, it->second);
    }
    double p;
    if (clipped > 0) {
      p = static_cast<double>(clipped) / static_cast<double>(total);
    } else {
      ++zeros;
      p = 1.0 / (std::pow(2.0, zeros) * static_cast<double>(total));
    }
    log_sum += std::log(p);
  }
  const double geo = std::exp(log_sum / eff);
  const double bp =
      clen < rlen ? std::exp(1.0 - static_cast<double>(rlen) / static_cast<double>(clen)) : 1.0;
  return bp * geo;
}

}  // namespace

TEST_CASE("identical flows score exactly 1") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const ActFlow f = random_flow(rng, 1, 20);
    REQUIRE(act_bleu(f, f) == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("disjoint act alphabets of equal length score below 0.05") {
  // candidate uses acts 0..4, reference uses acts 5..9, both length 10
  ActFlow cand = flow_of({0, 1, 2, 3, 4, 0, 1, 2, 3, 4});
  ActFlow ref = flow_of({5, 6, 7, 8, 9, 5, 6, 7, 8, 9});
  const double value = act_bleu(cand, ref);
  REQUIRE(value < 0.05);
  REQUIRE(value > 0.0);
  REQUIRE(value == Catch::Approx(bleu_oracle(cand, ref, 4)).margin(1e-12));
}

TEST_CASE("effective order clips to the shorter flow") {
  // single-segment flows still score: order 1 only
  ActFlow one = flow_of({2});
  REQUIRE(act_bleu(one, one) == Catch::Approx(1.0));
  ActFlow other = flow_of({3});
  // precision 0/1 smoothed to 1/(2*1) = 0.5, BP = 1 (equal length)
  REQUIRE(act_bleu(one, other) == Catch::Approx(0.5).margin(1e-12));
  // short candidate against long reference picks up the brevity penalty
  ActFlow cand = flow_of({1, 2});
  ActFlow ref = flow_of({1, 2, 3, 4, 5, 6});
  REQUIRE(act_bleu(cand, ref) == Catch::Approx(bleu_oracle(cand, ref, 4)).margin(1e-12));
}

TEST_CASE("brevity penalty follows exp(1 - r/c) for short candidates") {
  ActFlow cand = flow_of({0, 1, 0, 1});
  ActFlow ref = flow_of({0, 1, 0, 1, 0, 1, 0, 1});
  // orders 1..4 all have perfect precision; only BP remains
  REQUIRE(act_bleu(cand, ref) == Catch::Approx(std::exp(1.0 - 8.0 / 4.0)).epsilon(1e-12));
  // long candidate against a short reference takes no penalty
  REQUIRE(act_bleu(ref, cand) == Catch::Approx(bleu_oracle(ref, cand, 4)).margin(1e-12));
}

TEST_CASE("act_bleu matches the brute-force oracle on 1000 random pairs") {
  std::mt19937_64 rng(20240817);
  for (int trial = 0; trial < 1000; ++trial) {
    const ActFlow cand = random_flow(rng, 1, 20);
    const ActFlow ref = random_flow(rng, 1, 20);
    const int max_order = 1 + static_cast<int>(rng() % 4);
    const double got = act_bleu(cand, ref, max_order);
    const double want = bleu_oracle(cand, ref, max_order);
    REQUIRE(got == Catch::Approx(want).margin(1e-9));
  }
}

TEST_CASE("act_bleu is permutation sensitive") {
  ActFlow flow = flow_of({0, 1, 2, 3, 0, 1, 2, 3});
  ActFlow shuffled = flow_of({3, 2, 1, 0, 3, 2, 1, 0});
  REQUIRE(act_bleu(flow, flow) == Catch::Approx(1.0));
  REQUIRE(act_bleu(shuffled, flow) < 1.0);
}

TEST_CASE("empty flows are rejected") {
  ActFlow empty, ok = flow_of({1});
  REQUIRE_THROWS_AS(act_bleu(empty, ok), ValidationError);
  REQUIRE_THROWS_AS(act_bleu(ok, empty), ValidationError);
  REQUIRE_THROWS_AS(act_bleu(ok, ok, 0), ValidationError);
}
