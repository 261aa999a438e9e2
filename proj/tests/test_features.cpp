#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "floweval/bertscore.hpp"
#include "floweval/similarity.hpp"
#include "floweval/tfidf.hpp"
#include "helpers.hpp"

using namespace floweval;

namespace {

Dialogue text_dialogue(const std::string& id, const std::string& text) {
  Dialogue d;
  d.id = id;
  d.utterances = {{0, {{text, SegmentAct::kInform}}}};
  return d;
}

Corpus toy_corpus() {
  Corpus c;
  c.dialogues = {text_dialogue("d1", "a b"), text_dialogue("d2", "a c"),
                 text_dialogue("d3", "a")};
  return c;
}

}  // namespace

TEST_CASE("tfidf vocabulary counts document frequencies") {
  const TfidfVocabulary vocab = build_tfidf(toy_corpus());
  REQUIRE(vocab.size() == 3);
  REQUIRE(vocab.n_docs == 3);
  REQUIRE(vocab.df.at("a") == 3);
  REQUIRE(vocab.df.at("b") == 1);
  REQUIRE(vocab.df.at("c") == 1);
  REQUIRE(vocab.df.find("z") == vocab.df.end());
}

TEST_CASE("tfidf weights follow the smoothed formula") {
  const TfidfVocabulary vocab = build_tfidf(toy_corpus());
  const SparseVector v = tfidf_vector(text_dialogue("q", "a b"), vocab);
  REQUIRE(v.entries.size() == 2);
  // weight(a) = 1 * (ln(4/4) + 1) = 1; weight(b) = 1 * (ln(4/2) + 1)
  const double wa = v.entries[vocab.term_index.at("a")].second;
  const double wb = v.entries[1].second;
  REQUIRE(wa == Catch::Approx(1.0).epsilon(1e-12));
  REQUIRE(wb == Catch::Approx(1.0 + std::log(2.0)).epsilon(1e-12));
  REQUIRE(wb == Catch::Approx(1.6931471805599454).epsilon(1e-12));
}

TEST_CASE("tfidf weight is linear in the term count") {
  const TfidfVocabulary vocab = build_tfidf(toy_corpus());
  const SparseVector once = tfidf_vector(text_dialogue("q", "b"), vocab);
  const SparseVector twice = tfidf_vector(text_dialogue("q", "b b"), vocab);
  REQUIRE(twice.entries[0].second == Catch::Approx(2.0 * once.entries[0].second));
}

TEST_CASE("out-of-vocabulary dialogues vectorize to zero") {
  const TfidfVocabulary vocab = build_tfidf(toy_corpus());
  const SparseVector v = tfidf_vector(text_dialogue("q", "zzz unseen words"), vocab);
  REQUIRE(v.entries.empty());
  REQUIRE(v.dim == 3);
}

TEST_CASE("tfidf tokenizer lowercases and splits on non-alphanumerics") {
  REQUIRE(tfidf_tokenize("Hello, World! it's 3.76") ==
          std::vector<std::string>{"hello", "world", "it", "s", "3", "76"});
}

TEST_CASE("tfidf vocabulary persists as JSON") {
  const TfidfVocabulary vocab = build_tfidf(toy_corpus());
  testutil::TempDir tmp("vocab");
  save_tfidf_vocab(vocab, tmp.file("v.json"));
  const TfidfVocabulary again = load_tfidf_vocab(tmp.file("v.json"));
  REQUIRE(again.n_docs == vocab.n_docs);
  REQUIRE(again.df == vocab.df);
  REQUIRE(again.term_index == vocab.term_index);
}

TEST_CASE("cosine matches hand arithmetic") {
  REQUIRE(cosine(std::vector<double>{1, 2, 3}, std::vector<double>{4, 5, 6}) ==
          Catch::Approx(0.9746318461970762).epsilon(1e-12));
  REQUIRE(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  const std::vector<double> x{0.3, -1.7, 2.2};
  REQUIRE(cosine(x, x) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("cosine of anything with the zero vector is zero") {
  REQUIRE(cosine(std::vector<double>{0, 0}, std::vector<double>{1, 2}) == 0.0);
  SparseVector a, b;
  a.dim = b.dim = 4;
  b.entries = {{1, 2.0}};
  REQUIRE(cosine(a, b) == 0.0);
}

TEST_CASE("cosine rejects dimension mismatches") {
  REQUIRE_THROWS_AS(cosine(std::vector<double>{1}, std::vector<double>{1, 2}), ValidationError);
  SparseVector a, b;
  a.dim = 3;
  b.dim = 4;
  REQUIRE_THROWS_AS(cosine(a, b), ValidationError);
}

TEST_CASE("cosine is scale invariant for positive scalars") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(5), b(5);
    for (auto& v : a) v = static_cast<double>(rng() % 2000) / 100.0 - 10.0;
    for (auto& v : b) v = static_cast<double>(rng() % 2000) / 100.0 - 10.0;
    const double lambda = 0.01 + static_cast<double>(rng() % 1000) / 10.0;
    std::vector<double> scaled = a;
    for (auto& v : scaled) v *= lambda;
    REQUIRE(cosine(scaled, b) == Catch::Approx(cosine(a, b)).margin(1e-12));
  }
}

TEST_CASE("sparse cosine of tfidf vectors stays within [0, 1]") {
  Corpus corpus = testutil::make_grammar_corpus(20, 3, 10, 5);
  const TfidfVocabulary vocab = build_tfidf(corpus);
  std::vector<SparseVector> vecs;
  for (const auto& d : corpus.dialogues) vecs.push_back(tfidf_vector(d, vocab));
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    for (std::size_t j = 0; j < vecs.size(); ++j) {
      const double c = cosine(vecs[i], vecs[j]);
      REQUIRE(c >= 0.0);
      REQUIRE(c <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("content feature is the coordinate-wise max") {
  TokenEmbeddings e;
  e.dialogue_id = "x";
  e.tokens = {"a", "b"};
  e.vectors = {{0, 1}, {1, 0}};
  REQUIRE(content_feature(e).vector == std::vector<double>{1, 1});

  TokenEmbeddings single;
  single.dialogue_id = "y";
  single.tokens = {"a"};
  single.vectors = {{3.5, -2.0, 0.25}};
  REQUIRE(content_feature(single).vector == single.vectors[0]);
}

TEST_CASE("content feature dominates every row and ignores row order") {
  Corpus corpus = testutil::make_grammar_corpus(5, 4, 8, 17);
  for (const auto& d : corpus.dialogues) {
    TokenEmbeddings e = testutil::synth_embeddings(d, 6);
    const auto pooled = content_feature(e).vector;
    for (const auto& row : e.vectors) {
      for (std::size_t j = 0; j < row.size(); ++j) REQUIRE(pooled[j] >= row[j]);
    }
    TokenEmbeddings reversed = e;
    std::reverse(reversed.vectors.begin(), reversed.vectors.end());
    REQUIRE(content_feature(reversed).vector == pooled);
  }
}

TEST_CASE("content feature rejects empty token lists") {
  TokenEmbeddings e;
  e.dialogue_id = "x";
  REQUIRE_THROWS_AS(content_feature(e), ValidationError);
}

TEST_CASE("bertscore of a text with itself is 1") {
  const Dialogue d = testutil::make_table1_dialogue();
  const TokenEmbeddings e = testutil::synth_embeddings(d, 8);
  REQUIRE(bertscore_f1(e, e) == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("bertscore of orthogonal token sets is 0") {
  TokenEmbeddings u, r;
  u.dialogue_id = "u";
  u.tokens = {"a", "b"};
  u.vectors = {{1, 0, 0, 0}, {0, 1, 0, 0}};
  r.dialogue_id = "r";
  r.tokens = {"c", "d"};
  r.vectors = {{0, 0, 1, 0}, {0, 0, 0, 1}};
  REQUIRE(bertscore_f1(u, r) == 0.0);
}

TEST_CASE("bertscore matches the hand-computed asymmetric case") {
  TokenEmbeddings u, r;
  u.dialogue_id = "u";
  u.tokens = {"a"};
  u.vectors = {{1, 0}};
  r.dialogue_id = "r";
  r.tokens = {"a", "b"};
  r.vectors = {{1, 0}, {0, 1}};
  const BertScore s = bertscore(u, r);
  REQUIRE(s.precision == Catch::Approx(1.0));
  REQUIRE(s.recall == Catch::Approx(0.5));
  REQUIRE(s.f1 == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("bertscore f1 is symmetric in its arguments") {
  std::mt19937_64 rng(23);
  Corpus corpus = testutil::make_grammar_corpus(6, 3, 9, 29);
  for (std::size_t i = 0; i + 1 < corpus.dialogues.size(); ++i) {
    const TokenEmbeddings a = testutil::synth_embeddings(corpus.dialogues[i], 7);
    const TokenEmbeddings b = testutil::synth_embeddings(corpus.dialogues[i + 1], 7);
    REQUIRE(bertscore_f1(a, b) == Catch::Approx(bertscore_f1(b, a)).margin(1e-12));
  }
}

TEST_CASE("bertscore rejects empty inputs and dimension mismatches") {
  TokenEmbeddings ok, empty, wrong;
  ok.tokens = {"a"};
  ok.vectors = {{1, 0}};
  wrong.tokens = {"a"};
  wrong.vectors = {{1, 0, 0}};
  REQUIRE_THROWS_AS(bertscore_f1(ok, empty), ValidationError);
  REQUIRE_THROWS_AS(bertscore_f1(ok, wrong), ValidationError);
}
