#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <random>

#include "floweval/acts.hpp"
#include "floweval/corpus_io.hpp"
#include "floweval/dialogue.hpp"
#include "floweval/segmenter.hpp"
#include "helpers.hpp"

using namespace floweval;

TEST_CASE("tagset has exactly 11 labels and round-trips") {
  REQUIRE(kNumActs == 11);
  for (int i = 0; i < kNumActs; ++i) {
    const auto act = static_cast<SegmentAct>(i);
    REQUIRE(parse_act(act_name(act)) == act);
  }
  REQUIRE_FALSE(try_parse_act("informing").has_value());
  REQUIRE_FALSE(try_parse_act("Question").has_value());
  REQUIRE_FALSE(try_parse_act("").has_value());
  REQUIRE_THROWS_AS(parse_act("informing"), ValidationError);
}

TEST_CASE("segmenter splits the coffee-shop utterance into four segments") {
  const auto segs =
      segment_utterance("Hmm. Certainly. What kind of coffee do you like? We have espresso and latte.");
  REQUIRE(segs == std::vector<std::string>{"Hmm.", "Certainly.",
                                           "What kind of coffee do you like?",
                                           "We have espresso and latte."});
}

TEST_CASE("segmenter keeps terminator-free text whole") {
  REQUIRE(segment_utterance("Hello") == std::vector<std::string>{"Hello"});
}

TEST_CASE("segmenter guards abbreviations and initials") {
  REQUIRE(segment_utterance("I met Dr. Smith today. He was kind.") ==
          std::vector<std::string>{"I met Dr. Smith today.", "He was kind."});
  REQUIRE(segment_utterance("J. R. told me. Go now!") ==
          std::vector<std::string>{"J. R. told me.", "Go now!"});
  REQUIRE(segment_utterance("It costs 3.76 dollars. Deal?") ==
          std::vector<std::string>{"It costs 3.76 dollars.", "Deal?"});
}

TEST_CASE("segmenter treats terminator runs as one boundary") {
  REQUIRE(segment_utterance("Really?! No way... Tell me.") ==
          std::vector<std::string>{"Really?!", "No way...", "Tell me."});
}

TEST_CASE("segmenter rejects all-whitespace input") {
  REQUIRE_THROWS_AS(segment_utterance("   \t "), ValidationError);
  REQUIRE_THROWS_AS(segment_utterance(""), ValidationError);
}

TEST_CASE("segmentation is idempotent on its own output") {
  std::mt19937_64 rng(7);
  const std::string pieces[] = {"hi there", "ok.", "why not?", "stop!", "Dr. Lee agrees",
                                "sure thing", "see you at 5. bye"};
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const int n = 1 + static_cast<int>(rng() % 4);
    for (int i = 0; i < n; ++i) {
      if (!text.empty()) text += " ";
      text += pieces[rng() % std::size(pieces)];
    }
    for (const auto& seg : segment_utterance(text)) {
      REQUIRE(segment_utterance(seg) == std::vector<std::string>{seg});
    }
  }
}

TEST_CASE("segment concatenation preserves the input modulo whitespace") {
  auto squash = [](const std::string& s) {
    std::string out;
    for (char c : s) {
      if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
    }
    return out;
  };
  const std::string inputs[] = {
      "Hmm. Certainly. What kind of coffee do you like? We have espresso and latte.",
      "I met Dr. Smith today. He was kind.",
      "one two three",
      "Really?! No way... Tell me.",
  };
  for (const auto& input : inputs) {
    std::string joined;
    for (const auto& seg : segment_utterance(input)) joined += seg;
    REQUIRE(squash(joined) == squash(input));
  }
}

TEST_CASE("act_flow walks segments in reading order with parallel speakers") {
  const Dialogue d = testutil::make_table1_dialogue();
  const ActFlow flow = act_flow(d);
  REQUIRE(flow.acts == std::vector<SegmentAct>{
                           SegmentAct::kGreeting, SegmentAct::kDirective,
                           SegmentAct::kBackchannelSuccess, SegmentAct::kCommissive,
                           SegmentAct::kQuestion, SegmentAct::kInform});
  REQUIRE(flow.speakers == std::vector<int>{0, 0, 1, 1, 1, 1});
  REQUIRE(flow.size() == d.segment_count());
}

TEST_CASE("act_flow rejects unlabeled segments") {
  Dialogue d = testutil::make_table1_dialogue();
  d.utterances[1].segments[2].act.reset();
  REQUIRE_THROWS_WITH(act_flow(d), Catch::Matchers::ContainsSubstring("unlabeled segment"));
}

TEST_CASE("single-segment dialogue yields a single-act flow") {
  Dialogue d;
  d.id = "one";
  d.utterances = {{0, {{"What time is it?", SegmentAct::kQuestion}}}};
  REQUIRE(act_flow(d).acts == std::vector<SegmentAct>{SegmentAct::kQuestion});
}

TEST_CASE("validate_dialogue reports violations without throwing") {
  Dialogue good = testutil::make_table1_dialogue();
  REQUIRE(validate_dialogue(good).empty());

  Dialogue bad_speaker = good;
  bad_speaker.utterances[0].speaker = 2;
  REQUIRE(validate_dialogue(bad_speaker).size() == 1);

  Dialogue bad_rating = good;
  bad_rating.rating = std::nan("");
  REQUIRE(validate_dialogue(bad_rating).size() == 1);

  Dialogue empty_segment = good;
  empty_segment.utterances[1].segments[0].text = "   ";
  REQUIRE(validate_dialogue(empty_segment).size() == 1);
}

TEST_CASE("corpus loads the documented JSONL schema") {
  testutil::TempDir tmp("corpus");
  {
    std::ofstream out(tmp.file("c.jsonl"));
    out << R"({"id":"coffee","rating":null,"utterances":[)"
        << R"({"speaker":0,"segments":[{"text":"How are you?","act":"greeting"},{"text":"May I have a cup of coffee?","act":"directive"}]},)"
        << R"({"speaker":1,"segments":[{"text":"Hmm.","act":"backchannel-success"},{"text":"Certainly.","act":"commissive"},)"
        << R"({"text":"What kind of coffee do you like?","act":"question"},{"text":"We have espresso and latte.","act":"inform"}]}]})"
        << "\n";
  }
  const Corpus corpus = load_corpus(tmp.file("c.jsonl"), CorpusRole::kRetrievalSet);
  REQUIRE(corpus.dialogues.size() == 1);
  REQUIRE(corpus.dialogues[0].utterances.size() == 2);
  REQUIRE(corpus.dialogues[0].segment_count() == 6);
  REQUIRE(act_flow(corpus.dialogues[0]).acts ==
          act_flow(testutil::make_table1_dialogue()).acts);
}

TEST_CASE("corpus load errors carry line numbers") {
  testutil::TempDir tmp("corpus_err");

  SECTION("empty file") {
    std::ofstream(tmp.file("empty.jsonl")).close();
    REQUIRE_THROWS_WITH(load_corpus(tmp.file("empty.jsonl"), CorpusRole::kRetrievalSet),
                        Catch::Matchers::ContainsSubstring("empty corpus"));
  }
  SECTION("unknown act string") {
    std::ofstream out(tmp.file("bad_act.jsonl"));
    out << R"({"id":"x","utterances":[{"speaker":0,"segments":[{"text":"hi","act":"informing"}]}]})"
        << "\n";
    out.close();
    REQUIRE_THROWS_WITH(load_corpus(tmp.file("bad_act.jsonl"), CorpusRole::kRetrievalSet),
                        Catch::Matchers::ContainsSubstring("informing"));
  }
  SECTION("duplicate id names the line") {
    std::ofstream out(tmp.file("dup.jsonl"));
    const std::string rec =
        R"({"id":"x","utterances":[{"speaker":0,"segments":[{"text":"hi","act":"greeting"}]}]})";
    out << rec << "\n" << rec << "\n";
    out.close();
    REQUIRE_THROWS_WITH(load_corpus(tmp.file("dup.jsonl"), CorpusRole::kRetrievalSet),
                        Catch::Matchers::ContainsSubstring(":2:"));
  }
  SECTION("malformed json line") {
    std::ofstream out(tmp.file("broken.jsonl"));
    out << "{not json}\n";
    out.close();
    REQUIRE_THROWS_AS(load_corpus(tmp.file("broken.jsonl"), CorpusRole::kRetrievalSet),
                      ParseError);
  }
}

TEST_CASE("corpus round-trips through serialization") {
  Corpus corpus = testutil::make_grammar_corpus(12, 3, 9, 42, /*with_ratings=*/true);
  corpus.dialogues.push_back(testutil::make_table1_dialogue());
  testutil::TempDir tmp("roundtrip");
  save_corpus(corpus, tmp.file("c.jsonl"));
  const Corpus again = load_corpus(tmp.file("c.jsonl"), CorpusRole::kRetrievalSet);
  REQUIRE(again.dialogues.size() == corpus.dialogues.size());
  for (std::size_t i = 0; i < corpus.dialogues.size(); ++i) {
    const Dialogue& a = corpus.dialogues[i];
    const Dialogue& b = again.dialogues[i];
    REQUIRE(a.id == b.id);
    REQUIRE(a.rating == b.rating);
    REQUIRE(a.utterances.size() == b.utterances.size());
    for (std::size_t ui = 0; ui < a.utterances.size(); ++ui) {
      REQUIRE(a.utterances[ui].speaker == b.utterances[ui].speaker);
      REQUIRE(a.utterances[ui].segments.size() == b.utterances[ui].segments.size());
      for (std::size_t si = 0; si < a.utterances[ui].segments.size(); ++si) {
        REQUIRE(a.utterances[ui].segments[si].text == b.utterances[ui].segments[si].text);
        REQUIRE(a.utterances[ui].segments[si].act == b.utterances[ui].segments[si].act);
      }
    }
  }
}

TEST_CASE("lint collects every problem instead of stopping") {
  testutil::TempDir tmp("lint");
  {
    std::ofstream out(tmp.file("c.jsonl"));
    out << R"({"id":"a","utterances":[{"speaker":0,"segments":[{"text":"hi","act":"greeting"}]}]})" << "\n";
    out << R"({"id":"a","utterances":[{"speaker":2,"segments":[{"text":"yo","act":"greeting"}]}]})" << "\n";
    out << "{broken\n";
  }
  const auto report = lint_corpus(tmp.file("c.jsonl"));
  REQUIRE(report.size() == 3);  // duplicate id, bad speaker, parse error
}

TEST_CASE("embeddings ingestion validates shape and finiteness") {
  testutil::TempDir tmp("emb");
  {
    std::ofstream out(tmp.file("e.jsonl"));
    out << R"({"dialogue_id":"a","provenance":"enc:l7","tokens":["x","y"],"vectors":[[1.0,2.0],[3.0,4.0]]})"
        << "\n";
  }
  auto embs = load_embeddings(tmp.file("e.jsonl"));
  REQUIRE(embs.size() == 1);
  REQUIRE(embs.at("a").dim() == 2);
  REQUIRE(embs.at("a").provenance == "enc:l7");

  {
    std::ofstream out(tmp.file("ragged.jsonl"));
    out << R"({"dialogue_id":"a","provenance":"p","tokens":["x","y"],"vectors":[[1.0,2.0],[3.0]]})"
        << "\n";
  }
  REQUIRE_THROWS_AS(load_embeddings(tmp.file("ragged.jsonl")), ValidationError);

  {
    std::ofstream out(tmp.file("mismatch.jsonl"));
    out << R"({"dialogue_id":"a","provenance":"p","tokens":["x"],"vectors":[[1.0],[2.0]]})" << "\n";
  }
  REQUIRE_THROWS_AS(load_embeddings(tmp.file("mismatch.jsonl")), ValidationError);
}
