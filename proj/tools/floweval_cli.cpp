// Command-line front end for the consensus dialogue evaluation pipeline:
// corpus validation and segmentation, act-LM training, tagging, index
// building, scoring, metric fusion, and the correlation benchmark.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "floweval/act_lm.hpp"
#include "floweval/assessment.hpp"
#include "floweval/corpus_io.hpp"
#include "floweval/correlation.hpp"
#include "floweval/log.hpp"
#include "floweval/retrieval.hpp"
#include "floweval/tagger.hpp"
#include "floweval/version.hpp"

namespace fv = floweval;
using nlohmann::json;

namespace {

// Declarative defaults; per-command flags override whatever the file sets.
struct RunConfig {
  std::uint64_t seed = 1;
  fv::ActLmConfig act_lm;
  fv::AssessmentConfig assessment;
  fv::TaggerConfig tagger;
  std::map<std::string, std::string> paths;
};

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fv::ParseError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw fv::ParseError("bad config file " + path + ": " + e.what());
  }
  RunConfig cfg;
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("act_lm")) cfg.act_lm = j.at("act_lm").get<fv::ActLmConfig>();
  if (j.contains("assessment")) cfg.assessment = j.at("assessment").get<fv::AssessmentConfig>();
  if (j.contains("tagger")) cfg.tagger = j.at("tagger").get<fv::TaggerConfig>();
  if (j.contains("paths")) {
    cfg.paths = j.at("paths").get<std::map<std::string, std::string>>();
  }
  return cfg;
}

std::string path_default(const RunConfig& cfg, const std::string& key) {
  auto it = cfg.paths.find(key);
  return it == cfg.paths.end() ? std::string{} : it->second;
}

void require_path(const std::string& value, const std::string& flag) {
  if (value.empty()) {
    throw CLI::RequiredError(flag);
  }
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return 0;
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
    if (got < static_cast<std::streamsize>(sizeof(buf))) break;
  }
  return h;
}

std::map<std::string, double> read_score_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fv::ParseError("cannot open score file: " + path);
  std::map<std::string, double> scores;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw fv::ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const std::string id =
        j.contains("dialogue_id") ? j.at("dialogue_id").get<std::string>()
                                  : j.at("id").get<std::string>();
    if (!scores.emplace(id, j.at("score").get<double>()).second) {
      throw fv::ValidationError(path + ":" + std::to_string(lineno) +
                                ": duplicate score for \"" + id + "\"");
    }
  }
  if (scores.empty()) throw fv::ValidationError("empty score file: " + path);
  return scores;
}

void write_score_map(const std::map<std::string, double>& scores, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw fv::ParseError("cannot open output file: " + path);
  for (const auto& [id, v] : scores) {
    json j;
    j["dialogue_id"] = id;
    j["score"] = v;
    out << j.dump() << "\n";
  }
}

std::map<std::string, double> human_ratings(const fv::Corpus& corpus) {
  std::map<std::string, double> ratings;
  for (const auto& d : corpus.dialogues) {
    if (d.rating) ratings[d.id] = *d.rating;
  }
  if (ratings.empty()) throw fv::ValidationError("no rated dialogues in human corpus");
  return ratings;
}

// ---------------------------------------------------------------------------

int cmd_validate(const std::string& corpus_path) {
  auto report = fv::lint_corpus(corpus_path);
  for (const auto& line : report) std::cout << line << "\n";
  if (report.empty()) {
    std::cout << "ok: " << corpus_path << "\n";
    return 0;
  }
  return 1;
}

int cmd_segment(const std::string& in_path, const std::string& out_path) {
  fv::Corpus corpus = fv::load_raw_corpus(in_path, fv::CorpusRole::kEvaluationSet);
  fv::save_corpus(corpus, out_path);
  std::size_t segments = 0;
  for (const auto& d : corpus.dialogues) segments += d.segment_count();
  fv::log_line("segment", {{"dialogues", std::to_string(corpus.dialogues.size())},
                           {"segments", std::to_string(segments)},
                           {"out", out_path}});
  return 0;
}

int cmd_train_actlm(const std::string& corpus_path, const std::string& out_path,
                    const fv::ActLmConfig& cfg) {
  fv::Corpus corpus = fv::load_corpus(corpus_path, fv::CorpusRole::kRetrievalSet);
  fv::log_line("train-actlm", {{"dialogues", std::to_string(corpus.dialogues.size())},
                               {"layers", std::to_string(cfg.num_layers)},
                               {"hidden", std::to_string(cfg.hidden_dim)},
                               {"epochs", std::to_string(cfg.epochs)},
                               {"seed", std::to_string(cfg.seed)}});
  fv::ActLmModel model = fv::train_act_lm(corpus, cfg);
  for (std::size_t e = 0; e < model.epoch_losses().size(); ++e) {
    fv::log_line("train-actlm", {{"epoch", std::to_string(e + 1)},
                                 {"loss", std::to_string(model.epoch_losses()[e])}});
  }
  model.save(out_path);
  fv::log_line("train-actlm", {{"checkpoint", out_path}});
  return 0;
}

int cmd_eval_actlm(const std::string& model_path, const std::string& corpus_path,
                   double mask_prob, std::uint64_t seed) {
  fv::ActLmModel model = fv::ActLmModel::load(model_path);
  fv::Corpus corpus = fv::load_corpus(corpus_path, fv::CorpusRole::kEvaluationSet);
  const double acc = fv::masked_accuracy(model, corpus, mask_prob, seed);
  const double majority = fv::majority_baseline(corpus);
  json out;
  out["masked_accuracy"] = acc;
  out["majority_baseline"] = majority;
  out["advantage"] = acc - majority;
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_train_tagger(const std::string& corpus_path, const std::string& out_path,
                     const fv::TaggerConfig& cfg) {
  fv::Corpus corpus = fv::load_corpus(corpus_path, fv::CorpusRole::kRetrievalSet);
  bool degenerate = false;
  fv::TaggerModel model = fv::train_tagger(corpus, cfg, &degenerate);
  if (degenerate) {
    fv::log_line("train-tagger", {{"warning", "single-label-corpus"}});
  }
  const double train_acc = fv::tagger_accuracy(model, corpus);
  fv::log_line("train-tagger", {{"train_accuracy", std::to_string(train_acc)}});
  model.save(out_path);
  return 0;
}

int cmd_tag(const std::string& model_path, const std::string& corpus_path,
            const std::string& out_path) {
  fv::TaggerModel model = fv::TaggerModel::load(model_path);
  // Lax load: acts may be null here, that is the point of tagging.
  fv::Corpus corpus = fv::load_corpus(corpus_path, fv::CorpusRole::kEvaluationSet);
  std::ofstream out(out_path);
  if (!out) throw fv::ParseError("cannot open output file: " + out_path);
  std::size_t filled = 0;
  for (auto& d : corpus.dialogues) {
    json j = fv::dialogue_to_json(d);
    std::size_t ui = 0;
    for (auto& u : d.utterances) {
      std::size_t si = 0;
      for (auto& s : u.segments) {
        double confidence = 1.0;
        if (!s.act) {
          auto [label, dist] = model.tag_segment(s.text, static_cast<int>(si), u.speaker);
          s.act = label;
          confidence = dist[static_cast<std::size_t>(label)];
          j["utterances"][ui]["segments"][si]["act"] = std::string(fv::act_name(label));
          ++filled;
        }
        j["utterances"][ui]["segments"][si]["act_confidence"] = confidence;
        ++si;
      }
      ++ui;
    }
    out << j.dump() << "\n";
  }
  fv::log_line("tag", {{"filled", std::to_string(filled)}, {"out", out_path}});
  return 0;
}

int cmd_build_index(const std::string& corpus_path, const std::string& model_path,
                    const std::string& embeddings_path, const std::string& out_dir, int h, int l,
                    unsigned workers) {
  fv::Corpus corpus = fv::load_corpus(corpus_path, fv::CorpusRole::kRetrievalSet);
  fv::ActLmModel model = fv::ActLmModel::load(model_path);
  auto embeddings = fv::load_embeddings(embeddings_path);
  fv::TfidfVocabulary vocab = fv::build_tfidf(corpus);
  fv::log_line("build-index", {{"dialogues", std::to_string(corpus.dialogues.size())},
                               {"vocab", std::to_string(vocab.size())},
                               {"h", std::to_string(h)},
                               {"workers", std::to_string(workers)}});
  fv::RetrievalIndex index = fv::build_index(corpus, model, vocab, embeddings, h, l, workers);
  index.model_hash = hash_file(model_path);
  index.source_corpus = corpus_path;
  fv::save_index(index, out_dir);
  fv::log_line("build-index", {{"out", out_dir}});
  return 0;
}

int cmd_score(const std::string& index_dir, const std::string& corpus_path,
              const std::string& model_path, const std::string& embeddings_path,
              const std::string& ref_embeddings_path, const std::string& out_path,
              fv::AssessmentConfig cfg, fv::ScoreVariant variant, unsigned workers) {
  const fv::AssessmentConfig eff = fv::apply_variant(cfg, variant);
  eff.validate();
  const bool need_act = eff.w > 0.0 || eff.k_act > 0;
  const bool need_query_emb = eff.k_content > 0 || eff.w < 1.0;
  const bool need_ref_emb = eff.w < 1.0;

  fv::RetrievalIndex index = fv::load_index(index_dir);
  fv::Corpus corpus = fv::load_corpus(corpus_path, fv::CorpusRole::kEvaluationSet);

  std::optional<fv::ActLmModel> model;
  if (need_act) {
    require_path(model_path, "--model");
    model.emplace(fv::ActLmModel::load(model_path));
    const std::uint64_t mh = hash_file(model_path);
    if (index.model_hash != 0 && mh != index.model_hash) {
      fv::log_line("score", {{"warning", "model-hash-mismatch"},
                             {"hint", "index was built with a different act model"}});
    }
  }
  std::map<std::string, fv::TokenEmbeddings> query_embs;
  if (need_query_emb) {
    require_path(embeddings_path, "--embeddings");
    query_embs = fv::load_embeddings(embeddings_path);
  }
  std::map<std::string, fv::TokenEmbeddings> ref_embs;
  if (need_ref_emb) {
    const std::string path = ref_embeddings_path.empty() ? embeddings_path : ref_embeddings_path;
    require_path(path, "--ref-embeddings");
    ref_embs = fv::load_embeddings(path);
  }

  const std::size_t n = corpus.dialogues.size();
  std::vector<fv::ScoreBreakdown> results(n);
  auto score_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const fv::Dialogue& d = corpus.dialogues[i];
      const fv::TokenEmbeddings* emb = nullptr;
      if (need_query_emb) {
        auto it = query_embs.find(d.id);
        if (it == query_embs.end()) {
          throw fv::ValidationError("score: missing embeddings for dialogue \"" + d.id + "\"");
        }
        emb = &it->second;
      }
      fv::QueryFeatures q =
          fv::make_query_features(d, model ? &*model : nullptr, index, emb, eff);
      results[i] = fv::score_variant(q, emb, index, ref_embs, cfg, variant);
    }
  };
  if (workers <= 1 || n < 2) {
    score_range(0, n);
  } else {
    const unsigned nw = std::min<unsigned>(workers, static_cast<unsigned>(n));
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(nw);
    const std::size_t chunk = (n + nw - 1) / nw;
    for (unsigned w = 0; w < nw; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin >= end) break;
      threads.emplace_back([&, w, begin, end] {
        try {
          score_range(begin, end);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::ofstream out(out_path);
  if (!out) throw fv::ParseError("cannot open output file: " + out_path);
  for (const auto& r : results) out << fv::breakdown_to_json(r).dump() << "\n";
  fv::log_line("score", {{"dialogues", std::to_string(n)},
                         {"variant", fv::variant_name(variant)},
                         {"out", out_path}});
  return 0;
}

int cmd_benchmark(const std::vector<std::string>& score_specs, const std::string& human_path,
                  const std::string& csv_path, const std::string& table_path) {
  std::map<std::string, std::map<std::string, double>> scores;
  for (const auto& spec : score_specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) {
      throw fv::ValidationError("bad --scores entry (want name=path): " + spec);
    }
    scores[spec.substr(0, eq)] = read_score_file(spec.substr(eq + 1));
  }
  fv::Corpus human_corpus = fv::load_corpus(human_path, fv::CorpusRole::kEvaluationSet);
  auto human = human_ratings(human_corpus);
  fv::CorrelationReport report = fv::run_benchmark(scores, human);
  const std::string table = fv::report_to_table(report);
  std::cout << table;
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw fv::ParseError("cannot open output file: " + csv_path);
    out << fv::report_to_csv(report);
  }
  if (!table_path.empty()) {
    std::ofstream out(table_path);
    if (!out) throw fv::ParseError("cannot open output file: " + table_path);
    out << table;
  }
  return 0;
}

int cmd_fuse(const std::string& a_path, const std::string& b_path, const std::string& mode,
             const std::string& out_path) {
  auto fused = fv::fuse_metrics(read_score_file(a_path), read_score_file(b_path),
                                fv::parse_fuse_mode(mode));
  write_score_map(fused, out_path);
  fv::log_line("fuse", {{"mode", mode}, {"out", out_path}});
  return 0;
}

int cmd_export_features(const std::string& index_dir, const std::string& out_path,
                        const std::string& kinds_csv) {
  fv::RetrievalIndex index = fv::load_index(index_dir);
  std::ofstream out(out_path);
  if (!out) throw fv::ParseError("cannot open output file: " + out_path);
  out << std::setprecision(9);
  std::vector<std::string> kinds;
  {
    std::stringstream ss(kinds_csv);
    std::string kind;
    while (std::getline(ss, kind, ',')) {
      if (kind != "act" && kind != "content" && kind != "tfidf") {
        throw fv::ValidationError("unknown feature kind: " + kind);
      }
      kinds.push_back(kind);
    }
  }
  for (const auto& e : index.entries) {
    for (const auto& kind : kinds) {
      out << e.id << "," << kind;
      if (kind == "act") {
        for (double v : e.act_feature) out << "," << v;
      } else if (kind == "content") {
        for (double v : e.content_feature) out << "," << v;
      } else {
        std::vector<double> dense(e.tfidf.dim, 0.0);
        for (const auto& [col, w] : e.tfidf.entries) dense[col] = w;
        for (double v : dense) out << "," << v;
      }
      out << "\n";
    }
  }
  fv::log_line("export-features", {{"entries", std::to_string(index.entries.size())},
                                   {"out", out_path}});
  return 0;
}

std::string find_config_arg(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) return argv[i + 1];
    if (arg.rfind("--config=", 0) == 0) return arg.substr(9);
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  try {
    RunConfig run;
    const std::string config_path = find_config_arg(argc, argv);
    if (!config_path.empty()) run = load_run_config(config_path);

    CLI::App app{"consensus-based dialogue evaluation with segment act flows"};
    app.set_version_flag("--version", std::string("floweval ") + fv::kVersion +
                                          " (index-format " +
                                          std::to_string(fv::kIndexFormatVersion) + ")");
    std::string config_opt = config_path;  // already applied; registered so parsing accepts it
    app.add_option("--config", config_opt, "JSON config file with defaults (flags win)");
    app.require_subcommand(1);

    // validate
    auto* validate = app.add_subcommand("validate", "lint a dialogues.jsonl corpus");
    std::string v_corpus = path_default(run, "corpus");
    validate->add_option("--corpus", v_corpus, "corpus to lint");

    // segment
    auto* segment = app.add_subcommand("segment", "split raw utterances into segments");
    std::string s_in = path_default(run, "raw_corpus"), s_out = path_default(run, "segmented");
    segment->add_option("--in", s_in, "raw corpus (utterances carry \"text\")");
    segment->add_option("--out", s_out, "segmented dialogues.jsonl");

    // train-actlm
    auto* train_actlm = app.add_subcommand("train-actlm", "train the masked act model");
    std::string ta_corpus = path_default(run, "corpus"), ta_out = path_default(run, "actlm");
    fv::ActLmConfig actlm_cfg = run.act_lm;
    actlm_cfg.seed = run.seed;
    bool no_truncate = !actlm_cfg.truncate_long_flows;
    train_actlm->add_option("--corpus", ta_corpus, "fully labeled training corpus");
    train_actlm->add_option("--out", ta_out, "checkpoint path");
    train_actlm->add_option("--layers", actlm_cfg.num_layers, "encoder blocks");
    train_actlm->add_option("--heads", actlm_cfg.num_heads, "attention heads");
    train_actlm->add_option("--dim", actlm_cfg.hidden_dim, "hidden size");
    train_actlm->add_option("--ffn-dim", actlm_cfg.ffn_dim, "feed-forward size (0 = 4*dim)");
    train_actlm->add_option("--max-seq-len", actlm_cfg.max_seq_len, "maximum flow length");
    train_actlm->add_option("--mask-prob", actlm_cfg.mask_prob, "masking probability");
    train_actlm->add_option("--lr", actlm_cfg.learning_rate, "learning rate");
    train_actlm->add_option("--batch-size", actlm_cfg.batch_size, "sequences per update");
    train_actlm->add_option("--epochs", actlm_cfg.epochs, "training epochs");
    train_actlm->add_option("--seed", actlm_cfg.seed, "random seed");
    train_actlm->add_flag("--no-truncate", no_truncate, "reject over-long flows instead");

    // eval-actlm
    auto* eval_actlm = app.add_subcommand("eval-actlm", "masked accuracy vs majority baseline");
    std::string ea_model = path_default(run, "actlm"), ea_corpus = path_default(run, "corpus");
    double ea_mask_prob = run.act_lm.mask_prob;
    std::uint64_t ea_seed = run.seed;
    eval_actlm->add_option("--model", ea_model, "act-lm checkpoint");
    eval_actlm->add_option("--corpus", ea_corpus, "fully labeled eval corpus");
    eval_actlm->add_option("--mask-prob", ea_mask_prob, "masking probability");
    eval_actlm->add_option("--seed", ea_seed, "masking seed");

    // train-tagger
    auto* train_tagger_cmd = app.add_subcommand("train-tagger", "train the baseline act tagger");
    std::string tt_corpus = path_default(run, "corpus"), tt_out = path_default(run, "tagger");
    fv::TaggerConfig tagger_cfg = run.tagger;
    tagger_cfg.seed = run.seed;
    train_tagger_cmd->add_option("--corpus", tt_corpus, "labeled corpus");
    train_tagger_cmd->add_option("--out", tt_out, "model path");
    train_tagger_cmd->add_option("--hash-bits", tagger_cfg.hash_bits, "feature space 2^bits");
    train_tagger_cmd->add_option("--lr", tagger_cfg.learning_rate, "learning rate");
    train_tagger_cmd->add_option("--epochs", tagger_cfg.epochs, "training epochs");
    train_tagger_cmd->add_option("--seed", tagger_cfg.seed, "random seed");

    // tag
    auto* tag = app.add_subcommand("tag", "fill null acts with tagger predictions");
    std::string tg_model = path_default(run, "tagger"), tg_corpus = path_default(run, "corpus"),
                tg_out = path_default(run, "tagged");
    tag->add_option("--model", tg_model, "tagger model");
    tag->add_option("--corpus", tg_corpus, "corpus with null acts");
    tag->add_option("--out", tg_out, "tagged dialogues.jsonl");

    // build-index
    auto* build = app.add_subcommand("build-index", "build the pseudo-reference index");
    std::string bi_corpus = path_default(run, "corpus"), bi_model = path_default(run, "actlm"),
                bi_emb = path_default(run, "embeddings"), bi_out = path_default(run, "index");
    int bi_h = run.assessment.h, bi_l = run.assessment.l;
    unsigned bi_workers = 1;
    build->add_option("--corpus", bi_corpus, "retrieval corpus (fully labeled)");
    build->add_option("--model", bi_model, "act-lm checkpoint");
    build->add_option("--embeddings", bi_emb, "token embeddings for the corpus");
    build->add_option("--out", bi_out, "index directory");
    build->add_option("--h", bi_h, "act-model layer for features");
    build->add_option("--l", bi_l, "content-encoder layer (metadata)");
    build->add_option("--workers", bi_workers, "parallel workers");

    // score
    auto* score = app.add_subcommand("score", "score dialogues against pseudo-references");
    std::string sc_index = path_default(run, "index"), sc_corpus = path_default(run, "corpus"),
                sc_model = path_default(run, "actlm"), sc_emb = path_default(run, "embeddings"),
                sc_ref_emb = path_default(run, "ref_embeddings"),
                sc_out = path_default(run, "scores");
    fv::AssessmentConfig assess_cfg = run.assessment;
    std::string sc_variant = "full";
    unsigned sc_workers = 1;
    score->add_option("--index", sc_index, "index directory");
    score->add_option("--corpus", sc_corpus, "dialogues to score (fully labeled)");
    score->add_option("--model", sc_model, "act-lm checkpoint (needed unless w=0 and ka=0)");
    score->add_option("--embeddings", sc_emb, "token embeddings for the scored dialogues");
    score->add_option("--ref-embeddings", sc_ref_emb,
                      "token embeddings for the retrieval corpus (defaults to --embeddings)");
    score->add_option("--out", sc_out, "output scores JSONL");
    score->add_option("--variant", sc_variant, "full | seg | consensus-bertscore");
    score->add_option("--w", assess_cfg.w, "act/content mixing weight");
    score->add_option("--ka", assess_cfg.k_act, "act-channel neighbors");
    score->add_option("--kc", assess_cfg.k_content, "content-channel neighbors");
    score->add_option("--h", assess_cfg.h, "act-model layer");
    score->add_option("--bleu-max-order", assess_cfg.bleu_max_order, "BLEU order cap");
    score->add_flag("--normalize-f-act", assess_cfg.normalize_f_act,
                    "scale the act score into [0, 1]");
    score->add_flag("--exclude-self", assess_cfg.exclude_self,
                    "drop the query id from the candidate pool");
    score->add_option("--workers", sc_workers, "parallel workers");

    // benchmark
    auto* benchmark = app.add_subcommand("benchmark", "correlate metric scores with ratings");
    std::vector<std::string> bm_scores;
    std::string bm_human = path_default(run, "human"), bm_csv = path_default(run, "report_csv"),
                bm_table = path_default(run, "report_table");
    benchmark->add_option("--scores", bm_scores, "metric score files as name=path")
        ->take_all();
    benchmark->add_option("--human", bm_human, "rated dialogues.jsonl");
    benchmark->add_option("--out-csv", bm_csv, "report CSV path");
    benchmark->add_option("--out-table", bm_table, "report text table path");

    // fuse
    auto* fuse = app.add_subcommand("fuse", "average two metrics over a shared id set");
    std::string fu_a = path_default(run, "fuse_a"), fu_b = path_default(run, "fuse_b"),
                fu_out = path_default(run, "fused");
    std::string fu_mode = "raw";
    fuse->add_option("--a", fu_a, "first score file");
    fuse->add_option("--b", fu_b, "second score file");
    fuse->add_option("--mode", fu_mode, "raw | znorm");
    fuse->add_option("--out", fu_out, "fused scores JSONL");

    // export-features
    auto* export_cmd = app.add_subcommand("export-features", "dump index features as CSV");
    std::string ex_index = path_default(run, "index"), ex_out = path_default(run, "features_csv");
    std::string ex_kinds = "act,content";
    export_cmd->add_option("--index", ex_index, "index directory");
    export_cmd->add_option("--out", ex_out, "CSV output path");
    export_cmd->add_option("--kinds", ex_kinds, "comma list of act,content,tfidf");

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      app.exit(e);
      return 2;
    }

    if (validate->parsed()) {
      require_path(v_corpus, "--corpus");
      return cmd_validate(v_corpus);
    }
    if (segment->parsed()) {
      require_path(s_in, "--in");
      require_path(s_out, "--out");
      return cmd_segment(s_in, s_out);
    }
    if (train_actlm->parsed()) {
      require_path(ta_corpus, "--corpus");
      require_path(ta_out, "--out");
      actlm_cfg.truncate_long_flows = !no_truncate;
      return cmd_train_actlm(ta_corpus, ta_out, actlm_cfg);
    }
    if (eval_actlm->parsed()) {
      require_path(ea_model, "--model");
      require_path(ea_corpus, "--corpus");
      return cmd_eval_actlm(ea_model, ea_corpus, ea_mask_prob, ea_seed);
    }
    if (train_tagger_cmd->parsed()) {
      require_path(tt_corpus, "--corpus");
      require_path(tt_out, "--out");
      return cmd_train_tagger(tt_corpus, tt_out, tagger_cfg);
    }
    if (tag->parsed()) {
      require_path(tg_model, "--model");
      require_path(tg_corpus, "--corpus");
      require_path(tg_out, "--out");
      return cmd_tag(tg_model, tg_corpus, tg_out);
    }
    if (build->parsed()) {
      require_path(bi_corpus, "--corpus");
      require_path(bi_model, "--model");
      require_path(bi_emb, "--embeddings");
      require_path(bi_out, "--out");
      return cmd_build_index(bi_corpus, bi_model, bi_emb, bi_out, bi_h, bi_l, bi_workers);
    }
    if (score->parsed()) {
      require_path(sc_index, "--index");
      require_path(sc_corpus, "--corpus");
      require_path(sc_out, "--out");
      return cmd_score(sc_index, sc_corpus, sc_model, sc_emb, sc_ref_emb, sc_out, assess_cfg,
                       fv::parse_variant(sc_variant), sc_workers);
    }
    if (benchmark->parsed()) {
      if (bm_scores.empty()) throw CLI::RequiredError("--scores");
      require_path(bm_human, "--human");
      return cmd_benchmark(bm_scores, bm_human, bm_csv, bm_table);
    }
    if (fuse->parsed()) {
      require_path(fu_a, "--a");
      require_path(fu_b, "--b");
      require_path(fu_out, "--out");
      return cmd_fuse(fu_a, fu_b, fu_mode, fu_out);
    }
    if (export_cmd->parsed()) {
      require_path(ex_index, "--index");
      require_path(ex_out, "--out");
      return cmd_export_features(ex_index, ex_out, ex_kinds);
    }
    std::cerr << app.help();
    return 2;
  } catch (const CLI::RequiredError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
