#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "floweval/acts.hpp"
#include "floweval/dialogue.hpp"
#include "floweval/errors.hpp"

namespace floweval {

struct TaggerConfig {
  int hash_bits = 18;  // feature space 2^hash_bits, signed hashing
  double learning_rate = 0.1;
  int epochs = 5;
  std::uint64_t seed = 1;

  std::size_t dim() const { return std::size_t{1} << hash_bits; }
  void validate() const {
    if (hash_bits < 4 || hash_bits > 26) {
      throw ValidationError("tagger config: hash_bits out of range [4, 26]");
    }
    if (learning_rate <= 0.0 || epochs < 1) {
      throw ValidationError("tagger config: bad training hyperparameters");
    }
  }
};

inline void to_json(nlohmann::json& j, const TaggerConfig& c) {
  j = {{"hash_bits", c.hash_bits},
       {"learning_rate", c.learning_rate},
       {"epochs", c.epochs},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TaggerConfig& c) {
  TaggerConfig defaults;
  c.hash_bits = j.value("hash_bits", defaults.hash_bits);
  c.learning_rate = j.value("learning_rate", defaults.learning_rate);
  c.epochs = j.value("epochs", defaults.epochs);
  c.seed = j.value("seed", defaults.seed);
}

namespace detail {

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// One hashed feature: column index plus a hash-determined sign.
struct HashedFeature {
  std::uint32_t index;
  double value;
};

// Lowercase word tokens; each punctuation character is its own token so
// sentence-final "?" and "!" stay visible to the classifier.
inline std::vector<std::string> tagger_tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      if (!cur.empty()) {
        tokens.push_back(cur);
        cur.clear();
      }
      if (!std::isspace(c)) tokens.push_back(std::string(1, ch));
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

}  // namespace detail

// Segment features: word unigrams and bigrams, the segment's index within
// its utterance (capped), and speaker parity.
inline std::vector<detail::HashedFeature> tagger_features(const std::string& text,
                                                          int segment_index, int speaker,
                                                          int hash_bits) {
  const std::uint64_t mask = (std::uint64_t{1} << hash_bits) - 1;
  std::vector<std::string> raw;
  const auto tokens = detail::tagger_tokenize(text);
  raw.reserve(tokens.size() * 2 + 2);
  for (const auto& t : tokens) raw.push_back("u:" + t);
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    raw.push_back("b:" + tokens[i] + "_" + tokens[i + 1]);
  }
  raw.push_back("pos:" + std::to_string(std::min(segment_index, 5)));
  raw.push_back("spk:" + std::to_string(speaker == 1 ? 1 : 0));

  std::vector<detail::HashedFeature> features;
  features.reserve(raw.size());
  for (const auto& f : raw) {
    const std::uint64_t h = detail::fnv1a64(f);
    features.push_back({static_cast<std::uint32_t>(h & mask), (h >> 63) ? -1.0 : 1.0});
  }
  return features;
}

class TaggerModel {
 public:
  explicit TaggerModel(const TaggerConfig& cfg)
      : cfg_(cfg), weights_(static_cast<std::size_t>(kNumActs) * cfg.dim(), 0.0),
        bias_(kNumActs, 0.0) {
    cfg_.validate();
  }

  const TaggerConfig& config() const { return cfg_; }
  std::vector<double>& weights() { return weights_; }
  std::vector<double>& bias() { return bias_; }

  std::vector<double> distribution(const std::string& text, int segment_index,
                                   int speaker) const {
    if (text.empty() || has_only_whitespace(text)) {
      throw ValidationError("tag_segment: empty text");
    }
    const auto features = tagger_features(text, segment_index, speaker, cfg_.hash_bits);
    std::vector<double> z(bias_);
    for (const auto& f : features) {
      for (int c = 0; c < kNumActs; ++c) {
        z[static_cast<std::size_t>(c)] +=
            weights_[static_cast<std::size_t>(c) * cfg_.dim() + f.index] * f.value;
      }
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0;
    for (auto& v : z) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : z) v /= sum;
    return z;
  }

  // Argmax label with ties broken by the declared tagset order.
  std::pair<SegmentAct, std::vector<double>> tag_segment(const std::string& text,
                                                         int segment_index, int speaker) const {
    auto dist = distribution(text, segment_index, speaker);
    int best = 0;
    for (int a = 1; a < kNumActs; ++a) {
      if (dist[static_cast<std::size_t>(a)] > dist[static_cast<std::size_t>(best)]) best = a;
    }
    return {static_cast<SegmentAct>(best), std::move(dist)};
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open tagger model for writing: " + path);
    nlohmann::json header;
    header["config"] = cfg_;
    const std::string magic = "FLOWEVAL-TAGGER-v1\n";
    const std::string hs = header.dump();
    const std::uint64_t hlen = hs.size();
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.write(reinterpret_cast<const char*>(weights_.data()),
              static_cast<std::streamsize>(weights_.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(bias_.data()),
              static_cast<std::streamsize>(bias_.size() * sizeof(double)));
    if (!out) throw ParseError("failed writing tagger model: " + path);
  }

  static TaggerModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open tagger model: " + path);
    const std::string magic = "FLOWEVAL-TAGGER-v1\n";
    std::string got(magic.size(), '\0');
    in.read(got.data(), static_cast<std::streamsize>(magic.size()));
    if (!in || got != magic) throw ParseError("not a tagger model: " + path);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw ParseError("truncated tagger header: " + path);
    nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
    if (header.is_discarded()) throw ParseError("bad tagger header: " + path);
    TaggerModel model(header.at("config").get<TaggerConfig>());
    in.read(reinterpret_cast<char*>(model.weights_.data()),
            static_cast<std::streamsize>(model.weights_.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(model.bias_.data()),
            static_cast<std::streamsize>(model.bias_.size() * sizeof(double)));
    if (!in) throw ParseError("truncated tagger data: " + path);
    return model;
  }

 private:
  TaggerConfig cfg_;
  std::vector<double> weights_;  // kNumActs x dim, row-major
  std::vector<double> bias_;
};

namespace detail {

struct TaggerExample {
  std::string text;
  int segment_index;
  int speaker;
  int label;
};

inline std::vector<TaggerExample> tagger_examples(const Corpus& corpus) {
  std::vector<TaggerExample> examples;
  for (const auto& d : corpus.dialogues) {
    for (const auto& u : d.utterances) {
      for (std::size_t si = 0; si < u.segments.size(); ++si) {
        const Segment& s = u.segments[si];
        if (!s.act) {
          throw ValidationError("train_tagger: unlabeled segment in dialogue \"" + d.id + "\"");
        }
        examples.push_back({s.text, static_cast<int>(si), u.speaker, static_cast<int>(*s.act)});
      }
    }
  }
  if (examples.empty()) throw ValidationError("train_tagger: empty corpus");
  return examples;
}

}  // namespace detail

// Softmax cross-entropy SGD over hashed features; deterministic per seed.
// Degenerate single-label corpora get a trivial model that always predicts
// that label (a warning case, not an error).
inline TaggerModel train_tagger(const Corpus& corpus, const TaggerConfig& cfg,
                                bool* degenerate = nullptr) {
  cfg.validate();
  auto examples = detail::tagger_examples(corpus);
  std::vector<int> label_seen(kNumActs, 0);
  for (const auto& e : examples) label_seen[static_cast<std::size_t>(e.label)] = 1;
  const int distinct = std::accumulate(label_seen.begin(), label_seen.end(), 0);
  TaggerModel model(cfg);
  if (degenerate) *degenerate = distinct < 2;
  if (distinct < 2) {
    model.bias()[static_cast<std::size_t>(examples.front().label)] = 1.0;
    return model;
  }

  const std::size_t dim = cfg.dim();
  auto& w = model.weights();
  auto& b = model.bias();
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> z(kNumActs);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      const auto& e = examples[idx];
      const auto features = tagger_features(e.text, e.segment_index, e.speaker, cfg.hash_bits);
      for (int c = 0; c < kNumActs; ++c) z[static_cast<std::size_t>(c)] = b[static_cast<std::size_t>(c)];
      for (const auto& f : features) {
        for (int c = 0; c < kNumActs; ++c) {
          z[static_cast<std::size_t>(c)] += w[static_cast<std::size_t>(c) * dim + f.index] * f.value;
        }
      }
      const double mx = *std::max_element(z.begin(), z.end());
      double sum = 0;
      for (auto& v : z) {
        v = std::exp(v - mx);
        sum += v;
      }
      for (auto& v : z) v /= sum;
      for (int c = 0; c < kNumActs; ++c) {
        const double grad = z[static_cast<std::size_t>(c)] - (c == e.label ? 1.0 : 0.0);
        if (grad == 0.0) continue;
        b[static_cast<std::size_t>(c)] -= cfg.learning_rate * grad;
        for (const auto& f : features) {
          w[static_cast<std::size_t>(c) * dim + f.index] -= cfg.learning_rate * grad * f.value;
        }
      }
    }
  }
  return model;
}

inline double tagger_accuracy(const TaggerModel& model, const Corpus& corpus) {
  long long correct = 0, total = 0;
  for (const auto& d : corpus.dialogues) {
    for (const auto& u : d.utterances) {
      for (std::size_t si = 0; si < u.segments.size(); ++si) {
        const Segment& s = u.segments[si];
        if (!s.act) {
          throw ValidationError("tagger_accuracy: unlabeled segment in dialogue \"" + d.id + "\"");
        }
        auto [label, dist] = model.tag_segment(s.text, static_cast<int>(si), u.speaker);
        if (label == *s.act) ++correct;
        ++total;
      }
    }
  }
  if (total == 0) throw ValidationError("tagger_accuracy: empty corpus");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace floweval
