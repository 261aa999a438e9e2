#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "floweval/acts.hpp"
#include "floweval/dialogue.hpp"
#include "floweval/errors.hpp"
#include "floweval/mat.hpp"

namespace floweval {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// Masked-act model hyperparameters. The architecture defaults (4 layers,
// 4 heads, hidden 256) are the reference configuration; everything is
// overridable for desk-scale runs.
struct ActLmConfig {
  int num_layers = 4;
  int num_heads = 4;
  int hidden_dim = 256;
  int ffn_dim = 0;  // 0 selects 4 * hidden_dim
  int max_seq_len = 128;
  double mask_prob = 0.15;
  double learning_rate = 1e-3;
  int batch_size = 32;
  int epochs = 5;
  std::uint64_t seed = 1;
  bool truncate_long_flows = true;  // keep the most recent acts when too long

  int effective_ffn_dim() const { return ffn_dim > 0 ? ffn_dim : 4 * hidden_dim; }

  void validate() const {
    if (num_layers < 1 || num_heads < 1 || hidden_dim < 1) {
      throw ValidationError("act_lm config: layers, heads, hidden_dim must be positive");
    }
    if (hidden_dim % num_heads != 0) {
      throw ValidationError("act_lm config: hidden_dim must be divisible by num_heads");
    }
    if (max_seq_len < 1) throw ValidationError("act_lm config: max_seq_len must be positive");
    if (!(mask_prob > 0.0 && mask_prob < 1.0)) {
      throw ValidationError("act_lm config: mask_prob must be in (0, 1)");
    }
    if (batch_size < 1 || epochs < 0 || learning_rate <= 0.0) {
      throw ValidationError("act_lm config: bad training hyperparameters");
    }
  }
};

inline void to_json(nlohmann::json& j, const ActLmConfig& c) {
  j = {{"num_layers", c.num_layers},   {"num_heads", c.num_heads},
       {"hidden_dim", c.hidden_dim},   {"ffn_dim", c.ffn_dim},
       {"max_seq_len", c.max_seq_len}, {"mask_prob", c.mask_prob},
       {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
       {"epochs", c.epochs},           {"seed", c.seed},
       {"truncate_long_flows", c.truncate_long_flows}};
}

inline void from_json(const nlohmann::json& j, ActLmConfig& c) {
  ActLmConfig defaults;
  c.num_layers = j.value("num_layers", defaults.num_layers);
  c.num_heads = j.value("num_heads", defaults.num_heads);
  c.hidden_dim = j.value("hidden_dim", defaults.hidden_dim);
  c.ffn_dim = j.value("ffn_dim", defaults.ffn_dim);
  c.max_seq_len = j.value("max_seq_len", defaults.max_seq_len);
  c.mask_prob = j.value("mask_prob", defaults.mask_prob);
  c.learning_rate = j.value("learning_rate", defaults.learning_rate);
  c.batch_size = j.value("batch_size", defaults.batch_size);
  c.epochs = j.value("epochs", defaults.epochs);
  c.seed = j.value("seed", defaults.seed);
  c.truncate_long_flows = j.value("truncate_long_flows", defaults.truncate_long_flows);
}

// Token ids: 4 specials then the 11 acts in tagset order.
inline constexpr int kPadToken = 0;
inline constexpr int kMaskToken = 1;
inline constexpr int kBosToken = 2;
inline constexpr int kEosToken = 3;
inline constexpr int kActTokenBase = 4;
inline constexpr int kVocabSize = kActTokenBase + kNumActs;

inline int act_token(SegmentAct a) { return kActTokenBase + static_cast<int>(a); }

// Pooled act feature of a dialogue: coordinate-wise max over the layer-h
// hidden states.
struct ActFeature {
  std::vector<double> vector;
  int layer = 0;
};

// Named parameter tensor with a gradient accumulator.
struct Tensor {
  std::string name;
  std::size_t rows = 0, cols = 0;
  std::vector<double> w, g;

  Tensor() = default;
  Tensor(std::string n, std::size_t r, std::size_t c)
      : name(std::move(n)), rows(r), cols(c), w(r * c, 0.0), g(r * c, 0.0) {}
  std::size_t size() const { return w.size(); }
};

// One training/eval example: token sequence with masking already applied,
// plus the positions and original tokens to predict.
struct MaskedSequence {
  std::vector<int> tokens;      // BOS acts... EOS
  std::vector<int> types;       // speaker parity, 0 at BOS/EOS
  std::vector<int> target_pos;  // indices into tokens
  std::vector<int> target_tok;  // original act tokens at those positions
};

namespace detail {

inline double rand_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
}

inline double rand_normal(std::mt19937_64& rng) {
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double u2 = rand_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
  return cdf + x * pdf;
}

inline constexpr double kLayerNormEps = 1e-5;

}  // namespace detail

// Truncates a flow to the last `max_len` acts (evaluation weight falls on
// how the dialogue develops, so the most recent acts are kept).
inline ActFlow truncate_flow(const ActFlow& flow, std::size_t max_len) {
  if (flow.size() <= max_len) return flow;
  ActFlow out;
  out.acts.assign(flow.acts.end() - max_len, flow.acts.end());
  out.speakers.assign(flow.speakers.end() - max_len, flow.speakers.end());
  return out;
}

class ActLmModel {
 public:
  explicit ActLmModel(const ActLmConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = static_cast<std::size_t>(cfg_.hidden_dim);
    const std::size_t f = static_cast<std::size_t>(cfg_.effective_ffn_dim());
    const std::size_t p = static_cast<std::size_t>(cfg_.max_seq_len) + 2;  // room for BOS/EOS
    params_.emplace_back("tok_emb", kVocabSize, d);
    params_.emplace_back("pos_emb", p, d);
    params_.emplace_back("type_emb", 2, d);
    for (int layer = 0; layer < cfg_.num_layers; ++layer) {
      const std::string pfx = "layer" + std::to_string(layer) + ".";
      params_.emplace_back(pfx + "wq", d, d);
      params_.emplace_back(pfx + "bq", 1, d);
      params_.emplace_back(pfx + "wk", d, d);
      params_.emplace_back(pfx + "bk", 1, d);
      params_.emplace_back(pfx + "wv", d, d);
      params_.emplace_back(pfx + "bv", 1, d);
      params_.emplace_back(pfx + "wo", d, d);
      params_.emplace_back(pfx + "bo", 1, d);
      params_.emplace_back(pfx + "ln1_g", 1, d);
      params_.emplace_back(pfx + "ln1_b", 1, d);
      params_.emplace_back(pfx + "w1", d, f);
      params_.emplace_back(pfx + "b1", 1, f);
      params_.emplace_back(pfx + "w2", f, d);
      params_.emplace_back(pfx + "b2", 1, d);
      params_.emplace_back(pfx + "ln2_g", 1, d);
      params_.emplace_back(pfx + "ln2_b", 1, d);
    }
    params_.emplace_back("out_w", d, kVocabSize);
    params_.emplace_back("out_b", 1, kVocabSize);
    init_weights();
  }

  const ActLmConfig& config() const { return cfg_; }
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<double>& epoch_losses() const { return epoch_losses_; }
  void set_epoch_losses(std::vector<double> losses) { epoch_losses_ = std::move(losses); }

  void zero_grads() {
    for (auto& t : params_) std::fill(t.g.begin(), t.g.end(), 0.0);
  }

  // Unmasked input sequence for a flow: BOS + act tokens + EOS, speaker
  // parity as the type channel (type 0 at BOS/EOS).
  MaskedSequence build_sequence(const ActFlow& flow) const {
    if (flow.acts.empty()) throw ValidationError("act_lm: empty act flow");
    if (flow.acts.size() > static_cast<std::size_t>(cfg_.max_seq_len)) {
      throw ValidationError("act_lm: flow of length " + std::to_string(flow.acts.size()) +
                            " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
    }
    MaskedSequence seq;
    seq.tokens.push_back(kBosToken);
    seq.types.push_back(0);
    for (std::size_t i = 0; i < flow.acts.size(); ++i) {
      seq.tokens.push_back(act_token(flow.acts[i]));
      seq.types.push_back(flow.speakers[i] == 1 ? 1 : 0);
    }
    seq.tokens.push_back(kEosToken);
    seq.types.push_back(0);
    return seq;
  }

  // Hidden states after encoder block h (post layer norm), one row per
  // segment; BOS/EOS rows are dropped.
  Mat encode_flow(const ActFlow& flow, int layer_h) const {
    check_layer(layer_h);
    MaskedSequence seq = build_sequence(flow);
    ForwardCache cache;
    forward(seq.tokens, seq.types, layer_h, cache);
    const Mat& full = cache.layers.back().out;
    Mat hidden(flow.acts.size(), full.cols);
    for (std::size_t i = 0; i < flow.acts.size(); ++i) {
      std::copy(full.row(i + 1), full.row(i + 1) + full.cols, hidden.row(i));
    }
    return hidden;
  }

  // Max-pool of encode_flow along the sequence dimension.
  ActFeature act_feature(const ActFlow& flow, int layer_h) const {
    Mat hidden = encode_flow(flow, layer_h);
    ActFeature feat;
    feat.layer = layer_h;
    feat.vector.assign(hidden.row(0), hidden.row(0) + hidden.cols);
    for (std::size_t i = 1; i < hidden.rows; ++i) {
      const double* row = hidden.row(i);
      for (std::size_t j = 0; j < hidden.cols; ++j) {
        if (row[j] > feat.vector[j]) feat.vector[j] = row[j];
      }
    }
    return feat;
  }

  // Distributions over the 11 acts at the requested (masked) positions.
  std::vector<std::vector<double>> predict_masked(const ActFlow& flow,
                                                  const std::vector<int>& positions) const {
    MaskedSequence seq = build_sequence(flow);
    for (int p : positions) {
      if (p < 0 || static_cast<std::size_t>(p) >= flow.acts.size()) {
        throw ValidationError("predict_masked: position " + std::to_string(p) +
                              " out of range for flow of length " +
                              std::to_string(flow.acts.size()));
      }
      seq.tokens[static_cast<std::size_t>(p) + 1] = kMaskToken;  // +1 skips BOS
    }
    ForwardCache cache;
    forward(seq.tokens, seq.types, cfg_.num_layers, cache);
    const Mat& out = cache.layers.back().out;
    const Tensor& out_w = params_[out_w_index()];
    const Tensor& out_b = params_[out_w_index() + 1];
    std::vector<std::vector<double>> result;
    result.reserve(positions.size());
    for (int p : positions) {
      const double* row = out.row(static_cast<std::size_t>(p) + 1);
      std::vector<double> logits(kNumActs);
      for (int a = 0; a < kNumActs; ++a) {
        const int tok = kActTokenBase + a;
        double z = out_b.w[static_cast<std::size_t>(tok)];
        for (std::size_t j = 0; j < out_w.rows; ++j) {
          z += row[j] * out_w.w[j * out_w.cols + static_cast<std::size_t>(tok)];
        }
        logits[static_cast<std::size_t>(a)] = z;
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double sum = 0;
      for (auto& z : logits) {
        z = std::exp(z - mx);
        sum += z;
      }
      for (auto& z : logits) z /= sum;
      result.push_back(std::move(logits));
    }
    return result;
  }

  // Mean masked cross-entropy over the batch; accumulates parameter
  // gradients when with_grads is set.
  double masked_loss(const std::vector<MaskedSequence>& batch, bool with_grads) {
    std::size_t total_targets = 0;
    for (const auto& seq : batch) total_targets += seq.target_pos.size();
    if (total_targets == 0) throw ValidationError("masked_loss: batch has no masked positions");
    const double inv_total = 1.0 / static_cast<double>(total_targets);
    double loss = 0;
    for (const auto& seq : batch) {
      ForwardCache cache;
      forward(seq.tokens, seq.types, cfg_.num_layers, cache);
      const Mat& out = cache.layers.back().out;
      const Tensor& out_w = params_[out_w_index()];
      const Tensor& out_b = params_[out_w_index() + 1];
      Mat d_out(out.rows, out.cols);
      for (std::size_t ti = 0; ti < seq.target_pos.size(); ++ti) {
        const std::size_t p = static_cast<std::size_t>(seq.target_pos[ti]);
        const int gold = seq.target_tok[ti];
        const double* row = out.row(p);
        std::vector<double> z(kVocabSize);
        for (int v = 0; v < kVocabSize; ++v) {
          double s = out_b.w[static_cast<std::size_t>(v)];
          for (std::size_t j = 0; j < out_w.rows; ++j) {
            s += row[j] * out_w.w[j * out_w.cols + static_cast<std::size_t>(v)];
          }
          z[static_cast<std::size_t>(v)] = s;
        }
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0;
        for (double v : z) sum += std::exp(v - mx);
        const double lse = mx + std::log(sum);
        loss += (lse - z[static_cast<std::size_t>(gold)]) * inv_total;
        if (with_grads) {
          Tensor& out_w_mut = params_[out_w_index()];
          Tensor& out_b_mut = params_[out_w_index() + 1];
          for (int v = 0; v < kVocabSize; ++v) {
            double dz = std::exp(z[static_cast<std::size_t>(v)] - lse);
            if (v == gold) dz -= 1.0;
            dz *= inv_total;
            out_b_mut.g[static_cast<std::size_t>(v)] += dz;
            for (std::size_t j = 0; j < out_w.rows; ++j) {
              out_w_mut.g[j * out_w.cols + static_cast<std::size_t>(v)] += row[j] * dz;
              d_out(p, j) += out_w.w[j * out_w.cols + static_cast<std::size_t>(v)] * dz;
            }
          }
        }
      }
      if (with_grads) backward(seq, cache, d_out);
    }
    return loss;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open checkpoint for writing: " + path);
    nlohmann::json header;
    header["config"] = cfg_;
    header["loss_history"] = epoch_losses_;
    header["tensors"] = nlohmann::json::array();
    for (const auto& t : params_) {
      header["tensors"].push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
    }
    const std::string magic = "FLOWEVAL-ACTLM-v1\n";
    const std::string hs = header.dump();
    const std::uint64_t hlen = hs.size();
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& t : params_) {
      out.write(reinterpret_cast<const char*>(t.w.data()),
                static_cast<std::streamsize>(t.w.size() * sizeof(double)));
    }
    if (!out) throw ParseError("failed writing checkpoint: " + path);
  }

  static ActLmModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint: " + path);
    const std::string magic = "FLOWEVAL-ACTLM-v1\n";
    std::string got(magic.size(), '\0');
    in.read(got.data(), static_cast<std::streamsize>(magic.size()));
    if (!in || got != magic) throw ParseError("not an act-lm checkpoint: " + path);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw ParseError("truncated checkpoint header: " + path);
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("bad checkpoint header: " + std::string(e.what()));
    }
    ActLmModel model(header.at("config").get<ActLmConfig>());
    model.epoch_losses_ = header.value("loss_history", std::vector<double>{});
    const auto& tensors = header.at("tensors");
    if (tensors.size() != model.params_.size()) {
      throw ParseError("checkpoint tensor count mismatch: " + path);
    }
    for (std::size_t i = 0; i < model.params_.size(); ++i) {
      Tensor& t = model.params_[i];
      if (tensors[i].at("name") != t.name ||
          tensors[i].at("rows").get<std::size_t>() != t.rows ||
          tensors[i].at("cols").get<std::size_t>() != t.cols) {
        throw ParseError("checkpoint tensor layout mismatch at " + t.name);
      }
      in.read(reinterpret_cast<char*>(t.w.data()),
              static_cast<std::streamsize>(t.w.size() * sizeof(double)));
    }
    if (!in) throw ParseError("truncated checkpoint data: " + path);
    return model;
  }

 private:
  struct LayerCache {
    Mat x_in;
    Mat q, k, v;
    std::vector<Mat> probs;  // one L x L attention matrix per head
    Mat ctx;
    Mat r1, xhat1, a1;
    std::vector<double> inv1;
    Mat f1, gact;
    Mat r2, xhat2, out;
    std::vector<double> inv2;
  };
  struct ForwardCache {
    Mat emb;
    std::vector<LayerCache> layers;
  };

  ActLmConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<double> epoch_losses_;

  std::size_t layer_base(int layer) const { return 3 + static_cast<std::size_t>(layer) * 16; }
  std::size_t out_w_index() const { return 3 + static_cast<std::size_t>(cfg_.num_layers) * 16; }

  void check_layer(int layer_h) const {
    if (layer_h < 1 || layer_h > cfg_.num_layers) {
      throw ValidationError("layer index " + std::to_string(layer_h) + " out of range [1, " +
                            std::to_string(cfg_.num_layers) + "]");
    }
  }

  void init_weights() {
    std::mt19937_64 rng(cfg_.seed);
    for (auto& t : params_) {
      const bool is_ln_gain = t.name.find("ln") != std::string::npos &&
                              t.name.compare(t.name.size() - 2, 2, "_g") == 0;
      const bool is_row_vector = t.rows == 1;  // biases and LN shifts
      if (is_ln_gain) {
        std::fill(t.w.begin(), t.w.end(), 1.0);
      } else if (is_row_vector) {
        std::fill(t.w.begin(), t.w.end(), 0.0);
      } else {
        for (auto& w : t.w) w = 0.02 * detail::rand_normal(rng);
      }
    }
  }

  static void layer_norm(const Mat& x, const Tensor& gain, const Tensor& bias, Mat& xhat,
                         std::vector<double>& inv_std, Mat& y) {
    xhat = Mat(x.rows, x.cols);
    y = Mat(x.rows, x.cols);
    inv_std.assign(x.rows, 0.0);
    const double inv_n = 1.0 / static_cast<double>(x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double* row = x.row(i);
      double mean = 0;
      for (std::size_t j = 0; j < x.cols; ++j) mean += row[j];
      mean *= inv_n;
      double var = 0;
      for (std::size_t j = 0; j < x.cols; ++j) {
        const double dlt = row[j] - mean;
        var += dlt * dlt;
      }
      var *= inv_n;
      const double inv = 1.0 / std::sqrt(var + detail::kLayerNormEps);
      inv_std[i] = inv;
      for (std::size_t j = 0; j < x.cols; ++j) {
        const double xh = (row[j] - mean) * inv;
        xhat(i, j) = xh;
        y(i, j) = gain.w[j] * xh + bias.w[j];
      }
    }
  }

  // dX from dY through y = g * xhat + b; accumulates gain/bias grads.
  static void layer_norm_backward(const Mat& d_y, const Mat& xhat,
                                  const std::vector<double>& inv_std, const Tensor& gain,
                                  Tensor& gain_grad, Tensor& bias_grad, Mat& d_x) {
    d_x = Mat(d_y.rows, d_y.cols);
    const double inv_n = 1.0 / static_cast<double>(d_y.cols);
    std::vector<double> dxhat(d_y.cols);
    for (std::size_t i = 0; i < d_y.rows; ++i) {
      double m1 = 0, m2 = 0;
      for (std::size_t j = 0; j < d_y.cols; ++j) {
        gain_grad.g[j] += d_y(i, j) * xhat(i, j);
        bias_grad.g[j] += d_y(i, j);
        dxhat[j] = d_y(i, j) * gain.w[j];
        m1 += dxhat[j];
        m2 += dxhat[j] * xhat(i, j);
      }
      m1 *= inv_n;
      m2 *= inv_n;
      for (std::size_t j = 0; j < d_y.cols; ++j) {
        d_x(i, j) = inv_std[i] * (dxhat[j] - m1 - xhat(i, j) * m2);
      }
    }
  }

  static void add_bias(Mat& m, const Tensor& b) {
    for (std::size_t i = 0; i < m.rows; ++i) {
      double* row = m.row(i);
      for (std::size_t j = 0; j < m.cols; ++j) row[j] += b.w[j];
    }
  }

  static void add_col_sums(const Mat& m, Tensor& b) {
    for (std::size_t i = 0; i < m.rows; ++i) {
      const double* row = m.row(i);
      for (std::size_t j = 0; j < m.cols; ++j) b.g[j] += row[j];
    }
  }

  // Runs the encoder up to and including block `up_to` (1-based).
  void forward(const std::vector<int>& tokens, const std::vector<int>& types, int up_to,
               ForwardCache& cache) const {
    const std::size_t len = tokens.size();
    const std::size_t d = static_cast<std::size_t>(cfg_.hidden_dim);
    const int heads = cfg_.num_heads;
    const std::size_t dh = d / static_cast<std::size_t>(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const Tensor& tok_emb = params_[0];
    const Tensor& pos_emb = params_[1];
    const Tensor& type_emb = params_[2];
    if (len > pos_emb.rows) throw ValidationError("act_lm: sequence exceeds position table");

    cache.emb = Mat(len, d);
    for (std::size_t i = 0; i < len; ++i) {
      const auto tok = static_cast<std::size_t>(tokens[i]);
      const auto typ = static_cast<std::size_t>(types[i]);
      double* row = cache.emb.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        row[j] = tok_emb.w[tok * d + j] + pos_emb.w[i * d + j] + type_emb.w[typ * d + j];
      }
    }

    cache.layers.assign(static_cast<std::size_t>(up_to), LayerCache{});
    const Mat* x = &cache.emb;
    for (int layer = 0; layer < up_to; ++layer) {
      LayerCache& lc = cache.layers[static_cast<std::size_t>(layer)];
      const std::size_t base = layer_base(layer);
      const Tensor& wq = params_[base + 0];
      const Tensor& bq = params_[base + 1];
      const Tensor& wk = params_[base + 2];
      const Tensor& bk = params_[base + 3];
      const Tensor& wv = params_[base + 4];
      const Tensor& bv = params_[base + 5];
      const Tensor& wo = params_[base + 6];
      const Tensor& bo = params_[base + 7];
      const Tensor& ln1_g = params_[base + 8];
      const Tensor& ln1_b = params_[base + 9];
      const Tensor& w1 = params_[base + 10];
      const Tensor& b1 = params_[base + 11];
      const Tensor& w2 = params_[base + 12];
      const Tensor& b2 = params_[base + 13];
      const Tensor& ln2_g = params_[base + 14];
      const Tensor& ln2_b = params_[base + 15];

      lc.x_in = *x;
      matmul(lc.x_in, tensor_view(wq), lc.q);
      add_bias(lc.q, bq);
      matmul(lc.x_in, tensor_view(wk), lc.k);
      add_bias(lc.k, bk);
      matmul(lc.x_in, tensor_view(wv), lc.v);
      add_bias(lc.v, bv);
      // attention per head
      lc.probs.assign(static_cast<std::size_t>(heads), Mat{});
      lc.ctx = Mat(len, d);
      for (int h = 0; h < heads; ++h) {
        const std::size_t off = static_cast<std::size_t>(h) * dh;
        Mat& p = lc.probs[static_cast<std::size_t>(h)];
        p = Mat(len, len);
        for (std::size_t i = 0; i < len; ++i) {
          double mx = -1e300;
          for (std::size_t j = 0; j < len; ++j) {
            double s = 0;
            const double* qi = lc.q.row(i) + off;
            const double* kj = lc.k.row(j) + off;
            for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
            s *= scale;
            p(i, j) = s;
            if (s > mx) mx = s;
          }
          double sum = 0;
          for (std::size_t j = 0; j < len; ++j) {
            p(i, j) = std::exp(p(i, j) - mx);
            sum += p(i, j);
          }
          const double inv = 1.0 / sum;
          for (std::size_t j = 0; j < len; ++j) p(i, j) *= inv;
        }
        for (std::size_t i = 0; i < len; ++i) {
          double* ctx_row = lc.ctx.row(i) + off;
          for (std::size_t j = 0; j < len; ++j) {
            const double pij = p(i, j);
            if (pij == 0.0) continue;
            const double* vj = lc.v.row(j) + off;
            for (std::size_t c = 0; c < dh; ++c) ctx_row[c] += pij * vj[c];
          }
        }
      }
      // output projection + residual + LN1
      Mat attn_out;
      matmul(lc.ctx, tensor_view(wo), attn_out);
      add_bias(attn_out, bo);
      lc.r1 = lc.x_in;
      for (std::size_t i = 0; i < lc.r1.a.size(); ++i) lc.r1.a[i] += attn_out.a[i];
      layer_norm(lc.r1, ln1_g, ln1_b, lc.xhat1, lc.inv1, lc.a1);
      // feed-forward + residual + LN2
      matmul(lc.a1, tensor_view(w1), lc.f1);
      add_bias(lc.f1, b1);
      lc.gact = Mat(lc.f1.rows, lc.f1.cols);
      for (std::size_t i = 0; i < lc.f1.a.size(); ++i) lc.gact.a[i] = detail::gelu(lc.f1.a[i]);
      Mat f2;
      matmul(lc.gact, tensor_view(w2), f2);
      add_bias(f2, b2);
      lc.r2 = lc.a1;
      for (std::size_t i = 0; i < lc.r2.a.size(); ++i) lc.r2.a[i] += f2.a[i];
      layer_norm(lc.r2, ln2_g, ln2_b, lc.xhat2, lc.inv2, lc.out);
      x = &lc.out;
    }
  }

  static MatView tensor_view(const Tensor& t) { return MatView(t.rows, t.cols, t.w.data()); }

  void backward(const MaskedSequence& seq, const ForwardCache& cache, Mat& d_out_top) {
    const std::size_t len = seq.tokens.size();
    const std::size_t d = static_cast<std::size_t>(cfg_.hidden_dim);
    const int heads = cfg_.num_heads;
    const std::size_t dh = d / static_cast<std::size_t>(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat d_x = std::move(d_out_top);  // gradient w.r.t. current block output
    for (int layer = cfg_.num_layers - 1; layer >= 0; --layer) {
      const LayerCache& lc = cache.layers[static_cast<std::size_t>(layer)];
      const std::size_t base = layer_base(layer);
      const Tensor& wq = params_[base + 0];
      const Tensor& wk = params_[base + 2];
      const Tensor& wv = params_[base + 4];
      const Tensor& wo = params_[base + 6];
      const Tensor& ln1_g = params_[base + 8];
      const Tensor& w1 = params_[base + 10];
      const Tensor& w2 = params_[base + 12];
      const Tensor& ln2_g = params_[base + 14];

      // LN2
      Mat d_r2;
      layer_norm_backward(d_x, lc.xhat2, lc.inv2, ln2_g, params_[base + 14], params_[base + 15],
                          d_r2);
      // FFN
      Mat d_gact;
      matmul_a_bt(d_r2, tensor_view(w2), d_gact);
      matmul_at_b_accum(lc.gact, d_r2, params_[base + 12].g.data());
      add_col_sums(d_r2, params_[base + 13]);
      Mat d_f1(d_gact.rows, d_gact.cols);
      for (std::size_t i = 0; i < d_f1.a.size(); ++i) {
        d_f1.a[i] = d_gact.a[i] * detail::gelu_grad(lc.f1.a[i]);
      }
      Mat d_a1;
      matmul_a_bt(d_f1, tensor_view(w1), d_a1);
      matmul_at_b_accum(lc.a1, d_f1, params_[base + 10].g.data());
      add_col_sums(d_f1, params_[base + 11]);
      // residual around FFN
      for (std::size_t i = 0; i < d_a1.a.size(); ++i) d_a1.a[i] += d_r2.a[i];
      // LN1
      Mat d_r1;
      layer_norm_backward(d_a1, lc.xhat1, lc.inv1, ln1_g, params_[base + 8], params_[base + 9],
                          d_r1);
      // attention output projection
      Mat d_ctx;
      matmul_a_bt(d_r1, tensor_view(wo), d_ctx);
      matmul_at_b_accum(lc.ctx, d_r1, params_[base + 6].g.data());
      add_col_sums(d_r1, params_[base + 7]);
      // heads
      Mat d_q(len, d), d_k(len, d), d_v(len, d);
      for (int h = 0; h < heads; ++h) {
        const std::size_t off = static_cast<std::size_t>(h) * dh;
        const Mat& p = lc.probs[static_cast<std::size_t>(h)];
        Mat d_p(len, len);
        for (std::size_t i = 0; i < len; ++i) {
          for (std::size_t j = 0; j < len; ++j) {
            double s = 0;
            const double* dci = d_ctx.row(i) + off;
            const double* vj = lc.v.row(j) + off;
            for (std::size_t c = 0; c < dh; ++c) s += dci[c] * vj[c];
            d_p(i, j) = s;
          }
        }
        for (std::size_t j = 0; j < len; ++j) {
          double* dvj = d_v.row(j) + off;
          for (std::size_t i = 0; i < len; ++i) {
            const double pij = p(i, j);
            if (pij == 0.0) continue;
            const double* dci = d_ctx.row(i) + off;
            for (std::size_t c = 0; c < dh; ++c) dvj[c] += pij * dci[c];
          }
        }
        // softmax backward
        Mat d_s(len, len);
        for (std::size_t i = 0; i < len; ++i) {
          double rowdot = 0;
          for (std::size_t j = 0; j < len; ++j) rowdot += d_p(i, j) * p(i, j);
          for (std::size_t j = 0; j < len; ++j) {
            d_s(i, j) = p(i, j) * (d_p(i, j) - rowdot);
          }
        }
        for (std::size_t i = 0; i < len; ++i) {
          double* dqi = d_q.row(i) + off;
          for (std::size_t j = 0; j < len; ++j) {
            const double dsij = d_s(i, j) * scale;
            if (dsij == 0.0) continue;
            const double* kj = lc.k.row(j) + off;
            for (std::size_t c = 0; c < dh; ++c) dqi[c] += dsij * kj[c];
          }
        }
        for (std::size_t j = 0; j < len; ++j) {
          double* dkj = d_k.row(j) + off;
          for (std::size_t i = 0; i < len; ++i) {
            const double dsij = d_s(i, j) * scale;
            if (dsij == 0.0) continue;
            const double* qi = lc.q.row(i) + off;
            for (std::size_t c = 0; c < dh; ++c) dkj[c] += dsij * qi[c];
          }
        }
      }
      // projections back to the block input
      Mat d_x_next = d_r1;  // residual path around attention
      auto project_back = [&](const Tensor& w, std::size_t w_idx, std::size_t b_idx,
                              const Mat& d_proj) {
        matmul_at_b_accum(lc.x_in, d_proj, params_[w_idx].g.data());
        add_col_sums(d_proj, params_[b_idx]);
        Mat contrib;
        matmul_a_bt(d_proj, tensor_view(w), contrib);
        for (std::size_t i = 0; i < d_x_next.a.size(); ++i) d_x_next.a[i] += contrib.a[i];
      };
      project_back(wq, base + 0, base + 1, d_q);
      project_back(wk, base + 2, base + 3, d_k);
      project_back(wv, base + 4, base + 5, d_v);
      d_x = std::move(d_x_next);
    }
    // embeddings
    Tensor& tok_emb = params_[0];
    Tensor& pos_emb = params_[1];
    Tensor& type_emb = params_[2];
    for (std::size_t i = 0; i < len; ++i) {
      const auto tok = static_cast<std::size_t>(seq.tokens[i]);
      const auto typ = static_cast<std::size_t>(seq.types[i]);
      const double* row = d_x.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        tok_emb.g[tok * d + j] += row[j];
        pos_emb.g[i * d + j] += row[j];
        type_emb.g[typ * d + j] += row[j];
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Masking, training, and evaluation

// Canonical masked-LM recipe: select positions with prob mask_prob (at
// least one per flow); of the selected, 80% become MASK, 10% a random act,
// 10% stay unchanged. Targets are always the original acts.
inline MaskedSequence apply_train_masking(const ActLmModel& model, const ActFlow& flow,
                                          double mask_prob, std::mt19937_64& rng) {
  MaskedSequence seq = model.build_sequence(flow);
  const std::size_t n = flow.acts.size();
  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < n; ++i) {
    if (detail::rand_unit(rng) < mask_prob) selected.push_back(i);
  }
  if (selected.empty()) selected.push_back(rng() % n);
  for (std::size_t i : selected) {
    const std::size_t pos = i + 1;  // skip BOS
    seq.target_pos.push_back(static_cast<int>(pos));
    seq.target_tok.push_back(seq.tokens[pos]);
    const double r = detail::rand_unit(rng);
    if (r < 0.8) {
      seq.tokens[pos] = kMaskToken;
    } else if (r < 0.9) {
      seq.tokens[pos] = kActTokenBase + static_cast<int>(rng() % kNumActs);
    }  // else leave unchanged
  }
  return seq;
}

// Evaluation masking: pure MASK replacement at the selected positions.
inline MaskedSequence apply_eval_masking(const ActLmModel& model, const ActFlow& flow,
                                         double mask_prob, std::mt19937_64& rng) {
  MaskedSequence seq = model.build_sequence(flow);
  const std::size_t n = flow.acts.size();
  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < n; ++i) {
    if (detail::rand_unit(rng) < mask_prob) selected.push_back(i);
  }
  if (selected.empty()) selected.push_back(rng() % n);
  for (std::size_t i : selected) {
    const std::size_t pos = i + 1;
    seq.target_pos.push_back(static_cast<int>(pos));
    seq.target_tok.push_back(seq.tokens[pos]);
    seq.tokens[pos] = kMaskToken;
  }
  return seq;
}

namespace detail {

struct AdamState {
  std::vector<std::vector<double>> m, v;
  long long step = 0;

  explicit AdamState(const std::vector<Tensor>& params) {
    for (const auto& t : params) {
      m.emplace_back(t.size(), 0.0);
      v.emplace_back(t.size(), 0.0);
    }
  }

  void update(std::vector<Tensor>& params, double lr) {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    ++step;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
    for (std::size_t ti = 0; ti < params.size(); ++ti) {
      Tensor& t = params[ti];
      auto& mt = m[ti];
      auto& vt = v[ti];
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double g = t.g[i];
        mt[i] = kBeta1 * mt[i] + (1.0 - kBeta1) * g;
        vt[i] = kBeta2 * vt[i] + (1.0 - kBeta2) * g * g;
        t.w[i] -= lr * (mt[i] / bc1) / (std::sqrt(vt[i] / bc2) + kEps);
      }
    }
  }
};

}  // namespace detail

inline std::vector<ActFlow> corpus_flows(const Corpus& corpus, const ActLmConfig& cfg) {
  if (corpus.dialogues.empty()) throw ValidationError("empty corpus");
  std::vector<ActFlow> flows;
  flows.reserve(corpus.dialogues.size());
  for (const auto& d : corpus.dialogues) {
    ActFlow flow = act_flow(d);
    if (flow.size() > static_cast<std::size_t>(cfg.max_seq_len)) {
      if (!cfg.truncate_long_flows) {
        throw ValidationError("dialogue \"" + d.id + "\" flow of length " +
                              std::to_string(flow.size()) + " exceeds max_seq_len " +
                              std::to_string(cfg.max_seq_len) + " and truncation is disabled");
      }
      flow = truncate_flow(flow, static_cast<std::size_t>(cfg.max_seq_len));
    }
    flows.push_back(std::move(flow));
  }
  return flows;
}

// Trains the masked-act model with Adam and linear warmup over the first
// tenth of the steps. Single-threaded and bit-deterministic for a fixed
// (seed, config, corpus).
inline ActLmModel train_act_lm(const Corpus& corpus, const ActLmConfig& cfg) {
  cfg.validate();
  std::vector<ActFlow> flows = corpus_flows(corpus, cfg);
  ActLmModel model(cfg);
  detail::AdamState adam(model.params());
  std::mt19937_64 rng(cfg.seed + 0x9E3779B97F4A7C15ULL);  // decoupled from init stream

  const std::size_t n = flows.size();
  const std::size_t batches_per_epoch =
      (n + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size);
  const long long total_steps =
      static_cast<long long>(batches_per_epoch) * std::max(cfg.epochs, 1);
  const long long warmup_steps = std::max<long long>(1, total_steps / 10);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> epoch_losses;
  long long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t batch_count = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<MaskedSequence> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(apply_train_masking(model, flows[order[i]], cfg.mask_prob, rng));
      }
      model.zero_grads();
      const double loss = model.masked_loss(batch, /*with_grads=*/true);
      ++step;
      const double lr = cfg.learning_rate *
                        std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup_steps));
      adam.update(model.params(), lr);
      loss_sum += loss;
      ++batch_count;
    }
    epoch_losses.push_back(batch_count ? loss_sum / static_cast<double>(batch_count) : 0.0);
  }
  model.set_epoch_losses(std::move(epoch_losses));
  return model;
}

// Frequency of the most common act over all segments.
inline double majority_baseline(const Corpus& corpus) {
  if (corpus.dialogues.empty()) throw ValidationError("empty corpus");
  std::vector<long long> counts(kNumActs, 0);
  long long total = 0;
  for (const auto& d : corpus.dialogues) {
    for (const auto& a : act_flow(d).acts) {
      ++counts[static_cast<std::size_t>(a)];
      ++total;
    }
  }
  return static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
         static_cast<double>(total);
}

// Fraction of masked positions whose argmax prediction recovers the true
// act. The masking pattern is reproducible from the seed.
inline double masked_accuracy(const ActLmModel& model, const Corpus& corpus, double mask_prob,
                              std::uint64_t seed) {
  if (corpus.dialogues.empty()) throw ValidationError("empty corpus");
  std::vector<ActFlow> flows = corpus_flows(corpus, model.config());
  std::mt19937_64 rng(seed);
  long long correct = 0, total = 0;
  for (const auto& flow : flows) {
    MaskedSequence seq = apply_eval_masking(model, flow, mask_prob, rng);
    std::vector<int> positions;
    positions.reserve(seq.target_pos.size());
    for (int p : seq.target_pos) positions.push_back(p - 1);  // back to flow coordinates
    auto dists = model.predict_masked(flow, positions);
    for (std::size_t t = 0; t < positions.size(); ++t) {
      const auto& dist = dists[t];
      int argmax = 0;
      for (int a = 1; a < kNumActs; ++a) {
        if (dist[static_cast<std::size_t>(a)] > dist[static_cast<std::size_t>(argmax)]) argmax = a;
      }
      if (kActTokenBase + argmax == seq.target_tok[t]) ++correct;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace floweval
