#pragma once

// A deterministic miniature pre-LN decoder-only transformer. All arithmetic
// is float32 with summations in fixed left-to-right order.
//
// Parameter fill order (one SplitMix64 stream, uniform in [-0.1, 0.1]):
//   token embedding [vocab x d], position embedding [max_seq x d],
//   then per block: Wq, bq, Wk, bk, Wv, bv, Wo, bo, W1 [d x 4d], b1, W2 [4d x d], b2,
//   then unembedding [vocab x d], unembedding bias [vocab].
// LayerNorm gains start at 1 and offsets at 0; they are not drawn.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "masteer/activation_store.hpp"
#include "masteer/core.hpp"
#include "masteer/model.hpp"

namespace masteer {

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform index in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  /// Standard normal via Box-Muller.
  double normal() {
    const double u1 = 1.0 - unit();
    const double u2 = unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

/// Optional readout modification used by planted evaluation fixtures: pushes
/// `direction` into the unembedding rows of `good_token` (+) and `bad_token` (-)
/// and biases the readout toward `bad_token` by `margin`.
struct ReadoutPlant {
  std::vector<float> direction;
  Token good_token = 0;
  Token bad_token = 1;
  float gain = 1.0f;
  float margin = 0.0f;

  bool operator==(const ReadoutPlant&) const = default;
};

struct ToyConfig {
  std::size_t vocab = 64;
  std::size_t d_model = 32;
  std::size_t layers = 8;
  std::size_t heads = 4;
  std::size_t max_seq = 64;
  std::uint64_t seed = 0;
  std::optional<ReadoutPlant> plant;

  void validate() const {
    if (vocab < 1 || d_model < 1 || layers < 1 || heads < 1 || max_seq < 1) {
      fail(ErrorKind::config, "toy config counts must all be >= 1");
    }
    if (d_model % heads != 0) {
      fail(ErrorKind::config, "d_model=" + std::to_string(d_model) + " is not divisible by heads=" +
                                  std::to_string(heads));
    }
    if (plant) {
      if (plant->direction.size() != d_model) fail(ErrorKind::config, "readout plant direction length != d_model");
      auto in_vocab = [&](Token t) { return t >= 0 && static_cast<std::size_t>(t) < vocab; };
      if (!in_vocab(plant->good_token) || !in_vocab(plant->bad_token)) {
        fail(ErrorKind::config, "readout plant tokens outside vocabulary");
      }
    }
  }

  bool operator==(const ToyConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ToyConfig& c) {
  j = {{"vocab", c.vocab}, {"d_model", c.d_model}, {"layers", c.layers},
       {"heads", c.heads}, {"max_seq", c.max_seq}, {"seed", c.seed}};
  if (c.plant) {
    j["plant"] = {{"direction", c.plant->direction}, {"good_token", c.plant->good_token},
                  {"bad_token", c.plant->bad_token}, {"gain", c.plant->gain},
                  {"margin", c.plant->margin}};
  }
}

inline void from_json(const nlohmann::json& j, ToyConfig& c) {
  c = ToyConfig{};
  c.vocab = j.value("vocab", c.vocab);
  c.d_model = j.value("d_model", c.d_model);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.max_seq = j.value("max_seq", c.max_seq);
  c.seed = j.value("seed", c.seed);
  if (j.contains("plant")) {
    const auto& p = j.at("plant");
    c.plant = ReadoutPlant{p.at("direction").get<std::vector<float>>(), p.at("good_token").get<Token>(),
                           p.at("bad_token").get<Token>(), p.value("gain", 1.0f), p.value("margin", 0.0f)};
  }
}

inline constexpr float kLayerNormEps = 1e-9f;

/// Normalizes to zero mean and unit variance (no affine part).
inline void layer_norm(std::span<const float> in, std::span<float> out) {
  float mean = 0.0f;
  for (float x : in) mean += x;
  mean /= static_cast<float>(in.size());
  float var = 0.0f;
  for (float x : in) var += (x - mean) * (x - mean);
  var /= static_cast<float>(in.size());
  const float inv = 1.0f / std::sqrt(var + kLayerNormEps);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = (in[i] - mean) * inv;
}

inline float gelu(float x) {
  constexpr float k = 0.7978845608028654f;  // sqrt(2 / pi)
  return 0.5f * x * (1.0f + std::tanh(k * (x + 0.044715f * x * x * x)));
}

class ToyTransformer final : public LanguageModel {
 public:
  explicit ToyTransformer(ToyConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t d = cfg_.d_model;
    const std::size_t ff = 4 * d;
    SplitMix64 rng(cfg_.seed);
    auto draw = [&](std::size_t count) {
      std::vector<float> w(count);
      for (auto& x : w) x = static_cast<float>(-0.1 + 0.2 * rng.unit());
      return w;
    };
    token_embedding_ = draw(cfg_.vocab * d);
    position_embedding_ = draw(cfg_.max_seq * d);
    blocks_.resize(cfg_.layers);
    for (auto& b : blocks_) {
      b.wq = draw(d * d);
      b.bq = draw(d);
      b.wk = draw(d * d);
      b.bk = draw(d);
      b.wv = draw(d * d);
      b.bv = draw(d);
      b.wo = draw(d * d);
      b.bo = draw(d);
      b.w1 = draw(d * ff);
      b.b1 = draw(ff);
      b.w2 = draw(ff * d);
      b.b2 = draw(d);
      b.ln1_gain.assign(d, 1.0f);
      b.ln1_bias.assign(d, 0.0f);
      b.ln2_gain.assign(d, 1.0f);
      b.ln2_bias.assign(d, 0.0f);
    }
    unembedding_ = draw(cfg_.vocab * d);
    unembedding_bias_ = draw(cfg_.vocab);
    final_gain_.assign(d, 1.0f);
    final_bias_.assign(d, 0.0f);

    if (cfg_.plant) {
      const auto& p = *cfg_.plant;
      const auto good = static_cast<std::size_t>(p.good_token);
      const auto bad = static_cast<std::size_t>(p.bad_token);
      for (std::size_t k = 0; k < d; ++k) {
        unembedding_[good * d + k] += p.gain * p.direction[k];
        unembedding_[bad * d + k] -= p.gain * p.direction[k];
      }
      unembedding_bias_[bad] = unembedding_bias_[good] + p.margin;
    }
  }

  const ToyConfig& config() const { return cfg_; }

  std::string model_id() const override {
    std::string id = "toy-v1:vocab=" + std::to_string(cfg_.vocab) + ",d=" + std::to_string(cfg_.d_model) +
                     ",layers=" + std::to_string(cfg_.layers) + ",heads=" + std::to_string(cfg_.heads) +
                     ",max_seq=" + std::to_string(cfg_.max_seq) + ",seed=" + std::to_string(cfg_.seed);
    if (cfg_.plant) id += ",planted";
    return id;
  }
  std::size_t num_layers() const override { return cfg_.layers; }
  std::size_t hidden_dim() const override { return cfg_.d_model; }
  std::size_t vocab_size() const override { return cfg_.vocab; }
  std::size_t max_sequence() const override { return cfg_.max_seq; }
  bool supports_layer_hooks() const override { return true; }

  /// Every parameter in fill order, concatenated (for determinism checks).
  std::vector<float> flat_weights() const {
    std::vector<float> out;
    auto append = [&](const std::vector<float>& w) { out.insert(out.end(), w.begin(), w.end()); };
    append(token_embedding_);
    append(position_embedding_);
    for (const auto& b : blocks_) {
      for (const auto* w : {&b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.w1, &b.b1, &b.w2, &b.b2}) {
        append(*w);
      }
    }
    append(unembedding_);
    append(unembedding_bias_);
    return out;
  }

  ForwardTrace forward(std::span<const Token> tokens, const LayerOutputTransform& hook = {}) const override {
    const std::size_t n = tokens.size();
    const std::size_t d = cfg_.d_model;
    if (n == 0) fail(ErrorKind::input, "forward needs at least one token");
    if (n > cfg_.max_seq) {
      fail(ErrorKind::input, "sequence length " + std::to_string(n) + " exceeds max_seq " +
                                 std::to_string(cfg_.max_seq));
    }
    for (std::size_t t = 0; t < n; ++t) {
      if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= cfg_.vocab) {
        fail(ErrorKind::input, "token " + std::to_string(tokens[t]) + " at position " + std::to_string(t) +
                                   " outside vocabulary of " + std::to_string(cfg_.vocab));
      }
    }

    ForwardTrace trace;
    trace.positions = n;
    trace.hidden_dim = d;
    trace.vocab = cfg_.vocab;
    trace.hidden.reserve(cfg_.layers + 1);

    std::vector<float> h(n * d);
    for (std::size_t t = 0; t < n; ++t) {
      const auto tok = static_cast<std::size_t>(tokens[t]);
      for (std::size_t k = 0; k < d; ++k) h[t * d + k] = token_embedding_[tok * d + k] + position_embedding_[t * d + k];
    }
    trace.hidden.push_back(h);

    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const auto& b = blocks_[l];
      std::vector<float> attn = h;
      attention(b, h, attn, n);
      trace.attn_state.push_back(attn);

      std::vector<float> branch(n * d);
      ffn(b, attn, branch, n);
      for (std::size_t i = 0; i < n * d; ++i) h[i] = attn[i] + branch[i];
      trace.ffn_branch.push_back(std::move(branch));
      if (hook) {
        for (std::size_t t = 0; t < n; ++t) hook(l, t, std::span<float>(h.data() + t * d, d));
      }
      trace.hidden.push_back(h);
    }

    trace.logits.assign(n * cfg_.vocab, 0.0f);
    std::vector<float> x(d);
    for (std::size_t t = 0; t < n; ++t) {
      affine_norm(std::span<const float>(h.data() + t * d, d), final_gain_, final_bias_, x);
      for (std::size_t v = 0; v < cfg_.vocab; ++v) {
        float acc = unembedding_bias_[v];
        for (std::size_t k = 0; k < d; ++k) acc += x[k] * unembedding_[v * d + k];
        trace.logits[t * cfg_.vocab + v] = acc;
      }
    }
    return trace;
  }

 private:
  struct Block {
    std::vector<float> wq, bq, wk, bk, wv, bv, wo, bo, w1, b1, w2, b2;
    std::vector<float> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  };

  static void affine_norm(std::span<const float> in, const std::vector<float>& gain,
                          const std::vector<float>& bias, std::span<float> out) {
    layer_norm(in, out);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = out[k] * gain[k] + bias[k];
  }

  /// y = x W + b for a row vector x (length in) and W stored [in x out].
  static void linear(std::span<const float> x, const std::vector<float>& w, const std::vector<float>& bias,
                     std::span<float> y) {
    const std::size_t out = y.size();
    for (std::size_t j = 0; j < out; ++j) y[j] = bias[j];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const float xi = x[i];
      const float* row = w.data() + i * out;
      for (std::size_t j = 0; j < out; ++j) y[j] += xi * row[j];
    }
  }

  // h_attn = h + MHA(LN(h)), written into `out` (which starts as a copy of h).
  void attention(const Block& b, const std::vector<float>& h, std::vector<float>& out, std::size_t n) const {
    const std::size_t d = cfg_.d_model;
    const std::size_t heads = cfg_.heads;
    const std::size_t dh = d / heads;
    std::vector<float> q(n * d), k(n * d), v(n * d), x(d);
    for (std::size_t t = 0; t < n; ++t) {
      affine_norm(std::span<const float>(h.data() + t * d, d), b.ln1_gain, b.ln1_bias, x);
      linear(x, b.wq, b.bq, std::span<float>(q.data() + t * d, d));
      linear(x, b.wk, b.bk, std::span<float>(k.data() + t * d, d));
      linear(x, b.wv, b.bv, std::span<float>(v.data() + t * d, d));
    }
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    std::vector<float> mixed(d), proj(d), scores(n);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t hd = 0; hd < heads; ++hd) {
        const std::size_t off = hd * dh;
        float max_score = -INFINITY;
        for (std::size_t s = 0; s <= t; ++s) {  // causal
          float acc = 0.0f;
          for (std::size_t i = 0; i < dh; ++i) acc += q[t * d + off + i] * k[s * d + off + i];
          scores[s] = acc * scale;
          max_score = std::max(max_score, scores[s]);
        }
        float total = 0.0f;
        for (std::size_t s = 0; s <= t; ++s) {
          scores[s] = std::exp(scores[s] - max_score);
          total += scores[s];
        }
        for (std::size_t i = 0; i < dh; ++i) {
          float acc = 0.0f;
          for (std::size_t s = 0; s <= t; ++s) acc += scores[s] * v[s * d + off + i];
          mixed[off + i] = acc / total;
        }
      }
      linear(mixed, b.wo, b.bo, proj);
      for (std::size_t i = 0; i < d; ++i) out[t * d + i] = h[t * d + i] + proj[i];
    }
  }

  // branch = FFN(LN(h_attn))
  void ffn(const Block& b, const std::vector<float>& attn, std::vector<float>& branch, std::size_t n) const {
    const std::size_t d = cfg_.d_model;
    std::vector<float> x(d), hidden(4 * d);
    for (std::size_t t = 0; t < n; ++t) {
      affine_norm(std::span<const float>(attn.data() + t * d, d), b.ln2_gain, b.ln2_bias, x);
      linear(x, b.w1, b.b1, hidden);
      for (auto& z : hidden) z = gelu(z);
      linear(hidden, b.w2, b.b2, std::span<float>(branch.data() + t * d, d));
    }
  }

  ToyConfig cfg_;
  std::vector<float> token_embedding_, position_embedding_;
  std::vector<Block> blocks_;
  std::vector<float> unembedding_, unembedding_bias_;
  std::vector<float> final_gain_, final_bias_;
};

/// Byte-level encoding for driving the toy model from text: byte mod vocab.
inline std::vector<Token> encode_text(std::string_view text, std::size_t vocab) {
  std::vector<Token> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<Token>(c % vocab));
  return out;
}

/// Keeps the last `limit` tokens so the final token survives truncation.
inline std::vector<Token> keep_tail(std::vector<Token> tokens, std::size_t limit) {
  if (tokens.size() > limit) tokens.erase(tokens.begin(), tokens.end() - static_cast<std::ptrdiff_t>(limit));
  return tokens;
}

inline std::string contrastive_text(const SteerSample& s, bool positive) {
  return s.question + "\n" + (positive ? s.matching_behavior : s.not_matching_behavior);
}

/// Runs the model on question + completion for every sample and records each
/// block's output at the final token.
inline ActivationSet extract_activations(const LanguageModel& model, const SampleCorpus& corpus) {
  validate_corpus(corpus);
  ActivationSet acts;
  acts.model_id = model.model_id();
  acts.extraction_mode = "teacher-forced";
  acts.num_layers = model.num_layers();
  acts.hidden_dim = model.hidden_dim();
  acts.category_order = corpus.categories;
  for (const auto& s : corpus.samples) {
    acts.sample_ids.push_back(s.id);
    acts.categories.push_back(s.category);
    for (bool positive : {true, false}) {
      const auto tokens =
          keep_tail(encode_text(contrastive_text(s, positive), model.vocab_size()), model.max_sequence());
      if (tokens.empty()) fail(ErrorKind::input, "sample '" + s.id + "' encodes to no tokens");
      const auto trace = model.forward(tokens);
      auto& dest = positive ? acts.pos : acts.neg;
      for (std::size_t l = 0; l < model.num_layers(); ++l) {
        const auto row = trace.block_output(l, tokens.size() - 1);
        dest.insert(dest.end(), row.begin(), row.end());
      }
      (positive ? acts.pos_token_index : acts.neg_token_index)
          .push_back(static_cast<std::int64_t>(tokens.size() - 1));
    }
  }
  acts.validate();
  return acts;
}

}  // namespace masteer
