#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "masteer/core.hpp"

namespace masteer {

using Token = std::int32_t;

/// Invoked after a block's FFN residual add, once per position, before the
/// state is passed to the next block. `layer` is the 0-based block index.
using LayerOutputTransform =
    std::function<void(std::size_t layer, std::size_t position, std::span<float> state)>;

/// Per-position states of one forward pass. hidden[0] holds the embeddings and
/// hidden[b + 1] the output of block b, so a model with L blocks has L + 1 entries.
struct ForwardTrace {
  std::size_t positions = 0;
  std::size_t hidden_dim = 0;
  std::size_t vocab = 0;
  std::vector<std::vector<float>> hidden;       // [L + 1][positions * d]
  std::vector<std::vector<float>> attn_state;   // [L][positions * d], h^attn per block
  std::vector<std::vector<float>> ffn_branch;   // [L][positions * d], FFN(LN(h^attn))
  std::vector<float> logits;                    // [positions * vocab]

  std::span<const float> state(std::size_t index, std::size_t position) const {
    return {hidden[index].data() + position * hidden_dim, hidden_dim};
  }
  /// Output of block `layer` (0-based) at `position`.
  std::span<const float> block_output(std::size_t layer, std::size_t position) const {
    return state(layer + 1, position);
  }
  std::span<const float> logits_at(std::size_t position) const {
    return {logits.data() + position * vocab, vocab};
  }
};

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::string model_id() const = 0;
  virtual std::size_t num_layers() const = 0;
  virtual std::size_t hidden_dim() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t max_sequence() const = 0;
  virtual bool supports_layer_hooks() const = 0;

  virtual ForwardTrace forward(std::span<const Token> tokens,
                               const LayerOutputTransform& hook = {}) const = 0;
};

inline Vector to_vector(std::span<const float> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v[static_cast<Eigen::Index>(i)] = values[i];
  return v;
}

/// Argmax decoding; ties go to the smallest token id. Stops early when the
/// sequence reaches the model's maximum length.
inline std::vector<Token> decode_greedy(const LanguageModel& model, std::span<const Token> prompt,
                                        std::size_t max_new, const LayerOutputTransform& hook = {}) {
  std::vector<Token> seq(prompt.begin(), prompt.end());
  std::vector<Token> out;
  for (std::size_t step = 0; step < max_new && seq.size() < model.max_sequence(); ++step) {
    const auto trace = model.forward(seq, hook);
    const auto logits = trace.logits_at(seq.size() - 1);
    Token best = 0;
    for (std::size_t t = 1; t < logits.size(); ++t) {
      if (logits[t] > logits[static_cast<std::size_t>(best)]) best = static_cast<Token>(t);
    }
    seq.push_back(best);
    out.push_back(best);
  }
  return out;
}

}  // namespace masteer
