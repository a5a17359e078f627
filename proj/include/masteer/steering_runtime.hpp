#pragma once

// Inference-time steering: pick the strategy whose anchor best matches the
// final prompt-token activation, then add strength * beta * steer to the
// chosen layer's output.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "masteer/activation_store.hpp"
#include "masteer/core.hpp"
#include "masteer/model.hpp"

namespace masteer {

enum class SteerPositions {
  all_positions,
  // The last prompt position (which predicts the first new token) and every
  // generated position after it.
  generated_only,
};

inline std::string_view to_string(SteerPositions p) {
  return p == SteerPositions::all_positions ? "all_positions" : "generated_only";
}

inline SteerPositions parse_positions(std::string_view text) {
  if (text == "all_positions" || text == "all") return SteerPositions::all_positions;
  if (text == "generated_only" || text == "generated") return SteerPositions::generated_only;
  fail(ErrorKind::config, "unknown positions policy '" + std::string(text) + "'");
}

struct SteerConfig {
  double beta = 1.0;
  // Minimum anchor cosine required to intervene; -1 always intervenes.
  double match_threshold = -1.0;
  SteerPositions positions = SteerPositions::all_positions;

  void validate() const {
    if (!std::isfinite(beta)) fail(ErrorKind::config, "beta must be finite");
    if (!(match_threshold >= -1.0 && match_threshold <= 1.0)) {
      fail(ErrorKind::config, "match_threshold must lie in [-1, 1]");
    }
  }
};

struct SteerDecision {
  std::optional<std::string> chosen;
  double similarity = 0.0;
  double applied_strength = 0.0;
  std::size_t layer = 0;
};

inline SteerDecision match_strategy(const Vector& h, const StrategyBundle& bundle, const SteerConfig& cfg) {
  cfg.validate();
  if (bundle.profiles.empty()) fail(ErrorKind::contract_violation, "bundle has no profiles");
  if (static_cast<std::size_t>(h.size()) != bundle.hidden_dim) {
    fail(ErrorKind::contract_violation, "activation length " + std::to_string(h.size()) +
                                            " != bundle hidden-dim " + std::to_string(bundle.hidden_dim));
  }
  if (!(h.norm() > 0.0) || !h.allFinite()) {
    fail(ErrorKind::undefined_activation, "cannot match a zero-norm or non-finite activation");
  }
  const StrategyProfile* best = nullptr;
  double best_sim = -2.0;
  for (const auto& p : bundle.profiles) {
    const double sim = cosine(h, p.anchor);
    if (best == nullptr || sim > best_sim || (sim == best_sim && p.algorithm_id < best->algorithm_id)) {
      best = &p;
      best_sim = sim;
    }
  }
  SteerDecision decision;
  decision.layer = bundle.layer;
  decision.similarity = best_sim;
  if (best_sim >= cfg.match_threshold) {
    decision.chosen = best->algorithm_id;
    decision.applied_strength = best->strength * cfg.beta;
  }
  return decision;
}

namespace detail {

inline const StrategyProfile& chosen_profile(const SteerDecision& decision, const StrategyBundle& bundle) {
  const auto* p = bundle.find(*decision.chosen);
  if (p == nullptr) {
    fail(ErrorKind::contract_violation, "decision names '" + *decision.chosen + "' which is not in the bundle");
  }
  return *p;
}

}  // namespace detail

/// h + applied_strength * v_chosen; returns h unchanged when nothing was chosen.
inline Vector apply_steer(const Vector& h, const SteerDecision& decision, const StrategyBundle& bundle) {
  if (static_cast<std::size_t>(h.size()) != bundle.hidden_dim) {
    fail(ErrorKind::contract_violation, "state length " + std::to_string(h.size()) + " != bundle hidden-dim " +
                                            std::to_string(bundle.hidden_dim));
  }
  if (!decision.chosen) return h;
  return h + decision.applied_strength * detail::chosen_profile(decision, bundle).steer;
}

/// Float32 in-place variant used inside model hooks.
inline void apply_steer(std::span<float> h, const SteerDecision& decision, const StrategyBundle& bundle) {
  if (h.size() != bundle.hidden_dim) {
    fail(ErrorKind::contract_violation, "state length " + std::to_string(h.size()) + " != bundle hidden-dim " +
                                            std::to_string(bundle.hidden_dim));
  }
  if (!decision.chosen) return;
  const auto& v = detail::chosen_profile(decision, bundle).steer;
  for (std::size_t k = 0; k < h.size(); ++k) {
    h[k] = static_cast<float>(h[k] + decision.applied_strength * v[static_cast<Eigen::Index>(k)]);
  }
}

inline void check_model_compatible(const LanguageModel& model, const StrategyBundle& bundle) {
  if (!model.supports_layer_hooks()) {
    fail(ErrorKind::capability, "model '" + model.model_id() + "' does not expose layer output hooks");
  }
  if (bundle.hidden_dim != model.hidden_dim()) {
    fail(ErrorKind::contract_violation, "bundle hidden-dim " + std::to_string(bundle.hidden_dim) +
                                            " != model hidden size " + std::to_string(model.hidden_dim()));
  }
  if (bundle.layer >= model.num_layers()) {
    fail(ErrorKind::contract_violation, "bundle layer " + std::to_string(bundle.layer) + " >= model depth " +
                                            std::to_string(model.num_layers()));
  }
}

/// Matches once on the final prompt-token activation at the bundle layer.
inline SteerDecision decide_for_prompt(const LanguageModel& model, std::span<const Token> prompt,
                                       const StrategyBundle& bundle, const SteerConfig& cfg) {
  check_model_compatible(model, bundle);
  if (prompt.empty()) fail(ErrorKind::input, "prompt must contain at least one token");
  const auto trace = model.forward(prompt);
  return match_strategy(to_vector(trace.block_output(bundle.layer, prompt.size() - 1)), bundle, cfg);
}

/// Hook injecting the decision at the bundle layer under the position policy.
inline LayerOutputTransform make_steer_hook(const SteerDecision& decision, const StrategyBundle& bundle,
                                            const SteerConfig& cfg, std::size_t prompt_length) {
  if (!decision.chosen) return {};
  const std::size_t first = cfg.positions == SteerPositions::all_positions ? 0 : prompt_length - 1;
  return [decision, &bundle, first](std::size_t layer, std::size_t position, std::span<float> state) {
    if (layer == bundle.layer && position >= first) apply_steer(state, decision, bundle);
  };
}

struct SteerResult {
  std::vector<Token> tokens;
  SteerDecision decision;
};

inline SteerResult steer_generate(const LanguageModel& model, std::span<const Token> prompt,
                                  const StrategyBundle& bundle, const SteerConfig& cfg, std::size_t max_new) {
  SteerResult result;
  result.decision = decide_for_prompt(model, prompt, bundle, cfg);
  const auto hook = make_steer_hook(result.decision, bundle, cfg, prompt.size());
  result.tokens = decode_greedy(model, prompt, max_new, hook);
  return result;
}

}  // namespace masteer
