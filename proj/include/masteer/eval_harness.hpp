#pragma once

// AB-choice accuracy and the strength / layer sweeps.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "masteer/activation_store.hpp"
#include "masteer/core.hpp"
#include "masteer/model.hpp"
#include "masteer/steering_runtime.hpp"
#include "masteer/strategy_builder.hpp"
#include "masteer/toy_transformer.hpp"

namespace masteer {

struct ABItem {
  std::string question;
  std::string option_a;
  std::string option_b;
  char correct = 'A';

  bool operator==(const ABItem&) const = default;

  void validate() const {
    if (option_a == option_b) fail(ErrorKind::invalid_data, "AB item options are identical");
    if (correct != 'A' && correct != 'B') fail(ErrorKind::invalid_data, "AB item answer must be A or B");
  }
};

/// One item per sample, matching_behavior being the correct option. Correct
/// positions follow a seeded shuffle of the samples, then alternate A, B, A, ...
inline std::vector<ABItem> normalize_ab(const std::vector<SteerSample>& samples, std::uint64_t seed) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<ABItem> items(samples.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& s = samples[order[k]];
    validate_sample(s);
    auto& item = items[order[k]];
    item.question = s.question;
    item.correct = k % 2 == 0 ? 'A' : 'B';
    item.option_a = item.correct == 'A' ? s.matching_behavior : s.not_matching_behavior;
    item.option_b = item.correct == 'A' ? s.not_matching_behavior : s.matching_behavior;
  }
  return items;
}

inline nlohmann::json ab_item_json(const ABItem& item) {
  return {{"question", item.question},
          {"option_a", item.option_a},
          {"option_b", item.option_b},
          {"correct", std::string(1, item.correct)}};
}

inline void save_ab_items(const std::vector<ABItem>& items, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + file.string());
  for (const auto& item : items) out << ab_item_json(item).dump() << '\n';
}

/// One JSON object per line: question, option_a, option_b, correct ("A" or "B").
inline std::vector<ABItem> load_ab_items(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + file.string());
  std::vector<ABItem> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ABItem item{j.at("question").get<std::string>(), j.at("option_a").get<std::string>(),
                  j.at("option_b").get<std::string>(), 0};
      const auto answer = j.at("correct").get<std::string>();
      if (answer.size() == 1) item.correct = answer[0];
      item.validate();
      items.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::invalid_data, file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      fail(ErrorKind::invalid_data, file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return items;
}

inline std::string format_ab_prompt(const ABItem& item) {
  return "Question: " + item.question + "\n(A) " + item.option_a + "\n(B) " + item.option_b + "\nAnswer: ";
}

/// A model plus the text encoding used to drive it.
struct EvalModel {
  const LanguageModel& model;
  std::function<std::vector<Token>(std::string_view)> encode;

  explicit EvalModel(const LanguageModel& m) : model(m) {
    encode = [&m](std::string_view text) { return encode_text(text, m.vocab_size()); };
  }
  EvalModel(const LanguageModel& m, std::function<std::vector<Token>(std::string_view)> enc)
      : model(m), encode(std::move(enc)) {}
};

struct ItemRecord {
  std::size_t index = 0;
  bool correct = false;
  double score_a = 0.0;
  double score_b = 0.0;
  std::optional<std::string> chosen;  // strategy applied, if any
  double similarity = 0.0;
  std::string error;
};

struct EvalResult {
  double accuracy = 0.0;
  std::size_t n = 0;
  std::size_t num_correct = 0;
  std::vector<ItemRecord> records;
  std::map<std::string, std::size_t> histogram;  // strategy -> count; "none" when nothing applied
};

namespace detail {

inline double log_softmax_at(std::span<const float> logits, std::size_t token) {
  double mx = logits[0];
  for (float x : logits) mx = std::max(mx, static_cast<double>(x));
  double total = 0.0;
  for (float x : logits) total += std::exp(static_cast<double>(x) - mx);
  return static_cast<double>(logits[token]) - mx - std::log(total);
}

inline ItemRecord score_item(const EvalModel& em, const ABItem& item, const StrategyBundle* bundle,
                             const SteerConfig& cfg) {
  ItemRecord rec;
  item.validate();
  const auto prompt = keep_tail(em.encode(format_ab_prompt(item)), em.model.max_sequence());
  const auto first_a = em.encode(item.option_a);
  const auto first_b = em.encode(item.option_b);
  if (prompt.empty() || first_a.empty() || first_b.empty()) fail(ErrorKind::input, "item encodes to no tokens");
  LayerOutputTransform hook;
  SteerDecision decision;
  if (bundle != nullptr) {
    decision = decide_for_prompt(em.model, prompt, *bundle, cfg);
    hook = make_steer_hook(decision, *bundle, cfg, prompt.size());
    rec.chosen = decision.chosen;
    rec.similarity = decision.similarity;
  }
  const auto trace = em.model.forward(prompt, hook);
  const auto logits = trace.logits_at(prompt.size() - 1);
  rec.score_a = log_softmax_at(logits, static_cast<std::size_t>(first_a.front()));
  rec.score_b = log_softmax_at(logits, static_cast<std::size_t>(first_b.front()));
  rec.correct = item.correct == 'A' ? rec.score_a > rec.score_b : rec.score_b > rec.score_a;
  return rec;
}

}  // namespace detail

/// Base-model accuracy when `bundle` is null. An item counts as correct when
/// the correct option's first token is strictly more likely.
inline EvalResult evaluate_accuracy(const EvalModel& em, const std::vector<ABItem>& items,
                                    const StrategyBundle* bundle, const SteerConfig& cfg = {}) {
  if (items.empty()) fail(ErrorKind::input, "accuracy is undefined for an empty item list");
  if (bundle != nullptr) {
    cfg.validate();
    check_model_compatible(em.model, *bundle);
  }
  EvalResult out;
  out.n = items.size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    ItemRecord rec;
    try {
      rec = detail::score_item(em, items[i], bundle, cfg);
    } catch (const std::exception& e) {
      rec = ItemRecord{};
      rec.error = e.what();
    }
    rec.index = i;
    if (rec.correct) ++out.num_correct;
    ++out.histogram[rec.chosen.value_or("none")];
    out.records.push_back(std::move(rec));
  }
  out.accuracy = static_cast<double>(out.num_correct) / static_cast<double>(out.n);
  return out;
}

enum class SweepAxis { layer, alpha, beta };

inline std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::layer: return "layer";
    case SweepAxis::alpha: return "alpha";
    case SweepAxis::beta: return "beta";
  }
  return "?";
}

struct SweepPoint {
  double setting = 0.0;
  bool available = true;
  std::string note;
  EvalResult result;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::beta;
  std::vector<SweepPoint> points;
  std::optional<std::size_t> argmin_layer;  // layer sweeps: the layer selection would pick
};

inline void check_grid(const std::vector<double>& grid) {
  if (grid.empty()) fail(ErrorKind::config, "sweep grid must not be empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!std::isfinite(grid[i])) fail(ErrorKind::config, "sweep grid values must be finite");
    if (i > 0 && !(grid[i] > grid[i - 1])) fail(ErrorKind::config, "sweep grid must be strictly increasing");
  }
}

enum class StrengthMode { fixed_alpha, beta_scale };

/// fixed_alpha replaces every profile's strength by the grid value (beta from
/// `cfg`); beta_scale keeps the strengths and sets beta to the grid value.
inline SweepResult sweep_strength(const EvalModel& em, const std::vector<ABItem>& items, const StrategyBundle& bundle,
                                  StrengthMode mode, const std::vector<double>& grid, const SteerConfig& cfg = {}) {
  check_grid(grid);
  SweepResult out;
  out.axis = mode == StrengthMode::fixed_alpha ? SweepAxis::alpha : SweepAxis::beta;
  for (double value : grid) {
    SweepPoint point;
    point.setting = value;
    if (mode == StrengthMode::fixed_alpha) {
      auto b = bundle;
      for (auto& p : b.profiles) p.strength = value;
      point.result = evaluate_accuracy(em, items, &b, cfg);
    } else {
      auto c = cfg;
      c.beta = value;
      point.result = evaluate_accuracy(em, items, &bundle, c);
    }
    out.points.push_back(std::move(point));
  }
  return out;
}

/// Rebuilds the profiles at each forced layer in [first, last] and evaluates.
/// Layers without a usable direction or strategy become unavailable points.
inline SweepResult sweep_layers(const EvalModel& em, const std::vector<ABItem>& items, const ActivationSet& acts,
                                const AlgorithmRegistry& registry, double tau, std::size_t first, std::size_t last,
                                const SteerConfig& cfg = {}) {
  acts.validate();
  if (first > last) fail(ErrorKind::config, "layer range is empty");
  if (last >= em.model.num_layers() || last >= acts.num_layers) {
    fail(ErrorKind::config, "layer range exceeds model depth " + std::to_string(em.model.num_layers()));
  }
  if (acts.hidden_dim != em.model.hidden_dim()) {
    fail(ErrorKind::contract_violation, "activation hidden-dim " + std::to_string(acts.hidden_dim) +
                                            " != model hidden size " + std::to_string(em.model.hidden_dim()));
  }
  SweepResult out;
  out.axis = SweepAxis::layer;
  try {
    out.argmin_layer = select_layer(acts, registry, tau).layer;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::no_viable_layer) throw;
  }
  for (std::size_t l = first; l <= last; ++l) {
    SweepPoint point;
    point.setting = static_cast<double>(l);
    try {
      const auto built = build_bundle_at_layer(acts, registry, tau, l);
      point.result = evaluate_accuracy(em, items, &built.bundle, cfg);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::no_viable_layer && e.kind() != ErrorKind::no_viable_strategy &&
          e.kind() != ErrorKind::degenerate_direction) {
        throw;
      }
      point.available = false;
      point.note = std::string(to_string(e.kind())) + ": " + e.what();
    }
    out.points.push_back(std::move(point));
  }
  return out;
}

inline std::string format_histogram(const std::map<std::string, std::size_t>& h) {
  std::string out;
  for (const auto& [id, n] : h) out += (out.empty() ? "" : ";") + id + ":" + std::to_string(n);
  return out;
}

inline std::string format_setting(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

/// `setting,accuracy,n,chosen_strategy_histogram`; unavailable points show NA.
inline std::string sweep_csv(const SweepResult& r) {
  std::ostringstream out;
  out.precision(17);
  out << "setting,accuracy,n,chosen_strategy_histogram\n";
  for (const auto& p : r.points) {
    out << format_setting(p.setting) << ',';
    if (p.available) {
      out << p.result.accuracy << ',' << p.result.n << ',' << format_histogram(p.result.histogram) << '\n';
    } else {
      out << "NA,0,\n";
    }
  }
  return out.str();
}

inline nlohmann::json eval_json(const EvalResult& r) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& rec : r.records) {
    nlohmann::json j = {{"index", rec.index},
                        {"correct", rec.correct},
                        {"score_a", rec.score_a},
                        {"score_b", rec.score_b},
                        {"chosen", rec.chosen ? nlohmann::json(*rec.chosen) : nlohmann::json(nullptr)},
                        {"similarity", rec.similarity}};
    if (!rec.error.empty()) j["error"] = rec.error;
    records.push_back(std::move(j));
  }
  return {{"accuracy", r.accuracy},
          {"n", r.n},
          {"correct", r.num_correct},
          {"histogram", r.histogram},
          {"records", records}};
}

inline nlohmann::json sweep_json(const SweepResult& r) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : r.points) {
    nlohmann::json j = {{"setting", p.setting}, {"available", p.available}};
    if (p.available) {
      j["accuracy"] = p.result.accuracy;
      j["n"] = p.result.n;
      j["histogram"] = p.result.histogram;
    } else {
      j["note"] = p.note;
    }
    points.push_back(std::move(j));
  }
  nlohmann::json out = {{"axis", to_string(r.axis)}, {"points", points}};
  if (r.argmin_layer) out["argmin_layer"] = *r.argmin_layer;
  return out;
}

}  // namespace masteer
