#pragma once

// Multi-agent steer-sample generation: Analyst -> Retriever -> Writer <-> Reviewer.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "masteer/activation_store.hpp"
#include "masteer/chat_client.hpp"
#include "masteer/core.hpp"
#include "masteer/prompts.hpp"

namespace masteer {

using ojson = nlohmann::ordered_json;

struct IssueSpec {
  std::string issue;
  std::size_t num_categories = 10;
  std::size_t scopes_per_category = 10;
  std::size_t refs_per_scope = 10;

  void validate() const {
    if (issue.empty()) fail(ErrorKind::config, "issue must not be empty");
    if (num_categories < 1 || scopes_per_category < 1 || refs_per_scope < 1) {
      fail(ErrorKind::config, "category, scope and reference counts must be at least 1");
    }
  }
};

struct PipelineOptions {
  std::size_t retry_cap = 3;    // extra requests after a malformed reply or a reference shortfall
  std::size_t rewrite_cap = 3;  // rewrites per sample before it is dropped
};

struct ScopePlan {
  std::string name;
  std::string description;
};

struct CategoryEntry {
  std::string name;
  std::vector<ScopePlan> scopes;
};

/// Categories and scopes in the order the analyst listed them.
struct CategoryPlan {
  std::vector<CategoryEntry> categories;

  std::vector<std::string> category_names() const {
    std::vector<std::string> out;
    for (const auto& c : categories) out.push_back(c.name);
    return out;
  }
};

struct ReferenceItem {
  std::string source;
  std::string context;

  bool operator==(const ReferenceItem&) const = default;
};

inline constexpr std::array<std::string_view, 3> kRubricAxes = {"Relevance", "Steerability", "Learnability"};
inline constexpr std::array<std::array<std::string_view, 3>, 3> kRubricAspects = {{
    {"IssueAlignment", "CatCoverage", "ScopeSpecificity"},
    {"SignalClarity", "DirectionalStrength", "Uniqueness"},
    {"PromptClarity", "LabelCorrectness", "StructuralQuality"},
}};

using ScoreGrid = std::array<std::array<int, 3>, 3>;

/// Every axis mean >= 1.5, i.e. every axis sum >= 4.5, kept in integers.
inline bool rubric_pass(const ScoreGrid& scores) {
  for (const auto& axis : scores) {
    if (2 * (axis[0] + axis[1] + axis[2]) < 9) return false;
  }
  return true;
}

struct ReviewVerdict {
  bool pass = false;
  std::optional<bool> reported_pass;  // the reviewer's own claim, kept for auditing only
  ScoreGrid scores{};
  std::array<std::array<std::string, 3>, 3> reasons;

  double axis_mean(std::size_t axis) const {
    return (scores[axis][0] + scores[axis][1] + scores[axis][2]) / 3.0;
  }

  ojson to_json() const {
    ojson score = ojson::object();
    for (std::size_t a = 0; a < 3; ++a) {
      ojson axis = ojson::object();
      for (std::size_t k = 0; k < 3; ++k) {
        axis[std::string(kRubricAspects[a][k])] = {{"score", scores[a][k]}, {"reason", reasons[a][k]}};
      }
      score[std::string(kRubricAxes[a])] = std::move(axis);
    }
    return {{"result", pass ? "Pass" : "Fail"}, {"score", std::move(score)}};
  }
};

/// Raised when an agent's replies stay unusable; carries every raw reply seen.
class PipelineError : public Error {
 public:
  PipelineError(const std::string& message, std::vector<std::string> transcript)
      : Error(ErrorKind::pipeline, message), transcript_(std::move(transcript)) {}

  const std::vector<std::string>& transcript() const noexcept { return transcript_; }

 private:
  std::vector<std::string> transcript_;
};

struct AgentPrompts {
  std::string analyst{prompts::kAnalyst};
  std::string retriever{prompts::kRetriever};
  std::string writer{prompts::kWriter};
  std::string reviewer{prompts::kReviewer};
};

/// Reads analyst.txt, retriever.txt, writer.txt and reviewer.txt from `dir`.
inline AgentPrompts load_prompts(const std::filesystem::path& dir) {
  auto read = [&](const char* name) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open prompt template " + (dir / name).string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  return {read("analyst.txt"), read("retriever.txt"), read("writer.txt"), read("reviewer.txt")};
}

// ---------------------------------------------------------------------------
// Reply parsing

/// Thrown for a reply that does not match the expected schema.
class ReplyRejected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// Offset one past the bracket that closes the one at `start`, or npos.
inline std::size_t balanced_end(const std::string& text, std::size_t start) {
  std::vector<char> stack;
  bool in_string = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{' || c == '[') stack.push_back(c == '{' ? '}' : ']');
    else if (c == '}' || c == ']') {
      if (stack.empty() || stack.back() != c) return std::string::npos;
      stack.pop_back();
      if (stack.empty()) return i + 1;
    }
  }
  return std::string::npos;
}

inline ojson parse_strict(const std::string& text) {
  std::vector<std::set<std::string>> keys;
  ojson::parser_callback_t cb = [&keys](int, ojson::parse_event_t event, ojson& parsed) {
    if (event == ojson::parse_event_t::object_start) {
      keys.emplace_back();
    } else if (event == ojson::parse_event_t::object_end) {
      keys.pop_back();
    } else if (event == ojson::parse_event_t::key) {
      if (!keys.back().insert(parsed.get<std::string>()).second) {
        throw ReplyRejected("duplicate key '" + parsed.get<std::string>() + "'");
      }
    }
    return true;
  };
  return ojson::parse(text, cb);
}

}  // namespace detail

/// First well-formed JSON object or array embedded in `text`. Markdown fences
/// and surrounding prose are ignored; duplicate object keys are rejected.
inline ojson extract_json(const std::string& text) {
  std::string last_error = "no JSON object or array found";
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '{' && text[i] != '[') continue;
    const auto end = detail::balanced_end(text, i);
    if (end == std::string::npos) continue;
    try {
      return detail::parse_strict(text.substr(i, end - i));
    } catch (const ReplyRejected&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      last_error = e.what();
    }
  }
  throw ReplyRejected(last_error);
}

namespace detail {

inline std::string nonempty_string(const ojson& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string() || it->get<std::string>().empty()) {
    throw ReplyRejected(std::string("missing or empty '") + key + "'");
  }
  return it->get<std::string>();
}

// Depth-first search for the first object holding `key`.
inline const ojson* find_object_with(const ojson& j, const char* key) {
  if (j.is_object() && j.contains(key)) return &j;
  if (j.is_structured()) {
    for (const auto& child : j) {
      if (const auto* hit = find_object_with(child, key)) return hit;
    }
  }
  return nullptr;
}

}  // namespace detail

inline CategoryPlan parse_plan(const std::string& reply, const IssueSpec& spec) {
  const auto j = extract_json(reply);
  if (!j.is_object()) throw ReplyRejected("plan must be a JSON object");
  CategoryPlan plan;
  for (const auto& [cat, scopes] : j.items()) {
    if (cat.empty()) throw ReplyRejected("empty category name");
    if (!scopes.is_object()) throw ReplyRejected("category '" + cat + "' must map scopes to descriptions");
    CategoryEntry entry{cat, {}};
    for (const auto& [scope, desc] : scopes.items()) {
      if (scope.empty()) throw ReplyRejected("empty scope name in '" + cat + "'");
      if (!desc.is_string() || desc.get<std::string>().empty()) {
        throw ReplyRejected("scope '" + scope + "' in '" + cat + "' has no description");
      }
      entry.scopes.push_back({scope, desc.get<std::string>()});
    }
    if (entry.scopes.size() != spec.scopes_per_category) {
      throw ReplyRejected("category '" + cat + "' has " + std::to_string(entry.scopes.size()) + " scopes, expected " +
                          std::to_string(spec.scopes_per_category));
    }
    plan.categories.push_back(std::move(entry));
  }
  if (plan.categories.size() != spec.num_categories) {
    throw ReplyRejected("got " + std::to_string(plan.categories.size()) + " categories, expected " +
                        std::to_string(spec.num_categories));
  }
  return plan;
}

struct ParsedRefs {
  std::vector<ReferenceItem> items;
  std::size_t malformed = 0;
};

/// Accepts {scope: {"1": item, ...}}, {scope: [item, ...]}, {"1": item, ...} or [item, ...].
inline ParsedRefs parse_refs(const std::string& reply, const std::string& scope) {
  auto j = extract_json(reply);
  if (j.is_object() && j.contains(scope)) {
    j = j.at(scope);
  } else if (j.is_object() && j.size() == 1 && j.begin()->is_structured() && !j.contains("source")) {
    const auto& inner = *j.begin();
    if (inner.is_array() || (inner.is_object() && !inner.empty() && inner.begin()->is_object())) j = inner;
  }
  if (!j.is_structured()) throw ReplyRejected("reference list must be an object or array");
  ParsedRefs out;
  for (const auto& item : j) {
    if (!item.is_object()) {
      ++out.malformed;
      continue;
    }
    try {
      out.items.push_back({detail::nonempty_string(item, "source"), detail::nonempty_string(item, "context")});
    } catch (const ReplyRejected&) {
      ++out.malformed;
    }
  }
  return out;
}

inline SteerSample parse_written_sample(const std::string& reply) {
  const auto j = extract_json(reply);
  const auto* obj = detail::find_object_with(j, "question");
  if (obj == nullptr) throw ReplyRejected("no object with a 'question' field");
  SteerSample s;
  s.question = detail::nonempty_string(*obj, "question");
  s.matching_behavior = detail::nonempty_string(*obj, "matching_behavior");
  s.not_matching_behavior = detail::nonempty_string(*obj, "not_matching_behavior");
  s.source = detail::nonempty_string(*obj, "source");
  if (s.matching_behavior == s.not_matching_behavior) throw ReplyRejected("behaviors are identical");
  return s;
}

/// The pass flag is recomputed from the sub-scores; the reviewer's own
/// "result" is only recorded.
inline ReviewVerdict parse_review(const std::string& reply, const std::string& sample_id) {
  const auto j = extract_json(reply);
  const ojson* entry = nullptr;
  if (j.is_array()) {
    for (const auto& e : j) {
      if (e.is_object() && e.value("id", std::string()) == sample_id) entry = &e;
    }
    if (entry == nullptr && j.size() == 1) entry = &j[0];
  } else if (j.is_object()) {
    entry = &j;
  }
  if (entry == nullptr || !entry->is_object()) throw ReplyRejected("no review entry for '" + sample_id + "'");
  const auto score_it = entry->find("score");
  if (score_it == entry->end() || !score_it->is_object()) throw ReplyRejected("review has no score object");
  ReviewVerdict v;
  for (std::size_t a = 0; a < 3; ++a) {
    const std::string axis_name(kRubricAxes[a]);
    const auto axis = score_it->find(axis_name);
    if (axis == score_it->end() || !axis->is_object()) throw ReplyRejected("missing axis " + axis_name);
    for (std::size_t k = 0; k < 3; ++k) {
      const std::string aspect(kRubricAspects[a][k]);
      const auto cell = axis->find(aspect);
      if (cell == axis->end()) throw ReplyRejected("missing sub-score " + axis_name + "." + aspect);
      const ojson& value = cell->is_object() ? cell->value("score", ojson()) : *cell;
      if (!value.is_number_integer()) throw ReplyRejected(axis_name + "." + aspect + " is not an integer");
      const auto n = value.get<long long>();
      if (n < 0 || n > 2) throw ReplyRejected(axis_name + "." + aspect + " outside 0..2");
      v.scores[a][k] = static_cast<int>(n);
      if (cell->is_object() && cell->contains("reason") && (*cell)["reason"].is_string()) {
        v.reasons[a][k] = (*cell)["reason"].get<std::string>();
      }
    }
  }
  if (auto r = entry->find("result"); r != entry->end() && r->is_string()) {
    const auto text = r->get<std::string>();
    if (text == "Pass" || text == "pass") v.reported_pass = true;
    if (text == "Fail" || text == "fail") v.reported_pass = false;
  }
  v.pass = rubric_pass(v.scores);
  return v;
}

// ---------------------------------------------------------------------------
// Agents

struct CallCounts {
  std::size_t analyst = 0;
  std::size_t retriever = 0;
  std::size_t writer = 0;
  std::size_t reviewer = 0;
};

/// Shared state for one pipeline run.
struct AgentContext {
  ChatClient& client;
  AgentPrompts prompts;
  PipelineOptions options;
  CallCounts calls;
};

namespace detail {

template <class Parse>
auto ask_until_parsed(const std::string& system, ojson payload, std::size_t retry_cap, std::size_t& counter,
                      ChatClient& client, const std::string& what, Parse parse) {
  std::vector<std::string> transcript;
  std::string last_reason;
  for (std::size_t attempt = 0; attempt <= retry_cap; ++attempt) {
    payload["attempt"] = attempt;
    ++counter;
    transcript.push_back(client.send(system, payload.dump()));
    try {
      return parse(transcript.back());
    } catch (const ReplyRejected& e) {
      last_reason = e.what();
    }
  }
  throw PipelineError(what + ": unusable reply after " + std::to_string(retry_cap + 1) + " attempts (" +
                          last_reason + ")",
                      std::move(transcript));
}

inline ojson names_except(const std::vector<std::string>& names, const std::string& skip) {
  ojson out = ojson::array();
  for (const auto& n : names) {
    if (n != skip) out.push_back(n);
  }
  return out;
}

inline ojson scope_names_except(const CategoryEntry& cat, const std::string& skip) {
  ojson out = ojson::array();
  for (const auto& s : cat.scopes) {
    if (s.name != skip) out.push_back(s.name);
  }
  return out;
}

inline ojson sample_json(const SteerSample& s) {
  return {{"id", s.id},
          {"question", s.question},
          {"matching_behavior", s.matching_behavior},
          {"not_matching_behavior", s.not_matching_behavior},
          {"source", s.source}};
}

}  // namespace detail

inline CategoryPlan analyst_decompose(AgentContext& ctx, const IssueSpec& spec) {
  spec.validate();
  const ojson payload = {{"issue", spec.issue},
                         {"num_of_cat", spec.num_categories},
                         {"num_of_scope", spec.scopes_per_category}};
  return detail::ask_until_parsed(ctx.prompts.analyst, payload, ctx.options.retry_cap, ctx.calls.analyst,
                                  ctx.client, "analyst", [&](const std::string& r) { return parse_plan(r, spec); });
}

/// Where to write, and what to avoid overlapping with.
struct ScopeContext {
  std::string issue;
  const CategoryPlan* plan = nullptr;
  const CategoryEntry* category = nullptr;
  const ScopePlan* scope = nullptr;
};

struct RetrievalResult {
  std::vector<ReferenceItem> items;
  std::size_t dropped = 0;  // malformed or duplicate items
  std::optional<std::string> warning;
};

/// Requests references until `wanted` well-formed distinct items exist or the
/// retry cap is spent; a shortfall is reported, not fatal.
inline RetrievalResult retrieve_refs(AgentContext& ctx, const ScopeContext& where, std::size_t wanted) {
  RetrievalResult out;
  std::set<std::pair<std::string, std::string>> seen;
  ojson payload = {{"issue", where.issue},
                   {"cat", where.category->name},
                   {"scope", where.scope->name},
                   {"scope_desc", where.scope->description},
                   {"all_scopes", detail::scope_names_except(*where.category, where.scope->name)},
                   {"all_cates", detail::names_except(where.plan->category_names(), where.category->name)}};
  for (std::size_t attempt = 0; attempt <= ctx.options.retry_cap && out.items.size() < wanted; ++attempt) {
    payload["num_examples"] = wanted - out.items.size();
    payload["attempt"] = attempt;
    ++ctx.calls.retriever;
    const auto reply = ctx.client.send(ctx.prompts.retriever, payload.dump());
    ParsedRefs parsed;
    try {
      parsed = parse_refs(reply, where.scope->name);
    } catch (const ReplyRejected&) {
      continue;
    }
    out.dropped += parsed.malformed;
    for (auto& item : parsed.items) {
      if (out.items.size() == wanted) break;
      if (!seen.insert({item.source, item.context}).second) {
        ++out.dropped;
        continue;
      }
      out.items.push_back(std::move(item));
    }
  }
  if (out.items.size() < wanted) {
    out.warning = "scope '" + where.scope->name + "' in '" + where.category->name + "': " +
                  std::to_string(out.items.size()) + " of " + std::to_string(wanted) + " references after retries";
  }
  return out;
}

/// Initial draft when `previous` is empty, otherwise a rewrite that receives
/// the previous sample together with the full review.
inline SteerSample write_sample(AgentContext& ctx, const ScopeContext& where, const ReferenceItem& ref,
                                const std::optional<std::pair<SteerSample, ReviewVerdict>>& previous = {}) {
  ojson payload = {{"mode", previous ? "rewrite" : "initial"},
                   {"issue", where.issue},
                   {"cat", where.category->name},
                   {"scope", where.scope->name},
                   {"refs", {{"source", ref.source}, {"context", ref.context}}},
                   {"all_cates", detail::names_except(where.plan->category_names(), where.category->name)},
                   {"all_scopes", detail::scope_names_except(*where.category, where.scope->name)}};
  if (previous) {
    payload["sample"] = detail::sample_json(previous->first);
    payload["review"] = previous->second.to_json();
  }
  auto s = detail::ask_until_parsed(ctx.prompts.writer, payload, ctx.options.retry_cap, ctx.calls.writer, ctx.client,
                                    "writer", parse_written_sample);
  s.category = where.category->name;
  s.scope = where.scope->name;
  return s;
}

inline ReviewVerdict review_sample(AgentContext& ctx, const ScopeContext& where, const SteerSample& s) {
  const ojson payload = {{"issue", where.issue},
                         {"cat", where.category->name},
                         {"scope", where.scope->name},
                         {"all_cates", detail::names_except(where.plan->category_names(), where.category->name)},
                         {"all_scopes", detail::scope_names_except(*where.category, where.scope->name)},
                         {"samples_json", ojson::array({detail::sample_json(s)})}};
  return detail::ask_until_parsed(ctx.prompts.reviewer, payload, ctx.options.retry_cap, ctx.calls.reviewer,
                                  ctx.client, "reviewer",
                                  [&](const std::string& r) { return parse_review(r, s.id); });
}

// ---------------------------------------------------------------------------
// Full run

struct DroppedSample {
  std::string id;
  std::string category;
  std::string scope;
  std::string reason;
  std::size_t rewrites = 0;
};

struct VerdictDiscrepancy {
  std::string id;
  std::size_t round = 0;
  bool reported = false;
  bool recomputed = false;
};

struct RunReport {
  IssueSpec spec;
  PipelineOptions options;
  std::size_t refs_requested = 0;
  std::size_t refs_obtained = 0;
  std::size_t refs_dropped = 0;
  std::size_t drafts = 0;
  std::size_t accepted = 0;
  std::size_t first_pass = 0;
  std::vector<std::pair<std::string, std::size_t>> rewrite_counts;  // accepted samples, in corpus order
  std::vector<DroppedSample> dropped;
  std::vector<std::string> warnings;
  std::vector<VerdictDiscrepancy> discrepancies;
  CallCounts calls;

  double acceptance_rate() const { return drafts == 0 ? 0.0 : static_cast<double>(accepted) / drafts; }

  ojson to_json() const {
    ojson j;
    j["issue"] = spec.issue;
    j["num_categories"] = spec.num_categories;
    j["scopes_per_category"] = spec.scopes_per_category;
    j["refs_per_scope"] = spec.refs_per_scope;
    j["retry_cap"] = options.retry_cap;
    j["rewrite_cap"] = options.rewrite_cap;
    j["refs_requested"] = refs_requested;
    j["refs_obtained"] = refs_obtained;
    j["refs_dropped"] = refs_dropped;
    j["drafts"] = drafts;
    j["accepted"] = accepted;
    j["first_pass"] = first_pass;
    j["acceptance_rate"] = acceptance_rate();
    j["rewrite_counts"] = ojson::object();
    for (const auto& [id, n] : rewrite_counts) j["rewrite_counts"][id] = n;
    j["dropped"] = ojson::array();
    for (const auto& d : dropped) {
      j["dropped"].push_back(
          {{"id", d.id}, {"category", d.category}, {"scope", d.scope}, {"reason", d.reason}, {"rewrites", d.rewrites}});
    }
    j["warnings"] = warnings;
    j["verdict_discrepancies"] = ojson::array();
    for (const auto& d : discrepancies) {
      j["verdict_discrepancies"].push_back(
          {{"id", d.id}, {"round", d.round}, {"reported", d.reported}, {"recomputed", d.recomputed}});
    }
    j["calls"] = {{"analyst", calls.analyst},
                  {"retriever", calls.retriever},
                  {"writer", calls.writer},
                  {"reviewer", calls.reviewer}};
    return j;
  }
};

struct PipelineResult {
  CategoryPlan plan;
  SampleCorpus corpus;
  RunReport report;
};

inline std::string sample_id(std::size_t cat, std::size_t scope, std::size_t ref) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "c%02zu-s%02zu-r%02zu", cat + 1, scope + 1, ref + 1);
  return buf;
}

inline PipelineResult run_pipeline(ChatClient& client, const IssueSpec& spec, const PipelineOptions& options = {},
                                   AgentPrompts prompts = {}) {
  spec.validate();
  AgentContext ctx{client, std::move(prompts), options, {}};
  PipelineResult result;
  auto& report = result.report;
  report.spec = spec;
  report.options = options;

  result.plan = analyst_decompose(ctx, spec);
  auto& corpus = result.corpus;
  corpus.issue = spec.issue;
  corpus.categories = result.plan.category_names();
  std::set<std::string> scope_seen;

  for (std::size_t ci = 0; ci < result.plan.categories.size(); ++ci) {
    const auto& cat = result.plan.categories[ci];
    for (std::size_t si = 0; si < cat.scopes.size(); ++si) {
      const ScopeContext where{spec.issue, &result.plan, &cat, &cat.scopes[si]};
      if (scope_seen.insert(cat.scopes[si].name).second) corpus.scopes.push_back(cat.scopes[si].name);

      auto refs = retrieve_refs(ctx, where, spec.refs_per_scope);
      report.refs_requested += spec.refs_per_scope;
      report.refs_obtained += refs.items.size();
      report.refs_dropped += refs.dropped;
      if (refs.warning) report.warnings.push_back(*refs.warning);

      for (std::size_t ri = 0; ri < refs.items.size(); ++ri) {
        const auto id = sample_id(ci, si, ri);
        ++report.drafts;
        std::size_t rewrites = 0;
        auto drop = [&](std::string reason) {
          report.dropped.push_back({id, cat.name, cat.scopes[si].name, std::move(reason), rewrites});
        };
        try {
          auto sample = write_sample(ctx, where, refs.items[ri]);
          sample.id = id;
          auto verdict = review_sample(ctx, where, sample);
          for (;;) {
            if (verdict.reported_pass && *verdict.reported_pass != verdict.pass) {
              report.discrepancies.push_back({id, rewrites, *verdict.reported_pass, verdict.pass});
            }
            if (verdict.pass) break;
            if (rewrites == options.rewrite_cap) break;
            sample = write_sample(ctx, where, refs.items[ri], std::make_pair(sample, verdict));
            sample.id = id;
            ++rewrites;
            verdict = review_sample(ctx, where, sample);
          }
          if (!verdict.pass) {
            drop("rewrite cap reached");
            continue;
          }
          if (rewrites == 0) ++report.first_pass;
          ++report.accepted;
          report.rewrite_counts.emplace_back(id, rewrites);
          corpus.samples.push_back(std::move(sample));
        } catch (const PipelineError& e) {
          drop(e.what());
        }
      }
    }
  }
  report.calls = ctx.calls;
  validate_corpus(corpus);
  return result;
}

}  // namespace masteer
