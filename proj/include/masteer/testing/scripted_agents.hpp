#pragma once

// Rule-based stand-in for the four agents. Used by the tests and to record
// the mock fixtures shipped with the repository.

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "masteer/autotester.hpp"

namespace masteer::testing {

class ScriptedAgents {
 public:
  /// Category names handed out in order; "Category k" once exhausted.
  std::vector<std::string> category_names;
  /// Total distinct references available per (category, scope); unlimited by default.
  std::function<std::size_t(const std::string&, const std::string&)> refs_available;
  /// Rubric grid for a sample id at a draft number (0 = initial draft).
  std::function<ScoreGrid(const std::string&, std::size_t)> scores;
  /// Reviewer claims the opposite of the grid's verdict.
  bool reviewer_lies = false;
  /// First analyst reply repeats a category name.
  bool analyst_duplicate_first = false;
  /// Number of items with an empty context on a scope's first retrieval.
  std::size_t malformed_refs_first = 0;
  /// Initial writer attempts omit matching_behavior.
  bool writer_omits_first = false;
  /// Every analyst reply is malformed.
  bool analyst_broken = false;

  std::string respond(const std::string& system, const std::string& user) {
    const auto payload = nlohmann::json::parse(user);
    if (system.starts_with("Role: requirement analyst")) return analyst(payload);
    if (system.starts_with("Role: reference collector")) return retriever(payload);
    if (system.starts_with("Role: sample writer")) return writer(payload);
    if (system.starts_with("Role: reviewer")) return reviewer(payload);
    fail(ErrorKind::pipeline, "scripted agents: unknown system prompt");
  }

  FunctionClient client() {
    return FunctionClient([this](const std::string& s, const std::string& u) { return respond(s, u); });
  }

  static ScoreGrid uniform(int score) { return {{{score, score, score}, {score, score, score}, {score, score, score}}}; }

 private:
  std::map<std::pair<std::string, std::string>, std::size_t> delivered_;

  std::string category_name(std::size_t k) const {
    return k < category_names.size() ? category_names[k] : "Category " + std::to_string(k + 1);
  }

  std::string analyst(const nlohmann::json& p) {
    const auto attempt = p.value("attempt", 0);
    if (analyst_broken) return "I could not produce a plan this time.";
    const auto ncat = p.at("num_of_cat").get<std::size_t>();
    const auto nscope = p.at("num_of_scope").get<std::size_t>();
    std::string body = "{\n";
    for (std::size_t c = 0; c < ncat; ++c) {
      // A duplicated key cannot be expressed through a json object, so emit text.
      const auto name = (analyst_duplicate_first && attempt == 0 && c == 1) ? category_name(0) : category_name(c);
      ojson scopes = ojson::object();
      for (std::size_t s = 0; s < nscope; ++s) {
        scopes["Scope " + std::to_string(c + 1) + "." + std::to_string(s + 1)] =
            "Behaviour pattern " + std::to_string(s + 1) + " of " + name + " for " + p.at("issue").get<std::string>();
      }
      body += "  " + nlohmann::json(name).dump() + ": " + scopes.dump() + (c + 1 < ncat ? ",\n" : "\n");
    }
    body += "}";
    return "Here is the plan.\n```json\n" + body + "\n```\n";
  }

  std::string retriever(const nlohmann::json& p) {
    const auto cat = p.at("cat").get<std::string>();
    const auto scope = p.at("scope").get<std::string>();
    const auto wanted = p.at("num_examples").get<std::size_t>();
    const auto attempt = p.value("attempt", 0);
    auto& done = delivered_[{cat, scope}];
    const std::size_t cap = refs_available ? refs_available(cat, scope) : static_cast<std::size_t>(-1);
    ojson items = ojson::object();
    std::size_t n = 0;
    for (; n < wanted && done < cap; ++n) {
      ++done;
      const bool broken = attempt == 0 && n < malformed_refs_first;
      items[std::to_string(n + 1)] = {
          {"source", "forum://" + scope + "/" + std::to_string(done)},
          {"context", broken ? "" : "Report " + std::to_string(done) + " describing " + scope + " in " + cat + "."}};
    }
    return ojson{{scope, items}}.dump();
  }

  std::string writer(const nlohmann::json& p) {
    const bool rewrite = p.at("mode") == "rewrite";
    std::size_t draft = 0;
    if (rewrite) {
      const auto prev = p.at("sample").at("question").get<std::string>();
      draft = std::stoul(prev.substr(prev.rfind('#') + 1)) + 1;
    }
    const auto& ref = p.at("refs");
    nlohmann::json s = {{"question", "Regarding: " + ref.at("context").get<std::string>() + " What happened? #" +
                                         std::to_string(draft)},
                        {"not_matching_behavior", "A confident but wrong account."},
                        {"matching_behavior", "An accurate account that notes what is uncertain."},
                        {"source", ref.at("source")}};
    if (writer_omits_first && !rewrite && p.value("attempt", 0) == 0) s.erase("matching_behavior");
    return nlohmann::json{{p.at("scope").get<std::string>(), {{"1", s}}}}.dump(2);
  }

  std::string reviewer(const nlohmann::json& p) {
    const auto& s = p.at("samples_json").at(0);
    const auto id = s.at("id").get<std::string>();
    const auto q = s.at("question").get<std::string>();
    const auto draft = std::stoul(q.substr(q.rfind('#') + 1));
    const auto grid = scores ? scores(id, draft) : uniform(2);
    const bool pass = rubric_pass(grid);
    nlohmann::json score = nlohmann::json::object();
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t k = 0; k < 3; ++k) {
        score[std::string(kRubricAxes[a])][std::string(kRubricAspects[a][k])] = {{"score", grid[a][k]},
                                                                                 {"reason", "scripted"}};
      }
    }
    const bool claim = reviewer_lies ? !pass : pass;
    return nlohmann::json::array({{{"id", id}, {"result", claim ? "Pass" : "Fail"}, {"score", score}}}).dump();
  }
};

}  // namespace masteer::testing
