// Records the scripted agents into a fixture directory that
// `masteer gen-samples --client mock:<dir>` can replay offline.
//
//   record_mock <out-dir>
//
// Matches: gen-samples --issue truthfulness --categories 10 --scopes 2 --refs 2

#include <filesystem>
#include <iostream>

#include "masteer/autotester.hpp"
#include "masteer/testing/scripted_agents.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: record_mock <out-dir>\n";
    return 2;
  }
  using namespace masteer;
  testing::ScriptedAgents agents;
  agents.category_names = {"Factual Accuracy",          "Source Reliability Awareness",
                           "Hallucination Detection",   "Contextual Truthfulness",
                           "Truth Verification Skills", "Misinformation Resistance",
                           "Uncertainty Communication", "Correction Handling",
                           "Knowledge Boundaries",      "Truth Promotion Impact"};
  // A little friction so the replay exercises retries, rewrites and a drop.
  agents.malformed_refs_first = 1;
  agents.scores = [](const std::string& id, std::size_t draft) {
    if (id == "c03-s02-r01") return testing::ScriptedAgents::uniform(1);
    if (id.ends_with("r02") && id.starts_with("c0") && draft == 0) {
      auto g = testing::ScriptedAgents::uniform(2);
      g[1] = {1, 1, 2};
      return g;
    }
    return testing::ScriptedAgents::uniform(2);
  };
  agents.refs_available = [](const std::string& cat, const std::string&) {
    return cat == "Truth Promotion Impact" ? std::size_t{1} : std::size_t{100};
  };
  try {
    std::filesystem::remove_all(argv[1]);
    auto inner = agents.client();
    RecordingClient rec(inner, argv[1]);
    const auto r = run_pipeline(rec, {"truthfulness", 10, 2, 2});
    std::cout << "recorded " << r.report.accepted << " accepted of " << r.report.drafts << " drafts\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
