#pragma once

// `masteer` command line: wires sample generation, toy extraction, strategy
// building, steering and evaluation together. Every run writes a manifest
// that `masteer replay` can re-execute.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "masteer/activation_store.hpp"
#include "masteer/autotester.hpp"
#include "masteer/chat_client.hpp"
#include "masteer/eval_harness.hpp"
#include "masteer/fixtures.hpp"
#include "masteer/steer_algorithms.hpp"
#include "masteer/steering_runtime.hpp"
#include "masteer/strategy_builder.hpp"
#include "masteer/toy_transformer.hpp"

#ifdef MASTEER_WITH_LIVE_CLIENT
#include "masteer/live_client.hpp"
#endif

namespace masteer::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kClientEnv = "MASTEER_CLIENT_CONFIG";

namespace detail {

inline void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + file.string());
  out << text;
  if (!out) fail(ErrorKind::io, "write failed: " + file.string());
}

inline std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string file_crc(const fs::path& file) {
  const auto text = read_text(file);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x",
                crc32_of(std::span<const std::byte>(reinterpret_cast<const std::byte*>(text.data()), text.size())));
  return buf;
}

// Regular files under `p` (or `p` itself), with their CRC32.
inline json fingerprint(const fs::path& p) {
  json out = json::object();
  if (fs::is_regular_file(p)) {
    out[p.string()] = file_crc(p);
  } else if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out[f.string()] = file_crc(f);
  }
  return out;
}

inline ToyConfig load_toy_config(const fs::path& file) {
  try {
    return json::parse(read_text(file)).get<ToyConfig>();
  } catch (const json::exception& e) {
    fail(ErrorKind::config, "bad toy config " + file.string() + ": " + e.what());
  }
}

inline void save_toy_config(const ToyConfig& c, const fs::path& file) {
  write_text(file, json(c).dump(2) + "\n");
}

inline std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(ErrorKind::config, "bad grid value '" + item + "'");
    }
  }
  return out;
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline AlgorithmRegistry make_registry(const std::string& algorithms) {
  const AlgorithmRegistry full;
  if (algorithms.empty()) return full;
  auto reg = AlgorithmRegistry::empty();
  for (const auto& id : split_list(algorithms)) {
    if (!full.contains(id)) fail(ErrorKind::config, "unknown algorithm '" + id + "'");
    reg.register_algorithm(id, full.extractor(id));
  }
  return reg;
}

inline std::string tokens_json(const std::vector<Token>& tokens) { return json(tokens).dump(); }

}  // namespace detail

/// Table with one row per algorithm and one column per bundle: default
/// strengths, '-' where the bundle has no profile for that algorithm.
inline std::string format_strength_table(const std::vector<StrategyBundle>& bundles,
                                         const std::vector<std::string>& labels) {
  std::vector<std::string> algorithms;
  for (const auto& b : bundles) {
    for (const auto& id : b.algorithms) {
      if (std::find(algorithms.begin(), algorithms.end(), id) == algorithms.end()) algorithms.push_back(id);
    }
    for (const auto& p : b.profiles) {
      if (std::find(algorithms.begin(), algorithms.end(), p.algorithm_id) == algorithms.end()) {
        algorithms.push_back(p.algorithm_id);
      }
    }
  }
  std::size_t width = 12;
  for (const auto& l : labels) width = std::max(width, l.size() + 2);
  std::ostringstream out;
  out << std::left << std::setw(12) << "algorithm";
  for (const auto& l : labels) out << std::setw(static_cast<int>(width)) << l;
  out << "\n" << std::setw(12) << "layer";
  for (const auto& b : bundles) out << std::setw(static_cast<int>(width)) << b.layer;
  out << "\n";
  for (const auto& id : algorithms) {
    out << std::setw(12) << id;
    for (const auto& b : bundles) {
      const auto* p = b.find(id);
      std::ostringstream cell;
      if (p == nullptr) {
        cell << "-";
      } else {
        cell << std::fixed << std::setprecision(4) << p->strength;
      }
      out << std::setw(static_cast<int>(width)) << cell.str();
    }
    out << "\n";
  }
  return out.str();
}

inline std::string describe_bundle(const StrategyBundle& b) {
  std::ostringstream out;
  out << "model: " << b.model_id << "\n"
      << "issue: " << (b.issue.empty() ? "(unnamed)" : b.issue) << "\n"
      << "layer: " << b.layer << " of " << b.num_layers << ", hidden-dim " << b.hidden_dim << "\n"
      << "tau: " << b.tau << ", beta default: " << b.beta_default << "\n"
      << "algorithms:";
  for (const auto& a : b.algorithms) out << " " << a;
  out << "\n";
  for (const auto& id : b.algorithms) {
    const auto* p = b.find(id);
    if (p == nullptr) {
      out << "  " << std::left << std::setw(8) << id << " -  (no matched samples)\n";
      continue;
    }
    out << "  " << std::left << std::setw(8) << id << " alpha=" << std::fixed << std::setprecision(4) << p->strength
        << " assigned=" << p->assigned_ids.size() << "\n";
    out.unsetf(std::ios::floatfield);
  }
  return out.str();
}

class Cli {
 public:
  Cli(std::ostream& out, std::ostream& err) : stdout_(out), err_(err) {}

  int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"masteer: multi-strategy activation steering toolkit"};
    app.name("masteer");
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    setup(app);
    try {
      std::vector<std::string> reversed(args.rbegin(), args.rend());
      app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
      stdout_ << app.help();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      stdout_ << app.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::ParseError& e) {
      err_ << "error: usage: " << one_line(e.what()) << "\n";
      const auto subs = app.get_subcommands();
      err_ << (subs.empty() ? app.help() : subs.front()->help());
      return 2;
    }
    const auto* sub = app.get_subcommands().front();
    try {
      json config = json::object();
      for (const auto* opt : sub->get_options()) {
        if (opt->get_name() == "--help" || opt->get_name().empty()) continue;
        const auto& r = opt->results();
        config[opt->get_name(false, true)] = r.empty() ? opt->get_default_str() : CLI::detail::join(r, ",");
      }
      manifest_ = {{"tool", "masteer"}, {"format-version", kFormatVersion}, {"subcommand", sub->get_name()},
                   {"argv", args}, {"config", config}, {"inputs", json::object()}, {"outputs", json::object()}};
      run_(sub->get_name());
      finish_manifest(sub->get_name());
      return 0;
    } catch (const Error& e) {
      err_ << "error: " << to_string(e.kind()) << ": " << one_line(e.what()) << "\n";
      return 1;
    } catch (const std::exception& e) {
      err_ << "error: internal: " << one_line(e.what()) << "\n";
      return 1;
    }
  }

 private:
  std::ostream& stdout_;
  std::ostream& err_;
  json manifest_;
  std::function<void(const std::string&)> run_;
  std::string manifest_path_;
  std::string default_manifest_;

  // Option storage shared across subcommands.
  std::string issue_, client_spec_, prompts_dir_, out_, report_, transcript_;
  std::size_t categories_ = 10, scopes_ = 10, refs_ = 10, rewrite_cap_ = 3, retry_cap_ = 3;
  std::string corpus_, dataset_, bundle_, toy_config_, items_, prompt_, algorithms_, grid_, mode_ = "beta_scale";
  std::string positions_ = "all_positions", kind_ = "planted", replay_manifest_;
  std::vector<std::string> bundles_;
  ToyConfig toy_;
  double tau_ = kDefaultTau, beta_ = 1.0, match_threshold_ = -1.0;
  long long layer_ = -1, first_ = -1, last_ = -1;
  std::size_t max_new_ = 16;
  std::uint64_t seed_ = 0;
  bool base_ = false, json_out_ = false, check_ = false;

  static std::string one_line(std::string s) {
    for (auto& c : s) {
      if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
  }

  void add_manifest_option(CLI::App* sub) {
    sub->add_option("--manifest", manifest_path_, "Where to write the run manifest (default: next to the output)");
  }

  void input(const fs::path& p) {
    const auto prints = detail::fingerprint(p);
    for (const auto& [k, v] : prints.items()) manifest_["inputs"][k] = v;
  }
  void output(const fs::path& p) {
    const auto prints = detail::fingerprint(p);
    for (const auto& [k, v] : prints.items()) manifest_["outputs"][k] = v;
  }

  void finish_manifest(const std::string& sub) {
    if (sub == "replay") return;
    std::string path = manifest_path_;
    if (path.empty()) path = default_manifest_.empty() ? sub + ".manifest.json" : default_manifest_;
    detail::write_text(path, manifest_.dump(2) + "\n");
  }

  SteerConfig steer_config() const {
    SteerConfig c;
    c.beta = beta_;
    c.match_threshold = match_threshold_;
    c.positions = parse_positions(positions_);
    c.validate();
    return c;
  }

  void add_steer_options(CLI::App* sub) {
    sub->add_option("--beta", beta_, "Global strength multiplier");
    sub->add_option("--match-threshold", match_threshold_, "Minimum anchor cosine required to steer (-1 always steers)");
    sub->add_option("--positions", positions_, "all_positions or generated_only")
        ->check(CLI::IsMember({"all_positions", "generated_only"}));
  }

  void add_toy_options(CLI::App* sub) {
    sub->add_option("--vocab", toy_.vocab, "Toy vocabulary size");
    sub->add_option("--d-model", toy_.d_model, "Toy hidden size");
    sub->add_option("--layers", toy_.layers, "Toy depth");
    sub->add_option("--heads", toy_.heads, "Toy attention heads");
    sub->add_option("--max-seq", toy_.max_seq, "Toy context length");
    sub->add_option("--model-seed", toy_.seed, "Toy weight seed");
  }

  void add_items_options(CLI::App* sub) {
    sub->add_option("--items", items_, "AB items (JSON lines)");
    sub->add_option("--corpus", corpus_, "Sample corpus to normalise into AB items");
    sub->add_option("--seed", seed_, "Run seed for the A/B assignment");
    sub->add_option("--toy-config", toy_config_, "Toy model config (JSON)")->required();
  }

  std::vector<ABItem> load_items() {
    if (items_.empty() == corpus_.empty()) fail(ErrorKind::config, "give exactly one of --items or --corpus");
    if (!items_.empty()) {
      input(items_);
      return load_ab_items(items_);
    }
    input(corpus_);
    return normalize_ab(load_corpus(corpus_).samples, seed_);
  }

  ToyTransformer load_model() {
    input(toy_config_);
    return ToyTransformer(detail::load_toy_config(toy_config_));
  }

  StrategyBundle load_bundle_input() {
    input(bundle_);
    return load_bundle(bundle_);
  }

  void setup(CLI::App& app) {
    auto* gen = app.add_subcommand("gen-samples", "Generate a steer-sample corpus with the agent pipeline");
    gen->add_option("--issue", issue_, "Trustworthiness issue to repair")->required();
    gen->add_option("--client", client_spec_,
                    std::string("mock:<fixture-dir> or live:<endpoint-config.json>; defaults to live:$") + kClientEnv);
    gen->add_option("--categories", categories_, "Categories per issue")->check(CLI::PositiveNumber);
    gen->add_option("--scopes", scopes_, "Scopes per category")->check(CLI::PositiveNumber);
    gen->add_option("--refs", refs_, "References (and samples) per scope")->check(CLI::PositiveNumber);
    gen->add_option("--rewrite-cap", rewrite_cap_, "Rewrites per sample before it is dropped");
    gen->add_option("--retry-cap", retry_cap_, "Extra requests after a malformed reply");
    gen->add_option("--prompts-dir", prompts_dir_, "Directory with analyst/retriever/writer/reviewer .txt prompts");
    gen->add_option("--out", out_, "Corpus file to write")->required();
    gen->add_option("--report", report_, "Run report (default: <out>.report.json)");
    gen->add_option("--transcript", transcript_, "Agent transcript (default: <out>.transcript.jsonl)");
    add_manifest_option(gen);

    auto* extract = app.add_subcommand("toy-extract", "Extract toy-transformer activations for a corpus");
    extract->add_option("--corpus", corpus_, "Sample corpus")->required();
    extract->add_option("--out", out_, "Dataset directory to write")->required();
    extract->add_option("--toy-config", toy_config_, "Toy model config (JSON); overrides the size flags");
    add_toy_options(extract);
    add_manifest_option(extract);

    auto* build = app.add_subcommand("build", "Build a strategy bundle from an activation dataset");
    build->add_option("--dataset", dataset_, "Dataset directory")->required();
    build->add_option("--out", out_, "Bundle file to write")->required();
    build->add_option("--tau", tau_, "Similarity threshold for weak samples");
    build->add_option("--report", report_, "Write the build report as JSON here");
    build->add_option("--layer", layer_, "Force this layer instead of selecting one");
    build->add_option("--algorithms", algorithms_, "Comma-separated algorithm ids (default: md,lr,pca,kmeans)");
    build->add_option("--issue", issue_, "Issue label stored in the bundle");
    add_manifest_option(build);

    auto* steer = app.add_subcommand("steer", "Greedy decode on the toy model with a bundle applied");
    steer->add_option("--bundle", bundle_, "Strategy bundle")->required();
    steer->add_option("--toy-config", toy_config_, "Toy model config (JSON)")->required();
    steer->add_option("--prompt", prompt_, "Prompt text")->required();
    steer->add_option("--max-new", max_new_, "Tokens to generate");
    steer->add_flag("--base", base_, "Decode without steering");
    steer->add_option("--out", out_, "Write the result as JSON here");
    add_steer_options(steer);
    add_manifest_option(steer);

    auto* eval = app.add_subcommand("eval", "AB-choice accuracy, optionally with a bundle applied");
    add_items_options(eval);
    eval->add_option("--bundle", bundle_, "Strategy bundle (omit for the base model)");
    eval->add_option("--out", out_, "Write per-item results as JSON here");
    add_steer_options(eval);
    add_manifest_option(eval);

    auto* ss = app.add_subcommand("sweep-strength", "Accuracy over a fixed-alpha or beta grid");
    add_items_options(ss);
    ss->add_option("--bundle", bundle_, "Strategy bundle")->required();
    ss->add_option("--mode", mode_, "fixed_alpha or beta_scale")->check(CLI::IsMember({"fixed_alpha", "beta_scale"}));
    ss->add_option("--grid", grid_, "Comma-separated, strictly increasing values")->required();
    ss->add_option("--out", out_, "CSV table to write")->required();
    add_steer_options(ss);
    add_manifest_option(ss);

    auto* sl = app.add_subcommand("sweep-layers", "Accuracy with profiles rebuilt at each layer");
    add_items_options(sl);
    sl->add_option("--dataset", dataset_, "Dataset directory")->required();
    sl->add_option("--tau", tau_, "Similarity threshold for weak samples");
    sl->add_option("--first", first_, "First layer (default 0)");
    sl->add_option("--last", last_, "Last layer (default: deepest)");
    sl->add_option("--algorithms", algorithms_, "Comma-separated algorithm ids (default: md,lr,pca,kmeans)");
    sl->add_option("--out", out_, "CSV table to write")->required();
    add_steer_options(sl);
    add_manifest_option(sl);

    auto* inspect = app.add_subcommand("inspect", "Summarise one or more bundles");
    inspect->add_option("bundles", bundles_, "Bundle files")->required();
    inspect->add_flag("--json", json_out_, "Machine-readable output");
    add_manifest_option(inspect);

    auto* fixture = app.add_subcommand("make-fixture", "Write a synthetic dataset");
    fixture->add_option("--kind", kind_, "planted, two-concept or planted-eval")
        ->check(CLI::IsMember({"planted", "two-concept", "planted-eval"}));
    fixture->add_option("--seed", seed_, "Fixture seed");
    fixture->add_option("--out", out_, "Output directory")->required();
    add_manifest_option(fixture);

    auto* replay = app.add_subcommand("replay", "Re-run a command from its manifest");
    replay->add_option("manifest", replay_manifest_, "Manifest file")->required()->check(CLI::ExistingFile);
    replay->add_flag("--check", check_, "Fail unless the outputs match the recorded checksums");

    run_ = [this](const std::string& name) {
      if (name == "gen-samples") gen_samples();
      else if (name == "toy-extract") toy_extract();
      else if (name == "build") build_cmd();
      else if (name == "steer") steer_cmd();
      else if (name == "eval") eval_cmd();
      else if (name == "sweep-strength") sweep_strength_cmd();
      else if (name == "sweep-layers") sweep_layers_cmd();
      else if (name == "inspect") inspect_cmd();
      else if (name == "make-fixture") make_fixture_cmd();
      else if (name == "replay") replay_cmd();
    };
  }

  std::unique_ptr<ChatClient> make_client() {
    std::string spec = client_spec_;
    if (spec.empty()) {
      const char* env = std::getenv(kClientEnv);
      if (env == nullptr || *env == '\0') {
        fail(ErrorKind::config, std::string("no --client given and ") + kClientEnv + " is not set");
      }
      spec = std::string("live:") + env;
    }
    manifest_["config"]["--client"] = spec;
    if (spec.starts_with("mock:")) {
      input(spec.substr(5));
      return std::make_unique<FixtureClient>(spec.substr(5));
    }
    if (spec.starts_with("live:")) {
#ifdef MASTEER_WITH_LIVE_CLIENT
      return std::make_unique<LiveChatClient>(load_live_config(spec.substr(5)));
#else
      fail(ErrorKind::capability, "this build has no live client");
#endif
    }
    fail(ErrorKind::config, "client must be mock:<dir> or live:<config>, got '" + spec + "'");
  }

  void gen_samples() {
    IssueSpec spec{issue_, categories_, scopes_, refs_};
    PipelineOptions opts{retry_cap_, rewrite_cap_};
    AgentPrompts prompts;
    if (!prompts_dir_.empty()) {
      input(prompts_dir_);
      prompts = load_prompts(prompts_dir_);
    }
    auto client = make_client();
    const std::string report = report_.empty() ? out_ + ".report.json" : report_;
    const std::string transcript = transcript_.empty() ? out_ + ".transcript.jsonl" : transcript_;
    std::ofstream log(transcript, std::ios::binary | std::ios::trunc);
    if (!log) fail(ErrorKind::io, "cannot write " + transcript);
    TranscriptClient logged(*client, log);
    const auto result = run_pipeline(logged, spec, opts, prompts);
    log.close();
    save_corpus(result.corpus, out_);
    detail::write_text(report, result.report.to_json().dump(2) + "\n");
    for (const auto& p : {fs::path(out_), fs::path(report), fs::path(transcript)}) output(p);
    default_manifest_ = out_ + ".manifest.json";
    out_stream() << "accepted " << result.report.accepted << " of " << result.report.drafts << " drafts ("
                 << result.report.dropped.size() << " dropped, " << result.report.warnings.size() << " warnings)\n";
  }

  std::ostream& out_stream() { return stdout_; }

  void toy_extract() {
    ToyConfig cfg = toy_;
    if (!toy_config_.empty()) cfg = load_model().config();
    ToyTransformer model(cfg);
    input(corpus_);
    const auto corpus = load_corpus(corpus_);
    const auto acts = extract_activations(model, corpus);
    save_dataset(corpus, acts, out_);
    detail::save_toy_config(cfg, fs::path(out_) / "toy-config.json");
    manifest_["config"]["toy"] = cfg;
    output(out_);
    default_manifest_ = (fs::path(out_) / "run.manifest.json").string();
    out_stream() << "extracted " << acts.size() << " samples x " << acts.num_layers << " layers x " << acts.hidden_dim
                 << " dims\n";
  }

  void build_cmd() {
    input(dataset_);
    const auto ds = load_dataset(dataset_);
    const auto registry = detail::make_registry(algorithms_);
    const auto result = layer_ >= 0 ? build_bundle_at_layer(ds.acts, registry, tau_, static_cast<std::size_t>(layer_),
                                                            issue_.empty() ? ds.corpus.issue : issue_)
                                    : build_bundle(ds.acts, registry, tau_, issue_.empty() ? ds.corpus.issue : issue_);
    save_bundle(result.bundle, out_);
    output(out_);
    if (!report_.empty()) {
      detail::write_text(report_, report_json(result).dump(2) + "\n");
      output(report_);
    }
    default_manifest_ = out_ + ".manifest.json";
    out_stream() << format_report(result);
  }

  void steer_cmd() {
    const auto model = load_model();
    const auto bundle = load_bundle_input();
    const auto prompt = keep_tail(encode_text(prompt_, model.vocab_size()), model.max_sequence());
    if (prompt.empty()) fail(ErrorKind::input, "prompt is empty");
    json result;
    if (base_) {
      result["tokens"] = decode_greedy(model, prompt, max_new_);
      result["steered"] = false;
    } else {
      const auto r = steer_generate(model, prompt, bundle, steer_config(), max_new_);
      result["tokens"] = r.tokens;
      result["steered"] = r.decision.chosen.has_value();
      result["strategy"] = r.decision.chosen ? json(*r.decision.chosen) : json(nullptr);
      result["similarity"] = r.decision.similarity;
      result["applied_strength"] = r.decision.applied_strength;
      result["layer"] = r.decision.layer;
    }
    const auto text = result.dump() + "\n";
    if (!out_.empty()) {
      detail::write_text(out_, text);
      output(out_);
      default_manifest_ = out_ + ".manifest.json";
    }
    out_stream() << text;
  }

  void eval_cmd() {
    const auto model = load_model();
    const auto items = load_items();
    std::optional<StrategyBundle> bundle;
    if (!bundle_.empty()) bundle = load_bundle_input();
    const auto r = evaluate_accuracy(EvalModel(model), items, bundle ? &*bundle : nullptr, steer_config());
    if (!out_.empty()) {
      detail::write_text(out_, eval_json(r).dump(2) + "\n");
      output(out_);
      default_manifest_ = out_ + ".manifest.json";
    }
    out_stream() << "accuracy " << r.accuracy << " (" << r.num_correct << "/" << r.n << ") strategies "
                 << format_histogram(r.histogram) << "\n";
  }

  void sweep_strength_cmd() {
    const auto model = load_model();
    const auto items = load_items();
    const auto bundle = load_bundle_input();
    const auto mode = mode_ == "fixed_alpha" ? StrengthMode::fixed_alpha : StrengthMode::beta_scale;
    const auto r = sweep_strength(EvalModel(model), items, bundle, mode, detail::parse_grid(grid_), steer_config());
    detail::write_text(out_, sweep_csv(r));
    output(out_);
    manifest_["result"] = sweep_json(r);
    default_manifest_ = out_ + ".manifest.json";
    out_stream() << sweep_csv(r);
  }

  void sweep_layers_cmd() {
    const auto model = load_model();
    const auto items = load_items();
    input(dataset_);
    const auto ds = load_dataset(dataset_);
    const std::size_t first = first_ < 0 ? 0 : static_cast<std::size_t>(first_);
    const std::size_t last = last_ < 0 ? model.num_layers() - 1 : static_cast<std::size_t>(last_);
    const auto r = sweep_layers(EvalModel(model), items, ds.acts, detail::make_registry(algorithms_), tau_, first, last,
                                steer_config());
    detail::write_text(out_, sweep_csv(r));
    output(out_);
    manifest_["result"] = sweep_json(r);
    default_manifest_ = out_ + ".manifest.json";
    out_stream() << sweep_csv(r);
    if (r.argmin_layer) out_stream() << "# selected layer (minimum weak ratio): " << *r.argmin_layer << "\n";
  }

  void inspect_cmd() {
    std::vector<StrategyBundle> bundles;
    std::vector<std::string> labels;
    for (const auto& path : bundles_) {
      input(path);
      bundles.push_back(load_bundle(path));
      labels.push_back(bundles.back().issue.empty() ? fs::path(path).stem().string() : bundles.back().issue);
    }
    if (json_out_) {
      json all = json::array();
      for (const auto& b : bundles) {
        json profiles = json::array();
        for (const auto& p : b.profiles) {
          profiles.push_back({{"algorithm", p.algorithm_id}, {"strength", p.strength},
                              {"assigned_count", p.assigned_ids.size()}});
        }
        all.push_back({{"model_id", b.model_id}, {"issue", b.issue}, {"layer", b.layer}, {"num_layers", b.num_layers},
                       {"hidden_dim", b.hidden_dim}, {"tau", b.tau}, {"algorithms", b.algorithms},
                       {"profiles", profiles}});
      }
      out_stream() << all.dump(2) << "\n";
      return;
    }
    for (std::size_t i = 0; i < bundles.size(); ++i) {
      out_stream() << "== " << bundles_[i] << "\n" << describe_bundle(bundles[i]) << "\n";
    }
    out_stream() << "default strengths\n" << format_strength_table(bundles, labels);
  }

  void make_fixture_cmd() {
    fixtures::PlantedOptions planted;
    planted.seed = seed_;
    if (kind_ == "planted") {
      const auto ds = fixtures::planted_layer_dataset(planted);
      save_dataset(ds.corpus, ds.acts, out_);
    } else if (kind_ == "two-concept") {
      const auto ds = fixtures::two_concept_dataset(seed_);
      save_dataset(ds.corpus, ds.acts, out_);
    } else {
      const auto ds = fixtures::planted_eval_dataset(seed_);
      save_dataset(ds.corpus, ds.acts, out_);
      detail::save_toy_config(fixtures::planted_eval_config(), fs::path(out_) / "toy-config.json");
      save_ab_items(normalize_ab(fixtures::planted_eval_samples(), seed_), fs::path(out_) / "items.jsonl");
    }
    output(out_);
    default_manifest_ = (fs::path(out_) / "run.manifest.json").string();
    out_stream() << "wrote " << kind_ << " fixture to " << out_ << "\n";
  }

  void replay_cmd() {
    json recorded;
    try {
      recorded = json::parse(detail::read_text(replay_manifest_));
    } catch (const json::exception& e) {
      fail(ErrorKind::config, "bad manifest: " + std::string(e.what()));
    }
    if (recorded.value("tool", "") != "masteer") fail(ErrorKind::config, "not a masteer manifest");
    const auto argv = recorded.at("argv").get<std::vector<std::string>>();
    std::ostringstream sink;
    Cli inner(sink, err_);
    const int status = inner.dispatch(argv);
    out_stream() << sink.str();
    if (status != 0) fail(ErrorKind::pipeline, "replayed command exited with status " + std::to_string(status));
    if (check_) {
      for (const auto& [path, crc] : recorded.at("outputs").items()) {
        if (!fs::exists(path) || detail::file_crc(path) != crc.get<std::string>()) {
          fail(ErrorKind::pipeline, "replayed output differs: " + path);
        }
      }
      out_stream() << "replay matches " << recorded.at("outputs").size() << " recorded outputs\n";
    }
  }
};

inline int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  return Cli(out, err).dispatch(args);
}

}  // namespace masteer::cli
