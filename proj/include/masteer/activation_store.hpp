#pragma once

// Steer-sample corpora, activation datasets and strategy bundles, plus their
// on-disk formats. See docs/formats.md for the grammar.

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "masteer/core.hpp"

namespace masteer {

inline constexpr int kFormatVersion = 1;

struct SteerSample {
  std::string id;
  std::string question;
  std::string matching_behavior;      // desired completion
  std::string not_matching_behavior;  // undesired completion
  std::string category;
  std::string scope;
  std::string source;

  bool operator==(const SteerSample&) const = default;
};

/// A sample list together with the category and scope lists it is drawn from.
struct SampleCorpus {
  std::string issue;
  std::vector<std::string> categories;
  std::vector<std::string> scopes;
  std::vector<SteerSample> samples;

  bool operator==(const SampleCorpus&) const = default;
};

inline void validate_sample(const SteerSample& s) {
  if (s.id.empty()) fail(ErrorKind::invalid_data, "sample with empty id");
  if (s.category.empty()) fail(ErrorKind::invalid_data, "sample '" + s.id + "' has empty category");
  if (s.scope.empty()) fail(ErrorKind::invalid_data, "sample '" + s.id + "' has empty scope");
  if (s.matching_behavior == s.not_matching_behavior) {
    fail(ErrorKind::invalid_data,
         "sample '" + s.id + "' has identical matching and not-matching behaviors");
  }
}

inline void validate_corpus(const SampleCorpus& corpus) {
  const std::set<std::string> cats(corpus.categories.begin(), corpus.categories.end());
  const std::set<std::string> scopes(corpus.scopes.begin(), corpus.scopes.end());
  std::set<std::string> ids;
  for (const auto& s : corpus.samples) {
    validate_sample(s);
    if (!ids.insert(s.id).second) fail(ErrorKind::invalid_data, "duplicate sample id '" + s.id + "'");
    if (!cats.contains(s.category)) {
      fail(ErrorKind::invalid_data,
           "sample '" + s.id + "' category '" + s.category + "' is not in the declared list");
    }
    if (!scopes.contains(s.scope)) {
      fail(ErrorKind::invalid_data,
           "sample '" + s.id + "' scope '" + s.scope + "' is not in the declared list");
    }
  }
}

/// One layer's slice of an ActivationSet, as n x d matrices.
struct LayerActivations {
  Matrix pos;
  Matrix neg;
};

/// Paired final-token activations, float32, index order (sample, layer, dim).
struct ActivationSet {
  std::string model_id;
  std::string extraction_mode;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  std::vector<std::string> sample_ids;
  std::vector<std::string> categories;      // per sample
  std::vector<std::string> category_order;  // declared order; empty means first appearance
  std::vector<std::int64_t> pos_token_index;  // optional, per sample
  std::vector<std::int64_t> neg_token_index;
  std::vector<float> pos;
  std::vector<float> neg;

  std::size_t size() const { return sample_ids.size(); }

  std::size_t offset(std::size_t sample, std::size_t layer) const {
    return (sample * num_layers + layer) * hidden_dim;
  }

  std::span<const float> pos_row(std::size_t sample, std::size_t layer) const {
    return {pos.data() + offset(sample, layer), hidden_dim};
  }
  std::span<const float> neg_row(std::size_t sample, std::size_t layer) const {
    return {neg.data() + offset(sample, layer), hidden_dim};
  }

  LayerActivations layer(std::size_t l) const {
    if (l >= num_layers) {
      fail(ErrorKind::contract_violation,
           "layer " + std::to_string(l) + " out of range (num_layers=" + std::to_string(num_layers) + ")");
    }
    LayerActivations out{Matrix(size(), hidden_dim), Matrix(size(), hidden_dim)};
    for (std::size_t i = 0; i < size(); ++i) {
      const auto p = pos_row(i, l);
      const auto n = neg_row(i, l);
      for (std::size_t k = 0; k < hidden_dim; ++k) {
        out.pos(i, k) = p[k];
        out.neg(i, k) = n[k];
      }
    }
    return out;
  }

  /// Categories in declared order.
  std::vector<std::string> declared_categories() const {
    if (!category_order.empty()) return category_order;
    std::vector<std::string> order;
    for (const auto& c : categories) {
      if (std::find(order.begin(), order.end(), c) == order.end()) order.push_back(c);
    }
    return order;
  }

  void validate() const {
    const std::size_t n = size();
    const std::size_t expected = n * num_layers * hidden_dim;
    if (pos.size() != expected || neg.size() != expected) {
      fail(ErrorKind::shape_mismatch,
           "activation tensors hold pos=" + std::to_string(pos.size()) + " neg=" +
               std::to_string(neg.size()) + " values, expected N*L*d=" + std::to_string(n) + "*" +
               std::to_string(num_layers) + "*" + std::to_string(hidden_dim) + "=" +
               std::to_string(expected));
    }
    if (categories.size() != n) {
      fail(ErrorKind::shape_mismatch, "categories has " + std::to_string(categories.size()) +
                                          " entries for " + std::to_string(n) + " samples");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (categories[i].empty()) {
        fail(ErrorKind::invalid_data, "sample '" + sample_ids[i] + "' has no category");
      }
    }
    if (!category_order.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        if (std::find(category_order.begin(), category_order.end(), categories[i]) ==
            category_order.end()) {
          fail(ErrorKind::invalid_data, "sample '" + sample_ids[i] + "' category '" + categories[i] +
                                            "' is not declared");
        }
      }
    }
    for (const auto* tensor : {&pos, &neg}) {
      for (std::size_t idx = 0; idx < tensor->size(); ++idx) {
        if (!std::isfinite((*tensor)[idx])) {
          const std::size_t sample = idx / (num_layers * hidden_dim);
          const std::size_t layer = (idx / hidden_dim) % num_layers;
          fail(ErrorKind::invalid_data,
               std::string("non-finite value in ") + (tensor == &pos ? "pos" : "neg") +
                   " at sample '" + sample_ids[sample] + "' (index " + std::to_string(sample) +
                   "), layer " + std::to_string(layer) + ", dim " +
                   std::to_string(idx % hidden_dim));
        }
      }
    }
  }

  bool operator==(const ActivationSet&) const = default;
};

struct CategorySlice {
  std::string category;
  ActivationSet acts;
};

/// Partitions rows by category, in declared order, preserving relative row order.
inline std::vector<CategorySlice> split_by_category(const ActivationSet& acts) {
  std::vector<CategorySlice> out;
  const std::size_t row = acts.num_layers * acts.hidden_dim;
  for (const auto& cat : acts.declared_categories()) {
    ActivationSet sub;
    sub.model_id = acts.model_id;
    sub.extraction_mode = acts.extraction_mode;
    sub.num_layers = acts.num_layers;
    sub.hidden_dim = acts.hidden_dim;
    sub.category_order = {cat};
    for (std::size_t i = 0; i < acts.size(); ++i) {
      if (acts.categories[i] != cat) continue;
      sub.sample_ids.push_back(acts.sample_ids[i]);
      sub.categories.push_back(cat);
      if (!acts.pos_token_index.empty()) sub.pos_token_index.push_back(acts.pos_token_index[i]);
      if (!acts.neg_token_index.empty()) sub.neg_token_index.push_back(acts.neg_token_index[i]);
      sub.pos.insert(sub.pos.end(), acts.pos.begin() + i * row, acts.pos.begin() + (i + 1) * row);
      sub.neg.insert(sub.neg.end(), acts.neg.begin() + i * row, acts.neg.begin() + (i + 1) * row);
    }
    if (!sub.sample_ids.empty()) out.push_back({cat, std::move(sub)});
  }
  return out;
}

/// One deployable strategy: layer, unit steer direction, anchor, default strength.
struct StrategyProfile {
  std::string algorithm_id;
  std::size_t layer = 0;
  Vector steer;
  Vector anchor;
  double strength = 0.0;
  std::vector<std::string> assigned_ids;

  bool operator==(const StrategyProfile& o) const {
    return algorithm_id == o.algorithm_id && layer == o.layer && steer == o.steer &&
           anchor == o.anchor && strength == o.strength && assigned_ids == o.assigned_ids;
  }
};

struct StrategyBundle {
  std::string model_id;
  std::string issue;
  std::size_t layer = 0;
  std::size_t num_layers = 0;  // depth of the source activation set
  std::size_t hidden_dim = 0;
  double tau = 0.3;
  double beta_default = 1.0;
  std::vector<std::string> algorithms;  // every algorithm considered at build time
  std::vector<StrategyProfile> profiles;

  const StrategyProfile* find(std::string_view algorithm_id) const {
    for (const auto& p : profiles) {
      if (p.algorithm_id == algorithm_id) return &p;
    }
    return nullptr;
  }

  bool operator==(const StrategyBundle&) const = default;
};

// Profiles are stored as binary32, so the unit-norm check uses float tolerance.
inline constexpr double kBundleUnitTolerance = 1e-6;

inline void validate_bundle(const StrategyBundle& b) {
  if (b.profiles.empty()) fail(ErrorKind::contract_violation, "bundle has no profiles");
  if (b.layer >= b.num_layers) {
    fail(ErrorKind::contract_violation, "bundle layer " + std::to_string(b.layer) +
                                            " >= num_layers " + std::to_string(b.num_layers));
  }
  std::set<std::string> seen_ids;
  std::set<std::string> seen_algos;
  for (const auto& p : b.profiles) {
    if (!seen_algos.insert(p.algorithm_id).second) {
      fail(ErrorKind::contract_violation, "duplicate profile for algorithm '" + p.algorithm_id + "'");
    }
    if (static_cast<std::size_t>(p.steer.size()) != b.hidden_dim ||
        static_cast<std::size_t>(p.anchor.size()) != b.hidden_dim) {
      fail(ErrorKind::contract_violation, "profile '" + p.algorithm_id + "' vector length != d=" +
                                              std::to_string(b.hidden_dim));
    }
    if (!p.steer.allFinite() || !p.anchor.allFinite() || !std::isfinite(p.strength)) {
      fail(ErrorKind::invalid_data, "profile '" + p.algorithm_id + "' has non-finite values");
    }
    if (std::abs(p.steer.norm() - 1.0) > kBundleUnitTolerance) {
      fail(ErrorKind::contract_violation, "profile '" + p.algorithm_id + "' steer is not unit norm");
    }
    for (const auto& id : p.assigned_ids) {
      if (!seen_ids.insert(id).second) {
        fail(ErrorKind::contract_violation, "sample '" + id + "' assigned to more than one profile");
      }
    }
  }
}

namespace detail {

inline void write_le_floats(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float f : values) {
      auto bits = std::bit_cast<std::uint32_t>(f);
      bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) | (bits >> 24);
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
}

inline void from_le_floats(std::vector<float>& values) {
  if constexpr (std::endian::native != std::endian::little) {
    for (float& f : values) {
      auto bits = std::bit_cast<std::uint32_t>(f);
      bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) | (bits >> 24);
      f = std::bit_cast<float>(bits);
    }
  }
}

/// Writes one `key: <json>` manifest line.
inline void put(std::ostream& out, std::string_view key, const nlohmann::json& value) {
  out << key << ": " << value.dump() << '\n';
}

struct ManifestLine {
  std::string key;
  nlohmann::json value;
};

inline ManifestLine parse_line(const std::string& line, ErrorKind on_error) {
  const auto colon = line.find(": ");
  if (colon == std::string::npos || colon == 0) fail(on_error, "malformed manifest line: " + line);
  ManifestLine out{line.substr(0, colon), {}};
  try {
    out.value = nlohmann::json::parse(line.substr(colon + 2));
  } catch (const nlohmann::json::exception& e) {
    fail(on_error, "manifest key '" + out.key + "' has malformed value: " + e.what());
  }
  return out;
}

/// Checks the leading version line shared by every format.
inline void expect_version(const ManifestLine& first, ErrorKind on_error) {
  if (first.key != "format-version") fail(on_error, "first line must be 'format-version'");
  if (!first.value.is_number_integer() || first.value.get<int>() != kFormatVersion) {
    fail(ErrorKind::unsupported_version,
         "unsupported format-version " + first.value.dump() + " (expected " +
             std::to_string(kFormatVersion) + ")");
  }
}

template <typename T>
T get_field(const std::map<std::string, nlohmann::json>& fields, const std::string& key,
            ErrorKind on_error) {
  const auto it = fields.find(key);
  if (it == fields.end()) fail(on_error, "missing field '" + key + "'");
  try {
    return it->second.get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(on_error, "field '" + key + "' has wrong type: " + it->second.dump());
  }
}

inline nlohmann::json sample_record(const SteerSample& s) {
  return {{"id", s.id},
          {"category", s.category},
          {"scope", s.scope},
          {"question", s.question},
          {"matching_behavior", s.matching_behavior},
          {"not_matching_behavior", s.not_matching_behavior},
          {"source", s.source}};
}

inline SteerSample parse_sample_record(const nlohmann::json& j, ErrorKind on_error) {
  try {
    return {j.at("id").get<std::string>(),
            j.at("question").get<std::string>(),
            j.at("matching_behavior").get<std::string>(),
            j.at("not_matching_behavior").get<std::string>(),
            j.at("category").get<std::string>(),
            j.at("scope").get<std::string>(),
            j.value("source", std::string{})};
  } catch (const nlohmann::json::exception& e) {
    fail(on_error, std::string("malformed sample record: ") + e.what());
  }
}

inline std::vector<std::string> read_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline std::vector<float> read_payload(const std::filesystem::path& file, std::size_t count,
                                       const std::string& dim_note) {
  std::error_code ec;
  const auto bytes = std::filesystem::file_size(file, ec);
  if (ec) fail(ErrorKind::corrupt_dataset, "missing payload " + file.string());
  if (bytes != count * sizeof(float)) {
    fail(ErrorKind::corrupt_dataset,
         file.filename().string() + " holds " + std::to_string(bytes) + " bytes but manifest (" +
             dim_note + ") requires " + std::to_string(count * sizeof(float)));
  }
  std::vector<float> values(count);
  std::ifstream in(file, std::ios::binary);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  if (!in) fail(ErrorKind::io, "failed reading " + file.string());
  from_le_floats(values);
  return values;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sample corpora

inline void write_corpus(std::ostream& out, const SampleCorpus& corpus) {
  detail::put(out, "format-version", kFormatVersion);
  detail::put(out, "kind", "sample-corpus");
  detail::put(out, "issue", corpus.issue);
  detail::put(out, "categories", corpus.categories);
  detail::put(out, "scopes", corpus.scopes);
  detail::put(out, "num-samples", corpus.samples.size());
  for (const auto& s : corpus.samples) detail::put(out, "sample", detail::sample_record(s));
}

inline void save_corpus(const SampleCorpus& corpus, const std::filesystem::path& file) {
  validate_corpus(corpus);
  std::ofstream out(file, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + file.string());
  write_corpus(out, corpus);
  if (!out) fail(ErrorKind::io, "write failed: " + file.string());
}

inline SampleCorpus load_corpus(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + file.string());
  const auto lines = detail::read_lines(in);
  if (lines.empty()) fail(ErrorKind::corrupt_dataset, "empty corpus file " + file.string());
  detail::expect_version(detail::parse_line(lines.front(), ErrorKind::corrupt_dataset),
                         ErrorKind::corrupt_dataset);
  SampleCorpus corpus;
  std::map<std::string, nlohmann::json> fields;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto [key, value] = detail::parse_line(lines[i], ErrorKind::corrupt_dataset);
    if (key == "sample") {
      corpus.samples.push_back(detail::parse_sample_record(value, ErrorKind::corrupt_dataset));
    } else {
      fields[key] = std::move(value);
    }
  }
  corpus.issue = detail::get_field<std::string>(fields, "issue", ErrorKind::corrupt_dataset);
  corpus.categories =
      detail::get_field<std::vector<std::string>>(fields, "categories", ErrorKind::corrupt_dataset);
  corpus.scopes = detail::get_field<std::vector<std::string>>(fields, "scopes", ErrorKind::corrupt_dataset);
  const auto n = detail::get_field<std::size_t>(fields, "num-samples", ErrorKind::corrupt_dataset);
  if (n != corpus.samples.size()) {
    fail(ErrorKind::corrupt_dataset, "num-samples=" + std::to_string(n) + " but " +
                                         std::to_string(corpus.samples.size()) + " sample records");
  }
  validate_corpus(corpus);
  return corpus;
}

// ---------------------------------------------------------------------------
// Activation datasets

/// Writes `manifest`, `pos.bin` and `neg.bin` into `dir` (created if needed).
inline void save_dataset(const SampleCorpus& corpus, const ActivationSet& acts,
                         const std::filesystem::path& dir) {
  if (corpus.samples.size() != acts.size()) {
    fail(ErrorKind::shape_mismatch,
         "corpus has " + std::to_string(corpus.samples.size()) + " samples but activations have N=" +
             std::to_string(acts.size()) + " (L=" + std::to_string(acts.num_layers) +
             ", d=" + std::to_string(acts.hidden_dim) + ")");
  }
  for (std::size_t i = 0; i < acts.size(); ++i) {
    if (corpus.samples[i].id != acts.sample_ids[i] || corpus.samples[i].category != acts.categories[i]) {
      fail(ErrorKind::shape_mismatch, "sample order mismatch at row " + std::to_string(i) + ": corpus '" +
                                          corpus.samples[i].id + "' vs activations '" +
                                          acts.sample_ids[i] + "'");
    }
  }
  validate_corpus(corpus);
  acts.validate();

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());

  for (const auto& [name, tensor] : {std::pair{"pos.bin", &acts.pos}, std::pair{"neg.bin", &acts.neg}}) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + (dir / name).string());
    detail::write_le_floats(out, *tensor);
    if (!out) fail(ErrorKind::io, "write failed: " + (dir / name).string());
  }

  std::ofstream out(dir / "manifest", std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + (dir / "manifest").string());
  detail::put(out, "format-version", kFormatVersion);
  detail::put(out, "kind", "activation-dataset");
  detail::put(out, "model-id", acts.model_id);
  detail::put(out, "issue", corpus.issue);
  detail::put(out, "extraction-mode", acts.extraction_mode);
  detail::put(out, "num-layers", acts.num_layers);
  detail::put(out, "hidden-dim", acts.hidden_dim);
  detail::put(out, "num-samples", acts.size());
  detail::put(out, "categories", corpus.categories);
  detail::put(out, "scopes", corpus.scopes);
  detail::put(out, "pos-crc32", crc32_of(std::span<const float>(acts.pos)));
  detail::put(out, "neg-crc32", crc32_of(std::span<const float>(acts.neg)));
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    auto rec = detail::sample_record(corpus.samples[i]);
    if (!acts.pos_token_index.empty()) rec["pos_token_index"] = acts.pos_token_index[i];
    if (!acts.neg_token_index.empty()) rec["neg_token_index"] = acts.neg_token_index[i];
    detail::put(out, "sample", rec);
  }
  if (!out) fail(ErrorKind::io, "write failed: " + (dir / "manifest").string());
}

struct Dataset {
  SampleCorpus corpus;
  ActivationSet acts;
};

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest", std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + (dir / "manifest").string());
  const auto lines = detail::read_lines(in);
  if (lines.empty()) fail(ErrorKind::corrupt_dataset, "empty manifest");
  detail::expect_version(detail::parse_line(lines.front(), ErrorKind::corrupt_dataset),
                         ErrorKind::corrupt_dataset);

  std::map<std::string, nlohmann::json> fields;
  std::vector<nlohmann::json> records;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto [key, value] = detail::parse_line(lines[i], ErrorKind::corrupt_dataset);
    if (key == "sample") {
      records.push_back(std::move(value));
    } else {
      fields[key] = std::move(value);
    }
  }
  constexpr auto bad = ErrorKind::corrupt_dataset;
  Dataset ds;
  ds.corpus.issue = fields.contains("issue") ? detail::get_field<std::string>(fields, "issue", bad) : "";
  ds.corpus.categories = detail::get_field<std::vector<std::string>>(fields, "categories", bad);
  ds.corpus.scopes = detail::get_field<std::vector<std::string>>(fields, "scopes", bad);

  auto& acts = ds.acts;
  acts.model_id = detail::get_field<std::string>(fields, "model-id", bad);
  acts.extraction_mode = fields.contains("extraction-mode")
                             ? detail::get_field<std::string>(fields, "extraction-mode", bad)
                             : "";
  acts.num_layers = detail::get_field<std::size_t>(fields, "num-layers", bad);
  acts.hidden_dim = detail::get_field<std::size_t>(fields, "hidden-dim", bad);
  const auto n = detail::get_field<std::size_t>(fields, "num-samples", bad);
  if (n != records.size()) {
    fail(bad, "num-samples=" + std::to_string(n) + " but " + std::to_string(records.size()) +
                  " sample records");
  }
  acts.category_order = ds.corpus.categories;

  bool has_pos_index = true;
  bool has_neg_index = true;
  for (const auto& rec : records) {
    ds.corpus.samples.push_back(detail::parse_sample_record(rec, bad));
    has_pos_index = has_pos_index && rec.contains("pos_token_index");
    has_neg_index = has_neg_index && rec.contains("neg_token_index");
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& s = ds.corpus.samples[i];
    acts.sample_ids.push_back(s.id);
    acts.categories.push_back(s.category);
    if (has_pos_index) acts.pos_token_index.push_back(records[i]["pos_token_index"].get<std::int64_t>());
    if (has_neg_index) acts.neg_token_index.push_back(records[i]["neg_token_index"].get<std::int64_t>());
  }

  const std::size_t count = n * acts.num_layers * acts.hidden_dim;
  const std::string dims = "N=" + std::to_string(n) + ", L=" + std::to_string(acts.num_layers) +
                           ", hidden-dim=" + std::to_string(acts.hidden_dim);
  acts.pos = detail::read_payload(dir / "pos.bin", count, dims);
  acts.neg = detail::read_payload(dir / "neg.bin", count, dims);
  if (crc32_of(std::span<const float>(acts.pos)) != detail::get_field<std::uint32_t>(fields, "pos-crc32", bad)) {
    fail(bad, "pos-crc32 does not match pos.bin");
  }
  if (crc32_of(std::span<const float>(acts.neg)) != detail::get_field<std::uint32_t>(fields, "neg-crc32", bad)) {
    fail(bad, "neg-crc32 does not match neg.bin");
  }
  validate_corpus(ds.corpus);
  acts.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Strategy bundles

inline void write_bundle(std::ostream& out, const StrategyBundle& bundle) {
  validate_bundle(bundle);
  std::vector<float> payload;
  payload.reserve(bundle.profiles.size() * (2 * bundle.hidden_dim + 1));
  for (const auto& p : bundle.profiles) {
    for (double x : p.steer) payload.push_back(static_cast<float>(x));
    for (double x : p.anchor) payload.push_back(static_cast<float>(x));
    payload.push_back(static_cast<float>(p.strength));
  }
  detail::put(out, "format-version", kFormatVersion);
  detail::put(out, "kind", "strategy-bundle");
  detail::put(out, "model-id", bundle.model_id);
  detail::put(out, "issue", bundle.issue);
  detail::put(out, "layer", bundle.layer);
  detail::put(out, "num-layers", bundle.num_layers);
  detail::put(out, "hidden-dim", bundle.hidden_dim);
  detail::put(out, "tau", bundle.tau);
  detail::put(out, "beta-default", bundle.beta_default);
  detail::put(out, "algorithms", bundle.algorithms);
  detail::put(out, "profile-count", bundle.profiles.size());
  for (const auto& p : bundle.profiles) {
    detail::put(out, "profile",
                {{"algorithm", p.algorithm_id},
                 {"assigned-count", p.assigned_ids.size()},
                 {"assigned", p.assigned_ids}});
  }
  detail::put(out, "payload-crc32", crc32_of(std::span<const float>(payload)));
  out << '\n';
  detail::write_le_floats(out, payload);
}

inline std::string bundle_bytes(const StrategyBundle& bundle) {
  std::ostringstream out(std::ios::binary);
  write_bundle(out, bundle);
  return std::move(out).str();
}

inline StrategyBundle parse_bundle(std::string_view bytes) {
  constexpr auto bad = ErrorKind::corrupt_bundle;
  const auto header_end = bytes.find("\n\n");
  if (header_end == std::string_view::npos) fail(bad, "bundle header is not terminated");
  std::istringstream header{std::string(bytes.substr(0, header_end + 1))};
  const auto lines = detail::read_lines(header);
  if (lines.empty()) fail(bad, "empty bundle header");
  detail::expect_version(detail::parse_line(lines.front(), bad), bad);

  std::map<std::string, nlohmann::json> fields;
  std::vector<nlohmann::json> profile_records;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto [key, value] = detail::parse_line(lines[i], bad);
    if (key == "profile") {
      profile_records.push_back(std::move(value));
    } else {
      fields[key] = std::move(value);
    }
  }
  StrategyBundle b;
  b.model_id = detail::get_field<std::string>(fields, "model-id", bad);
  b.issue = detail::get_field<std::string>(fields, "issue", bad);
  b.layer = detail::get_field<std::size_t>(fields, "layer", bad);
  b.num_layers = detail::get_field<std::size_t>(fields, "num-layers", bad);
  b.hidden_dim = detail::get_field<std::size_t>(fields, "hidden-dim", bad);
  b.tau = detail::get_field<double>(fields, "tau", bad);
  b.beta_default = detail::get_field<double>(fields, "beta-default", bad);
  b.algorithms = detail::get_field<std::vector<std::string>>(fields, "algorithms", bad);
  const auto count = detail::get_field<std::size_t>(fields, "profile-count", bad);
  if (count != profile_records.size()) {
    fail(bad, "profile-count=" + std::to_string(count) + " but " +
                  std::to_string(profile_records.size()) + " profile records");
  }

  const std::size_t d = b.hidden_dim;
  const std::size_t floats = count * (2 * d + 1);
  const auto payload_bytes = bytes.substr(header_end + 2);
  if (payload_bytes.size() != floats * sizeof(float)) {
    fail(bad, "payload holds " + std::to_string(payload_bytes.size()) + " bytes, expected " +
                  std::to_string(floats * sizeof(float)));
  }
  std::vector<float> payload(floats);
  if (floats > 0) std::memcpy(payload.data(), payload_bytes.data(), payload_bytes.size());
  detail::from_le_floats(payload);
  if (crc32_of(std::span<const float>(payload)) != detail::get_field<std::uint32_t>(fields, "payload-crc32", bad)) {
    fail(bad, "payload-crc32 mismatch");
  }

  std::size_t at = 0;
  for (const auto& rec : profile_records) {
    StrategyProfile p;
    try {
      p.algorithm_id = rec.at("algorithm").get<std::string>();
      p.assigned_ids = rec.at("assigned").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      fail(bad, std::string("malformed profile record: ") + e.what());
    }
    p.layer = b.layer;
    p.steer.resize(static_cast<Eigen::Index>(d));
    p.anchor.resize(static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < d; ++k) p.steer[static_cast<Eigen::Index>(k)] = payload[at++];
    for (std::size_t k = 0; k < d; ++k) p.anchor[static_cast<Eigen::Index>(k)] = payload[at++];
    p.strength = payload[at++];
    b.profiles.push_back(std::move(p));
  }
  try {
    validate_bundle(b);
  } catch (const Error& e) {
    fail(bad, e.what());
  }
  return b;
}

inline void save_bundle(const StrategyBundle& bundle, const std::filesystem::path& file) {
  const auto bytes = bundle_bytes(bundle);
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + file.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed: " + file.string());
}

inline StrategyBundle load_bundle(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_bundle(buf.str());
}

}  // namespace masteer
