#pragma once

// Shared helpers for the test binaries: scratch directories and random
// datasets/bundles drawn from SplitMix64.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "masteer/activation_store.hpp"
#include "masteer/toy_transformer.hpp"

namespace masteer::test {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("masteer-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::filesystem::path& file, const std::string& bytes) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Matrix random_matrix(SplitMix64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

inline Vector random_unit(SplitMix64& rng, Eigen::Index d) {
  Vector v(d);
  for (Eigen::Index k = 0; k < d; ++k) v[k] = rng.normal();
  return v.normalized();
}

// Sample texts deliberately include quotes, newlines and non-ASCII bytes.
inline Dataset random_dataset(SplitMix64& rng, std::size_t n, std::size_t layers, std::size_t dim) {
  Dataset ds;
  const std::size_t ncat = 1 + rng.below(3);
  for (std::size_t c = 0; c < ncat; ++c) ds.corpus.categories.push_back("cat " + std::to_string(c));
  ds.corpus.scopes = {"scope \"a\"", "scope b"};
  ds.corpus.issue = "issue " + std::to_string(rng.below(1000));
  auto& a = ds.acts;
  a.model_id = "random-" + std::to_string(rng.below(1u << 20));
  a.extraction_mode = "synthetic";
  a.num_layers = layers;
  a.hidden_dim = dim;
  a.category_order = ds.corpus.categories;
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = std::to_string(i);
    SteerSample s{"id-" + k,
                  "Q" + k + ": caf\xc3\xa9 \"quoted\"\nline two",
                  "good " + k,
                  "bad " + k,
                  ds.corpus.categories[rng.below(ncat)],
                  ds.corpus.scopes[rng.below(2)],
                  "src/" + k};
    a.sample_ids.push_back(s.id);
    a.categories.push_back(s.category);
    a.pos_token_index.push_back(static_cast<std::int64_t>(rng.below(50)));
    a.neg_token_index.push_back(static_cast<std::int64_t>(rng.below(50)));
    ds.corpus.samples.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < n * layers * dim; ++i) {
    a.pos.push_back(static_cast<float>(rng.normal() * 3.0));
    a.neg.push_back(static_cast<float>(rng.normal() * 3.0));
  }
  return ds;
}

inline StrategyBundle random_bundle(SplitMix64& rng, std::size_t profiles, std::size_t dim) {
  StrategyBundle b;
  b.model_id = "random-model";
  b.issue = "issue \"" + std::to_string(rng.below(100)) + "\"";
  b.num_layers = 4 + rng.below(8);
  b.layer = rng.below(b.num_layers);
  b.hidden_dim = dim;
  b.tau = quantize_to_float(0.05 + 0.9 * rng.unit());
  b.beta_default = 1.0;
  for (std::size_t p = 0; p < profiles; ++p) b.algorithms.push_back("algo" + std::to_string(p));
  std::size_t next_id = 0;
  for (std::size_t p = 0; p < profiles; ++p) {
    StrategyProfile prof;
    prof.algorithm_id = b.algorithms[p];
    prof.layer = b.layer;
    prof.steer = quantize_to_float(random_unit(rng, static_cast<Eigen::Index>(dim)));
    prof.anchor = quantize_to_float(random_matrix(rng, static_cast<Eigen::Index>(dim), 1, 4.0).col(0));
    prof.strength = quantize_to_float(5.0 * rng.unit());
    const std::size_t count = 1 + rng.below(4);
    for (std::size_t k = 0; k < count; ++k) prof.assigned_ids.push_back("s" + std::to_string(next_id++));
    b.profiles.push_back(std::move(prof));
  }
  return b;
}

}  // namespace masteer::test
