#pragma once

// Synthetic datasets with known structure, shared by the tests, the
// acceptance suite and `masteer make-fixture`.

#include <cmath>
#include <string>
#include <vector>

#include "masteer/activation_store.hpp"
#include "masteer/eval_harness.hpp"
#include "masteer/toy_transformer.hpp"

namespace masteer::fixtures {

namespace detail {

inline SteerSample placeholder_sample(std::size_t i, const std::string& category) {
  const auto k = std::to_string(i);
  return {"s" + k, "planted question " + k, "desired answer " + k, "undesired answer " + k, category, "planted",
          "synthetic"};
}

inline Dataset empty_dataset(std::size_t n, std::size_t layers, std::size_t dim,
                             const std::vector<std::string>& categories, const std::string& model_id) {
  Dataset ds;
  ds.corpus.issue = "planted";
  ds.corpus.categories = categories;
  ds.corpus.scopes = {"planted"};
  auto& a = ds.acts;
  a.model_id = model_id;
  a.extraction_mode = "synthetic";
  a.num_layers = layers;
  a.hidden_dim = dim;
  a.category_order = categories;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& cat = categories[(i / 2) % categories.size()];
    ds.corpus.samples.push_back(placeholder_sample(i, cat));
    a.sample_ids.push_back(ds.corpus.samples.back().id);
    a.categories.push_back(cat);
  }
  a.pos.assign(n * layers * dim, 0.0f);
  a.neg.assign(n * layers * dim, 0.0f);
  return ds;
}

}  // namespace detail

struct PlantedOptions {
  std::size_t samples = 40;
  std::size_t layers = 12;
  std::size_t dim = 16;
  std::size_t signal_layer = 5;
  double magnitude = 5.0;
  double sigma = 0.1;
  std::vector<double> direction;  // empty means e1
  std::uint64_t seed = 1;
  std::string model_id = "planted";
};

/// Difference activations equal magnitude * direction + N(0, sigma^2) noise at
/// the signal layer and pure N(0, sigma^2) noise elsewhere; negatives are N(0, 1).
inline Dataset planted_layer_dataset(const PlantedOptions& o) {
  auto ds = detail::empty_dataset(o.samples, o.layers, o.dim, {"c0", "c1"}, o.model_id);
  Vector dir = Vector::Zero(static_cast<Eigen::Index>(o.dim));
  if (o.direction.empty()) {
    dir[0] = 1.0;
  } else {
    if (o.direction.size() != o.dim) fail(ErrorKind::config, "planted direction length != dim");
    for (std::size_t k = 0; k < o.dim; ++k) dir[static_cast<Eigen::Index>(k)] = o.direction[k];
    dir.normalize();
  }
  SplitMix64 rng(o.seed);
  auto& a = ds.acts;
  for (std::size_t i = 0; i < o.samples; ++i) {
    for (std::size_t l = 0; l < o.layers; ++l) {
      const auto off = a.offset(i, l);
      for (std::size_t k = 0; k < o.dim; ++k) {
        const double neg = rng.normal();
        double diff = o.sigma * rng.normal();
        if (l == o.signal_layer) diff += o.magnitude * dir[static_cast<Eigen::Index>(k)];
        a.neg[off + k] = static_cast<float>(neg);
        a.pos[off + k] = static_cast<float>(neg + diff);
      }
    }
  }
  return ds;
}

/// One layer, d = 8, 40 samples; categories alternate every two samples.
///
/// Even samples: difference 5 e1 + e5 on top of negatives near 10 e3 that
/// spread widely along e5. Odd samples: difference +8 e2 or -7.8 e2 in turn,
/// negatives near 10 e4. Mean difference points along e1 and the centred
/// differences vary mostly along e2, so md and pca find orthogonal directions
/// and claim the two groups with anchors near 10 e3 and 10 e4.
inline Dataset two_concept_dataset(std::uint64_t seed = 7) {
  constexpr std::size_t n = 40, d = 8;
  auto ds = detail::empty_dataset(n, 1, d, {"c0", "c1"}, "two-concept");
  SplitMix64 rng(seed);
  auto& a = ds.acts;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> neg(d), diff(d);
    for (std::size_t k = 0; k < d; ++k) {
      neg[k] = 0.1 * rng.normal();
      diff[k] = 0.05 * rng.normal();
    }
    if (i % 2 == 0) {
      neg[2] += 10.0;
      neg[4] += 20.0 * (2.0 * rng.unit() - 1.0);
      diff[0] += 5.0;
      diff[4] += 1.0;
    } else {
      neg[3] += 10.0;
      diff[1] += (i / 4) % 2 == 0 ? 8.0 : -7.8;
    }
    for (std::size_t k = 0; k < d; ++k) {
      a.neg[a.offset(i, 0) + k] = static_cast<float>(neg[k]);
      a.pos[a.offset(i, 0) + k] = static_cast<float>(neg[k] + diff[k]);
    }
  }
  return ds;
}

// Planted evaluation: a toy model whose readout prefers 'N' over 'Y' unless
// the final state points along (e1 - e2) / sqrt(2), and a synthetic dataset
// with that direction at layer 5 of 12.

inline constexpr std::size_t kEvalLayers = 12;
inline constexpr std::size_t kEvalDim = 32;
inline constexpr std::size_t kEvalSignalLayer = 5;

inline std::vector<double> eval_direction() {
  std::vector<double> w(kEvalDim, 0.0);
  w[0] = 1.0 / std::sqrt(2.0);
  w[1] = -1.0 / std::sqrt(2.0);
  return w;
}

inline ToyConfig planted_eval_config() {
  ToyConfig c;
  c.vocab = 64;
  c.d_model = kEvalDim;
  c.layers = kEvalLayers;
  c.heads = 4;
  c.max_seq = 128;
  c.seed = 2024;
  ReadoutPlant p;
  for (double x : eval_direction()) p.direction.push_back(static_cast<float>(x));
  p.good_token = static_cast<Token>('Y' % 64);
  p.bad_token = static_cast<Token>('N' % 64);
  p.gain = 1.0f;
  p.margin = 6.0f;
  c.plant = p;
  return c;
}

inline Dataset planted_eval_dataset(std::uint64_t seed = 11) {
  PlantedOptions o;
  o.samples = 40;
  o.layers = kEvalLayers;
  o.dim = kEvalDim;
  o.signal_layer = kEvalSignalLayer;
  o.direction = eval_direction();
  o.seed = seed;
  o.model_id = ToyTransformer(planted_eval_config()).model_id();
  return planted_layer_dataset(o);
}

inline std::vector<SteerSample> planted_eval_samples(std::size_t n = 24) {
  std::vector<SteerSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = std::to_string(i);
    out.push_back({"q" + k, "Is claim " + k + " supported by the evidence?", "Yes, the evidence supports claim " + k + ".",
                   "No, claim " + k + " is unsupported.", "c0", "planted", "synthetic"});
  }
  return out;
}

}  // namespace masteer::fixtures
