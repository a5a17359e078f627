#pragma once

// Strategy construction: per-layer aggregated steer vectors, weak-sample
// layer selection, sample-to-algorithm assignment and profile assembly.

#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "masteer/activation_store.hpp"
#include "masteer/core.hpp"
#include "masteer/steer_algorithms.hpp"

namespace masteer {

inline constexpr double kDefaultTau = 0.3;

struct LayerDiagnostics {
  std::size_t layer = 0;
  double weak_ratio = 1.0;
  std::map<std::string, std::size_t> match_counts;  // algorithm -> non-weak rows it wins
  std::size_t num_samples = 0;
  std::size_t weak_count = 0;
  bool viable = false;
  std::map<std::string, std::string> unavailable;  // algorithm -> reason
};

/// Category vectors for one algorithm, in declared category order.
inline std::vector<SteerVector> category_steer_vectors(const std::vector<CategorySlice>& slices,
                                                       std::size_t layer, const std::string& algorithm,
                                                       const AlgorithmRegistry& registry) {
  std::vector<SteerVector> out;
  out.reserve(slices.size());
  for (const auto& slice : slices) {
    try {
      out.push_back(registry.extract(algorithm, slice.acts.layer(layer), layer));
    } catch (const ConvergenceError& e) {
      throw ConvergenceError("category '" + slice.category + "': " + e.what(), e.gradient_norm());
    } catch (const Error& e) {
      fail(e.kind(), "category '" + slice.category + "': " + e.what());
    }
  }
  return out;
}

inline std::vector<SteerVector> category_steer_vectors(const ActivationSet& acts, std::size_t layer,
                                                       const std::string& algorithm,
                                                       const AlgorithmRegistry& registry) {
  return category_steer_vectors(split_by_category(acts), layer, algorithm, registry);
}

/// First column of Q from the QR factorization of [v_1 ... v_k], oriented to
/// have a non-negative dot product with the mean input vector.
inline SteerVector aggregate_qr(const std::vector<SteerVector>& vectors) {
  if (vectors.empty()) fail(ErrorKind::contract_violation, "aggregate_qr needs at least one vector");
  const Eigen::Index d = vectors.front().values.size();
  Matrix columns(d, static_cast<Eigen::Index>(vectors.size()));
  for (std::size_t j = 0; j < vectors.size(); ++j) {
    if (vectors[j].values.size() != d) {
      fail(ErrorKind::shape_mismatch, "aggregate_qr: vector " + std::to_string(j) + " has length " +
                                          std::to_string(vectors[j].values.size()) + ", expected " +
                                          std::to_string(d));
    }
    columns.col(static_cast<Eigen::Index>(j)) = vectors[j].values;
  }
  Eigen::HouseholderQR<Matrix> qr(columns);
  Vector e1 = Vector::Zero(d);
  e1[0] = 1.0;
  Vector q = qr.householderQ() * e1;
  q.normalize();
  // q is +-a1/|a1| up to rounding. A unit a1 is returned as is so that
  // re-aggregating an aggregate is an exact fixed point.
  if (const Vector a1 = columns.col(0); std::abs(a1.norm() - 1.0) <= 1e-12) q = q.dot(a1) >= 0 ? a1 : Vector(-a1);
  const Vector mean = columns.rowwise().mean();
  align_sign(q, mean);
  return {vectors.front().algorithm_id, std::move(q), vectors.front().layer};
}

/// Row i = pos_i - neg_i at `layer`.
inline Matrix difference_activations(const ActivationSet& acts, std::size_t layer) {
  const auto slice = acts.layer(layer);
  return slice.pos - slice.neg;
}

namespace detail {

inline void check_unit(const std::vector<SteerVector>& vectors) {
  for (const auto& v : vectors) {
    if (std::abs(v.values.norm() - 1.0) > kBundleUnitTolerance) {
      fail(ErrorKind::contract_violation, "steer vector '" + v.algorithm_id + "' is not unit norm (" +
                                              std::to_string(v.values.norm()) + ")");
    }
  }
}

inline void check_tau(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    fail(ErrorKind::contract_violation, "tau must lie in (0, 1), got " + std::to_string(tau));
  }
}

struct BestMatch {
  const SteerVector* vector = nullptr;
  double similarity = 0.0;
};

/// Highest-cosine vector for one difference row; ties go to the smaller id.
inline BestMatch best_match(const Vector& row, const std::vector<SteerVector>& vectors) {
  BestMatch best;
  const double norm = row.norm();
  for (const auto& v : vectors) {
    const double c = norm < kDegenerateNorm ? 0.0 : v.values.dot(row) / (norm * v.values.norm());
    if (best.vector == nullptr || c > best.similarity ||
        (c == best.similarity && v.algorithm_id < best.vector->algorithm_id)) {
      best = {&v, c};
    }
  }
  return best;
}

}  // namespace detail

/// Fraction of difference rows whose best cosine against `vectors` is below tau.
/// Zero rows always count as weak.
inline LayerDiagnostics weak_sample_ratio(const Matrix& diffs, const std::vector<SteerVector>& vectors,
                                          double tau) {
  detail::check_tau(tau);
  detail::check_unit(vectors);
  LayerDiagnostics diag;
  diag.layer = vectors.empty() ? 0 : vectors.front().layer;
  diag.num_samples = static_cast<std::size_t>(diffs.rows());
  for (const auto& v : vectors) diag.match_counts[v.algorithm_id] = 0;
  for (Eigen::Index i = 0; i < diffs.rows(); ++i) {
    const Vector row = diffs.row(i).transpose();
    const auto best = detail::best_match(row, vectors);
    if (best.vector == nullptr || row.norm() < kDegenerateNorm || best.similarity < tau) {
      ++diag.weak_count;
    } else {
      ++diag.match_counts[best.vector->algorithm_id];
    }
  }
  diag.weak_ratio = diag.num_samples == 0
                        ? 1.0
                        : static_cast<double>(diag.weak_count) / static_cast<double>(diag.num_samples);
  diag.viable = !vectors.empty() && diag.weak_count < diag.num_samples;
  return diag;
}

/// Aggregated vectors for every registered algorithm at one layer.
/// Algorithms that fail on any category are reported in `unavailable`.
inline std::vector<SteerVector> layer_vectors(const std::vector<CategorySlice>& slices, std::size_t layer,
                                              const AlgorithmRegistry& registry,
                                              std::map<std::string, std::string>* unavailable = nullptr) {
  std::vector<SteerVector> out;
  for (const auto& id : registry.list_algorithms()) {
    try {
      auto v = aggregate_qr(category_steer_vectors(slices, layer, id, registry));
      v.algorithm_id = id;
      v.layer = layer;
      out.push_back(std::move(v));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate_direction && e.kind() != ErrorKind::convergence_failure) throw;
      if (unavailable != nullptr) (*unavailable)[id] = e.what();
    }
  }
  return out;
}

struct LayerSelection {
  std::size_t layer = 0;
  std::vector<LayerDiagnostics> diagnostics;           // one per layer
  std::vector<std::vector<SteerVector>> vectors;       // [layer] -> aggregated vectors
};

inline LayerSelection select_layer(const ActivationSet& acts, const AlgorithmRegistry& registry, double tau) {
  detail::check_tau(tau);
  if (registry.size() == 0) fail(ErrorKind::contract_violation, "algorithm registry is empty");
  const auto slices = split_by_category(acts);
  LayerSelection sel;
  sel.diagnostics.reserve(acts.num_layers);
  sel.vectors.reserve(acts.num_layers);
  std::optional<std::size_t> best;
  for (std::size_t l = 0; l < acts.num_layers; ++l) {
    std::map<std::string, std::string> unavailable;
    auto vectors = layer_vectors(slices, l, registry, &unavailable);
    auto diag = weak_sample_ratio(difference_activations(acts, l), vectors, tau);
    diag.layer = l;
    diag.unavailable = std::move(unavailable);
    if (diag.viable && (!best || diag.weak_ratio < sel.diagnostics[*best].weak_ratio)) best = l;
    sel.diagnostics.push_back(std::move(diag));
    sel.vectors.push_back(std::move(vectors));
  }
  if (!best) fail(ErrorKind::no_viable_layer, "no layer yields a usable steer direction");
  sel.layer = *best;
  return sel;
}

struct Assignment {
  std::map<std::string, std::vector<std::string>> assigned;  // algorithm -> sample ids
  std::map<std::string, std::vector<std::size_t>> rows;      // algorithm -> row indices
  std::vector<std::string> unmatched;
  std::vector<double> best_similarity;  // per row
};

inline Assignment assign_samples(const Matrix& diffs, const std::vector<SteerVector>& vectors, double tau,
                                 const std::vector<std::string>& sample_ids) {
  detail::check_unit(vectors);
  if (sample_ids.size() != static_cast<std::size_t>(diffs.rows())) {
    fail(ErrorKind::shape_mismatch, "assign_samples: " + std::to_string(sample_ids.size()) + " ids for " +
                                        std::to_string(diffs.rows()) + " rows");
  }
  Assignment out;
  for (const auto& v : vectors) {
    out.assigned[v.algorithm_id];
    out.rows[v.algorithm_id];
  }
  for (Eigen::Index i = 0; i < diffs.rows(); ++i) {
    const Vector row = diffs.row(i).transpose();
    const auto best = detail::best_match(row, vectors);
    out.best_similarity.push_back(best.similarity);
    const auto& id = sample_ids[static_cast<std::size_t>(i)];
    if (best.vector == nullptr || row.norm() < kDegenerateNorm || best.similarity < tau) {
      out.unmatched.push_back(id);
    } else {
      out.assigned[best.vector->algorithm_id].push_back(id);
      out.rows[best.vector->algorithm_id].push_back(static_cast<std::size_t>(i));
    }
  }
  return out;
}

struct ProfileBuild {
  std::vector<StrategyProfile> profiles;
  std::vector<std::string> omitted;   // algorithms with no assigned samples
  std::vector<std::string> warnings;
};

/// Anchor = mean negative activation, strength = mean projection of the
/// difference rows onto the steer, both over each algorithm's assigned rows.
inline ProfileBuild build_profiles(const ActivationSet& acts, const Assignment& assignment,
                                   const std::vector<SteerVector>& vectors, std::size_t layer) {
  const auto slice = acts.layer(layer);
  ProfileBuild out;
  for (const auto& v : vectors) {
    const auto it = assignment.rows.find(v.algorithm_id);
    if (it == assignment.rows.end() || it->second.empty()) {
      out.omitted.push_back(v.algorithm_id);
      continue;
    }
    const auto& rows = it->second;
    Vector anchor = Vector::Zero(slice.neg.cols());
    double strength = 0.0;
    for (std::size_t r : rows) {
      const auto i = static_cast<Eigen::Index>(r);
      anchor += slice.neg.row(i).transpose();
      strength += (slice.pos.row(i) - slice.neg.row(i)).dot(v.values.transpose());
    }
    anchor /= static_cast<double>(rows.size());
    strength /= static_cast<double>(rows.size());
    if (strength < 0.0) {
      out.warnings.push_back("algorithm '" + v.algorithm_id + "' has negative default strength " +
                             std::to_string(strength));
    }
    out.profiles.push_back({v.algorithm_id, layer, v.values, std::move(anchor), strength,
                            assignment.assigned.at(v.algorithm_id)});
  }
  if (out.profiles.empty()) fail(ErrorKind::no_viable_strategy, "no algorithm received any sample");
  return out;
}

struct BuildReport {
  std::size_t layer = 0;
  bool forced_layer = false;
  double tau = kDefaultTau;
  std::vector<LayerDiagnostics> diagnostics;
  std::vector<std::string> unmatched;
  std::vector<std::string> omitted;
  std::vector<std::string> warnings;
};

struct BuildResult {
  StrategyBundle bundle;
  BuildReport report;
};

namespace detail {

inline BuildResult assemble(const ActivationSet& acts, const std::vector<SteerVector>& vectors,
                            std::size_t layer, double tau, const AlgorithmRegistry& registry,
                            const std::string& issue) {
  const auto diffs = difference_activations(acts, layer);
  const auto assignment = assign_samples(diffs, vectors, tau, acts.sample_ids);
  auto built = build_profiles(acts, assignment, vectors, layer);

  BuildResult result;
  auto& b = result.bundle;
  b.model_id = acts.model_id;
  b.issue = issue;
  b.layer = layer;
  b.num_layers = acts.num_layers;
  b.hidden_dim = acts.hidden_dim;
  b.tau = tau;
  b.beta_default = 1.0;
  b.algorithms = registry.list_algorithms();
  // Bundles carry binary32 payloads; quantize now so in-memory and on-disk agree.
  for (auto& p : built.profiles) {
    p.steer = quantize_to_float(p.steer);
    p.anchor = quantize_to_float(p.anchor);
    p.strength = quantize_to_float(p.strength);
  }
  b.profiles = std::move(built.profiles);

  result.report.layer = layer;
  result.report.tau = tau;
  result.report.unmatched = assignment.unmatched;
  result.report.omitted = std::move(built.omitted);
  result.report.warnings = std::move(built.warnings);
  return result;
}

}  // namespace detail

/// End-to-end construction: layer selection by minimum weak-sample ratio,
/// then assignment and profiles at that layer.
inline BuildResult build_bundle(const ActivationSet& acts, const AlgorithmRegistry& registry,
                                double tau = kDefaultTau, const std::string& issue = {}) {
  acts.validate();
  auto selection = select_layer(acts, registry, tau);
  auto result = detail::assemble(acts, selection.vectors[selection.layer], selection.layer, tau, registry, issue);
  result.report.diagnostics = std::move(selection.diagnostics);
  return result;
}

/// Builds profiles at a caller-chosen layer, bypassing layer selection.
inline BuildResult build_bundle_at_layer(const ActivationSet& acts, const AlgorithmRegistry& registry,
                                         double tau, std::size_t layer, const std::string& issue = {}) {
  acts.validate();
  detail::check_tau(tau);
  std::map<std::string, std::string> unavailable;
  const auto vectors = layer_vectors(split_by_category(acts), layer, registry, &unavailable);
  if (vectors.empty()) {
    fail(ErrorKind::no_viable_layer, "layer " + std::to_string(layer) + " yields no steer direction");
  }
  auto result = detail::assemble(acts, vectors, layer, tau, registry, issue);
  result.report.forced_layer = true;
  auto diag = weak_sample_ratio(difference_activations(acts, layer), vectors, tau);
  diag.layer = layer;
  diag.unavailable = std::move(unavailable);
  result.report.diagnostics.push_back(std::move(diag));
  return result;
}

inline nlohmann::json report_json(const BuildResult& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& d : r.report.diagnostics) {
    layers.push_back({{"layer", d.layer},
                      {"weak_ratio", d.weak_ratio},
                      {"weak_count", d.weak_count},
                      {"num_samples", d.num_samples},
                      {"viable", d.viable},
                      {"match_counts", d.match_counts},
                      {"unavailable", d.unavailable}});
  }
  nlohmann::json profiles = nlohmann::json::array();
  for (const auto& p : r.bundle.profiles) {
    profiles.push_back({{"algorithm", p.algorithm_id},
                        {"strength", p.strength},
                        {"assigned_count", p.assigned_ids.size()}});
  }
  return {{"layer", r.report.layer},
          {"forced_layer", r.report.forced_layer},
          {"tau", r.report.tau},
          {"layers", layers},
          {"profiles", profiles},
          {"unmatched", r.report.unmatched},
          {"omitted", r.report.omitted},
          {"warnings", r.report.warnings}};
}

/// Human-readable build report: r_l table, chosen layer, profile summary.
inline std::string format_report(const BuildResult& r) {
  std::ostringstream out;
  out << "tau = " << r.report.tau << "\n";
  out << "layer  weak_ratio  matches\n";
  for (const auto& d : r.report.diagnostics) {
    out << std::setw(5) << d.layer << "  " << std::fixed << std::setprecision(4) << std::setw(10)
        << d.weak_ratio << "  ";
    out.unsetf(std::ios::floatfield);
    bool first = true;
    for (const auto& [id, count] : d.match_counts) {
      out << (first ? "" : " ") << id << "=" << count;
      first = false;
    }
    for (const auto& [id, reason] : d.unavailable) out << " " << id << "=n/a";
    if (!d.viable) out << " (not viable)";
    out << (d.layer == r.report.layer ? "  <- selected" : "") << "\n";
  }
  out << "selected layer: " << r.report.layer << (r.report.forced_layer ? " (forced)" : "") << "\n";
  for (const auto& p : r.bundle.profiles) {
    out << "profile " << p.algorithm_id << ": assigned=" << p.assigned_ids.size()
        << " strength=" << std::setprecision(6) << p.strength << "\n";
  }
  for (const auto& id : r.report.omitted) out << "profile " << id << ": omitted (no matched samples)\n";
  out << "unmatched samples: " << r.report.unmatched.size() << "\n";
  for (const auto& w : r.report.warnings) out << "warning: " << w << "\n";
  return out.str();
}

}  // namespace masteer
