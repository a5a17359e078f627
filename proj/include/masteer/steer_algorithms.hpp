#pragma once

// Steer-vector extractors: each maps one layer's paired activations to a
// single unit direction pointing toward the desired behavior.

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "masteer/activation_store.hpp"
#include "masteer/core.hpp"

namespace masteer {

struct SteerVector {
  std::string algorithm_id;
  Vector values;
  std::size_t layer = 0;
};

namespace detail {

inline void check_layer_activations(const LayerActivations& acts) {
  if (acts.pos.rows() != acts.neg.rows() || acts.pos.cols() != acts.neg.cols()) {
    fail(ErrorKind::shape_mismatch,
         "pos is " + std::to_string(acts.pos.rows()) + "x" + std::to_string(acts.pos.cols()) +
             " but neg is " + std::to_string(acts.neg.rows()) + "x" + std::to_string(acts.neg.cols()));
  }
  if (acts.pos.rows() < 1) fail(ErrorKind::contract_violation, "layer activations need n >= 1");
  if (!acts.pos.allFinite() || !acts.neg.allFinite()) {
    fail(ErrorKind::invalid_data, "layer activations contain non-finite values");
  }
}

inline Vector normalized_or_fail(const Vector& v, const char* what) {
  const double norm = v.norm();
  if (!(norm >= kDegenerateNorm)) {
    fail(ErrorKind::degenerate_direction, std::string(what) + ": direction norm " +
                                              std::to_string(norm) + " below threshold");
  }
  return v / norm;
}

inline Vector mean_difference(const LayerActivations& acts) {
  return (acts.pos - acts.neg).colwise().mean().transpose();
}

}  // namespace detail

/// Normalized mean of pos_i - neg_i.
inline Vector md_vector(const LayerActivations& acts) {
  detail::check_layer_activations(acts);
  return detail::normalized_or_fail(detail::mean_difference(acts), "md");
}

/// Top principal component of the mean-centered difference rows, oriented
/// along the mean difference (first-nonzero-positive when that vanishes).
inline Vector pca_vector(const LayerActivations& acts) {
  detail::check_layer_activations(acts);
  const Matrix diffs = acts.pos - acts.neg;
  const Vector mean = diffs.colwise().mean().transpose();
  const Matrix centered = diffs.rowwise() - mean.transpose();
  if (!(centered.norm() >= kDegenerateNorm)) {
    fail(ErrorKind::degenerate_direction, "pca: centered difference matrix has rank 0");
  }

  Vector pc;
  if (centered.rows() < centered.cols()) {
    // Gram route: the top eigenvector of C C^T maps to the top PC via C^T.
    const Matrix gram = centered * centered.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    pc = centered.transpose() * eig.eigenvectors().col(eig.eigenvectors().cols() - 1);
  } else {
    const Matrix cov = centered.transpose() * centered;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    pc = eig.eigenvectors().col(eig.eigenvectors().cols() - 1);
  }
  pc = detail::normalized_or_fail(pc, "pca");
  align_sign(pc, mean);
  return pc;
}

struct LogisticOptions {
  double l2 = 1e-3;
  double gradient_tolerance = 1e-8;
  int max_iterations = 200;
  // Weight norms below this mean the classifier found no signal.
  double min_weight_norm = 1e-6;
};

/// Weight vector of an L2-regularized logistic regression (pos = 1, neg = 0)
/// with an unregularized intercept. Truncated Newton: each step solves the
/// Newton system by conjugate gradients on Hessian-vector products, then
/// backtracks to satisfy the Armijo condition. Plain gradient methods stall
/// when feature scales differ by a few orders of magnitude.
inline Vector lr_vector(const LayerActivations& acts, const LogisticOptions& opt = {}) {
  detail::check_layer_activations(acts);
  const Eigen::Index n = acts.pos.rows();
  const Eigen::Index d = acts.pos.cols();
  const Eigen::Index m = 2 * n;

  Matrix x(m, d);
  x.topRows(n) = acts.pos;
  x.bottomRows(n) = acts.neg;
  Vector y(m);
  y.head(n).setOnes();
  y.tail(n).setZero();

  // params = [w; b]
  auto softplus = [](double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); };
  auto margins = [&](const Vector& params) -> Vector { return (x * params.head(d)).array() + params[d]; };
  auto objective = [&](const Vector& params) {
    const Vector z = margins(params);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) loss += y[i] > 0.5 ? softplus(-z[i]) : softplus(z[i]);
    return loss / static_cast<double>(m) + 0.5 * opt.l2 * params.head(d).squaredNorm();
  };

  Vector params = Vector::Zero(d + 1);
  Vector p_sigmoid(m);
  auto gradient = [&](const Vector& params) {
    const Vector z = margins(params);
    for (Eigen::Index i = 0; i < m; ++i) p_sigmoid[i] = 1.0 / (1.0 + std::exp(-z[i]));
    const Vector residual = p_sigmoid - y;
    Vector g(d + 1);
    g.head(d) = x.transpose() * residual / static_cast<double>(m) + opt.l2 * params.head(d);
    g[d] = residual.mean();
    return g;
  };

  Vector g = gradient(params);
  double f = objective(params);
  int iter = 0;
  for (; iter < opt.max_iterations && g.norm() > opt.gradient_tolerance; ++iter) {
    // Curvature weights at the current point; p_sigmoid was set by gradient().
    const Vector weight = (p_sigmoid.array() * (1.0 - p_sigmoid.array())).matrix() / static_cast<double>(m);
    auto hessian_times = [&](const Vector& v) {
      const Vector xv = weight.cwiseProduct((x * v.head(d)).array().matrix() + Vector::Constant(m, v[d]));
      Vector out(d + 1);
      out.head(d) = x.transpose() * xv + opt.l2 * v.head(d);
      out[d] = xv.sum();
      return out;
    };
    // CG on H p = -g, stopped early once the residual is small relative to g.
    Vector step = Vector::Zero(d + 1);
    Vector r = -g;
    Vector dir = r;
    double rr = r.squaredNorm();
    const double cg_tol = std::min(0.5, std::sqrt(g.norm())) * g.norm();
    for (Eigen::Index k = 0; k < 2 * (d + 1) && std::sqrt(rr) > cg_tol; ++k) {
      const Vector hd = hessian_times(dir);
      const double curvature = dir.dot(hd);
      if (!(curvature > 0)) break;
      const double a = rr / curvature;
      step += a * dir;
      r -= a * hd;
      const double rr_next = r.squaredNorm();
      dir = r + (rr_next / rr) * dir;
      rr = rr_next;
    }
    if (step.dot(g) >= 0) step = -g;

    const double slope = step.dot(g);
    const double slack = 4.0 * std::numeric_limits<double>::epsilon() * std::abs(f);
    double t = 1.0;
    Vector candidate;
    double f_candidate = 0.0;
    for (int halvings = 0;; ++halvings) {
      candidate = params + t * step;
      f_candidate = objective(candidate);
      if (f_candidate <= f + 1e-4 * t * slope + slack || halvings >= 60) break;
      t *= 0.5;
    }
    params = std::move(candidate);
    f = f_candidate;
    g = gradient(params);
  }
  if (g.norm() > opt.gradient_tolerance) {
    throw ConvergenceError("lr: no convergence after " + std::to_string(iter) +
                               " iterations (gradient norm " + std::to_string(g.norm()) + ")",
                           g.norm());
  }

  Vector w = params.head(d);
  if (w.norm() < opt.min_weight_norm) {
    fail(ErrorKind::degenerate_direction,
         "lr: weight norm " + std::to_string(w.norm()) + " indicates no separating signal");
  }
  w.normalize();
  if (w.dot(detail::mean_difference(acts)) < 0.0) w = -w;
  return w;
}

/// 2-means over the union of pos and neg rows. Seeds deterministically at the
/// largest-norm row and the row farthest from it. The returned direction runs
/// from the centroid holding fewer positive rows to the one holding more.
inline Vector kmeans_vector(const LayerActivations& acts, int max_iterations = 100) {
  detail::check_layer_activations(acts);
  const Eigen::Index n = acts.pos.rows();
  const Eigen::Index m = 2 * n;
  Matrix rows(m, acts.pos.cols());
  rows.topRows(n) = acts.pos;
  rows.bottomRows(n) = acts.neg;

  Eigen::Index seed0 = 0;
  rows.rowwise().squaredNorm().maxCoeff(&seed0);
  Eigen::Index seed1 = 0;
  const double spread = (rows.rowwise() - rows.row(seed0)).rowwise().squaredNorm().maxCoeff(&seed1);
  if (!(std::sqrt(spread) >= kDegenerateNorm)) {
    fail(ErrorKind::degenerate_direction, "kmeans: all rows are identical");
  }

  Matrix centroids(2, rows.cols());
  centroids.row(0) = rows.row(seed0);
  centroids.row(1) = rows.row(seed1);
  std::vector<int> assignment(static_cast<std::size_t>(m), -1);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double d0 = (rows.row(i) - centroids.row(0)).squaredNorm();
      const double d1 = (rows.row(i) - centroids.row(1)).squaredNorm();
      const int k = d1 < d0 ? 1 : 0;
      if (assignment[static_cast<std::size_t>(i)] != k) {
        assignment[static_cast<std::size_t>(i)] = k;
        changed = true;
      }
    }
    if (!changed) break;
    for (int k = 0; k < 2; ++k) {
      Vector sum = Vector::Zero(rows.cols());
      Eigen::Index count = 0;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (assignment[static_cast<std::size_t>(i)] == k) {
          sum += rows.row(i).transpose();
          ++count;
        }
      }
      if (count > 0) centroids.row(k) = (sum / static_cast<double>(count)).transpose();
    }
  }

  int pos_in_0 = 0;
  int pos_in_1 = 0;
  for (Eigen::Index i = 0; i < n; ++i) (assignment[static_cast<std::size_t>(i)] == 0 ? pos_in_0 : pos_in_1)++;
  int first = 0;
  if (pos_in_1 > pos_in_0) {
    first = 1;
  } else if (pos_in_1 == pos_in_0) {
    const Vector md = detail::mean_difference(acts);
    first = centroids.row(1).dot(md) > centroids.row(0).dot(md) ? 1 : 0;
  }
  const Vector v = (centroids.row(first) - centroids.row(1 - first)).transpose();
  return detail::normalized_or_fail(v, "kmeans");
}

using Extractor = std::function<Vector(const LayerActivations&)>;

/// Insertion-ordered library of extractors keyed by lowercase ASCII id.
class AlgorithmRegistry {
 public:
  /// Registry pre-populated with md, lr, pca, kmeans.
  AlgorithmRegistry() {
    register_algorithm("md", [](const LayerActivations& a) { return md_vector(a); });
    register_algorithm("lr", [](const LayerActivations& a) { return lr_vector(a); });
    register_algorithm("pca", [](const LayerActivations& a) { return pca_vector(a); });
    register_algorithm("kmeans", [](const LayerActivations& a) { return kmeans_vector(a); });
  }

  static AlgorithmRegistry empty() { return AlgorithmRegistry(Empty{}); }

  void register_algorithm(const std::string& id, Extractor extractor) {
    if (id.empty()) fail(ErrorKind::registration, "algorithm id must be non-empty");
    for (char c : id) {
      const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
      if (!ok) fail(ErrorKind::registration, "algorithm id '" + id + "' must be lowercase ASCII");
    }
    if (contains(id)) fail(ErrorKind::registration, "algorithm '" + id + "' already registered");
    if (!extractor) fail(ErrorKind::registration, "algorithm '" + id + "' has no extractor");
    entries_.push_back({id, std::move(extractor)});
  }

  std::vector<std::string> list_algorithms() const {
    std::vector<std::string> ids;
    ids.reserve(entries_.size());
    for (const auto& e : entries_) ids.push_back(e.id);
    return ids;
  }

  bool contains(const std::string& id) const {
    for (const auto& e : entries_) {
      if (e.id == id) return true;
    }
    return false;
  }

  const Extractor& extractor(const std::string& id) const {
    for (const auto& e : entries_) {
      if (e.id == id) return e.extractor;
    }
    fail(ErrorKind::registration, "unknown algorithm '" + id + "'");
  }

  /// Runs one extractor; outputs not already unit length are normalized.
  SteerVector extract(const std::string& id, const LayerActivations& acts, std::size_t layer) const {
    for (const auto& e : entries_) {
      if (e.id != id) continue;
      Vector v = e.extractor(acts);
      if (v.size() != acts.pos.cols()) {
        fail(ErrorKind::contract_violation, "algorithm '" + id + "' returned a vector of length " +
                                                std::to_string(v.size()));
      }
      if (std::abs(v.norm() - 1.0) > 1e-12) v = detail::normalized_or_fail(v, id.c_str());
      return {id, std::move(v), layer};
    }
    fail(ErrorKind::registration, "unknown algorithm '" + id + "'");
  }

  std::size_t size() const { return entries_.size(); }

 private:
  struct Empty {};
  explicit AlgorithmRegistry(Empty) {}

  struct Entry {
    std::string id;
    Extractor extractor;
  };
  std::vector<Entry> entries_;
};

}  // namespace masteer
