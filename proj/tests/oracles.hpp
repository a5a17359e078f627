#pragma once

// Reference computations written with plain loops, independent of the
// library's Eigen code paths. Tests compare the library against these.

#include <cmath>
#include <limits>
#include <vector>

#include "masteer/core.hpp"

namespace masteer::oracle {

using Rows = std::vector<std::vector<double>>;

inline Rows rows_of(const Matrix& m) {
  Rows out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  }
  return out;
}

inline double norm(const std::vector<double>& v) {
  long double s = 0;
  for (double x : v) s += static_cast<long double>(x) * x;
  return static_cast<double>(std::sqrt(s));
}

inline std::vector<double> normalized(std::vector<double> v) {
  const double n = norm(v);
  for (auto& x : v) x /= n;
  return v;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(s);
}

inline double cos(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a, b) / (norm(a) * norm(b));
}

inline std::vector<double> mean_difference(const Rows& pos, const Rows& neg) {
  const std::size_t d = pos[0].size();
  std::vector<double> out(d);
  for (std::size_t k = 0; k < d; ++k) {
    long double s = 0;
    for (std::size_t i = 0; i < pos.size(); ++i) s += static_cast<long double>(pos[i][k]) - neg[i][k];
    out[k] = static_cast<double>(s / static_cast<long double>(pos.size()));
  }
  return out;
}

inline std::vector<double> md(const Rows& pos, const Rows& neg) { return normalized(mean_difference(pos, neg)); }

/// Top eigenvector of the centered difference covariance by power iteration,
/// oriented along the mean difference (first nonzero positive on a tie).
inline std::vector<double> pca(const Rows& pos, const Rows& neg, int iterations = 20000) {
  const std::size_t n = pos.size(), d = pos[0].size();
  const auto mean = mean_difference(pos, neg);
  std::vector<std::vector<double>> c(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) c[i][k] = (pos[i][k] - neg[i][k]) - mean[k];
  }
  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) {
      for (std::size_t i = 0; i < n; ++i) cov[a][b] += c[i][a] * c[i][b];
    }
  }
  std::vector<double> v(d);
  for (std::size_t k = 0; k < d; ++k) v[k] = 1.0 + 0.01 * static_cast<double>(k);
  v = normalized(v);
  for (int it = 0; it < iterations; ++it) {
    std::vector<double> next(d, 0.0);
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) next[a] += cov[a][b] * v[b];
    }
    next = normalized(next);
    double delta = 0;
    for (std::size_t k = 0; k < d; ++k) delta = std::max(delta, std::abs(next[k] - v[k]));
    v = next;
    if (delta < 1e-15) break;
  }
  const double s = dot(v, mean);
  if (std::abs(s) > 1e-12) {
    if (s < 0) for (auto& x : v) x = -x;
  } else {
    for (double x : v) {
      if (x != 0.0) {
        if (x < 0) for (auto& y : v) y = -y;
        break;
      }
    }
  }
  return v;
}

/// Globally optimal 2-means over all pos and neg rows by enumerating every
/// bipartition; direction from the centroid holding more positive rows to
/// the other. Feasible up to about 20 rows.
inline std::vector<double> kmeans_exhaustive(const Rows& pos, const Rows& neg) {
  Rows rows = pos;
  rows.insert(rows.end(), neg.begin(), neg.end());
  const std::size_t m = rows.size(), d = rows[0].size(), n = pos.size();
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_dir;
  // Row 0 is pinned to cluster 0 so each partition is visited once.
  for (std::uint64_t mask = 1; mask < (1ull << (m - 1)); ++mask) {
    std::vector<double> c0(d, 0.0), c1(d, 0.0);
    std::size_t n0 = 0, n1 = 0, pos0 = 0, pos1 = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const bool in1 = i > 0 && ((mask >> (i - 1)) & 1u);
      auto& c = in1 ? c1 : c0;
      for (std::size_t k = 0; k < d; ++k) c[k] += rows[i][k];
      (in1 ? n1 : n0)++;
      if (i < n) (in1 ? pos1 : pos0)++;
    }
    for (std::size_t k = 0; k < d; ++k) {
      c0[k] /= static_cast<double>(n0);
      c1[k] /= static_cast<double>(n1);
    }
    double sse = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const bool in1 = i > 0 && ((mask >> (i - 1)) & 1u);
      const auto& c = in1 ? c1 : c0;
      for (std::size_t k = 0; k < d; ++k) sse += (rows[i][k] - c[k]) * (rows[i][k] - c[k]);
    }
    if (sse < best) {
      best = sse;
      std::vector<double> dir(d);
      const bool first_is_1 = pos1 > pos0;
      for (std::size_t k = 0; k < d; ++k) dir[k] = first_is_1 ? c1[k] - c0[k] : c0[k] - c1[k];
      best_dir = normalized(dir);
    }
  }
  return best_dir;
}

/// Fixed-step full-batch gradient descent on the same regularized log-loss
/// (pos labelled 1, neg 0, intercept unregularized). Returns the unit weight.
inline std::vector<double> logistic_gd(const Rows& pos, const Rows& neg, double l2, double step, int iterations) {
  const std::size_t d = pos[0].size();
  Rows x = pos;
  x.insert(x.end(), neg.begin(), neg.end());
  const std::size_t m = x.size();
  std::vector<double> w(d, 0.0);
  double b = 0.0;
  for (int it = 0; it < iterations; ++it) {
    std::vector<double> gw(d, 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double z = b;
      for (std::size_t k = 0; k < d; ++k) z += w[k] * x[i][k];
      const double r = 1.0 / (1.0 + std::exp(-z)) - (i < pos.size() ? 1.0 : 0.0);
      for (std::size_t k = 0; k < d; ++k) gw[k] += r * x[i][k];
      gb += r;
    }
    for (std::size_t k = 0; k < d; ++k) w[k] -= step * (gw[k] / static_cast<double>(m) + l2 * w[k]);
    b -= step * gb / static_cast<double>(m);
  }
  return normalized(w);
}

inline std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace masteer::oracle
