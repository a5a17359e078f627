#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <zlib.h>

namespace masteer {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Error categories surfaced by every module. The CLI prints the category
/// name verbatim so failures are machine-parsable.
enum class ErrorKind {
  shape_mismatch,
  io,
  corrupt_dataset,
  invalid_data,
  corrupt_bundle,
  unsupported_version,
  degenerate_direction,
  convergence_failure,
  registration,
  contract_violation,
  no_viable_layer,
  no_viable_strategy,
  undefined_activation,
  capability,
  config,
  input,
  parse,
  pipeline,
};

inline constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape_mismatch: return "shape-mismatch";
    case ErrorKind::io: return "io";
    case ErrorKind::corrupt_dataset: return "corrupt-dataset";
    case ErrorKind::invalid_data: return "invalid-data";
    case ErrorKind::corrupt_bundle: return "corrupt-bundle";
    case ErrorKind::unsupported_version: return "unsupported-version";
    case ErrorKind::degenerate_direction: return "degenerate-direction";
    case ErrorKind::convergence_failure: return "convergence-failure";
    case ErrorKind::registration: return "registration";
    case ErrorKind::contract_violation: return "contract-violation";
    case ErrorKind::no_viable_layer: return "no-viable-layer";
    case ErrorKind::no_viable_strategy: return "no-viable-strategy";
    case ErrorKind::undefined_activation: return "undefined-activation";
    case ErrorKind::capability: return "capability";
    case ErrorKind::config: return "config";
    case ErrorKind::input: return "input";
    case ErrorKind::parse: return "parse";
    case ErrorKind::pipeline: return "pipeline";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised by the logistic-regression extractor when the iteration cap is hit.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, double gradient_norm)
      : Error(ErrorKind::convergence_failure, message), gradient_norm_(gradient_norm) {}

  double gradient_norm() const noexcept { return gradient_norm_; }

 private:
  double gradient_norm_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

// Pre-normalization norms below this are treated as "no direction".
inline constexpr double kDegenerateNorm = 1e-12;

inline std::uint32_t crc32_of(std::span<const std::byte> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large payloads.
  const auto* data = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t remaining = bytes.size();
  while (remaining > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(remaining, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    remaining -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::uint32_t crc32_of(std::span<const float> values) {
  return crc32_of(std::as_bytes(values));
}

/// Rounds every entry to the nearest binary32 value, keeping double storage.
inline Vector quantize_to_float(const Vector& v) {
  Vector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = static_cast<double>(static_cast<float>(v[i]));
  return out;
}

inline double quantize_to_float(double x) {
  return static_cast<double>(static_cast<float>(x));
}

/// Cosine similarity; zero-norm operands yield 0.
inline double cosine(const Vector& a, const Vector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na < kDegenerateNorm || nb < kDegenerateNorm) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

/// Flips `v` so its first nonzero component is positive.
inline void first_nonzero_positive(Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0) {
      if (v[i] < 0.0) v = -v;
      return;
    }
  }
}

/// Orients `v` to have a non-negative dot product with `reference`, falling
/// back to the first-nonzero-positive rule when the dot product vanishes.
inline void align_sign(Vector& v, const Vector& reference) {
  const double dot = v.dot(reference);
  if (std::abs(dot) <= kDegenerateNorm * std::max(1.0, reference.norm())) {
    first_nonzero_positive(v);
  } else if (dot < 0.0) {
    v = -v;
  }
}

inline bool all_finite(std::span<const float> values) {
  for (float x : values) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace masteer
