#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace trolldet {

/// Dense row-major-agnostic matrix used for all numerics.
using Mat = Eigen::MatrixXd;
/// A single row (1 x n). Token vectors and hidden states are rows.
using RowVec = Eigen::RowVectorXd;

using TokenId = std::uint32_t;

/// T x D per-token vectors; the interchange type between embedding
/// pathways and encoders. Rows at or beyond the valid length are zero.
using EmbeddedSequence = Mat;

// Error taxonomy. The CLI maps InputError (and subclasses) to exit code 1,
// anything else to exit code 2.

/// Bad input: malformed files, invalid configuration, violated preconditions.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dimension disagreement between two objects that must fit together.
class ShapeError : public InputError {
 public:
  using InputError::InputError;
};

/// Stored-data problems: bad magic, version mismatch, truncation.
class FormatError : public InputError {
 public:
  using InputError::InputError;
};

/// A training run produced a non-finite loss, gradient or parameter.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Seeded generator with platform-independent derived distributions.
///
/// std::uniform_real_distribution and std::shuffle are implementation
/// defined, so draws are derived from the raw mt19937_64 stream instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = (~std::uint64_t{0} / n) * n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    // Box-Muller; the second variate is dropped for simplicity of state.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle(order);
    return order;
  }

 private:
  std::mt19937_64 engine_;
};

/// Fills m with uniform draws in [lo, hi).
inline void fill_uniform(Mat& m, Rng& rng, double lo, double hi) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
}

/// Glorot-uniform initialisation for a fan_out x fan_in weight.
inline Mat glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Mat m(rows, cols);
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  fill_uniform(m, rng, -limit, limit);
  return m;
}

/// Rounds every entry to the nearest float32 value.
inline void round_to_float32(Mat& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
  }
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

/// 64-bit FNV-1a, stable across platforms and builds.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

}  // namespace trolldet
