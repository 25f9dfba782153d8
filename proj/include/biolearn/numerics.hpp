#pragma once

// Dense row-major matrices, deterministic products and a splittable PRNG.
//
// Products are evaluated in fixed panels of output rows. Each panel is one
// Eigen GEMM call, so the accumulation order of every output element depends
// only on the operand shapes and never on how many worker threads ran the
// panels. `set_threads(1)` is the reference mode; any other thread count
// reproduces it bit for bit.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "biolearn/error.hpp"

namespace biolearn {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Matrix: data length " + std::to_string(data_.size()) +
                       " != " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
    }
  }
  // Nested-list literal, e.g. Matrix{{1, 2}, {3, 4}}.
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

inline ConstMap view(const Matrix& m) {
  return ConstMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                  static_cast<Eigen::Index>(m.cols()));
}
inline MutMap view(Matrix& m) {
  return MutMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                static_cast<Eigen::Index>(m.cols()));
}

inline std::atomic<int>& thread_count() {
  static std::atomic<int> n{1};
  return n;
}

constexpr std::size_t kPanelRows = 256;

// Runs fn(r0, r1) over fixed panels of [0, rows).
template <typename Fn>
void for_each_panel(std::size_t rows, Fn&& fn) {
  const std::size_t panels = (rows + kPanelRows - 1) / kPanelRows;
  const auto workers =
      std::min<std::size_t>(static_cast<std::size_t>(thread_count().load()), panels);
  if (workers <= 1) {
    for (std::size_t p = 0; p < panels; ++p)
      fn(p * kPanelRows, std::min(rows, (p + 1) * kPanelRows));
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t p = next++; p < panels; p = next++)
        fn(p * kPanelRows, std::min(rows, (p + 1) * kPanelRows));
    });
  }
}

inline std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace detail

/// Number of worker threads used by the matrix products (>= 1).
inline void set_threads(int n) { detail::thread_count() = std::max(1, n); }
inline int threads() { return detail::thread_count().load(); }

/// a * b.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: " + detail::dims(a) + " * " + detail::dims(b));
  Matrix out(a.rows(), b.cols());
  if (a.cols() == 0 || out.empty()) return out;
  auto av = detail::view(a);
  auto bv = detail::view(b);
  auto ov = detail::view(out);
  detail::for_each_panel(a.rows(), [&](std::size_t r0, std::size_t r1) {
    const auto n = static_cast<Eigen::Index>(r1 - r0);
    ov.middleRows(static_cast<Eigen::Index>(r0), n).noalias() =
        av.middleRows(static_cast<Eigen::Index>(r0), n) * bv;
  });
  return out;
}

/// aᵀ * b without materialising the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw ShapeError("matmul_tn: " + detail::dims(a) + "^T * " + detail::dims(b));
  Matrix out(a.cols(), b.cols());
  if (a.rows() == 0 || out.empty()) return out;
  auto av = detail::view(a);
  auto bv = detail::view(b);
  auto ov = detail::view(out);
  detail::for_each_panel(a.cols(), [&](std::size_t r0, std::size_t r1) {
    const auto n = static_cast<Eigen::Index>(r1 - r0);
    ov.middleRows(static_cast<Eigen::Index>(r0), n).noalias() =
        av.middleCols(static_cast<Eigen::Index>(r0), n).transpose() * bv;
  });
  return out;
}

/// a * bᵀ.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt: " + detail::dims(a) + " * " + detail::dims(b) + "^T");
  Matrix out(a.rows(), b.rows());
  if (a.cols() == 0 || out.empty()) return out;
  auto av = detail::view(a);
  auto bv = detail::view(b);
  auto ov = detail::view(out);
  detail::for_each_panel(a.rows(), [&](std::size_t r0, std::size_t r1) {
    const auto n = static_cast<Eigen::Index>(r1 - r0);
    ov.middleRows(static_cast<Eigen::Index>(r0), n).noalias() =
        av.middleRows(static_cast<Eigen::Index>(r0), n) * bv.transpose();
  });
  return out;
}

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  return t;
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(what) + ": " + detail::dims(a) + " vs " + detail::dims(b));
}

/// a += s * b
inline void axpy(Matrix& a, double s, const Matrix& b) {
  require_same_shape(a, b, "axpy");
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += s * bv[i];
}

inline Matrix scaled(const Matrix& m, double s) {
  Matrix out = m;
  for (double& v : out.values()) v *= s;
  return out;
}

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

/// Copies the listed rows of `m` in order.
inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = m.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random numbers
//
// Generator: xoshiro256** 1.0 (Blackman & Vigna). The 256-bit state is filled
// from a 64-bit key with SplitMix64. A child stream is keyed by
// splitmix64(key ^ splitmix64(stream_id + golden)), i.e. it is a pure function
// of (parent key, stream id) and never of how many draws the parent made.
//
// uniform(): top 53 bits of a draw scaled by 2^-53, giving [0, 1).
// normal():  Box-Muller on (1 - u1, u2); both variates of a pair are used.

class Rng {
 public:
  static constexpr const char* kAlgorithm = "xoshiro256**/splitmix64";

  explicit Rng(std::uint64_t seed = 0) : key_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64(sm);
  }

  std::uint64_t key() const { return key_; }

  Rng split(std::uint64_t stream_id) const {
    std::uint64_t t = stream_id + 0x9E3779B97F4A7C15ULL;
    const std::uint64_t mixed = key_ ^ splitmix64(t);
    std::uint64_t u = mixed;
    return Rng(splitmix64(u));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Uniform integer in [0, n) by rejection (no modulo bias).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ParameterError("Rng::below: n must be positive");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Fisher-Yates, from the back.
  template <typename T>
  void shuffle(std::span<T> v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline std::vector<double> draw_uniform(Rng& rng, double lo, double hi, std::size_t n) {
  if (!(lo < hi)) throw ParameterError("draw_uniform: require lo < hi");
  std::vector<double> out(n);
  const double width = hi - lo;
  for (double& v : out) {
    v = lo + width * rng.uniform();
    if (v >= hi) v = std::nextafter(hi, lo);  // rounding can land on hi
  }
  return out;
}

inline std::vector<double> draw_normal(Rng& rng, double mean, double std, std::size_t n) {
  if (!(std >= 0.0)) throw ParameterError("draw_normal: std must be >= 0");
  std::vector<double> out(n);
  for (double& v : out) v = mean + std * rng.normal();
  return out;
}

}  // namespace biolearn
