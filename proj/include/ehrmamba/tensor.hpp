#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ehrmamba/error.hpp"

namespace ehrmamba {

// Dense row-major matrix. Vectors are stored as 1 x n. Training math runs in
// double; the reference (tape-free) forward path is also instantiated with
// long double for finite-difference checks.
template <class S>
class BasicMatrix {
 public:
  using value_type = S;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, S fill = S(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<S> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix: " + std::to_string(data_.size()) + " values for " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  template <class T>
  static BasicMatrix cast(const BasicMatrix<T>& other) {
    BasicMatrix out(other.rows(), other.cols());
    for (std::size_t i = 0; i < other.size(); ++i) out[i] = static_cast<S>(other[i]);
    return out;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& values() { return data_; }
  const std::vector<S>& values() const { return data_; }

  S& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  S operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  S& operator[](std::size_t i) { return data_[i]; }
  S operator[](std::size_t i) const { return data_[i]; }

  std::span<S> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const S> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const BasicMatrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  friend bool operator==(const BasicMatrix& a, const BasicMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<S> data_;
};

using Matrix = BasicMatrix<double>;

template <class S>
void require_shape(const BasicMatrix<S>& m, std::size_t rows, std::size_t cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                     ", got " + m.shape_string());
  }
}

// out = x * w for x (L x k) and w (k x n). The weight may be stored in a
// different precision than the activations.
template <class S, class W>
BasicMatrix<S> matmul(const BasicMatrix<S>& x, const BasicMatrix<W>& w) {
  if (x.cols() != w.rows()) {
    throw ShapeError("matmul: " + x.shape_string() + " * " + w.shape_string());
  }
  BasicMatrix<S> out(x.rows(), w.cols());
  const std::size_t k = x.cols();
  const std::size_t n = w.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    S* o = out.data() + i * n;
    const S* xi = x.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const S a = xi[p];
      if (a == S(0)) continue;
      const W* wp = w.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += a * static_cast<S>(wp[j]);
    }
  }
  return out;
}

// out = x * w^T for x (L x n) and w (k x n).
inline Matrix matmul_transposed(const Matrix& x, const Matrix& w) {
  if (x.cols() != w.cols()) {
    throw ShapeError("matmul_transposed: " + x.shape_string() + " * T(" + w.shape_string() + ")");
  }
  Matrix out(x.rows(), w.rows());
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xi = x.data() + i * n;
    for (std::size_t j = 0; j < w.rows(); ++j) {
      const double* wj = w.data() + j * n;
      double acc = 0.0;
      for (std::size_t p = 0; p < n; ++p) acc += xi[p] * wj[p];
      out(i, j) = acc;
    }
  }
  return out;
}

// out = x^T * y for x (L x k) and y (L x n); accumulates into out (k x n).
inline void add_transposed_product(const Matrix& x, const Matrix& y, Matrix& out) {
  if (x.rows() != y.rows() || out.rows() != x.cols() || out.cols() != y.cols()) {
    throw ShapeError("add_transposed_product: shape mismatch");
  }
  const std::size_t k = x.cols();
  const std::size_t n = y.cols();
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const double* xt = x.data() + t * k;
    const double* yt = y.data() + t * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = xt[p];
      if (a == 0.0) continue;
      double* o = out.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += a * yt[j];
    }
  }
}

template <class S>
S max_abs_diff(std::span<const S> a, std::span<const S> b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: length mismatch");
  S m = S(0);
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, S(std::abs(a[i] - b[i])));
  return m;
}

template <class S>
S max_abs_diff(const BasicMatrix<S>& a, const BasicMatrix<S>& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
  }
  return max_abs_diff(std::span<const S>(a.values()), std::span<const S>(b.values()));
}

// splitmix64 finalizer; derives independent seed streams from one seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  return mix_seed(mix_seed(mix_seed(seed) ^ stream) ^ index);
}

using Rng = std::mt19937_64;

// uniform double in [0, 1) from the raw engine output; does not depend on the
// standard library's distribution implementation.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline void fill_normal(Matrix& m, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : m.values()) v = dist(rng);
}

inline void fill_uniform(Matrix& m, Rng& rng, double lo, double hi) {
  for (auto& v : m.values()) v = lo + (hi - lo) * uniform01(rng);
}

template <class S>
S sigmoid(S x) {
  using std::exp;
  if (x >= S(0)) return S(1) / (S(1) + exp(-x));
  const S e = exp(x);
  return e / (S(1) + e);
}

template <class S>
S silu(S x) {
  return x * sigmoid(x);
}

template <class S>
S softplus(S x) {
  using std::exp;
  using std::log1p;
  if (x > S(0)) return x + log1p(exp(-x));
  return log1p(exp(x));
}

}  // namespace ehrmamba
