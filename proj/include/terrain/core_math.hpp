#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "terrain/error.hpp"

namespace terrain {

/// Dense vector of scalars. Biases, hidden states and distributions live here.
template <typename T>
class BasicVector {
 public:
  using value_type = T;

  BasicVector() = default;
  explicit BasicVector(std::size_t dim, T fill = T{0}) : values_(dim, fill) {}
  BasicVector(std::initializer_list<T> init) : values_(init) {}
  explicit BasicVector(std::vector<T> values) : values_(std::move(values)) {}

  std::size_t dim() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  auto begin() { return values_.begin(); }
  auto end() { return values_.end(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  std::span<T> span() { return values_; }
  std::span<const T> span() const { return values_; }
  const std::vector<T>& values() const { return values_; }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  friend bool operator==(const BasicVector&, const BasicVector&) = default;

 private:
  std::vector<T> values_;
};

/// Dense row-major matrix.
template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  BasicMatrix(std::initializer_list<std::initializer_list<T>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    values_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw ShapeError("ragged matrix initializer");
      values_.insert(values_.end(), row.begin(), row.end());
    }
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::span<T> span() { return values_; }
  std::span<const T> span() const { return values_; }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> values_;
};

using Vector = BasicVector<double>;
using Matrix = BasicMatrix<double>;

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_string() + " times " + b.shape_string());
  }
  BasicMatrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      if (aik == T{0}) continue;
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

// Kernels used by the recurrent cells. Shapes are checked by callers.

/// out += m * x
template <typename T>
inline void gemv_add(const BasicMatrix<T>& m, std::span<const std::type_identity_t<T>> x,
                     std::span<std::type_identity_t<T>> out) {
  assert(m.cols() == x.size() && m.rows() == out.size());
  const std::size_t cols = m.cols();
  const T* p = m.data();
  for (std::size_t r = 0; r < m.rows(); ++r, p += cols) {
    T acc{0};
    for (std::size_t c = 0; c < cols; ++c) acc += p[c] * x[c];
    out[r] += acc;
  }
}

/// out += m^T * y
template <typename T>
inline void gemv_t_add(const BasicMatrix<T>& m, std::span<const std::type_identity_t<T>> y,
                       std::span<std::type_identity_t<T>> out) {
  assert(m.rows() == y.size() && m.cols() == out.size());
  const std::size_t cols = m.cols();
  const T* p = m.data();
  for (std::size_t r = 0; r < m.rows(); ++r, p += cols) {
    const T yr = y[r];
    if (yr == T{0}) continue;
    for (std::size_t c = 0; c < cols; ++c) out[c] += p[c] * yr;
  }
}

/// g += y * x^T
template <typename T>
inline void outer_add(BasicMatrix<T>& g, std::span<const std::type_identity_t<T>> y,
                      std::span<const std::type_identity_t<T>> x) {
  assert(g.rows() == y.size() && g.cols() == x.size());
  const std::size_t cols = g.cols();
  T* p = g.data();
  for (std::size_t r = 0; r < g.rows(); ++r, p += cols) {
    const T yr = y[r];
    if (yr == T{0}) continue;
    for (std::size_t c = 0; c < cols; ++c) p[c] += yr * x[c];
  }
}

enum class Activation { sigmoid, tanh };

template <typename T>
inline T sigmoid(T v) {
  // Branch keeps exp() from overflowing for large |v|.
  if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

template <typename T>
BasicVector<T> apply_activation(const BasicVector<T>& x, Activation kind) {
  BasicVector<T> out(x.dim());
  for (std::size_t i = 0; i < x.dim(); ++i) {
    out[i] = kind == Activation::sigmoid ? sigmoid(x[i]) : std::tanh(x[i]);
  }
  return out;
}

template <typename T>
void softmax_inplace(std::span<T> v) {
  if (v.empty()) return;
  const T mx = *std::max_element(v.begin(), v.end());
  T sum{0};
  for (auto& e : v) {
    e = std::exp(e - mx);
    sum += e;
  }
  for (auto& e : v) e /= sum;
}

template <typename T>
BasicVector<T> softmax(const BasicVector<T>& logits) {
  BasicVector<T> out = logits;
  softmax_inplace(out.span());
  return out;
}

inline constexpr double kLogClamp = 1e-12;

/// Negative log-likelihood of the one-hot target under distribution `y`.
template <typename T>
T cross_entropy(const BasicVector<T>& y, const BasicVector<T>& y_hat) {
  if (y.dim() != y_hat.dim()) {
    throw ShapeError("cross_entropy: distribution has " + std::to_string(y.dim()) +
                     " classes, target has " + std::to_string(y_hat.dim()));
  }
  T loss{0};
  for (std::size_t c = 0; c < y.dim(); ++c) {
    if (y_hat[c] == T{0}) continue;
    loss -= y_hat[c] * std::log(std::max<T>(y[c], T(kLogClamp)));
  }
  return loss;
}

/// Cross entropy against a class index, the form used by the training loop.
template <typename T>
T cross_entropy(std::span<const T> y, std::size_t label) {
  return -std::log(std::max<T>(y[label], T(kLogClamp)));
}

template <typename T>
T sum_of_squares(std::span<const T> values) {
  T s{0};
  for (T v : values) s += v * v;
  return s;
}

/// lambda * sum of squared entries over every tensor.
template <typename T>
T l2_penalty(std::span<const std::span<const T>> params, T lambda) {
  if (lambda < T{0}) throw ArgumentError("l2_penalty: lambda must be non-negative");
  T s{0};
  for (const auto& p : params) s += sum_of_squares(p);
  return lambda * s;
}

template <typename T>
T l2_penalty(std::initializer_list<std::span<const T>> params, T lambda) {
  return l2_penalty(std::span<const std::span<const T>>(params.begin(), params.size()), lambda);
}

template <typename T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

}  // namespace terrain
