#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace bicap {

/// Dense row-major matrix. Vectors are stored as n x 1 matrices.
template <class T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  const T& operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> flat() noexcept { return data_; }
  std::span<const T> flat() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  Matrix transposed() const {
    Matrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
    return out;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
  assert(a.size() == b.size());
  T acc{};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// y = W x + b, W is out x in.
template <class T>
void affine(const Matrix<T>& w, std::span<const T> bias, std::span<const T> x, std::span<T> y) {
  assert(w.cols() == x.size() && w.rows() == y.size() && bias.size() == y.size());
  for (std::size_t r = 0; r < w.rows(); ++r) y[r] = bias[r] + dot(w.row(r), x);
}

// Backward of affine: accumulates dW += dy x^T, db += dy, and writes dx = W^T dy when dx is non-empty.
template <class T>
void affine_backward(const Matrix<T>& w, std::span<const T> x, std::span<const T> dy, Matrix<T>& dw,
                     std::span<T> db, std::span<T> dx) {
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const T g = dy[r];
    db[r] += g;
    auto dw_row = dw.row(r);
    for (std::size_t c = 0; c < w.cols(); ++c) dw_row[c] += g * x[c];
  }
  if (dx.empty()) return;
  std::fill(dx.begin(), dx.end(), T{});
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const T g = dy[r];
    auto w_row = w.row(r);
    for (std::size_t c = 0; c < w.cols(); ++c) dx[c] += w_row[c] * g;
  }
}

}  // namespace bicap
