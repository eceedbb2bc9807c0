#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "keep/error.hpp"

namespace keep::nn {

// Dense row-major matrix. Float is the production scalar; double is used by
// test oracles that need a high-precision replay of the same computation.
template <class T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  // Reshape and zero. Keeps capacity, so repeated batches don't reallocate.
  void reset(std::size_t rows, std::size_t cols) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(rows * cols, T{0});
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <class U>
  BasicMatrix<U> cast() const {
    BasicMatrix<U> out(rows_, cols_);
    std::transform(data_.begin(), data_.end(), out.data().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool operator==(const BasicMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;

inline std::string shape_str(std::size_t r, std::size_t c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

namespace detail {
template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
Eigen::Map<RowMajor<T>> view(BasicMatrix<T>& m) {
  return {m.ptr(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
template <class T>
Eigen::Map<const RowMajor<T>> view(const BasicMatrix<T>& m) {
  return {m.ptr(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
}  // namespace detail

// out = a * b
template <class T>
void matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b,
            BasicMatrix<T>& out) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a.rows(), a.cols()) + " * " +
                     shape_str(b.rows(), b.cols()));
  }
  out.reset(a.rows(), b.cols());
  if (a.empty() || b.empty()) return;
  detail::view(out).noalias() = detail::view(a) * detail::view(b);
}

// out += a^T * b
template <class T>
void matmul_at_b_acc(const BasicMatrix<T>& a, const BasicMatrix<T>& b,
                     BasicMatrix<T>& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() ||
      out.cols() != b.cols()) {
    throw ShapeError("matmul_at_b: " + shape_str(a.rows(), a.cols()) +
                     "^T * " + shape_str(b.rows(), b.cols()) + " -> " +
                     shape_str(out.rows(), out.cols()));
  }
  if (a.empty() || b.empty()) return;
  detail::view(out).noalias() += detail::view(a).transpose() * detail::view(b);
}

// out = a * b^T
template <class T>
void matmul_a_bt(const BasicMatrix<T>& a, const BasicMatrix<T>& b,
                 BasicMatrix<T>& out) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_a_bt: " + shape_str(a.rows(), a.cols()) + " * " +
                     shape_str(b.rows(), b.cols()) + "^T");
  }
  out.reset(a.rows(), b.rows());
  if (a.empty() || b.empty()) return;
  detail::view(out).noalias() = detail::view(a) * detail::view(b).transpose();
}

// Copies `src` into columns [col, col + src.cols()) of `dst`.
template <class T>
void set_columns(BasicMatrix<T>& dst, std::size_t col,
                 const BasicMatrix<T>& src) {
  if (src.rows() != dst.rows() || col + src.cols() > dst.cols()) {
    throw ShapeError("set_columns: " + shape_str(src.rows(), src.cols()) +
                     " at col " + std::to_string(col) + " into " +
                     shape_str(dst.rows(), dst.cols()));
  }
  for (std::size_t r = 0; r < src.rows(); ++r) {
    std::copy(src.row(r).begin(), src.row(r).end(), dst.row(r).begin() + col);
  }
}

template <class T>
BasicMatrix<T> get_columns(const BasicMatrix<T>& src, std::size_t col,
                           std::size_t width) {
  if (col + width > src.cols()) {
    throw ShapeError("get_columns: [" + std::to_string(col) + ", " +
                     std::to_string(col + width) + ") of " +
                     shape_str(src.rows(), src.cols()));
  }
  BasicMatrix<T> out(src.rows(), width);
  for (std::size_t r = 0; r < src.rows(); ++r) {
    auto s = src.row(r).subspan(col, width);
    std::copy(s.begin(), s.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace keep::nn
