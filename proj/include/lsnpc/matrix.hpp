#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsnpc {

/// Row-major 2-D array used for datasets and predictions.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{}) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw std::invalid_argument("matrix data size mismatch");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return std::span<T>(data_).subspan(r * cols_, cols_); }
  std::span<const T> row(std::size_t r) const noexcept { return std::span<const T>(data_).subspan(r * cols_, cols_); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  /// Rows selected by index, in the given order.
  Matrix select_rows(std::span<const std::size_t> indices) const {
    Matrix out(indices.size(), cols_);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] >= rows_) throw std::out_of_range("row index out of range");
      auto src = row(indices[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using FeatureMatrix = Matrix<float>;
using LabelMatrix = Matrix<std::uint8_t>;
using ProbMatrix = Matrix<double>;

inline void require_shape(std::size_t rows_a, std::size_t cols_a, std::size_t rows_b, std::size_t cols_b,
                          const char* what) {
  if (rows_a != rows_b || cols_a != cols_b)
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + std::to_string(rows_a) + "x" +
                                std::to_string(cols_a) + " vs " + std::to_string(rows_b) + "x" +
                                std::to_string(cols_b));
}

}  // namespace lsnpc
