#ifndef SELM_MATRIX_H_
#define SELM_MATRIX_H_

#include <cstdint>
#include <span>
#include <vector>

#include "selm/tensor.h"

namespace selm {

// 64-bit rank-2 buffer used for activations and gradients on the tape.
struct Matrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::int64_t r, std::int64_t c)
      : rows(r), cols(c), data(static_cast<std::size_t>(r * c), 0.0) {}
  Matrix(std::int64_t r, std::int64_t c, std::vector<double> values);

  double& operator()(std::int64_t r, std::int64_t c) { return data[r * cols + c]; }
  double operator()(std::int64_t r, std::int64_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::int64_t r) { return std::span<double>(data).subspan(r * cols, cols); }
  std::span<const double> row(std::int64_t r) const {
    return std::span<const double>(data).subspan(r * cols, cols);
  }

  std::int64_t size() const { return rows * cols; }

  // Rank-1 tensors become a single row.
  static Matrix from_tensor(const Tensor& t);
  // Rank-2 float copy; rounding is round-to-nearest.
  Tensor to_tensor() const;
  // Float copy reshaped to the given shape (sizes must agree).
  Tensor to_tensor(const std::vector<std::int64_t>& shape) const;

  bool all_finite() const;
};

}  // namespace selm

#endif  // SELM_MATRIX_H_
