// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace interpkit {

enum class DType { F32, F64 };

std::string_view dtype_name(DType dtype);  // "F32" | "F64"
DType parse_dtype(std::string_view name);  // throws ValidationError
std::size_t dtype_size(DType dtype);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor. Values are held as double; an F32 tensor stores
/// values already rounded to single precision so that serialization is exact.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, DType dtype = DType::F64);

  static Tensor zeros(Shape shape, DType dtype = DType::F64);

  const Shape& shape() const noexcept { return shape_; }
  DType dtype() const noexcept { return dtype_; }
  std::size_t numel() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool all_finite() const noexcept;

  /// Bitwise equality of shape, dtype and every stored scalar.
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Shape shape_;
  DType dtype_ = DType::F64;
  std::vector<double> values_;
};

// Accumulations below always run in double.
double dot(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& a);

/// <a,b> / (|a| |b|). Throws ShapeError on mismatch, UndefinedSimilarityError on a zero-norm input.
double cosine_similarity(const Tensor& a, const Tensor& b);

/// |a - b|_2. Throws ShapeError on mismatch.
double l2_distance(const Tensor& a, const Tensor& b);

}  // namespace interpkit
