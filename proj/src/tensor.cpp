// SPDX-License-Identifier: Apache-2.0
#include "interpkit/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

#include <fmt/core.h>

#include "interpkit/error.hpp"

namespace interpkit {

std::string_view dtype_name(DType dtype) {
  return dtype == DType::F32 ? "F32" : "F64";
}

DType parse_dtype(std::string_view name) {
  if (name == "F32") return DType::F32;
  if (name == "F64") return DType::F64;
  throw ValidationError(fmt::format("unsupported dtype '{}'", name));
}

std::size_t dtype_size(DType dtype) {
  return dtype == DType::F32 ? 4 : 8;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, std::vector<double> values, DType dtype)
    : shape_(std::move(shape)), dtype_(dtype), values_(std::move(values)) {
  if (shape_numel(shape_) != values_.size())
    throw ShapeError(fmt::format("shape {} holds {} scalars, got {}", shape_string(shape_),
                                 shape_numel(shape_), values_.size()));
  if (dtype_ == DType::F32)
    for (auto& v : values_) v = static_cast<double>(static_cast<float>(v));
}

Tensor Tensor::zeros(Shape shape, DType dtype) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), dtype);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool operator==(const Tensor& a, const Tensor& b) {
  if (a.shape_ != b.shape_ || a.dtype_ != b.dtype_) return false;
  for (std::size_t i = 0; i < a.values_.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a.values_[i]) != std::bit_cast<std::uint64_t>(b.values_[i]))
      return false;
  return true;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, shape_string(a.shape()),
                                 shape_string(b.shape())));
}

}  // namespace

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v * v;
  return std::sqrt(acc);
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "cosine_similarity");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0)
    throw UndefinedSimilarityError("cosine similarity undefined for a zero-norm tensor");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double l2_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l2_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace interpkit
