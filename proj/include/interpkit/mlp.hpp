// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "interpkit/archive.hpp"

namespace interpkit {

using Features = std::vector<double>;

/// One hidden tanh layer, scalar output. Inputs are standardized with a stored
/// per-feature shift and scale before the first layer.
class Mlp {
 public:
  Mlp() = default;
  /// Hidden weights ~ N(0, 1/in), output layer zero so the initial output is 0.
  static Mlp init(std::size_t in_dim, std::size_t hidden, std::uint64_t seed);

  std::size_t in_dim() const noexcept { return in_; }
  std::size_t hidden() const noexcept { return hidden_; }

  /// Flat parameters: w1 [in * hidden, row-major], b1 [hidden], w2 [hidden], b2 [1].
  std::span<double> params() noexcept { return theta_; }
  std::span<const double> params() const noexcept { return theta_; }

  void set_standardization(std::vector<double> shift, std::vector<double> scale);
  /// Shift/scale from the column means and deviations of `rows`.
  void fit_standardization(std::span<const Features> rows);

  double forward(std::span<const double> x) const;
  /// Adds d(out)/d(theta) * dout into `grad` (same layout as params()).
  void backward(std::span<const double> x, double dout, std::span<double> grad) const;

  /// Tensors mlp.w1, mlp.b1, mlp.w2, mlp.b2, mlp.shift, mlp.scale; `kind` lands in metadata.
  NamedTensorArchive to_archive(const std::string& kind) const;
  /// Throws StructureError when the archive is not an MLP of `kind`.
  static Mlp from_archive(const NamedTensorArchive& archive, const std::string& kind);

  bool operator==(const Mlp&) const = default;

 private:
  void standardize(std::span<const double> x, std::vector<double>& z) const;

  std::size_t in_ = 0, hidden_ = 0;
  std::vector<double> theta_;
  std::vector<double> shift_, scale_;
};

/// Adam over a flat parameter vector.
class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t size, double lr) : lr_(lr), m_(size, 0.0), v_(size, 0.0) {}
  void step(std::span<double> theta, std::span<const double> grad);

 private:
  double lr_;
  int t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace interpkit
