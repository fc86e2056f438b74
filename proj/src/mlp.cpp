// SPDX-License-Identifier: Apache-2.0
#include "interpkit/mlp.hpp"

#include <cmath>
#include <random>

#include <fmt/core.h>

#include "interpkit/error.hpp"
#include "interpkit/rng.hpp"

namespace interpkit {

Mlp Mlp::init(std::size_t in_dim, std::size_t hidden, std::uint64_t seed) {
  if (in_dim == 0 || hidden == 0) throw ValidationError("mlp dimensions must be >= 1");
  Mlp m;
  m.in_ = in_dim;
  m.hidden_ = hidden;
  m.theta_.assign(in_dim * hidden + 2 * hidden + 1, 0.0);
  Rng rng(derive_seed(seed, "mlp.init"));
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in_dim)));
  for (std::size_t i = 0; i < in_dim * hidden; ++i) m.theta_[i] = normal(rng);
  m.shift_.assign(in_dim, 0.0);
  m.scale_.assign(in_dim, 1.0);
  return m;
}

void Mlp::set_standardization(std::vector<double> shift, std::vector<double> scale) {
  if (shift.size() != in_ || scale.size() != in_) throw ShapeError("standardization size differs from input size");
  for (double s : scale)
    if (!(s > 0.0)) throw ValidationError("standardization scale must be positive");
  shift_ = std::move(shift);
  scale_ = std::move(scale);
}

void Mlp::fit_standardization(std::span<const Features> rows) {
  if (rows.empty()) return;
  std::vector<double> mean(in_, 0.0), sd(in_, 0.0);
  for (const auto& r : rows) {
    if (r.size() != in_) throw ShapeError(fmt::format("feature row of {} values, expected {}", r.size(), in_));
    for (std::size_t i = 0; i < in_; ++i) mean[i] += r[i];
  }
  for (double& m : mean) m /= static_cast<double>(rows.size());
  for (const auto& r : rows)
    for (std::size_t i = 0; i < in_; ++i) sd[i] += (r[i] - mean[i]) * (r[i] - mean[i]);
  for (double& s : sd) {
    s = std::sqrt(s / static_cast<double>(rows.size()));
    if (s < 1e-8) s = 1.0;
  }
  set_standardization(std::move(mean), std::move(sd));
}

void Mlp::standardize(std::span<const double> x, std::vector<double>& z) const {
  if (x.size() != in_) throw ShapeError(fmt::format("mlp input of {} values, expected {}", x.size(), in_));
  z.resize(in_);
  for (std::size_t i = 0; i < in_; ++i) z[i] = (x[i] - shift_[i]) / scale_[i];
}

double Mlp::forward(std::span<const double> x) const {
  std::vector<double> z;
  standardize(x, z);
  const double* w1 = theta_.data();
  const double* b1 = w1 + in_ * hidden_;
  const double* w2 = b1 + hidden_;
  double out = w2[hidden_];
  for (std::size_t h = 0; h < hidden_; ++h) {
    double a = b1[h];
    for (std::size_t i = 0; i < in_; ++i) a += z[i] * w1[i * hidden_ + h];
    out += w2[h] * std::tanh(a);
  }
  return out;
}

void Mlp::backward(std::span<const double> x, double dout, std::span<double> grad) const {
  if (grad.size() != theta_.size()) throw ShapeError("gradient buffer size differs from parameter count");
  std::vector<double> z;
  standardize(x, z);
  const double* w1 = theta_.data();
  const double* b1 = w1 + in_ * hidden_;
  const double* w2 = b1 + hidden_;
  double* g1 = grad.data();
  double* gb1 = g1 + in_ * hidden_;
  double* g2 = gb1 + hidden_;
  g2[hidden_] += dout;
  for (std::size_t h = 0; h < hidden_; ++h) {
    double a = b1[h];
    for (std::size_t i = 0; i < in_; ++i) a += z[i] * w1[i * hidden_ + h];
    const double t = std::tanh(a);
    g2[h] += dout * t;
    const double da = dout * w2[h] * (1.0 - t * t);
    gb1[h] += da;
    for (std::size_t i = 0; i < in_; ++i) g1[i * hidden_ + h] += da * z[i];
  }
}

NamedTensorArchive Mlp::to_archive(const std::string& kind) const {
  NamedTensorArchive a;
  const auto* p = theta_.data();
  auto slice = [](const double* from, std::size_t n) { return std::vector<double>(from, from + n); };
  a.insert("mlp.w1", Tensor({in_, hidden_}, slice(p, in_ * hidden_)));
  a.insert("mlp.b1", Tensor({hidden_}, slice(p + in_ * hidden_, hidden_)));
  a.insert("mlp.w2", Tensor({hidden_}, slice(p + in_ * hidden_ + hidden_, hidden_)));
  a.insert("mlp.b2", Tensor({1}, slice(p + in_ * hidden_ + 2 * hidden_, 1)));
  a.insert("mlp.shift", Tensor({in_}, shift_));
  a.insert("mlp.scale", Tensor({in_}, scale_));
  a.set_metadata("mlp.kind", kind);
  return a;
}

Mlp Mlp::from_archive(const NamedTensorArchive& archive, const std::string& kind) {
  if (archive.metadata_value("mlp.kind") != kind)
    throw StructureError(fmt::format("archive is not a {} model", kind));
  const Tensor& w1 = archive.at("mlp.w1");
  if (w1.shape().size() != 2) throw ShapeError("mlp.w1 must be rank 2");
  Mlp m;
  m.in_ = w1.shape()[0];
  m.hidden_ = w1.shape()[1];
  auto take = [&](const std::string& name, std::size_t n) {
    const Tensor& t = archive.at(name);
    if (t.numel() != n) throw ShapeError(fmt::format("{} has {} values, expected {}", name, t.numel(), n));
    return std::vector<double>(t.values().begin(), t.values().end());
  };
  m.theta_ = take("mlp.w1", m.in_ * m.hidden_);
  for (const char* name : {"mlp.b1", "mlp.w2"}) {
    auto v = take(name, m.hidden_);
    m.theta_.insert(m.theta_.end(), v.begin(), v.end());
  }
  m.theta_.push_back(take("mlp.b2", 1)[0]);
  m.set_standardization(take("mlp.shift", m.in_), take("mlp.scale", m.in_));
  return m;
}

void AdamOptimizer::step(std::span<double> theta, std::span<const double> grad) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
    theta[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
  }
}

}  // namespace interpkit
