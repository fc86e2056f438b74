// SPDX-License-Identifier: Apache-2.0
#include "interpkit/toy/transformer.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <type_traits>

#include <fmt/core.h>

#include "interpkit/error.hpp"
#include "interpkit/rng.hpp"

namespace interpkit::toy {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double u) { return 0.5 * u * (1.0 + std::erf(u * kInvSqrt2)); }
double gelu_grad(double u) {
  return 0.5 * (1.0 + std::erf(u * kInvSqrt2)) + u * kInvSqrt2Pi * std::exp(-0.5 * u * u);
}

struct NormCache {
  RowMat xhat;
  Eigen::VectorXd rstd;
};

RowMat layer_norm(const RowMat& x, const RowVec& g, const RowVec& b, NormCache* cache) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  RowMat xhat(n, d);
  Eigen::VectorXd rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    rstd(i) = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(i) = (x.row(i).array() - mean) * rstd(i);
  }
  RowMat y = (xhat.array().rowwise() * g.array()).rowwise() + b.array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

// Returns dx; accumulates dg, db.
RowMat layer_norm_backward(const RowMat& dy, const NormCache& c, const RowVec& g, RowVec& dg, RowVec& db) {
  dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  RowMat dxhat = dy.array().rowwise() * g.array();
  const double d = static_cast<double>(dy.cols());
  RowMat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).sum() / d;
    const double m2 = dxhat.row(i).dot(c.xhat.row(i)) / d;
    dx.row(i) = (c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2)).matrix();
  }
  return dx;
}

struct BlockCache {
  RowMat x_in;
  NormCache ln1;
  RowMat a, q, k, v, o;
  std::vector<RowMat> probs;  // per (sequence, head)
  RowMat x_mid;
  NormCache ln2;
  RowMat m, u, g;
};

struct Layout {
  std::vector<Eigen::Index> offsets;  // row offset of each sequence
  std::vector<Eigen::Index> lengths;
  Eigen::Index rows = 0;
};

struct Pass {
  Layout layout;
  std::vector<Token> tokens;     // packed
  std::vector<int> positions;    // packed
  std::vector<BlockCache> blocks;
  std::vector<RowMat> hidden;    // embeddings, then each block output
  NormCache lnf;
  RowMat f;
  RowMat logits;
};

template <class M>
Shape shape_of(const M& m) {
  if constexpr (std::is_same_v<M, RowVec>) return {static_cast<std::size_t>(m.cols())};
  else return {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
}

}  // namespace

Params Params::zeros(const ModelConfig& c) {
  Params p;
  const int d = c.d_model;
  p.tok_emb = RowMat::Zero(c.vocab_size, d);
  p.pos_emb = RowMat::Zero(c.max_seq_len, d);
  p.blocks.resize(static_cast<std::size_t>(c.n_layers));
  for (auto& b : p.blocks) {
    b.ln1_g = RowVec::Zero(d);
    b.ln1_b = RowVec::Zero(d);
    b.wq = RowMat::Zero(d, d);
    b.wk = RowMat::Zero(d, d);
    b.wv = RowMat::Zero(d, d);
    b.wo = RowMat::Zero(d, d);
    b.ln2_g = RowVec::Zero(d);
    b.ln2_b = RowVec::Zero(d);
    b.w1 = RowMat::Zero(d, c.d_ff());
    b.b1 = RowVec::Zero(c.d_ff());
    b.w2 = RowMat::Zero(c.d_ff(), d);
    b.b2 = RowVec::Zero(d);
  }
  p.lnf_g = RowVec::Zero(d);
  p.lnf_b = RowVec::Zero(d);
  p.head_w = RowMat::Zero(d, c.vocab_size);
  p.head_b = RowVec::Zero(c.vocab_size);
  return p;
}

void Params::axpy(double alpha, const Params& other) {
  std::vector<const double*> src;
  std::vector<Eigen::Index> sizes;
  other.visit([&](const std::string&, const auto& m) {
    src.push_back(m.data());
    sizes.push_back(m.size());
  });
  std::size_t i = 0;
  visit([&](const std::string&, auto& m) {
    Eigen::Map<const Eigen::VectorXd> o(src[i], sizes[i]);
    Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) += alpha * o;
    ++i;
  });
}

void Params::scale(double alpha) {
  visit([&](const std::string&, auto& m) { m *= alpha; });
}

double Params::squared_norm() const {
  double s = 0.0;
  visit([&](const std::string&, const auto& m) { s += m.squaredNorm(); });
  return s;
}

std::size_t Params::count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const auto& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

Transformer::Transformer(ModelConfig config, Params params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
}

Transformer Transformer::from_archive(const NamedTensorArchive& archive) {
  ModelConfig config = ModelConfig::from_metadata(archive.metadata());
  Params p = Params::zeros(config);
  std::size_t used = 0;
  p.visit([&](const std::string& name, auto& m) {
    const Tensor& t = archive.at(name);
    const Shape expected = shape_of(m);
    if (t.shape() != expected)
      throw ShapeError(fmt::format("tensor '{}' has shape {}, config expects {}", name, shape_string(t.shape()),
                                   shape_string(expected)));
    auto values = t.values();
    std::copy(values.begin(), values.end(), m.data());
    ++used;
  });
  if (used != archive.size())
    throw StructureError(fmt::format("archive holds {} tensors, model uses {}", archive.size(), used));
  return Transformer(std::move(config), std::move(p));
}

NamedTensorArchive Transformer::to_archive(DType dtype) const {
  NamedTensorArchive out;
  params_.visit([&](const std::string& name, const auto& m) {
    out.insert(name, Tensor(shape_of(m), std::vector<double>(m.data(), m.data() + m.size()), dtype));
  });
  for (auto& [k, v] : config_.to_metadata()) out.set_metadata(k, v);
  return out;
}

void Transformer::check_tokens(std::span<const Token> tokens) const {
  if (tokens.empty()) throw InputError("empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(config_.max_seq_len))
    throw InputError(fmt::format("sequence of {} tokens exceeds max_seq_len {}", tokens.size(), config_.max_seq_len));
  for (Token t : tokens)
    if (t < 0 || t >= config_.vocab_size)
      throw InputError(fmt::format("token {} outside vocabulary of {}", t, config_.vocab_size));
}

namespace {

Pass run_forward(const ModelConfig& cfg, const Params& p, std::span<const TrainingExample> batch, bool keep) {
  Pass pass;
  for (const auto& ex : batch) {
    pass.layout.offsets.push_back(pass.layout.rows);
    pass.layout.lengths.push_back(static_cast<Eigen::Index>(ex.tokens.size()));
    pass.layout.rows += static_cast<Eigen::Index>(ex.tokens.size());
    for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
      pass.tokens.push_back(ex.tokens[t]);
      pass.positions.push_back(static_cast<int>(t));
    }
  }
  const Eigen::Index rows = pass.layout.rows;
  const int d = cfg.d_model;
  const int dh = cfg.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  RowMat x(rows, d);
  for (Eigen::Index r = 0; r < rows; ++r)
    x.row(r) = p.tok_emb.row(pass.tokens[r]) + p.pos_emb.row(pass.positions[r]);
  pass.hidden.push_back(x);

  pass.blocks.resize(p.blocks.size());
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    const BlockParams& bp = p.blocks[l];
    BlockCache& c = pass.blocks[l];
    if (keep) c.x_in = x;
    RowMat a = layer_norm(x, bp.ln1_g, bp.ln1_b, keep ? &c.ln1 : nullptr);
    RowMat q = a * bp.wq;
    RowMat k = a * bp.wk;
    RowMat v = a * bp.wv;
    RowMat o = RowMat::Zero(rows, d);
    for (std::size_t s = 0; s < pass.layout.offsets.size(); ++s) {
      const Eigen::Index off = pass.layout.offsets[s];
      const Eigen::Index n = pass.layout.lengths[s];
      for (int h = 0; h < cfg.n_heads; ++h) {
        RowMat scores = q.block(off, h * dh, n, dh) * k.block(off, h * dh, n, dh).transpose() * scale;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double mx = scores.row(i).head(i + 1).maxCoeff();
          double sum = 0.0;
          for (Eigen::Index j = 0; j <= i; ++j) {
            scores(i, j) = std::exp(scores(i, j) - mx);
            sum += scores(i, j);
          }
          for (Eigen::Index j = 0; j <= i; ++j) scores(i, j) /= sum;
          for (Eigen::Index j = i + 1; j < n; ++j) scores(i, j) = 0.0;
        }
        o.block(off, h * dh, n, dh) = scores * v.block(off, h * dh, n, dh);
        if (keep) c.probs.push_back(std::move(scores));
      }
    }
    x += o * bp.wo;
    if (keep) {
      c.a = std::move(a);
      c.q = std::move(q);
      c.k = std::move(k);
      c.v = std::move(v);
      c.o = std::move(o);
      c.x_mid = x;
    }
    RowMat m = layer_norm(x, bp.ln2_g, bp.ln2_b, keep ? &c.ln2 : nullptr);
    RowMat u = (m * bp.w1).rowwise() + bp.b1;
    RowMat g = u.unaryExpr([](double z) { return gelu(z); });
    x += (g * bp.w2).rowwise() + bp.b2;
    if (keep) {
      c.m = std::move(m);
      c.u = std::move(u);
      c.g = std::move(g);
    }
    pass.hidden.push_back(x);
  }
  pass.f = layer_norm(x, p.lnf_g, p.lnf_b, keep ? &pass.lnf : nullptr);
  pass.logits = (pass.f * p.head_w).rowwise() + p.head_b;
  return pass;
}

// Cross-entropy over target rows. Fills dlogits (already divided by the target count) when non-null.
double cross_entropy(const Pass& pass, std::span<const TrainingExample> batch, RowMat* dlogits) {
  double total = 0.0;
  std::size_t count = 0;
  if (dlogits) *dlogits = RowMat::Zero(pass.logits.rows(), pass.logits.cols());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& ex = batch[s];
    const Eigen::Index off = pass.layout.offsets[s];
    for (std::size_t t = 0; t + 1 < ex.tokens.size(); ++t) {
      if (t + 1 < ex.target_begin) continue;
      const auto row = pass.logits.row(off + static_cast<Eigen::Index>(t));
      const double mx = row.maxCoeff();
      const double lse = mx + std::log((row.array() - mx).exp().sum());
      total += lse - row(ex.tokens[t + 1]);
      ++count;
    }
  }
  if (count == 0) return 0.0;
  if (dlogits) {
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const auto& ex = batch[s];
      const Eigen::Index off = pass.layout.offsets[s];
      for (std::size_t t = 0; t + 1 < ex.tokens.size(); ++t) {
        if (t + 1 < ex.target_begin) continue;
        const Eigen::Index r = off + static_cast<Eigen::Index>(t);
        const auto row = pass.logits.row(r);
        const double mx = row.maxCoeff();
        RowVec pr = (row.array() - mx).exp();
        pr /= pr.sum();
        pr(ex.tokens[t + 1]) -= 1.0;
        dlogits->row(r) = pr / static_cast<double>(count);
      }
    }
  }
  return total / static_cast<double>(count);
}

void run_backward(const ModelConfig& cfg, const Params& p, const Pass& pass, const RowMat& dlogits, Params& grad) {
  const int dh = cfg.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  grad.head_w += pass.f.transpose() * dlogits;
  grad.head_b += dlogits.colwise().sum();
  RowMat df = dlogits * p.head_w.transpose();
  RowMat dx = layer_norm_backward(df, pass.lnf, p.lnf_g, grad.lnf_g, grad.lnf_b);

  for (std::size_t li = p.blocks.size(); li-- > 0;) {
    const BlockParams& bp = p.blocks[li];
    BlockParams& bg = grad.blocks[li];
    const BlockCache& c = pass.blocks[li];

    // MLP sublayer.
    bg.w2 += c.g.transpose() * dx;
    bg.b2 += dx.colwise().sum();
    RowMat dg = dx * bp.w2.transpose();
    RowMat du = dg.array() * c.u.unaryExpr([](double z) { return gelu_grad(z); }).array();
    bg.w1 += c.m.transpose() * du;
    bg.b1 += du.colwise().sum();
    RowMat dm = du * bp.w1.transpose();
    RowMat dx_mid = dx + layer_norm_backward(dm, c.ln2, bp.ln2_g, bg.ln2_g, bg.ln2_b);

    // Attention sublayer.
    bg.wo += c.o.transpose() * dx_mid;
    RowMat d_o = dx_mid * bp.wo.transpose();
    RowMat dq = RowMat::Zero(c.q.rows(), c.q.cols());
    RowMat dk = RowMat::Zero(c.k.rows(), c.k.cols());
    RowMat dv = RowMat::Zero(c.v.rows(), c.v.cols());
    std::size_t probe = 0;
    for (std::size_t s = 0; s < pass.layout.offsets.size(); ++s) {
      const Eigen::Index off = pass.layout.offsets[s];
      const Eigen::Index n = pass.layout.lengths[s];
      for (int h = 0; h < cfg.n_heads; ++h) {
        const RowMat& pr = c.probs[probe++];
        auto doh = d_o.block(off, h * dh, n, dh);
        RowMat dp = doh * c.v.block(off, h * dh, n, dh).transpose();
        dv.block(off, h * dh, n, dh) += pr.transpose() * doh;
        RowMat ds = pr.array() * (dp.array().colwise() - (dp.array() * pr.array()).rowwise().sum());
        dq.block(off, h * dh, n, dh) += ds * c.k.block(off, h * dh, n, dh) * scale;
        dk.block(off, h * dh, n, dh) += ds.transpose() * c.q.block(off, h * dh, n, dh) * scale;
      }
    }
    bg.wq += c.a.transpose() * dq;
    bg.wk += c.a.transpose() * dk;
    bg.wv += c.a.transpose() * dv;
    RowMat da = dq * bp.wq.transpose() + dk * bp.wk.transpose() + dv * bp.wv.transpose();
    dx = dx_mid + layer_norm_backward(da, c.ln1, bp.ln1_g, bg.ln1_g, bg.ln1_b);
  }

  for (Eigen::Index r = 0; r < pass.layout.rows; ++r) {
    grad.tok_emb.row(pass.tokens[r]) += dx.row(r);
    grad.pos_emb.row(pass.positions[r]) += dx.row(r);
  }
}

Tensor to_tensor(const RowMat& m) {
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                std::vector<double>(m.data(), m.data() + m.size()));
}

}  // namespace

ForwardOutput Transformer::forward(std::span<const Token> tokens) const {
  check_tokens(tokens);
  TrainingExample ex{Tokens(tokens.begin(), tokens.end()), 1};
  Pass pass = run_forward(config_, params_, std::span<const TrainingExample>(&ex, 1), false);
  ForwardOutput out;
  out.logits = to_tensor(pass.logits);
  for (const auto& h : pass.hidden) out.hidden_states.push_back(to_tensor(h));
  return out;
}

RowMat Transformer::final_hidden(std::span<const Token> tokens) const {
  check_tokens(tokens);
  TrainingExample ex{Tokens(tokens.begin(), tokens.end()), 1};
  Pass pass = run_forward(config_, params_, std::span<const TrainingExample>(&ex, 1), false);
  return pass.hidden.back();
}

double Transformer::loss(std::span<const TrainingExample> batch) const {
  for (const auto& ex : batch) check_tokens(ex.tokens);
  Pass pass = run_forward(config_, params_, batch, false);
  return cross_entropy(pass, batch, nullptr);
}

double Transformer::loss_and_gradient(std::span<const TrainingExample> batch, Params& grad) const {
  for (const auto& ex : batch) check_tokens(ex.tokens);
  grad = Params::zeros(config_);
  Pass pass = run_forward(config_, params_, batch, true);
  RowMat dlogits;
  const double loss = cross_entropy(pass, batch, &dlogits);
  run_backward(config_, params_, pass, dlogits, grad);
  return loss;
}

DecodeState Transformer::start_decode() const {
  DecodeState s;
  for (int l = 0; l < config_.n_layers; ++l) {
    s.keys.emplace_back(config_.max_seq_len, config_.d_model);
    s.values.emplace_back(config_.max_seq_len, config_.d_model);
  }
  return s;
}

RowVec Transformer::decode_step(DecodeState& state, Token token) const {
  if (token < 0 || token >= config_.vocab_size)
    throw InputError(fmt::format("token {} outside vocabulary of {}", token, config_.vocab_size));
  if (state.position >= config_.max_seq_len)
    throw InputError(fmt::format("decode position {} reaches max_seq_len {}", state.position, config_.max_seq_len));
  const int pos = state.position;
  const int dh = config_.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  RowMat x = params_.tok_emb.row(token) + params_.pos_emb.row(pos);
  for (std::size_t l = 0; l < params_.blocks.size(); ++l) {
    const BlockParams& bp = params_.blocks[l];
    RowMat a = layer_norm(x, bp.ln1_g, bp.ln1_b, nullptr);
    RowMat q = a * bp.wq;
    state.keys[l].row(pos) = a * bp.wk;
    state.values[l].row(pos) = a * bp.wv;
    RowMat o(1, config_.d_model);
    for (int h = 0; h < config_.n_heads; ++h) {
      Eigen::VectorXd scores = state.keys[l].block(0, h * dh, pos + 1, dh) * q.block(0, h * dh, 1, dh).transpose();
      scores *= scale;
      scores = (scores.array() - scores.maxCoeff()).exp();
      scores /= scores.sum();
      o.block(0, h * dh, 1, dh) = scores.transpose() * state.values[l].block(0, h * dh, pos + 1, dh);
    }
    x += o * bp.wo;
    RowMat m = layer_norm(x, bp.ln2_g, bp.ln2_b, nullptr);
    RowMat u = (m * bp.w1).rowwise() + bp.b1;
    x += (u.unaryExpr([](double z) { return gelu(z); }) * bp.w2).rowwise() + bp.b2;
  }
  state.last_hidden = x.row(0);
  RowMat f = layer_norm(x, params_.lnf_g, params_.lnf_b, nullptr);
  ++state.position;
  return (f * params_.head_w).row(0) + params_.head_b;
}

NamedTensorArchive init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, "init"));
  std::normal_distribution<double> normal(0.0, 1.0);
  Params p = Params::zeros(config);
  const double d = config.d_model;
  const double resid = 1.0 / std::sqrt(2.0 * config.n_layers);
  auto fill = [&](auto& m, double stddev) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * normal(rng);
  };
  fill(p.tok_emb, 1.0);
  fill(p.pos_emb, 1.0);
  for (auto& b : p.blocks) {
    b.ln1_g.setOnes();
    b.ln2_g.setOnes();
    fill(b.wq, 1.0 / std::sqrt(d));
    fill(b.wk, 1.0 / std::sqrt(d));
    fill(b.wv, 1.0 / std::sqrt(d));
    fill(b.wo, resid / std::sqrt(d));
    fill(b.w1, 1.0 / std::sqrt(d));
    fill(b.w2, resid / std::sqrt(4.0 * d));
  }
  p.lnf_g.setOnes();
  fill(p.head_w, 1.0 / std::sqrt(d));
  NamedTensorArchive out = Transformer(config, std::move(p)).to_archive();
  out.set_metadata("init.seed", std::to_string(seed));
  return out;
}

ForwardOutput forward(const NamedTensorArchive& model, std::span<const Token> tokens) {
  return Transformer::from_archive(model).forward(tokens);
}

RowVec softmax(const RowVec& logits) {
  RowVec e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace interpkit::toy
