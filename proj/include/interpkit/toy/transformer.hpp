// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "interpkit/archive.hpp"
#include "interpkit/toy/config.hpp"

namespace interpkit::toy {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct BlockParams {
  RowVec ln1_g, ln1_b;
  RowMat wq, wk, wv, wo;  // [d, d], applied as x * W
  RowVec ln2_g, ln2_b;
  RowMat w1;  // [d, 4d]
  RowVec b1;
  RowMat w2;  // [4d, d]
  RowVec b2;
};

/// Parameters of a pre-norm decoder: token + learned position embeddings,
/// blocks of causal multi-head attention and a GeLU MLP, final norm, output head.
struct Params {
  RowMat tok_emb;  // [vocab, d]
  RowMat pos_emb;  // [max_seq_len, d]
  std::vector<BlockParams> blocks;
  RowVec lnf_g, lnf_b;
  RowMat head_w;  // [d, vocab]
  RowVec head_b;

  static Params zeros(const ModelConfig& config);

  /// Calls f(name, dense) for every parameter, in layer order.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  void axpy(double alpha, const Params& other);  // this += alpha * other
  void scale(double alpha);
  double squared_norm() const;
  std::size_t count() const;

 private:
  template <class Self, class F>
  static void visit_impl(Self& p, F& f) {
    f("tok_emb", p.tok_emb);
    f("pos_emb", p.pos_emb);
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
      auto& b = p.blocks[l];
      const std::string pre = "blocks." + std::to_string(l) + ".";
      f(pre + "ln1.g", b.ln1_g);
      f(pre + "ln1.b", b.ln1_b);
      f(pre + "attn.wq", b.wq);
      f(pre + "attn.wk", b.wk);
      f(pre + "attn.wv", b.wv);
      f(pre + "attn.wo", b.wo);
      f(pre + "ln2.g", b.ln2_g);
      f(pre + "ln2.b", b.ln2_b);
      f(pre + "mlp.w1", b.w1);
      f(pre + "mlp.b1", b.b1);
      f(pre + "mlp.w2", b.w2);
      f(pre + "mlp.b2", b.b2);
    }
    f("ln_f.g", p.lnf_g);
    f("ln_f.b", p.lnf_b);
    f("head.w", p.head_w);
    f("head.b", p.head_b);
  }
};

/// One training sequence; positions t with t + 1 >= target_begin predict tokens[t + 1].
struct TrainingExample {
  Tokens tokens;
  std::size_t target_begin = 1;
};

struct ForwardOutput {
  Tensor logits;                      // [len, vocab]
  std::vector<Tensor> hidden_states;  // n_layers + 1 entries of [len, d]: embeddings, then each block
};

/// Key/value cache for incremental decoding. One per generation.
struct DecodeState {
  std::vector<RowMat> keys;    // per layer [max_seq_len, d]
  std::vector<RowMat> values;  // per layer [max_seq_len, d]
  int position = 0;
  RowVec last_hidden;  // output of the final block at the latest position
};

class Transformer {
 public:
  Transformer(ModelConfig config, Params params);

  /// Reads the architecture from metadata. Throws ConfigError / StructureError / ShapeError.
  static Transformer from_archive(const NamedTensorArchive& archive);
  NamedTensorArchive to_archive(DType dtype = DType::F64) const;

  const ModelConfig& config() const noexcept { return config_; }
  const Params& params() const noexcept { return params_; }

  /// Throws InputError on an out-of-vocab token, an empty input or one longer than max_seq_len.
  ForwardOutput forward(std::span<const Token> tokens) const;

  /// Final-block output at every position, [len, d].
  RowMat final_hidden(std::span<const Token> tokens) const;

  /// Mean cross-entropy over target positions of the batch.
  double loss(std::span<const TrainingExample> batch) const;
  /// Mean cross-entropy and its gradient with respect to every parameter.
  double loss_and_gradient(std::span<const TrainingExample> batch, Params& grad) const;

  DecodeState start_decode() const;
  /// Feeds one token and returns next-token logits. Throws InputError past max_seq_len.
  RowVec decode_step(DecodeState& state, Token token) const;

 private:
  void check_tokens(std::span<const Token> tokens) const;

  ModelConfig config_;
  Params params_;
};

/// Deterministic initial weights for a seed; metadata embeds the config.
NamedTensorArchive init_model(const ModelConfig& config, std::uint64_t seed);

ForwardOutput forward(const NamedTensorArchive& model, std::span<const Token> tokens);

/// Row-wise softmax helper shared by sampling and probes.
RowVec softmax(const RowVec& logits);

}  // namespace interpkit::toy
