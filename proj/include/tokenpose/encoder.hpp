#ifndef TOKENPOSE_ENCODER_HPP
#define TOKENPOSE_ENCODER_HPP

#include <cmath>
#include <optional>
#include <vector>

#include "tokenpose/ops.hpp"
#include "tokenpose/tokenizer.hpp"

// Pre-LN Transformer encoder stack with attention recording and keypoint
// token fusion.

namespace tokenpose {

// Post-softmax attention weights of one (layer, head) pair.
template <typename T>
struct AttentionRecord {
  std::size_t layer = 0;  // 1-based block index
  std::size_t head = 0;
  Tensor<T> matrix;  // [S, S], detached
};

template <typename T>
struct EncoderState {
  // layer_outputs[0] is the assembled input; layer_outputs[l] is T^l.
  std::vector<Tensor<T>> layer_outputs;
  std::vector<AttentionRecord<T>> attention;
  std::size_t n_keypoint = 0;
  std::size_t n_visual = 0;

  const Tensor<T>& final_tokens() const { return layer_outputs.back(); }
};

template <typename T>
struct SelfAttentionResult {
  Tensor<T> output;     // [S, d_h]
  Tensor<T> attention;  // [S, S], graph-attached
};

// Scaled dot-product attention for one head: softmax(q k^T / sqrt(d_h)) v.
// No key bias: it would shift every score in a row equally and cancel in the
// softmax.
template <typename T>
SelfAttentionResult<T> self_attention(const Tensor<T>& t, const Tensor<T>& wq, const Tensor<T>& wk,
                                      const Tensor<T>& wv, const Tensor<T>& bq = {},
                                      const Tensor<T>& bv = {}) {
  if (t.rank() != 2 || wq.rank() != 2 || wq.dim(0) != t.dim(1) || wk.shape() != wq.shape() ||
      wv.shape() != wq.shape())
    throw ShapeMismatch("self_attention shape mismatch: tokens " + shape_str(t.shape()) +
                        ", wq " + shape_str(wq.shape()));
  std::size_t dh = wq.dim(1);
  Tensor<T> q = matmul(t, wq);
  Tensor<T> k = matmul(t, wk);
  Tensor<T> v = matmul(t, wv);
  if (bq.defined()) q = add_bias(q, bq);
  if (bv.defined()) v = add_bias(v, bv);
  Tensor<T> scores = scale(matmul(q, transpose_last(k)),
                           static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  SelfAttentionResult<T> res;
  res.attention = softmax_lastdim(scores);
  // double-accumulated product: the sum over tokens must not depend on token
  // order beyond elementwise rounding
  res.output = matmul_stable(res.attention, v);
  return res;
}

template <typename T>
struct HeadWeights {
  Tensor<T> wq, wk, wv;  // [d, d_h]
  Tensor<T> bq, bv;      // [d_h]
};

template <typename T>
struct AttentionWeights {
  std::vector<HeadWeights<T>> heads;
  Tensor<T> wp;  // [h*d_h, d]
  Tensor<T> bp;  // [d]

  static AttentionWeights init(std::size_t d, std::size_t num_heads, Rng& rng) {
    if (num_heads == 0 || d % num_heads != 0)
      throw IndivisibleHeads("embed_dim " + std::to_string(d) + " not divisible by heads " +
                             std::to_string(num_heads));
    std::size_t dh = d / num_heads;
    AttentionWeights w;
    for (std::size_t h = 0; h < num_heads; ++h) {
      HeadWeights<T> hw;
      hw.wq = Tensor<T>::xavier_uniform({d, dh}, rng, d, dh).set_requires_grad(true);
      hw.wk = Tensor<T>::xavier_uniform({d, dh}, rng, d, dh).set_requires_grad(true);
      hw.wv = Tensor<T>::xavier_uniform({d, dh}, rng, d, dh).set_requires_grad(true);
      hw.bq = Tensor<T>::zeros({dh}).set_requires_grad(true);
      hw.bv = Tensor<T>::zeros({dh}).set_requires_grad(true);
      w.heads.push_back(hw);
    }
    w.wp = Tensor<T>::xavier_uniform({d, d}, rng, d, d).set_requires_grad(true);
    w.bp = Tensor<T>::zeros({d}).set_requires_grad(true);
    return w;
  }
};

// Heads evaluated in order, concatenated, then projected by wp.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& t, const AttentionWeights<T>& w,
                               std::vector<Tensor<T>>* head_attention = nullptr) {
  std::size_t d = t.dim(1);
  if (w.heads.empty() || d % w.heads.size() != 0)
    throw IndivisibleHeads("token dim " + std::to_string(d) + " not divisible by " +
                           std::to_string(w.heads.size()) + " heads");
  std::vector<Tensor<T>> outputs;
  outputs.reserve(w.heads.size());
  for (const auto& hw : w.heads) {
    auto res = self_attention(t, hw.wq, hw.wk, hw.wv, hw.bq, hw.bv);
    if (head_attention) head_attention->push_back(res.attention);
    outputs.push_back(res.output);
  }
  Tensor<T> cat = outputs.size() == 1 ? outputs[0] : concat_cols(outputs);
  return add_bias(matmul(cat, w.wp), w.bp);
}

template <typename T>
struct BlockWeights {
  Tensor<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  AttentionWeights<T> attn;
  Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;

  static BlockWeights init(std::size_t d, std::size_t heads, std::size_t hidden, Rng& rng) {
    BlockWeights w;
    w.ln1_gamma = Tensor<T>::full({d}, T(1)).set_requires_grad(true);
    w.ln1_beta = Tensor<T>::zeros({d}).set_requires_grad(true);
    w.attn = AttentionWeights<T>::init(d, heads, rng);
    w.ln2_gamma = Tensor<T>::full({d}, T(1)).set_requires_grad(true);
    w.ln2_beta = Tensor<T>::zeros({d}).set_requires_grad(true);
    w.mlp_w1 = Tensor<T>::xavier_uniform({d, hidden}, rng, d, hidden).set_requires_grad(true);
    w.mlp_b1 = Tensor<T>::zeros({hidden}).set_requires_grad(true);
    w.mlp_w2 = Tensor<T>::xavier_uniform({hidden, d}, rng, hidden, d).set_requires_grad(true);
    w.mlp_b2 = Tensor<T>::zeros({d}).set_requires_grad(true);
    return w;
  }
};

struct BlockRunOpts {
  double ln_eps = 1e-6;
  double dropout = 0.0;
  bool training = false;
  Rng* rng = nullptr;
};

// Pre-LN residual block: t' = t + MSA(LN(t)); out = t' + MLP(LN(t')).
template <typename T>
Tensor<T> encoder_block(const Tensor<T>& t, const BlockWeights<T>& w,
                        const BlockRunOpts& opts = {},
                        std::vector<Tensor<T>>* head_attention = nullptr) {
  Tensor<T> attn_in = layer_norm(t, w.ln1_gamma, w.ln1_beta, opts.ln_eps);
  Tensor<T> attn_out = multi_head_attention(attn_in, w.attn, head_attention);
  if (opts.training && opts.dropout > 0.0 && opts.rng)
    attn_out = dropout(attn_out, opts.dropout, *opts.rng, true);
  Tensor<T> mid = add(t, attn_out);

  Tensor<T> mlp_in = layer_norm(mid, w.ln2_gamma, w.ln2_beta, opts.ln_eps);
  Tensor<T> hidden = gelu(add_bias(matmul(mlp_in, w.mlp_w1), w.mlp_b1));
  if (opts.training && opts.dropout > 0.0 && opts.rng)
    hidden = dropout(hidden, opts.dropout, *opts.rng, true);
  Tensor<T> mlp_out = add_bias(matmul(hidden, w.mlp_w2), w.mlp_b2);
  return add(mid, mlp_out);
}

template <typename T>
struct EncoderWeights {
  std::vector<BlockWeights<T>> blocks;

  static EncoderWeights init(std::size_t layers, std::size_t d, std::size_t heads,
                             std::size_t hidden, Rng& rng) {
    EncoderWeights w;
    for (std::size_t i = 0; i < layers; ++i)
      w.blocks.push_back(BlockWeights<T>::init(d, heads, hidden, rng));
    return w;
  }
};

struct EncoderRunOpts {
  bool retain_layers = false;      // keep every T^l (fusion / visualization)
  bool retain_attention = false;   // keep per-layer, per-head AttentionRecords
  BlockRunOpts block;
};

// Stack of M blocks over the assembled sequence.
template <typename T>
EncoderState<T> run_encoder(const TokenSequence<T>& seq, const EncoderWeights<T>& w,
                            const EncoderRunOpts& opts = {}) {
  EncoderState<T> state;
  state.n_keypoint = seq.n_keypoint;
  state.n_visual = seq.n_visual;
  state.layer_outputs.push_back(seq.tokens);
  Tensor<T> t = seq.tokens;
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    std::vector<Tensor<T>> head_attn;
    std::vector<Tensor<T>>* sink = opts.retain_attention ? &head_attn : nullptr;
    t = encoder_block(t, w.blocks[l], opts.block, sink);
    if (opts.retain_attention)
      for (std::size_t h = 0; h < head_attn.size(); ++h)
        state.attention.push_back({l + 1, h, head_attn[h].detach()});
    if (opts.retain_layers || l + 1 == w.blocks.size())
      state.layer_outputs.push_back(t);
  }
  return state;
}

// Per-keypoint concatenation of the chosen layers' keypoint rows (1-based
// layer indices, ascending). layers = {M} degenerates to the final rows.
template <typename T>
Tensor<T> fuse_keypoint_tokens(const EncoderState<T>& state, const std::vector<std::size_t>& layers) {
  std::size_t M = state.layer_outputs.size() - 1;
  if (layers.empty()) throw InvalidLayerIndex("fusion needs at least one layer index");
  std::size_t prev = 0;
  std::vector<Tensor<T>> parts;
  for (std::size_t l : layers) {
    if (l < 1 || l > M)
      throw InvalidLayerIndex("fusion layer " + std::to_string(l) + " outside 1.." +
                              std::to_string(M));
    if (l <= prev) throw InvalidLayerIndex("fusion layers must be ascending");
    prev = l;
    parts.push_back(slice_rows(state.layer_outputs[l], 0, state.n_keypoint));
  }
  return parts.size() == 1 ? parts[0] : concat_cols(parts);
}

// Learned prior affinity between keypoints: softmax over rows of the token
// inner-product matrix scaled by 1/sqrt(d).
template <typename T>
Tensor<T> keypoint_prior_matrix(const Tensor<T>& keypoint_tokens) {
  if (keypoint_tokens.rank() != 2)
    throw ShapeMismatch("keypoint_prior_matrix expects [N,d], got " +
                        shape_str(keypoint_tokens.shape()));
  Tensor<T> table = keypoint_tokens.detach();
  std::size_t d = table.dim(1);
  Tensor<T> prod = matmul(table, transpose_last(table));
  return softmax_lastdim(scale(prod, static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)))));
}

}  // namespace tokenpose

#endif
