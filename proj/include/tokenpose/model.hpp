#ifndef TOKENPOSE_MODEL_HPP
#define TOKENPOSE_MODEL_HPP

#include <string>
#include <utility>
#include <vector>

#include "tokenpose/encoder.hpp"
#include "tokenpose/heatmap.hpp"
#include "tokenpose/image_io.hpp"
#include "tokenpose/tokenizer.hpp"

namespace tokenpose {

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
  std::vector<T> v(img.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(img.pixels[i]);
  return Tensor<T>::from({img.channels, img.height, img.width}, std::move(v));
}

template <typename T>
struct ForwardResult {
  HeatmapSet<T> heatmaps;
  EncoderState<T> state;
  Tensor<T> head_tokens;  // keypoint tokens entering the head (post fusion, pre LN)
};

struct ForwardOpts {
  bool retain_attention = false;
  bool retain_layers = false;
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

// The full network: tokenizer -> encoder stack -> heatmap head.
template <typename T>
struct TokenPoseModel {
  ModelConfig cfg;
  StemWeights<T> stem;           // only defined when cfg.stem == conv_stem
  Tensor<T> patch_weight;        // [p, d]
  Tensor<T> patch_bias;          // [d]
  Tensor<T> pos_embed;           // [L, d]; trainable iff pe_mode == learnable
  Tensor<T> keypoint_tokens;     // [N, d]
  EncoderWeights<T> encoder;
  Tensor<T> head_ln_gamma, head_ln_beta;  // LN over the head input width
  Tensor<T> head_weight;         // [head_in_dim, H*W]
  Tensor<T> head_bias;           // [H*W]

  static TokenPoseModel init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    TokenPoseModel m;
    m.cfg = cfg;
    Rng rng(mix_seed(seed, 0x7065u /* init stream */));
    if (cfg.stem == StemMode::conv_stem) m.stem = StemWeights<T>::init(cfg.channels, rng);
    std::size_t p = cfg.patch_dim(), d = cfg.embed_dim;
    m.patch_weight = Tensor<T>::xavier_uniform({p, d}, rng, p, d).set_requires_grad(true);
    m.patch_bias = Tensor<T>::zeros({d}).set_requires_grad(true);
    if (cfg.pe_mode == PeMode::learnable)
      m.pos_embed = Tensor<T>::trunc_normal({cfg.num_visual_tokens(), d}, rng, 0.02, 2.0)
                        .set_requires_grad(true);
    else if (cfg.pe_mode == PeMode::sine2d)
      m.pos_embed = sine2d_position_embedding<T>(cfg.grid_h(), cfg.grid_w(), d);
    m.keypoint_tokens = init_keypoint_tokens<T>(cfg.num_keypoints, d, rng);
    m.encoder = EncoderWeights<T>::init(cfg.num_layers, d, cfg.num_heads, cfg.mlp_hidden(), rng);
    std::size_t hd = cfg.head_in_dim(), hw = cfg.heatmap_h * cfg.heatmap_w;
    m.head_ln_gamma = Tensor<T>::full({hd}, T(1)).set_requires_grad(true);
    m.head_ln_beta = Tensor<T>::zeros({hd}).set_requires_grad(true);
    m.head_weight = Tensor<T>::xavier_uniform({hd, hw}, rng, hd, hw).set_requires_grad(true);
    m.head_bias = Tensor<T>::zeros({hw}).set_requires_grad(true);
    return m;
  }

  ForwardResult<T> forward(const Tensor<T>& image, const ForwardOpts& opts = {}) const {
    if (image.rank() != 3 || image.dim(0) != cfg.channels || image.dim(1) != cfg.input_h ||
        image.dim(2) != cfg.input_w)
      throw ShapeMismatch("model input must be [" + std::to_string(cfg.channels) + "," +
                          std::to_string(cfg.input_h) + "," + std::to_string(cfg.input_w) +
                          "], got " + shape_str(image.shape()));
    Tensor<T> feat = image;
    if (cfg.stem == StemMode::conv_stem) feat = conv_stem(feat, stem);
    Tensor<T> patches = patchify(feat, cfg);
    std::optional<Tensor<T>> pe;
    if (cfg.pe_mode != PeMode::none) pe = pos_embed;
    Tensor<T> visual = embed_visual(patches, patch_weight, patch_bias, pe);
    TokenSequence<T> seq = assemble(keypoint_tokens, visual);

    EncoderRunOpts run;
    run.retain_layers = opts.retain_layers || !cfg.fusion_layers.empty();
    run.retain_attention = opts.retain_attention;
    run.block.training = opts.training;
    run.block.dropout = opts.dropout;
    run.block.rng = opts.rng;
    ForwardResult<T> res;
    res.state = run_encoder(seq, encoder, run);

    if (cfg.fusion_layers.empty())
      res.head_tokens = slice_rows(res.state.final_tokens(), 0, cfg.num_keypoints);
    else
      res.head_tokens = fuse_keypoint_tokens(res.state, cfg.fusion_layers);
    Tensor<T> normed = layer_norm(res.head_tokens, head_ln_gamma, head_ln_beta);
    res.heatmaps = head_forward(normed, head_weight, head_bias, cfg.heatmap_h, cfg.heatmap_w);
    return res;
  }

  // Fixed registration order; names are the checkpoint contract.
  std::vector<std::pair<std::string, Tensor<T>>> named_params() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    if (cfg.stem == StemMode::conv_stem) {
      out.emplace_back("stem/conv1/weight", stem.k1);
      out.emplace_back("stem/conv1/bias", stem.b1);
      out.emplace_back("stem/conv2/weight", stem.k2);
      out.emplace_back("stem/conv2/bias", stem.b2);
    }
    out.emplace_back("patch_embed/weight", patch_weight);
    out.emplace_back("patch_embed/bias", patch_bias);
    if (cfg.pe_mode == PeMode::learnable) out.emplace_back("pos_embed", pos_embed);
    out.emplace_back("keypoint_tokens", keypoint_tokens);
    for (std::size_t i = 0; i < encoder.blocks.size(); ++i) {
      const auto& blk = encoder.blocks[i];
      std::string b = "encoder/block" + std::to_string(i) + "/";
      out.emplace_back(b + "ln1/gamma", blk.ln1_gamma);
      out.emplace_back(b + "ln1/beta", blk.ln1_beta);
      for (std::size_t h = 0; h < blk.attn.heads.size(); ++h) {
        const auto& head = blk.attn.heads[h];
        std::string hb = b + "attn/head" + std::to_string(h) + "/";
        out.emplace_back(hb + "wq", head.wq);
        out.emplace_back(hb + "bq", head.bq);
        out.emplace_back(hb + "wk", head.wk);
        out.emplace_back(hb + "wv", head.wv);
        out.emplace_back(hb + "bv", head.bv);
      }
      out.emplace_back(b + "attn/proj/weight", blk.attn.wp);
      out.emplace_back(b + "attn/proj/bias", blk.attn.bp);
      out.emplace_back(b + "ln2/gamma", blk.ln2_gamma);
      out.emplace_back(b + "ln2/beta", blk.ln2_beta);
      out.emplace_back(b + "mlp/fc1/weight", blk.mlp_w1);
      out.emplace_back(b + "mlp/fc1/bias", blk.mlp_b1);
      out.emplace_back(b + "mlp/fc2/weight", blk.mlp_w2);
      out.emplace_back(b + "mlp/fc2/bias", blk.mlp_b2);
    }
    out.emplace_back("head/ln/gamma", head_ln_gamma);
    out.emplace_back("head/ln/beta", head_ln_beta);
    out.emplace_back("head/weight", head_weight);
    out.emplace_back("head/bias", head_bias);
    return out;
  }

  void zero_grads() {
    for (auto& [name, t] : named_params()) t.zero_grad();
  }

  // Exact count of trainable scalars.
  static std::size_t count_params(const ModelConfig& cfg) {
    TokenPoseModel m = init(cfg, 0);
    std::size_t total = 0;
    for (const auto& [name, t] : m.named_params()) total += t.numel();
    return total;
  }
};

}  // namespace tokenpose

#endif
