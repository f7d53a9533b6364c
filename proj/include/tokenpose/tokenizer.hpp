#ifndef TOKENPOSE_TOKENIZER_HPP
#define TOKENPOSE_TOKENIZER_HPP

#include <cmath>
#include <optional>

#include "tokenpose/config.hpp"
#include "tokenpose/ops.hpp"

// Image -> visual tokens, plus ownership of the learnable keypoint tokens.

namespace tokenpose {

// Keypoint tokens first (rows 0..N), visual tokens after (rows N..N+L).
template <typename T>
struct TokenSequence {
  Tensor<T> tokens;  // [N+L, d]
  std::size_t n_keypoint = 0;
  std::size_t n_visual = 0;
};

// Patches enumerated row-major over the grid (top-left to bottom-right); each
// output row is the [c][ph][pw] row-major flattening of one patch.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, const ModelConfig& cfg) {
  if (image.rank() != 3)
    throw ShapeMismatch("patchify expects [c,h,w], got " + shape_str(image.shape()));
  std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h % cfg.patch_h != 0 || w % cfg.patch_w != 0)
    throw NonDivisiblePatch("image " + std::to_string(h) + "x" + std::to_string(w) +
                            " not divisible by patch " + std::to_string(cfg.patch_h) + "x" +
                            std::to_string(cfg.patch_w));
  std::size_t gh = h / cfg.patch_h, gw = w / cfg.patch_w;
  std::size_t L = gh * gw, p = cfg.patch_h * cfg.patch_w * c;
  std::vector<T> out(L * p);
  const T* src = image.values().data();
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      T* dst = out.data() + (gy * gw + gx) * p;
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t py = 0; py < cfg.patch_h; ++py)
          for (std::size_t px = 0; px < cfg.patch_w; ++px)
            *dst++ = src[(ci * h + gy * cfg.patch_h + py) * w + gx * cfg.patch_w + px];
    }
  std::size_t ph = cfg.patch_h, pw = cfg.patch_w;
  auto backward = [c, h, w, gh, gw, ph, pw, p](const std::vector<T>& gout,
                                               const std::vector<std::vector<T>*>& pgrads) {
    if (!pgrads[0]) return;
    for (std::size_t gy = 0; gy < gh; ++gy)
      for (std::size_t gx = 0; gx < gw; ++gx) {
        const T* g = gout.data() + (gy * gw + gx) * p;
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t py = 0; py < ph; ++py)
            for (std::size_t px = 0; px < pw; ++px)
              (*pgrads[0])[(ci * h + gy * ph + py) * w + gx * pw + px] += *g++;
      }
  };
  return Tensor<T>::make_op_output({L, p}, std::move(out), {image}, backward);
}

// Exact inverse of patchify for a [L, p] patch matrix.
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t channels, std::size_t h, std::size_t w,
                     const ModelConfig& cfg) {
  std::size_t gh = h / cfg.patch_h, gw = w / cfg.patch_w;
  std::size_t p = cfg.patch_h * cfg.patch_w * channels;
  if (patches.rank() != 2 || patches.dim(0) != gh * gw || patches.dim(1) != p)
    throw ShapeMismatch("unpatchify shape mismatch: " + shape_str(patches.shape()));
  std::vector<T> out(channels * h * w);
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      const T* src = patches.values().data() + (gy * gw + gx) * p;
      for (std::size_t ci = 0; ci < channels; ++ci)
        for (std::size_t py = 0; py < cfg.patch_h; ++py)
          for (std::size_t px = 0; px < cfg.patch_w; ++px)
            out[(ci * h + gy * cfg.patch_h + py) * w + gx * cfg.patch_w + px] = *src++;
    }
  return Tensor<T>::from({channels, h, w}, std::move(out));
}

// Fixed 2D sine encoding: first half of d encodes the patch grid column,
// second half the grid row; within each half pe(pos,2i)=sin(pos/10000^(2i/(d/2))),
// pe(pos,2i+1)=cos(same). Tokens in row-major grid order.
template <typename T>
Tensor<T> sine2d_position_embedding(std::size_t grid_h, std::size_t grid_w, std::size_t d) {
  if (d % 2 != 0) throw InvalidArgument("sine2d needs an even embed_dim");
  std::size_t half = d / 2;
  std::vector<T> out(grid_h * grid_w * d);
  auto fill_half = [&](std::size_t offset, bool use_row) {
    for (std::size_t gy = 0; gy < grid_h; ++gy)
      for (std::size_t gx = 0; gx < grid_w; ++gx) {
        double pos = static_cast<double>(use_row ? gy : gx);
        T* dst = out.data() + (gy * grid_w + gx) * d + offset;
        for (std::size_t j = 0; j < half; ++j) {
          double denom = std::pow(10000.0, 2.0 * static_cast<double>(j / 2) / static_cast<double>(half));
          double angle = pos / denom;
          dst[j] = static_cast<T>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
      }
  };
  fill_half(0, false);
  fill_half(half, true);
  return Tensor<T>::from({grid_h * grid_w, d}, std::move(out));
}

// Linear projection of flattened patches plus the position embedding (when
// one applies for the configured mode).
template <typename T>
Tensor<T> embed_visual(const Tensor<T>& patches, const Tensor<T>& projection,
                       const Tensor<T>& bias, const std::optional<Tensor<T>>& pos_embed) {
  if (patches.rank() != 2 || projection.rank() != 2 || patches.dim(1) != projection.dim(0))
    throw ShapeMismatch("embed_visual shape mismatch: patches " + shape_str(patches.shape()) +
                        ", projection " + shape_str(projection.shape()));
  Tensor<T> tokens = matmul(patches, projection);
  if (bias.defined()) tokens = add_bias(tokens, bias);
  if (pos_embed) {
    if (pos_embed->shape() != tokens.shape())
      throw ShapeMismatch("position embedding " + shape_str(pos_embed->shape()) +
                          " does not match tokens " + shape_str(tokens.shape()));
    tokens = add(tokens, *pos_embed);
  }
  return tokens;
}

template <typename T>
struct StemWeights {
  Tensor<T> k1, b1, k2, b2;

  static StemWeights init(std::size_t in_channels, Rng& rng) {
    StemWeights w;
    std::size_t mid = ModelConfig::stem_mid_channels;
    std::size_t out = ModelConfig::stem_out_channels;
    w.k1 = Tensor<T>::xavier_uniform({mid, in_channels, 3, 3}, rng, in_channels * 9, mid * 9);
    w.b1 = Tensor<T>::zeros({mid});
    w.k2 = Tensor<T>::xavier_uniform({out, mid, 3, 3}, rng, mid * 9, out * 9);
    w.b2 = Tensor<T>::zeros({out});
    w.k1.set_requires_grad(true);
    w.b1.set_requires_grad(true);
    w.k2.set_requires_grad(true);
    w.b2.set_requires_grad(true);
    return w;
  }
};

// Two stride-2 3x3 convolutions with ReLU; spatial dims exactly quartered.
template <typename T>
Tensor<T> conv_stem(const Tensor<T>& image, const StemWeights<T>& w) {
  if (image.rank() != 3)
    throw ShapeMismatch("conv_stem expects [c,h,w], got " + shape_str(image.shape()));
  std::size_t c = image.dim(0), h = image.dim(1), wd = image.dim(2);
  if (h % 4 != 0 || wd % 4 != 0)
    throw NonDivisiblePatch("conv_stem needs dims divisible by 4, got " + std::to_string(h) + "x" +
                            std::to_string(wd));
  Tensor<T> x = reshape(image, {1, c, h, wd});
  x = relu(add_channel_bias(conv2d(x, w.k1, 2, 1), w.b1));
  x = relu(add_channel_bias(conv2d(x, w.k2, 2, 1), w.b2));
  return reshape(x, {x.dim(1), h / 4, wd / 4});
}

// Concatenation with keypoint tokens first; keypoint tokens carry no position
// embedding.
template <typename T>
TokenSequence<T> assemble(const Tensor<T>& keypoint_tokens, const Tensor<T>& visual) {
  if (keypoint_tokens.rank() != 2 || visual.rank() != 2 ||
      keypoint_tokens.dim(1) != visual.dim(1))
    throw ShapeMismatch("assemble dim mismatch: keypoints " + shape_str(keypoint_tokens.shape()) +
                        ", visual " + shape_str(visual.shape()));
  TokenSequence<T> seq;
  seq.tokens = concat_rows<T>({keypoint_tokens, visual});
  seq.n_keypoint = keypoint_tokens.dim(0);
  seq.n_visual = visual.dim(0);
  return seq;
}

template <typename T>
Tensor<T> init_keypoint_tokens(std::size_t n, std::size_t d, Rng& rng) {
  Tensor<T> t = Tensor<T>::trunc_normal({n, d}, rng, 0.02, 2.0);
  t.set_requires_grad(true);
  return t;
}

}  // namespace tokenpose

#endif
