#include <doctest.h>

#include <cmath>

#include "tokenpose/tokenizer.hpp"
#include "support/gradcheck.hpp"

using namespace tokenpose;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.input_h = 4;
  cfg.input_w = 4;
  cfg.channels = 1;
  cfg.patch_h = 2;
  cfg.patch_w = 2;
  cfg.embed_dim = 8;
  cfg.num_heads = 2;
  cfg.num_layers = 1;
  cfg.num_keypoints = 2;
  cfg.heatmap_h = 1;
  cfg.heatmap_w = 1;
  return cfg;
}

}  // namespace

TEST_CASE("patchify row enumeration contract on a 4x4 image") {
  ModelConfig cfg = tiny_cfg();
  std::vector<double> pix(16);
  for (std::size_t i = 0; i < 16; ++i) pix[i] = static_cast<double>(i);
  auto img = Tensor<double>::from({1, 4, 4}, pix);
  auto patches = patchify(img, cfg);
  REQUIRE(patches.shape() == Shape{4, 4});
  // row 0 = pixels (0,0),(0,1),(1,0),(1,1)
  CHECK(patches.values()[0] == 0.0);
  CHECK(patches.values()[1] == 1.0);
  CHECK(patches.values()[2] == 4.0);
  CHECK(patches.values()[3] == 5.0);
  // last patch: bottom-right block
  CHECK(patches.values()[12] == 10.0);
  CHECK(patches.values()[15] == 15.0);
}

TEST_CASE("patchify arithmetic matches the 256x192 configuration") {
  ModelConfig cfg;  // defaults: 256x192, 16x12 patches, 3 channels
  cfg.pe_mode = PeMode::none;
  Rng rng(1);
  auto img = Tensor<float>::uniform({3, 256, 192}, rng, 0, 1);
  auto patches = patchify(img, cfg);
  CHECK(patches.shape() == Shape{256, 576});
}

TEST_CASE("patchify rejects non-divisible images") {
  ModelConfig cfg = tiny_cfg();
  auto img = Tensor<double>::zeros({1, 5, 4});
  CHECK_THROWS_AS(patchify(img, cfg), NonDivisiblePatch);
}

TEST_CASE("unpatchify inverts patchify exactly") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(2);
  auto img = Tensor<double>::uniform({1, 4, 4}, rng, 0, 1);
  auto back = unpatchify(patchify(img, cfg), 1, 4, 4, cfg);
  CHECK(back.values() == img.values());
}

TEST_CASE("embed_visual zero patches with no pe gives zero tokens") {
  auto patches = Tensor<double>::zeros({4, 6});
  auto proj = Tensor<double>::zeros({6, 8});
  auto bias = Tensor<double>::zeros({8});
  auto tokens = embed_visual<double>(patches, proj, bias, std::nullopt);
  for (double v : tokens.values()) CHECK(v == 0.0);
}

TEST_CASE("sine2d position 0 dims (0,1) are (sin 0, cos 0)") {
  auto pe = sine2d_position_embedding<double>(2, 2, 8);
  CHECK(pe.at({0, 0}) == 0.0);
  CHECK(pe.at({0, 1}) == 1.0);
  // second half (row part) at grid (0,0) likewise
  CHECK(pe.at({0, 4}) == 0.0);
  CHECK(pe.at({0, 5}) == 1.0);
}

TEST_CASE("sine2d entries are unit bounded and input independent") {
  auto pe = sine2d_position_embedding<double>(5, 7, 12);
  for (double v : pe.values()) {
    CHECK(v <= 1.0);
    CHECK(v >= -1.0);
  }
  // column part depends only on the grid column: rows of same column match
  for (std::size_t gy = 1; gy < 5; ++gy)
    for (std::size_t j = 0; j < 6; ++j)
      CHECK(pe.at({gy * 7 + 3, j}) == pe.at({3, j}));
}

TEST_CASE("pe is identical across images: token difference is pe independent") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(3);
  auto pe = sine2d_position_embedding<double>(2, 2, 8);
  auto proj = Tensor<double>::uniform({4, 8}, rng, -1, 1);
  auto bias = Tensor<double>::zeros({8});
  auto img_a = Tensor<double>::uniform({1, 4, 4}, rng, 0, 1);
  auto img_b = Tensor<double>::uniform({1, 4, 4}, rng, 0, 1);
  auto tok_a = embed_visual<double>(patchify(img_a, cfg), proj, bias, pe);
  auto tok_b = embed_visual<double>(patchify(img_b, cfg), proj, bias, pe);
  auto raw_a = embed_visual<double>(patchify(img_a, cfg), proj, bias, std::nullopt);
  auto raw_b = embed_visual<double>(patchify(img_b, cfg), proj, bias, std::nullopt);
  for (std::size_t i = 0; i < tok_a.numel(); ++i)
    CHECK(tok_a.values()[i] - tok_b.values()[i] ==
          doctest::Approx(raw_a.values()[i] - raw_b.values()[i]).epsilon(1e-12));
}

TEST_CASE("embed_visual with pe_mode none commutes with patch permutation") {
  Rng rng(4);
  auto patches = Tensor<double>::uniform({6, 4}, rng, -1, 1);
  auto proj = Tensor<double>::uniform({4, 8}, rng, -1, 1);
  auto bias = Tensor<double>::uniform({8}, rng, -1, 1);
  auto tokens = embed_visual<double>(patches, proj, bias, std::nullopt);
  // permute rows 0<->3, 2<->5
  std::vector<std::size_t> perm = {3, 1, 5, 0, 4, 2};
  std::vector<double> permuted(24);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      permuted[r * 4 + c] = patches.values()[perm[r] * 4 + c];
  auto tokens_p = embed_visual<double>(Tensor<double>::from({6, 4}, permuted), proj, bias,
                                       std::nullopt);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 8; ++c)
      CHECK(tokens_p.at({r, c}) == tokens.at({perm[r], c}));
}

TEST_CASE("conv_stem quarters spatial dims and zero inputs give zero features") {
  Rng rng(5);
  StemWeights<double> w = StemWeights<double>::init(3, rng);
  auto img = Tensor<double>::uniform({3, 16, 12}, rng, 0, 1);
  auto feat = conv_stem(img, w);
  REQUIRE(feat.shape() == Shape{ModelConfig::stem_out_channels, 4, 3});

  auto zero = Tensor<double>::zeros({3, 16, 12});
  auto zfeat = conv_stem(zero, w);  // zero biases at init
  for (double v : zfeat.values()) CHECK(v == 0.0);

  CHECK_THROWS_AS(conv_stem(Tensor<double>::zeros({3, 10, 12}), w), NonDivisiblePatch);
}

TEST_CASE("stem-then-patch arithmetic matches the hybrid configuration") {
  // 256x192 input, stem to 64x48, 4x3 patches -> 256 tokens
  ModelConfig cfg;
  cfg.stem = StemMode::conv_stem;
  cfg.patch_h = 4;
  cfg.patch_w = 3;
  cfg.num_heads = 8;
  cfg.validate();
  CHECK(cfg.feature_h() == 64);
  CHECK(cfg.feature_w() == 48);
  CHECK(cfg.num_visual_tokens() == 256);
}

TEST_CASE("assemble puts keypoint tokens first, bitwise, input independent") {
  Rng rng(6);
  auto table = init_keypoint_tokens<double>(17, 192, rng);
  auto visual_a = Tensor<double>::uniform({256, 192}, rng, -1, 1);
  auto visual_b = Tensor<double>::uniform({256, 192}, rng, -1, 1);
  auto seq_a = assemble(table, visual_a);
  auto seq_b = assemble(table, visual_b);
  REQUIRE(seq_a.tokens.shape() == Shape{273, 192});
  CHECK(seq_a.n_keypoint == 17);
  CHECK(seq_a.n_visual == 256);
  for (std::size_t i = 0; i < 17 * 192; ++i) {
    CHECK(seq_a.tokens.values()[i] == table.values()[i]);
    CHECK(seq_b.tokens.values()[i] == table.values()[i]);
  }
}

TEST_CASE("keypoint token table init is truncated at two sigma") {
  Rng rng(7);
  auto table = init_keypoint_tokens<double>(40, 50, rng);
  for (double v : table.values()) CHECK(std::fabs(v) <= 0.04 + 1e-12);
}

TEST_CASE("keypoint table batch gradient equals the sum of per-sample gradients") {
  Rng rng(8);
  auto table = init_keypoint_tokens<double>(3, 4, rng);
  auto vis_a = Tensor<double>::uniform({2, 4}, rng, -1, 1);
  auto vis_b = Tensor<double>::uniform({2, 4}, rng, -1, 1);

  auto loss_for = [&](const Tensor<double>& vis) {
    auto seq = assemble(table, vis);
    return sum(mul(seq.tokens, seq.tokens));
  };

  table.zero_grad();
  backward(loss_for(vis_a));
  auto grad_a = table.grad();
  table.zero_grad();
  backward(loss_for(vis_b));
  auto grad_b = table.grad();

  table.zero_grad();
  backward(loss_for(vis_a));
  backward(loss_for(vis_b));  // accumulates
  for (std::size_t i = 0; i < grad_a.size(); ++i)
    CHECK(table.grad()[i] == doctest::Approx(grad_a[i] + grad_b[i]).epsilon(1e-12));
}

TEST_CASE("patchify gradcheck") {
  Rng rng(9);
  ModelConfig cfg = tiny_cfg();
  auto img = Tensor<double>::uniform({1, 4, 4}, rng, -1, 1);
  img.set_requires_grad(true);
  auto r = tokenpose::testing::gradcheck({img}, [&] {
    auto p = patchify(img, cfg);
    return sum(mul(p, p));
  });
  CHECK_MESSAGE(r.ok, r.detail);
}
