#include <doctest.h>

#include <cmath>

#include "tokenpose/encoder.hpp"
#include "support/gradcheck.hpp"

using namespace tokenpose;

namespace {

std::vector<Tensor<double>> collect_params(EncoderWeights<double>& enc) {
  std::vector<Tensor<double>> out;
  for (auto& blk : enc.blocks) {
    out.push_back(blk.ln1_gamma);
    out.push_back(blk.ln1_beta);
    for (auto& h : blk.attn.heads) {
      out.push_back(h.wq);
      out.push_back(h.bq);
      out.push_back(h.wk);
      out.push_back(h.wv);
      out.push_back(h.bv);
    }
    out.push_back(blk.attn.wp);
    out.push_back(blk.attn.bp);
    out.push_back(blk.ln2_gamma);
    out.push_back(blk.ln2_beta);
    out.push_back(blk.mlp_w1);
    out.push_back(blk.mlp_b1);
    out.push_back(blk.mlp_w2);
    out.push_back(blk.mlp_b2);
  }
  return out;
}

}  // namespace

TEST_CASE("self_attention with zero queries gives uniform rows") {
  Rng rng(1);
  auto t = Tensor<double>::uniform({5, 4}, rng, -1, 1);
  auto zero = Tensor<double>::zeros({4, 4});
  auto wv = Tensor<double>::uniform({4, 4}, rng, -1, 1);
  auto res = self_attention(t, zero, zero, wv);
  for (double v : res.attention.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("self_attention with one token is the value projection") {
  Rng rng(2);
  auto t = Tensor<double>::uniform({1, 4}, rng, -1, 1);
  auto wq = Tensor<double>::uniform({4, 3}, rng, -1, 1);
  auto wk = Tensor<double>::uniform({4, 3}, rng, -1, 1);
  auto wv = Tensor<double>::uniform({4, 3}, rng, -1, 1);
  auto res = self_attention(t, wq, wk, wv);
  CHECK(res.attention.values() == std::vector<double>{1.0});
  auto tv = matmul(t, wv);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(res.output.values()[i] == doctest::Approx(tv.values()[i]).epsilon(1e-12));
}

TEST_CASE("self_attention matches a scalar-by-scalar oracle at S=2") {
  // 2 tokens, 2 dims; evaluate softmax(q k^T / sqrt(2)) v by hand
  auto t = Tensor<double>::from({2, 2}, {1.0, 0.5, -0.25, 2.0});
  auto wq = Tensor<double>::from({2, 2}, {0.5, -1.0, 1.5, 0.25});
  auto wk = Tensor<double>::from({2, 2}, {1.0, 0.75, -0.5, 0.5});
  auto wv = Tensor<double>::from({2, 2}, {2.0, 0.0, 1.0, -1.0});
  auto res = self_attention(t, wq, wk, wv);

  double q[2][2], k[2][2], v[2][2];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      q[i][j] = t.at({(std::size_t)i, 0}) * wq.at({0, (std::size_t)j}) +
                t.at({(std::size_t)i, 1}) * wq.at({1, (std::size_t)j});
      k[i][j] = t.at({(std::size_t)i, 0}) * wk.at({0, (std::size_t)j}) +
                t.at({(std::size_t)i, 1}) * wk.at({1, (std::size_t)j});
      v[i][j] = t.at({(std::size_t)i, 0}) * wv.at({0, (std::size_t)j}) +
                t.at({(std::size_t)i, 1}) * wv.at({1, (std::size_t)j});
    }
  double scale = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < 2; ++i) {
    double s0 = (q[i][0] * k[0][0] + q[i][1] * k[0][1]) * scale;
    double s1 = (q[i][0] * k[1][0] + q[i][1] * k[1][1]) * scale;
    double m = std::max(s0, s1);
    double e0 = std::exp(s0 - m), e1 = std::exp(s1 - m);
    double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
    CHECK(res.attention.at({(std::size_t)i, 0}) == doctest::Approx(a0).epsilon(1e-12));
    CHECK(res.attention.at({(std::size_t)i, 1}) == doctest::Approx(a1).epsilon(1e-12));
    for (int j = 0; j < 2; ++j)
      CHECK(res.output.at({(std::size_t)i, (std::size_t)j}) ==
            doctest::Approx(a0 * v[0][j] + a1 * v[1][j]).epsilon(1e-12));
  }
}

TEST_CASE("multi_head_attention degenerates to one head with identity projection") {
  Rng rng(3);
  auto t = Tensor<double>::uniform({4, 4}, rng, -1, 1);
  AttentionWeights<double> w = AttentionWeights<double>::init(4, 1, rng);
  // identity wp and zero biases
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  w.wp = Tensor<double>::from({4, 4}, eye);
  w.bp = Tensor<double>::zeros({4});
  for (auto& h : w.heads) {
    h.bq = Tensor<double>::zeros({4});
    h.bv = Tensor<double>::zeros({4});
  }
  auto out = multi_head_attention(t, w);
  auto sa = self_attention(t, w.heads[0].wq, w.heads[0].wk, w.heads[0].wv);
  for (std::size_t i = 0; i < out.numel(); ++i)
    CHECK(out.values()[i] == doctest::Approx(sa.output.values()[i]).epsilon(1e-12));
}

TEST_CASE("multi_head_attention with zero projection is zero") {
  Rng rng(4);
  auto t = Tensor<double>::uniform({4, 4}, rng, -1, 1);
  AttentionWeights<double> w = AttentionWeights<double>::init(4, 2, rng);
  w.wp = Tensor<double>::zeros({4, 4});
  w.bp = Tensor<double>::zeros({4});
  auto out = multi_head_attention(t, w);
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("multi_head_attention equals manual concat of per-head outputs times wp") {
  Rng rng(5);
  auto t = Tensor<double>::uniform({3, 4}, rng, -1, 1);
  AttentionWeights<double> w = AttentionWeights<double>::init(4, 2, rng);
  auto out = multi_head_attention(t, w);

  auto h0 = self_attention(t, w.heads[0].wq, w.heads[0].wk, w.heads[0].wv, w.heads[0].bq,
                           w.heads[0].bv);
  auto h1 = self_attention(t, w.heads[1].wq, w.heads[1].wk, w.heads[1].wv, w.heads[1].bq,
                           w.heads[1].bv);
  auto manual = add_bias(matmul(concat_cols<double>({h0.output, h1.output}), w.wp), w.bp);
  for (std::size_t i = 0; i < out.numel(); ++i)
    CHECK(out.values()[i] == doctest::Approx(manual.values()[i]).epsilon(1e-12));
}

TEST_CASE("encoder_block with zero submodule weights is the identity") {
  Rng rng(6);
  auto t = Tensor<double>::uniform({5, 4}, rng, -1, 1);
  BlockWeights<double> w = BlockWeights<double>::init(4, 2, 8, rng);
  for (auto& h : w.attn.heads) {
    h.wv = Tensor<double>::zeros({4, 2});
    h.bv = Tensor<double>::zeros({2});
  }
  w.attn.wp = Tensor<double>::zeros({4, 4});
  w.attn.bp = Tensor<double>::zeros({4});
  w.mlp_w2 = Tensor<double>::zeros({8, 4});
  w.mlp_b2 = Tensor<double>::zeros({4});
  auto out = encoder_block(t, w);
  CHECK(out.shape() == t.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.values()[i] == t.values()[i]);
}

TEST_CASE("encoder_block matches the step-by-step residual oracle at d=2, S=2") {
  BlockWeights<double> w;
  double eps = 1e-6;
  w.ln1_gamma = Tensor<double>::from({2}, {1.1, 0.9});
  w.ln1_beta = Tensor<double>::from({2}, {0.05, -0.05});
  w.ln2_gamma = Tensor<double>::from({2}, {0.8, 1.2});
  w.ln2_beta = Tensor<double>::from({2}, {0.0, 0.1});
  HeadWeights<double> h;
  h.wq = Tensor<double>::from({2, 2}, {0.3, -0.2, 0.1, 0.4});
  h.wk = Tensor<double>::from({2, 2}, {-0.1, 0.2, 0.5, 0.3});
  h.wv = Tensor<double>::from({2, 2}, {0.7, 0.1, -0.3, 0.2});
  h.bq = Tensor<double>::from({2}, {0.01, -0.02});
  h.bv = Tensor<double>::from({2}, {-0.01, 0.02});
  w.attn.heads = {h};
  w.attn.wp = Tensor<double>::from({2, 2}, {0.6, -0.4, 0.2, 0.8});
  w.attn.bp = Tensor<double>::from({2}, {0.02, 0.01});
  w.mlp_w1 = Tensor<double>::from({2, 4}, {0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8});
  w.mlp_b1 = Tensor<double>::from({4}, {0.0, 0.1, -0.1, 0.05});
  w.mlp_w2 = Tensor<double>::from({4, 2}, {0.2, -0.1, 0.3, 0.4, -0.5, 0.6, 0.1, 0.2});
  w.mlp_b2 = Tensor<double>::from({2}, {0.03, -0.03});

  auto t = Tensor<double>::from({2, 2}, {0.5, -1.0, 1.5, 0.25});
  BlockRunOpts opts;
  opts.ln_eps = eps;
  auto got = encoder_block(t, w, opts);

  // oracle: evaluate the two residual equations with the ops directly
  auto mid = add(t, multi_head_attention(layer_norm(t, w.ln1_gamma, w.ln1_beta, eps), w.attn));
  auto hidden = gelu(add_bias(matmul(layer_norm(mid, w.ln2_gamma, w.ln2_beta, eps), w.mlp_w1),
                              w.mlp_b1));
  auto expect = add(mid, add_bias(matmul(hidden, w.mlp_w2), w.mlp_b2));
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(got.values()[i] == doctest::Approx(expect.values()[i]).epsilon(1e-12));
}

TEST_CASE("run_encoder with zero blocks is the identity and bookkeeping holds") {
  Rng rng(7);
  auto kp = Tensor<double>::uniform({2, 4}, rng, -1, 1);
  auto vis = Tensor<double>::uniform({4, 4}, rng, -1, 1);
  auto seq = assemble(kp, vis);

  EncoderWeights<double> empty;
  auto state0 = run_encoder(seq, empty);
  CHECK(state0.final_tokens().values() == seq.tokens.values());

  EncoderWeights<double> enc = EncoderWeights<double>::init(3, 4, 2, 8, rng);
  EncoderRunOpts opts;
  opts.retain_attention = true;
  opts.retain_layers = true;
  auto state = run_encoder(seq, enc, opts);
  CHECK(state.attention.size() == 3 * 2);  // M*h records
  CHECK(state.layer_outputs.size() == 4);  // T^0..T^3
  CHECK(state.layer_outputs[0].values() == seq.tokens.values());

  // attention rows sum to 1 and entries lie in [0,1]
  for (const auto& rec : state.attention) {
    std::size_t S = rec.matrix.dim(0);
    for (std::size_t r = 0; r < S; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < S; ++c) {
        double v = rec.matrix.at({r, c});
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        sum += v;
      }
      CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("visual permutation: keypoint rows unchanged, visual rows permuted") {
  Rng rng(8);
  std::size_t N = 2, L = 5, d = 6;
  auto kp = Tensor<double>::uniform({N, d}, rng, -1, 1);
  auto vis = Tensor<double>::uniform({L, d}, rng, -1, 1);
  EncoderWeights<double> enc = EncoderWeights<double>::init(2, d, 2, 12, rng);

  std::vector<std::size_t> perm = {3, 0, 4, 2, 1};
  std::vector<double> pvals(L * d);
  for (std::size_t r = 0; r < L; ++r)
    for (std::size_t c = 0; c < d; ++c) pvals[r * d + c] = vis.at({perm[r], c});
  auto vis_p = Tensor<double>::from({L, d}, pvals);

  auto out = run_encoder(assemble(kp, vis), enc).final_tokens();
  auto out_p = run_encoder(assemble(kp, vis_p), enc).final_tokens();

  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t c = 0; c < d; ++c)
      CHECK(std::fabs(out_p.at({r, c}) - out.at({r, c})) < 1e-12);
  for (std::size_t r = 0; r < L; ++r)
    for (std::size_t c = 0; c < d; ++c)
      CHECK(std::fabs(out_p.at({N + r, c}) - out.at({N + perm[r], c})) < 1e-12);
}

TEST_CASE("keypoint tokens stay distinguishable through the stack") {
  Rng rng(9);
  std::size_t N = 4, d = 8;
  auto kp = init_keypoint_tokens<double>(N, d, rng);
  auto vis = Tensor<double>::uniform({6, d}, rng, -1, 1);
  EncoderWeights<double> enc = EncoderWeights<double>::init(2, d, 2, 16, rng);
  auto out = run_encoder(assemble(kp, vis), enc).final_tokens();
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = i + 1; j < N; ++j) {
      double diff = 0.0;
      for (std::size_t c = 0; c < d; ++c) diff = std::max(diff, std::fabs(out.at({i, c}) - out.at({j, c})));
      CHECK(diff > 1e-6);
    }
}

TEST_CASE("fuse_keypoint_tokens slices and concatenates retained layers") {
  Rng rng(10);
  std::size_t N = 3, d = 4;
  auto kp = Tensor<double>::uniform({N, d}, rng, -1, 1);
  auto vis = Tensor<double>::uniform({5, d}, rng, -1, 1);
  EncoderWeights<double> enc = EncoderWeights<double>::init(4, d, 2, 8, rng);
  EncoderRunOpts opts;
  opts.retain_layers = true;
  auto state = run_encoder(assemble(kp, vis), enc, opts);

  // layers=[M] equals the final keypoint rows bitwise
  auto last = fuse_keypoint_tokens(state, {4});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t c = 0; c < d; ++c)
      CHECK(last.at({i, c}) == state.final_tokens().at({i, c}));

  auto fused = fuse_keypoint_tokens(state, {2, 3, 4});
  REQUIRE(fused.shape() == Shape{N, 3 * d});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t seg = 0; seg < 3; ++seg)
      for (std::size_t c = 0; c < d; ++c)
        CHECK(fused.at({i, seg * d + c}) == state.layer_outputs[2 + seg].at({i, c}));

  CHECK_THROWS_AS(fuse_keypoint_tokens(state, {0}), InvalidLayerIndex);
  CHECK_THROWS_AS(fuse_keypoint_tokens(state, {5}), InvalidLayerIndex);
  CHECK_THROWS_AS(fuse_keypoint_tokens(state, {3, 2}), InvalidLayerIndex);
}

TEST_CASE("keypoint prior matrix: identical rows give a uniform matrix") {
  auto table = Tensor<double>::from({3, 4}, {1, 2, 3, 4, 1, 2, 3, 4, 1, 2, 3, 4});
  auto prior = keypoint_prior_matrix(table);
  for (double v : prior.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("keypoint prior matrix rows sum to one; orthogonal case hand-checked") {
  Rng rng(11);
  auto table = Tensor<double>::uniform({5, 6}, rng, -1, 1);
  auto prior = keypoint_prior_matrix(table);
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) s += prior.at({r, c});
    CHECK(std::fabs(s - 1.0) < 1e-9);
  }

  // orthogonal unit rows, d=4, N=3: diagonal = e^{1/sqrt(4)} softmaxed
  // against off-diagonal e^0 -> e^{0.5} / (e^{0.5} + 2)
  auto ortho = Tensor<double>::from({3, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
  auto p = keypoint_prior_matrix(ortho);
  double expect_diag = std::exp(0.5) / (std::exp(0.5) + 2.0);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(p.at({i, i}) == doctest::Approx(expect_diag).epsilon(1e-12));
}

TEST_CASE("gradient check through a full 2-layer encoder (d=8, 6 tokens)") {
  Rng rng(12);
  std::size_t d = 8;
  auto kp = init_keypoint_tokens<double>(2, d, rng);
  auto vis = Tensor<double>::uniform({4, d}, rng, -1, 1);
  vis.set_requires_grad(true);
  EncoderWeights<double> enc = EncoderWeights<double>::init(2, d, 2, 16, rng);
  auto probe = Tensor<double>::uniform({6, d}, rng, -1, 1);

  std::vector<Tensor<double>> leaves = collect_params(enc);
  leaves.push_back(kp);
  leaves.push_back(vis);

  // probe-weighted sum plus a quadratic term keeps every leaf gradient at a
  // generic scale the finite-difference oracle can resolve
  auto r = tokenpose::testing::gradcheck(leaves, [&] {
    auto state = run_encoder(assemble(kp, vis), enc);
    auto out = state.final_tokens();
    return add(sum(mul(out, probe)), sum(mul(out, out)));
  });
  CHECK_MESSAGE(r.ok, r.detail);
  CHECK(r.max_rel_err < 1e-4);
}
