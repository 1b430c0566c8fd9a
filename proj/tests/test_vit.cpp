#include <cmath>

#include <gtest/gtest.h>

#include "grad_check.hpp"
#include "mtvit/rng.hpp"
#include "mtvit/vit.hpp"

using namespace mtvit;
using mtvit::test::GradCheckOptions;
using mtvit::test::expect_grad_matches;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Tensor<double> identity(size_t n) {
  Tensor<double> t({n, n});
  for (size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

EncoderConfig micro_config(size_t depth = 1, size_t dim = 8, size_t heads = 2,
                           size_t classes = 5) {
  EncoderConfig c;
  c.depth = depth;
  c.dim = dim;
  c.heads = heads;
  c.mlp_ratio = 2;
  c.classes = classes;
  return c;
}

}  // namespace

TEST(QkvProject, IdentityProjectionGivesZ) {
  Rng rng(1);
  Tensor<double> z = random_tensor({3, 4}, rng);
  Tensor<double> w({4, 12});
  for (size_t i = 0; i < 4; ++i)
    for (size_t blk = 0; blk < 3; ++blk) w.at(i, blk * 4 + i) = 1.0;
  QkvTriple<double> qkv = qkv_project(z, w);
  for (size_t i = 0; i < z.size(); ++i) {
    EXPECT_DOUBLE_EQ(qkv.q[i], z[i]);
    EXPECT_DOUBLE_EQ(qkv.k[i], z[i]);
    EXPECT_DOUBLE_EQ(qkv.v[i], z[i]);
  }
}

TEST(QkvProject, ZeroInputGivesZeroEmbeddings) {
  Rng rng(2);
  Tensor<double> z({3, 4});
  Tensor<double> w = random_tensor({4, 12}, rng);
  QkvTriple<double> qkv = qkv_project(z, w);
  for (size_t i = 0; i < z.size(); ++i) {
    EXPECT_DOUBLE_EQ(qkv.q[i], 0.0);
    EXPECT_DOUBLE_EQ(qkv.k[i], 0.0);
    EXPECT_DOUBLE_EQ(qkv.v[i], 0.0);
  }
}

TEST(QkvProject, MatchesMatmulSplitOracle) {
  Rng rng(3);
  Tensor<double> z = random_tensor({5, 6}, rng);
  Tensor<double> w = random_tensor({6, 18}, rng);
  QkvTriple<double> qkv = qkv_project(z, w);
  Tensor<double> full = matmul(z, w);
  for (size_t i = 0; i < 5; ++i)
    for (size_t j = 0; j < 6; ++j) {
      EXPECT_DOUBLE_EQ(qkv.q.at(i, j), full.at(i, j));
      EXPECT_DOUBLE_EQ(qkv.k.at(i, j), full.at(i, j + 6));
      EXPECT_DOUBLE_EQ(qkv.v.at(i, j), full.at(i, j + 12));
    }
  EXPECT_THROW(qkv_project(z, random_tensor({6, 12}, rng)), std::invalid_argument);
}

TEST(SelfAttention, SingleTokenReturnsV) {
  Rng rng(4);
  Tensor<double> q = random_tensor({1, 4}, rng);
  Tensor<double> k = random_tensor({1, 4}, rng);
  Tensor<double> v = random_tensor({1, 4}, rng);
  Tensor<double> out = self_attention(q, k, v, 4);
  for (size_t i = 0; i < 4; ++i) EXPECT_NEAR(out[i], v[i], 1e-12);
}

TEST(SelfAttention, ZeroKeysGiveUniformAttention) {
  Rng rng(5);
  Tensor<double> q = random_tensor({3, 4}, rng);
  Tensor<double> k({3, 4});
  Tensor<double> v = random_tensor({3, 4}, rng);
  Tensor<double> out = self_attention(q, k, v, 4);
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 4; ++j) {
      double colmean = (v.at(0, j) + v.at(1, j) + v.at(2, j)) / 3.0;
      EXPECT_NEAR(out.at(i, j), colmean, 1e-12);
    }
}

TEST(SelfAttention, MatchesBruteForceOracle) {
  Rng rng(6);
  const size_t n = 3, d = 4;
  Tensor<double> q = random_tensor({n, d}, rng);
  Tensor<double> k = random_tensor({n, d}, rng);
  Tensor<double> v = random_tensor({n, d}, rng);
  Tensor<double> attn;
  Tensor<double> out = self_attention(q, k, v, d, &attn);

  // Scalar-loop oracle, no tensor ops involved.
  const double scale = 1.0 / std::sqrt(double(d));
  for (size_t i = 0; i < n; ++i) {
    double logits[n], mx = -1e300;
    for (size_t j = 0; j < n; ++j) {
      double dot = 0;
      for (size_t c = 0; c < d; ++c) dot += q.at(i, c) * k.at(j, c);
      logits[j] = dot * scale;
      mx = std::max(mx, logits[j]);
    }
    double z = 0;
    for (size_t j = 0; j < n; ++j) z += std::exp(logits[j] - mx);
    double rowsum = 0;
    for (size_t j = 0; j < n; ++j) {
      const double a = std::exp(logits[j] - mx) / z;
      rowsum += a;
      EXPECT_NEAR(attn.at(i, j), a, 1e-12);
      for (size_t c = 0; c < d; ++c) {
        // accumulate oracle output
      }
    }
    EXPECT_NEAR(rowsum, 1.0, 1e-9);
    for (size_t c = 0; c < d; ++c) {
      double acc = 0;
      for (size_t j = 0; j < n; ++j)
        acc += (std::exp(logits[j] - mx) / z) * v.at(j, c);
      EXPECT_NEAR(out.at(i, c), acc, 1e-12);
    }
  }
}

TEST(Msa, SingleHeadReducesToSelfAttentionPlusProjection) {
  Rng rng(7);
  const size_t d = 6;
  EncoderConfig cfg = micro_config(1, d, 1);
  EncoderParams<double> p = make_encoder_params<double>(cfg, rng);
  Tensor<double> z = random_tensor({4, d}, rng);

  Tensor<double> got = msa(z, p.layers[0], 1);
  QkvTriple<double> qkv = qkv_project(z, p.layers[0].w_qkv, &p.layers[0].b_qkv);
  Tensor<double> expect = add_rowwise(
      matmul(self_attention(qkv.q, qkv.k, qkv.v, d), p.layers[0].w_proj),
      p.layers[0].b_proj);
  for (size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-12);
}

// Swapping the two head blocks (columns of each QKV block) while permuting
// the projection rows the same way leaves the output unchanged.
TEST(Msa, HeadPermutationInvariance) {
  Rng rng(8);
  const size_t d = 8, hd = 4;
  EncoderConfig cfg = micro_config(1, d, 2);
  EncoderParams<double> p = make_encoder_params<double>(cfg, rng);
  Tensor<double> z = random_tensor({5, d}, rng);
  Tensor<double> base = msa(z, p.layers[0], 2);

  EncoderLayerParams<double> lp = p.layers[0];
  lp.w_qkv = p.layers[0].w_qkv.clone();
  lp.b_qkv = p.layers[0].b_qkv.clone();
  lp.w_proj = p.layers[0].w_proj.clone();
  // swap head column blocks within each of Q, K, V
  for (size_t row = 0; row < d; ++row)
    for (size_t blk = 0; blk < 3; ++blk)
      for (size_t j = 0; j < hd; ++j)
        std::swap(lp.w_qkv.at(row, blk * d + j), lp.w_qkv.at(row, blk * d + hd + j));
  for (size_t blk = 0; blk < 3; ++blk)
    for (size_t j = 0; j < hd; ++j)
      std::swap(lp.b_qkv[blk * d + j], lp.b_qkv[blk * d + hd + j]);
  // swap the matching rows of the output projection
  for (size_t j = 0; j < hd; ++j)
    for (size_t col = 0; col < d; ++col)
      std::swap(lp.w_proj.at(j, col), lp.w_proj.at(hd + j, col));

  Tensor<double> swapped = msa(z, lp, 2);
  for (size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(swapped[i], base[i], 1e-12);
}

TEST(Msa, TwoHeadSliceOracle) {
  Rng rng(9);
  const size_t d = 8, hd = 4, n = 3;
  EncoderConfig cfg = micro_config(1, d, 2);
  EncoderParams<double> p = make_encoder_params<double>(cfg, rng);
  Tensor<double> z = random_tensor({n, d}, rng);
  Tensor<double> got = msa(z, p.layers[0], 2);

  QkvTriple<double> qkv = qkv_project(z, p.layers[0].w_qkv, &p.layers[0].b_qkv);
  std::vector<Tensor<double>> heads;
  for (size_t h = 0; h < 2; ++h)
    heads.push_back(self_attention(slice(qkv.q, 1, h * hd, hd),
                                   slice(qkv.k, 1, h * hd, hd),
                                   slice(qkv.v, 1, h * hd, hd), hd));
  Tensor<double> expect = add_rowwise(
      matmul(concat(heads, 1), p.layers[0].w_proj), p.layers[0].b_proj);
  for (size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-12);
}

TEST(MlpBlock, ZeroInputZeroOutputWithFreshBiases) {
  Rng rng(10);
  EncoderConfig cfg = micro_config();
  EncoderParams<double> p = make_encoder_params<double>(cfg, rng);
  Tensor<double> z({3, 8});
  Tensor<double> out = mlp_block(z, p.layers[0]);
  for (size_t i = 0; i < out.size(); ++i) EXPECT_DOUBLE_EQ(out[i], 0.0);
}

TEST(MlpBlock, IdentityWeightsGiveGelu) {
  Rng rng(11);
  const size_t d = 4;
  EncoderConfig cfg = micro_config(1, d, 1);
  cfg.mlp_ratio = 1;
  EncoderParams<double> p = make_encoder_params<double>(cfg, rng);
  p.layers[0].w_fc1 = identity(d);
  p.layers[0].w_fc2 = identity(d);
  p.layers[0].b_fc1 = Tensor<double>({d});
  p.layers[0].b_fc2 = Tensor<double>({d});
  Tensor<double> z = random_tensor({3, d}, rng);
  Tensor<double> out = mlp_block(z, p.layers[0]);
  Tensor<double> expect = gelu(z);
  for (size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], expect[i], 1e-12);
}

TEST(MlpBlock, ComposedPrimitiveOracle) {
  Rng rng(12);
  EncoderConfig cfg = micro_config();
  EncoderParams<double> p = make_encoder_params<double>(cfg, rng);
  Tensor<double> z = random_tensor({4, 8}, rng);
  Tensor<double> got = mlp_block(z, p.layers[0]);
  Tensor<double> h = gelu(add_rowwise(matmul(z, p.layers[0].w_fc1), p.layers[0].b_fc1));
  Tensor<double> expect = add_rowwise(matmul(h, p.layers[0].w_fc2), p.layers[0].b_fc2);
  for (size_t i = 0; i < got.size(); ++i) EXPECT_DOUBLE_EQ(got[i], expect[i]);
}

TEST(EncoderLayer, ZeroProjectionsGiveIdentity) {
  Rng rng(13);
  EncoderConfig cfg = micro_config();
  EncoderParams<double> p = make_encoder_params<double>(cfg, rng);
  p.layers[0].w_proj = Tensor<double>({8, 8});
  p.layers[0].w_fc2 = Tensor<double>({16, 8});
  Tensor<double> z = random_tensor({5, 8}, rng);
  Tensor<double> out = encoder_layer(z, p.layers[0], cfg);
  for (size_t i = 0; i < z.size(); ++i) EXPECT_DOUBLE_EQ(out[i], z[i]);
}

TEST(EncoderLayer, MatchesManualComposition) {
  Rng rng(14);
  EncoderConfig cfg = micro_config();
  EncoderParams<double> p = make_encoder_params<double>(cfg, rng);
  const auto& lp = p.layers[0];
  Tensor<double> z = random_tensor({4, 8}, rng);
  Tensor<double> got = encoder_layer(z, lp, cfg);
  Tensor<double> zp = add(
      z, msa(layer_norm(z, lp.ln1_gain, lp.ln1_bias, cfg.ln_eps), lp, cfg.heads));
  Tensor<double> expect = add(
      zp, mlp_block(layer_norm(zp, lp.ln2_gain, lp.ln2_bias, cfg.ln_eps), lp));
  for (size_t i = 0; i < got.size(); ++i) EXPECT_DOUBLE_EQ(got[i], expect[i]);
}

TEST(EncoderLayer, PreservesShape) {
  Rng rng(15);
  EncoderConfig cfg = micro_config();
  EncoderParams<double> p = make_encoder_params<double>(cfg, rng);
  for (size_t n : {2, 5, 9}) {
    Tensor<double> z = random_tensor({n, 8}, rng);
    EXPECT_EQ(encoder_layer(z, p.layers[0], cfg).shape(), (Shape{n, 8}));
  }
}

TEST(EncodeAndClassify, EmptyStackIsHeadOfNormedClassToken) {
  Rng rng(16);
  EncoderConfig cfg = micro_config(1, 8, 2, 5);
  EncoderParams<double> p = make_encoder_params<double>(cfg, rng);
  p.layers.clear();  // empty stack
  TokenSequence<double> seq;
  seq.tokens = random_tensor({4, 8}, rng);
  seq.patch_count = 3;
  Tensor<double> got = encode_and_classify(seq, p);
  Tensor<double> cls = slice(seq.tokens, 0, 0, 1);
  Tensor<double> expect = add_rowwise(
      matmul(layer_norm(cls, p.ln_f_gain, p.ln_f_bias, cfg.ln_eps), p.w_head),
      p.b_head);
  ASSERT_EQ(got.shape(), (Shape{1, 5}));
  for (size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(got[i], expect[i]);
}

// One parameter instance serves arbitrary sequence lengths: the shared
// encoder accepts every tail's N without touching the parameters.
TEST(EncodeAndClassify, SharedParamsAcrossSequenceLengths) {
  Rng rng(17);
  EncoderConfig cfg = micro_config(2, 8, 2, 7);
  EncoderParams<double> p = make_encoder_params<double>(cfg, rng);
  for (size_t n : {4, 16, 64}) {
    TokenSequence<double> seq;
    seq.tokens = random_tensor({n + 1, 8}, rng);
    seq.patch_count = n;
    Tensor<double> logits = encode_and_classify(seq, p);
    EXPECT_EQ(logits.shape(), (Shape{1, 7}));
  }
}

TEST(EncodeAndClassify, DeterministicUnderFixedSeed) {
  auto run = [] {
    Rng rng(99);
    EncoderConfig cfg = micro_config(2, 8, 2, 4);
    EncoderParams<double> p = make_encoder_params<double>(cfg, rng);
    TokenSequence<double> seq;
    seq.tokens = Tensor<double>({6, 8});
    for (size_t i = 0; i < seq.tokens.size(); ++i)
      seq.tokens[i] = rng.uniform(-1, 1);
    seq.patch_count = 5;
    return encode_and_classify(seq, p);
  };
  Tensor<double> a = run(), b = run();
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

// Attention-map rows sum to 1 at every layer of a deep stack.
TEST(Invariants, AttentionRowsSumToOneEveryLayer) {
  Rng rng(18);
  EncoderConfig cfg = micro_config(3, 8, 2, 4);
  cfg.depth = 3;
  EncoderParams<double> p = make_encoder_params<double>(cfg, rng);
  TokenSequence<double> seq;
  seq.tokens = random_tensor({7, 8}, rng);
  seq.patch_count = 6;
  std::vector<Tensor<double>> maps;
  encode_and_classify(seq, p, &maps);
  ASSERT_EQ(maps.size(), cfg.depth * cfg.heads);
  for (const auto& m : maps)
    for (size_t i = 0; i < m.shape()[0]; ++i) {
      double s = 0;
      for (size_t j = 0; j < m.shape()[1]; ++j) s += m.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

// With attention and MLP output projections zeroed, the logits are
// independent of depth.
TEST(Invariants, ResidualZeroInitIndependentOfDepth) {
  Rng rng(21);
  EncoderConfig cfg = micro_config(6, 8, 2, 4);
  EncoderParams<double> full = make_encoder_params<double>(cfg, rng);
  for (auto& lp : full.layers) {
    lp.w_proj = Tensor<double>({8, 8});
    lp.b_proj = Tensor<double>({8});
    lp.w_fc2 = Tensor<double>({16, 8});
    lp.b_fc2 = Tensor<double>({8});
  }
  Rng data_rng(77);
  TokenSequence<double> seq;
  seq.tokens = random_tensor({5, 8}, data_rng);
  seq.patch_count = 4;
  Tensor<double> ref;
  for (size_t depth : {1, 3, 6}) {
    EncoderParams<double> p = full;  // shared head/class token, truncated stack
    p.layers.resize(depth);
    p.config.depth = depth;
    Tensor<double> logits = encode_and_classify(seq, p);
    if (!ref.defined()) {
      ref = logits;
    } else {
      for (size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(logits[i], ref[i], 1e-12);
    }
  }
}

// Composite MSA block and the full encoder against finite differences.
TEST(Gradients, MsaBlockFiniteDifferences) {
  Rng rng(22);
  EncoderConfig cfg = micro_config(1, 8, 2, 4);
  EncoderParams<double> p = make_encoder_params<double>(cfg, rng);
  Tensor<double> z = random_tensor({4, 8}, rng);
  Tensor<double> w = random_tensor({4, 8}, rng);
  auto fn = [&] { return sum(mul(msa(z, p.layers[0], cfg.heads), w)); };
  expect_grad_matches(fn, {&z, &p.layers[0].w_qkv, &p.layers[0].b_qkv,
                           &p.layers[0].w_proj, &p.layers[0].b_proj},
                      {}, "msa block");
}

// End-to-end gradient of cross_entropy(encode_and_classify) w.r.t. a sample
// of parameters from every tensor in the model.
TEST(Gradients, EndToEndSampledParameters) {
  Rng rng(23);
  EncoderConfig cfg = micro_config(2, 8, 2, 4);
  EncoderParams<double> p = make_encoder_params<double>(cfg, rng);
  TokenSequence<double> seq;
  seq.tokens = random_tensor({4, 8}, rng);
  seq.patch_count = 3;
  auto fn = [&] { return cross_entropy(encode_and_classify(seq, p), {2}); };
  std::vector<Tensor<double>*> leaves;
  std::vector<std::pair<std::string, Tensor<double>*>> named;
  p.collect_params(named);
  for (auto& [name, t] : named) leaves.push_back(t);
  leaves.push_back(&seq.tokens);
  GradCheckOptions opt;
  opt.max_per_leaf = 6;  // a sampled subset of every parameter tensor
  expect_grad_matches(fn, leaves, opt, "encode_and_classify");
}
