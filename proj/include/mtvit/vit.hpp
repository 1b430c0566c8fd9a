#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mtvit/init.hpp"
#include "mtvit/ops.hpp"
#include "mtvit/rng.hpp"
#include "mtvit/tensor.hpp"

namespace mtvit {

struct EncoderConfig {
  size_t depth = 4;      // L
  size_t dim = 64;       // d
  size_t heads = 4;      // H
  size_t mlp_ratio = 4;  // r
  size_t classes = 10;   // m
  double ln_eps = 1e-5;

  void validate() const {
    if (depth < 1 || dim < 1 || heads < 1 || mlp_ratio < 1 || classes < 1)
      throw std::invalid_argument("encoder config: all sizes must be >= 1");
    if (dim % heads != 0)
      throw std::invalid_argument("encoder config: dim " + std::to_string(dim) +
                                  " not divisible by heads " + std::to_string(heads));
  }
};

// (N+1) x d token matrix; row 0 is the class token.
template <typename T>
struct TokenSequence {
  Tensor<T> tokens;
  size_t patch_count = 0;  // N, excluding the class token

  void validate(size_t dim) const {
    if (tokens.rank() != 2 || tokens.shape()[0] != patch_count + 1 ||
        tokens.shape()[1] != dim)
      throw std::invalid_argument("token sequence " + shape_str(tokens.shape()) +
                                  " does not match N=" + std::to_string(patch_count) +
                                  ", d=" + std::to_string(dim));
  }
};

template <typename T>
struct EncoderLayerParams {
  Tensor<T> w_qkv, b_qkv;    // d x 3d, 3d
  Tensor<T> w_proj, b_proj;  // d x d, d
  Tensor<T> w_fc1, b_fc1;    // d x rd, rd
  Tensor<T> w_fc2, b_fc2;    // rd x d, d
  Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // d
};

// One shared instance serves every tail; nothing here depends on N.
template <typename T>
struct EncoderParams {
  EncoderConfig config;
  std::vector<EncoderLayerParams<T>> layers;
  Tensor<T> class_token;         // 1 x d
  Tensor<T> ln_f_gain, ln_f_bias;  // d
  Tensor<T> w_head, b_head;      // d x m, m

  void collect_params(std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    for (size_t l = 0; l < layers.size(); ++l) {
      auto& lp = layers[l];
      const std::string p = "encoder.layer" + std::to_string(l) + ".";
      out.emplace_back(p + "w_qkv", &lp.w_qkv);
      out.emplace_back(p + "b_qkv", &lp.b_qkv);
      out.emplace_back(p + "w_proj", &lp.w_proj);
      out.emplace_back(p + "b_proj", &lp.b_proj);
      out.emplace_back(p + "w_fc1", &lp.w_fc1);
      out.emplace_back(p + "b_fc1", &lp.b_fc1);
      out.emplace_back(p + "w_fc2", &lp.w_fc2);
      out.emplace_back(p + "b_fc2", &lp.b_fc2);
      out.emplace_back(p + "ln1_gain", &lp.ln1_gain);
      out.emplace_back(p + "ln1_bias", &lp.ln1_bias);
      out.emplace_back(p + "ln2_gain", &lp.ln2_gain);
      out.emplace_back(p + "ln2_bias", &lp.ln2_bias);
    }
    out.emplace_back("encoder.class_token", &class_token);
    out.emplace_back("encoder.ln_f_gain", &ln_f_gain);
    out.emplace_back("encoder.ln_f_bias", &ln_f_bias);
    out.emplace_back("encoder.w_head", &w_head);
    out.emplace_back("encoder.b_head", &b_head);
  }
};

// DeiT-style init: truncated normal (std 0.02) weights, zero biases,
// layer-norm gain 1 / bias 0.
template <typename T>
EncoderParams<T> make_encoder_params(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const size_t d = cfg.dim, r = cfg.mlp_ratio, m = cfg.classes;
  EncoderParams<T> p;
  p.config = cfg;
  p.layers.resize(cfg.depth);
  for (auto& lp : p.layers) {
    lp.w_qkv = detail::trunc_normal_tensor<T>({d, 3 * d}, rng);
    lp.b_qkv = Tensor<T>({3 * d});
    lp.w_proj = detail::trunc_normal_tensor<T>({d, d}, rng);
    lp.b_proj = Tensor<T>({d});
    lp.w_fc1 = detail::trunc_normal_tensor<T>({d, r * d}, rng);
    lp.b_fc1 = Tensor<T>({r * d});
    lp.w_fc2 = detail::trunc_normal_tensor<T>({r * d, d}, rng);
    lp.b_fc2 = Tensor<T>({d});
    lp.ln1_gain = Tensor<T>::full({d}, T(1));
    lp.ln1_bias = Tensor<T>({d});
    lp.ln2_gain = Tensor<T>::full({d}, T(1));
    lp.ln2_bias = Tensor<T>({d});
  }
  p.class_token = detail::trunc_normal_tensor<T>({1, d}, rng);
  p.ln_f_gain = Tensor<T>::full({d}, T(1));
  p.ln_f_bias = Tensor<T>({d});
  p.w_head = detail::trunc_normal_tensor<T>({d, m}, rng);
  p.b_head = Tensor<T>({m});

  std::vector<std::pair<std::string, Tensor<T>*>> all;
  p.collect_params(all);
  for (auto& [name, t] : all) t->set_requires_grad(true);
  return p;
}

template <typename T>
struct QkvTriple {
  Tensor<T> q, k, v;
};

// [Q,K,V] = Z * W_qkv, split into three equal column blocks.
template <typename T>
QkvTriple<T> qkv_project(const Tensor<T>& z, const Tensor<T>& w_qkv,
                         const Tensor<T>* bias = nullptr) {
  if (z.rank() != 2 || w_qkv.rank() != 2 || w_qkv.shape()[0] != z.shape()[1] ||
      w_qkv.shape()[1] != 3 * z.shape()[1])
    throw_shape_mismatch("qkv_project", z.shape(), w_qkv.shape());
  const size_t d = z.shape()[1];
  Tensor<T> qkv = matmul(z, w_qkv);
  if (bias) qkv = add_rowwise(qkv, *bias);
  return {slice(qkv, 1, 0, d), slice(qkv, 1, d, d), slice(qkv, 1, 2 * d, d)};
}

// softmax(Q K^T / sqrt(head_dim)) V
template <typename T>
Tensor<T> self_attention(const Tensor<T>& q, const Tensor<T>& k,
                         const Tensor<T>& v, size_t head_dim,
                         Tensor<T>* attn_out = nullptr) {
  if (q.shape() != k.shape() || k.shape() != v.shape())
    throw_shape_mismatch("self_attention", q.shape(), v.shape());
  Tensor<T> scores = mul_scalar(matmul(q, transpose(k)),
                                static_cast<T>(1.0 / std::sqrt(double(head_dim))));
  Tensor<T> attn = softmax(scores, 1);
  if (attn_out) *attn_out = attn.detach();
  return matmul(attn, v);
}

// Multi-head self-attention: per-head attention on d/H column slices,
// concatenated, then the output projection. Scale is sqrt(d/H) per head.
template <typename T>
Tensor<T> msa(const Tensor<T>& z, const EncoderLayerParams<T>& lp, size_t heads,
              std::vector<Tensor<T>>* attn_maps = nullptr) {
  const size_t d = z.shape()[1];
  const size_t hd = d / heads;
  QkvTriple<T> qkv = qkv_project(z, lp.w_qkv, &lp.b_qkv);
  std::vector<Tensor<T>> head_outs;
  head_outs.reserve(heads);
  for (size_t h = 0; h < heads; ++h) {
    Tensor<T> qh = slice(qkv.q, 1, h * hd, hd);
    Tensor<T> kh = slice(qkv.k, 1, h * hd, hd);
    Tensor<T> vh = slice(qkv.v, 1, h * hd, hd);
    Tensor<T> amap;
    head_outs.push_back(self_attention(qh, kh, vh, hd, attn_maps ? &amap : nullptr));
    if (attn_maps) attn_maps->push_back(amap);
  }
  Tensor<T> cat = heads == 1 ? head_outs[0] : concat(head_outs, 1);
  return add_rowwise(matmul(cat, lp.w_proj), lp.b_proj);
}

// GELU(Z' W_fc1 + b) W_fc2 + b, hidden width r*d.
template <typename T>
Tensor<T> mlp_block(const Tensor<T>& z, const EncoderLayerParams<T>& lp) {
  Tensor<T> h = gelu(add_rowwise(matmul(z, lp.w_fc1), lp.b_fc1));
  return add_rowwise(matmul(h, lp.w_fc2), lp.b_fc2);
}

// Pre-norm block: Z' = Z + MSA(LN(Z)); out = Z' + MLP(LN(Z')).
template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& z, const EncoderLayerParams<T>& lp,
                        const EncoderConfig& cfg,
                        std::vector<Tensor<T>>* attn_maps = nullptr) {
  const T eps = static_cast<T>(cfg.ln_eps);
  Tensor<T> zp =
      add(z, msa(layer_norm(z, lp.ln1_gain, lp.ln1_bias, eps), lp, cfg.heads,
                 attn_maps));
  return add(zp, mlp_block(layer_norm(zp, lp.ln2_gain, lp.ln2_bias, eps), lp));
}

// L encoder layers, final layer norm, linear head on the class-token row.
// Returns a [1 x m] logit row.
template <typename T>
Tensor<T> encode_and_classify(const TokenSequence<T>& seq,
                              const EncoderParams<T>& params,
                              std::vector<Tensor<T>>* attn_maps = nullptr) {
  const EncoderConfig& cfg = params.config;
  seq.validate(cfg.dim);
  Tensor<T> z = seq.tokens;
  for (const auto& lp : params.layers)
    z = encoder_layer(z, lp, cfg, attn_maps);
  Tensor<T> cls = slice(z, 0, 0, 1);
  cls = layer_norm(cls, params.ln_f_gain, params.ln_f_bias,
                   static_cast<T>(cfg.ln_eps));
  return add_rowwise(matmul(cls, params.w_head), params.b_head);
}

}  // namespace mtvit
