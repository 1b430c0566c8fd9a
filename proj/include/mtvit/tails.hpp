#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtvit/image.hpp"
#include "mtvit/objective.hpp"
#include "mtvit/selector.hpp"
#include "mtvit/tensor.hpp"
#include "mtvit/vit.hpp"

namespace mtvit {

// One "image-to-tokens" tail: non-overlapping p x p patches after an optional
// resize, giving an n x n token grid.
struct TailConfig {
  size_t patch = 16;
  size_t grid = 0;                    // tokens per side, N = grid^2
  size_t resize_h = 0, resize_w = 0;  // 0 = no resize

  size_t tokens() const { return grid * grid; }

  void validate(size_t img_h, size_t img_w) const {
    const size_t h = resize_h ? resize_h : img_h;
    const size_t w = resize_w ? resize_w : img_w;
    if (patch == 0 || grid == 0)
      throw std::invalid_argument("tail config: patch and grid must be positive");
    if (h % patch != 0 || w % patch != 0 || h / patch != grid || w / patch != grid)
      throw std::invalid_argument(
          "tail config: image " + std::to_string(h) + "x" + std::to_string(w) +
          " is not a " + std::to_string(grid) + "x" + std::to_string(grid) +
          " grid of " + std::to_string(patch) + "-pixel patches");
  }
};

// Per-tail parameters: the patch projection and this tail's positional
// table. These are never shared across tails; their N differs.
template <typename T>
struct TailParams {
  Tensor<T> proj;  // (p*p*c) x d
  Tensor<T> bias;  // d
  Tensor<T> pos;   // (N+1) x d

  void collect_params(size_t tail_index,
                      std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    const std::string p = "tail" + std::to_string(tail_index) + ".";
    out.emplace_back(p + "proj", &proj);
    out.emplace_back(p + "bias", &bias);
    out.emplace_back(p + "pos", &pos);
  }
};

template <typename T>
TailParams<T> make_tail_params(const TailConfig& cfg, size_t dim, size_t channels,
                               Rng& rng) {
  TailParams<T> p;
  // Fan-in-scaled init for the patch projection. A fixed 0.02 std leaves the
  // small-patch tails with tokens an order of magnitude smaller than the
  // coarse tail, and the pre-norm 1/sigma gradient blow-up then makes them
  // untrainable at this scale.
  const size_t fan_in = cfg.patch * cfg.patch * channels;
  p.proj = detail::trunc_normal_tensor<T>({fan_in, dim}, rng,
                                          1.0 / std::sqrt(double(fan_in)));
  p.bias = Tensor<T>({dim});
  p.pos = detail::trunc_normal_tensor<T>({cfg.tokens() + 1, dim}, rng);
  p.proj.set_requires_grad(true);
  p.bias.set_requires_grad(true);
  p.pos.set_requires_grad(true);
  return p;
}

// Splits an [H x W x C] image into non-overlapping p x p patches, flattened
// row-major (patch rows, then patch columns, channels innermost) into an
// [N x p*p*C] matrix. Raw pixels never need gradients, so this runs off-tape.
template <typename T>
Tensor<T> extract_patches(const Tensor<T>& img, size_t p) {
  if (img.rank() != 3)
    throw std::invalid_argument("extract_patches: image must be [H x W x C], got " +
                                shape_str(img.shape()));
  const size_t h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
  if (p == 0 || h % p != 0 || w % p != 0)
    throw std::invalid_argument("extract_patches: image " + std::to_string(h) +
                                "x" + std::to_string(w) +
                                " not divisible by patch size " + std::to_string(p));
  const size_t gh = h / p, gw = w / p;
  Tensor<T> out({gh * gw, p * p * c});
  size_t row = 0;
  for (size_t gy = 0; gy < gh; ++gy)
    for (size_t gx = 0; gx < gw; ++gx, ++row) {
      T* dst = out.data() + row * p * p * c;
      for (size_t dy = 0; dy < p; ++dy) {
        const T* src = img.data() + ((gy * p + dy) * w + gx * p) * c;
        std::memcpy(dst + dy * p * c, src, p * c * sizeof(T));
      }
    }
  return out;
}

// Optional resize -> patches -> linear projection to d -> prepend the shared
// class token -> add this tail's positional table.
template <typename T>
TokenSequence<T> tail_forward(const Tensor<T>& img, const TailConfig& cfg,
                              const TailParams<T>& params,
                              const Tensor<T>& class_token) {
  cfg.validate(img.shape()[0], img.shape()[1]);
  Tensor<T> px = img;
  if (cfg.resize_h || cfg.resize_w)
    px = bilinear_resize(img, cfg.resize_h ? cfg.resize_h : img.shape()[0],
                         cfg.resize_w ? cfg.resize_w : img.shape()[1]);
  Tensor<T> patches = extract_patches(px, cfg.patch);
  Tensor<T> tokens = add_rowwise(matmul(patches, params.proj), params.bias);
  Tensor<T> with_cls = concat<T>({class_token, tokens}, 0);
  TokenSequence<T> seq;
  seq.tokens = add(with_cls, params.pos);
  seq.patch_count = cfg.tokens();
  return seq;
}

// The K tails plus the one shared encoder. branch_evals counts encoder
// executions per tail so tests can assert what inference actually ran.
template <typename T>
struct MultiTailViT {
  EncoderParams<T> encoder;
  std::vector<TailConfig> tail_configs;
  std::vector<TailParams<T>> tail_params;
  size_t channels = 3;
  mutable std::vector<uint64_t> branch_evals;

  size_t num_tails() const { return tail_configs.size(); }

  void collect_params(std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    encoder.collect_params(out);
    for (size_t i = 0; i < tail_params.size(); ++i)
      tail_params[i].collect_params(i, out);
  }

  Tensor<T> run_branch(const Tensor<T>& img, size_t i) const {
    if (branch_evals.size() != tail_configs.size())
      branch_evals.assign(tail_configs.size(), 0);
    ++branch_evals[i];
    TokenSequence<T> seq =
        tail_forward(img, tail_configs[i], tail_params[i], encoder.class_token);
    return encode_and_classify(seq, encoder);
  }
};

template <typename T>
MultiTailViT<T> make_multi_tail_vit(const EncoderConfig& enc_cfg,
                                    const std::vector<TailConfig>& tails,
                                    size_t channels, Rng& rng) {
  MultiTailViT<T> m;
  m.encoder = make_encoder_params<T>(enc_cfg, rng);
  m.tail_configs = tails;
  m.channels = channels;
  for (const auto& t : tails)
    m.tail_params.push_back(make_tail_params<T>(t, enc_cfg.dim, channels, rng));
  m.branch_evals.assign(tails.size(), 0);
  return m;
}

enum class RoutingMode {
  kTrain,  // evaluate every branch, combine with straight-through weights
  kInfer   // evaluate only the selected branch
};

// Multi-tail forward (Eq. 7 semantics). Training mode returns
// sum_i D_i f_i(img) with the straight-through decision; inference mode runs
// only the selected branch and is bit-identical to the training-mode value
// for the same hard decision.
template <typename T>
Tensor<T> multi_tail_forward(const Tensor<T>& img, const Decision<T>& decision,
                             const MultiTailViT<T>& model, RoutingMode mode) {
  if (decision.hard.size() != model.num_tails())
    throw std::invalid_argument("multi_tail_forward: decision of size " +
                                std::to_string(decision.hard.size()) + " for " +
                                std::to_string(model.num_tails()) + " tails");
  if (!decision.hard_is_one_hot())
    throw std::logic_error("multi_tail_forward: hard decision is not one-hot");
  if (mode == RoutingMode::kInfer) return model.run_branch(img, decision.index());
  std::vector<Tensor<T>> logits;
  logits.reserve(model.num_tails());
  for (size_t i = 0; i < model.num_tails(); ++i)
    logits.push_back(model.run_branch(img, i));
  return weighted_prediction(decision, logits);
}

}  // namespace mtvit
