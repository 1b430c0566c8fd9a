#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtvit/tails.hpp"
#include "mtvit/vit.hpp"

namespace mtvit {

// Analytic cost accounting. Convention: one multiply-accumulate counts as
// 2 FLOPs. Encoder formulas are the dominant-term model (MSA + MLP only,
// no layer norms, biases or head) and take the encoder sequence length,
// i.e. patch tokens plus the class token.

inline uint64_t msa_flops(uint64_t n, uint64_t d) {
  if (n < 1 || d < 1) throw std::invalid_argument("msa_flops: N, d must be >= 1");
  return 4 * n * d * d + 2 * n * n * d;
}

inline uint64_t mlp_flops(uint64_t n, uint64_t d, uint64_t r) {
  if (n < 1 || d < 1 || r < 1)
    throw std::invalid_argument("mlp_flops: N, d, r must be >= 1");
  return 2 * n * d * d * r;
}

inline uint64_t encoder_flops(uint64_t layers, uint64_t n, uint64_t d, uint64_t r) {
  if (layers < 1) throw std::invalid_argument("encoder_flops: L must be >= 1");
  return layers * (msa_flops(n, d) + mlp_flops(n, d, r));
}

// Token count after one T2T soft split with patch p, overlap s and padding k:
// floor((h+2k-p)/(p-s)+1) * floor((w+2k-p)/(p-s)+1).
inline uint64_t soft_split_tokens(uint64_t h, uint64_t w, uint64_t k, uint64_t p,
                                  uint64_t s) {
  if (p <= s)
    throw std::invalid_argument("soft_split_tokens: need p > s, got p=" +
                                std::to_string(p) + " s=" + std::to_string(s));
  if (h + 2 * k < p || w + 2 * k < p)
    throw std::invalid_argument("soft_split_tokens: padded image smaller than patch");
  const uint64_t per_h = (h + 2 * k - p) / (p - s) + 1;
  const uint64_t per_w = (w + 2 * k - p) / (p - s) + 1;
  return per_h * per_w;
}

// Patch-embedding cost of one tail: N projections of p*p*c pixels into d
// dims, 2 FLOPs per MAC. The resize, when present, is not charged.
inline uint64_t tail_flops(const TailConfig& tail, uint64_t d, uint64_t channels) {
  const uint64_t n = tail.tokens();
  return 2 * n * (uint64_t(tail.patch) * tail.patch * channels) * d;
}

// Dominant-term cost of the small CNN predictor (convs + final linear).
inline uint64_t predictor_flops(uint64_t h, uint64_t w, uint64_t c, uint64_t k) {
  const uint64_t conv1 = 2 * (9 * c) * 8 * (h * w);
  const uint64_t conv2 = 2 * (9 * 8) * 16 * ((h / 2) * (w / 2));
  const uint64_t fc = 2 * ((h / 4) * (w / 4) * 16) * k;
  return conv1 + conv2 + fc;
}

struct FlopsReport {
  std::vector<uint64_t> per_tail_flops;   // f_i, absolute counts
  std::vector<double> normalized_costs;   // c_i = f_i / max_j f_j
  uint64_t predictor = 0;
  std::vector<uint64_t> usage;            // n_i, images routed to tail i
  double overall = 0;                     // usage-weighted mean + predictor
};

inline std::vector<double> normalized_costs(const std::vector<uint64_t>& f) {
  if (f.empty()) throw std::invalid_argument("normalized_costs: no tails");
  uint64_t mx = 0;
  for (uint64_t v : f) mx = std::max(mx, v);
  if (mx == 0) throw std::invalid_argument("normalized_costs: all-zero FLOPs");
  std::vector<double> c(f.size());
  for (size_t i = 0; i < f.size(); ++i)
    c[i] = static_cast<double>(f[i]) / static_cast<double>(mx);
  return c;
}

// Usage-weighted overall cost: (sum_i f_i n_i) / (sum_i n_i) + predictor.
inline FlopsReport overall_flops(const std::vector<uint64_t>& per_tail,
                                 uint64_t predictor,
                                 const std::vector<uint64_t>& usage) {
  if (usage.size() != per_tail.size())
    throw std::invalid_argument("overall_flops: " + std::to_string(usage.size()) +
                                " usage entries for " +
                                std::to_string(per_tail.size()) + " tails");
  FlopsReport r;
  r.per_tail_flops = per_tail;
  r.normalized_costs = normalized_costs(per_tail);
  r.predictor = predictor;
  r.usage = usage;
  uint64_t total = 0;
  double weighted = 0;
  for (size_t i = 0; i < usage.size(); ++i) {
    total += usage[i];
    weighted += static_cast<double>(per_tail[i]) * static_cast<double>(usage[i]);
  }
  if (total == 0) throw std::invalid_argument("overall_flops: zero total usage");
  r.overall = weighted / static_cast<double>(total) + static_cast<double>(predictor);
  return r;
}

// A named model family for the cost model: encoder dims plus the tail set,
// with the predictor charged at a fixed analytic cost.
struct BackboneSpec {
  std::string name;
  EncoderConfig encoder;
  std::vector<TailConfig> tails;
  uint64_t image_h = 224, image_w = 224, channels = 3;
  uint64_t predictor = 0;

  void validate() const {
    encoder.validate();
    size_t prev = 0;
    for (const auto& t : tails) {
      if (t.tokens() <= prev)
        throw std::invalid_argument("backbone spec: tail token counts must be "
                                    "strictly increasing");
      prev = t.tokens();
    }
  }

  // Per-tail branch cost: dominant-term encoder on N+1 tokens plus the
  // patch embedding.
  std::vector<uint64_t> per_tail_flops() const {
    std::vector<uint64_t> f;
    f.reserve(tails.size());
    for (const auto& t : tails)
      f.push_back(encoder_flops(encoder.depth, t.tokens() + 1, encoder.dim,
                                encoder.mlp_ratio) +
                  tail_flops(t, encoder.dim, channels));
    return f;
  }
};

// Paper-scale presets, used only to validate the cost model against the
// published per-tail figures. The 10x10 middle tail requires the 230x230
// resize; MobileNetv3-small is charged as the predictor (0.06 GFLOPs).
inline BackboneSpec deit_preset(const std::string& name) {
  BackboneSpec s;
  s.name = name;
  s.encoder.depth = 12;
  s.encoder.mlp_ratio = 4;
  s.encoder.classes = 1000;
  if (name == "deit-ti") {
    s.encoder.dim = 192;
    s.encoder.heads = 3;
  } else if (name == "deit-s") {
    s.encoder.dim = 384;
    s.encoder.heads = 6;
  } else if (name == "deit-b") {
    s.encoder.dim = 768;
    s.encoder.heads = 12;
  } else {
    throw std::invalid_argument("unknown backbone preset: " + name);
  }
  s.tails = {{.patch = 32, .grid = 7},
             {.patch = 23, .grid = 10, .resize_h = 230, .resize_w = 230},
             {.patch = 16, .grid = 14}};
  s.predictor = 60000000;  // 0.06 G
  s.validate();
  return s;
}

}  // namespace mtvit
