#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mtvit/image.hpp"
#include "mtvit/init.hpp"
#include "mtvit/ops.hpp"
#include "mtvit/rng.hpp"
#include "mtvit/tensor.hpp"

namespace mtvit {

// K-way tail choice. `hard` is the one-hot sample used as the forward value,
// `soft` the Gumbel-Softmax relaxation carried for the backward pass. Both
// come from the same noise vector, so their argmax agrees.
template <typename T>
struct Decision {
  std::vector<T> hard;  // exactly one entry is 1
  Tensor<T> soft;       // [K], sums to 1, may be on the tape
  double tau = 1.0;

  size_t index() const {
    for (size_t i = 0; i < hard.size(); ++i)
      if (hard[i] == T(1)) return i;
    throw std::logic_error("decision without a selected entry");
  }

  bool hard_is_one_hot() const {
    size_t ones = 0;
    for (T v : hard) {
      if (v == T(1))
        ++ones;
      else if (v != T(0))
        return false;
    }
    return ones == 1;
  }

  // Forced deterministic choice; soft is the same one-hot constant.
  static Decision one_hot(size_t k, size_t count) {
    Decision d;
    d.hard.assign(count, T(0));
    d.hard[k] = T(1);
    d.soft = Tensor<T>({count});
    d.soft[k] = T(1);
    return d;
  }
};

// Small CNN predictor: conv(3->8, 3x3, stride 1, pad 1) -> avgpool 2 ->
// conv(8->16, 3x3, pad 1) -> avgpool 2 -> flatten -> linear -> K logits.
template <typename T>
struct PredictorParams {
  Tensor<T> w1, b1;      // 9*c x 8
  Tensor<T> w2, b2;      // 9*8 x 16
  Tensor<T> w_fc, b_fc;  // flat x K
  size_t in_h = 0, in_w = 0, in_c = 0, k = 0;

  void collect_params(std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    out.emplace_back("predictor.w1", &w1);
    out.emplace_back("predictor.b1", &b1);
    out.emplace_back("predictor.w2", &w2);
    out.emplace_back("predictor.b2", &b2);
    out.emplace_back("predictor.w_fc", &w_fc);
    out.emplace_back("predictor.b_fc", &b_fc);
  }
};

template <typename T>
PredictorParams<T> make_predictor_params(size_t h, size_t w, size_t c, size_t k,
                                         Rng& rng) {
  if (h % 4 != 0 || w % 4 != 0)
    throw std::invalid_argument("predictor: image extents must be divisible by 4");
  PredictorParams<T> p;
  p.in_h = h;
  p.in_w = w;
  p.in_c = c;
  p.k = k;
  p.w1 = detail::trunc_normal_tensor<T>({9 * c, 8}, rng, 0.1);
  p.b1 = Tensor<T>({8});
  p.w2 = detail::trunc_normal_tensor<T>({9 * 8, 16}, rng, 0.1);
  p.b2 = Tensor<T>({16});
  const size_t flat = (h / 4) * (w / 4) * 16;
  p.w_fc = detail::trunc_normal_tensor<T>({flat, k}, rng, 0.02);
  p.b_fc = Tensor<T>({k});
  std::vector<std::pair<std::string, Tensor<T>*>> all;
  p.collect_params(all);
  for (auto& [name, t] : all) t->set_requires_grad(true);
  return p;
}

// zeta = softmax over K logits; strictly positive, sums to 1.
template <typename T>
Tensor<T> predictor_forward(const Tensor<T>& image, const PredictorParams<T>& p) {
  Tensor<T> h = conv2d(image, p.w1, p.b1, 3, 1, 1);
  h = gelu(avgpool2(h));
  h = conv2d(h, p.w2, p.b2, 3, 1, 1);
  h = gelu(avgpool2(h));
  h = reshape(h, {size_t(1), h.size()});
  Tensor<T> logits = add_rowwise(matmul(h, p.w_fc), p.b_fc);
  return reshape(softmax(logits, 1), {p.k});
}

// Inverse-CDF transform g = -log(-log(u)); u is clamped into [eps, 1-eps],
// eps = 1e-12, to avoid infinities.
inline double gumbel_from_uniform(double u) {
  u = std::min(std::max(u, 1e-12), 1.0 - 1e-12);
  return -std::log(-std::log(u));
}

// One Gumbel(0,1) draw from u ~ U(0,1).
inline double gumbel_noise(Rng& rng) { return gumbel_from_uniform(rng.uniform()); }

// Gumbel-max sample with its softmax relaxation at temperature tau. The hard
// one-hot is argmax_i(g_i + log zeta_i); the soft vector is
// softmax((log zeta + g) / tau) built from the same noise. Ties break to the
// lowest index.
template <typename T>
Decision<T> gumbel_sample_with_noise(const Tensor<T>& zeta, double tau,
                                     const std::vector<double>& noise) {
  const size_t k = zeta.size();
  if (noise.size() != k)
    throw std::invalid_argument("gumbel sample: noise size " +
                                std::to_string(noise.size()) + " for K=" +
                                std::to_string(k));
  if (!(tau > 0)) throw std::invalid_argument("gumbel sample: tau must be > 0");
  for (size_t i = 0; i < k; ++i)
    if (!(zeta[i] > T(0)))
      throw std::invalid_argument("gumbel sample: zeta[" + std::to_string(i) +
                                  "] = " + std::to_string(double(zeta[i])) +
                                  " is not strictly positive");

  Decision<T> d;
  d.tau = tau;
  d.hard.assign(k, T(0));
  size_t best = 0;
  double best_v = -1e300;
  for (size_t i = 0; i < k; ++i) {
    const double v = noise[i] + std::log(static_cast<double>(zeta[i]));
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  d.hard[best] = T(1);

  Tensor<T> g({k});
  for (size_t i = 0; i < k; ++i) g[i] = static_cast<T>(noise[i]);
  Tensor<T> perturbed = mul_scalar(add(log(zeta), g), static_cast<T>(1.0 / tau));
  d.soft = softmax(perturbed, 0);
  return d;
}

template <typename T>
Decision<T> gumbel_sample(const Tensor<T>& zeta, double tau, Rng& rng) {
  std::vector<double> noise(zeta.size());
  for (double& g : noise) g = gumbel_noise(rng);
  return gumbel_sample_with_noise(zeta, tau, noise);
}

// Straight-through routing weights: the forward value is literally the hard
// one-hot; the backward rule passes gradients to the soft relaxation
// unchanged (grad_theta D approximated by grad_theta Y).
template <typename T>
Tensor<T> straight_through(const Decision<T>& d) {
  if (!d.hard_is_one_hot())
    throw std::logic_error("straight_through: hard decision is not one-hot");
  const size_t k = d.hard.size();
  Tensor<T> out({k}, std::vector<T>(d.hard));
  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(d.soft)) {
    const int is = tp->input_node(d.soft);
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      t.add_grad(is, g);
    });
  }
  return out;
}

// Temperature schedule for finetuning. Linear mode anneals tau_start ->
// tau_end across the epoch range; constant mode always returns tau_start.
struct TemperatureSchedule {
  enum class Mode { kLinear, kConstant };
  Mode mode = Mode::kLinear;
  double tau_start = 5.0;
  double tau_end = 0.5;
  size_t total_epochs = 1;

  double at(size_t epoch) const {
    if (mode == Mode::kConstant || total_epochs <= 1) return tau_start;
    const double f = static_cast<double>(std::min(epoch, total_epochs - 1)) /
                     static_cast<double>(total_epochs - 1);
    return tau_start + (tau_end - tau_start) * f;
  }
};

}  // namespace mtvit
