#pragma once

#include <string>
#include <vector>

#include "mtvit/ops.hpp"
#include "mtvit/selector.hpp"
#include "mtvit/tensor.hpp"

namespace mtvit {

// Trade-off coefficient lambda, penalty threshold alpha and the normalized
// per-tail costs c_i = f_i / max_j f_j feeding the FLOPs regularizer.
struct LossConfig {
  double lambda = 0.0;
  double alpha = 1.0;
  std::vector<double> normalized_costs;

  void validate() const {
    if (lambda < 0) throw std::invalid_argument("loss config: lambda must be >= 0");
    if (alpha < 0 || alpha > 1)
      throw std::invalid_argument("loss config: alpha must be in [0,1]");
    if (normalized_costs.empty())
      throw std::invalid_argument("loss config: no normalized costs");
    double mx = 0;
    for (double c : normalized_costs) {
      if (!(c > 0) || c > 1.0 + 1e-12)
        throw std::invalid_argument("loss config: costs must lie in (0,1]");
      mx = std::max(mx, c);
    }
    if (std::abs(mx - 1.0) > 1e-9)
      throw std::invalid_argument("loss config: max normalized cost must be 1");
  }
};

// Weighted multi-tail prediction: sum_i D_i f_i with straight-through D.
// Per-tail logits are [1 x m] rows.
template <typename T>
Tensor<T> weighted_prediction(const Decision<T>& decision,
                              const std::vector<Tensor<T>>& tail_logits) {
  if (tail_logits.size() != decision.hard.size())
    throw std::invalid_argument("weighted_prediction: " +
                                std::to_string(tail_logits.size()) +
                                " logit rows for K=" +
                                std::to_string(decision.hard.size()));
  for (const auto& f : tail_logits)
    if (f.shape() != tail_logits[0].shape())
      throw_shape_mismatch("weighted_prediction", tail_logits[0].shape(), f.shape());
  Tensor<T> weights = straight_through(decision);          // [K]
  Tensor<T> stacked = concat(tail_logits, 0);              // [K x m]
  return matmul(reshape(weights, {size_t(1), weights.size()}), stacked);
}

// Softmax cross-entropy against the label (Eq. 8 semantics).
template <typename T>
Tensor<T> classification_loss(const Tensor<T>& logits, int label) {
  return cross_entropy(logits, std::vector<int>{label});
}

// max(alpha, sum_i D_i c_i) - alpha on the straight-through decision. Zero
// value and zero gradient whenever the selected cost stays at or below alpha.
template <typename T>
Tensor<T> flops_regularization(const Decision<T>& decision,
                               const std::vector<double>& costs, double alpha) {
  if (costs.size() != decision.hard.size())
    throw std::invalid_argument("flops_regularization: " +
                                std::to_string(costs.size()) + " costs for K=" +
                                std::to_string(decision.hard.size()));
  Tensor<T> c({costs.size()});
  for (size_t i = 0; i < costs.size(); ++i) c[i] = static_cast<T>(costs[i]);
  Tensor<T> selected = sum(mul(straight_through(decision), c));
  return add_scalar(clamp_min(selected, static_cast<T>(alpha)),
                    static_cast<T>(-alpha));
}

// L_total = L_cls + lambda * L_f
template <typename T>
Tensor<T> total_loss(const Tensor<T>& cls_loss, const Tensor<T>& flops_loss,
                     double lambda) {
  if (lambda < 0) throw std::invalid_argument("total_loss: lambda must be >= 0");
  return add(cls_loss, mul_scalar(flops_loss, static_cast<T>(lambda)));
}

// Pretraining objective: the sum of every tail's cross-entropy, so all tails
// train on every image.
template <typename T>
Tensor<T> pretrain_loss(const std::vector<Tensor<T>>& tail_logits, int label) {
  if (tail_logits.empty())
    throw std::invalid_argument("pretrain_loss: no tail logits");
  Tensor<T> acc = classification_loss(tail_logits[0], label);
  for (size_t i = 1; i < tail_logits.size(); ++i)
    acc = add(acc, classification_loss(tail_logits[i], label));
  return acc;
}

}  // namespace mtvit
