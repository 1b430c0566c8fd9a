#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "mtvit/checkpoint.hpp"
#include "mtvit/config.hpp"
#include "mtvit/dataset.hpp"
#include "mtvit/flops.hpp"
#include "mtvit/objective.hpp"
#include "mtvit/selector.hpp"
#include "mtvit/tails.hpp"

namespace mtvit {

// Backbone + predictor bundle trained by the harness.
template <typename T>
struct MtvitModel {
  MultiTailViT<T> backbone;
  PredictorParams<T> predictor;

  std::vector<std::pair<std::string, Tensor<T>*>> params() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    backbone.collect_params(out);
    predictor.collect_params(out);
    return out;
  }
};

template <typename T>
MtvitModel<T> make_model(const RunConfig& cfg, Rng& rng) {
  cfg.validate();
  MtvitModel<T> m;
  m.backbone = make_multi_tail_vit<T>(cfg.encoder, cfg.tails, cfg.channels, rng);
  m.predictor = make_predictor_params<T>(cfg.image_h, cfg.image_w, cfg.channels,
                                         cfg.tails.size(), rng);
  return m;
}

// Analytic cost spec for the configured desk model.
inline BackboneSpec desk_spec(const RunConfig& cfg) {
  BackboneSpec s;
  s.name = "desk";
  s.encoder = cfg.encoder;
  s.tails = cfg.tails;
  s.image_h = cfg.image_h;
  s.image_w = cfg.image_w;
  s.channels = cfg.channels;
  s.predictor =
      predictor_flops(cfg.image_h, cfg.image_w, cfg.channels, cfg.tails.size());
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

// One deterministic update rule for both phases, with cosine learning-rate
// decay. AdamW is the default: plain SGD with momentum cannot escape the
// initial plateau of the fine-grained tails at desk scale. Decoupled weight
// decay applies to projection matrices only, not to biases, norms,
// positional tables or the class token.
template <typename T>
class Optimizer {
public:
  Optimizer(const std::vector<std::pair<std::string, Tensor<T>*>>& params,
            OptimizerKind kind, double momentum, double weight_decay)
      : kind_(kind), momentum_(momentum), weight_decay_(weight_decay) {
    m_.reserve(params.size());
    for (auto& [name, t] : params) {
      m_.emplace_back(t->size(), T(0));
      if (kind_ == OptimizerKind::kAdamW) v_.emplace_back(t->size(), T(0));
      const bool decays = t->rank() >= 2 && name.find("pos") == std::string::npos &&
                          name.find("class_token") == std::string::npos;
      decay_mask_.push_back(decays);
    }
  }

  void step(const std::vector<std::pair<std::string, Tensor<T>*>>& params,
            double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(steps_));
    for (size_t p = 0; p < params.size(); ++p) {
      Tensor<T>* t = params[p].second;
      Tensor<T> g = t->grad();
      const T wd = decay_mask_[p] ? static_cast<T>(weight_decay_) : T(0);
      const T step_lr = static_cast<T>(lr);
      if (kind_ == OptimizerKind::kSgd) {
        std::vector<T>& vel = m_[p];
        const T mom = static_cast<T>(momentum_);
        for (size_t i = 0; i < t->size(); ++i) {
          vel[i] = mom * vel[i] + (g[i] + wd * (*t)[i]);
          (*t)[i] -= step_lr * vel[i];
        }
      } else {
        std::vector<T>& m = m_[p];
        std::vector<T>& v = v_[p];
        for (size_t i = 0; i < t->size(); ++i) {
          m[i] = T(0.9) * m[i] + T(0.1) * g[i];
          v[i] = T(0.999) * v[i] + T(0.001) * g[i] * g[i];
          const T mhat = m[i] / static_cast<T>(bc1);
          const T vhat = v[i] / static_cast<T>(bc2);
          (*t)[i] -= step_lr * (mhat / (std::sqrt(vhat) + T(1e-8)) + wd * (*t)[i]);
        }
      }
    }
  }

  static void zero_grad(const std::vector<std::pair<std::string, Tensor<T>*>>& params) {
    for (auto& [name, t] : params) t->zero_grad();
  }

private:
  OptimizerKind kind_;
  double momentum_, weight_decay_;
  uint64_t steps_ = 0;
  std::vector<std::vector<T>> m_, v_;
  std::vector<bool> decay_mask_;
};

inline double cosine_lr(double base, size_t epoch, size_t total) {
  return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 *
                                      static_cast<double>(epoch) /
                                      static_cast<double>(total)));
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

struct MetricsRow {
  std::string phase;
  size_t epoch = 0;
  double loss = 0;
  double accuracy = 0;
  std::vector<uint64_t> usage;
  double overall_flops = 0;
  double lambda = 0, alpha = 0, tau = 0;
};

// One CSV per run, fixed header, append-only.
class MetricsWriter {
public:
  MetricsWriter(const std::string& path, size_t num_tails)
      : f_(path, std::ios::trunc), num_tails_(num_tails) {
    if (!f_) throw std::runtime_error("cannot open metrics file: " + path);
    f_ << "phase,epoch,loss,accuracy";
    for (size_t i = 0; i < num_tails_; ++i) f_ << ",n" << i;
    f_ << ",overall_flops,lambda,alpha,tau\n";
    f_.flush();
  }

  void append(const MetricsRow& r) {
    char buf[64];
    f_ << r.phase << "," << r.epoch;
    auto num = [&](double v) {
      std::snprintf(buf, sizeof(buf), "%.8g", v);
      f_ << "," << buf;
    };
    num(r.loss);
    num(r.accuracy);
    for (size_t i = 0; i < num_tails_; ++i)
      f_ << "," << (i < r.usage.size() ? r.usage[i] : 0);
    num(r.overall_flops);
    num(r.lambda);
    num(r.alpha);
    num(r.tau);
    f_ << "\n";
    f_.flush();
  }

private:
  std::ofstream f_;
  size_t num_tails_;
};

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

template <typename T>
struct EvalResult {
  double accuracy = 0;
  std::vector<uint64_t> usage;
  FlopsReport flops;
  double mean_selected_cost = 0;
  size_t count = 0;
};

// Deterministic inference: tail = argmax zeta (no Gumbel noise), only the
// selected branch executes. forced_tail >= 0 bypasses the predictor and
// routes everything to one tail.
template <typename T>
EvalResult<T> evaluate_model(MtvitModel<T>& model, const Dataset& data,
                             const RunConfig& cfg, int forced_tail = -1) {
  const size_t k = model.backbone.num_tails();
  EvalResult<T> r;
  r.usage.assign(k, 0);
  r.count = data.count;
  if (data.count == 0) throw std::invalid_argument("evaluate: empty dataset");
  size_t correct = 0;
  for (size_t i = 0; i < data.count; ++i) {
    Tensor<T> img = data.template image<T>(i);
    size_t tail;
    if (forced_tail >= 0) {
      tail = static_cast<size_t>(forced_tail);
    } else {
      Tensor<T> zeta = predictor_forward(img, model.predictor);
      tail = 0;
      for (size_t j = 1; j < k; ++j)
        if (zeta[j] > zeta[tail]) tail = j;
    }
    Tensor<T> logits = model.backbone.run_branch(img, tail);
    ++r.usage[tail];
    size_t pred = 0;
    for (size_t j = 1; j < cfg.encoder.classes; ++j)
      if (logits.at(0, j) > logits.at(0, pred)) pred = j;
    if (static_cast<int>(pred) == data.label(i)) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.count);

  const BackboneSpec spec = desk_spec(cfg);
  const std::vector<uint64_t> f = spec.per_tail_flops();
  r.flops = overall_flops(f, spec.predictor, r.usage);
  double cost = 0;
  for (size_t i = 0; i < k; ++i)
    cost += r.flops.normalized_costs[i] * static_cast<double>(r.usage[i]);
  r.mean_selected_cost = cost / static_cast<double>(data.count);
  return r;
}

// ---------------------------------------------------------------------------
// training phases
// ---------------------------------------------------------------------------

namespace detail {

inline void shuffled_indices(std::vector<size_t>& idx, size_t n, Rng& rng) {
  idx.resize(n);
  std::iota(idx.begin(), idx.end(), size_t(0));
  for (size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
}

inline void check_finite(double loss, const char* phase, size_t epoch) {
  if (!std::isfinite(loss))
    throw std::runtime_error(std::string(phase) + " diverged: non-finite loss at epoch " +
                             std::to_string(epoch));
}

}  // namespace detail

// Backbone pretraining: every tail is active on every image and the loss is
// the sum of all tails' cross-entropies. The predictor is untouched. Logged
// accuracy is the longest tail's validation accuracy.
template <typename T>
void pretrain(const RunConfig& cfg, MtvitModel<T>& model, const Dataset& train,
              const Dataset& val, MetricsWriter* metrics) {
  auto backbone_params = [&] {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    model.backbone.collect_params(out);
    return out;
  }();
  Optimizer<T> opt(backbone_params, cfg.optimizer, cfg.momentum, cfg.weight_decay);
  Rng run_rng(cfg.seed);
  const size_t k = model.backbone.num_tails();
  const size_t longest = k - 1;

  for (size_t epoch = 0; epoch < cfg.epochs_pretrain; ++epoch) {
    Rng epoch_rng = run_rng.split(epoch);
    std::vector<size_t> order;
    detail::shuffled_indices(order, train.count, epoch_rng);
    const double lr = cosine_lr(cfg.lr_pretrain, epoch, cfg.epochs_pretrain);

    double epoch_loss = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t bsz = std::min(cfg.batch_size, order.size() - start);
      Optimizer<T>::zero_grad(backbone_params);
      for (size_t b = 0; b < bsz; ++b) {
        const size_t i = order[start + b];
        Tensor<T> img = train.image<T>(i);
        Tape<T> tape;
        TapeScope<T> scope(tape);
        std::vector<Tensor<T>> logits;
        logits.reserve(k);
        for (size_t tail = 0; tail < k; ++tail)
          logits.push_back(model.backbone.run_branch(img, tail));
        Tensor<T> loss = pretrain_loss(logits, train.label(i));
        epoch_loss += static_cast<double>(loss.item());
        backward(mul_scalar(loss, static_cast<T>(1.0 / bsz)));
      }
      opt.step(backbone_params, lr);
    }
    epoch_loss /= static_cast<double>(train.count);
    detail::check_finite(epoch_loss, "pretrain", epoch);

    if (metrics) {
      EvalResult<T> ev =
          evaluate_model(model, val, cfg, static_cast<int>(longest));
      MetricsRow row{"pretrain", epoch,      epoch_loss, ev.accuracy,
                     ev.usage,   ev.flops.overall,  0.0,        0.0,
                     0.0};
      metrics->append(row);
    }
  }
}

// Joint finetuning of backbone and predictor with per-image Gumbel sampling,
// the straight-through estimator and the FLOPs regularizer.
template <typename T>
void finetune(const RunConfig& cfg, MtvitModel<T>& model, const Dataset& train,
              const Dataset& val, MetricsWriter* metrics) {
  auto params = model.params();
  Optimizer<T> opt(params, cfg.optimizer, cfg.momentum, cfg.weight_decay);
  Rng run_rng(cfg.seed + 0x517cc1b727220a95ull);
  const size_t k = model.backbone.num_tails();
  const TemperatureSchedule sched = cfg.temperature_schedule();
  const BackboneSpec spec = desk_spec(cfg);
  const std::vector<double> costs = normalized_costs(spec.per_tail_flops());

  for (size_t epoch = 0; epoch < cfg.epochs_finetune; ++epoch) {
    Rng epoch_rng = run_rng.split(epoch);
    Rng gumbel_rng = epoch_rng.split(0xC0FFEE);
    std::vector<size_t> order;
    detail::shuffled_indices(order, train.count, epoch_rng);
    const double lr = cosine_lr(cfg.lr_finetune, epoch, cfg.epochs_finetune);
    const double tau = sched.at(epoch);

    double epoch_loss = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t bsz = std::min(cfg.batch_size, order.size() - start);
      Optimizer<T>::zero_grad(params);
      for (size_t b = 0; b < bsz; ++b) {
        const size_t i = order[start + b];
        Tensor<T> img = train.image<T>(i);
        Tape<T> tape;
        TapeScope<T> scope(tape);
        Tensor<T> zeta = predictor_forward(img, model.predictor);
        Decision<T> decision = gumbel_sample(zeta, tau, gumbel_rng);
        Tensor<T> logits =
            multi_tail_forward(img, decision, model.backbone, RoutingMode::kTrain);
        Tensor<T> cls = classification_loss(logits, train.label(i));
        Tensor<T> reg = flops_regularization(decision, costs, cfg.alpha);
        Tensor<T> loss = total_loss(cls, reg, cfg.lambda);
        epoch_loss += static_cast<double>(loss.item());
        backward(mul_scalar(loss, static_cast<T>(1.0 / bsz)));
      }
      opt.step(params, lr);
    }
    epoch_loss /= static_cast<double>(train.count);
    detail::check_finite(epoch_loss, "finetune", epoch);

    if (metrics) {
      EvalResult<T> ev = evaluate_model(model, val, cfg);
      MetricsRow row{"finetune", epoch,        epoch_loss, ev.accuracy,
                     ev.usage,   ev.flops.overall, cfg.lambda, cfg.alpha,
                     tau};
      metrics->append(row);
    }
  }
}

// ---------------------------------------------------------------------------
// hyperparameter sweep
// ---------------------------------------------------------------------------

struct CurvePoint {
  double lambda = 0, alpha = 0;
  double accuracy = 0;
  double overall_flops = 0;
  double mean_selected_cost = 0;
};

// For each (lambda, alpha): finetune from the pretrained checkpoint, then
// evaluate with dynamic routing. Rows come back in sweep order.
template <typename T>
std::vector<CurvePoint> curve_sweep(const RunConfig& base_cfg,
                                    const std::string& pretrain_ckpt,
                                    const std::vector<double>& lambdas,
                                    const std::vector<double>& alphas,
                                    const Dataset& train, const Dataset& val) {
  std::vector<CurvePoint> points;
  for (double lambda : lambdas)
    for (double alpha : alphas) {
      RunConfig cfg = base_cfg;
      cfg.lambda = lambda;
      cfg.alpha = alpha;
      Rng rng(cfg.seed);
      MtvitModel<T> model = make_model<T>(cfg, rng);
      auto params = model.params();
      load_checkpoint(pretrain_ckpt, params);
      finetune(cfg, model, train, val, nullptr);
      EvalResult<T> ev = evaluate_model(model, val, cfg);
      points.push_back({lambda, alpha, ev.accuracy, ev.flops.overall,
                        ev.mean_selected_cost});
    }
  return points;
}

inline void write_curve_csv(const std::vector<CurvePoint>& points,
                            const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "lambda,alpha,accuracy,overall_flops\n";
  char buf[64];
  for (const auto& p : points) {
    auto num = [&](double v) {
      std::snprintf(buf, sizeof(buf), "%.8g", v);
      return std::string(buf);
    };
    f << num(p.lambda) << "," << num(p.alpha) << "," << num(p.accuracy) << ","
      << num(p.overall_flops) << "\n";
  }
}

// Larger lambda at fixed alpha must not increase overall FLOPs.
inline bool curve_trend_holds(const std::vector<CurvePoint>& points,
                              double tolerance = 1e-9) {
  for (const auto& a : points)
    for (const auto& b : points)
      if (a.alpha == b.alpha && a.lambda < b.lambda &&
          b.overall_flops > a.overall_flops + tolerance)
        return false;
  return true;
}

}  // namespace mtvit
