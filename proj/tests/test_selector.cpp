#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "grad_check.hpp"
#include "mtvit/rng.hpp"
#include "mtvit/selector.hpp"

using namespace mtvit;

TEST(Predictor, OutputIsADistribution) {
  Rng rng(1);
  PredictorParams<float> p = make_predictor_params<float>(32, 32, 3, 3, rng);
  Tensor<float> img({32, 32, 3});
  for (size_t i = 0; i < img.size(); ++i)
    img[i] = static_cast<float>(rng.uniform(0, 1));
  Tensor<float> zeta = predictor_forward(img, p);
  ASSERT_EQ(zeta.shape(), (Shape{3}));
  float s = 0;
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_GT(zeta[i], 0.0f);
    EXPECT_LT(zeta[i], 1.0f);
    s += zeta[i];
  }
  EXPECT_NEAR(s, 1.0f, 1e-6f);
}

TEST(Predictor, ZeroWeightsGiveUniform) {
  Rng rng(2);
  PredictorParams<float> p = make_predictor_params<float>(32, 32, 3, 4, rng);
  p.w1 = Tensor<float>({9 * 3, 8});
  p.w2 = Tensor<float>({9 * 8, 16});
  p.w_fc = Tensor<float>({8 * 8 * 16, 4});
  Tensor<float> img({32, 32, 3});
  for (size_t i = 0; i < img.size(); ++i)
    img[i] = static_cast<float>(rng.uniform(0, 1));
  Tensor<float> zeta = predictor_forward(img, p);
  for (size_t i = 0; i < 4; ++i) EXPECT_NEAR(zeta[i], 0.25f, 1e-6f);
}

TEST(GumbelNoise, FixedPointAndMonotonicity) {
  EXPECT_NEAR(gumbel_from_uniform(1.0 / std::exp(1.0)), 0.0, 1e-12);
  double prev = gumbel_from_uniform(0.01);
  for (double u : {0.1, 0.3, 0.5, 0.7, 0.9, 0.999}) {
    const double g = gumbel_from_uniform(u);
    EXPECT_GT(g, prev);
    prev = g;
  }
  // Clamping keeps the extremes finite.
  EXPECT_TRUE(std::isfinite(gumbel_from_uniform(0.0)));
  EXPECT_TRUE(std::isfinite(gumbel_from_uniform(1.0)));
}

// Gumbel(0,1) has mean equal to the Euler-Mascheroni constant.
TEST(GumbelNoise, MonteCarloMean) {
  Rng rng(42);
  double acc = 0;
  const size_t n = 1000000;
  for (size_t i = 0; i < n; ++i) acc += gumbel_noise(rng);
  EXPECT_NEAR(acc / n, 0.5772156649, 0.005);
}

// Gumbel-max draws follow Categorical(zeta).
TEST(GumbelSample, UniformZetaFrequencies) {
  Rng rng(7);
  Tensor<double> zeta = Tensor<double>::full({3}, 1.0 / 3.0);
  std::vector<size_t> counts(3, 0);
  const size_t n = 100000;
  for (size_t i = 0; i < n; ++i)
    ++counts[gumbel_sample(zeta, 1.0, rng).index()];
  for (size_t k = 0; k < 3; ++k)
    EXPECT_NEAR(static_cast<double>(counts[k]) / n, 1.0 / 3.0, 0.01);
}

TEST(GumbelSample, SkewedZetaChiSquare) {
  Rng rng(8);
  Tensor<double> zeta({3}, {0.6, 0.3, 0.1});
  std::vector<size_t> counts(3, 0);
  const size_t n = 100000;
  for (size_t i = 0; i < n; ++i)
    ++counts[gumbel_sample(zeta, 1.0, rng).index()];
  double chi2 = 0;
  for (size_t k = 0; k < 3; ++k) {
    const double expect = zeta[k] * n;
    const double diff = counts[k] - expect;
    chi2 += diff * diff / expect;
  }
  EXPECT_LT(chi2, 9.21034);  // 0.99 quantile, 2 degrees of freedom
}

TEST(GumbelSample, LowTemperatureApproachesOneHot) {
  Rng rng(9);
  Tensor<double> zeta({3}, {0.5, 0.3, 0.2});
  for (int i = 0; i < 20; ++i) {
    Decision<double> d = gumbel_sample(zeta, 0.01, rng);
    double mx = 0;
    for (size_t k = 0; k < 3; ++k) mx = std::max(mx, d.soft[k]);
    EXPECT_GT(mx, 0.999);
  }
}

TEST(GumbelSample, SoftSumsToOneAndAgreesWithHard) {
  Rng rng(10);
  Tensor<double> zeta({4}, {0.4, 0.3, 0.2, 0.1});
  for (int i = 0; i < 200; ++i) {
    Decision<double> d = gumbel_sample(zeta, 1.7, rng);
    EXPECT_TRUE(d.hard_is_one_hot());
    double s = 0;
    size_t soft_arg = 0;
    for (size_t k = 0; k < 4; ++k) {
      s += d.soft[k];
      if (d.soft[k] > d.soft[soft_arg]) soft_arg = k;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
    EXPECT_EQ(soft_arg, d.index());
  }
}

TEST(GumbelSample, RejectsBadArguments) {
  Rng rng(11);
  Tensor<double> bad({2}, {0.0, 1.0});
  EXPECT_THROW(gumbel_sample(bad, 1.0, rng), std::invalid_argument);
  Tensor<double> ok({2}, {0.5, 0.5});
  EXPECT_THROW(gumbel_sample(ok, 0.0, rng), std::invalid_argument);
}

TEST(GumbelSample, DeterministicSequenceUnderFixedSeed) {
  Tensor<double> zeta({3}, {0.2, 0.5, 0.3});
  auto draw = [&](uint64_t seed) {
    Rng rng(seed);
    std::vector<size_t> seq;
    for (int i = 0; i < 50; ++i) seq.push_back(gumbel_sample(zeta, 1.0, rng).index());
    return seq;
  };
  EXPECT_EQ(draw(1234), draw(1234));
  EXPECT_NE(draw(1234), draw(4321));
}

TEST(StraightThrough, ForwardIsExactlyOneHot) {
  Rng rng(12);
  Tensor<double> zeta({3}, {0.3, 0.4, 0.3});
  Decision<double> d = gumbel_sample(zeta, 2.0, rng);
  Tensor<double> w = straight_through(d);
  for (size_t k = 0; k < 3; ++k) {
    EXPECT_TRUE(w[k] == 0.0 || w[k] == 1.0);
    EXPECT_EQ(w[k], d.hard[k]);
  }
}

// The tape gradient of sum_i w_i a_i w.r.t. the predictor logits equals the
// finite-difference gradient of the soft surrogate sum_i soft_i a_i.
TEST(StraightThrough, GradientEqualsSoftSurrogate) {
  Rng rng(13);
  const size_t k = 3;
  Tensor<double> theta({k}, {0.2, -0.1, 0.4});
  Tensor<double> a({k}, {1.0, -2.0, 0.5});
  std::vector<double> noise = {gumbel_noise(rng), gumbel_noise(rng),
                               gumbel_noise(rng)};
  const double tau = 1.3;

  theta.set_requires_grad(true);
  theta.zero_grad();
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> zeta = softmax(theta, 0);
    Decision<double> d = gumbel_sample_with_noise(zeta, tau, noise);
    backward(sum(mul(straight_through(d), a)));
  }
  Tensor<double> analytic = theta.grad().clone();

  auto soft_surrogate = [&](const Tensor<double>& th) {
    Tensor<double> zeta = softmax(th, 0);
    Decision<double> d = gumbel_sample_with_noise(zeta, tau, noise);
    return sum(mul(d.soft, a)).item();
  };
  const double h = 1e-6;
  for (size_t i = 0; i < k; ++i) {
    Tensor<double> tp = theta.clone(), tm = theta.clone();
    tp[i] += h;
    tm[i] -= h;
    const double numeric = (soft_surrogate(tp) - soft_surrogate(tm)) / (2 * h);
    EXPECT_NEAR(analytic[i], numeric, 1e-6)
        << "theta coord " << i;
  }
}

// As tau grows the relaxation flattens toward uniform mixing.
TEST(StraightThrough, HighTemperatureSoftIsUniform) {
  Rng rng(14);
  Tensor<double> zeta({4}, {0.7, 0.1, 0.1, 0.1});
  Decision<double> d = gumbel_sample(zeta, 1e9, rng);
  for (size_t k = 0; k < 4; ++k) EXPECT_NEAR(d.soft[k], 0.25, 1e-6);
}

TEST(Temperature, LinearScheduleEndpointsAndMidpoint) {
  TemperatureSchedule s{TemperatureSchedule::Mode::kLinear, 5.0, 0.5, 11};
  EXPECT_DOUBLE_EQ(s.at(0), 5.0);
  EXPECT_DOUBLE_EQ(s.at(10), 0.5);
  EXPECT_DOUBLE_EQ(s.at(5), 2.75);
  // Clamped past the end.
  EXPECT_DOUBLE_EQ(s.at(99), 0.5);
}

TEST(Temperature, ConstantMode) {
  TemperatureSchedule s{TemperatureSchedule::Mode::kConstant, 1.5, 0.5, 10};
  for (size_t e : {0, 3, 9}) EXPECT_DOUBLE_EQ(s.at(e), 1.5);
}

// Gradients reach the predictor parameters only through the soft relaxation:
// with the soft tensor detached, nothing propagates.
TEST(StraightThrough, HardAloneCarriesNoGradient) {
  Tensor<double> theta({3}, {0.1, 0.2, 0.3});
  theta.set_requires_grad(true);
  theta.zero_grad();
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> zeta = softmax(theta, 0);
    Decision<double> d = gumbel_sample_with_noise(zeta, 1.0, {0.3, -0.2, 0.1});
    d.soft = d.soft.detach();
    Tensor<double> a({3}, {1.0, 2.0, 3.0});
    Tensor<double> loss = sum(mul(straight_through(d), a));
    // The loss is a pure constant once soft is detached; there is nothing on
    // the tape to differentiate.
    EXPECT_LT(loss.node, 0);
  }
  for (size_t i = 0; i < 3; ++i) EXPECT_EQ(theta.grad()[i], 0.0);
}
