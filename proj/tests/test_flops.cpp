#include <gtest/gtest.h>

#include "mtvit/config.hpp"
#include "mtvit/flops.hpp"
#include "mtvit/harness.hpp"
#include "mtvit/rng.hpp"

using namespace mtvit;

TEST(MsaFlops, ExactValues) {
  EXPECT_EQ(msa_flops(1, 1), 6u);
  EXPECT_EQ(msa_flops(197, 384), 146000640u);
  EXPECT_THROW(msa_flops(0, 4), std::invalid_argument);
}

TEST(MsaFlops, QuadraticInDimWhenDenseTermDominates) {
  const double ratio = static_cast<double>(msa_flops(197, 768)) /
                       static_cast<double>(msa_flops(197, 384));
  EXPECT_GE(ratio, 3.5);
  EXPECT_LE(ratio, 4.0);
}

TEST(MlpFlops, ExactValuesAndLinearity) {
  EXPECT_EQ(mlp_flops(1, 1, 1), 2u);
  EXPECT_EQ(mlp_flops(197, 384, 4), 232390656u);
  EXPECT_EQ(mlp_flops(394, 384, 4), 2 * mlp_flops(197, 384, 4));
}

TEST(EncoderFlops, SpecPinnedValues) {
  EXPECT_EQ(encoder_flops(12, 197, 384, 4), 4540695552u);
  EXPECT_EQ(encoder_flops(12, 197, 192, 4), 1224589824u);
  EXPECT_EQ(encoder_flops(12, 50, 384, 4), 1084723200u);
}

// Dominant-term model against the published long-tail figures: DeiT-Ti 1.25G,
// DeiT-S 4.6G, DeiT-B 17.6G at N=197, r=4, L=12, all within 10%.
TEST(EncoderFlops, ReproducesPublishedLongTailRows) {
  const struct {
    uint64_t dim;
    double published;
  } rows[] = {{192, 1.25e9}, {384, 4.6e9}, {768, 17.6e9}};
  for (const auto& row : rows) {
    const double got = static_cast<double>(encoder_flops(12, 197, row.dim, 4));
    EXPECT_LT(std::abs(got - row.published) / row.published, 0.10)
        << "d=" << row.dim;
  }
}

TEST(SoftSplitTokens, SingleWindowAndPlainGrid) {
  EXPECT_EQ(soft_split_tokens(7, 7, 0, 7, 0), 1u);
  EXPECT_EQ(soft_split_tokens(224, 224, 0, 16, 0), 196u);
}

// The T2T long-tail chain: 224 -> 56 -> 28 -> 14 per side with p=[7,3,3],
// s=[3,1,1], k=[2,1,1].
TEST(SoftSplitTokens, LongTailChain) {
  EXPECT_EQ(soft_split_tokens(224, 224, 2, 7, 3), 56u * 56u);
  EXPECT_EQ(soft_split_tokens(56, 56, 1, 3, 1), 28u * 28u);
  EXPECT_EQ(soft_split_tokens(28, 28, 1, 3, 1), 14u * 14u);
}

TEST(SoftSplitTokens, PreconditionViolations) {
  EXPECT_THROW(soft_split_tokens(224, 224, 0, 3, 3), std::invalid_argument);
  EXPECT_THROW(soft_split_tokens(224, 224, 0, 3, 5), std::invalid_argument);
  EXPECT_THROW(soft_split_tokens(4, 4, 0, 16, 0), std::invalid_argument);
}

TEST(TailFlops, ValuesAndLinearity) {
  EXPECT_EQ(tail_flops({.patch = 1, .grid = 1}, 1, 1), 2u);
  // DeiT-S long tail embedding: 2 * 196 * 768 * 384.
  const uint64_t lt = tail_flops({.patch = 16, .grid = 14}, 384, 3);
  EXPECT_EQ(lt, 115605504u);
  EXPECT_LT(static_cast<double>(lt) /
                static_cast<double>(encoder_flops(12, 197, 384, 4)),
            0.03);
  const uint64_t half = tail_flops({.patch = 16, .grid = 7}, 384, 3);
  EXPECT_EQ(lt, 4 * half);  // N scales with grid^2
}

TEST(OverallFlops, SingleTailDegenerate) {
  FlopsReport r = overall_flops({1140000000, 2300000000, 4600000000},
                                60000000, {300, 0, 0});
  EXPECT_NEAR(r.overall, 1.20e9, 1e3);
}

TEST(OverallFlops, UniformUsage) {
  FlopsReport r = overall_flops({1140000000, 2300000000, 4600000000},
                                60000000, {100, 100, 100});
  EXPECT_NEAR(r.overall, 2.74e9, 1e3);
}

TEST(OverallFlops, NormalizedCosts) {
  FlopsReport r = overall_flops({1140000000, 2300000000, 4600000000},
                                60000000, {1, 1, 1});
  EXPECT_NEAR(r.normalized_costs[0], 0.2478, 1e-4);
  EXPECT_NEAR(r.normalized_costs[1], 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(r.normalized_costs[2], 1.0);
}

TEST(OverallFlops, ZeroUsageIsError) {
  EXPECT_THROW(overall_flops({10, 20}, 1, {0, 0}), std::invalid_argument);
  EXPECT_THROW(overall_flops({10, 20}, 1, {5}), std::invalid_argument);
}

// Bounded by the cheapest/most expensive branch plus predictor, for any
// usage mix.
TEST(OverallFlops, BoundedByExtremeBranches) {
  Rng rng(5);
  const std::vector<uint64_t> f = {1140000000, 2300000000, 4600000000};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<uint64_t> usage = {rng.uniform_index(1000), rng.uniform_index(1000),
                                   rng.uniform_index(1000)};
    if (usage[0] + usage[1] + usage[2] == 0) usage[0] = 1;
    FlopsReport r = overall_flops(f, 60000000, usage);
    EXPECT_GE(r.overall, 1.14e9 + 0.06e9 - 1.0);
    EXPECT_LE(r.overall, 4.6e9 + 0.06e9 + 1.0);
  }
}

TEST(PredictorFlops, SmallCnnFormula) {
  // conv1 2*27*8*1024 + conv2 2*72*16*256 + fc 2*1024*3
  EXPECT_EQ(predictor_flops(32, 32, 3, 3), 442368u + 589824u + 6144u);
}

TEST(BackboneSpec, PresetsValidateAndOrderTails) {
  for (const char* name : {"deit-ti", "deit-s", "deit-b"}) {
    BackboneSpec s = deit_preset(name);
    EXPECT_EQ(s.tails.size(), 3u);
    EXPECT_EQ(s.tails[0].tokens(), 49u);
    EXPECT_EQ(s.tails[1].tokens(), 100u);
    EXPECT_EQ(s.tails[2].tokens(), 196u);
    EXPECT_EQ(s.predictor, 60000000u);
  }
  EXPECT_THROW(deit_preset("deit-xxl"), std::invalid_argument);
}

TEST(BackboneSpec, DeskSpecFromRunConfig) {
  RunConfig cfg;
  BackboneSpec s = desk_spec(cfg);
  const std::vector<uint64_t> f = s.per_tail_flops();
  ASSERT_EQ(f.size(), 3u);
  // Sequence lengths 5, 17, 65 (class token included).
  EXPECT_EQ(f[0], encoder_flops(4, 5, 64, 4) + tail_flops(cfg.tails[0], 64, 3));
  EXPECT_EQ(f[1], encoder_flops(4, 17, 64, 4) + tail_flops(cfg.tails[1], 64, 3));
  EXPECT_EQ(f[2], encoder_flops(4, 65, 64, 4) + tail_flops(cfg.tails[2], 64, 3));
  EXPECT_LT(f[0], f[1]);
  EXPECT_LT(f[1], f[2]);
  const std::vector<double> c = normalized_costs(f);
  EXPECT_DOUBLE_EQ(c[2], 1.0);
}
