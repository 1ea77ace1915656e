// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oppo/baselines.hpp"

using namespace oppo;

TEST(Grpo, StandardizedRewards) {
  EXPECT_EQ(grpo_group_advantage(GroupRewards({1, 0, 0, 1})), (std::vector<double>{1, -1, -1, 1}));
  EXPECT_EQ(grpo_group_advantage(GroupRewards({1, 1, 1, 1})), (std::vector<double>{0, 0, 0, 0}));
  const auto a = grpo_group_advantage(GroupRewards({1, 1, 1, 0}));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a[i], 0.5773502691896258, 1e-15);
  EXPECT_NEAR(a[3], -1.7320508075688772, 1e-15);
}

TEST(Grpo, Errors) {
  EXPECT_THROW(grpo_group_advantage(GroupRewards({1})), ConfigError);
  EXPECT_THROW(GroupRewards({1, 2}), ConfigError);
  EXPECT_THROW(GroupRewards({}), ConfigError);
}

TEST(Grpo, SumsToZeroAndStdMatchesBinaryForm) {
  std::mt19937_64 rng(3);
  for (int g = 2; g <= 32; ++g) {
    std::vector<int> r(g);
    for (int& x : r) x = static_cast<int>(rng() & 1u);
    const GroupRewards gr(r);
    EXPECT_NEAR(gr.std, std::sqrt(gr.mean * (1 - gr.mean)), 1e-15);
    if (gr.std > 0) {
      const auto a = grpo_group_advantage(gr);
      EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 0.0, 1e-12);
    }
  }
}

TEST(StateBlind, Passthrough) {
  EXPECT_EQ(state_blind_advantage(std::vector<double>{0.3, -0.2}), (std::vector<double>{0.3, -0.2}));
  EXPECT_TRUE(state_blind_advantage(std::vector<double>{}).empty());
  EXPECT_EQ(state_blind_advantage(std::vector<double>{3.0}), (std::vector<double>{3.0}));
}

TEST(Spectrum, GrpoUniformBroadcast) {
  EstimatorConfig c;
  c.variant = Variant::grpo_uniform;
  const TokenMatrix r{{0.1, 0.4, -0.3}, {0.0, 0.2, 0.2}};
  const GroupAdvantages ga = spectrum_advantage(c, GroupRewards({1, 0}), r);
  EXPECT_EQ(ga.normalized[0], (std::vector<double>{1, 1, 1}));
  EXPECT_EQ(ga.normalized[1], (std::vector<double>{-1, -1, -1}));
}

TEST(Spectrum, NoTrackingAnchorsLogRatios) {
  EstimatorConfig c;
  c.variant = Variant::oppo_no_tracking;
  const TokenMatrix r{{0.5, 0.5}, {0.3, -0.2}};
  const GroupAdvantages ga = spectrum_advantage(c, GroupRewards({1, 0}), r);
  EXPECT_EQ(ga.anchored[1], (std::vector<double>{-0.3, -0.2}));
  EXPECT_EQ(ga.anchored[0], (std::vector<double>{0.5, 0.5}));
}

TEST(Spectrum, AnchoringNoOpWhenSignsAgree) {
  const TokenMatrix r{{0.4, 0.2, 0.1}, {-0.3, -0.1, -0.5}};
  EstimatorConfig full, raw;
  raw.variant = Variant::oppo_no_anchor;
  const GroupAdvantages a = spectrum_advantage(full, GroupRewards({1, 0}), r);
  const GroupAdvantages b = spectrum_advantage(raw, GroupRewards({1, 0}), r);
  EXPECT_EQ(a.anchored, b.anchored);
}

TEST(Spectrum, NoAnchorKeepsPositiveCreditInFailure) {
  const TokenMatrix r{{0.4, 0.2}, {-0.3, 0.8}};
  EstimatorConfig full, raw;
  raw.variant = Variant::oppo_no_anchor;
  const GroupAdvantages a = spectrum_advantage(full, GroupRewards({1, 0}), r);
  const GroupAdvantages b = spectrum_advantage(raw, GroupRewards({1, 0}), r);
  EXPECT_GT(b.anchored[1][1], 0);
  EXPECT_LT(a.anchored[1][1], 0);
}

TEST(Spectrum, NoPriorStartsAtEvenOdds) {
  const TokenMatrix r{{0.1}, {0.1}, {0.1}};
  EstimatorConfig c;
  c.variant = Variant::oppo_no_prior;
  const GroupAdvantages ga = spectrum_advantage(c, GroupRewards({1, 1, 0}), r);
  EXPECT_EQ(ga.logit0, 0.0);
  EXPECT_EQ(ga.traces[0].values[0], 0.5);
  EstimatorConfig full;
  EXPECT_NEAR(spectrum_advantage(full, GroupRewards({1, 1, 0}), r).logit0, std::log(3.0 / 2.0), 1e-15);
}

TEST(Spectrum, ShapesMatchForEveryVariant) {
  const TokenMatrix r{{0.1, -0.4, 3.0}, {0.2}, {-1.0, 0.5}};
  for (Variant v : kAllVariants) {
    EstimatorConfig c;
    c.variant = v;
    const GroupAdvantages ga = spectrum_advantage(c, GroupRewards({1, 0, 1}), r);
    ASSERT_EQ(ga.normalized.size(), 3u) << to_string(v);
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(ga.normalized[i].size(), r[i].size()) << to_string(v);
  }
}

TEST(Spectrum, ZeroVarianceGroupGivesZeroForAnchoredVariants) {
  const TokenMatrix r{{0.4, -0.2}, {0.1, 0.3}};
  for (Variant v : {Variant::grpo_uniform, Variant::anchored_logratio, Variant::oppo_full, Variant::oppo_no_tracking,
                    Variant::oppo_no_clip, Variant::oppo_no_prior}) {
    EstimatorConfig c;
    c.variant = v;
    const GroupAdvantages ga = spectrum_advantage(c, GroupRewards({1, 1}), r);
    for (const auto& row : ga.normalized)
      for (double x : row) EXPECT_EQ(x, 0.0) << to_string(v);
  }
}

TEST(Spectrum, EvidenceRequiredOutsideGrpo) {
  EstimatorConfig c;
  EXPECT_THROW(spectrum_advantage(c, GroupRewards({1, 0}), std::nullopt), ConfigError);
  c.variant = Variant::grpo_uniform;
  EXPECT_NO_THROW(spectrum_advantage(c, GroupRewards({1, 0}), std::nullopt));
}
