#include <gtest/gtest.h>

#include "checks.hpp"

using namespace esdid;

TEST(Properties, InfluenceMeansAndPlaceboSubsets) {
  checks::Verdict subset;
  auto v = checks::influence_identities(11, 25, 1e-10, &subset);
  EXPECT_TRUE(v.ok) << v.detail;
  EXPECT_TRUE(subset.ok) << subset.detail;
}

TEST(Properties, OracleAgreement) {
  auto v = checks::oracle_agreement(12, 40, 1e-10);
  EXPECT_TRUE(v.ok) << v.detail;
}

TEST(Properties, NormalizedStandardErrorScalesWithDose) {
  auto v = checks::normalized_se_identity(13, 30, 1e-14);
  EXPECT_TRUE(v.ok) << v.detail;
}

TEST(Properties, BinaryStaggeredDoseIsHorizon) {
  auto v = checks::staggered_dose_equals_horizon(14, 20);
  EXPECT_TRUE(v.ok) << v.detail;
}

TEST(Properties, SingleSupergroupMatchesBaselineExactly) {
  auto v = checks::degeneracy_is_exact(checks::Degeneracy::single_supergroup, 15, 25);
  EXPECT_TRUE(v.ok) << v.detail;
}

TEST(Properties, PerGroupClustersMatchUnclusteredExactly) {
  auto v = checks::degeneracy_is_exact(checks::Degeneracy::cluster_per_group, 16, 25);
  EXPECT_TRUE(v.ok) << v.detail;
}

TEST(Properties, CommonTrendPlacebosAreZero) {
  auto v = checks::common_trend_placebos_zero(17, 20);
  EXPECT_TRUE(v.ok) << v.detail;
}

TEST(Properties, TimeInvariantControlLeavesEstimatesUnchanged) {
  std::mt19937_64 rng(18);
  int compared = 0;
  for (int rep = 0; rep < 40 && compared < 15; ++rep) {
    Panel p = checks::staggered_panel(rng);
    Options o;
    o.effects = 3;
    o.placebos = 2;
    Results a;
    if (!checks::estimable([&] { a = estimate(p, o); })) continue;
    Panel q = p;
    q.control_names = {"x"};
    for (std::size_t g = 0; g < q.groups.size(); ++g) {
      q.groups[g].x.assign(1, Series(q.T + 1));
      for (int t = 1; t <= q.T; ++t) q.groups[g].x[0][t] = 0.5 * static_cast<double>(g);
    }
    Options oc = o;
    oc.controls = {"x"};
    auto b = estimate(q, oc);
    ++compared;
    for (std::size_t i = 0; i < a.effects.size(); ++i) {
      ASSERT_EQ(a.effects[i].point.has_value(), b.effects[i].point.has_value());
      if (!a.effects[i].point) continue;
      EXPECT_LE(fixtures::rel_diff(*a.effects[i].point, *b.effects[i].point), 1e-12);
      EXPECT_LE(fixtures::rel_diff(a.effects[i].se(), b.effects[i].se()), 1e-10);
    }
  }
  EXPECT_GE(compared, 10);
}

TEST(Properties, SwitcherFiltersPartitionTheSample) {
  std::mt19937_64 rng(19);
  int compared = 0;
  for (int rep = 0; rep < 60 && compared < 20; ++rep) {
    Panel p = fixtures::random_panel(rng);
    Options o, in, out;
    o.effects = in.effects = out.effects = 2;
    in.switchers = SwitcherFilter::in;
    out.switchers = SwitcherFilter::out;
    Results a, b, c;
    if (!checks::estimable([&] {
          a = estimate(p, o);
          b = estimate(p, in);
          c = estimate(p, out);
        }))
      continue;
    ++compared;
    for (std::size_t i = 0; i < a.effects.size() && i < b.effects.size() && i < c.effects.size(); ++i)
      EXPECT_EQ(a.effects[i].switchers, b.effects[i].switchers + c.effects[i].switchers);
  }
  EXPECT_GE(compared, 5);
}

TEST(Properties, PlacebosBeyondEffectsRejected) {
  Options o;
  o.effects = 3;
  o.placebos = 4;
  try {
    validate(o);
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("cannot be larger"), std::string::npos);
  }
}
