#include <gtest/gtest.h>

#include <random>

#include "esdid/estimate.hpp"
#include "support.hpp"

using namespace esdid;

namespace {

Panel with_controls(Panel p, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  p.control_names = {"x1", "x2"};
  for (auto& g : p.groups) {
    g.x.assign(2, Series(p.T + 1));
    const double a = nd(rng);
    for (int t = 1; t <= p.T; ++t) {
      g.x[0][t] = a + 0.5 * t + nd(rng);
      g.x[1][t] = nd(rng);
      if (g.y[t]) *g.y[t] += 0.7 * *g.x[0][t] - 0.4 * *g.x[1][t];
    }
  }
  return p;
}

void check_identities(const Results& r) {
  for (std::size_t i = 0; i < r.effects.size(); ++i) {
    const auto& e = r.effects[i];
    if (!e.point) continue;
    const auto* col = r.influence.find("effect_" + std::to_string(i + 1));
    ASSERT_NE(col, nullptr);
    EXPECT_LE(fixtures::rel_diff(influence_mean(col->u), *e.point), 1e-10) << "effect " << i + 1;
    const auto& n = r.normalized[i];
    if (n.point) {
      const auto* nc = r.influence.find("normalized_" + std::to_string(i + 1));
      ASSERT_NE(nc, nullptr);
      EXPECT_LE(fixtures::rel_diff(influence_mean(nc->u), *n.point), 1e-10) << "normalized " << i + 1;
    }
  }
  for (std::size_t i = 0; i < r.placebos.size(); ++i) {
    const auto& e = r.placebos[i];
    if (!e.point) continue;
    const auto* col = r.influence.find("placebo_" + std::to_string(i + 1));
    ASSERT_NE(col, nullptr);
    EXPECT_LE(fixtures::rel_diff(influence_mean(col->u), *e.point), 1e-10) << "placebo " << i + 1;
  }
  if (r.average && r.average->point) {
    const auto* col = r.influence.find("average");
    ASSERT_NE(col, nullptr);
    EXPECT_LE(fixtures::rel_diff(influence_mean(col->u), *r.average->point), 1e-10) << "average";
  }
}

template <class Mutate>
int run_random(std::uint64_t seed, int reps, Options o, Mutate mutate) {
  std::mt19937_64 rng(seed);
  int ok = 0;
  for (int rep = 0; rep < reps; ++rep) {
    Panel p = mutate(fixtures::random_panel(rng), rng);
    try {
      auto r = estimate(p, o);
      check_identities(r);
      for (const auto& e : r.effects)
        if (e.point) {
          EXPECT_TRUE(std::isfinite(e.variance));
          EXPECT_GE(e.variance, 0.0);
        }
      ++ok;
    } catch (const DesignRestrictionViolation&) {
    } catch (const EstimationError&) {
    }
  }
  return ok;
}

}  // namespace

TEST(Influence, MeansReproduceEstimatesBaseline) {
  Options o;
  o.effects = 3;
  o.placebos = 2;
  EXPECT_GT(run_random(11, 60, o, [](Panel p, std::mt19937_64&) { return p; }), 30);
}

TEST(Influence, MeansReproduceEstimatesWithControls) {
  Options o;
  o.effects = 3;
  o.placebos = 2;
  o.controls = {"x1", "x2"};
  EXPECT_GT(run_random(12, 60, o, with_controls), 30);
}

TEST(Influence, MeansReproduceEstimatesWithSupergroupsAndClusters) {
  Options o;
  o.effects = 2;
  o.placebos = 1;
  o.trends_nonparam = true;
  o.cluster = true;
  auto tag = [](Panel p, std::mt19937_64&) {
    for (std::size_t g = 0; g < p.groups.size(); ++g) {
      p.groups[g].supergroup = std::to_string(g % 2);
      p.groups[g].cluster = std::to_string(g / 3);
    }
    return p;
  };
  EXPECT_GT(run_random(13, 60, o, tag), 20);
}

TEST(Influence, MeansReproduceEstimatesGranularDemeaning) {
  Options o;
  o.effects = 3;
  o.placebos = 1;
  o.more_granular_demeaning = true;
  EXPECT_GT(run_random(14, 40, o, [](Panel p, std::mt19937_64&) { return p; }), 20);
}

TEST(Influence, SwitcherFiltersAndSameSwitchers) {
  for (auto f : {SwitcherFilter::in, SwitcherFilter::out}) {
    Options o;
    o.effects = 2;
    o.placebos = 1;
    o.switchers = f;
    o.same_switchers = true;
    run_random(15, 40, o, [](Panel p, std::mt19937_64&) { return p; });
  }
}

TEST(Influence, ClusterCovarianceDiagonalMatchesVariance) {
  std::mt19937_64 rng(21);
  Options o;
  o.effects = 3;
  for (int rep = 0; rep < 20; ++rep) {
    try {
      auto pr = prepare(fixtures::random_panel(rng), o);
      auto r = estimate_prepared(pr, o);
      std::vector<const std::vector<double>*> cols;
      for (std::size_t i = 0; i < r.effects.size(); ++i)
        cols.push_back(&r.influence.find("effect_" + std::to_string(i + 1))->var);
      auto V = cluster_covariance(pr.design, cols);
      for (std::size_t i = 0; i < r.effects.size(); ++i)
        if (r.effects[i].point) {
          EXPECT_NEAR(V(i, i), r.effects[i].variance, 1e-12 * (1 + r.effects[i].variance));
        }
    } catch (const DesignRestrictionViolation&) {
    } catch (const EstimationError&) {
    }
  }
}
