#include <gtest/gtest.h>

#include <random>

#include "esdid/estimate.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace esdid;

namespace {

void expect_close(const std::optional<double>& a, const std::optional<double>& b, const char* what, int l) {
  ASSERT_EQ(a.has_value(), b.has_value()) << what << " availability at horizon " << l;
  if (a) {
    EXPECT_LE(fixtures::rel_diff(*a, *b), 1e-10) << what << " at horizon " << l << ": " << *a << " vs " << *b;
  }
}

}  // namespace

TEST(Oracle, RandomPanelsMatchDirectEvaluation) {
  std::mt19937_64 rng(20240611);
  int checked = 0, populated = 0;
  for (int rep = 0; rep < 120; ++rep) {
    Panel p = fixtures::random_panel(rng);
    Options o;
    o.effects = 3;
    o.placebos = 2;
    Results r;
    Prepared pr;
    try {
      pr = prepare(p, o);
      r = estimate_prepared(pr, o);
    } catch (const DesignRestrictionViolation&) {
      continue;
    } catch (const EstimationError&) {
      continue;
    }
    const int L = static_cast<int>(r.effects.size());
    const int P = static_cast<int>(r.placebos.size());
    auto ref = oracle::evaluate(pr.panel, L, P);
    for (int l = 1; l <= L; ++l) {
      expect_close(r.effects[l - 1].point, ref.did[l - 1], "effect", l);
      expect_close(r.normalized[l - 1].point, ref.normalized[l - 1], "normalized", l);
    }
    for (int l = 1; l <= P; ++l) expect_close(r.placebos[l - 1].point, ref.placebo[l - 1], "placebo", l);
    expect_close(r.average->point, ref.average, "average", 0);
    ++checked;
    for (const auto& e : r.placebos) populated += e.point.has_value();
    populated += r.average->point.has_value();
  }
  EXPECT_GT(populated, 60);
  EXPECT_GT(checked, 60);
}
