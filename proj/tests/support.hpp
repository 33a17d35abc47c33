#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "esdid/panel_ingest.hpp"

namespace esdid::fixtures {

struct RandomPanelSpec {
  int g_min = 8, g_max = 30;
  int t_min = 3, t_max = 8;
  int d_max = 2;
  bool imbalance = true;
  bool weights = true;
  bool non_absorbing = true;
  bool missing_treatment = true;
};

// Small discrete-treatment panels with random timing, weights and holes.
inline Panel random_panel(std::mt19937_64& rng, const RandomPanelSpec& s = {}) {
  std::uniform_int_distribution<int> gdist(s.g_min, s.g_max), tdist(s.t_min, s.t_max);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  const int G = gdist(rng), T = tdist(rng);
  std::vector<PanelCell> cells;
  for (int g = 0; g < G; ++g) {
    std::vector<double> d(T + 1);
    d[1] = u(rng) < 0.6 ? 0.0 : 1.0;
    const double kind = u(rng);
    if (kind < 0.35) {
      for (int t = 2; t <= T; ++t) d[t] = d[1];
    } else if (kind < 0.75 || !s.non_absorbing) {
      int F = std::uniform_int_distribution<int>(2, T)(rng);
      double to = d[1];
      while (to == d[1]) to = std::uniform_int_distribution<int>(0, s.d_max)(rng);
      for (int t = 2; t <= T; ++t) d[t] = t < F ? d[1] : to;
    } else {
      for (int t = 2; t <= T; ++t)
        d[t] = u(rng) < 0.4 ? static_cast<double>(std::uniform_int_distribution<int>(0, s.d_max)(rng)) : d[t - 1];
    }
    const double fe = nd(rng), slope = 0.3 * nd(rng);
    const double n = s.weights ? std::uniform_int_distribution<int>(1, 4)(rng) * 0.5 : 1.0;
    for (int t = 1; t <= T; ++t) {
      if (s.imbalance && u(rng) < 0.07) continue;
      PanelCell c;
      c.group = std::to_string(g + 1);
      c.period = t;
      c.n = n;
      c.d = d[t];
      c.y = fe + slope * t + 0.5 * d[t] * (1.0 + 0.3 * (g % 3)) + nd(rng);
      if (s.imbalance && u(rng) < 0.05) c.y.reset();
      if (s.missing_treatment && u(rng) < 0.04) c.d.reset();
      cells.push_back(c);
    }
  }
  return build_panel(cells);
}

inline double rel_diff(double a, double b) {
  const double scale = std::max({1.0, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / scale;
}

}  // namespace esdid::fixtures
