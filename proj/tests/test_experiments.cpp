#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "follmer_lab/experiments.hpp"
#include "oracle_values.hpp"

namespace flab {
namespace {

TEST(Counterexample, SmallTableTrendsAndSandwich) {
  const std::vector<double> ks{10.0, 100.0, 1000.0};
  const auto rows = counterexample_table(2.0, ks);
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    EXPECT_EQ(r.k, ks[i]);
    EXPECT_DOUBLE_EQ(r.trace, 2.0 - 1.0 / ks[i]);
    EXPECT_LE(r.entropy.value, r.entropy_cap);
    EXPECT_LE(r.entropy.value, 0.5);
    EXPECT_LE(r.dual_lb.value, r.w2sq_exact.value + r.dual_lb.error_bound + r.w2sq_exact.error_bound);
    EXPECT_LE(r.w2sq_exact.value, 2.0 * r.entropy.value);
    EXPECT_LE(r.w1.value * r.w1.value, r.w2sq_exact.value * (1.0 + 1e-9));
    if (i > 0) EXPECT_GT(r.w2sq_exact.value, rows[i - 1].w2sq_exact.value);
  }
  // The deficit rises from k = 10 to k = 100 before it falls.
  EXPECT_GT(rows[1].delta_tal.value, rows[0].delta_tal.value);
  EXPECT_LT(rows[2].delta_tal.value, rows[1].delta_tal.value);
  EXPECT_NEAR(rows[0].entropy.value, ref::ce10_entropy, 1e-10);
  EXPECT_NEAR(rows[0].w2sq_exact.value, ref::ce10_w2sq, 1e-9);
  EXPECT_NEAR(rows[1].entropy.value, ref::ce100_entropy, 1e-10);
  EXPECT_NEAR(rows[1].w2sq_exact.value, ref::ce100_w2sq, 1e-9);
  EXPECT_NEAR(rows[2].entropy.value, ref::ce1000_entropy, 1e-10);
  EXPECT_NEAR(rows[2].w2sq_exact.value, ref::ce1000_w2sq, 1e-9);
}

TEST(Counterexample, RowsDoNotDependOnTableOrder) {
  const auto a = counterexample_table(2.0, {10.0, 100.0});
  const auto b = counterexample_table(2.0, {100.0, 10.0});
  EXPECT_EQ(a[0].w2sq_exact.value, b[1].w2sq_exact.value);
  EXPECT_EQ(a[1].dual_lb.value, b[0].dual_lb.value);
  EXPECT_THROW(counterexample_table(1.0, {10.0}), Error);
}

TEST(Witness, VanishesNearOriginAndStaysBelowQuadraticGrowth) {
  const double k = 1e4;
  const double reach = 12.0 * std::sqrt(k);
  const double r = std::sqrt(k) / std::log(k);
  std::vector<double> grid{-r, r};
  for (int i = -24000; i <= 24000; ++i) grid.push_back(i * (reach / 24000.0));
  std::sort(grid.begin(), grid.end());
  const WitnessValues w = witness_values(k, 2.0, grid);
  EXPECT_TRUE(w.vanishing_ok);
  EXPECT_TRUE(w.growth_ok);
  EXPECT_NEAR(w.outer_radius, 100.0 / std::log(k), 1e-12);
  EXPECT_NEAR(w.inner_radius, ref::inner_radius_1e4, 1e-12);
  // At x = 1 the supremum sits on the jump at y = r, which is a grid point.
  std::size_t i1 = 0;
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (std::abs(grid[i] - 1.0) < std::abs(grid[i1] - 1.0)) i1 = i;
  ASSERT_NEAR(grid[i1], 1.0, 1e-9);
  EXPECT_NEAR(w.qg[i1], ref::qg_1e4_at_1, 1e-10);
  EXPECT_THROW(witness_values(k, 2.0, {-1.0, 1.0}), Error);
}

TEST(Concentration, ExactTailBelowBoundOnFullGrid) {
  std::vector<double> ts;
  for (int i = 0; i <= 100; ++i) ts.push_back(2.0 * i / 100.0);
  const auto rows = concentration_experiment(ts);
  ASSERT_EQ(rows.size(), 101u);
  for (const auto& r : rows) EXPECT_TRUE(r.ok) << r.t;
  EXPECT_NEAR(rows[25].t, 0.5, 1e-15);
  EXPECT_NEAR(rows[25].tail, ref::concentration_tail_05, 1e-6);
  EXPECT_NEAR(rows[25].bound, ref::concentration_bound_05, 1e-6);
  EXPECT_EQ(rows.back().tail, 0.0);
}

}  // namespace
}  // namespace flab
