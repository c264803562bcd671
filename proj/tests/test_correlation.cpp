#include <gtest/gtest.h>

#include <cmath>

#include "support/designs.hpp"
#include "wpgsd/correlation.hpp"
#include "wpgsd/wpgsd.hpp"

using namespace wpgsd;

namespace {

using Table6 = double[6][6];

void expect_lower_triangle(const CorrelationMatrix& R, const Table6& want, double tol) {
  ASSERT_EQ(R.rows(), 6);
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c <= r; ++c) {
      EXPECT_NEAR(R(r, c), want[r][c], tol) << "row " << r << " col " << c;
      EXPECT_DOUBLE_EQ(R(r, c), R(c, r));
    }
  }
}

}  // namespace

TEST(Correlation, StatisticOrdering) {
  EXPECT_EQ(stat_index(2, 1, 3), 5u);
  EXPECT_EQ(stat_label(0, 1), "H1:A2");
}

TEST(Correlation, Example1OverlappingPopulations) {
  const Table6 want = {{1, 0, 0, 0, 0, 0},          {0.76, 1, 0, 0, 0, 0},        {0.67, 0.70, 1, 0, 0, 0},
                       {0.71, 0.54, 0.47, 1, 0, 0}, {0.54, 0.71, 0.49, 0.76, 1, 0}, {0.47, 0.49, 0.71, 0.67, 0.70, 1}};
  const auto R = design_correlation(golden::example1());
  expect_lower_triangle(R, want, 0.005);
  EXPECT_NEAR(R(0, 4), 80.0 / std::sqrt(100.0 * 220.0), 1e-15);
}

TEST(Correlation, Example2SharedControl) {
  const Table6 want = {{1, 0, 0, 0, 0, 0},          {0.54, 1, 0, 0, 0, 0},        {0.53, 0.52, 1, 0, 0, 0},
                       {0.71, 0.38, 0.38, 1, 0, 0}, {0.38, 0.71, 0.37, 0.54, 1, 0}, {0.37, 0.37, 0.70, 0.53, 0.52, 1}};
  const auto R = design_correlation(golden::example2());
  expect_lower_triangle(R, want, 0.005);
  EXPECT_NEAR(R(0, 1), 85.0 / std::sqrt(155.0 * 160.0), 1e-15);
  EXPECT_NEAR(R(0, 4), 85.0 / std::sqrt(155.0 * 320.0), 1e-15);
}

TEST(Correlation, SharedControlHelperMatchesDesign) {
  ArmPopulationCounts ac;
  ac.counts = {{{85, 170}}, {{70, 135}}, {{75, 150}}, {{80, 165}}};
  EXPECT_TRUE(corr_shared_control(ac).isApprox(design_correlation(golden::example2()), 1e-15));
}

TEST(Correlation, SimulationCasesFromPrevalence) {
  const Table6 case10 = {{1, 0, 0, 0, 0, 0},
                         {0.714, 1, 0, 0, 0, 0},
                         {0.837, 0.837, 1, 0, 0, 0},
                         {0.707, 0.505, 0.592, 1, 0, 0},
                         {0.505, 0.707, 0.592, 0.714, 1, 0},
                         {0.592, 0.592, 0.707, 0.837, 0.837, 1}};
  const Table6 case11 = {{1, 0, 0, 0, 0, 0},
                         {0.667, 1, 0, 0, 0, 0},
                         {0.775, 0.775, 1, 0, 0, 0},
                         {0.707, 0.471, 0.548, 1, 0, 0},
                         {0.471, 0.707, 0.548, 0.667, 1, 0},
                         {0.548, 0.548, 0.707, 0.775, 0.775, 1}};
  const Table6 case12 = {{1, 0, 0, 0, 0, 0},
                         {0.250, 1, 0, 0, 0, 0},
                         {0.632, 0.632, 1, 0, 0, 0},
                         {0.707, 0.177, 0.447, 1, 0, 0},
                         {0.177, 0.707, 0.447, 0.250, 1, 0},
                         {0.447, 0.447, 0.707, 0.632, 0.632, 1}};
  const std::vector<double> events = {225, 450};
  expect_lower_triangle(corr_from_overlap(overlapping_population_events({0.2, 0.2, 0.5, 0.1}, events)), case10, 0.0005);
  expect_lower_triangle(corr_from_overlap(overlapping_population_events({0.2, 0.2, 0.4, 0.2}, events)), case11, 0.0005);
  expect_lower_triangle(corr_from_overlap(overlapping_population_events({0.3, 0.3, 0.1, 0.3}, events)), case12, 0.0005);
}

TEST(Correlation, MultiArmMultiPopulation) {
  const auto R = design_correlation(golden::a6());
  ASSERT_EQ(R.rows(), 12);
  const std::size_t m = 6;
  // H1 (low dose, B++) vs H4 (high dose, B++) at the interim share control.
  EXPECT_NEAR(R(stat_index(0, 0, m), stat_index(3, 0, m)), 140.0 / std::sqrt(240.0 * 230.0), 1e-12);
  EXPECT_NEAR(R(stat_index(0, 0, m), stat_index(3, 0, m)), 0.5958, 1e-4);
  EXPECT_NEAR(R(stat_index(0, 0, m), stat_index(0, 1, m)), 0.8702, 1e-4);
  // Same arm, nested populations: B++ is inside B+.
  EXPECT_NEAR(R(stat_index(0, 0, m), stat_index(1, 0, m)), 240.0 / std::sqrt(240.0 * 340.0), 1e-12);
  // Different arm and population: control events in the smaller population.
  EXPECT_NEAR(R(stat_index(0, 0, m), stat_index(5, 0, m)), 140.0 / std::sqrt(240.0 * 510.0), 1e-12);
  EXPECT_GE(min_eigenvalue(R), -1e-10);
}

TEST(Correlation, ReductionsToStandardCases) {
  // One hypothesis over analyses: sqrt(t_k / t_k').
  EventCountMatrix single({{50, 120, 200}});
  const auto R = corr_from_overlap(single);
  EXPECT_NEAR(R(0, 2), std::sqrt(50.0 / 200.0), 1e-15);
  EXPECT_NEAR(R(1, 2), std::sqrt(120.0 / 200.0), 1e-15);
  // Disjoint hypotheses are independent.
  const auto R2 = corr_from_overlap(EventCountMatrix({{40, 80}, {60, 90}}));
  EXPECT_EQ(R2(0, 1), 0.0);
  EXPECT_EQ(R2(0, 3), 0.0);
  // Equal arms sharing one control: the classical Dunnett 1/2.
  ArmPopulationCounts ac;
  ac.counts = {{{100}}, {{100}}, {{100}}};
  EXPECT_NEAR(corr_shared_control(ac)(0, 1), 0.5, 1e-15);
}

TEST(Correlation, PsdRepair) {
  Eigen::MatrixXd R(3, 3);
  R << 1, 0.9, 0.9, 0.9, 1, -0.9, 0.9, -0.9, 1;
  EXPECT_THROW(ensure_psd(R), std::domain_error);
  Eigen::MatrixXd A(2, 2);
  A << 1, 1 + 1e-9, 1 + 1e-9, 1;
  const auto fixed = ensure_psd(A);
  EXPECT_GE(min_eigenvalue(fixed), -1e-12);
  EXPECT_DOUBLE_EQ(fixed(0, 0), 1.0);
}

TEST(Correlation, OverlappingInputChecks) {
  EXPECT_THROW(overlapping_population_events({0.5, 0.5, 0.5, 0.1}, {100}), std::invalid_argument);
  EXPECT_THROW(overlapping_population_events({-0.1, 0.5, 0.5, 0.1}, {100}), std::invalid_argument);
}
