#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "support/quadrature_oracle.hpp"
#include "wpgsd/mvn.hpp"

using namespace wpgsd;

namespace {

Eigen::MatrixXd equicorrelated(int d, double r) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(d, d, r);
  m.diagonal().setOnes();
  return m;
}

// Random correlation matrix from normalized Gram products of random factors.
Eigen::MatrixXd random_correlation(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd A(d, d + 2);
  for (int i = 0; i < A.rows(); ++i)
    for (int j = 0; j < A.cols(); ++j) A(i, j) = z(rng);
  Eigen::MatrixXd S = A * A.transpose();
  Eigen::VectorXd s = S.diagonal().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd R = s.asDiagonal() * S * s.asDiagonal();
  R.diagonal().setOnes();
  return R;
}

// Property tests compare results within their own error estimates, so a
// looser tolerance keeps them quick without weakening the check.
constexpr double kPropertyTol = 1e-5;

}  // namespace

TEST(Bvn, MatchesQuadratureOracle) {
  const double cases[][3] = {{0.0, 0.0, 0.0},   {1.2, -0.4, 0.5},  {-1.0, 2.0, -0.7}, {2.5, 2.8, 0.95},
                             {-2.0, -2.5, 0.99}, {0.3, 0.1, -0.95}, {3.1, 2.9, 0.76},  {1.0, 1.5, 0.3}};
  for (const auto& c : cases) {
    EXPECT_NEAR(bvn_cdf(c[0], c[1], c[2]), oracle::bvn(c[0], c[1], c[2]), 1e-10)
        << c[0] << " " << c[1] << " " << c[2];
  }
}

TEST(Bvn, OrthantClosedForm) {
  for (double r : {-0.9, -0.5, 0.0, 0.3, 0.8, 0.97}) {
    EXPECT_NEAR(bvn_cdf(0.0, 0.0, r), 0.25 + std::asin(r) / (2.0 * std::numbers::pi), 1e-14);
  }
}

TEST(Mvn, UnivariateIsPhi) {
  const auto r = mvn_cdf({1.959964}, Eigen::MatrixXd::Identity(1, 1));
  EXPECT_NEAR(r.probability, 0.975, 1e-8);
}

TEST(Mvn, IndependentPairIsQuarter) {
  const auto r = mvn_cdf({0.0, 0.0}, Eigen::MatrixXd::Identity(2, 2));
  EXPECT_NEAR(r.probability, 0.25, 1e-8);
}

TEST(Mvn, PerfectCorrelationCollapses) {
  const Eigen::MatrixXd R = equicorrelated(2, 1.0);
  EXPECT_NEAR(mvn_cdf({0.7, 1.3}, R).probability, oracle::Phi(0.7), 1e-12);
  EXPECT_NEAR(mvn_cdf({1.3, 0.7}, R).probability, oracle::Phi(0.7), 1e-12);
  // Three identical statistics.
  const Eigen::MatrixXd R3 = equicorrelated(3, 1.0);
  EXPECT_NEAR(mvn_cdf({2.0, 1.1, 1.6}, R3).probability, oracle::Phi(1.1), 1e-12);
}

TEST(Mvn, PerfectAntiCorrelation) {
  Eigen::MatrixXd R(2, 2);
  R << 1, -1, -1, 1;
  // P(X < 1, -X < 0.5) = Phi(1) - Phi(-0.5).
  EXPECT_NEAR(mvn_cdf({1.0, 0.5}, R).probability, oracle::Phi(1.0) - oracle::Phi(-0.5), 1e-12);
  EXPECT_EQ(mvn_cdf({-1.0, 0.5}, R).probability, 0.0);
}

TEST(Mvn, EquicorrelatedOrthant) {
  // Closed form 1/8 + sum asin(r_ij) / (4 pi); equals 1/4 at r = 0.5.
  const auto r = mvn_cdf({0.0, 0.0, 0.0}, equicorrelated(3, 0.5));
  EXPECT_NEAR(r.probability, 0.25, 1e-6);
  const double b[3] = {0.0, 0.0, 0.0};
  const double R[3][3] = {{1, 0.5, 0.5}, {0.5, 1, 0.5}, {0.5, 0.5, 1}};
  EXPECT_NEAR(oracle::tvn(b, R), 0.25, 1e-8);
}

TEST(Mvn, TrivariateAgreesWithProductQuadrature) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> lim(-2.5, 3.0);
  for (int rep = 0; rep < 12; ++rep) {
    const Eigen::MatrixXd Rm = random_correlation(3, rng);
    double R[3][3], b[3];
    for (int i = 0; i < 3; ++i) {
      b[i] = lim(rng);
      for (int j = 0; j < 3; ++j) R[i][j] = Rm(i, j);
    }
    MvnProblem p;
    p.upper = {b[0], b[1], b[2]};
    p.correlation = Rm;
    p.abs_tol = 1e-7;
    const auto got = mvn_cdf(p);
    EXPECT_NEAR(got.probability, oracle::tvn(b, R), 1e-6) << "rep " << rep;
  }
}

TEST(Mvn, BivariateAgreesWithQuadratureOnRandomCases) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lim(-3.0, 3.0), rr(-0.99, 0.99);
  for (int rep = 0; rep < 200; ++rep) {
    const double a = lim(rng), b = lim(rng), r = rr(rng);
    EXPECT_NEAR(bvn_cdf(a, b, r), oracle::bvn(a, b, r), 1e-9);
  }
}

TEST(Mvn, MonotoneInUpperLimits) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lim(-1.0, 3.0), bump(0.0, 0.5);
  for (int d = 2; d <= 6; ++d) {
    for (int rep = 0; rep < 6; ++rep) {
      const Eigen::MatrixXd R = random_correlation(d, rng);
      std::vector<double> b(d);
      for (auto& x : b) x = lim(rng);
      const auto base = mvn_cdf(b, R, kPropertyTol);
      auto raised = b;
      raised[rep % d] += bump(rng);
      const auto up = mvn_cdf(raised, R, kPropertyTol);
      EXPECT_GE(up.probability + 2.0 * (base.error + up.error), base.probability) << "d=" << d;
    }
  }
}

TEST(Mvn, PermutationInvariant) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> lim(-0.5, 2.5);
  for (int d = 3; d <= 6; ++d) {
    const Eigen::MatrixXd R = random_correlation(d, rng);
    std::vector<double> b(d);
    for (auto& x : b) x = lim(rng);
    std::vector<int> perm(d);
    for (int i = 0; i < d; ++i) perm[i] = d - 1 - i;
    Eigen::MatrixXd Rp(d, d);
    std::vector<double> bp(d);
    for (int i = 0; i < d; ++i) {
      bp[i] = b[perm[i]];
      for (int j = 0; j < d; ++j) Rp(i, j) = R(perm[i], perm[j]);
    }
    const auto x = mvn_cdf(b, R, kPropertyTol), y = mvn_cdf(bp, Rp, kPropertyTol);
    EXPECT_NEAR(x.probability, y.probability, 2.0 * (x.error + y.error) + 1e-12) << "d=" << d;
  }
}

TEST(Mvn, MarginalizationDropsInfiniteLimit) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> lim(-0.5, 2.5);
  for (int d = 3; d <= 6; ++d) {
    const Eigen::MatrixXd R = random_correlation(d, rng);
    std::vector<double> b(d);
    for (auto& x : b) x = lim(rng);
    b[1] = kInf;
    const auto full = mvn_cdf(b, R, kPropertyTol);
    std::vector<int> keep;
    for (int i = 0; i < d; ++i)
      if (i != 1) keep.push_back(i);
    Eigen::MatrixXd Rs(d - 1, d - 1);
    std::vector<double> bs(d - 1);
    for (int i = 0; i < d - 1; ++i) {
      bs[i] = b[keep[i]];
      for (int j = 0; j < d - 1; ++j) Rs(i, j) = R(keep[i], keep[j]);
    }
    const auto sub = mvn_cdf(bs, Rs, kPropertyTol);
    EXPECT_NEAR(full.probability, sub.probability, 2.0 * (full.error + sub.error) + 1e-12);
  }
}

TEST(Mvn, DeterministicForFixedSeed) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd R = random_correlation(5, rng);
  const std::vector<double> b{1.0, 0.5, 2.0, 1.5, 0.8};
  const auto x = mvn_cdf(b, R, kPropertyTol), y = mvn_cdf(b, R, kPropertyTol);
  EXPECT_EQ(x.probability, y.probability);
  EXPECT_EQ(x.error, y.error);
}

TEST(Mvn, ErrorEstimateMeetsTolerance) {
  MvnProblem p;
  p.upper = {2.0, 2.1, 2.2, 2.3, 2.4, 2.5, 2.6, 2.7};
  p.correlation = equicorrelated(8, 0.6);
  p.abs_tol = 1e-6;
  const auto r = mvn_cdf(p);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.error, 1e-6);
}

TEST(Mvn, BudgetExhaustionIsFlagged) {
  MvnProblem p;
  p.upper = std::vector<double>(10, 0.5);
  p.correlation = equicorrelated(10, 0.3);
  p.abs_tol = 1e-14;
  p.max_evaluations = 512;
  const auto r = mvn_cdf(p);
  EXPECT_FALSE(r.converged);
  EXPECT_GE(r.probability, 0.0);
  EXPECT_LE(r.probability, 1.0);
}

TEST(Mvn, RectangleWithLowerLimits) {
  // P(-1 < Z1 < 1, -1 < Z2 < 1, Z3 < 0.5) against inclusion-exclusion on
  // upper-only probabilities.
  const Eigen::MatrixXd R = equicorrelated(3, 0.4);
  MvnProblem p;
  p.upper = {1.0, 1.0, 0.5};
  p.lower = {-1.0, -1.0, -kInf};
  p.correlation = R;
  p.abs_tol = 1e-7;
  auto F = [&](double a, double b) { return mvn_cdf(MvnProblem{{a, b, 0.5}, R, {}, 1e-7}).probability; };
  const double expect = F(1, 1) - F(-1, 1) - F(1, -1) + F(-1, -1);
  EXPECT_NEAR(mvn_cdf(p).probability, expect, 5e-7);
}

TEST(Mvn, RejectsInvalidCorrelation) {
  Eigen::MatrixXd bad(3, 3);
  bad << 1, 0.9, -0.9, 0.9, 1, 0.9, -0.9, 0.9, 1;
  EXPECT_THROW(mvn_cdf({0, 0, 0}, bad), std::domain_error);
  Eigen::MatrixXd nan = Eigen::MatrixXd::Identity(3, 3);
  nan(0, 1) = nan(1, 0) = std::nan("");
  EXPECT_THROW(mvn_cdf({0, 0, 0}, nan), std::domain_error);
  Eigen::MatrixXd diag = Eigen::MatrixXd::Identity(2, 2);
  diag(1, 1) = 0.9;
  EXPECT_THROW(mvn_cdf({0, 0}, diag), std::domain_error);
}

TEST(Mvn, SingularButValidMatrix) {
  // Z3 = (Z1 + Z2) / sqrt(2) with Z1, Z2 independent: rank 2.
  Eigen::MatrixXd R(3, 3);
  const double s = 1.0 / std::numbers::sqrt2;
  R << 1, 0, s, 0, 1, s, s, s, 1;
  const double b[3] = {0.5, 0.8, 0.4};
  // Oracle: integrate over Z1, Z2 directly.
  const double expect = oracle::integrate(
      [&](double x1) {
        const double hi = std::fmin(b[1], (b[2] - s * x1) / s);
        if (hi <= oracle::kLow) return 0.0;
        return oracle::phi(x1) * oracle::Phi(hi);
      },
      oracle::kLow, b[0], 800);
  MvnProblem p;
  p.upper = {b[0], b[1], b[2]};
  p.correlation = R;
  p.abs_tol = 1e-7;
  EXPECT_NEAR(mvn_cdf(p).probability, expect, 1e-5);
}
