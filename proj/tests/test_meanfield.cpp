#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "jsq/linop_ou.hpp"
#include "jsq/meanfield.hpp"
#include "jsq/verify.hpp"
#include "oracles.hpp"

namespace {

using jsq::ModelParams;
using jsq::TailVector;

TEST(Drift, AtTheL2FixedPoint) {
  const ModelParams p(1.0, 2.0, 2);
  const auto f = jsq::drift(TailVector({1, 0.5, 0.125}), p);
  EXPECT_DOUBLE_EQ(f.plus[1], 0.75);
  EXPECT_DOUBLE_EQ(f.minus[1], 0.75);
  EXPECT_DOUBLE_EQ(f.total()[1], 0.0);
}

TEST(Drift, EmptyNetworkOnlyArrivesAtLevelOne) {
  const ModelParams p(1.3, 2.0, 3);
  const auto f = jsq::drift(TailVector::empty(5), p);
  EXPECT_DOUBLE_EQ(f.plus[1], 1.3);
  for (std::size_t k = 2; k <= 5; ++k) EXPECT_EQ(f.plus[k], 0.0);
  for (std::size_t k = 1; k <= 5; ++k) EXPECT_EQ(f.minus[k], 0.0);
}

TEST(Drift, NonnegativePartsOnValidTails) {
  auto rng = jsq::make_rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto v = jsq::random_tail(12, rng);
    const auto f = jsq::drift(v, ModelParams(1.0, 1.5, 1 + i % 5));
    for (std::size_t k = 1; k <= 12; ++k) {
      EXPECT_GE(f.plus[k], 0.0);
      EXPECT_GE(f.minus[k], 0.0);
    }
  }
}

TEST(FixedPoint, Values) {
  const auto u = jsq::fixed_point(ModelParams(1.0, 2.0, 2), 3);
  EXPECT_EQ(u[1], 0.5);
  EXPECT_EQ(u[2], 0.125);
  EXPECT_EQ(u[3], 0.0078125);

  const auto g = jsq::fixed_point(ModelParams(1.0, 2.0, 1), 6);
  for (std::size_t k = 0; k <= 6; ++k) EXPECT_DOUBLE_EQ(g[k], std::pow(0.5, static_cast<double>(k)));
}

TEST(FixedPoint, IsAZeroOfTheDrift) {
  for (int L = 1; L <= 5; ++L)
    for (double rho : {0.1, 0.5, 0.9}) {
      const ModelParams p(rho * 1.7, 1.7, L);
      const auto u = jsq::fixed_point(p, jsq::choose_horizon(p, 0));
      for (double f : jsq::drift(u, p).total()) EXPECT_NEAR(f, 0.0, 1e-12) << "L=" << L << " rho=" << rho;
    }
}

TEST(FixedPoint, UnstableRegime) {
  EXPECT_THROW(jsq::fixed_point(ModelParams(2.0, 2.0, 2), 5), jsq::UnstableRegime);
  EXPECT_THROW(jsq::fixed_point(ModelParams(3.0, 2.0, 2), 5), jsq::UnstableRegime);
}

TEST(FiniteNDrift, FallingFactorialExample) {
  const jsq::EmpiricalTail r({4, 2, 0}, 4);
  const auto f = jsq::finite_N_drift(r, ModelParams(1.0, 2.0, 2), 2);
  EXPECT_DOUBLE_EQ(f.plus[1], 5.0 / 6.0);
  EXPECT_DOUBLE_EQ(f.minus[1], 1.0);
}

TEST(FiniteNDrift, EqualTailsCancel) {
  const jsq::EmpiricalTail r({10, 6, 6, 3}, 10);
  const auto f = jsq::finite_N_drift(r, ModelParams(1.0, 2.0, 3), 4);
  EXPECT_EQ(f.plus[2], 0.0);
}

TEST(FiniteNDrift, RequiresNAtLeastL) {
  EXPECT_THROW(jsq::finite_N_drift(jsq::EmpiricalTail::empty(2), ModelParams(1.0, 1.0, 3), 2), std::invalid_argument);
}

TEST(FiniteNDrift, ApproachesMeanFieldAtRateOneOverN) {
  // r fixed at u = (1, 0.5, 0.25, 0.1); N a multiple of 20 keeps r on the lattice.
  const ModelParams p(1.0, 2.0, 3);
  const TailVector u({1, 0.5, 0.25, 0.1});
  const auto f = jsq::drift(u, p);
  std::vector<double> scaled;
  for (std::int64_t n : {20, 200, 2000, 20000}) {
    const auto r = jsq::discretize(u, n);
    const auto fn = jsq::finite_N_drift(r, p, 3);
    double err = 0.0;
    for (std::size_t k = 1; k <= 3; ++k) err = std::max(err, std::abs(fn.total()[k] - f.total()[k]));
    scaled.push_back(err * static_cast<double>(n));
  }
  // N * error settles to a constant.
  EXPECT_NEAR(scaled[3] / scaled[2], 1.0, 0.02);
  for (double s : scaled) EXPECT_LT(s, 2.0);
}

TEST(SamplingCorrection, Examples) {
  for (int L = 1; L <= 5; ++L) {
    EXPECT_NEAR(jsq::sampling_correction_A(1.0, 10, L), 0.0, 1e-15);
    EXPECT_EQ(jsq::sampling_correction_A(0.0, 10, L), 0.0);
  }
  EXPECT_NEAR(jsq::sampling_correction_A(0.4, 5, 2), -0.06, 1e-15);
  EXPECT_NEAR(static_cast<double>(oracle::sampling_correction_brute(0.4L, 5, 2)), -0.06, 1e-15);
}

TEST(SamplingCorrection, MatchesBruteForceOnGrid) {
  for (int L = 1; L <= 5; ++L)
    for (std::int64_t n = L; n <= 50; ++n)
      for (int i = 0; i <= 100; ++i) {
        const double a = i / 100.0;
        EXPECT_NEAR(jsq::sampling_correction_A(a, n, L),
                    static_cast<double>(oracle::sampling_correction_brute(a, n, L)), 1e-13)
            << "L=" << L << " N=" << n << " a=" << a;
      }
}

TEST(SamplingCorrection, ClosedFormForLEqualsTwo) {
  for (std::int64_t n = 2; n < 30; ++n)
    for (double a : {0.1, 0.33, 0.5, 0.9})
      EXPECT_NEAR(jsq::sampling_correction_A(a, n, 2), a * (a - 1) / static_cast<double>(n - 1), 1e-15);
}

TEST(BinomialRemainder, Examples) {
  EXPECT_NEAR(jsq::binomial_remainder_B(0.3, 0.1, 2), 0.01, 1e-16);
  for (double a : {-1.0, 0.2, 0.7})
    for (double h : {-0.5, 0.0, 0.4}) EXPECT_EQ(jsq::binomial_remainder_B(a, h, 1), 0.0);
  EXPECT_NEAR(jsq::binomial_remainder_B(0.5, 0.1, 3), 0.016, 1e-15);
  EXPECT_NEAR(0.6 * 0.6 * 0.6 - 0.125 - 3 * 0.25 * 0.1, 0.016, 1e-15);
}

TEST(BinomialRemainder, BoundsOnTheUnitSquare) {
  for (int L = 2; L <= 5; ++L)
    for (int i = 0; i <= 100; ++i)
      for (int j = 0; j <= 100; ++j) {
        const double a = i / 100.0, h = j / 100.0 - a;
        const double B = jsq::binomial_remainder_B(a, h, L);
        EXPECT_GE(B, -1e-15);
        EXPECT_LE(B, std::pow(h, L) + (std::pow(2.0, L) - L - 2) * a * h * h + 1e-14);
      }
}

TEST(CorrectionG, ReproducesFiniteNDrift) {
  auto rng = jsq::make_rng(5);
  for (int i = 0; i < 100; ++i) {
    const ModelParams p(0.5 + i % 3, 1.0, 1 + i % 5);
    const auto r = jsq::random_empirical(p.L, 300, 10, rng);
    const auto v = r.to_tail(10);
    const auto fn = jsq::finite_N_drift(r, p, 10);
    const auto f = jsq::drift(v, p);
    const auto g = jsq::correction_G(v, r.n(), p);
    for (std::size_t k = 1; k <= 10; ++k) EXPECT_NEAR(fn.plus[k] - f.plus[k], g[k], 1e-14);
  }
}

TEST(CorrectionG, VanishesOnFlatStretches) {
  const TailVector v({1, 1, 1, 0.4, 0.4, 0});
  const auto g = jsq::correction_G(v, 20, ModelParams(1.0, 2.0, 3));
  EXPECT_EQ(g[1], 0.0);
  EXPECT_EQ(g[2], 0.0);
  EXPECT_EQ(g[4], 0.0);
}

TEST(CorrectionG, ScalesLikeOneOverN) {
  auto rng = jsq::make_rng(6);
  const ModelParams p(1.0, 2.0, 4);
  std::vector<TailVector> tails;
  for (int i = 0; i < 100; ++i) tails.push_back(jsq::random_tail(10, rng));
  std::vector<double> ns{10, 100, 1000, 10000}, sups;
  for (double nd : ns) {
    double sup = 0.0;
    for (const auto& v : tails)
      for (double g : jsq::correction_G(v, static_cast<std::int64_t>(nd), p)) sup = std::max(sup, std::abs(g));
    sups.push_back(sup);
  }
  const auto fit = jsq::fit_rate(ns, sups);
  EXPECT_NEAR(fit.slope, -1.0, 0.05);
}

TEST(RemainderH, ZeroPerturbationAndLinearModel) {
  auto rng = jsq::make_rng(8);
  const auto v = jsq::random_tail(8, rng);
  for (double x : jsq::remainder_H(v, std::vector<double>(9, 0.0), ModelParams(1.0, 2.0, 3))) EXPECT_EQ(x, 0.0);
  const auto y = jsq::random_tail(8, rng);
  std::vector<double> x(9);
  for (std::size_t k = 0; k < 9; ++k) x[k] = y[k] - v[k];
  for (double h : jsq::remainder_H(v, x, ModelParams(1.0, 2.0, 1))) EXPECT_EQ(h, 0.0);
}

TEST(RemainderH, CompletesTheLinearization) {
  auto rng = jsq::make_rng(9);
  for (int i = 0; i < 100; ++i) {
    const ModelParams p(1.0, 2.0, 1 + i % 5);
    const auto v = jsq::random_tail(10, rng), y = jsq::random_tail(10, rng);
    std::vector<double> x(11);
    for (std::size_t k = 0; k < 11; ++k) x[k] = y[k] - v[k];
    EXPECT_LE(jsq::linearization_residual(v, x, p, p), 1e-14);
  }
}

TEST(Lipschitz, ExplicitConstantInL1w) {
  auto rng = jsq::make_rng(10);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const ModelParams p(0.3 + unif(rng), 0.3 + unif(rng), 1 + i % 5);
    const auto w = jsq::geometric_weights(0.05 + 0.95 * unif(rng), 10);
    const auto u = jsq::random_tail(10, rng), v = jsq::random_tail(10, rng);
    const auto fu = jsq::drift(u, p).total(), fv = jsq::drift(v, p).total();
    std::vector<double> df(11), dx(11);
    for (std::size_t k = 0; k < 11; ++k) {
      df[k] = fu[k] - fv[k];
      dx[k] = u[k] - v[k];
    }
    const double lip = p.alpha * p.L * (w.d() + 1) + p.beta * (1 / w.c() + 1);
    EXPECT_LE(jsq::weighted_l1(df, w), lip * jsq::weighted_l1(dx, w) * (1 + 1e-12));
  }
}

// ---------------------------------------------------------------------------
// ODE integrator

TEST(IntegrateOde, EquilibriumIsStationary) {
  const ModelParams p(1.0, 2.0, 2);
  const auto ut = jsq::fixed_point(p, jsq::choose_horizon(p, 0));
  const auto sol = jsq::integrate_ode(ut, p, 10.0, jsq::default_dt(p));
  double dev = 0.0;
  for (const auto& s : sol.states())
    for (std::size_t k = 0; k < s.size(); ++k) dev = std::max(dev, std::abs(s[k] - ut[k]));
  EXPECT_LE(dev, 1e-10);
}

TEST(IntegrateOde, RelaxesToFixedPointFromEmpty) {
  const ModelParams p(1.0, 2.0, 2);
  const std::size_t K = jsq::choose_horizon(p, 0);
  const auto ut = jsq::fixed_point(p, K);
  const auto a = jsq::integrate_ode(TailVector::empty(K), p, 40.0, 1e-3);
  const auto b = jsq::integrate_ode(TailVector::empty(K), p, 40.0, 5e-4);
  double dist = 0.0, halving = 0.0;
  for (std::size_t k = 0; k <= K; ++k) {
    dist = std::max(dist, std::abs(a.states().back()[k] - ut[k]));
    halving = std::max(halving, std::abs(a.states().back()[k] - b.states().back()[k]));
  }
  EXPECT_LE(dist, 1e-6);
  EXPECT_LE(halving, 1e-9);
}

TEST(IntegrateOde, MatchesHighAccuracyReferenceForLEqualsOne) {
  const ModelParams p(1.0, 2.0, 1);
  const std::size_t K = jsq::choose_horizon(p, 0);
  const auto sol = jsq::integrate_ode(TailVector::empty(K), p, 5.0, jsq::default_dt(p));
  std::vector<double> times{0.0};
  for (int i = 1; i <= 10; ++i) times.push_back(0.5 * i);
  std::vector<double> u0(K + 1, 0.0);
  u0[0] = 1.0;
  const auto ref = oracle::reference_ode(u0, 1.0, 2.0, 1, times);
  ASSERT_EQ(ref.size(), times.size());
  for (std::size_t i = 1; i < times.size(); ++i) {
    const auto u = sol.at(times[i]);
    for (std::size_t k = 1; k <= 3; ++k) EXPECT_NEAR(u[k], ref[i][k], 1e-6 * ref[i][k]) << "t=" << times[i];
  }
}

TEST(IntegrateOde, MatchesHighAccuracyReferenceForLEqualsThree) {
  const ModelParams p(0.9, 1.0, 3);
  const std::size_t K = jsq::choose_horizon(p, 0);
  const auto sol = jsq::integrate_ode(TailVector::empty(K), p, 3.0, jsq::default_dt(p));
  std::vector<double> times{0.0, 1.0, 2.0, 3.0};
  std::vector<double> u0(K + 1, 0.0);
  u0[0] = 1.0;
  const auto ref = oracle::reference_ode(u0, 0.9, 1.0, 3, times);
  for (std::size_t i = 1; i < times.size(); ++i)
    for (std::size_t k = 1; k <= 3; ++k) EXPECT_NEAR(sol.at(times[i])[k], ref[i][k], 1e-9);
}

TEST(IntegrateOde, StatesAreValidTails) {
  const ModelParams p(1.4, 1.0, 2);  // unstable regime still integrates
  const auto sol = jsq::integrate_ode(TailVector::empty(30), p, 5.0, jsq::default_dt(p));
  for (const auto& s : sol.states()) EXPECT_TRUE(jsq::validate_tail(s.span()));
  EXPECT_EQ(sol.states().front(), TailVector::empty(30));
}

TEST(IntegrateOde, FlowProperty) {
  const ModelParams p(1.0, 2.0, 2);
  const std::size_t K = jsq::choose_horizon(p, 0);
  const auto full = jsq::integrate_ode(TailVector::empty(K), p, 4.0, 1e-3);
  const auto first = jsq::integrate_ode(TailVector::empty(K), p, 2.0, 1e-3);
  const auto second = jsq::integrate_ode(first.states().back(), p, 2.0, 1e-3);
  for (std::size_t k = 0; k <= K; ++k) EXPECT_NEAR(full.states().back()[k], second.states().back()[k], 1e-9);
}

TEST(IntegrateOde, RejectsOversizedSteps) {
  const ModelParams p(1.0, 2.0, 2);
  EXPECT_THROW(jsq::integrate_ode(TailVector::empty(6), p, 5.0, 2.0), jsq::StepRejected);
  EXPECT_THROW(jsq::integrate_ode(TailVector::empty(6), p, 5.0, 0.0), std::invalid_argument);
}

TEST(IntegrateOde, LinearInterpolationBetweenKnots) {
  const ModelParams p(1.0, 2.0, 2);
  const auto sol = jsq::integrate_ode(TailVector::empty(6), p, 1.0, 0.1);
  const auto a = sol.states()[3], b = sol.states()[4];
  const auto mid = sol.at(0.35);
  EXPECT_NEAR(mid[1], 0.5 * (a[1] + b[1]), 1e-15);
  EXPECT_THROW(sol.at(1.5), std::out_of_range);
}

TEST(ChooseHorizon, CoversFixedPointAndInitialSupport) {
  const ModelParams p(1.0, 2.0, 2);
  const std::size_t K = jsq::choose_horizon(p, 0);
  EXPECT_LT(jsq::fixed_point(p, K)[K], 1e-14);
  EXPECT_GE(jsq::fixed_point(p, K - 1)[K - 1], 1e-14);
  EXPECT_GE(jsq::choose_horizon(p, 20), 21u);
}

}  // namespace
