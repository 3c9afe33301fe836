#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "jsq/ctmc_sim.hpp"
#include "jsq/linop_ou.hpp"
#include "jsq/verify.hpp"
#include "oracles.hpp"

namespace {

using jsq::ModelParams;
using jsq::TailVector;

const ModelParams kBase(1.0, 2.0, 2);

TailVector fixed(std::size_t k) { return jsq::fixed_point(kBase, k); }

TEST(BuildK, FirstColumnAtFixedPoint) {
  const auto K = jsq::build_K(fixed(5), kBase);
  const auto y = K.apply(std::vector<double>{0, 1, 0, 0, 0, 0});
  EXPECT_EQ(y, (std::vector<double>{0, -3, 1, 0, 0, 0}));
}

TEST(BuildK, IndependentOfStateWhenLIsOne) {
  const ModelParams p(0.7, 1.1, 1);
  auto rng = jsq::make_rng(1);
  const auto a = jsq::build_K(jsq::random_tail(6, rng), p).dense();
  const auto b = jsq::build_K(TailVector::empty(6), p).dense();
  EXPECT_EQ(a, b);
  EXPECT_DOUBLE_EQ(a(2, 1), 0.7);
  EXPECT_DOUBLE_EQ(a(2, 2), -1.8);
  EXPECT_DOUBLE_EQ(a(2, 3), 1.1);
}

TEST(BuildK, MatchesFiniteDifferenceOfDrift) {
  auto rng = jsq::make_rng(2);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const ModelParams p(1.0, 2.0, 1 + i % 5);
    const auto v = jsq::random_tail(8, rng);
    std::vector<double> x(9, 0.0);
    for (std::size_t k = 1; k <= 8; ++k) x[k] = unif(rng);
    const double eps = 1e-6;
    std::vector<double> vp(v.values()), vm(v.values());
    for (std::size_t k = 1; k <= 8; ++k) {
      vp[k] += eps * x[k];
      vm[k] -= eps * x[k];
    }
    const auto fp = jsq::drift_total(vp, p), fm = jsq::drift_total(vm, p);
    const auto kx = jsq::build_K(v, p).apply(x);
    for (std::size_t k = 1; k <= 8; ++k) EXPECT_NEAR((fp[k] - fm[k]) / (2 * eps), kx[k], 1e-7);
  }
}

TEST(BuildK, ColumnSumsVanishAwayFromTheBoundary) {
  auto rng = jsq::make_rng(4);
  for (int i = 0; i < 100; ++i) {
    const ModelParams p(1.0, 1.7, 1 + i % 4);
    const auto v = jsq::random_tail(10, rng);
    const auto s = jsq::build_K(v, p).column_sums();
    // Column 1 loses beta to the boundary row 0.
    EXPECT_NEAR(s[1], -p.beta, 1e-12);
    for (std::size_t j = 2; j < 10; ++j) EXPECT_NEAR(s[j], 0.0, 1e-12);
  }
}

TEST(OperatorNormBound, Examples) {
  const auto w = jsq::geometric_weights(0.5, 10);
  EXPECT_DOUBLE_EQ(jsq::operator_norm_bound(kBase, w), std::sqrt(72.0));
  EXPECT_DOUBLE_EQ(jsq::operator_norm_bound(ModelParams(1.0, 0.0, 2), w), std::sqrt(24.0));
}

TEST(OperatorNormBound, HoldsForRandomStates) {
  auto rng = jsq::make_rng(5);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (double theta : {0.3, 0.5, 1.0}) {
    const auto w = jsq::geometric_weights(theta, 12);
    for (int i = 0; i < 300; ++i) {
      const ModelParams p(1.0, 2.0, 1 + i % 5);
      const auto K = jsq::build_K(jsq::random_tail(12, rng), p);
      std::vector<double> x(13, 0.0);
      for (std::size_t k = 1; k <= 12; ++k) x[k] = unif(rng) * std::pow(theta, -0.5 * k);
      EXPECT_LE(jsq::weighted_l2(K.apply(x), w), jsq::operator_norm_bound(p, w) * jsq::weighted_l2(x, w) * (1 + 1e-12));
    }
  }
}

TEST(BracketRate, AtFixedPoint) {
  const auto lam = jsq::bracket_rate(fixed(3), kBase);
  EXPECT_DOUBLE_EQ(lam[1], 1.5);
}

// ---------------------------------------------------------------------------
// Covariance

TEST(Covariance, StaysZeroWithoutNoise) {
  const ModelParams p(0.0, 1.0, 2);
  const auto ode = jsq::integrate_ode(TailVector::empty(4), p, 2.0, 1e-2);
  const auto traj = jsq::evolve_covariance(Eigen::MatrixXd::Zero(4, 4), ode, p, 2.0);
  EXPECT_EQ(traj.final().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Covariance, ScalarRelaxesToStationaryValue) {
  const auto ode = jsq::OdeSolution::constant(fixed(8), kBase, 5.0, 1e-3);
  const auto traj = jsq::evolve_covariance(Eigen::MatrixXd::Zero(1, 1), ode, kBase, 5.0);
  EXPECT_NEAR(traj.final()(0, 0), 0.25, 1e-6);
}

TEST(Covariance, ConvergesToLyapunovSolution) {
  // Stationary Sigma for frozen K solves (I (x) K + K (x) I) vec(Sigma) = -vec(D).
  const std::size_t dim = 4;
  const auto u = fixed(8);
  const auto K = jsq::TriDiagOperator(u, kBase, dim).dense();
  const auto lam = jsq::bracket_rate(u, kBase);
  const auto n = static_cast<Eigen::Index>(dim);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd A(n * n, n * n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) A.block(a * n, b * n, n, n) = K(a, b) * I + (a == b ? K : Eigen::MatrixXd::Zero(n, n));
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n * n);
  for (Eigen::Index i = 0; i < n; ++i) rhs(i * n + i) = -lam[static_cast<std::size_t>(i + 1)];
  const Eigen::VectorXd sol = A.fullPivLu().solve(rhs);
  const Eigen::MatrixXd expected = Eigen::Map<const Eigen::MatrixXd>(sol.data(), n, n);

  const auto ode = jsq::OdeSolution::constant(u, kBase, 30.0, 1e-3);
  const auto traj = jsq::evolve_covariance(Eigen::MatrixXd::Zero(n, n), ode, kBase, 30.0, 1000);
  EXPECT_LE((traj.final() - expected).norm() / expected.norm(), 1e-8);
}

TEST(Covariance, StaysSymmetricPsdAlongTheFlow) {
  const auto q = jsq::truncated_geometric_tail(0.5, 8);
  const auto ode = jsq::integrate_ode(q.resized(20), kBase, 3.0, 1e-3);
  const auto traj = jsq::evolve_covariance(jsq::iid_initial_covariance(q, 6), ode, kBase, 3.0, 100);
  for (const auto& s : traj.sigmas) {
    EXPECT_TRUE(jsq::is_psd(s));
    EXPECT_EQ(s, s.transpose());
  }
}

TEST(Covariance, IidInitialIsPsd) {
  const auto q = jsq::truncated_geometric_tail(0.6, 10);
  const auto s = jsq::iid_initial_covariance(q, 10);
  EXPECT_TRUE(jsq::is_psd(s));
  EXPECT_DOUBLE_EQ(s(0, 0), q(1) * (1 - q(1)));
  EXPECT_DOUBLE_EQ(s(1, 2), q(3) - q(2) * q(3));
}

// ---------------------------------------------------------------------------
// Propagator

TEST(Propagator, MatchesMatrixExponentialWhenFrozen) {
  const auto u = fixed(10);
  const auto ode = jsq::OdeSolution::constant(u, kBase, 2.0, 1e-3);
  const auto K = jsq::TriDiagOperator(u, kBase, 2).dense();
  for (double t : {0.1, 0.5, 2.0}) {
    const Eigen::MatrixXd E = oracle::expm(K, t);
    for (int j = 0; j < 2; ++j) {
      std::vector<double> z0(3, 0.0);
      z0[static_cast<std::size_t>(j + 1)] = 1.0;
      const auto z = jsq::propagator_apply(z0, ode, kBase, 0.0, t);
      for (int i = 0; i < 2; ++i) EXPECT_NEAR(z[static_cast<std::size_t>(i + 1)], E(i, j), 1e-8 * E.cwiseAbs().maxCoeff());
    }
  }
}

TEST(Propagator, IdentityOnEmptyInterval) {
  const auto ode = jsq::integrate_ode(TailVector::empty(6), kBase, 1.0, 1e-3);
  const std::vector<double> z{0, 0.3, -1, 2, 0, 0, 1};
  EXPECT_EQ(jsq::propagator_apply(z, ode, kBase, 0.4, 0.4), z);
}

TEST(Propagator, SemigroupAlongTheFlow) {
  const std::size_t K = jsq::choose_horizon(kBase, 0);
  const auto ode = jsq::integrate_ode(TailVector::empty(K), kBase, 2.0, 1e-3);
  std::vector<double> z0(6, 0.0);
  z0[1] = 1.0;
  z0[3] = -0.5;
  const auto direct = jsq::propagator_apply(z0, ode, kBase, 0.0, 2.0);
  const auto mid = jsq::propagator_apply(z0, ode, kBase, 0.0, 0.7);
  const auto composed = jsq::propagator_apply(mid, ode, kBase, 0.7, 2.0);
  for (std::size_t k = 1; k < 6; ++k) EXPECT_NEAR(direct[k], composed[k], 1e-9);
}

TEST(Propagator, RejectsIntervalsOutsideHorizon) {
  const auto ode = jsq::integrate_ode(TailVector::empty(6), kBase, 1.0, 1e-2);
  const std::vector<double> z(7, 0.0);
  EXPECT_THROW(jsq::propagator_apply(z, ode, kBase, 0.0, 2.0), std::out_of_range);
  EXPECT_THROW(jsq::propagator_apply(z, ode, kBase, 0.5, 0.2), std::out_of_range);
}

// ---------------------------------------------------------------------------
// OU paths

TEST(OuPath, NoiselessPathFollowsPropagator) {
  const std::size_t K = jsq::choose_horizon(kBase, 0);
  const auto ode = jsq::integrate_ode(TailVector::empty(K), kBase, 1.0, 1e-4);
  auto rng = jsq::make_rng(7);
  const jsq::OuState z0{{0, 1.0, 0.5, -0.2, 0}, 0.0};
  const auto path = jsq::simulate_ou_path(z0, ode, kBase, 1.0, 1e-4, rng, 1000, 0.0);
  const auto expected = jsq::propagator_apply(z0.z, ode, kBase, 0.0, 1.0);
  // Euler against RK4: first-order agreement in dt.
  for (std::size_t k = 1; k <= 4; ++k) EXPECT_NEAR(path.final().z[k], expected[k], 1e-3);
  EXPECT_DOUBLE_EQ(path.final().t, 1.0);
}

TEST(OuPath, MonteCarloMeanFollowsPropagator) {
  const auto ode = jsq::OdeSolution::constant(fixed(8), kBase, 1.0, 1e-3);
  const jsq::OuState z0{{0, 1.0, -0.5, 0.25}, 0.0};
  const auto expected = jsq::propagator_apply(z0.z, ode, kBase, 0.0, 1.0);
  const int M = 2000;
  std::vector<double> sum(4, 0.0), sum2(4, 0.0);
  for (int m = 0; m < M; ++m) {
    auto rng = jsq::make_rng(11, static_cast<std::uint64_t>(m));
    const auto z = jsq::simulate_ou_path(z0, ode, kBase, 1.0, 1e-3, rng, 1000000).final().z;
    for (std::size_t k = 1; k <= 3; ++k) {
      sum[k] += z[k];
      sum2[k] += z[k] * z[k];
    }
  }
  for (std::size_t k = 1; k <= 3; ++k) {
    const double mean = sum[k] / M;
    const double se = std::sqrt((sum2[k] / M - mean * mean) / M);
    EXPECT_LE(std::abs(mean - expected[k]), 3 * se) << "k=" << k;
  }
}

TEST(OuPath, ScalarStationaryVariance) {
  const auto ode = jsq::OdeSolution::constant(fixed(8), kBase, 5.0, 1e-3);
  const int M = 10000;
  double s2 = 0.0;
  for (int m = 0; m < M; ++m) {
    auto rng = jsq::make_rng(12, static_cast<std::uint64_t>(m));
    const auto z = jsq::simulate_ou_path({{0, 0}, 0.0}, ode, kBase, 5.0, 1e-3, rng, 1000000).final().z;
    s2 += z[1] * z[1];
  }
  EXPECT_NEAR(s2 / M, 0.25, 0.05 * 0.25);
}

TEST(OuPath, CsvHasOneRowPerRecordedState) {
  const auto ode = jsq::OdeSolution::constant(fixed(8), kBase, 1.0, 1e-2);
  auto rng = jsq::make_rng(13);
  const auto path = jsq::simulate_ou_path({{0, 0, 0}, 0.0}, ode, kBase, 1.0, 1e-2, rng, 10);
  EXPECT_EQ(path.states.size(), 11u);
  std::ostringstream os;
  path.write_csv(os);
  const auto text = os.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 12);
  EXPECT_EQ(text.substr(0, 8), "t,z1,z2\n");
}

}  // namespace
