#pragma once

// Replicated experiments: LLN error scaling, CLT marginals with the Dynkin
// martingale checks, OU self-consistency, fixed-point relaxation and the
// micro/aggregate simulator equivalence. Pure computation; file output is
// the caller's job.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jsq/config.hpp"
#include "jsq/ctmc_sim.hpp"
#include "jsq/linop_ou.hpp"
#include "jsq/meanfield.hpp"
#include "jsq/replicate.hpp"
#include "jsq/rng.hpp"
#include "jsq/seqspace.hpp"
#include "jsq/stats.hpp"

namespace jsq {

// RNG stream tags, one per consumer (see make_rng).
namespace tags {
inline constexpr std::uint32_t lln = 1000;  // + index of N in the list
inline constexpr std::uint32_t clt = 2000;  // + index of N in the list
inline constexpr std::uint32_t ou = 3000;
inline constexpr std::uint32_t micro = 4001;
inline constexpr std::uint32_t aggregate = 4002;
}  // namespace tags

/// Everything derived from the initial-condition preset: horizon, u0, the ODE
/// solution on [0, T], the limit initial covariance and the initial queue law.
struct ExperimentSetup {
  ModelParams params;
  InitialPreset preset = InitialPreset::empty;
  std::size_t k_max = 0;
  TailVector u0;
  OdeSolution ode;
  CovarianceMatrix sigma0;
  std::optional<TailVector> queue_law;  // tail of the i.i.d. queue law (iid preset)

  /// R^N_0 for one replica. Random only for the iid preset.
  EmpiricalTail initial_lattice(std::int64_t n, Rng& rng) const {
    switch (preset) {
      case InitialPreset::empty: return EmpiricalTail::empty(n);
      case InitialPreset::iid: return sample_iid_queues(*queue_law, n, rng).to_empirical();
      case InitialPreset::equilibrium: return discretize(u0, n);
    }
    return EmpiricalTail::empty(n);
  }
};

inline ExperimentSetup make_setup(const ExperimentConfig& cfg, double T) {
  const auto& p = cfg.params;
  const double dt = cfg.step();
  switch (cfg.preset) {
    case InitialPreset::empty: {
      const std::size_t K = cfg.k_max ? cfg.k_max : choose_horizon(p, 0);
      const auto u0 = TailVector::empty(K);
      const auto K_sz = static_cast<Eigen::Index>(K);
      return {p, cfg.preset, K, u0, integrate_ode(u0, p, T, dt), CovarianceMatrix::Zero(K_sz, K_sz), std::nullopt};
    }
    case InitialPreset::iid: {
      const auto q = truncated_geometric_tail(cfg.iid_ratio, cfg.iid_k_top);
      const std::size_t K = cfg.k_max ? std::max(cfg.k_max, q.support() + 1) : choose_horizon(p, q.support());
      const auto u0 = q.resized(K);
      return {p, cfg.preset, K, u0, integrate_ode(u0, p, T, dt), iid_initial_covariance(q, K), q};
    }
    case InitialPreset::equilibrium: {
      const std::size_t K = cfg.k_max ? cfg.k_max : choose_horizon(p, 0);
      const auto u0 = fixed_point(p, K);
      const auto K_sz = static_cast<Eigen::Index>(K);
      return {p, cfg.preset, K, u0, OdeSolution::constant(u0, p, T, dt), CovarianceMatrix::Zero(K_sz, K_sz),
              std::nullopt};
    }
  }
  throw std::logic_error("make_setup: unknown preset");
}

/// 0, h, 2h, ..., T (T always included).
inline std::vector<double> make_grid(double T, double h) {
  const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(T / h - 1e-9)));
  std::vector<double> g(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) g[i] = std::min(T, h * static_cast<double>(i));
  g.back() = T;
  return g;
}

// ---------------------------------------------------------------------------
// Law of large numbers

struct LlnResult {
  std::vector<std::int64_t> ns;
  /// sup over the grid of ||R^N_t - u_t||_{L2(w)}, per N and replica.
  std::vector<std::vector<double>> sup_errors;
  std::vector<double> medians;
  std::optional<RateFit> fit;
  std::vector<Verdict> verdicts;
  std::vector<std::string> warnings;
};

inline constexpr double kLlnSlopeLow = -0.65;
inline constexpr double kLlnSlopeHigh = -0.35;

inline LlnResult run_lln(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto setup = make_setup(cfg, cfg.T);
  const auto grid = make_grid(cfg.T, cfg.grid_dt);
  LlnResult res;
  res.ns = cfg.ns;
  for (std::size_t i = 0; i < cfg.ns.size(); ++i) {
    const std::int64_t n = cfg.ns[i];
    auto errs = run_replicas(cfg.replicas, cfg.threads, [&](std::size_t r) {
      auto rng = make_rng(cfg.seed, r, tags::lln + static_cast<std::uint32_t>(i));
      const auto sim = simulate_aggregate(setup.initial_lattice(n, rng), setup.params, cfg.T, rng);
      const auto path = fluctuation_path(sim, setup.ode, grid);
      const auto w = geometric_weights(cfg.theta, path.dim());
      double sup = 0.0;
      for (const auto& z : path.z) sup = std::max(sup, weighted_l2(z, w));
      return sup / std::sqrt(static_cast<double>(n));
    });
    res.medians.push_back(median(errs));
    res.sup_errors.push_back(std::move(errs));
  }
  if (cfg.ns.size() < 3) {
    res.warnings.push_back("fewer than 3 values of N: convergence-rate fit skipped");
    return res;
  }
  std::vector<double> nd(cfg.ns.begin(), cfg.ns.end());
  res.fit = fit_rate(nd, res.medians);
  res.verdicts.push_back({"lln_rate_slope", res.fit->slope, -0.5,
                          res.fit->slope >= kLlnSlopeLow && res.fit->slope <= kLlnSlopeHigh,
                          "log-log slope of median sup-grid L2(w) error; accepted range [-0.65, -0.35]"});
  return res;
}

// ---------------------------------------------------------------------------
// Central limit theorem and martingale structure

inline constexpr double kKsLevel = 0.01;
inline constexpr double kVarianceRelTol = 0.20;
inline constexpr double kMartingaleSe = 3.0;
inline constexpr double kBracketRelTol = 0.10;

struct CltResult {
  std::int64_t n = 0;
  std::size_t coords = 0;
  /// Z^N_T(1..coords), M^N_T(1..coords), <M^N>_T and [M^N]_T per replica.
  ReplicaEnsemble z_T, m_T, bracket_T, qv_T;
  CovarianceTrajectory limit;
  std::vector<KsResult> ks;
  std::vector<double> variance_rel_error;
  double covariance_rel_frobenius = 0.0;
  std::vector<Verdict> clt_verdicts;
  std::vector<Verdict> martingale_verdicts;
};

namespace detail {
struct CltReplica {
  std::vector<double> z, m, b, qv;
};

inline Eigen::MatrixXd stack(const std::vector<CltReplica>& reps, std::vector<double> CltReplica::*field) {
  const auto m = static_cast<Eigen::Index>(reps.size());
  const auto k = static_cast<Eigen::Index>((reps.front().*field).size());
  Eigen::MatrixXd out(m, k);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < k; ++j) out(i, j) = (reps[static_cast<std::size_t>(i)].*field)[static_cast<std::size_t>(j)];
  return out;
}
}  // namespace detail

inline std::vector<CltResult> run_clt(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto setup = make_setup(cfg, cfg.T);
  const std::size_t coords = std::min(cfg.coords, setup.k_max);
  const std::vector<double> grid{0.0, cfg.T};
  const auto stride = static_cast<std::size_t>(std::max(1.0, std::round(cfg.grid_dt / setup.ode.dt())));
  const auto limit = evolve_covariance(setup.sigma0, setup.ode, setup.params, cfg.T, stride);

  std::vector<CltResult> out;
  for (std::size_t i = 0; i < cfg.ns.size(); ++i) {
    const std::int64_t n = cfg.ns[i];
    auto reps = run_replicas(cfg.replicas, cfg.threads, [&](std::size_t r) {
      auto rng = make_rng(cfg.seed, r, tags::clt + static_cast<std::uint32_t>(i));
      const auto sim = simulate_aggregate(setup.initial_lattice(n, rng), setup.params, cfg.T, rng);
      auto path = fluctuation_path(sim, setup.ode, grid);
      martingale_decompose(path, sim, setup.params, setup.ode);
      detail::CltReplica rep;
      for (std::size_t k = 1; k <= coords; ++k) {
        rep.z.push_back(path.z.back()[k]);
        rep.m.push_back(path.martingale.back()[k]);
        rep.b.push_back(path.bracket.back()[k]);
        rep.qv.push_back(path.quadratic_variation.back()[k]);
      }
      return rep;
    });

    CltResult res;
    res.n = n;
    res.coords = coords;
    const nlohmann::json meta{{"N", n}, {"seed", cfg.seed}, {"tag", tags::clt + i}};
    res.z_T = {detail::stack(reps, &detail::CltReplica::z), meta};
    res.m_T = {detail::stack(reps, &detail::CltReplica::m), meta};
    res.bracket_T = {detail::stack(reps, &detail::CltReplica::b), meta};
    res.qv_T = {detail::stack(reps, &detail::CltReplica::qv), meta};
    res.limit = limit;

    const auto& sigma = limit.final();
    const auto zm = ensemble_moments(res.z_T);
    std::size_t ks_pass = 0;
    for (std::size_t k = 0; k < coords; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const double var = sigma(kk, kk);
      const auto col = res.z_T.column(kk);
      const auto ks = ks_normality(col, 0.0, std::sqrt(var));
      res.ks.push_back(ks);
      if (ks.p_value > kKsLevel) ++ks_pass;
      const double rel = std::abs(zm.covariance(kk, kk) - var) / var;
      res.variance_rel_error.push_back(rel);
      res.clt_verdicts.push_back({"clt_variance_rel_error_k" + std::to_string(k + 1), rel, kVarianceRelTol,
                                  rel <= kVarianceRelTol, "|Var_emp - Sigma_T(k,k)| / Sigma_T(k,k)"});
    }
    // At most one coordinate may fail its KS test (2 of 3 for the default).
    const std::size_t need = coords > 1 ? coords - 1 : coords;
    res.clt_verdicts.insert(res.clt_verdicts.begin(),
                            Verdict{"clt_ks_marginals", static_cast<double>(ks_pass), static_cast<double>(need),
                                    ks_pass >= need, "coordinates with KS p-value > 0.01"});
    res.covariance_rel_frobenius =
        relative_frobenius(zm.covariance, sigma, static_cast<Eigen::Index>(coords));

    const auto mm = ensemble_moments(res.m_T);
    const Eigen::VectorXd mean_b = res.bracket_T.values.colwise().mean();
    const Eigen::VectorXd mean_qv = res.qv_T.values.colwise().mean();
    for (std::size_t k = 0; k < coords; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const double score = std::abs(mm.mean(kk)) / mm.stderr_mean(kk);
      res.martingale_verdicts.push_back({"martingale_mean_k" + std::to_string(k + 1), score, kMartingaleSe,
                                         score <= kMartingaleSe, "|mean M_T(k)| in standard errors"});
      const double rel = std::abs(mean_qv(kk) - mean_b(kk)) / mean_b(kk);
      res.martingale_verdicts.push_back({"martingale_bracket_k" + std::to_string(k + 1), rel, kBracketRelTol,
                                         rel <= kBracketRelTol,
                                         "|mean [M](k)_T - mean <M>(k)_T| / mean <M>(k)_T"});
    }
    out.push_back(std::move(res));
  }
  return out;
}

// ---------------------------------------------------------------------------
// OU self-consistency

inline constexpr double kOuFrobeniusTol = 0.05;

struct OuResult {
  std::size_t dim = 0;
  std::size_t coords = 0;
  CovarianceTrajectory covariance;
  ReplicaEnsemble endpoints;
  OuPath sample_path;
  double rel_frobenius = 0.0;
  double min_eigenvalue = 0.0;
  std::vector<Verdict> verdicts;
};

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped).
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline OuResult run_ou(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto setup = make_setup(cfg, cfg.T);
  OuResult res;
  res.dim = setup.k_max;
  res.coords = std::min(cfg.coords, setup.k_max);
  const double dt = cfg.step();
  const auto stride = static_cast<std::size_t>(std::max(1.0, std::round(cfg.grid_dt / setup.ode.dt())));
  res.covariance = evolve_covariance(setup.sigma0, setup.ode, setup.params, cfg.T, stride);
  const Eigen::MatrixXd root = psd_sqrt(setup.sigma0);
  const auto path_stride = static_cast<std::size_t>(std::max(1.0, std::round(cfg.grid_dt / dt)));

  auto draw_start = [&](Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd xi(static_cast<Eigen::Index>(res.dim));
    for (auto& x : xi) x = normal(rng);
    const Eigen::VectorXd z = root * xi;
    OuState s;
    s.z.assign(res.dim + 1, 0.0);
    for (std::size_t k = 1; k <= res.dim; ++k) s.z[k] = z(static_cast<Eigen::Index>(k - 1));
    return s;
  };

  auto ends = run_replicas(cfg.replicas, cfg.threads, [&](std::size_t r) {
    auto rng = make_rng(cfg.seed, r, tags::ou);
    const auto path = simulate_ou_path(draw_start(rng), setup.ode, setup.params, cfg.T, dt, rng,
                                       std::numeric_limits<std::size_t>::max());
    return path.final().z;
  });
  {
    auto rng = make_rng(cfg.seed, 0, tags::ou);
    res.sample_path = simulate_ou_path(draw_start(rng), setup.ode, setup.params, cfg.T, dt, rng, path_stride);
  }
  Eigen::MatrixXd vals(static_cast<Eigen::Index>(ends.size()), static_cast<Eigen::Index>(res.dim));
  for (std::size_t r = 0; r < ends.size(); ++r)
    for (std::size_t k = 1; k <= res.dim; ++k)
      vals(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k - 1)) = ends[r][k];
  res.endpoints = {std::move(vals), {{"seed", cfg.seed}, {"tag", tags::ou}}};

  double worst_eig = std::numeric_limits<double>::infinity(), worst_asym = 0.0;
  for (const auto& s : res.covariance.sigmas) {
    worst_eig = std::min(worst_eig, min_eigenvalue(s));
    worst_asym = std::max(worst_asym, (s - s.transpose()).cwiseAbs().maxCoeff());
  }
  res.min_eigenvalue = worst_eig;
  res.verdicts.push_back({"covariance_psd", worst_eig, -1e-10, worst_eig >= -1e-10,
                          "smallest eigenvalue along the covariance trajectory"});
  res.verdicts.push_back({"covariance_symmetric", worst_asym, 1e-12, worst_asym <= 1e-12, ""});
  if (cfg.replicas >= 2) {
    const auto mom = ensemble_moments(res.endpoints);
    res.rel_frobenius = relative_frobenius(mom.covariance, res.covariance.final(),
                                           static_cast<Eigen::Index>(res.coords));
    res.verdicts.push_back({"ou_covariance_match", res.rel_frobenius, kOuFrobeniusTol,
                            res.rel_frobenius <= kOuFrobeniusTol,
                            "relative Frobenius error, top coords x coords block"});
  }
  return res;
}

// ---------------------------------------------------------------------------
// Fixed point and relaxation

struct FixedPointResult {
  bool stable = false;
  std::string diagnostic;
  std::size_t k_max = 0;
  std::optional<TailVector> fixed;
  OdeSolution trajectory;
  std::vector<double> grid;
  std::vector<double> sup_distance;  // ||u_t - u~||_inf on the grid
  double residual = 0.0;             // ||F(u~)||_inf
  std::vector<Verdict> verdicts;
};

inline FixedPointResult run_fixed_point(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto& p = cfg.params;
  const std::size_t K = cfg.k_max ? cfg.k_max : choose_horizon(p, 0);
  const auto traj = integrate_ode(TailVector::empty(K), p, cfg.T, cfg.step());
  FixedPointResult res{p.stable(), {}, K, std::nullopt, traj, make_grid(cfg.T, cfg.grid_dt), {}, 0.0, {}};
  if (!res.stable) {
    res.diagnostic = "unstable regime: rho = " + format_double(p.rho()) +
                     " >= 1, no fixed point exists (the mean-field ODE is still integrated)";
    return res;
  }
  res.fixed = fixed_point(p, K);
  for (double f : drift_total(res.fixed->span(), p)) res.residual = std::max(res.residual, std::abs(f));
  bool monotone = true;
  for (double t : res.grid) {
    const auto u = traj.at(t);
    double d = 0.0;
    for (std::size_t k = 0; k <= K; ++k) d = std::max(d, std::abs(u[k] - (*res.fixed)[k]));
    if (!res.sup_distance.empty() && d > res.sup_distance.back() + 1e-15) monotone = false;
    res.sup_distance.push_back(d);
  }
  res.verdicts.push_back({"fixed_point_residual", res.residual, 1e-12, res.residual <= 1e-12, "||F(u~)||_inf"});
  res.verdicts.push_back({"relaxation_monotone", monotone ? 1.0 : 0.0, 1.0, monotone,
                          "||u_t - u~||_inf nonincreasing on the grid from the empty start"});
  return res;
}

// ---------------------------------------------------------------------------
// Micro / aggregate equivalence

struct EquivalenceResult {
  std::vector<KsResult> ks;  // per coordinate k = 1..coords
  std::vector<Verdict> verdicts;
  ReplicaEnsemble micro, aggregate;
};

inline EquivalenceResult run_equivalence(const ModelParams& p, std::int64_t n, double T, std::size_t runs,
                                         std::uint64_t seed, unsigned threads, std::size_t coords = 3) {
  auto collect = [&](bool micro) {
    auto rows = run_replicas(runs, threads, [&](std::size_t r) {
      auto rng = make_rng(seed, r, micro ? tags::micro : tags::aggregate);
      const auto sim = micro ? simulate_micro(MicroState{std::vector<std::int64_t>(static_cast<std::size_t>(n), 0), 0.0},
                                              p, T, rng, false)
                             : simulate_aggregate(EmpiricalTail::empty(n), p, T, rng, false);
      std::vector<double> c(coords);
      for (std::size_t k = 1; k <= coords; ++k) c[k - 1] = static_cast<double>(sim.final.count(k));
      return c;
    });
    Eigen::MatrixXd m(static_cast<Eigen::Index>(runs), static_cast<Eigen::Index>(coords));
    for (std::size_t r = 0; r < runs; ++r)
      for (std::size_t k = 0; k < coords; ++k) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
    return ReplicaEnsemble{m, {{"N", n}, {"seed", seed}, {"tag", micro ? tags::micro : tags::aggregate}}};
  };
  EquivalenceResult res{{}, {}, collect(true), collect(false)};
  for (std::size_t k = 0; k < coords; ++k) {
    const auto a = res.micro.column(static_cast<Eigen::Index>(k));
    const auto b = res.aggregate.column(static_cast<Eigen::Index>(k));
    const auto ks = ks_two_sample(a, b);
    res.ks.push_back(ks);
    res.verdicts.push_back({"micro_aggregate_ks_k" + std::to_string(k + 1), ks.p_value, kKsLevel,
                            ks.p_value > kKsLevel, "two-sample KS p-value on counts[k] at T"});
  }
  return res;
}

}  // namespace jsq
