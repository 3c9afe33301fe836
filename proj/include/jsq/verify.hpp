#pragma once

// Deterministic identity suite: algebraic identities and bounds that tie the
// finite-N drift, the mean-field drift, the linearization and its norm bound
// together. Every check returns a Verdict; nothing here throws on failure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "jsq/linop_ou.hpp"
#include "jsq/meanfield.hpp"
#include "jsq/rng.hpp"
#include "jsq/seqspace.hpp"
#include "jsq/stats.hpp"

namespace jsq {

/// Random valid tail on horizon k_max: v(k) = v(k-1) * U^s with a random shape s,
/// and occasionally a run of equal values or an early drop to 0.
inline TailVector random_tail(std::size_t k_max, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> v(k_max + 1);
  v[0] = 1.0;
  const double shape = 0.2 + 2.0 * unif(rng);
  for (std::size_t k = 1; k <= k_max; ++k) {
    const double roll = unif(rng);
    if (roll < 0.1) v[k] = v[k - 1];
    else if (roll < 0.15) v[k] = 0.0;
    else v[k] = v[k - 1] * std::pow(unif(rng), shape);
  }
  return TailVector(std::move(v));
}

/// Random lattice tail with N in [n_min, n_max].
inline EmpiricalTail random_empirical(std::int64_t n_min, std::int64_t n_max, std::size_t k_max, Rng& rng) {
  const std::int64_t n = std::uniform_int_distribution<std::int64_t>(n_min, n_max)(rng);
  std::vector<std::int64_t> counts(k_max + 1);
  counts[0] = n;
  for (std::size_t k = 1; k <= k_max; ++k)
    counts[k] = std::uniform_int_distribution<std::int64_t>(0, counts[k - 1])(rng);
  return EmpiricalTail(std::move(counts), n);
}

/// max_k |F_field(v+x) - F_field(v) - K_lin(v) x - H_lin(v, x)|. Passing different
/// parameter sets for the two sides exposes any mismatch in the decomposition.
inline double linearization_residual(const TailVector& v, std::span<const double> x, const ModelParams& p_field,
                                     const ModelParams& p_linear) {
  std::vector<double> vx(v.size());
  for (std::size_t k = 0; k < vx.size(); ++k) vx[k] = v[k] + x[k];
  const auto f1 = drift_total(vx, p_field);
  const auto f0 = drift_total(v.span(), p_field);
  const auto kx = build_K(v, p_linear).apply(x);
  const auto h = remainder_H(v, x, p_linear);
  double r = 0.0;
  for (std::size_t k = 1; k < vx.size(); ++k) r = std::max(r, std::abs(f1[k] - f0[k] - kx[k] - h[k]));
  return r;
}

namespace verify_detail {
inline Verdict le(std::string name, double stat, double thr, std::string detail = {}) {
  return {std::move(name), stat, thr, stat <= thr, std::move(detail)};
}

inline std::vector<ModelParams> parameter_grid() {
  std::vector<ModelParams> ps;
  for (int L = 1; L <= 5; ++L)
    for (auto [a, b] : {std::pair{1.0, 2.0}, std::pair{0.7, 1.0}, std::pair{3.0, 1.5}}) ps.emplace_back(a, b, L);
  return ps;
}
}  // namespace verify_detail

/// Double-sum expansion of A^N vs the falling-factorial definition, L <= 5, N <= 50, a on a 0.01 grid.
inline Verdict check_sampling_identity() {
  double worst = 0.0;
  for (int L = 1; L <= 5; ++L)
    for (std::int64_t n = L; n <= 50; ++n)
      for (int i = 0; i <= 100; ++i) {
        const double a = i / 100.0;
        const double direct = falling_factorial_ratio(static_cast<double>(n) * a, n, L) - ipow(a, L);
        worst = std::max(worst, std::abs(sampling_correction_A(a, n, L) - direct));
      }
  return verify_detail::le("sampling_correction_identity", worst, 1e-13);
}

/// |A^N(a)| <= a ((1 + (L-1)/(N-L+1))^{L-1} - 1) on the grid, and sup_a |A^N| decays like 1/N.
inline std::vector<Verdict> check_sampling_scaling() {
  double worst_excess = 0.0;
  std::vector<double> ns{10, 100, 1000, 10000}, sups;
  for (int L = 2; L <= 5; ++L) {
    for (double nd : ns) {
      const auto n = static_cast<std::int64_t>(nd);
      const double tmax = static_cast<double>(L - 1) / static_cast<double>(n - L + 1);
      const double c = std::pow(1.0 + tmax, L - 1) - 1.0;
      double sup = 0.0;
      for (int i = 0; i <= 100; ++i) {
        const double a = i / 100.0;
        const double A = std::abs(sampling_correction_A(a, n, L));
        worst_excess = std::max(worst_excess, A - a * c);
        sup = std::max(sup, A);
      }
      if (L == 2) sups.push_back(sup);
    }
  }
  const auto fit = fit_rate(ns, sups);
  return {verify_detail::le("sampling_correction_bound", worst_excess, 1e-15),
          {"sampling_correction_rate", fit.slope, -1.0, std::abs(fit.slope + 1.0) <= 0.05,
           "log-log slope of sup_a |A^N(a)| over N in {10,100,1000,10000}, L=2"}};
}

/// Binomial-sum form of B vs its definition, and 0 <= B <= h^L + (2^L - L - 2) a h^2 for a, a+h in [0, 1].
inline std::vector<Verdict> check_binomial_remainder() {
  double worst_identity = 0.0, worst_lower = 0.0, worst_upper = 0.0;
  for (int L = 1; L <= 5; ++L)
    for (int i = 0; i <= 100; ++i)
      for (int j = 0; j <= 100; ++j) {
        const double a = i / 100.0, b = j / 100.0, h = b - a;
        const double B = binomial_remainder_B(a, h, L);
        const double direct = ipow(a + h, L) - ipow(a, L) - L * ipow(a, L - 1) * h;
        worst_identity = std::max(worst_identity, std::abs(B - direct));
        if (L >= 2) {
          worst_lower = std::max(worst_lower, -B);
          worst_upper = std::max(worst_upper, B - (ipow(h, L) + (std::pow(2.0, L) - L - 2) * a * h * h));
        }
      }
  return {verify_detail::le("binomial_remainder_identity", worst_identity, 1e-13),
          verify_detail::le("binomial_remainder_lower_bound", worst_lower, 1e-15),
          verify_detail::le("binomial_remainder_upper_bound", worst_upper, 1e-14)};
}

/// F^N+ - F+ == G^N componentwise on random lattice tails.
inline Verdict check_finite_n_decomposition(std::uint64_t seed, int samples = 1000) {
  auto rng = make_rng(seed, 0, 101);
  double worst = 0.0;
  const auto ps = verify_detail::parameter_grid();
  for (int s = 0; s < samples; ++s) {
    const auto& p = ps[static_cast<std::size_t>(s) % ps.size()];
    const auto r = random_empirical(p.L, 200, 8, rng);
    const auto v = r.to_tail(8);
    const auto fn = finite_N_drift(r, p, 8);
    const auto f = drift(v, p);
    const auto g = correction_G(v, r.n(), p);
    for (std::size_t k = 1; k <= 8; ++k) worst = std::max(worst, std::abs(fn.plus[k] - f.plus[k] - g[k]));
  }
  return verify_detail::le("finite_n_decomposition", worst, 1e-13);
}

/// F(v+x) - F(v) == K(v)x + H(v,x) on random pairs of valid tails.
inline Verdict check_linearization(std::uint64_t seed, int samples = 1000) {
  auto rng = make_rng(seed, 0, 102);
  double worst = 0.0;
  const auto ps = verify_detail::parameter_grid();
  for (int s = 0; s < samples; ++s) {
    const auto& p = ps[static_cast<std::size_t>(s) % ps.size()];
    const auto v = random_tail(10, rng);
    const auto y = random_tail(10, rng);
    std::vector<double> x(v.size());
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = y[k] - v[k];
    worst = std::max(worst, linearization_residual(v, x, p, p));
  }
  return verify_detail::le("linearization_decomposition", worst, 1e-13);
}

/// ||K(v)x||_{L2(w)} <= bound ||x||_{L2(w)} on random (v, x, theta).
inline Verdict check_operator_norm(std::uint64_t seed, int samples = 10000) {
  auto rng = make_rng(seed, 0, 103);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst_ratio = 0.0;
  const auto ps = verify_detail::parameter_grid();
  constexpr std::size_t K = 12;
  for (int s = 0; s < samples; ++s) {
    const auto& p = ps[static_cast<std::size_t>(s) % ps.size()];
    const auto w = geometric_weights(0.05 + 0.95 * unif(rng), K);
    const auto v = random_tail(K, rng);
    std::vector<double> x(K + 1, 0.0);
    // Scale coordinates like sqrt(w) so no single coordinate dominates the norm.
    for (std::size_t k = 1; k <= K; ++k) x[k] = normal(rng) * std::sqrt(w(k));
    const double nx = weighted_l2(x, w);
    if (nx == 0.0) continue;
    const double nkx = weighted_l2(build_K(v, p).apply(x), w);
    worst_ratio = std::max(worst_ratio, nkx / (nx * operator_norm_bound(p, w)));
  }
  return verify_detail::le("operator_norm_bound", worst_ratio, 1.0,
                           "max ||K(v)x|| / (bound ||x||) over random samples");
}

/// ||F(u) - F(v)||_{l1(w)} <= [aL(d+1) + b(1/c+1)] ||u - v||_{l1(w)}.
inline Verdict check_lipschitz(std::uint64_t seed, int samples = 1000) {
  auto rng = make_rng(seed, 0, 104);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double worst_ratio = 0.0;
  const auto ps = verify_detail::parameter_grid();
  constexpr std::size_t K = 12;
  for (int s = 0; s < samples; ++s) {
    const auto& p = ps[static_cast<std::size_t>(s) % ps.size()];
    const auto w = geometric_weights(0.05 + 0.95 * unif(rng), K);
    const auto u = random_tail(K, rng), v = random_tail(K, rng);
    const auto fu = drift_total(u.span(), p), fv = drift_total(v.span(), p);
    std::vector<double> df(K + 1), dx(K + 1);
    for (std::size_t k = 0; k <= K; ++k) {
      df[k] = fu[k] - fv[k];
      dx[k] = u[k] - v[k];
    }
    const double ndx = weighted_l1(dx, w);
    if (ndx == 0.0) continue;
    const double lip = p.alpha * p.L * (w.d() + 1.0) + p.beta * (1.0 / w.c() + 1.0);
    worst_ratio = std::max(worst_ratio, weighted_l1(df, w) / (lip * ndx));
  }
  return verify_detail::le("drift_lipschitz_l1w", worst_ratio, 1.0);
}

/// Truncated K(v) column sums are <= 0.
inline Verdict check_column_sums(std::uint64_t seed, int samples = 1000) {
  auto rng = make_rng(seed, 0, 105);
  double worst = -std::numeric_limits<double>::infinity();
  const auto ps = verify_detail::parameter_grid();
  for (int s = 0; s < samples; ++s) {
    const auto& p = ps[static_cast<std::size_t>(s) % ps.size()];
    const auto cs = build_K(random_tail(10, rng), p).column_sums();
    for (std::size_t j = 1; j < cs.size(); ++j) worst = std::max(worst, cs[j]);
  }
  return verify_detail::le("K_column_sums_nonpositive", worst, 1e-14);
}

/// Propagator composition: apply(m, t) o apply(s, m) == apply(s, t).
inline Verdict check_semigroup() {
  const ModelParams p(1.0, 2.0, 2);
  const std::size_t K = choose_horizon(p, 0);
  const auto ode = integrate_ode(TailVector::empty(K), p, 2.0, default_dt(p));
  std::vector<double> z0(K + 1, 0.0);
  z0[1] = 1.0;
  z0[2] = -0.5;
  z0[3] = 0.25;
  const auto direct = propagator_apply(z0, ode, p, 0.3, 1.7);
  const auto composed = propagator_apply(propagator_apply(z0, ode, p, 0.3, 0.9), ode, p, 0.9, 1.7);
  double worst = 0.0;
  for (std::size_t k = 0; k <= K; ++k) worst = std::max(worst, std::abs(direct[k] - composed[k]));
  return verify_detail::le("propagator_semigroup", worst, 1e-9);
}

/// F(u~) == 0 at the fixed point.
inline Verdict check_fixed_point() {
  double worst = 0.0;
  for (int L = 1; L <= 5; ++L) {
    const ModelParams p(1.0, 2.0, L);
    const auto u = fixed_point(p, choose_horizon(p, 0));
    for (double f : drift_total(u.span(), p)) worst = std::max(worst, std::abs(f));
  }
  return verify_detail::le("fixed_point_residual", worst, 1e-12);
}

/// Full suite, deterministic for a given seed.
inline std::vector<Verdict> run_identity_suite(std::uint64_t seed = 1) {
  std::vector<Verdict> out;
  out.push_back(check_sampling_identity());
  for (auto& v : check_sampling_scaling()) out.push_back(std::move(v));
  for (auto& v : check_binomial_remainder()) out.push_back(std::move(v));
  out.push_back(check_finite_n_decomposition(seed));
  out.push_back(check_linearization(seed));
  out.push_back(check_operator_norm(seed));
  out.push_back(check_lipschitz(seed));
  out.push_back(check_column_sums(seed));
  out.push_back(check_semigroup());
  out.push_back(check_fixed_point());
  return out;
}

}  // namespace jsq
