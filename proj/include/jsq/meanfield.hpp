#pragma once

// Mean-field limit of the tail process: the drift F = F+ - F-, its finite-N
// counterpart built on falling factorials, the correction terms relating the
// two, the fixed point, and a fixed-step RK4 integrator for u' = F(u).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "jsq/seqspace.hpp"

namespace jsq {

/// x^n for a nonnegative integer n, exact repeated multiplication.
inline double ipow(double x, int n) {
  double r = 1.0;
  for (;;) {
    if (n & 1) r *= x;
    n >>= 1;
    if (n == 0) break;
    x *= x;
  }
  return r;
}

/// (x)_L / (N)_L as the product of ratios (x - i) / (N - i).
inline double falling_factorial_ratio(double x, std::int64_t n, int L) {
  double r = 1.0;
  for (int i = 0; i < L; ++i) r *= (x - i) / static_cast<double>(n - i);
  return r;
}

/// A^N(a) = (Na)_L/(N)_L - a^L, evaluated by the expansion
///   sum_{j=1}^{L-1} (a-1)^j a^{L-j} e_j(t_1, ..., t_{L-1}),  t_i = i/(N-i),
/// where e_j is the j-th elementary symmetric polynomial.
inline double sampling_correction_A(double a, std::int64_t n, int L) {
  if (L < 1 || n < L) throw std::invalid_argument("sampling_correction_A: requires N >= L >= 1");
  // e[j] accumulates e_j over t_1..t_i.
  std::vector<double> e(static_cast<std::size_t>(L), 0.0);
  e[0] = 1.0;
  for (int i = 1; i <= L - 1; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - i);
    for (int j = i; j >= 1; --j) e[j] += t * e[j - 1];
  }
  double s = 0.0;
  for (int j = 1; j <= L - 1; ++j) s += ipow(a - 1.0, j) * ipow(a, L - j) * e[j];
  return s;
}

/// B(a, h) = (a+h)^L - a^L - L a^{L-1} h = sum_{i=2}^{L} C(L,i) a^{L-i} h^i.
inline double binomial_remainder_B(double a, double h, int L) {
  if (L < 1) throw std::invalid_argument("binomial_remainder_B: L must be >= 1");
  double s = 0.0;
  double binom = L;  // C(L, 1)
  for (int i = 2; i <= L; ++i) {
    binom = binom * (L - i + 1) / i;
    s += binom * ipow(a, L - i) * ipow(h, i);
  }
  return s;
}

/// Drift split into arrival (plus) and service (minus) parts; index 0 is unused and zero.
struct DriftField {
  std::vector<double> plus;
  std::vector<double> minus;

  std::size_t k_max() const { return plus.empty() ? 0 : plus.size() - 1; }
  std::vector<double> total() const {
    std::vector<double> t(plus.size());
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = plus[k] - minus[k];
    return t;
  }
};

namespace detail {
inline void drift_total(std::span<const double> v, const ModelParams& p, std::span<double> out) {
  const std::size_t n = v.size();
  out[0] = 0.0;
  double prev_pow = ipow(v[0], p.L);
  for (std::size_t k = 1; k < n; ++k) {
    const double cur_pow = ipow(v[k], p.L);
    const double next = k + 1 < n ? v[k + 1] : 0.0;
    out[k] = p.alpha * (prev_pow - cur_pow) - p.beta * (v[k] - next);
    prev_pow = cur_pow;
  }
}
}  // namespace detail

/// F+(v)(k) = alpha (v(k-1)^L - v(k)^L), F-(v)(k) = beta (v(k) - v(k+1)), k = 1..K_max.
inline DriftField drift(const TailVector& v, const ModelParams& p) {
  const std::size_t K = v.k_max();
  DriftField f{std::vector<double>(K + 1, 0.0), std::vector<double>(K + 1, 0.0)};
  for (std::size_t k = 1; k <= K; ++k) {
    f.plus[k] = p.alpha * (ipow(v(k - 1), p.L) - ipow(v(k), p.L));
    f.minus[k] = p.beta * (v(k) - v(k + 1));
  }
  return f;
}

/// Raw-vector form of F; no tail validation.
inline std::vector<double> drift_total(std::span<const double> v, const ModelParams& p) {
  std::vector<double> out(v.size());
  detail::drift_total(v, p, out);
  return out;
}

/// Error thrown when a fixed point is requested in the unstable regime.
struct UnstableRegime : std::domain_error {
  using std::domain_error::domain_error;
};

/// u~(k) = rho^{(L^k - 1)/(L - 1)}; the exponent is k when L = 1.
inline TailVector fixed_point(const ModelParams& p, std::size_t k_max) {
  const double rho = p.rho();
  if (!(rho < 1.0)) throw UnstableRegime("fixed_point: rho >= 1, no stable fixed point");
  std::vector<double> u(k_max + 1);
  u[0] = 1.0;
  double Lk = 1.0;  // L^k
  for (std::size_t k = 1; k <= k_max; ++k) {
    Lk *= p.L;
    const double exponent = p.L == 1 ? static_cast<double>(k) : (Lk - 1.0) / (p.L - 1.0);
    u[k] = std::pow(rho, exponent);
  }
  return TailVector(std::move(u));
}

/// Finite-N drift F^N on coordinates k = 1..k_out:
/// F^N+(r)(k) = alpha [(N r(k-1))_L - (N r(k))_L] / (N)_L, F^N- = F-.
inline DriftField finite_N_drift(const EmpiricalTail& r, const ModelParams& p, std::size_t k_out) {
  const std::int64_t n = r.n();
  if (n < p.L) throw std::invalid_argument("finite_N_drift: requires N >= L");
  DriftField f{std::vector<double>(k_out + 1, 0.0), std::vector<double>(k_out + 1, 0.0)};
  double prev = falling_factorial_ratio(static_cast<double>(r.count(0)), n, p.L);
  for (std::size_t k = 1; k <= k_out; ++k) {
    const double cur = falling_factorial_ratio(static_cast<double>(r.count(k)), n, p.L);
    f.plus[k] = p.alpha * (prev - cur);
    f.minus[k] = p.beta * static_cast<double>(r.count(k) - r.count(k + 1)) / static_cast<double>(n);
    prev = cur;
  }
  return f;
}

/// Default horizon: one coordinate past the occupied levels.
inline DriftField finite_N_drift(const EmpiricalTail& r, const ModelParams& p) {
  return finite_N_drift(r, p, r.support() + 1);
}

/// G^N(v)(k) = alpha A^N(v(k-1)) - alpha A^N(v(k)), so that F^N = F + G^N.
inline std::vector<double> correction_G(const TailVector& v, std::int64_t n, const ModelParams& p) {
  if (n < p.L) throw std::invalid_argument("correction_G: requires N >= L");
  std::vector<double> g(v.size(), 0.0);
  double prev = sampling_correction_A(v(0), n, p.L);
  for (std::size_t k = 1; k < v.size(); ++k) {
    const double cur = sampling_correction_A(v(k), n, p.L);
    g[k] = p.alpha * (prev - cur);
    prev = cur;
  }
  return g;
}

/// H(v,x)(k) = alpha B(v(k-1), x(k-1)) - alpha B(v(k), x(k)), so that
/// F(v+x) - F(v) = K(v)x + H(v,x).
inline std::vector<double> remainder_H(const TailVector& v, std::span<const double> x,
                                       const ModelParams& p) {
  if (x.size() != v.size()) throw std::invalid_argument("remainder_H: size mismatch");
  std::vector<double> h(v.size(), 0.0);
  double prev = binomial_remainder_B(v(0), x[0], p.L);
  for (std::size_t k = 1; k < v.size(); ++k) {
    const double cur = binomial_remainder_B(v(k), x[k], p.L);
    h[k] = p.alpha * (prev - cur);
    prev = cur;
  }
  return h;
}

/// Horizon rule: smallest K with u~(K) < 1e-14 that also covers the support of u0,
/// never below k_floor. Falls back to `fallback` when no stable fixed point exists.
inline std::size_t choose_horizon(const ModelParams& p, std::size_t u0_support,
                                  std::size_t fallback = 64, std::size_t k_floor = 4) {
  std::size_t K = std::max(k_floor, u0_support + 1);
  if (!p.stable()) return std::max(K, fallback);
  constexpr std::size_t k_cap = 4096;
  while (K < k_cap && fixed_point(p, K)[K] >= 1e-14) ++K;
  return K;
}

/// Default step 1e-3 min(1/alpha, 1/beta).
inline double default_dt(const ModelParams& p) {
  const double fastest = std::max(p.alpha, p.beta);
  return 1e-3 / fastest;
}

/// Thrown when an RK4 step leaves [-1e-6, 1 + 1e-6] before clamping.
struct StepRejected : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Stored ODE trajectory u_t on a uniform grid, linearly interpolated between knots.
class OdeSolution {
 public:
  OdeSolution(std::vector<double> times, std::vector<TailVector> states, ModelParams params)
      : times_(std::move(times)), states_(std::move(states)), params_(params) {
    if (times_.empty() || times_.size() != states_.size())
      throw std::invalid_argument("OdeSolution: times/states mismatch");
    for (std::size_t i = 1; i < times_.size(); ++i)
      if (!(times_[i] > times_[i - 1])) throw std::invalid_argument("OdeSolution: times must increase");
  }

  /// u_t == u for all t on [0, T], knots every dt.
  static OdeSolution constant(const TailVector& u, const ModelParams& p, double T, double dt) {
    const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(T / dt - 1e-9)));
    std::vector<double> times(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) times[i] = T * static_cast<double>(i) / steps;
    return OdeSolution(std::move(times), std::vector<TailVector>(steps + 1, u), p);
  }

  const std::vector<double>& times() const { return times_; }
  const std::vector<TailVector>& states() const { return states_; }
  const ModelParams& params() const { return params_; }
  std::size_t k_max() const { return states_.front().k_max(); }
  double t_begin() const { return times_.front(); }
  double t_end() const { return times_.back(); }
  double dt() const { return times_.size() > 1 ? times_[1] - times_[0] : 0.0; }
  bool covers(double t) const { return t >= t_begin() - 1e-12 && t <= t_end() + 1e-12; }

  /// Linear interpolation into `out` (size k_max + 1).
  void interpolate(double t, std::span<double> out) const {
    if (!covers(t)) throw std::out_of_range("OdeSolution: time outside horizon");
    if (times_.size() == 1 || t <= times_.front()) return copy_state(0, out);
    if (t >= times_.back()) return copy_state(times_.size() - 1, out);
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - times_.begin()) - 1;
    const double lam = (t - times_[i]) / (times_[i + 1] - times_[i]);
    const auto& a = states_[i];
    const auto& b = states_[i + 1];
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = (1.0 - lam) * a(k) + lam * b(k);
  }

  TailVector at(double t) const {
    std::vector<double> v(k_max() + 1);
    interpolate(t, v);
    v[0] = 1.0;
    // Convex combinations of valid tails are valid up to the last ulp.
    for (std::size_t k = 1; k < v.size(); ++k) v[k] = std::clamp(v[k], 0.0, v[k - 1]);
    return TailVector(std::move(v));
  }

  /// CSV (t, v(1), ..., v(K_max)).
  void write_csv(std::ostream& os) const {
    os << 't';
    for (std::size_t k = 1; k <= k_max(); ++k) os << ",v" << k;
    os << '\n';
    for (std::size_t i = 0; i < times_.size(); ++i) {
      os << format_double(times_[i]);
      for (std::size_t k = 1; k <= k_max(); ++k) os << ',' << format_double(states_[i][k]);
      os << '\n';
    }
  }

 private:
  void copy_state(std::size_t i, std::span<double> out) const {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = states_[i](k);
  }

  std::vector<double> times_;
  std::vector<TailVector> states_;
  ModelParams params_;
};

namespace detail {
/// v(0) = 1, clip to [0, 1], running minimum for monotonicity.
inline void clamp_tail(std::span<double> v) {
  v[0] = 1.0;
  for (std::size_t k = 1; k < v.size(); ++k) v[k] = std::min(std::clamp(v[k], 0.0, 1.0), v[k - 1]);
}
}  // namespace detail

/// Classical RK4 for u' = F(u) on [0, T] with the step shrunk to divide T evenly.
/// Every stored state is clamped to a valid tail.
inline OdeSolution integrate_ode(const TailVector& u0, const ModelParams& p, double T, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("integrate_ode: dt must be positive");
  if (!(T >= 0.0)) throw std::invalid_argument("integrate_ode: T must be nonnegative");
  const auto steps = static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
  const double h = steps > 0 ? T / static_cast<double>(steps) : 0.0;
  const std::size_t n = u0.size();

  std::vector<double> times{0.0};
  std::vector<TailVector> states{u0};
  times.reserve(steps + 1);
  states.reserve(steps + 1);

  std::vector<double> u(u0.values()), k1(n), k2(n), k3(n), k4(n), tmp(n);
  for (std::size_t s = 1; s <= steps; ++s) {
    detail::drift_total(u, p, k1);
    for (std::size_t k = 0; k < n; ++k) tmp[k] = u[k] + 0.5 * h * k1[k];
    detail::drift_total(tmp, p, k2);
    for (std::size_t k = 0; k < n; ++k) tmp[k] = u[k] + 0.5 * h * k2[k];
    detail::drift_total(tmp, p, k3);
    for (std::size_t k = 0; k < n; ++k) tmp[k] = u[k] + h * k3[k];
    detail::drift_total(tmp, p, k4);
    for (std::size_t k = 0; k < n; ++k) {
      u[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
      if (u[k] < -1e-6 || u[k] > 1.0 + 1e-6)
        throw StepRejected("integrate_ode: state left [0, 1]; decrease dt");
    }
    detail::clamp_tail(u);
    times.push_back(h * static_cast<double>(s));
    states.emplace_back(u);
  }
  return OdeSolution(std::move(times), std::move(states), p);
}

}  // namespace jsq
