#pragma once

// Linearized dynamics around the mean-field trajectory and the limiting
// Ornstein-Uhlenbeck fluctuation process dZ = K(u_t) Z dt + dM_t, where the
// coordinates of M are independent Gaussian martingales with bracket rates
// Lambda(u)(k) = F+(u)(k) + F-(u)(k).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "jsq/meanfield.hpp"
#include "jsq/rng.hpp"
#include "jsq/seqspace.hpp"

namespace jsq {

/// Tridiagonal truncation of K(v) on coordinates 1..dim with x(dim+1) = 0:
///   (K(v)x)(k) = sub(k) x(k-1) + diag(k) x(k) + sup(k) x(k+1)
/// with sub(k) = alpha L v(k-1)^{L-1}, diag(k) = -(alpha L v(k)^{L-1} + beta), sup(k) = beta.
/// Arrays are indexed by row k; index 0 is unused. sub(1) multiplies x(0) = 0.
class TriDiagOperator {
 public:
  TriDiagOperator(const TailVector& v, const ModelParams& p, std::size_t dim)
      : sub_(dim + 1, 0.0), diag_(dim + 1, 0.0), sup_(dim + 1, 0.0), evaluated_at_(v) {
    if (dim == 0) throw std::invalid_argument("TriDiagOperator: dimension must be positive");
    const double aL = p.alpha * p.L;
    for (std::size_t k = 1; k <= dim; ++k) {
      sub_[k] = aL * ipow(v(k - 1), p.L - 1);
      diag_[k] = -(aL * ipow(v(k), p.L - 1) + p.beta);
      sup_[k] = k < dim ? p.beta : 0.0;
    }
  }

  std::size_t dim() const { return diag_.size() - 1; }
  const std::vector<double>& sub() const { return sub_; }
  const std::vector<double>& diag() const { return diag_; }
  const std::vector<double>& sup() const { return sup_; }
  const TailVector& evaluated_at() const { return evaluated_at_; }

  /// y = K x for x indexed 0..dim (x(0) ignored, treated as 0).
  std::vector<double> apply(std::span<const double> x) const {
    if (x.size() != dim() + 1) throw std::invalid_argument("TriDiagOperator::apply: size mismatch");
    std::vector<double> y(x.size(), 0.0);
    for (std::size_t k = 1; k <= dim(); ++k) {
      y[k] = diag_[k] * x[k];
      if (k > 1) y[k] += sub_[k] * x[k - 1];
      if (k < dim()) y[k] += sup_[k] * x[k + 1];
    }
    return y;
  }

  /// Column sums of the truncated matrix, indexed by column j = 1..dim.
  std::vector<double> column_sums() const {
    std::vector<double> s(dim() + 1, 0.0);
    for (std::size_t j = 1; j <= dim(); ++j) {
      s[j] = diag_[j];
      if (j < dim()) s[j] += sub_[j + 1];
      if (j > 1) s[j] += sup_[j - 1];
    }
    return s;
  }

  /// Dense dim x dim matrix, row/column i <-> coordinate i + 1.
  Eigen::MatrixXd dense() const {
    const auto n = static_cast<Eigen::Index>(dim());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i + 1);
      m(i, i) = diag_[k];
      if (i > 0) m(i, i - 1) = sub_[k];
      if (i + 1 < n) m(i, i + 1) = sup_[k];
    }
    return m;
  }

  /// A K (left multiply of a dense matrix by this operator), O(dim^2).
  Eigen::MatrixXd left_multiply(const Eigen::MatrixXd& a) const {
    const auto n = static_cast<Eigen::Index>(dim());
    Eigen::MatrixXd out(n, a.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i + 1);
      out.row(i) = diag_[k] * a.row(i);
      if (i > 0) out.row(i) += sub_[k] * a.row(i - 1);
      if (i + 1 < n) out.row(i) += sup_[k] * a.row(i + 1);
    }
    return out;
  }

 private:
  std::vector<double> sub_, diag_, sup_;
  TailVector evaluated_at_;
};

inline TriDiagOperator build_K(const TailVector& v, const ModelParams& p) {
  return TriDiagOperator(v, p, v.k_max());
}

/// sqrt(2 (aL + b)(aL(d + 1) + b(1/c + 1))): uniform bound on ||K(v)||_{L2(w)}.
inline double operator_norm_bound(const ModelParams& p, const WeightSeq& w) {
  const double aL = p.alpha * p.L;
  return std::sqrt(2.0 * (aL + p.beta) * (aL * (w.d() + 1.0) + p.beta * (1.0 / w.c() + 1.0)));
}

/// Lambda(u)(k) = F+(u)(k) + F-(u)(k), k = 1..K_max.
inline std::vector<double> bracket_rate(const TailVector& u, const ModelParams& p) {
  const auto f = drift(u, p);
  std::vector<double> lam(f.plus.size());
  for (std::size_t k = 0; k < lam.size(); ++k) lam[k] = f.plus[k] + f.minus[k];
  return lam;
}

// ---------------------------------------------------------------------------
// Second moments

/// Symmetric PSD covariance of (Z(1), ..., Z(dim)); entry (i, j) <-> coordinates (i+1, j+1).
using CovarianceMatrix = Eigen::MatrixXd;

inline double min_eigenvalue(const CovarianceMatrix& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline bool is_psd(const CovarianceMatrix& s, double tol = 1e-10) {
  return s.rows() == s.cols() && (s - s.transpose()).cwiseAbs().maxCoeff() <= 1e-12 &&
         min_eigenvalue(s) >= -tol;
}

/// Covariance of the tail indicators of N i.i.d. queues with tail q, scaled by N:
/// Sigma0(j, k) = q(max(j, k)) - q(j) q(k).
inline CovarianceMatrix iid_initial_covariance(const TailVector& q, std::size_t dim) {
  const auto n = static_cast<Eigen::Index>(dim);
  CovarianceMatrix s(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto a = static_cast<std::size_t>(i + 1), b = static_cast<std::size_t>(j + 1);
      s(i, j) = q(std::max(a, b)) - q(a) * q(b);
    }
  return s;
}

struct CovarianceTrajectory {
  std::vector<double> times;
  std::vector<CovarianceMatrix> sigmas;

  const CovarianceMatrix& final() const { return sigmas.back(); }

  /// CSV (t, s_11, s_12, ..., upper triangle row by row).
  void write_csv(std::ostream& os) const {
    if (sigmas.empty()) return;
    const auto n = sigmas.front().rows();
    os << 't';
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i; j < n; ++j) os << ",s_" << i + 1 << '_' << j + 1;
    os << '\n';
    for (std::size_t r = 0; r < times.size(); ++r) {
      os << format_double(times[r]);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) os << ',' << format_double(sigmas[r](i, j));
      os << '\n';
    }
  }
};

namespace detail {
/// K(u_t) and Lambda(u_t) truncated to `dim`, with u_t read from the ODE.
struct LinearCoefficients {
  LinearCoefficients(const OdeSolution& ode, const ModelParams& p, std::size_t dim)
      : ode_(ode), p_(p), dim_(dim), u_(std::max(dim, ode.k_max()) + 2) {}

  TriDiagOperator op(double t) {
    load(t);
    return TriDiagOperator(TailVector(u_), p_, dim_);
  }
  /// Lambda(u_t)(k) for k = 1..dim into lam (size dim + 1).
  void noise(double t, std::span<double> lam) {
    load(t);
    lam[0] = 0.0;
    for (std::size_t k = 1; k <= dim_; ++k) {
      const double plus = p_.alpha * (ipow(u_[k - 1], p_.L) - ipow(u_[k], p_.L));
      const double minus = p_.beta * (u_[k] - u_[k + 1]);
      lam[k] = std::max(0.0, plus + minus);
    }
  }
  /// Fused operator and noise evaluation, for the Euler-Maruyama loop.
  void coefficients(double t, std::span<double> sub, std::span<double> diag, std::span<double> lam) {
    load(t);
    const double aL = p_.alpha * p_.L;
    lam[0] = 0.0;
    double prev_pow = ipow(u_[0], p_.L - 1);
    for (std::size_t k = 1; k <= dim_; ++k) {
      const double cur_pow = ipow(u_[k], p_.L - 1);
      sub[k] = aL * prev_pow;
      diag[k] = -(aL * cur_pow + p_.beta);
      const double plus = p_.alpha * (prev_pow * u_[k - 1] - cur_pow * u_[k]);
      const double minus = p_.beta * (u_[k] - u_[k + 1]);
      lam[k] = std::max(0.0, plus + minus);
      prev_pow = cur_pow;
    }
  }

 private:
  void load(double t) {
    std::fill(u_.begin(), u_.end(), 0.0);
    ode_.interpolate(t, std::span<double>(u_).first(ode_.k_max() + 1));
    u_[0] = 1.0;
    for (std::size_t k = 1; k < u_.size(); ++k) u_[k] = std::clamp(u_[k], 0.0, u_[k - 1]);
  }

  const OdeSolution& ode_;
  ModelParams p_;
  std::size_t dim_;
  std::vector<double> u_;
};

inline std::size_t grid_steps(double span, double h) {
  return static_cast<std::size_t>(std::max(1.0, std::ceil(span / h - 1e-9)));
}
}  // namespace detail

/// RK4 for Sigma' = K(u_t) Sigma + Sigma K(u_t)^T + diag(Lambda(u_t)) on [0, T],
/// on the ODE's grid spacing. K and Lambda come from the full u_t, truncated to
/// the top-left block of size sigma0.rows(). Every `stride`-th step is recorded,
/// plus the final one.
inline CovarianceTrajectory evolve_covariance(const CovarianceMatrix& sigma0, const OdeSolution& ode,
                                              const ModelParams& p, double T, std::size_t stride = 1) {
  if (sigma0.rows() != sigma0.cols() || sigma0.rows() == 0)
    throw std::invalid_argument("evolve_covariance: sigma0 must be square and nonempty");
  if (T > ode.t_end() + 1e-12 || T < ode.t_begin())
    throw std::out_of_range("evolve_covariance: ODE horizon shorter than T");
  const auto dim = static_cast<std::size_t>(sigma0.rows());
  detail::LinearCoefficients coef(ode, p, dim);
  std::vector<double> lam(dim + 1);

  auto rhs = [&](double t, const CovarianceMatrix& s) {
    const auto op = coef.op(t);
    coef.noise(t, lam);
    CovarianceMatrix ks = op.left_multiply(s);
    CovarianceMatrix out = ks + ks.transpose();
    for (std::size_t k = 1; k <= dim; ++k) out(k - 1, k - 1) += lam[k];
    return out;
  };

  const double t0 = ode.t_begin();
  const std::size_t steps = T > t0 ? detail::grid_steps(T - t0, ode.dt()) : 0;
  const double h = steps > 0 ? (T - t0) / static_cast<double>(steps) : 0.0;
  CovarianceTrajectory traj;
  CovarianceMatrix s = sigma0;
  traj.times.push_back(t0);
  traj.sigmas.push_back(s);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = t0 + h * static_cast<double>(i);
    const CovarianceMatrix a = rhs(t, s);
    const CovarianceMatrix b = rhs(t + 0.5 * h, s + 0.5 * h * a);
    const CovarianceMatrix c = rhs(t + 0.5 * h, s + 0.5 * h * b);
    const CovarianceMatrix d = rhs(t + h, s + h * c);
    s += h / 6.0 * (a + 2.0 * b + 2.0 * c + d);
    s = 0.5 * (s + s.transpose()).eval();
    if ((i + 1) % std::max<std::size_t>(stride, 1) == 0 || i + 1 == steps) {
      traj.times.push_back(t + h);
      traj.sigmas.push_back(s);
    }
  }
  return traj;
}

/// Solves z' = K(u_r) z from r = s to r = t by RK4 on the ODE grid spacing.
/// z0 is indexed 0..dim with z0[0] = 0; the result has the same size.
inline std::vector<double> propagator_apply(std::span<const double> z0, const OdeSolution& ode,
                                            const ModelParams& p, double s, double t) {
  if (s > t || !ode.covers(s) || !ode.covers(t))
    throw std::out_of_range("propagator_apply: [s, t] outside the ODE horizon");
  if (z0.size() < 2) throw std::invalid_argument("propagator_apply: empty state");
  std::vector<double> z(z0.begin(), z0.end());
  z[0] = 0.0;
  if (s == t) return z;
  const std::size_t dim = z.size() - 1;
  detail::LinearCoefficients coef(ode, p, dim);
  const std::size_t steps = detail::grid_steps(t - s, ode.dt());
  const double h = (t - s) / static_cast<double>(steps);
  std::vector<double> tmp(z.size());
  for (std::size_t i = 0; i < steps; ++i) {
    const double r = s + h * static_cast<double>(i);
    const auto op0 = coef.op(r);
    const auto op_mid = coef.op(r + 0.5 * h);
    const auto op1 = coef.op(r + h);
    const auto k1 = op0.apply(z);
    for (std::size_t k = 0; k < z.size(); ++k) tmp[k] = z[k] + 0.5 * h * k1[k];
    const auto k2 = op_mid.apply(tmp);
    for (std::size_t k = 0; k < z.size(); ++k) tmp[k] = z[k] + 0.5 * h * k2[k];
    const auto k3 = op_mid.apply(tmp);
    for (std::size_t k = 0; k < z.size(); ++k) tmp[k] = z[k] + h * k3[k];
    const auto k4 = op1.apply(tmp);
    for (std::size_t k = 0; k < z.size(); ++k) z[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
  }
  return z;
}

/// Z_t of the OU process; z[0] == 0 always.
struct OuState {
  std::vector<double> z;
  double t = 0.0;
};

struct OuPath {
  std::vector<OuState> states;

  const OuState& final() const { return states.back(); }

  /// CSV (t, z1, ..., zK).
  void write_csv(std::ostream& os) const {
    if (states.empty()) return;
    const std::size_t dim = states.front().z.size() - 1;
    os << 't';
    for (std::size_t k = 1; k <= dim; ++k) os << ",z" << k;
    os << '\n';
    for (const auto& s : states) {
      os << format_double(s.t);
      for (std::size_t k = 1; k <= dim; ++k) os << ',' << format_double(s.z[k]);
      os << '\n';
    }
  }
};

/// Euler-Maruyama on [z0.t, T]:
///   z <- z + K(u_t) z dt + sqrt(Lambda(u_t) dt) xi,  xi i.i.d. N(0, 1) per coordinate.
/// The dimension is z0.z.size() - 1. Every `stride`-th step is recorded, plus the last.
/// `noise_scale` multiplies the diffusion (0 gives the deterministic linear flow).
inline OuPath simulate_ou_path(const OuState& z0, const OdeSolution& ode, const ModelParams& p, double T,
                               double dt, Rng& rng, std::size_t stride = 1, double noise_scale = 1.0) {
  if (!(dt > 0.0)) throw std::invalid_argument("simulate_ou_path: dt must be positive");
  if (z0.z.size() < 2) throw std::invalid_argument("simulate_ou_path: empty state");
  if (!ode.covers(z0.t) || !ode.covers(T)) throw std::out_of_range("simulate_ou_path: outside ODE horizon");
  const std::size_t dim = z0.z.size() - 1;
  detail::LinearCoefficients coef(ode, p, dim);
  std::vector<double> sub(dim + 1), diag(dim + 1), lam(dim + 1), z(z0.z), next(dim + 1);
  z[0] = 0.0;
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t steps = T > z0.t ? detail::grid_steps(T - z0.t, dt) : 0;
  const double h = steps > 0 ? (T - z0.t) / static_cast<double>(steps) : 0.0;
  const double sqrt_h = std::sqrt(h);
  OuPath path;
  path.states.push_back({z, z0.t});
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = z0.t + h * static_cast<double>(i);
    coef.coefficients(t, sub, diag, lam);
    next[0] = 0.0;
    for (std::size_t k = 1; k <= dim; ++k) {
      double drift = diag[k] * z[k];
      if (k > 1) drift += sub[k] * z[k - 1];
      if (k < dim) drift += p.beta * z[k + 1];
      next[k] = z[k] + drift * h + noise_scale * std::sqrt(lam[k]) * sqrt_h * normal(rng);
    }
    z.swap(next);
    if ((i + 1) % std::max<std::size_t>(stride, 1) == 0 || i + 1 == steps)
      path.states.push_back({z, t + h});
  }
  return path;
}

}  // namespace jsq
