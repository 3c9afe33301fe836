#pragma once

// Replica-level statistics: moments, Kolmogorov-Smirnov tests, log-log rate
// fits and pass/fail verdict records.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace jsq {

/// M x K matrix: one row per replica, one column per coordinate/functional.
struct ReplicaEnsemble {
  Eigen::MatrixXd values;
  nlohmann::json meta = nlohmann::json::object();

  Eigen::Index replicas() const { return values.rows(); }
  std::vector<double> column(Eigen::Index j) const {
    std::vector<double> c(static_cast<std::size_t>(values.rows()));
    for (Eigen::Index i = 0; i < values.rows(); ++i) c[static_cast<std::size_t>(i)] = values(i, j);
    return c;
  }
};

struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // unbiased, divisor M - 1
  Eigen::VectorXd stderr_mean;  // sqrt(var / M)
};

inline Moments ensemble_moments(const ReplicaEnsemble& e) {
  const auto m = e.values.rows();
  if (m < 2) throw std::invalid_argument("ensemble_moments: need at least 2 replicas");
  Moments out;
  out.mean = e.values.colwise().mean().transpose();
  const Eigen::MatrixXd centered = e.values.rowwise() - out.mean.transpose();
  out.covariance = (centered.transpose() * centered) / static_cast<double>(m - 1);
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  out.stderr_mean = (out.covariance.diagonal() / static_cast<double>(m)).cwiseSqrt();
  return out;
}

inline double median(std::vector<double> x) {
  if (x.empty()) throw std::invalid_argument("median: empty sample");
  const auto mid = x.begin() + static_cast<std::ptrdiff_t>(x.size() / 2);
  std::nth_element(x.begin(), mid, x.end());
  if (x.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(x.begin(), mid);
  return 0.5 * (lo + hi);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Q_KS(lambda) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2).
inline double kolmogorov_survival(double lambda) {
  if (lambda < 0.2) return 1.0;
  double s = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    s += (j % 2 == 1 ? term : -term);
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

struct KsResult {
  double statistic;
  double p_value;
};

/// p-value with Stephens' small-sample scaling lambda = (sqrt(n) + 0.12 + 0.11/sqrt(n)) D.
inline double ks_p_value(double d, double n_eff) {
  const double s = std::sqrt(n_eff);
  return kolmogorov_survival((s + 0.12 + 0.11 / s) * d);
}

/// One-sample KS test of `data` against N(mu, sigma^2).
inline KsResult ks_normality(std::span<const double> data, double mu, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("ks_normality: sigma must be positive");
  if (data.size() < 50) throw std::invalid_argument("ks_normality: need at least 50 samples");
  std::vector<double> x(data.begin(), data.end());
  std::sort(x.begin(), x.end());
  if (x.front() == x.back()) throw std::invalid_argument("ks_normality: degenerate (constant) sample");
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = normal_cdf((x[i] - mu) / sigma);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return {d, ks_p_value(d, n)};
}

/// Two-sample KS test; ties are handled by advancing both samples past equal values.
inline KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  return {d, ks_p_value(d, n * m / (n + m))};
}

struct RateFit {
  std::vector<double> ns;
  std::vector<double> errors;
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
};

/// Least-squares fit log(error) = intercept + slope log(N).
inline RateFit fit_rate(std::span<const double> ns, std::span<const double> errors) {
  if (ns.size() != errors.size()) throw std::invalid_argument("fit_rate: size mismatch");
  if (ns.size() < 3) throw std::invalid_argument("fit_rate: need at least 3 points");
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (!(errors[i] > 0.0)) throw std::invalid_argument("fit_rate: errors must be positive");
    if (!(ns[i] > 0.0) || (i > 0 && !(ns[i] > ns[i - 1])))
      throw std::invalid_argument("fit_rate: N values must be positive and strictly increasing");
  }
  const std::size_t n = ns.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(ns[i]);
    my += std::log(errors[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(ns[i]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(errors[i]) - my);
  }
  RateFit fit{{ns.begin(), ns.end()}, {errors.begin(), errors.end()}, sxy / sxx, 0.0, 0.0};
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::log(errors[i]) - fit.intercept - fit.slope * std::log(ns[i]);
    rss += r * r;
  }
  fit.stderr_slope = std::sqrt(rss / static_cast<double>(n - 2) / sxx);
  return fit;
}

/// ||A - B||_F / ||B||_F restricted to the top-left block x block.
inline double relative_frobenius(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, Eigen::Index block) {
  block = std::min({block, a.rows(), b.rows()});
  const Eigen::MatrixXd ab = a.topLeftCorner(block, block);
  const Eigen::MatrixXd bb = b.topLeftCorner(block, block);
  return (ab - bb).norm() / bb.norm();
}

/// One line of a verdict report.
struct Verdict {
  std::string criterion;
  double statistic = 0.0;
  double threshold = 0.0;
  bool pass = false;
  std::string detail;
};

inline nlohmann::json to_json(const Verdict& v) {
  nlohmann::json j{{"criterion", v.criterion}, {"statistic", v.statistic}, {"threshold", v.threshold},
                   {"pass", v.pass}};
  if (!v.detail.empty()) j["detail"] = v.detail;
  return j;
}

inline nlohmann::json to_json(const std::vector<Verdict>& vs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& v : vs) arr.push_back(to_json(v));
  return arr;
}

inline bool all_pass(const std::vector<Verdict>& vs) {
  return std::all_of(vs.begin(), vs.end(), [](const Verdict& v) { return v.pass; });
}

}  // namespace jsq
