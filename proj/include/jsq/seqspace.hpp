#pragma once

// Truncated sequence spaces for the join-the-shortest-of-L network:
// tail vectors, empirical tails on the 1/N lattice, weights and weighted norms.
//
// Convention used throughout the library: a sequence vanishing at 0 (an element
// of c_0^0, L2(w) or l1(w)) is a std::vector<double> indexed directly by k, with
// x[0] == 0. Coordinates past the end of the vector are implicitly zero.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace jsq {

/// Model parameters: arrival rate per queue, service rate, number of choices.
struct ModelParams {
  double alpha = 1.0;
  double beta = 2.0;
  int L = 2;

  ModelParams() = default;
  ModelParams(double alpha_, double beta_, int L_) : alpha(alpha_), beta(beta_), L(L_) {
    validate();
  }

  /// Load ratio; +inf when beta == 0.
  double rho() const {
    return beta > 0.0 ? alpha / beta : std::numeric_limits<double>::infinity();
  }
  bool stable() const { return rho() < 1.0; }

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !std::isfinite(alpha) || !std::isfinite(beta))
      throw std::invalid_argument("ModelParams: rates must be finite and nonnegative");
    if (alpha == 0.0 && beta == 0.0)
      throw std::invalid_argument("ModelParams: alpha and beta cannot both be zero");
    if (L < 1) throw std::invalid_argument("ModelParams: L must be >= 1");
  }
};

/// True iff v(0) = 1, v is nonincreasing and every entry lies in [0, 1].
/// Exact comparisons: states are either lattice points or clamped ODE states.
inline bool validate_tail(std::span<const double> v) {
  if (v.empty() || v[0] != 1.0) return false;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (!(v[k] >= 0.0) || v[k] > 1.0) return false;
    if (k + 1 < v.size() && v[k + 1] > v[k]) return false;
  }
  return true;
}

/// Element of the tail space truncated at K_max = size() - 1.
class TailVector {
 public:
  TailVector() : values_{1.0} {}
  explicit TailVector(std::vector<double> values) : values_(std::move(values)) {
    if (!validate_tail(values_)) throw std::invalid_argument("TailVector: not a valid tail");
  }

  /// Empty network (1, 0, ..., 0) on horizon k_max.
  static TailVector empty(std::size_t k_max) {
    std::vector<double> v(k_max + 1, 0.0);
    v[0] = 1.0;
    return TailVector(std::move(v));
  }

  std::size_t k_max() const { return values_.size() - 1; }
  std::size_t size() const { return values_.size(); }
  /// v(k) with zero extension past the horizon.
  double operator()(std::size_t k) const { return k < values_.size() ? values_[k] : 0.0; }
  double operator[](std::size_t k) const { return values_[k]; }
  const std::vector<double>& values() const { return values_; }
  std::span<const double> span() const { return values_; }

  /// Same tail on a different horizon (zero padding, or truncation).
  TailVector resized(std::size_t k_max) const {
    std::vector<double> v(values_);
    v.resize(k_max + 1, 0.0);
    return TailVector(std::move(v));
  }

  /// Largest k with v(k) > 0.
  std::size_t support() const {
    std::size_t k = values_.size() - 1;
    while (k > 0 && values_[k] == 0.0) --k;
    return k;
  }

  friend bool operator==(const TailVector&, const TailVector&) = default;

 private:
  std::vector<double> values_;
};

/// R^N: counts[k] = number of queues with length >= k. counts[0] = N.
class EmpiricalTail {
 public:
  EmpiricalTail() = default;
  EmpiricalTail(std::vector<std::int64_t> counts, std::int64_t n)
      : counts_(std::move(counts)), n_(n) {
    if (n_ < 1) throw std::invalid_argument("EmpiricalTail: N must be positive");
    if (counts_.empty() || counts_[0] != n_)
      throw std::invalid_argument("EmpiricalTail: counts[0] must equal N");
    for (std::size_t k = 0; k < counts_.size(); ++k) {
      if (counts_[k] < 0) throw std::invalid_argument("EmpiricalTail: negative count");
      if (k + 1 < counts_.size() && counts_[k + 1] > counts_[k])
        throw std::invalid_argument("EmpiricalTail: counts must be nonincreasing");
    }
  }

  static EmpiricalTail empty(std::int64_t n) { return EmpiricalTail({n}, n); }

  std::int64_t n() const { return n_; }
  std::int64_t count(std::size_t k) const { return k < counts_.size() ? counts_[k] : 0; }
  const std::vector<std::int64_t>& counts() const { return counts_; }
  double operator()(std::size_t k) const {
    return static_cast<double>(count(k)) / static_cast<double>(n_);
  }

  /// Largest k with counts[k] > 0.
  std::size_t support() const {
    std::size_t k = counts_.size() - 1;
    while (k > 0 && counts_[k] == 0) --k;
    return k;
  }

  /// Apply a single +-1 jump at coordinate k >= 1, keeping the lattice invariants.
  void jump(std::size_t k, int sign) {
    if (k == 0) throw std::logic_error("EmpiricalTail::jump: coordinate 0 is fixed");
    if (k >= counts_.size()) counts_.resize(k + 1, 0);
    counts_[k] += sign;
    if (counts_[k] < 0 || counts_[k] > counts_[k - 1] ||
        (k + 1 < counts_.size() && counts_[k + 1] > counts_[k]))
      throw std::logic_error("EmpiricalTail::jump: leaves the lattice tail space");
  }

  TailVector to_tail(std::size_t k_max) const {
    std::vector<double> v(k_max + 1);
    for (std::size_t k = 0; k <= k_max; ++k) v[k] = (*this)(k);
    return TailVector(std::move(v));
  }
  TailVector to_tail() const { return to_tail(support()); }

  friend bool operator==(const EmpiricalTail& a, const EmpiricalTail& b) {
    if (a.n_ != b.n_) return false;
    const std::size_t m = std::max(a.counts_.size(), b.counts_.size());
    for (std::size_t k = 0; k < m; ++k)
      if (a.count(k) != b.count(k)) return false;
    return true;
  }

 private:
  std::vector<std::int64_t> counts_{1};
  std::int64_t n_ = 1;
};

/// Nearest lattice point: counts[k] = round(N u0(k)), then monotone repair.
inline EmpiricalTail discretize(const TailVector& u0, std::int64_t n) {
  std::vector<std::int64_t> counts(u0.size());
  counts[0] = n;
  for (std::size_t k = 1; k < u0.size(); ++k) {
    auto c = static_cast<std::int64_t>(std::llround(static_cast<double>(n) * u0[k]));
    counts[k] = std::clamp<std::int64_t>(c, 0, counts[k - 1]);
  }
  return EmpiricalTail(std::move(counts), n);
}

/// Positive weights w(k), k = 1..K, with c w(k+1) <= w(k) <= d w(k+1).
class WeightSeq {
 public:
  WeightSeq(std::vector<double> w, double c, double d) : w_(std::move(w)), c_(c), d_(d) {
    if (w_.empty()) throw std::invalid_argument("WeightSeq: empty");
    if (!(c_ > 0.0) || !(d_ > 0.0)) throw std::invalid_argument("WeightSeq: c, d must be positive");
    for (double x : w_)
      if (!(x > 0.0)) throw std::invalid_argument("WeightSeq: weights must be positive");
    // Relative slack for the constants returned by geometric_weights.
    constexpr double slack = 1e-12;
    for (std::size_t i = 0; i + 1 < w_.size(); ++i) {
      if (c_ * w_[i + 1] > w_[i] * (1 + slack) || w_[i] > d_ * w_[i + 1] * (1 + slack))
        throw std::invalid_argument("WeightSeq: comparison condition violated");
    }
  }

  std::size_t k_max() const { return w_.size(); }
  /// w(k), k >= 1.
  double operator()(std::size_t k) const { return w_.at(k - 1); }
  double c() const { return c_; }
  double d() const { return d_; }
  const std::vector<double>& values() const { return w_; }

 private:
  std::vector<double> w_;
  double c_;
  double d_;
};

/// w(k) = theta^k with c = d = 1/theta.
inline WeightSeq geometric_weights(double theta, std::size_t k_max) {
  if (!(theta > 0.0 && theta <= 1.0))
    throw std::invalid_argument("geometric_weights: theta must lie in (0, 1]");
  if (k_max == 0) throw std::invalid_argument("geometric_weights: K_max must be positive");
  std::vector<double> w(k_max);
  double p = 1.0;
  for (auto& x : w) x = (p *= theta);
  return WeightSeq(std::move(w), 1.0 / theta, 1.0 / theta);
}

namespace detail {
inline void check_weighted_args(std::span<const double> x, const WeightSeq& w) {
  if (x.empty() || x.size() - 1 != w.k_max())
    throw std::invalid_argument("weighted norm: sequence and weights cover different ranges");
}
}  // namespace detail

/// sum_{k>=1} x(k)^2 / w(k).
inline double weighted_l2_sq(std::span<const double> x, const WeightSeq& w) {
  detail::check_weighted_args(x, w);
  double s = 0.0;
  for (std::size_t k = 1; k < x.size(); ++k) s += x[k] * x[k] / w(k);
  return s;
}

inline double weighted_l2(std::span<const double> x, const WeightSeq& w) {
  return std::sqrt(weighted_l2_sq(x, w));
}

/// sum_{k>=1} |x(k)| / w(k).
inline double weighted_l1(std::span<const double> x, const WeightSeq& w) {
  detail::check_weighted_args(x, w);
  double s = 0.0;
  for (std::size_t k = 1; k < x.size(); ++k) s += std::abs(x[k]) / w(k);
  return s;
}

/// p(k) = v(k) - v(k+1) for k = 0..K_max-1.
inline std::vector<double> tail_to_pmf(const TailVector& v) {
  std::vector<double> p(v.k_max());
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = v[k] - v[k + 1];
  return p;
}

/// Inverse of tail_to_pmf for a pmf whose mass sits inside the horizon:
/// v(k) = sum_{j>=k} p(j), v(K_max) = 0.
inline TailVector pmf_to_tail(std::span<const double> p) {
  std::vector<double> v(p.size() + 1, 0.0);
  for (std::size_t k = p.size(); k-- > 0;) v[k] = v[k + 1] + p[k];
  if (std::abs(v[0] - 1.0) > 1e-12) throw std::invalid_argument("pmf_to_tail: mass does not sum to 1");
  v[0] = 1.0;
  return TailVector(std::move(v));
}

// Serialization. 17 significant digits round-trip every double.

inline std::string format_double(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

inline void write_tail_csv(std::ostream& os, const TailVector& v) {
  os << "k,value\n";
  for (std::size_t k = 0; k < v.size(); ++k) os << k << ',' << format_double(v[k]) << '\n';
}

inline TailVector read_tail_csv(std::istream& is) {
  std::string line;
  while (std::getline(is, line) && !line.empty() && line[0] == '#') {
  }
  if (line != "k,value") throw std::runtime_error("read_tail_csv: bad header");
  std::vector<double> v;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("read_tail_csv: malformed row");
    if (std::stoul(line.substr(0, comma)) != v.size())
      throw std::runtime_error("read_tail_csv: indices must be consecutive from 0");
    v.push_back(std::stod(line.substr(comma + 1)));
  }
  return TailVector(std::move(v));
}

inline nlohmann::json to_json(const TailVector& v) { return v.values(); }

inline TailVector tail_from_json(const nlohmann::json& j) {
  return TailVector(j.get<std::vector<double>>());
}

}  // namespace jsq
