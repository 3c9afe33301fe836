#pragma once

// Exact simulation of the N-queue network. Two equivalent representations:
//  - simulate_micro follows individual queue lengths (sample L distinct queues,
//    join a shortest one, uniform tie-break; exponential services);
//  - simulate_aggregate runs the CTMC of the empirical tail directly, with
//    coordinate k moving up at rate N F^N+(r)(k) and down at rate N F-(r)(k).
// Both emit the same JumpRecord stream format, from which fluctuation and
// martingale paths are rebuilt.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "jsq/meanfield.hpp"
#include "jsq/rng.hpp"
#include "jsq/seqspace.hpp"

namespace jsq {

/// Queue lengths X_i(t), i = 1..N.
struct MicroState {
  std::vector<std::int64_t> lengths;
  double t = 0.0;

  std::int64_t n() const { return static_cast<std::int64_t>(lengths.size()); }

  EmpiricalTail to_empirical() const {
    if (lengths.empty()) throw std::invalid_argument("MicroState: no queues");
    const std::int64_t top = *std::max_element(lengths.begin(), lengths.end());
    std::vector<std::int64_t> counts(static_cast<std::size_t>(top) + 1, 0);
    for (auto x : lengths) {
      if (x < 0) throw std::invalid_argument("MicroState: negative queue length");
      ++counts[static_cast<std::size_t>(x)];
    }
    // Suffix sums turn the histogram into tail counts.
    for (std::size_t k = counts.size() - 1; k-- > 0;) counts[k] += counts[k + 1];
    return EmpiricalTail(std::move(counts), n());
  }
};

/// One queue per lattice unit: counts[k] - counts[k+1] queues of length k.
inline MicroState micro_from_tail(const EmpiricalTail& r) {
  MicroState m;
  m.lengths.reserve(static_cast<std::size_t>(r.n()));
  for (std::size_t k = 0; k <= r.support(); ++k)
    for (std::int64_t i = 0; i < r.count(k) - r.count(k + 1); ++i)
      m.lengths.push_back(static_cast<std::int64_t>(k));
  return m;
}

/// Tail coordinate k moves by sign/N at time t.
struct JumpRecord {
  double t;
  std::uint32_t k;
  std::int8_t sign;
};

struct SimResult {
  EmpiricalTail initial;
  std::vector<JumpRecord> jumps;
  EmpiricalTail final;
  double horizon = 0.0;
  std::optional<MicroState> final_micro;
};

/// Rebuilds the state reached after the whole jump stream, in integer arithmetic.
inline EmpiricalTail replay(const EmpiricalTail& initial, std::span<const JumpRecord> jumps) {
  EmpiricalTail r = initial;
  for (const auto& j : jumps) r.jump(j.k, j.sign);
  return r;
}

inline void write_jumps_csv(std::ostream& os, std::span<const JumpRecord> jumps) {
  os << "t,k,sign\n";
  for (const auto& j : jumps) os << format_double(j.t) << ',' << j.k << ',' << int{j.sign} << '\n';
}

/// Exact simulation of the per-queue chain on [init.t, T].
inline SimResult simulate_micro(const MicroState& init, const ModelParams& p, double T, Rng& rng,
                                bool record_jumps = true) {
  const std::int64_t n = init.n();
  if (n < p.L) throw std::invalid_argument("simulate_micro: requires N >= L");
  SimResult out{init.to_empirical(), {}, {}, T, std::nullopt};

  std::vector<std::int64_t> len = init.lengths;
  const auto N = static_cast<std::size_t>(n);
  // Nonempty queues as a swap-remove set.
  std::vector<std::size_t> busy;
  std::vector<std::int64_t> busy_pos(N, -1);
  auto mark_busy = [&](std::size_t i) {
    busy_pos[i] = static_cast<std::int64_t>(busy.size());
    busy.push_back(i);
  };
  auto mark_idle = [&](std::size_t i) {
    const auto pos = static_cast<std::size_t>(busy_pos[i]);
    busy[pos] = busy.back();
    busy_pos[busy[pos]] = static_cast<std::int64_t>(pos);
    busy.pop_back();
    busy_pos[i] = -1;
  };
  for (std::size_t i = 0; i < N; ++i)
    if (len[i] > 0) mark_busy(i);

  // Persistent permutation for partial Fisher-Yates draws of L distinct queues.
  std::vector<std::size_t> perm(N);
  for (std::size_t i = 0; i < N; ++i) perm[i] = i;

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double arrival_rate = static_cast<double>(n) * p.alpha;
  const auto L = static_cast<std::size_t>(p.L);
  double t = init.t;
  for (;;) {
    const double total = arrival_rate + p.beta * static_cast<double>(busy.size());
    if (total <= 0.0) break;
    t += std::exponential_distribution<double>(total)(rng);
    if (t > T) break;
    if (unif(rng) * total < arrival_rate) {
      std::size_t best = N;
      std::size_t ties = 0;
      for (std::size_t i = 0; i < L; ++i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(i, N - 1)(rng);
        std::swap(perm[i], perm[j]);
        const std::size_t q = perm[i];
        if (best == N || len[q] < len[best]) {
          best = q;
          ties = 1;
        } else if (len[q] == len[best]) {
          ++ties;
          if (std::uniform_int_distribution<std::size_t>(0, ties - 1)(rng) == 0) best = q;
        }
      }
      if (len[best] == 0) mark_busy(best);
      ++len[best];
      if (record_jumps) out.jumps.push_back({t, static_cast<std::uint32_t>(len[best]), +1});
    } else {
      const std::size_t q = busy[std::uniform_int_distribution<std::size_t>(0, busy.size() - 1)(rng)];
      if (record_jumps) out.jumps.push_back({t, static_cast<std::uint32_t>(len[q]), -1});
      if (--len[q] == 0) mark_idle(q);
    }
  }
  MicroState fin{std::move(len), T};
  out.final = fin.to_empirical();
  out.final_micro = std::move(fin);
  return out;
}

/// Up rates N F^N+(r)(k) and down rates N F-(r)(k) for k = 1..support+1.
struct AggregateRates {
  std::vector<double> up;
  std::vector<double> down;
};

inline AggregateRates aggregate_rates(const EmpiricalTail& r, const ModelParams& p) {
  auto f = finite_N_drift(r, p);
  const auto n = static_cast<double>(r.n());
  for (auto& x : f.plus) x = std::max(0.0, x * n);
  for (auto& x : f.minus) x = std::max(0.0, x * n);
  return {std::move(f.plus), std::move(f.minus)};
}

/// Exact CTMC on the lattice tail space over [0, T]: total-rate exponential
/// clock, then a categorical pick among the 2(K+1) coordinate moves.
inline SimResult simulate_aggregate(const EmpiricalTail& init, const ModelParams& p, double T, Rng& rng,
                                    bool record_jumps = true) {
  if (init.n() < p.L) throw std::invalid_argument("simulate_aggregate: requires N >= L");
  SimResult out{init, {}, init, T, std::nullopt};
  EmpiricalTail& r = out.final;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double t = 0.0;
  for (;;) {
    const auto rates = aggregate_rates(r, p);
    double total = 0.0;
    for (std::size_t k = 1; k < rates.up.size(); ++k) total += rates.up[k] + rates.down[k];
    if (total <= 0.0) break;
    t += std::exponential_distribution<double>(total)(rng);
    if (t > T) break;
    double target = unif(rng) * total;
    std::size_t k = 1;
    int sign = +1;
    // Fallback for roundoff at the top of the cumulative sum: last nonzero move.
    std::size_t last_k = 1;
    int last_sign = +1;
    bool picked = false;
    for (std::size_t j = 1; j < rates.up.size() && !picked; ++j) {
      for (int s : {+1, -1}) {
        const double rate = s > 0 ? rates.up[j] : rates.down[j];
        if (rate <= 0.0) continue;
        last_k = j;
        last_sign = s;
        if (target < rate) {
          k = j;
          sign = s;
          picked = true;
          break;
        }
        target -= rate;
      }
    }
    if (!picked) {
      k = last_k;
      sign = last_sign;
    }
    r.jump(k, sign);
    if (record_jumps) out.jumps.push_back({t, static_cast<std::uint32_t>(k), static_cast<std::int8_t>(sign)});
  }
  return out;
}

/// Z^N = sqrt(N)(R^N - u) on a time grid, with the Dynkin decomposition
///   Z_t - Z_0 = sqrt(N) int_0^t (F^N(R_s) - F(u_s)) ds + M_t
/// and the bracket <M(k)>_t = int_0^t (F^N+(R_s)(k) + F-(R_s)(k)) ds.
/// Rows are indexed by grid point; each row is indexed by k = 0..dim.
struct FluctuationPath {
  std::int64_t n = 0;
  std::vector<double> grid;
  std::vector<std::vector<double>> z;
  std::vector<std::vector<double>> martingale;
  std::vector<std::vector<double>> bracket;
  /// Sum of squared martingale jumps, i.e. (jump count at k) / N.
  std::vector<std::vector<double>> quadratic_variation;

  std::size_t dim() const { return z.empty() ? 0 : z.front().size() - 1; }

  /// CSV (t, z1..zK, then m1..mK and b1..bK when the decomposition is filled).
  void write_csv(std::ostream& os) const {
    const std::size_t K = dim();
    const bool with_m = !martingale.empty();
    os << 't';
    for (std::size_t k = 1; k <= K; ++k) os << ",z" << k;
    if (with_m) {
      for (std::size_t k = 1; k <= K; ++k) os << ",m" << k;
      for (std::size_t k = 1; k <= K; ++k) os << ",b" << k;
    }
    os << '\n';
    for (std::size_t i = 0; i < grid.size(); ++i) {
      os << format_double(grid[i]);
      for (std::size_t k = 1; k <= K; ++k) os << ',' << format_double(z[i][k]);
      if (with_m) {
        for (std::size_t k = 1; k <= K; ++k) os << ',' << format_double(martingale[i][k]);
        for (std::size_t k = 1; k <= K; ++k) os << ',' << format_double(bracket[i][k]);
      }
      os << '\n';
    }
  }
};

namespace detail {
inline std::size_t max_level(const SimResult& sim) {
  std::size_t K = sim.initial.support();
  for (const auto& j : sim.jumps) K = std::max<std::size_t>(K, j.k);
  return K;
}

inline void check_grid(std::span<const double> grid, const SimResult& sim, const OdeSolution& ode) {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 0.0 || grid[i] > sim.horizon + 1e-12 || !ode.covers(grid[i]))
      throw std::out_of_range("fluctuation path: grid point outside the simulated horizon");
    if (i > 0 && grid[i] < grid[i - 1]) throw std::invalid_argument("fluctuation path: grid must be sorted");
  }
}
}  // namespace detail

/// Samples z(t) = sqrt(N)(R^N_t - u_t) on `grid` (right-continuous between jumps).
/// The dimension covers both the ODE horizon and every level the simulation reached.
inline FluctuationPath fluctuation_path(const SimResult& sim, const OdeSolution& ode, std::span<const double> grid) {
  detail::check_grid(grid, sim, ode);
  FluctuationPath path;
  path.n = sim.initial.n();
  path.grid.assign(grid.begin(), grid.end());
  const std::size_t dim = std::max(ode.k_max(), detail::max_level(sim));
  const double sqrt_n = std::sqrt(static_cast<double>(path.n));
  EmpiricalTail r = sim.initial;
  std::size_t idx = 0;
  std::vector<double> u(dim + 1);
  for (double g : grid) {
    while (idx < sim.jumps.size() && sim.jumps[idx].t <= g) {
      r.jump(sim.jumps[idx].k, sim.jumps[idx].sign);
      ++idx;
    }
    std::fill(u.begin(), u.end(), 0.0);
    ode.interpolate(g, std::span<double>(u).first(ode.k_max() + 1));
    std::vector<double> z(dim + 1, 0.0);
    for (std::size_t k = 1; k <= dim; ++k) z[k] = sqrt_n * (r(k) - u[k]);
    path.z.push_back(std::move(z));
  }
  return path;
}

/// Fills martingale, bracket and quadratic variation of `path` by replaying the
/// jump stream. The R^N integrals are exact sums over inter-jump intervals; the
/// u-part uses int_0^t F(u_s) ds = u_t - u_0 along the ODE solution.
inline void martingale_decompose(FluctuationPath& path, const SimResult& sim, const ModelParams& p,
                                 const OdeSolution& ode) {
  detail::check_grid(path.grid, sim, ode);
  if (path.grid.empty() || path.grid.front() != 0.0)
    throw std::invalid_argument("martingale_decompose: grid must start at t = 0");
  const std::size_t dim = path.dim();
  const double n = static_cast<double>(path.n);
  const double sqrt_n = std::sqrt(n);

  std::vector<double> u0(dim + 1, 0.0), ut(dim + 1, 0.0);
  ode.interpolate(0.0, std::span<double>(u0).first(std::min(dim, ode.k_max()) + 1));

  EmpiricalTail r = sim.initial;
  auto fn = finite_N_drift(r, p, dim);
  std::vector<double> drift_int(dim + 1, 0.0), bracket_int(dim + 1, 0.0), jump_count(dim + 1, 0.0);
  auto accumulate = [&](double span) {
    for (std::size_t k = 1; k <= dim; ++k) {
      drift_int[k] += span * (fn.plus[k] - fn.minus[k]);
      bracket_int[k] += span * (fn.plus[k] + fn.minus[k]);
    }
  };

  path.martingale.clear();
  path.bracket.clear();
  path.quadratic_variation.clear();
  std::size_t idx = 0;
  double t_prev = 0.0;
  for (std::size_t i = 0; i < path.grid.size(); ++i) {
    const double g = path.grid[i];
    while (idx < sim.jumps.size() && sim.jumps[idx].t <= g) {
      const auto& j = sim.jumps[idx];
      accumulate(j.t - t_prev);
      t_prev = j.t;
      r.jump(j.k, j.sign);
      if (j.k <= dim) jump_count[j.k] += 1.0;
      fn = finite_N_drift(r, p, dim);
      ++idx;
    }
    accumulate(g - t_prev);
    t_prev = g;

    std::fill(ut.begin(), ut.end(), 0.0);
    ode.interpolate(g, std::span<double>(ut).first(std::min(dim, ode.k_max()) + 1));
    std::vector<double> m(dim + 1, 0.0), b(dim + 1, 0.0), qv(dim + 1, 0.0);
    for (std::size_t k = 1; k <= dim; ++k) {
      m[k] = path.z[i][k] - path.z[0][k] - sqrt_n * (drift_int[k] - (ut[k] - u0[k]));
      b[k] = bracket_int[k];
      qv[k] = jump_count[k] / n;
    }
    path.martingale.push_back(std::move(m));
    path.bracket.push_back(std::move(b));
    path.quadratic_variation.push_back(std::move(qv));
  }
}

// ---------------------------------------------------------------------------
// Initial conditions

/// Tail of the geometric pmf q(k) proportional to g^k, truncated to k = 0..k_top.
inline TailVector truncated_geometric_tail(double g, std::size_t k_top) {
  if (!(g >= 0.0 && g < 1.0)) throw std::invalid_argument("truncated_geometric_tail: ratio must lie in [0, 1)");
  std::vector<double> pmf(k_top + 1);
  double s = 0.0, w = 1.0;
  for (auto& x : pmf) {
    x = w;
    s += w;
    w *= g;
  }
  std::vector<double> v(k_top + 2, 0.0);
  for (std::size_t k = k_top + 1; k-- > 0;) v[k] = v[k + 1] + pmf[k] / s;
  v[0] = 1.0;
  for (std::size_t k = 1; k < v.size(); ++k) v[k] = std::min(v[k], v[k - 1]);
  return TailVector(std::move(v));
}

/// N i.i.d. queue lengths with tail q (inverse-CDF sampling on the tail vector).
inline MicroState sample_iid_queues(const TailVector& q, std::int64_t n, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  MicroState m;
  m.lengths.resize(static_cast<std::size_t>(n));
  for (auto& x : m.lengths) {
    const double u = unif(rng);
    std::int64_t k = 0;
    // P(X >= k + 1) = q(k + 1); step up while u falls below the next tail value.
    while (u < q(static_cast<std::size_t>(k) + 1)) ++k;
    x = k;
  }
  return m;
}

}  // namespace jsq
