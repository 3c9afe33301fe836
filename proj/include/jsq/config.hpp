#pragma once

// Experiment configuration: an INI file with [model], [run], [initial] and
// [output] sections. Command-line flags override file values.

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "jsq/seqspace.hpp"

namespace jsq {

enum class InitialPreset { empty, iid, equilibrium };

inline std::string to_string(InitialPreset p) {
  switch (p) {
    case InitialPreset::empty: return "empty";
    case InitialPreset::iid: return "iid";
    case InitialPreset::equilibrium: return "equilibrium";
  }
  return "empty";
}

inline InitialPreset parse_preset(const std::string& s) {
  if (s == "empty") return InitialPreset::empty;
  if (s == "iid") return InitialPreset::iid;
  if (s == "equilibrium") return InitialPreset::equilibrium;
  throw std::invalid_argument("unknown initial preset '" + s + "' (expected empty, iid or equilibrium)");
}

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  ModelParams params{1.0, 2.0, 2};
  std::vector<std::int64_t> ns{100, 400, 1600};
  double T = 5.0;
  /// ODE / SDE step; unset means 1e-3 min(1/alpha, 1/beta).
  std::optional<double> dt;
  /// Sampling grid spacing for path functionals.
  double grid_dt = 0.05;
  /// Truncation horizon; 0 selects the adaptive rule.
  std::size_t k_max = 0;
  double theta = 0.5;
  std::size_t replicas = 200;
  /// Coordinates examined by the CLT/OU comparisons.
  std::size_t coords = 3;
  InitialPreset preset = InitialPreset::empty;
  /// Geometric ratio and truncation level of the i.i.d. initial queue law.
  double iid_ratio = 0.5;
  std::size_t iid_k_top = 8;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string out = "out";

  double step() const { return dt ? *dt : 1e-3 / std::max(params.alpha, params.beta); }

  /// Throws ConfigError with an actionable message.
  void validate() const {
    try {
      params.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("[model] ") + e.what());
    }
    if (ns.empty()) throw ConfigError("[run] N: at least one network size is required");
    for (auto n : ns)
      if (n < params.L)
        throw ConfigError("[run] N=" + std::to_string(n) + " is smaller than L=" + std::to_string(params.L) +
                          "; every N must satisfy N >= L");
    if (dt && !(*dt > 0.0)) throw ConfigError("[run] dt must be > 0 (omit it for the default step)");
    if (!(T > 0.0)) throw ConfigError("[run] T must be > 0");
    if (!(grid_dt > 0.0)) throw ConfigError("[run] grid_dt must be > 0");
    if (!(theta > 0.0 && theta <= 1.0)) throw ConfigError("[run] theta must lie in (0, 1]");
    if (replicas < 1) throw ConfigError("[run] replicas must be >= 1");
    if (coords < 1) throw ConfigError("[run] coords must be >= 1");
    if (threads < 1) throw ConfigError("[run] threads must be >= 1");
    if (!(iid_ratio >= 0.0 && iid_ratio < 1.0)) throw ConfigError("[initial] ratio must lie in [0, 1)");
  }
};

namespace detail {
inline std::string join_ns(const std::vector<std::int64_t>& ns) {
  std::string s;
  for (std::size_t i = 0; i < ns.size(); ++i) s += (i ? "," : "") + std::to_string(ns[i]);
  return s;
}

inline std::vector<std::int64_t> parse_ns(const std::string& s) {
  std::vector<std::int64_t> ns;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t pos = 0;
    const long long v = std::stoll(item, &pos);
    if (item.find_first_not_of(" \t", pos) != std::string::npos)
      throw ConfigError("N: cannot parse '" + item + "' as an integer");
    ns.push_back(v);
  }
  return ns;
}
}  // namespace detail

inline ExperimentConfig parse_config(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  // ptree::get(path, default) silently falls back on a bad value; reject it instead.
  auto read = [&tree]<typename T>(const char* key, T& dst) {
    const auto raw = tree.get_optional<std::string>(key);
    if (!raw) return;
    // Stream extraction wraps "-3" into a huge unsigned value.
    if constexpr (std::is_unsigned_v<T>)
      if (raw->find('-') != std::string::npos)
        throw ConfigError(std::string("config: ") + key + " must be a nonnegative integer, got '" + *raw + "'");
    const auto v = tree.get_optional<T>(key);
    if (!v) throw ConfigError(std::string("config: cannot parse ") + key + " = '" + *raw + "'");
    dst = *v;
  };
  try {
    read("model.alpha", c.params.alpha);
    read("model.beta", c.params.beta);
    read("model.L", c.params.L);
    if (auto ns = tree.get_optional<std::string>("run.N")) c.ns = detail::parse_ns(*ns);
    read("run.T", c.T);
    if (tree.get_optional<std::string>("run.dt")) {
      double dt = 0.0;
      read("run.dt", dt);
      c.dt = dt;
    }
    read("run.grid_dt", c.grid_dt);
    read("run.K_max", c.k_max);
    read("run.theta", c.theta);
    read("run.replicas", c.replicas);
    read("run.coords", c.coords);
    read("run.seed", c.seed);
    read("run.threads", c.threads);
    if (auto preset = tree.get_optional<std::string>("initial.preset")) c.preset = parse_preset(*preset);
    read("initial.ratio", c.iid_ratio);
    read("initial.k_top", c.iid_k_top);
    read("output.dir", c.out);
  } catch (const ConfigError&) {
    throw;
  } catch (const pt::ptree_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::logic_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline void write_config(std::ostream& os, const ExperimentConfig& c) {
  os << "[model]\n"
     << "alpha = " << format_double(c.params.alpha) << '\n'
     << "beta = " << format_double(c.params.beta) << '\n'
     << "L = " << c.params.L << "\n\n"
     << "[run]\n"
     << "N = " << detail::join_ns(c.ns) << '\n'
     << "T = " << format_double(c.T) << '\n';
  if (c.dt) os << "dt = " << format_double(*c.dt) << '\n';
  os << "grid_dt = " << format_double(c.grid_dt) << '\n'
     << "K_max = " << c.k_max << '\n'
     << "theta = " << format_double(c.theta) << '\n'
     << "replicas = " << c.replicas << '\n'
     << "coords = " << c.coords << '\n'
     << "seed = " << c.seed << '\n'
     << "threads = " << c.threads << "\n\n"
     << "[initial]\n"
     << "preset = " << to_string(c.preset) << '\n'
     << "ratio = " << format_double(c.iid_ratio) << '\n'
     << "k_top = " << c.iid_k_top << "\n\n"
     << "[output]\n"
     << "dir = " << c.out << '\n';
}

/// One-line parameter summary used as a comment header in output files.
inline std::string describe(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "alpha=" << format_double(c.params.alpha) << " beta=" << format_double(c.params.beta)
     << " L=" << c.params.L << " N=" << detail::join_ns(c.ns) << " T=" << format_double(c.T)
     << " dt=" << format_double(c.step()) << " grid_dt=" << format_double(c.grid_dt) << " K_max=" << c.k_max
     << " theta=" << format_double(c.theta) << " replicas=" << c.replicas << " preset=" << to_string(c.preset)
     << " ratio=" << format_double(c.iid_ratio) << " k_top=" << c.iid_k_top << " seed=" << c.seed;
  return os.str();
}

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return a.params.alpha == b.params.alpha && a.params.beta == b.params.beta && a.params.L == b.params.L &&
         a.ns == b.ns && a.T == b.T && a.dt == b.dt && a.grid_dt == b.grid_dt && a.k_max == b.k_max &&
         a.theta == b.theta && a.replicas == b.replicas && a.coords == b.coords && a.preset == b.preset &&
         a.iid_ratio == b.iid_ratio && a.iid_k_top == b.iid_k_top && a.seed == b.seed &&
         a.threads == b.threads && a.out == b.out;
}

}  // namespace jsq
