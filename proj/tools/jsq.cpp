// jsq: experiment runner for the join-the-shortest-of-L network.
//
//   jsq fixed-point | lln | clt | ou | verify  [--config FILE] [--seed S] [--out DIR] ...
//
// Exit codes: 0 all verdicts pass, 1 verdict failure (or unstable regime for
// fixed-point), 2 usage or configuration error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "jsq/config.hpp"
#include "jsq/experiments.hpp"
#include "jsq/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

struct Overrides {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t replicas = 0;
  unsigned threads = 0;
  double alpha = 0, beta = 0, T = 0, dt = 0, grid_dt = 0, theta = 0, ratio = 0;
  int L = 0;
  std::string ns, preset;
  std::size_t k_max = 0, coords = 0;
};

/// Output directory owner: every file goes through here, with the parameter header.
class OutputDir {
 public:
  OutputDir(const jsq::ExperimentConfig& cfg, std::string command)
      : root_(cfg.out), header_("# jsq " + command + ' ' + jsq::describe(cfg)) {
    fs::create_directories(root_);
    std::ofstream(root_ / "config.ini") << [&] {
      std::ostringstream os;
      jsq::write_config(os, cfg);
      return os.str();
    }();
    // Timestamps only live in the sidecar log.
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::ofstream(root_ / "run.log", std::ios::app) << std::ctime(&now) << header_ << '\n';
  }

  std::ofstream csv(const std::string& name) const {
    std::ofstream os(root_ / name);
    os << header_ << '\n';
    return os;
  }

  void json_file(const std::string& name, const json& j) const { std::ofstream(root_ / name) << j.dump(2) << '\n'; }

 private:
  fs::path root_;
  std::string header_;
};

void write_seed_log(const OutputDir& out, const jsq::ExperimentConfig& cfg, std::uint32_t tag_base,
                    std::size_t n_count) {
  auto os = out.csv("seeds.csv");
  os << "# stream(seed, replica, tag) = mt19937_64(seed_seq{lo(seed), hi(seed), lo(replica), hi(replica), tag})\n";
  os << "seed,replica,tag\n";
  for (std::size_t i = 0; i < n_count; ++i)
    for (std::size_t r = 0; r < cfg.replicas; ++r) os << cfg.seed << ',' << r << ',' << tag_base + i << '\n';
}

json report(const std::string& command, const std::vector<jsq::Verdict>& verdicts, json diagnostics = json::object(),
            const std::vector<std::string>& warnings = {}) {
  return {{"command", command},
          {"pass", jsq::all_pass(verdicts)},
          {"verdicts", jsq::to_json(verdicts)},
          {"diagnostics", std::move(diagnostics)},
          {"warnings", warnings}};
}

int finish(const OutputDir& out, const json& rep) {
  out.json_file("verdict.json", rep);
  for (const auto& v : rep["verdicts"])
    std::cout << (v["pass"].get<bool>() ? "PASS " : "FAIL ") << v["criterion"].get<std::string>()
              << " statistic=" << v["statistic"] << " threshold=" << v["threshold"] << '\n';
  for (const auto& w : rep["warnings"]) std::cerr << "warning: " << w.get<std::string>() << '\n';
  return rep["pass"].get<bool>() ? kExitPass : kExitFail;
}

int cmd_fixed_point(const jsq::ExperimentConfig& cfg) {
  const auto res = jsq::run_fixed_point(cfg);
  OutputDir out(cfg, "fixed-point");
  {
    auto os = out.csv("trajectory.csv");
    res.trajectory.write_csv(os);
  }
  if (!res.stable) {
    std::cerr << res.diagnostic << '\n';
    out.json_file("verdict.json", {{"command", "fixed-point"},
                                   {"pass", false},
                                   {"verdicts", json::array()},
                                   {"diagnostics", {{"unstable", true}, {"message", res.diagnostic}}},
                                   {"warnings", json::array()}});
    return kExitFail;
  }
  {
    auto os = out.csv("fixed_point.csv");
    jsq::write_tail_csv(os, *res.fixed);
  }
  {
    auto os = out.csv("relaxation.csv");
    os << "t,sup_distance\n";
    for (std::size_t i = 0; i < res.grid.size(); ++i)
      os << jsq::format_double(res.grid[i]) << ',' << jsq::format_double(res.sup_distance[i]) << '\n';
  }
  return finish(out, report("fixed-point", res.verdicts,
                            {{"K_max", res.k_max},
                             {"rho", cfg.params.rho()},
                             {"distance_at_T", res.sup_distance.back()},
                             {"fixed_point", jsq::to_json(*res.fixed)}}));
}

int cmd_lln(const jsq::ExperimentConfig& cfg) {
  const auto res = jsq::run_lln(cfg);
  OutputDir out(cfg, "lln");
  write_seed_log(out, cfg, jsq::tags::lln, cfg.ns.size());
  {
    auto os = out.csv("lln_errors.csv");
    os << "N,replica,sup_l2w_error\n";
    for (std::size_t i = 0; i < res.ns.size(); ++i)
      for (std::size_t r = 0; r < res.sup_errors[i].size(); ++r)
        os << res.ns[i] << ',' << r << ',' << jsq::format_double(res.sup_errors[i][r]) << '\n';
  }
  {
    auto os = out.csv("lln_summary.csv");
    os << "N,median_sup_l2w_error\n";
    for (std::size_t i = 0; i < res.ns.size(); ++i) os << res.ns[i] << ',' << jsq::format_double(res.medians[i]) << '\n';
  }
  json diag{{"medians", res.medians}, {"N", res.ns}};
  if (res.fit) diag["fit"] = {{"slope", res.fit->slope}, {"intercept", res.fit->intercept}, {"stderr", res.fit->stderr_slope}};
  return finish(out, report("lln", res.verdicts, diag, res.warnings));
}

int cmd_clt(const jsq::ExperimentConfig& cfg) {
  const auto results = jsq::run_clt(cfg);
  OutputDir out(cfg, "clt");
  write_seed_log(out, cfg, jsq::tags::clt, cfg.ns.size());
  {
    auto os = out.csv("limit_covariance.csv");
    results.front().limit.write_csv(os);
  }
  std::vector<jsq::Verdict> all;
  json diag = json::array();
  auto summary = out.csv("clt_summary.csv");
  summary << "N,k,ks_statistic,ks_p_value,var_empirical,var_limit,var_rel_error\n";
  for (const auto& r : results) {
    const auto mom = jsq::ensemble_moments(r.z_T);
    const auto& sigma = r.limit.final();
    for (std::size_t k = 0; k < r.coords; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      summary << r.n << ',' << k + 1 << ',' << jsq::format_double(r.ks[k].statistic) << ','
              << jsq::format_double(r.ks[k].p_value) << ',' << jsq::format_double(mom.covariance(kk, kk)) << ','
              << jsq::format_double(sigma(kk, kk)) << ',' << jsq::format_double(r.variance_rel_error[k]) << '\n';
    }
    auto os = out.csv("clt_N" + std::to_string(r.n) + "_endpoints.csv");
    os << "replica";
    for (const char* name : {"z", "m", "b", "qv"})
      for (std::size_t k = 1; k <= r.coords; ++k) os << ',' << name << k;
    os << '\n';
    for (Eigen::Index i = 0; i < r.z_T.replicas(); ++i) {
      os << i;
      for (const auto* e : {&r.z_T, &r.m_T, &r.bracket_T, &r.qv_T})
        for (Eigen::Index k = 0; k < e->values.cols(); ++k) os << ',' << jsq::format_double(e->values(i, k));
      os << '\n';
    }
    for (auto v : r.clt_verdicts) {
      v.criterion += "_N" + std::to_string(r.n);
      all.push_back(v);
    }
    for (auto v : r.martingale_verdicts) {
      v.criterion += "_N" + std::to_string(r.n);
      all.push_back(v);
    }
    diag.push_back({{"N", r.n}, {"covariance_rel_frobenius", r.covariance_rel_frobenius}});
  }
  return finish(out, report("clt", all, {{"per_N", diag}}));
}

int cmd_ou(const jsq::ExperimentConfig& cfg) {
  const auto res = jsq::run_ou(cfg);
  OutputDir out(cfg, "ou");
  write_seed_log(out, cfg, jsq::tags::ou, 1);
  {
    auto os = out.csv("ou_covariance.csv");
    res.covariance.write_csv(os);
  }
  {
    auto os = out.csv("ou_path.csv");
    res.sample_path.write_csv(os);
  }
  {
    auto os = out.csv("ou_endpoints.csv");
    os << "replica";
    for (std::size_t k = 1; k <= res.dim; ++k) os << ",z" << k;
    os << '\n';
    for (Eigen::Index i = 0; i < res.endpoints.replicas(); ++i) {
      os << i;
      for (Eigen::Index k = 0; k < res.endpoints.values.cols(); ++k)
        os << ',' << jsq::format_double(res.endpoints.values(i, k));
      os << '\n';
    }
  }
  return finish(out, report("ou", res.verdicts, {{"dim", res.dim}, {"rel_frobenius", res.rel_frobenius}}));
}

int cmd_verify(const jsq::ExperimentConfig& cfg) {
  const auto verdicts = jsq::run_identity_suite(cfg.seed);
  OutputDir out(cfg, "verify");
  return finish(out, report("verify", verdicts));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulator and limit-theorem checks for the join-the-shortest-of-L queueing network"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;
  app.add_option("--config", o.config, "INI configuration file")->check(CLI::ExistingFile);
  auto* seed = app.add_option("--seed", o.seed, "Master RNG seed");
  auto* outdir = app.add_option("--out", o.out, "Output directory");
  auto* replicas = app.add_option("--replicas", o.replicas, "Replicas per network size");
  auto* threads = app.add_option("--threads", o.threads, "Worker threads");
  auto* alpha = app.add_option("--alpha", o.alpha, "Arrival rate per queue");
  auto* beta = app.add_option("--beta", o.beta, "Service rate");
  auto* L = app.add_option("--L", o.L, "Number of queues sampled per arrival");
  auto* ns = app.add_option("--N", o.ns, "Comma-separated network sizes");
  auto* T = app.add_option("--T", o.T, "Time horizon");
  auto* dt = app.add_option("--dt", o.dt, "ODE/SDE step");
  auto* grid_dt = app.add_option("--grid-dt", o.grid_dt, "Sampling grid spacing");
  auto* k_max = app.add_option("--K-max", o.k_max, "Truncation horizon (0 = adaptive)");
  auto* theta = app.add_option("--theta", o.theta, "Geometric weight ratio in (0, 1]");
  auto* coords = app.add_option("--coords", o.coords, "Coordinates compared in CLT/OU checks");
  auto* preset = app.add_option("--preset", o.preset, "Initial condition: empty, iid, equilibrium");
  auto* ratio = app.add_option("--iid-ratio", o.ratio, "Geometric ratio of the i.i.d. initial queue law");

  auto* fp = app.add_subcommand("fixed-point", "Fixed point table and relaxation from the empty network");
  auto* lln = app.add_subcommand("lln", "Law of large numbers error scaling");
  auto* clt = app.add_subcommand("clt", "CLT marginals and martingale structure");
  auto* ou = app.add_subcommand("ou", "OU covariance evolution and path export");
  auto* ver = app.add_subcommand("verify", "Deterministic identity suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitPass : kExitUsage;
  }

  try {
    jsq::ExperimentConfig cfg;
    if (!o.config.empty()) {
      std::ifstream is(o.config);
      cfg = jsq::parse_config(is);
    }
    if (*seed) cfg.seed = o.seed;
    if (*outdir) cfg.out = o.out;
    if (*replicas) cfg.replicas = o.replicas;
    if (*threads) cfg.threads = o.threads;
    if (*alpha) cfg.params.alpha = o.alpha;
    if (*beta) cfg.params.beta = o.beta;
    if (*L) cfg.params.L = o.L;
    if (*ns) cfg.ns = jsq::detail::parse_ns(o.ns);
    if (*T) cfg.T = o.T;
    if (*dt) cfg.dt = o.dt;
    if (*grid_dt) cfg.grid_dt = o.grid_dt;
    if (*k_max) cfg.k_max = o.k_max;
    if (*theta) cfg.theta = o.theta;
    if (*coords) cfg.coords = o.coords;
    if (*preset) cfg.preset = jsq::parse_preset(o.preset);
    if (*ratio) cfg.iid_ratio = o.ratio;
    cfg.validate();

    if (fp->parsed()) return cmd_fixed_point(cfg);
    if (lln->parsed()) return cmd_lln(cfg);
    if (clt->parsed()) return cmd_clt(cfg);
    if (ou->parsed()) return cmd_ou(cfg);
    if (ver->parsed()) return cmd_verify(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
