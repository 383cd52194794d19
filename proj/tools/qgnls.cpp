// qgnls: solve, verify and tabulate normalized bound states on metric graphs.
//
// Exit codes: 0 success, 1 verification failure, 2 configuration error,
// 3 solver failure.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qgnls/analysis.hpp"
#include "qgnls/ode.hpp"
#include "qgnls/report.hpp"
#include "qgnls/solver.hpp"

namespace fs = std::filesystem;
using namespace qgnls;

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kConfig = 2, kSolver = 3 };

std::string env_name(const std::string& flag) {
  std::string s = "QGNLS_";
  for (char c : flag) s += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

template <class T>
CLI::Option* option(CLI::App* app, const std::string& name, T& value, const std::string& desc) {
  return app->add_option("--" + name, value, desc)->envname(env_name(name))->capture_default_str();
}

struct RunConfig {
  std::string graph;
  double p = 8.0;
  double mu = 1.0;
  double h = 1e-3;
  double core_h = 0.0;
  double truncation = 0.0;
  std::size_t rho_steps = 11;
  std::size_t N = 3;
  unsigned seed = 1;
  std::size_t max_solutions = 8;
  std::string out = "qgnls_out";

  void validate(bool solve) const {
    if (!(p > 2.0)) throw ConfigError("p must exceed 2");
    if (solve && !(p > 6.0)) throw ConfigError("solve requires p > 6 (got p = " + std::to_string(p) + ")");
    if (!(mu > 0.0)) throw ConfigError("mu must be positive");
    if (!(h > 0.0)) throw ConfigError("h must be positive");
    if (core_h < 0.0) throw ConfigError("core-h must be positive");
    if (truncation < 0.0) throw ConfigError("truncation must be positive");
    if (rho_steps < 1) throw ConfigError("rho-steps must be at least 1");
  }
};

MetricGraph read_graph(const RunConfig& cfg) {
  if (!fs::exists(cfg.graph)) throw ConfigError("graph file not found: " + cfg.graph);
  auto g = load_graph_file(cfg.graph);
  if (cfg.truncation == 0.0) return g;
  auto j = to_json(g);
  for (auto& e : j.at("edges")) {
    if (e.contains("halfline_truncation")) e["halfline_truncation"] = cfg.truncation;
  }
  return load_graph(j.dump());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << text;
}

void write_profile(const fs::path& path, const GraphFunction& u) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << std::setprecision(17);
  write_csv(os, u);
}

std::ostream& table(const std::string& out, std::ofstream& file) {
  if (out.empty() || out == "-") return std::cout;
  file.open(out);
  if (!file) throw ConfigError("cannot write " + out);
  return file;
}

std::vector<Seed> default_seeds(const DiscreteOperators& ops, const RunConfig& cfg, std::vector<std::string>& notes) {
  std::vector<Seed> seeds;
  const auto& g = ops.graph();
  for (std::size_t e : g.core_edges()) seeds.push_back(core_bump_seed(ops, e, default_rho_grid(cfg.rho_steps)));
  for (double k : {1.0, 2.0, 4.0, 8.0}) seeds.push_back(junction_seed(ops, k));
  for (std::size_t N = 2; N <= cfg.N; ++N) {
    MinimaxOptions m;
    m.seed = cfg.seed;
    try {
      seeds.push_back(minimax_seed(ops, cfg.p, cfg.mu, N, m));
    } catch (const Error& e) {
      notes.push_back("minimax:" + std::to_string(N) + ": " + e.what());
    }
  }
  return seeds;
}

int cmd_solve(const RunConfig& cfg) {
  cfg.validate(true);
  const auto ops = assemble(read_graph(cfg), cfg.h, cfg.core_h);
  std::vector<std::string> notes;
  const auto seeds = default_seeds(ops, cfg, notes);
  SearchOptions opt;
  opt.newton.max_iterations = 30;
  opt.newton.homotopy_steps = 0;
  opt.seed = cfg.seed;
  opt.max_solutions = cfg.max_solutions;
  auto found = find_solutions(ops, cfg.p, cfg.mu, seeds, opt);
  for (const auto& f : found.failures) notes.push_back(f);
  for (const auto& r : found.rejected) notes.push_back(r.tag + ": rejected (" + r.check.reason + ")");
  for (const auto& n : notes) std::cerr << "note: " << n << '\n';
  if (found.accepted.empty()) {
    std::cerr << "error: no admissible solution found\n";
    return kSolver;
  }
  // Spectral data per solution in parallel; files are written afterwards in order.
  std::vector<std::future<SolutionReport>> jobs;
  for (const auto& c : found.accepted) {
    jobs.push_back(std::async(std::launch::async, [&ops, &cfg, &c] { return make_report(ops, cfg.p, c); }));
  }
  std::vector<SolutionReport> reports;
  for (auto& j : jobs) reports.push_back(j.get());
  fs::create_directories(cfg.out);
  std::printf("%5s  %-16s %14s %14s %6s %6s %10s %10s\n", "index", "seed", "E", "lambda", "morse", "c.m.",
              "residual", "identity");
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const std::string stem = "solution_" + std::to_string(i);
    write_text(fs::path(cfg.out) / (stem + ".json"), to_json(ops, r).dump(2) + "\n");
    write_profile(fs::path(cfg.out) / (stem + ".csv"), r.state.u(ops));
    std::printf("%5zu  %-16s %14.8g %14.8g %6ld %6ld %10.2e %10.2e\n", i, r.seed.c_str(), r.state.level,
                r.state.lambda, r.morse.morse, r.constrained_morse.morse, r.state.relative_residual,
                r.identities.max());
  }
  return kOk;
}

int cmd_verify(const std::string& path, double tolerance) {
  std::ifstream is(path);
  if (!is) throw ConfigError("report not found: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("cannot parse report: ") + e.what());
  }
  const auto report = load_report(j);
  const auto v = verify(report, tolerance);
  std::vector<std::string> failing;
  if (!(v.relative_residual <= tolerance)) failing.push_back("residual");
  if (!(v.mass_error <= 1e-10)) failing.push_back("mass");
  if (!(v.identities.nehari <= v.tolerance)) failing.push_back("nehari");
  if (!(v.identities.pohozaev <= v.tolerance)) failing.push_back("pohozaev");
  if (!(v.identities.link <= v.tolerance)) failing.push_back("link");
  if (!(report.lambda > 0.0)) failing.push_back("lambda");
  const auto x = report.ops.to_vector(report.u);
  const auto morse = morse_index(report.ops, x, report.rho, report.p, report.lambda, true);
  const long stored = j.at("constrained_morse").at("morse").get<long>();
  if (morse.morse != stored) failing.push_back("morse");
  std::printf("residual %.3e  mass %.3e  nehari %.3e  pohozaev %.3e  link %.3e  (tolerance %.3e)\n",
              v.relative_residual, v.mass_error, v.identities.nehari, v.identities.pohozaev, v.identities.link,
              v.tolerance);
  std::printf("constrained morse %ld (stored %ld)\n", morse.morse, stored);
  if (failing.empty()) {
    std::printf("PASS\n");
    return kOk;
  }
  std::string list;
  for (const auto& f : failing) list += (list.empty() ? "" : ", ") + f;
  std::printf("FAIL: %s\n", list.c_str());
  return kVerifyFailed;
}

int cmd_tadpole(double p, int k, double v0, double h, double truncation, const std::string& out) {
  if (!(p > 2.0)) throw ConfigError("p must exceed 2");
  if (!(h > 0.0) || !(truncation > 0.0)) throw ConfigError("h and truncation must be positive");
  const auto sol = ode::tadpole_solution(p, k, v0, h, truncation);
  const auto ops = assemble(sol.u.mesh_ptr());
  const Vector x = ops.to_vector(sol.u);
  const double residual = ops.dual_norm(gradient(ops, x, 1.0, p, 0.0));
  const double kirchhoff = kirchhoff_residual(sol.u)[0];
  const auto id = identity_residuals(ops, sol.u, 1.0, p, 0.0);
  const double threshold = 1e-4;
  const bool ok = residual <= threshold && kirchhoff <= threshold && id.link <= threshold;
  fs::create_directories(out);
  write_text(fs::path(out) / "tadpole_graph.json", serialize(ops.graph()) + "\n");
  write_profile(fs::path(out) / "tadpole.csv", sol.u);
  nlohmann::json rep = {{"p", p},
                        {"k", k},
                        {"v0", v0},
                        {"h", h},
                        {"amplitude", sol.amplitude},
                        {"loop_length", sol.loop_length},
                        {"H", sol.H},
                        {"mass", mass(sol.u)},
                        {"energy", energy(ops, x, 1.0, p)},
                        {"gradient_residual", residual},
                        {"kirchhoff_residual", kirchhoff},
                        {"identities", to_json(id)},
                        {"threshold", threshold},
                        {"ok", ok}};
  write_text(fs::path(out) / "tadpole_verification.json", rep.dump(2) + "\n");
  std::printf("loop %.10g  amplitude %.10g  mass %.10g  residual %.3e  kirchhoff %.3e  link %.3e  %s\n",
              sol.loop_length, sol.amplitude, mass(sol.u), residual, kirchhoff, id.link, ok ? "PASS" : "FAIL");
  return ok ? kOk : kVerifyFailed;
}

struct OdeGrid {
  std::vector<double> p{4.0, 6.0, 8.0};
  std::vector<double> alpha{0.5, 1.0, 2.0};
  std::vector<double> u0{0.5, 1.0, 2.0};
};

int cmd_periods(const OdeGrid& g, const std::string& out) {
  std::ofstream file;
  auto& os = table(out, file);
  os << "p,alpha,u0,tau,C_p\n" << std::setprecision(17);
  for (double p : g.p)
    for (double a : g.alpha)
      for (double u0 : g.u0) os << p << ',' << a << ',' << u0 << ',' << ode::period(u0, a, p) << ',' << ode::period_constant(p) << '\n';
  return kOk;
}

int cmd_orbit(double u0, double alpha, double p, std::size_t samples, const std::string& out) {
  std::ofstream file;
  auto& os = table(out, file);
  os << std::setprecision(17);
  ode::write_orbit_csv(os, ode::periodic_orbit(u0, alpha, p, samples));
  return kOk;
}

int cmd_mass_bounds(const OdeGrid& g, const std::string& out) {
  std::ofstream file;
  auto& os = table(out, file);
  os << "p,alpha,u0,tau,sup,mass,lower,upper,ok\n" << std::setprecision(17);
  bool all = true;
  for (double p : g.p)
    for (double a : g.alpha)
      for (double u0 : g.u0) {
        const auto orb = ode::periodic_orbit(u0, a, p, 256);
        const double sup = orb.max_abs(), m = ode::orbit_mass(orb);
        const double lo = orb.tau * sup * sup / 8.0, hi = orb.tau * sup * sup;
        const bool ok = lo <= m && m <= hi;
        all = all && ok;
        os << p << ',' << a << ',' << u0 << ',' << orb.tau << ',' << sup << ',' << m << ',' << lo << ',' << hi << ','
           << (ok ? 1 : 0) << '\n';
      }
  return all ? kOk : kVerifyFailed;
}

int cmd_levels(const RunConfig& cfg, std::size_t n_min, const std::string& out) {
  cfg.validate(false);
  if (n_min < 2 || n_min > cfg.N) throw ConfigError("need 2 <= N-min <= N");
  const auto ops = assemble(read_graph(cfg), cfg.h, cfg.core_h);
  std::vector<double> S;
  for (std::size_t N = n_min; N <= cfg.N; ++N) S.push_back(rayleigh_level(ops, cfg.p, N).S);
  const auto b = beta_levels(cfg.mu, cfg.p, S);
  std::ofstream file;
  auto& os = table(out, file);
  os << "N,S_N,beta_N,b_lower_N,c_upper,endpoint_max\n" << std::setprecision(17);
  for (std::size_t i = 0; i < S.size(); ++i) {
    const std::size_t N = n_min + i;
    MinimaxOptions m;
    m.seed = cfg.seed;
    m.S = S[i];
    double c = std::nan(""), ends = std::nan("");
    try {
      const auto est = minimax_estimate(ops, cfg.p, cfg.mu, 1.0, N, m);
      c = est.c_upper;
      ends = est.endpoint_max;
    } catch (const Error& e) {
      std::cerr << "note: minimax N = " << N << ": " << e.what() << '\n';
    }
    os << N << ',' << S[i] << ',' << b.beta[i] << ',' << b.b_lower[i] << ',' << c << ',' << ends << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Normalized bound states of the NLS with localized nonlinearity on metric graphs"};
  // -h is taken by the mesh width.
  app.set_help_flag("--help", "Print this help message and exit");
  app.set_config("--config", "", "TOML/INI file with option values");
  app.require_subcommand(1);

  RunConfig cfg;
  auto add_run = [&](CLI::App* sub) {
    option(sub, "graph", cfg.graph, "Graph spec (JSON)")->required();
    option(sub, "p", cfg.p, "Nonlinearity exponent");
    option(sub, "mu", cfg.mu, "Prescribed mass");
    option(sub, "h", cfg.h, "Mesh width");
    option(sub, "core-h", cfg.core_h, "Mesh width on the core (0 uses h)");
    option(sub, "truncation", cfg.truncation, "Override every half-line truncation length (0 keeps the spec)");
    option(sub, "N", cfg.N, "Largest minimax parameter");
    option(sub, "seed", cfg.seed, "Random seed");
  };

  auto* solve = app.add_subcommand("solve", "Find distinct bound states and write reports");
  add_run(solve);
  option(solve, "rho-steps", cfg.rho_steps, "Points of the rho grid on [1/2, 1]");
  option(solve, "max-solutions", cfg.max_solutions, "Stop after this many solutions");
  option(solve, "out", cfg.out, "Output directory");

  std::string report;
  double tolerance = 1e-8;
  auto* verify_cmd = app.add_subcommand("verify", "Recheck a solution report");
  verify_cmd->add_option("report", report, "Report JSON")->required();
  option(verify_cmd, "tolerance", tolerance, "Relative residual threshold");

  double v0 = 1.0, tad_trunc = 1.0;
  int k = 1;
  std::string tad_out = "tadpole_out";
  auto* tadpole = app.add_subcommand("tadpole", "Exact zero-multiplier tadpole solution");
  option(tadpole, "p", cfg.p, "Nonlinearity exponent");
  option(tadpole, "k", k, "Periods on the loop");
  option(tadpole, "v0", v0, "Slope at the vertex");
  option(tadpole, "h", cfg.h, "Mesh width");
  option(tadpole, "truncation", tad_trunc, "Half-line truncation");
  option(tadpole, "out", tad_out, "Output directory");

  auto* ode_cmd = app.add_subcommand("ode", "Tables for the edge ODE");
  ode_cmd->require_subcommand(1);
  OdeGrid grid;
  std::string table_out;
  auto add_grid = [&](CLI::App* sub) {
    option(sub, "p", grid.p, "Exponents")->delimiter(',');
    option(sub, "alpha", grid.alpha, "Coefficients")->delimiter(',');
    option(sub, "u0", grid.u0, "Amplitudes")->delimiter(',');
    option(sub, "out", table_out, "Output CSV (stdout if empty)");
  };
  auto* periods = ode_cmd->add_subcommand("periods", "Closed-form periods");
  add_grid(periods);
  auto* bounds = ode_cmd->add_subcommand("mass-bounds", "Mass sandwich per orbit");
  add_grid(bounds);
  double orbit_u0 = 1.0, orbit_alpha = 1.0, orbit_p = 4.0;
  std::size_t samples = 128;
  auto* orbit = ode_cmd->add_subcommand("orbit", "One sampled period");
  option(orbit, "u0", orbit_u0, "Amplitude");
  option(orbit, "alpha", orbit_alpha, "Coefficient");
  option(orbit, "p", orbit_p, "Exponent");
  option(orbit, "samples", samples, "Samples per period (even)");
  option(orbit, "out", table_out, "Output CSV (stdout if empty)");

  std::size_t n_min = 2;
  std::string levels_out;
  auto* levels = app.add_subcommand("levels", "S_N, beta_N, b_lower_N and minimax upper bounds");
  add_run(levels);
  option(levels, "N-min", n_min, "Smallest N");
  option(levels, "out", levels_out, "Output CSV (stdout if empty)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*solve) return cmd_solve(cfg);
    if (*verify_cmd) return cmd_verify(report, tolerance);
    if (*tadpole) return cmd_tadpole(cfg.p, k, v0, cfg.h, tad_trunc, tad_out);
    if (*periods) return cmd_periods(grid, table_out);
    if (*bounds) return cmd_mass_bounds(grid, table_out);
    if (*orbit) return cmd_orbit(orbit_u0, orbit_alpha, orbit_p, samples, table_out);
    if (*levels) return cmd_levels(cfg, n_min, levels_out);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const GraphError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const MeshError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const OdeError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const Error& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kSolver;
  }
  return kOk;
}
