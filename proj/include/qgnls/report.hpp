#pragma once

// Solved bound states with their identity residuals, Morse data and
// provenance; JSON export and independent re-verification.

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qgnls/analysis.hpp"
#include "qgnls/discretization.hpp"
#include "qgnls/error.hpp"
#include "qgnls/graph.hpp"
#include "qgnls/solver.hpp"

namespace qgnls {

struct SolutionReport {
  SolverState state;
  double p = 0.0;
  double h = 0.0;
  IdentityResiduals identities;
  SpectralReport morse;
  SpectralReport constrained_morse;
  double truncation = 0.0;
  std::string seed;
  std::vector<SolverState> trace;
  bool admissible = false;
};

inline SolutionReport make_report(const DiscreteOperators& ops, double p, const std::string& seed,
                                  const ContinuationResult& run) {
  if (run.trace.empty()) throw SolverError(SolverError::Kind::bad_input, "empty continuation trace");
  SolutionReport r;
  r.state = run.final_state();
  r.p = p;
  r.h = ops.mesh->h();
  r.seed = seed;
  r.trace = run.trace;
  const auto u = r.state.u(ops);
  r.identities = identity_residuals(ops, u, r.state.rho, p, r.state.lambda);
  r.truncation = u.truncation_diagnostic();
  r.morse = morse_index(ops, r.state.x, r.state.rho, p, r.state.lambda, false);
  r.constrained_morse = morse_index(ops, r.state.x, r.state.rho, p, r.state.lambda, true);
  r.admissible = admissible(ops, r.state, p).ok;
  return r;
}

inline SolutionReport make_report(const DiscreteOperators& ops, double p, const Candidate& c) {
  return make_report(ops, p, c.tag, c.run);
}

inline nlohmann::json to_json(const SolverState& s) {
  return {{"lambda", s.lambda},     {"rho", s.rho},
          {"mu", s.mu},             {"energy", s.level},
          {"residual", s.residual}, {"relative_residual", s.relative_residual},
          {"iterations", s.iterations}, {"converged", s.converged}};
}

/// Self-contained: carries the graph, the mesh width and the nodal profile.
inline nlohmann::json to_json(const DiscreteOperators& ops, const SolutionReport& r) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& s : r.trace) trace.push_back(to_json(s));
  nlohmann::json profile = nlohmann::json::object();
  const auto u = r.state.u(ops);
  const auto& g = ops.graph();
  for (std::size_t e = 0; e < g.edge_count(); ++e) profile[g.edge(e).id] = u.edge_values(e);
  return {{"graph", to_json(g)},
          {"p", r.p},
          {"h", r.h},
          {"core_h", ops.mesh->core_h()},
          {"state", to_json(r.state)},
          {"identities", to_json(r.identities)},
          {"morse", to_json(r.morse)},
          {"constrained_morse", to_json(r.constrained_morse)},
          {"truncation_diagnostic", r.truncation},
          {"admissible", r.admissible},
          {"provenance", {{"seed", r.seed}, {"trace", trace}}},
          {"profile", profile}};
}

struct LoadedReport {
  DiscreteOperators ops;
  GraphFunction u;
  double p = 0.0;
  double lambda = 0.0;
  double rho = 1.0;
  double mu = 1.0;
};

inline LoadedReport load_report(const nlohmann::json& j) {
  try {
    auto g = load_graph(j.at("graph").dump());
    const double h = j.at("h").get<double>();
    auto ops = assemble(g, h, j.value("core_h", h));
    GraphFunction u(ops.mesh);
    const auto& prof = j.at("profile");
    for (std::size_t e = 0; e < ops.graph().edge_count(); ++e) {
      const auto vals = prof.at(ops.graph().edge(e).id).get<std::vector<double>>();
      auto& dst = u.edge_values(e);
      if (vals.size() != dst.size()) {
        throw ConfigError("profile does not match the mesh on edge '" + ops.graph().edge(e).id + "'");
      }
      dst = vals;
    }
    const auto& s = j.at("state");
    return {std::move(ops), std::move(u), j.at("p").get<double>(), s.at("lambda").get<double>(),
            s.at("rho").get<double>(), s.at("mu").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed report: ") + e.what());
  }
}

struct Verification {
  IdentityResiduals identities;
  double relative_residual = 0.0;
  double mass_error = 0.0;
  double truncation = 0.0;
  double tolerance = 0.0;
  bool ok = false;
};

/// Recomputes the weak residual and the identities from the stored profile
/// and multiplier.
inline Verification verify(const LoadedReport& r, double residual_tolerance = 1e-8) {
  const auto& ops = r.ops;
  const Vector x = ops.to_vector(r.u);
  Verification v;
  const Vector g = gradient(ops, x, r.rho, r.p, r.lambda);
  const double scale = residual_scale(ops, x, r.rho, r.p, r.lambda);
  v.relative_residual = scale == 0.0 ? 0.0 : ops.dual_norm(g) / scale;
  v.mass_error = std::abs(ops.mass_of(x) - r.mu) / r.mu;
  v.identities = identity_residuals(ops, r.u, r.rho, r.p, r.lambda);
  v.truncation = r.u.truncation_diagnostic();
  v.tolerance = 100.0 * ops.mesh->h() * ops.mesh->h() + 10.0 * v.truncation;
  v.ok = v.relative_residual <= residual_tolerance && v.mass_error <= 1e-10 && v.identities.max() <= v.tolerance &&
         r.lambda > 0.0;
  return v;
}

}  // namespace qgnls
