#pragma once

// Critical points of E_rho on the mass sphere: H^1-preconditioned projected
// gradient flow, Newton on the bordered system (u, lambda), continuation in
// rho, deflation, and the test-function families and rotation paths used to
// build minimax seeds.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "qgnls/analysis.hpp"
#include "qgnls/bump.hpp"
#include "qgnls/discretization.hpp"
#include "qgnls/error.hpp"
#include "qgnls/graph.hpp"

namespace qgnls {

struct SolverState {
  Vector x;
  double lambda = 0.0;
  double rho = 1.0;
  double mu = 1.0;
  double level = 0.0;
  /// Dual norm of the weak residual, and the same divided by the size of
  /// its terms.
  double residual = 0.0;
  double relative_residual = 0.0;
  int iterations = 0;
  bool converged = false;

  GraphFunction u(const DiscreteOperators& ops) const { return ops.to_function(x); }
};

struct NewtonOptions {
  double tolerance = 1e-10;
  int max_iterations = 60;
  double min_step = 1.0 / 1024.0;
  int homotopy_steps = 8;
};

/// lambda = -(1/mu) E'_rho(u)[u].
inline double almost_multiplier(const DiscreteOperators& ops, const Vector& x, double rho, double p, double mu) {
  return (rho * ops.core_lp(x, p) - ops.dirichlet(x)) / mu;
}

inline double almost_multiplier(const DiscreteOperators& ops, const GraphFunction& u, double rho, double p,
                                double mu) {
  return almost_multiplier(ops, ops.to_vector(u), rho, p, mu);
}

/// Rescales onto the mass sphere.
inline Vector project(const DiscreteOperators& ops, Vector x, double mu) {
  const double m = ops.mass_of(x);
  if (!(m > 0.0)) throw SolverError(SolverError::Kind::bad_input, "cannot project the zero function");
  x *= std::sqrt(mu / m);
  return x;
}

inline SolverState make_state(const DiscreteOperators& ops, Vector x, double rho, double p, double mu,
                              double lambda) {
  SolverState s;
  s.lambda = lambda;
  s.rho = rho;
  s.mu = mu;
  s.level = energy(ops, x, rho, p);
  const Vector r = gradient(ops, x, rho, p, lambda);
  s.residual = ops.dual_norm(r);
  const double scale = residual_scale(ops, x, rho, p, lambda);
  s.relative_residual = scale > 0.0 ? s.residual / scale : 0.0;
  s.x = std::move(x);
  return s;
}

struct FlowOptions {
  double dt = 0.1;
  int max_steps = 1000;
  double tolerance = 1e-8;
};

/// Steepest descent of E_rho on the mass sphere in the H^1 metric, with
/// renormalization after every step. Throws on concentration at the grid
/// scale, the signature of the supercritical fall to -infinity.
inline SolverState gradient_flow(const DiscreteOperators& ops, const Vector& x0, double rho, double p, double mu,
                                 const FlowOptions& opt = {}, std::vector<SolverState>* history = nullptr) {
  const SparseMatrix G = ops.stiffness + ops.massmat();
  Eigen::SimplicialLDLT<SparseMatrix> solver(G);
  if (solver.info() != Eigen::Success) throw SolverError(SolverError::Kind::bad_input, "H^1 Gram matrix singular");
  double hmin = std::numeric_limits<double>::infinity();
  for (const auto& gr : ops.mesh->grids()) hmin = std::min(hmin, gr.step);
  const double escape = mu / (hmin * hmin);
  Vector x = project(ops, x0, mu);
  SolverState s = make_state(ops, x, rho, p, mu, almost_multiplier(ops, x, rho, p, mu));
  if (history) history->push_back(s);
  for (int k = 0; k < opt.max_steps && s.relative_residual > opt.tolerance; ++k) {
    const Vector r = gradient(ops, s.x, rho, p, s.lambda);
    x = project(ops, s.x - opt.dt * solver.solve(r), mu);
    if (!x.allFinite() || ops.dirichlet(x) > escape) {
      throw SolverError(SolverError::Kind::supercritical_escape,
                        "supercritical escape: gradient flow concentrated at the grid scale after " +
                            std::to_string(k + 1) + " steps");
    }
    const int it = s.iterations + 1;
    s = make_state(ops, x, rho, p, mu, almost_multiplier(ops, x, rho, p, mu));
    s.iterations = it;
    if (history) history->push_back(s);
  }
  s.converged = s.relative_residual <= opt.tolerance;
  return s;
}

namespace detail {

/// Multiplicative deflation factor prod_k (1 + 1/|x - x_k|^2)(1 + 1/|x + x_k|^2)
/// and its logarithmic gradient.
struct Deflation {
  const DiscreteOperators* ops = nullptr;
  std::vector<Vector> known;

  bool active() const { return !known.empty(); }

  double log_factor(const Vector& x) const {
    double s = 0.0;
    for (const auto& k : known) {
      for (double sign : {1.0, -1.0}) {
        const double d2 = ops->mass_of(x - sign * k);
        s += std::log1p(1.0 / d2);
      }
    }
    return s;
  }

  Vector log_gradient(const Vector& x) const {
    Vector g = Vector::Zero(x.size());
    for (const auto& k : known) {
      for (double sign : {1.0, -1.0}) {
        const Vector diff = x - sign * k;
        const double d2 = ops->mass_of(diff);
        g -= 2.0 / (d2 * (d2 + 1.0)) * ops->mass.cwiseProduct(diff);
      }
    }
    return g;
  }
};

struct NewtonProblem {
  const DiscreteOperators* ops;
  double rho;
  double p;
  double mu;
  /// Subtracted from the residual (Newton homotopy).
  Vector offset;
  const Deflation* deflation = nullptr;

  Vector residual(const Vector& x, double lambda) const {
    Vector r = gradient(*ops, x, rho, p, lambda);
    if (offset.size() == r.size()) r -= offset;
    return r;
  }

  double merit(const Vector& x, double lambda) const {
    const Vector r = residual(x, lambda);
    const double m = r.dot(r.cwiseQuotient(ops->mass));
    if (deflation && deflation->active()) return std::exp(2.0 * deflation->log_factor(x)) * m;
    return m;
  }
};

struct NewtonOutcome {
  Vector x;
  double lambda = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string failure;
};

inline NewtonOutcome newton(const NewtonProblem& prob, Vector x, double lambda, const NewtonOptions& opt,
                            bool final_stage) {
  const auto& ops = *prob.ops;
  const auto n = static_cast<Eigen::Index>(ops.size());
  NewtonOutcome out;
  x = project(ops, std::move(x), prob.mu);
  double merit = prob.merit(x, lambda);
  Eigen::SparseLU<SparseMatrix> lu;
  // Prefer diagonal pivots: partial pivoting on indefinite Hessians fills in.
  lu.setPivotThreshold(0.01);
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Vector r = prob.residual(x, lambda);
    if (final_stage) {
      const double scale = residual_scale(ops, x, prob.rho, prob.p, lambda);
      if (ops.dual_norm(r) <= opt.tolerance * scale) {
        out.converged = true;
        break;
      }
    } else if (ops.dual_norm(r) <= 1e-8 * residual_scale(ops, x, prob.rho, prob.p, lambda)) {
      out.converged = true;
      break;
    }
    SparseMatrix J = hessian_form(ops, x, prob.rho, prob.p, lambda);
    J.conservativeResize(n + 1, n + 1);
    const Vector b = ops.mass.cwiseProduct(x);
    std::vector<Eigen::Triplet<double>> border;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (b[i] != 0.0) {
        border.emplace_back(i, n, b[i]);
        border.emplace_back(n, i, b[i]);
      }
    }
    SparseMatrix B(n + 1, n + 1);
    B.setFromTriplets(border.begin(), border.end());
    J += B;
    J.makeCompressed();
    lu.compute(J);
    if (lu.info() != Eigen::Success) {
      throw SolverError(SolverError::Kind::degenerate,
                        "degenerate critical point: singular bordered Hessian (perturb rho)");
    }
    Vector rhs(n + 1);
    rhs.head(n) = -r;
    rhs[n] = -0.5 * (ops.mass_of(x) - prob.mu);
    Vector step = lu.solve(rhs);
    if (!step.allFinite()) {
      throw SolverError(SolverError::Kind::degenerate,
                        "degenerate critical point: bordered Hessian solve not finite (perturb rho)");
    }
    if (prob.deflation && prob.deflation->active()) {
      const double denom = 1.0 - prob.deflation->log_gradient(x).dot(step.head(n));
      step /= denom;
    }
    double alpha = 1.0;
    bool accepted = false;
    while (alpha >= opt.min_step) {
      Vector xt = project(ops, x + alpha * step.head(n), prob.mu);
      const double lt = lambda + alpha * step[n];
      const double mt = prob.merit(xt, lt);
      if (std::isfinite(mt) && mt < (1.0 - 1e-4 * alpha) * merit) {
        x = std::move(xt);
        lambda = lt;
        merit = mt;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    out.iterations = it + 1;
    if (!accepted) {
      const double dx = std::sqrt(ops.mass_of(step.head(n)));
      if (dx <= 1e-12 * std::sqrt(prob.mu)) {
        // Round-off floor: the full step is below representable changes.
        out.converged = true;
      } else {
        out.failure = "line search failed";
      }
      break;
    }
  }
  if (!out.converged && out.failure.empty()) out.failure = "iteration budget exhausted";
  out.x = std::move(x);
  out.lambda = lambda;
  return out;
}

}  // namespace detail

/// Newton on {residual(u, lambda) = 0, mass(u) = mu} with a backtracking
/// line search on the (deflated) residual merit; iterates are projected onto
/// the mass sphere. If damped Newton stalls, a Newton homotopy from the
/// start's own residual is tried.
inline SolverState constrained_newton(const DiscreteOperators& ops, const SolverState& start, double p,
                                      const NewtonOptions& opt = {}, const std::vector<Vector>& known = {}) {
  detail::Deflation defl{&ops, known};
  detail::NewtonProblem prob{&ops, start.rho, p, start.mu, Vector(), &defl};
  auto res = detail::newton(prob, start.x, start.lambda, opt, true);
  int total = res.iterations;
  if (!res.converged && opt.homotopy_steps > 0) {
    Vector x = project(ops, start.x, start.mu);
    double lambda = start.lambda;
    const Vector r0 = gradient(ops, x, start.rho, p, lambda);
    bool ok = true;
    for (int k = 1; k <= opt.homotopy_steps && ok; ++k) {
      const double s = static_cast<double>(k) / opt.homotopy_steps;
      prob.offset = (1.0 - s) * r0;
      auto stage = detail::newton(prob, x, lambda, opt, k == opt.homotopy_steps);
      total += stage.iterations;
      ok = stage.converged;
      x = std::move(stage.x);
      lambda = stage.lambda;
      if (k == opt.homotopy_steps) res = std::move(stage);
    }
    if (!ok) res.converged = false;
  }
  SolverState s = make_state(ops, res.x, start.rho, p, start.mu, res.lambda);
  s.iterations = total;
  s.converged = res.converged;
  if (!s.converged) {
    throw SolverError(SolverError::Kind::no_convergence,
                      "Newton did not converge (" + (res.failure.empty() ? std::string("homotopy failed") : res.failure) +
                          ", relative residual " + std::to_string(s.relative_residual) + ")");
  }
  return s;
}

/// Newton from a raw guess: projects and seeds lambda by the almost multiplier.
inline SolverState solve_from(const DiscreteOperators& ops, const Vector& seed, double rho, double p, double mu,
                              const NewtonOptions& opt = {}, const std::vector<Vector>& known = {}) {
  const Vector x = project(ops, seed, mu);
  return constrained_newton(ops, make_state(ops, x, rho, p, mu, almost_multiplier(ops, x, rho, p, mu)), p, opt,
                            known);
}

inline std::vector<double> default_rho_grid(std::size_t points = 11) {
  if (points < 1) throw SolverError(SolverError::Kind::bad_input, "rho grid needs at least one point");
  if (points == 1) return {1.0};
  std::vector<double> g;
  for (std::size_t i = 0; i < points; ++i) g.push_back(0.5 + 0.5 * static_cast<double>(i) / (points - 1));
  g.back() = 1.0;
  return g;
}

struct ContinuationResult {
  std::vector<SolverState> trace;
  bool complete = false;
  std::string failure;

  const SolverState& final_state() const { return trace.back(); }
  double max_lambda() const {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& s : trace) m = std::max(m, s.lambda);
    return m;
  }
};

/// Solves at the first grid value from the seed and warm-starts along the
/// grid. A failed step is retried with halved increments (at most three
/// times); after that the partial trace is returned with a failure marker.
inline ContinuationResult rho_continuation(const DiscreteOperators& ops, double p, double mu,
                                           const std::vector<double>& grid, const Vector& seed,
                                           const NewtonOptions& opt = {}, const std::vector<Vector>& known = {}) {
  if (grid.empty() || std::abs(grid.back() - 1.0) > 1e-14) {
    throw SolverError(SolverError::Kind::bad_input, "rho grid must end at 1");
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 0.5 - 1e-14 || grid[i] > 1.0 + 1e-14 || (i > 0 && !(grid[i] > grid[i - 1]))) {
      throw SolverError(SolverError::Kind::bad_input, "rho grid must ascend within [1/2, 1]");
    }
  }
  ContinuationResult out;
  try {
    out.trace.push_back(solve_from(ops, seed, grid.front(), p, mu, opt, known));
  } catch (const SolverError& e) {
    out.failure = "continuation breakdown at rho = " + std::to_string(grid.front()) + ": " + e.what();
    return out;
  }
  for (std::size_t i = 1; i < grid.size(); ++i) {
    double target = grid[i];
    int halvings = 0;
    while (out.trace.back().rho < grid[i]) {
      SolverState start = out.trace.back();
      start.rho = target;
      try {
        out.trace.push_back(constrained_newton(ops, start, p, opt, known));
        target = grid[i];
      } catch (const SolverError& e) {
        if (++halvings > 3) {
          out.failure = "continuation breakdown at rho = " + std::to_string(target) + ": " + e.what();
          return out;
        }
        target = 0.5 * (out.trace.back().rho + target);
      }
    }
  }
  out.complete = true;
  return out;
}

/// L^2 distance after choosing the sign of b closest to a.
inline double aligned_distance(const DiscreteOperators& ops, const Vector& a, const Vector& b) {
  return std::sqrt(std::min(ops.mass_of(a - b), ops.mass_of(a + b)));
}

struct DeflationOptions {
  NewtonOptions newton;
  std::vector<double> rho_grid = {1.0};
  int restarts = 4;
  unsigned seed = 1;
  double perturbation = 0.05;
};

/// Newton (or rho-continuation) on the deflated residual. Converging back to
/// a known solution or failing triggers a restart from a perturbed seed.
inline ContinuationResult deflated_solve(const DiscreteOperators& ops, double p, double mu,
                                         const std::vector<Vector>& known, const Vector& seed,
                                         const DeflationOptions& opt = {}) {
  const double threshold = 1e-3 * std::sqrt(mu);
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal;
  const SparseMatrix G = ops.stiffness + ops.massmat();
  std::optional<Eigen::SimplicialLDLT<SparseMatrix>> smoother;
  std::string last;
  for (int attempt = 0; attempt <= opt.restarts; ++attempt) {
    Vector x = seed;
    if (attempt > 0) {
      if (!smoother) smoother.emplace(G);
      Vector noise(x.size());
      for (auto& v : noise) v = normal(rng);
      noise = smoother->solve(ops.mass.cwiseProduct(noise));
      noise *= opt.perturbation * std::sqrt(ops.mass_of(x) / ops.mass_of(noise));
      x += noise;
    }
    auto run = rho_continuation(ops, p, mu, opt.rho_grid, x, opt.newton, known);
    if (!run.complete) {
      last = run.failure;
      continue;
    }
    const auto& xs = run.final_state().x;
    const bool fresh = std::all_of(known.begin(), known.end(),
                                   [&](const Vector& k) { return aligned_distance(ops, xs, k) > threshold; });
    if (fresh) return run;
    last = "converged to a known solution";
  }
  throw SolverError(SolverError::Kind::no_new_solution, "no new solution found (" + last + ")");
}

// ---------------------------------------------------------------------------
// Test-function families

struct BumpFamily {
  std::vector<GraphFunction> functions;
  std::size_t edge = 0;
  /// Dilation factor t of the unit-interval bump.
  double dilation = 0.0;
  /// Spacing between consecutive supports (a whole number of cells).
  double spacing = 0.0;
};

namespace detail {

inline std::size_t longest_edge(const MetricGraph& g, const std::vector<std::size_t>& edges) {
  if (edges.empty()) throw SolverError(SolverError::Kind::bad_input, "graph has no edge of the requested kind");
  return *std::max_element(edges.begin(), edges.end(), [&](auto a, auto b) { return g.edge(a).length < g.edge(b).length; });
}

/// n node-aligned copies of one sampled dilate, each rescaled to mass mu.
inline std::vector<GraphFunction> packed_bumps(const DiscreteOperators& ops, std::size_t e, std::size_t n,
                                               double width, double spacing, double mu) {
  std::vector<GraphFunction> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto b = sampled_bump(ops.mesh, e, static_cast<double>(i) * spacing, width, 1.0);
    const double m = mass(b);
    if (!(m > 0.0)) throw MeshError("bump not resolved by the mesh");
    b *= std::sqrt(mu / m);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace detail

/// n disjoint translated dilates on the longest half-line, each with mass mu
/// and ||phi_i'|| = beta (measured on the mesh).
inline BumpFamily bump_family(const DiscreteOperators& ops, std::size_t n, double beta, double mu) {
  if (n == 0 || !(beta > 0.0) || !(mu > 0.0)) throw SolverError(SolverError::Kind::bad_input, "bump_family needs n > 0, beta > 0, mu > 0");
  const auto& g = ops.graph();
  const std::size_t e = detail::longest_edge(g, g.halflines());
  const double step = ops.mesh->grid(e).step;
  const auto norms = bump_norms();
  auto deriv = [&](double width) {
    auto b = detail::packed_bumps(ops, e, 1, width, 0.0, mu).front();
    return std::sqrt(ops.dirichlet(ops.to_vector(b)));
  };
  // Continuous dilation tau = beta / ||phi'|| gives width 1/tau; refine so the
  // sampled bump has exactly the requested derivative norm.
  double width = std::sqrt(mu) * norms.derivative / beta;
  double lo = 0.5 * width, hi = 2.0 * width;
  while (deriv(lo) < beta) lo *= 0.5;
  while (deriv(hi) > beta) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (deriv(mid) > beta ? lo : hi) = mid;
  }
  width = 0.5 * (lo + hi);
  const double spacing = std::ceil(width / step) * step;
  if (static_cast<double>(n) * spacing > g.edge(e).length) {
    throw SolverError(SolverError::Kind::bad_input,
                      "insufficient truncation: " + std::to_string(n) + " bumps need R >= " +
                          std::to_string(static_cast<double>(n) * spacing));
  }
  if (bump_resolution(*ops.mesh, e, width) < 8) throw MeshError("mesh too coarse for the half-line bumps");
  BumpFamily f;
  f.edge = e;
  f.dilation = 1.0 / width;
  f.spacing = spacing;
  f.functions = detail::packed_bumps(ops, e, n, width, spacing, mu);
  return f;
}

/// n disjoint dilated bumps packed in the longest core edge with every
/// unit-sphere combination of the first n-1 having energy <= b_bar and
/// derivative norm >= beta_bar, for every rho in [1/2, 1].
inline BumpFamily core_family(const DiscreteOperators& ops, std::size_t n, double beta_bar, double b_bar, double mu,
                              double p) {
  if (n < 2 || !(beta_bar > 0.0) || !(mu > 0.0)) throw SolverError(SolverError::Kind::bad_input, "core_family needs n >= 2, beta_bar > 0, mu > 0");
  const auto& g = ops.graph();
  const std::size_t e = detail::longest_edge(g, g.core_edges());
  const double len = g.edge(e).length;
  const double step = ops.mesh->grid(e).step;
  // Base support: one slot of length len/n minus a cell, so node-aligned
  // slots stay disjoint on the mesh.
  const double slots = std::floor(len / static_cast<double>(n) / step) * step;
  const double base = slots - step;
  if (!(base > 0.0)) throw MeshError("core edge too short for " + std::to_string(n) + " bumps");
  const double C = std::pow(static_cast<double>(n - 1), 1.0 - 0.5 * p);
  auto sample = [&](double t) { return detail::packed_bumps(ops, e, 1, base / t, 0.0, mu).front(); };
  auto bound = [&](const GraphFunction& b) {
    const Vector x = ops.to_vector(b);
    return 0.5 * ops.dirichlet(x) - C / (2.0 * p) * ops.core_lp(x, p);
  };
  auto derivative = [&](const GraphFunction& b) { return std::sqrt(ops.dirichlet(ops.to_vector(b))); };
  // Smallest admissible t on a geometric ladder, starting at the continuum
  // value max{1, beta_bar/||phi'||}.
  const auto norms = bump_norms();
  const double phi_prime = norms.derivative / base;
  double t = std::max(1.0, beta_bar / phi_prime);
  for (;; t *= 1.01) {
    if (bump_resolution(*ops.mesh, e, base / t) < 6) {
      throw MeshError("core bumps below mesh resolution (t = " + std::to_string(t) + "); refine h or enlarge the core");
    }
    const auto b = sample(t);
    if (derivative(b) >= beta_bar && bound(b) <= b_bar) break;
  }
  BumpFamily f;
  f.edge = e;
  f.dilation = t;
  f.spacing = slots;
  f.functions = detail::packed_bumps(ops, e, n, base / t, slots, mu);
  return f;
}

// ---------------------------------------------------------------------------
// Rotation paths between frames

/// gamma(t, a) = sum_i a_i R(t) u_i, with R(t) a path in SO(d) from the
/// identity to a rotation taking u_i to v_i on the span of both frames.
class FramePath {
 public:
  FramePath(const DiscreteOperators& ops, const std::vector<Vector>& u, const std::vector<Vector>& v)
      : ops_(&ops), n_(u.size()) {
    if (u.size() != v.size() || u.empty()) throw SolverError(SolverError::Kind::bad_input, "frames must have equal nonzero size");
    mu_ = ops.mass_of(u.front());
    check_frame(u);
    check_frame(v);
    // Mass-orthonormal basis of span(u, v), starting with the normalized u.
    for (const auto& f : u) basis_.push_back(f / std::sqrt(mu_));
    for (const auto& f : v) {
      Vector w = f / std::sqrt(mu_);
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& q : basis_) w -= ops.inner(q, w) * q;
      const double nw = std::sqrt(ops.mass_of(w));
      if (nw > 1e-8) basis_.push_back(w / nw);
    }
    // Pad to a dimension with room for a determinant fix.
    const auto d = static_cast<Eigen::Index>(std::max(basis_.size(), n_ + 1));
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(d, static_cast<Eigen::Index>(n_));
    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(d, static_cast<Eigen::Index>(n_));
    for (std::size_t i = 0; i < n_; ++i) {
      U(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = 1.0;
      for (std::size_t k = 0; k < basis_.size(); ++k) {
        V(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = ops.inner(basis_[k], v[i]) / std::sqrt(mu_);
      }
    }
    const Eigen::MatrixXd Uc = complete(U), Vc0 = complete(V);
    Eigen::MatrixXd Vc = Vc0;
    Eigen::MatrixXd R = Vc * Uc.transpose();
    if (R.determinant() < 0.0) {
      Vc.col(d - 1) *= -1.0;
      R = Vc * Uc.transpose();
    }
    rotation_ = R;
    build_generator(R);
  }

  std::size_t size() const noexcept { return n_; }
  double mu() const noexcept { return mu_; }
  const Eigen::MatrixXd& rotation() const noexcept { return rotation_; }

  Eigen::MatrixXd rotation_at(double t) const {
    const auto d = schur_.rows();
    Eigen::MatrixXd T = Eigen::MatrixXd::Identity(d, d);
    for (const auto& [i, j, angle] : planes_) {
      const double c = std::cos(t * angle), s = std::sin(t * angle);
      T(i, i) = c;
      T(j, j) = c;
      T(i, j) = -s;
      T(j, i) = s;
    }
    return schur_ * T * schur_.transpose();
  }

  Vector operator()(double t, const Eigen::VectorXd& a) const {
    if (static_cast<std::size_t>(a.size()) != n_) throw SolverError(SolverError::Kind::bad_input, "coefficient vector has wrong size");
    Eigen::VectorXd coeff = Eigen::VectorXd::Zero(schur_.rows());
    coeff.head(static_cast<Eigen::Index>(n_)) = a;
    const Eigen::VectorXd c = rotation_at(t) * coeff;
    Vector x = Vector::Zero(static_cast<Eigen::Index>(ops_->size()));
    for (std::size_t k = 0; k < basis_.size(); ++k) x += c[static_cast<Eigen::Index>(k)] * basis_[k];
    return std::sqrt(mu_) * x;
  }

 private:
  void check_frame(const std::vector<Vector>& f) const {
    for (std::size_t i = 0; i < f.size(); ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        const double ip = ops_->inner(f[i], f[j]);
        const double want = i == j ? mu_ : 0.0;
        if (std::abs(ip - want) > 1e-8 * mu_) {
          throw SolverError(SolverError::Kind::bad_input, "frame is not L^2-orthogonal with equal masses");
        }
      }
    }
  }

  /// Extends orthonormal columns to an orthonormal basis.
  static Eigen::MatrixXd complete(const Eigen::MatrixXd& A) {
    const auto d = A.rows();
    Eigen::MatrixXd Q(d, d);
    Q.leftCols(A.cols()) = A;
    Eigen::Index filled = A.cols();
    for (Eigen::Index k = 0; k < d && filled < d; ++k) {
      Eigen::VectorXd w = Eigen::VectorXd::Unit(d, k);
      for (int pass = 0; pass < 2; ++pass) w -= Q.leftCols(filled) * (Q.leftCols(filled).transpose() * w);
      if (w.norm() > 1e-6) Q.col(filled++) = w.normalized();
    }
    return Q;
  }

  /// Real Schur form of the rotation: 2x2 blocks become planes rotated by
  /// their angle, and eigenvalues -1 are paired into half-turns.
  void build_generator(const Eigen::MatrixXd& R) {
    Eigen::RealSchur<Eigen::MatrixXd> schur(R);
    schur_ = schur.matrixU();
    const Eigen::MatrixXd T = schur.matrixT();
    const auto d = T.rows();
    std::vector<Eigen::Index> flips;
    for (Eigen::Index i = 0; i < d;) {
      if (i + 1 < d && std::abs(T(i + 1, i)) > 1e-12) {
        planes_.push_back({i, i + 1, std::atan2(T(i + 1, i), T(i, i))});
        i += 2;
      } else {
        if (T(i, i) < 0.0) flips.push_back(i);
        ++i;
      }
    }
    if (flips.size() % 2 != 0) throw SolverError(SolverError::Kind::degenerate, "rotation has odd number of -1 eigenvalues");
    for (std::size_t k = 0; k < flips.size(); k += 2) planes_.push_back({flips[k], flips[k + 1], std::numbers::pi});
  }

  struct Plane {
    Eigen::Index i, j;
    double angle;
  };

  const DiscreteOperators* ops_;
  std::size_t n_;
  double mu_ = 0.0;
  std::vector<Vector> basis_;
  Eigen::MatrixXd rotation_, schur_;
  std::vector<Plane> planes_;
};

inline GraphFunction frame_path(const DiscreteOperators& ops, const std::vector<GraphFunction>& u_frame,
                                const std::vector<GraphFunction>& v_frame, double t, const Eigen::VectorXd& a) {
  std::vector<Vector> u, v;
  for (const auto& f : u_frame) u.push_back(ops.to_vector(f));
  for (const auto& f : v_frame) v.push_back(ops.to_vector(f));
  return ops.to_function(FramePath(ops, u, v)(t, a));
}

struct MinimaxOptions {
  std::size_t t_samples = 41;
  std::size_t a_samples = 64;
  unsigned seed = 1;
  /// Overrides the 2 beta_N choice of the derivative threshold of the core
  /// frame.
  std::optional<double> beta_bar;
  /// S_N estimate used to compute beta_N when beta_bar is not given.
  std::optional<double> S;
};

struct MinimaxEstimate {
  double c_upper = -std::numeric_limits<double>::infinity();
  Vector argmax;
  double t_argmax = 0.0;
  Eigen::VectorXd a_argmax;
  /// max over the sphere of the energies at t = 0 and t = 1.
  double endpoint_max = -std::numeric_limits<double>::infinity();
  double beta_bar = 0.0;
  double core_dilation = 0.0;
};

/// Sphere samples: the coordinate directions with both signs, then seeded
/// Gaussian directions.
inline std::vector<Eigen::VectorXd> sphere_samples(std::size_t dim, std::size_t count, unsigned seed) {
  std::vector<Eigen::VectorXd> out;
  for (std::size_t i = 0; i < dim; ++i) {
    for (double s : {1.0, -1.0}) out.push_back(s * Eigen::VectorXd::Unit(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(i)));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  while (out.size() < std::max(count, 2 * dim)) {
    Eigen::VectorXd a(static_cast<Eigen::Index>(dim));
    for (auto& v : a) v = normal(rng);
    out.push_back(a.normalized());
  }
  return out;
}

/// Upper bound on the minimax level c_rho^N along the rotation path joining
/// the half-line frame (beta = 1) to the core frame (beta_bar = 2 beta_N,
/// b_bar = 1), sampled on a (t, a) grid.
inline MinimaxEstimate minimax_estimate(const DiscreteOperators& ops, double p, double mu, double rho, std::size_t N,
                                        const MinimaxOptions& opt = {}) {
  if (N < 2) throw SolverError(SolverError::Kind::bad_input, "minimax levels need N >= 2");
  MinimaxEstimate out;
  if (opt.beta_bar) {
    out.beta_bar = *opt.beta_bar;
  } else {
    const double S = opt.S ? *opt.S : rayleigh_level(ops, p, N).S;
    out.beta_bar = 2.0 * beta_levels(mu, p, {S}).beta.front();
  }
  const auto u_fam = bump_family(ops, N - 1, 1.0, mu);
  const auto v_fam = core_family(ops, N, out.beta_bar, 1.0, mu, p);
  out.core_dilation = v_fam.dilation;
  std::vector<Vector> u, v;
  for (const auto& f : u_fam.functions) u.push_back(ops.to_vector(f));
  for (std::size_t i = 0; i + 1 < v_fam.functions.size(); ++i) v.push_back(ops.to_vector(v_fam.functions[i]));
  const FramePath path(ops, u, v);
  const auto dirs = sphere_samples(N - 1, opt.a_samples, opt.seed);
  const std::size_t nt = std::max<std::size_t>(opt.t_samples, 2);
  for (std::size_t it = 0; it < nt; ++it) {
    const double t = static_cast<double>(it) / static_cast<double>(nt - 1);
    for (const auto& a : dirs) {
      const Vector x = path(t, a);
      const double E = energy(ops, x, rho, p);
      if (it == 0 || it + 1 == nt) out.endpoint_max = std::max(out.endpoint_max, E);
      if (E > out.c_upper) {
        out.c_upper = E;
        out.argmax = x;
        out.t_argmax = t;
        out.a_argmax = a;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Seeds and the multiplicity search

struct Seed {
  std::string tag;
  Vector x;
  /// Continuation grid for this seed; {1} solves directly at rho = 1.
  std::vector<double> rho_grid = {1.0};
};

/// One bump spanning the whole core edge e.
inline Seed core_bump_seed(const DiscreteOperators& ops, std::size_t e, std::vector<double> rho_grid = {1.0}) {
  const auto& edge = ops.graph().edge(e);
  if (edge.is_halfline()) throw SolverError(SolverError::Kind::bad_input, "core bump seed needs a bounded edge");
  return {"core-bump:" + edge.id, ops.to_vector(sampled_bump(ops.mesh, e, 0.0, edge.length, 1.0)),
          std::move(rho_grid)};
}

/// 1 on the core, exp(-k x) on every half-line.
inline Seed junction_seed(const DiscreteOperators& ops, double k) {
  const auto& g = ops.graph();
  const auto u = GraphFunction::sample(
      ops.mesh, [&](std::size_t e, double x) { return g.edge(e).is_halfline() ? std::exp(-k * x) : 1.0; });
  std::ostringstream tag;
  tag << "junction:" << k;
  return {tag.str(), ops.to_vector(u)};
}

/// Argmax of the sampled minimax path at parameter N.
inline Seed minimax_seed(const DiscreteOperators& ops, double p, double mu, std::size_t N,
                         const MinimaxOptions& opt = {}) {
  return {"minimax:" + std::to_string(N), minimax_estimate(ops, p, mu, 1.0, N, opt).argmax};
}

struct Admissibility {
  bool ok = false;
  double identities = 0.0;
  double tolerance = 0.0;
  double truncation = 0.0;
  std::string reason;
};

/// A converged state counts as a bound state when lambda > 0 and every
/// identity residual is below 100 h^2 + 10 * truncation diagnostic.
inline Admissibility admissible(const DiscreteOperators& ops, const SolverState& s, double p) {
  Admissibility a;
  const auto u = s.u(ops);
  a.truncation = u.truncation_diagnostic();
  a.identities = identity_residuals(ops, u, s.rho, p, s.lambda).max();
  a.tolerance = 100.0 * ops.mesh->h() * ops.mesh->h() + 10.0 * a.truncation;
  if (!s.converged) {
    a.reason = "not converged";
  } else if (!(s.lambda > 0.0)) {
    a.reason = "lambda <= 0";
  } else if (!(a.identities <= a.tolerance)) {
    a.reason = "identity residuals above tolerance";
  } else {
    a.ok = true;
  }
  return a;
}

struct Candidate {
  std::string tag;
  ContinuationResult run;
  Admissibility check;
};

struct SearchOptions {
  NewtonOptions newton;
  /// Deflated re-solves of one seed after it returned an inadmissible state.
  int retries = 3;
  int restarts = 1;
  unsigned seed = 1;
  std::size_t max_solutions = std::numeric_limits<std::size_t>::max();
};

struct SearchResult {
  std::vector<Candidate> accepted;
  std::vector<Candidate> rejected;
  std::vector<std::string> failures;
};

/// Deflated solves over the seeds in order. Every converged state, accepted
/// or not, is deflated for the remaining solves.
inline SearchResult find_solutions(const DiscreteOperators& ops, double p, double mu, const std::vector<Seed>& seeds,
                                   const SearchOptions& opt = {}) {
  SearchResult out;
  std::vector<Vector> known;
  for (const auto& seed : seeds) {
    if (out.accepted.size() >= opt.max_solutions) break;
    for (int attempt = 0; attempt <= opt.retries; ++attempt) {
      DeflationOptions d;
      d.newton = opt.newton;
      d.rho_grid = seed.rho_grid;
      d.restarts = opt.restarts;
      d.seed = opt.seed + static_cast<unsigned>(attempt);
      Candidate c{seed.tag, {}, {}};
      try {
        c.run = deflated_solve(ops, p, mu, known, seed.x, d);
      } catch (const SolverError& e) {
        out.failures.push_back(seed.tag + ": " + e.what());
        break;
      }
      known.push_back(c.run.final_state().x);
      c.check = admissible(ops, c.run.final_state(), p);
      if (c.check.ok) {
        out.accepted.push_back(std::move(c));
        break;
      }
      out.rejected.push_back(std::move(c));
    }
  }
  return out;
}

}  // namespace qgnls
