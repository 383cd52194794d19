#pragma once

// Spectral and variational diagnostics: inertia counts of the second
// variation, Morse indices (free and on the tangent space of the mass
// sphere), half-line test subspaces, Rayleigh levels S_N and the derived
// beta_N thresholds.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <nlohmann/json.hpp>

#include "qgnls/bump.hpp"
#include "qgnls/discretization.hpp"
#include "qgnls/error.hpp"
#include "qgnls/graph.hpp"

namespace qgnls {

/// Counts eigenvalues of the symmetric pencil (Q, G) below a shift by
/// Sylvester's law on an LDL^T factorization of Q - sigma G. With a
/// constraint vector b the pencil is restricted to {phi : b^T phi = 0}
/// (Haynsworth inertia additivity on the bordered matrix).
class PencilCounter {
 public:
  PencilCounter(SparseMatrix Q, SparseMatrix G, std::optional<Vector> constraint = std::nullopt)
      : Q_(std::move(Q)), G_(std::move(G)), b_(std::move(constraint)) {
    Q_.makeCompressed();
    G_.makeCompressed();
    shifted_ = Q_ - G_;
    ldlt_.analyzePattern(shifted_);
  }

  Eigen::Index size() const { return Q_.rows(); }
  bool constrained() const { return b_.has_value(); }
  /// Dimension of the space the pencil acts on.
  Eigen::Index dimension() const { return size() - (constrained() ? 1 : 0); }

  std::ptrdiff_t count_below(double sigma) {
    for (int attempt = 0; attempt < 8; ++attempt) {
      shifted_ = Q_ - sigma * G_;
      ldlt_.factorize(shifted_);
      const Vector d = ldlt_.vectorD();
      const bool singular = ldlt_.info() != Eigen::Success || !d.allFinite() || (d.array() == 0.0).any();
      if (singular) {
        sigma += 1e-12 * std::ldexp(1.0, attempt) * std::max(1.0, std::abs(sigma));
        continue;
      }
      std::ptrdiff_t neg = (d.array() < 0.0).count();
      if (b_) {
        const Vector y = ldlt_.solve(*b_);
        neg += (b_->dot(y) > 0.0 ? 1 : 0) - 1;
      }
      return neg;
    }
    throw AnalysisError("inertia count failed: pencil singular near shift " + std::to_string(sigma));
  }

  /// Lower bound for the spectrum (Gershgorin, valid when G is diagonal and
  /// positive).
  double lower_bound() const {
    double lo = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < Q_.outerSize(); ++k) {
      double diag = 0.0, off = 0.0;
      for (SparseMatrix::InnerIterator it(Q_, k); it; ++it) {
        if (it.row() == k) diag += it.value();
        else off += std::abs(it.value());
      }
      lo = std::min(lo, (diag - off) / G_.coeff(k, k));
    }
    return lo;
  }

  /// The `count` smallest eigenvalues, ascending, by bisection on counts.
  std::vector<double> smallest(std::size_t count, double rtol = 1e-12) {
    count = std::min<std::size_t>(count, static_cast<std::size_t>(dimension()));
    std::vector<double> out;
    if (count == 0) return out;
    double lo = lower_bound() - 1.0;
    double hi = std::max(1.0, std::abs(lo));
    while (count_below(hi) < static_cast<std::ptrdiff_t>(count)) hi *= 2.0;
    for (std::size_t j = 0; j < count; ++j) {
      double a = lo, b = hi;
      while (b - a > rtol * std::max(1.0, std::abs(a) + std::abs(b))) {
        const double m = 0.5 * (a + b);
        if (count_below(m) > static_cast<std::ptrdiff_t>(j)) b = m;
        else a = m;
      }
      out.push_back(0.5 * (a + b));
      lo = a;
    }
    return out;
  }

 private:
  SparseMatrix Q_, G_, shifted_;
  std::optional<Vector> b_;
  Eigen::SimplicialLDLT<SparseMatrix> ldlt_;
};

/// Eigenvectors of (A, diag(m)) for the given eigenvalues by shifted inverse
/// iteration, mass-orthonormalized (clusters are separated by
/// orthogonalization against earlier vectors).
inline std::vector<Vector> eigenvectors(const SparseMatrix& A, const Vector& m, const std::vector<double>& values) {
  std::vector<Vector> out;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  const SparseMatrix Md = SparseMatrix(m.asDiagonal());
  for (double value : values) {
    const double shift = value - 1e-9 * std::max(1.0, std::abs(value));
    Eigen::SimplicialLDLT<SparseMatrix> solver(A - shift * Md);
    if (solver.info() != Eigen::Success) throw AnalysisError("inverse iteration factorization failed");
    Vector x(A.rows());
    for (auto& v : x) v = normal(rng);
    for (int it = 0; it < 6; ++it) {
      x = solver.solve(m.cwiseProduct(x));
      for (const auto& y : out) x -= y.dot(m.cwiseProduct(x)) * y;
      x /= std::sqrt(x.dot(m.cwiseProduct(x)));
    }
    out.push_back(x);
  }
  return out;
}

struct SpectralReport {
  /// Smallest generalized eigenvalues of Q against the L^2 metric.
  std::vector<double> eigenvalues;
  std::ptrdiff_t morse = 0;
  /// Count of directions with Q < -theta times the H^1 norm.
  std::ptrdiff_t approx_morse = 0;
  double theta = 0.0;
  bool constrained = false;
  std::string metric = "L2";
};

inline nlohmann::json to_json(const SpectralReport& r) {
  std::vector<double> ev(r.eigenvalues.begin(),
                         r.eigenvalues.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(20, r.eigenvalues.size())));
  return {{"eigenvalues", ev},     {"morse", r.morse}, {"approx_morse", r.approx_morse},
          {"theta", r.theta},      {"constrained", r.constrained}, {"metric", r.metric}};
}

/// Morse data of Q(phi; u) = int |phi'|^2 + (lambda - (p-1) rho kappa |u|^{p-2}) phi^2.
/// Constrained counts are taken on {phi : (u, phi)_{L^2} = 0}.
inline SpectralReport morse_index(const DiscreteOperators& ops, const Vector& x, double rho, double p, double lambda,
                                  bool constrained, double theta = 0.0, std::size_t n_eigenvalues = 20) {
  if (theta < 0.0) throw AnalysisError("theta must be nonnegative");
  const SparseMatrix Q = hessian_form(ops, x, rho, p, lambda);
  const SparseMatrix M = ops.massmat();
  std::optional<Vector> b;
  if (constrained) {
    b = ops.mass.cwiseProduct(x);
    if (b->norm() == 0.0) throw AnalysisError("constrained index needs a nonzero state");
  }
  SpectralReport r;
  r.constrained = constrained;
  r.theta = theta;
  PencilCounter l2(Q, M, b);
  r.morse = l2.count_below(0.0);
  r.eigenvalues = l2.smallest(n_eigenvalues);
  if (theta == 0.0) {
    r.approx_morse = r.morse;
  } else {
    PencilCounter h1(Q, SparseMatrix(ops.stiffness + M), b);
    r.approx_morse = h1.count_below(-theta);
  }
  return r;
}

inline SpectralReport morse_index(const DiscreteOperators& ops, const GraphFunction& u, double rho, double p,
                                  double lambda, bool constrained, double theta = 0.0) {
  return morse_index(ops, ops.to_vector(u), rho, p, lambda, constrained, theta);
}

/// Value of the second-variation form on one direction.
inline double q_form(const DiscreteOperators& ops, const Vector& x, double rho, double p, double lambda,
                     const Vector& phi) {
  return phi.dot(hessian_form(ops, x, rho, p, lambda) * phi);
}

inline double h1_norm_squared(const DiscreteOperators& ops, const Vector& x) {
  return ops.dirichlet(x) + ops.mass_of(x);
}

struct TestSubspace {
  std::vector<GraphFunction> basis;
  std::size_t edge = 0;
  /// Dilation used and the largest dilation the bound admits.
  double tau = 0.0;
  double tau_max = 0.0;
};

/// d disjoint unit-mass dilated bumps on a half-line on which the form
/// ||w'||^2 + lambda ||w||^2 stays below (lambda/2) ||w||_{H^1}^2.
inline TestSubspace halfline_test_subspace(const DiscreteOperators& ops, double lambda, std::size_t d) {
  if (!(lambda < 0.0)) throw AnalysisError("half-line test subspace needs lambda < 0");
  if (d == 0) throw AnalysisError("subspace dimension must be positive");
  const auto& g = ops.graph();
  const auto halves = g.halflines();
  if (halves.empty()) throw AnalysisError("graph has no half-line");
  const std::size_t e = *std::max_element(halves.begin(), halves.end(),
                                          [&](auto a, auto b) { return g.edge(a).length < g.edge(b).length; });
  const auto norms = bump_norms();
  const double s_max = -lambda / (2.0 - lambda);
  TestSubspace out;
  out.edge = e;
  out.tau_max = std::sqrt(s_max) / norms.derivative;
  const double step = ops.mesh->grid(e).step;
  auto bound_holds = [&](const Vector& w) {
    const double D = ops.dirichlet(w), m = ops.mass_of(w);
    return D + lambda * m <= 0.5 * lambda * (D + m);
  };
  for (double tau = out.tau_max; tau > 1e-3 * out.tau_max; tau *= 0.95) {
    const double width = 1.0 / tau;
    const double cell = std::ceil(width / step) * step;
    if (static_cast<double>(d) * cell > g.edge(e).length) {
      throw AnalysisError("half-line truncation " + std::to_string(g.edge(e).length) + " too short for " +
                          std::to_string(d) + " bumps at dilation tau = " + std::to_string(tau) +
                          " (needs at least " + std::to_string(static_cast<double>(d) * cell) + ")");
    }
    if (bump_resolution(*ops.mesh, e, width) < 8) throw AnalysisError("mesh too coarse for half-line bumps");
    std::vector<GraphFunction> basis;
    bool ok = true;
    for (std::size_t i = 0; i < d && ok; ++i) {
      auto b = sampled_bump(ops.mesh, e, static_cast<double>(i) * cell, width, 1.0);
      b *= 1.0 / std::sqrt(mass(b));
      ok = bound_holds(ops.to_vector(b));
      basis.push_back(std::move(b));
    }
    if (ok) {
      out.tau = tau;
      out.basis = std::move(basis);
      return out;
    }
  }
  throw AnalysisError("no admissible dilation found for the half-line test subspace");
}

/// First `count` generalized eigenvectors of (stiffness + mass, mass).
inline std::vector<Vector> laplacian_basis(const DiscreteOperators& ops, std::size_t count) {
  if (count == 0) return {};
  const SparseMatrix G = ops.stiffness + ops.massmat();
  PencilCounter counter(G, ops.massmat());
  return eigenvectors(G, ops.mass, counter.smallest(count));
}

struct RayleighResult {
  double S = 0.0;
  Vector argmin;
  std::vector<double> start_values;
};

struct RayleighOptions {
  int starts = 6;
  unsigned seed = 1;
  int max_iterations = 20000;
  double tolerance = 1e-10;
};

/// Upper estimate of S_N = inf over the complement of V of
/// (||u'||^2 + ||u||^2) / (int_K |u|^p)^{2/p}. Each start runs the
/// monotone ascent u <- G^{-1}(W|u|^{p-2}u) projected onto the complement
/// and renormalized in the G-norm; the best start wins.
inline RayleighResult rayleigh_level(const DiscreteOperators& ops, double p, const std::vector<Vector>& V,
                                     const RayleighOptions& opt = {}) {
  const SparseMatrix G = ops.stiffness + ops.massmat();
  Eigen::SimplicialLDLT<SparseMatrix> solver(G);
  if (solver.info() != Eigen::Success) throw AnalysisError("H^1 Gram matrix not positive definite");
  const Eigen::Index n = G.rows();
  const auto k = static_cast<Eigen::Index>(V.size());
  // Constraint directions M V and their G^{-1} images.
  Eigen::MatrixXd C(n, k), GC(n, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    C.col(j) = ops.mass.cwiseProduct(V[static_cast<std::size_t>(j)]);
    GC.col(j) = solver.solve(Vector(C.col(j)));
  }
  const Eigen::LDLT<Eigen::MatrixXd> gram(C.transpose() * GC);
  auto project = [&](const Vector& y) -> Vector {
    if (k == 0) return y;
    return y - GC * gram.solve(C.transpose() * y);
  };
  auto quotient = [&](const Vector& u) {
    return u.dot(G * u) / std::pow(ops.core_lp(u, p), 2.0 / p);
  };
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal;
  RayleighResult best;
  best.S = std::numeric_limits<double>::infinity();
  for (int s = 0; s < opt.starts; ++s) {
    Vector u(n);
    for (auto& v : u) v = normal(rng);
    if (s == 0) u = Vector::Ones(n);
    u = project(solver.solve(ops.mass.cwiseProduct(u)));
    if (ops.core_lp(u, p) == 0.0) continue;
    double q = quotient(u);
    for (int it = 0; it < opt.max_iterations; ++it) {
      Vector grad(n);
      for (Eigen::Index i = 0; i < n; ++i) grad[i] = ops.core_weight[i] * signed_power(u[i], p);
      Vector next = project(solver.solve(grad));
      next /= std::sqrt(next.dot(G * next));
      const double qn = quotient(next);
      u = next;
      const bool done = std::abs(q - qn) <= opt.tolerance * qn;
      q = qn;
      if (done) break;
    }
    if (k > 0) {
      const double leak = (C.transpose() * u).cwiseAbs().maxCoeff() / std::sqrt(ops.mass_of(u));
      if (leak > 1e-8) continue;
    }
    best.start_values.push_back(q);
    if (q < best.S) {
      best.S = q;
      best.argmin = u;
    }
  }
  if (best.start_values.empty()) throw AnalysisError("no start satisfied the orthogonality constraint");
  return best;
}

/// S_N with the default exhausting spaces: V_{N-2} spanned by the first N-2
/// Laplacian eigenfunctions.
inline RayleighResult rayleigh_level(const DiscreteOperators& ops, double p, std::size_t N,
                                     const RayleighOptions& opt = {}) {
  if (N < 2) throw AnalysisError("S_N needs N >= 2");
  return rayleigh_level(ops, p, laplacian_basis(ops, N - 2), opt);
}

struct BetaLevels {
  double L = 0.0;
  double argmax = 0.0;
  std::vector<double> beta;
  std::vector<double> b_lower;
};

/// L(p) = (3/p) max_{x>0} (mu + x^2)^{p/2} / (mu + x^p) by golden-section
/// search in log x; the bracket [lo, hi] (in log x) is widened until the
/// maximum is interior.
inline std::pair<double, double> l_constant(double mu, double p, double lo = -1.0, double hi = 1.0) {
  auto f = [&](double y) {
    const double x = std::exp(y);
    return std::exp(0.5 * p * std::log(mu + x * x) - std::log(mu + std::pow(x, p)));
  };
  for (int expand = 0;; ++expand) {
    if (expand > 60) throw AnalysisError("maximization bracket failure for L(p)");
    const double mid = 0.5 * (lo + hi);
    if (f(mid) > f(lo) && f(mid) > f(hi)) break;
    double best = lo;
    for (int i = 0; i <= 64; ++i) {
      const double y = lo + (hi - lo) * i / 64.0;
      if (f(y) > f(best)) best = y;
    }
    const double w = hi - lo;
    if (best > lo && best < hi && f(best) > f(lo) && f(best) > f(hi)) {
      lo = best - w / 64.0;
      hi = best + w / 64.0;
      continue;
    }
    lo -= w;
    hi += w;
  }
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > 1e-12 * std::max(1.0, std::abs(a) + std::abs(b))) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  const double y = 0.5 * (a + b);
  return {3.0 / p * f(y), std::exp(y)};
}

inline BetaLevels beta_levels(double mu, double p, const std::vector<double>& S) {
  if (!(p > 6.0)) throw AnalysisError("beta levels need p > 6");
  if (!(mu > 0.0)) throw AnalysisError("mass must be positive");
  BetaLevels out;
  std::tie(out.L, out.argmax) = l_constant(mu, p);
  for (double s : S) {
    const double b = std::pow(std::pow(s, 0.5 * p) / out.L, 1.0 / (p - 2.0));
    out.beta.push_back(b);
    out.b_lower.push_back(b * b / 6.0);
  }
  return out;
}

}  // namespace qgnls
