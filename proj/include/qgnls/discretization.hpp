#pragma once

// Piecewise-linear finite elements on a truncated metric graph. Vertex
// degrees of freedom are shared by all incident edges, so the Kirchhoff
// condition is the natural boundary condition of the weak form; half-line
// far ends are eliminated as homogeneous Dirichlet nodes. Mass and core
// weights are lumped (nodal trapezoid quadrature).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <ostream>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <nlohmann/json.hpp>

#include "qgnls/error.hpp"
#include "qgnls/graph.hpp"

namespace qgnls {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// Maps edge samples to global unknowns. Vertices come first, then interior
/// nodes edge by edge. Half-line far ends carry no unknown.
class DofMap {
 public:
  static constexpr std::ptrdiff_t kDirichlet = -1;

  DofMap() = default;

  explicit DofMap(const Mesh& mesh) {
    const auto& g = mesh.graph();
    std::ptrdiff_t next = static_cast<std::ptrdiff_t>(g.vertex_count());
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      const auto& edge = g.edge(e);
      const auto nodes = mesh.grid(e).nodes();
      std::vector<std::ptrdiff_t> map(nodes);
      map.front() = static_cast<std::ptrdiff_t>(edge.tail);
      for (std::size_t i = 1; i + 1 < nodes; ++i) map[i] = next++;
      map.back() = edge.head ? static_cast<std::ptrdiff_t>(*edge.head) : kDirichlet;
      node_to_dof_.push_back(std::move(map));
    }
    size_ = static_cast<std::size_t>(next);
  }

  std::size_t size() const noexcept { return size_; }
  std::ptrdiff_t dof(std::size_t edge, std::size_t node) const { return node_to_dof_[edge][node]; }
  const std::vector<std::ptrdiff_t>& edge_dofs(std::size_t edge) const { return node_to_dof_[edge]; }

 private:
  std::vector<std::vector<std::ptrdiff_t>> node_to_dof_;
  std::size_t size_ = 0;
};

struct DiscreteOperators {
  std::shared_ptr<const Mesh> mesh;
  DofMap dofs;
  /// Integral of u'v' over the graph.
  SparseMatrix stiffness;
  /// Diagonal of the lumped mass matrix.
  Vector mass;
  /// Diagonal nodal weights of the core quadrature (zero off the core).
  Vector core_weight;

  std::size_t size() const noexcept { return dofs.size(); }
  const MetricGraph& graph() const { return mesh->graph(); }

  SparseMatrix massmat() const {
    SparseMatrix m(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(size()));
    m.reserve(Eigen::VectorXi::Constant(static_cast<Eigen::Index>(size()), 1));
    for (Eigen::Index i = 0; i < mass.size(); ++i) m.insert(i, i) = mass[i];
    m.makeCompressed();
    return m;
  }

  Vector to_vector(const GraphFunction& u) const {
    Vector x = Vector::Zero(static_cast<Eigen::Index>(size()));
    for (std::size_t e = 0; e < graph().edge_count(); ++e) {
      const auto& v = u.edge_values(e);
      for (std::size_t i = 0; i < v.size(); ++i) {
        const auto d = dofs.dof(e, i);
        if (d != DofMap::kDirichlet) x[d] = v[i];
      }
    }
    return x;
  }

  GraphFunction to_function(const Vector& x) const {
    GraphFunction u(mesh);
    for (std::size_t e = 0; e < graph().edge_count(); ++e) {
      auto& v = u.edge_values(e);
      for (std::size_t i = 0; i < v.size(); ++i) {
        const auto d = dofs.dof(e, i);
        v[i] = d == DofMap::kDirichlet ? 0.0 : x[d];
      }
    }
    return u;
  }

  double mass_of(const Vector& x) const { return x.dot(mass.cwiseProduct(x)); }
  double inner(const Vector& x, const Vector& y) const { return x.dot(mass.cwiseProduct(y)); }
  double dirichlet(const Vector& x) const { return x.dot(stiffness * x); }

  double core_lp(const Vector& x, double p) const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (core_weight[i] != 0.0) s += core_weight[i] * std::pow(std::abs(x[i]), p);
    return s;
  }

  /// sqrt(r^T M^{-1} r): the L^2 norm of the Riesz representative of a dual
  /// residual.
  double dual_norm(const Vector& r) const { return std::sqrt(r.dot(r.cwiseQuotient(mass))); }
};

inline DiscreteOperators assemble(std::shared_ptr<const Mesh> mesh) {
  DiscreteOperators ops;
  ops.mesh = mesh;
  ops.dofs = DofMap(*mesh);
  const auto n = static_cast<Eigen::Index>(ops.dofs.size());
  ops.mass = Vector::Zero(n);
  ops.core_weight = Vector::Zero(n);
  std::vector<Eigen::Triplet<double>> trips;
  const auto& g = mesh->graph();
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    const auto& gr = mesh->grid(e);
    const double h = gr.step;
    const bool core = g.edge(e).kappa;
    const auto& map = ops.dofs.edge_dofs(e);
    for (std::size_t k = 0; k < gr.intervals; ++k) {
      const std::ptrdiff_t a = map[k], b = map[k + 1];
      for (auto [i, j, s] : {std::tuple{a, a, 1.0}, {b, b, 1.0}, {a, b, -1.0}, {b, a, -1.0}}) {
        if (i != DofMap::kDirichlet && j != DofMap::kDirichlet) trips.emplace_back(i, j, s / h);
      }
      for (auto i : {a, b}) {
        if (i == DofMap::kDirichlet) continue;
        ops.mass[i] += 0.5 * h;
        if (core) ops.core_weight[i] += 0.5 * h;
      }
    }
  }
  ops.stiffness.resize(n, n);
  ops.stiffness.setFromTriplets(trips.begin(), trips.end());
  ops.stiffness.makeCompressed();
  return ops;
}

inline DiscreteOperators assemble(const MetricGraph& g, double h, double core_h = 0.0) {
  return assemble(make_mesh(g, h, core_h));
}

/// |x|^{p-2} x with the continuous extension 0 at x = 0.
inline double signed_power(double x, double p) { return x == 0.0 ? 0.0 : std::pow(std::abs(x), p - 2.0) * x; }

/// E_rho(u) = 1/2 int |u'|^2 - rho/p int_K |u|^p.
inline double energy(const DiscreteOperators& ops, const Vector& x, double rho, double p) {
  return 0.5 * ops.dirichlet(x) - rho / p * ops.core_lp(x, p);
}

inline double energy(const DiscreteOperators& ops, const GraphFunction& u, double rho, double p) {
  return energy(ops, ops.to_vector(u), rho, p);
}

/// Weak-form residual K x + lambda M x - rho W |x|^{p-2} x. Zero exactly at
/// discrete solutions with multiplier lambda.
inline Vector gradient(const DiscreteOperators& ops, const Vector& x, double rho, double p, double lambda) {
  Vector r = ops.stiffness * x + lambda * ops.mass.cwiseProduct(x);
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (ops.core_weight[i] != 0.0) r[i] -= rho * ops.core_weight[i] * signed_power(x[i], p);
  return r;
}

inline Vector gradient(const DiscreteOperators& ops, const GraphFunction& u, double rho, double p, double lambda) {
  return gradient(ops, ops.to_vector(u), rho, p, lambda);
}

/// Size of the terms whose cancellation the residual measures; used to make
/// residuals relative.
inline double residual_scale(const DiscreteOperators& ops, const Vector& x, double rho, double p, double lambda) {
  Vector nl = Vector::Zero(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) nl[i] = rho * ops.core_weight[i] * signed_power(x[i], p);
  return ops.dual_norm(ops.stiffness * x) + std::abs(lambda) * std::sqrt(ops.mass_of(x)) + ops.dual_norm(nl);
}

/// Matrix of Q(phi) = int |phi'|^2 + (lambda - (p-1) rho kappa |u|^{p-2}) phi^2.
inline SparseMatrix hessian_form(const DiscreteOperators& ops, const Vector& x, double rho, double p, double lambda) {
  SparseMatrix q = ops.stiffness;
  Vector diag = lambda * ops.mass;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (ops.core_weight[i] != 0.0) diag[i] -= (p - 1.0) * rho * ops.core_weight[i] * std::pow(std::abs(x[i]), p - 2.0);
  for (Eigen::Index i = 0; i < x.size(); ++i) q.coeffRef(i, i) += diag[i];
  return q;
}

struct PohozaevData {
  /// Sum over bounded edges of length times edge ODE energy.
  double P = 0.0;
  /// Edge ODE energy (median of pointwise values), NaN on half-lines.
  std::vector<double> edge_energy;
  /// max - min of the pointwise ODE energy on each bounded edge.
  std::vector<double> edge_variation;
};

/// Pointwise ODE energies at interior samples of bounded edges, using central
/// differences for u'; per edge, the median is the edge value.
inline PohozaevData pohozaev(const GraphFunction& u, double rho, double p, double lambda) {
  const auto& g = u.graph();
  PohozaevData out;
  out.edge_energy.assign(g.edge_count(), std::numeric_limits<double>::quiet_NaN());
  out.edge_variation.assign(g.edge_count(), 0.0);
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    if (g.edge(e).is_halfline()) continue;
    const auto& v = u.edge_values(e);
    const double h = u.mesh().grid(e).step;
    const double r = g.edge(e).kappa ? rho : 0.0;
    std::vector<double> H;
    H.reserve(v.size());
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      const double du = (v[i + 1] - v[i - 1]) / (2.0 * h);
      H.push_back(0.5 * du * du + r / p * std::pow(std::abs(v[i]), p) - 0.5 * lambda * v[i] * v[i]);
    }
    const auto [lo, hi] = std::minmax_element(H.begin(), H.end());
    out.edge_variation[e] = *hi - *lo;
    const auto mid = H.begin() + static_cast<std::ptrdiff_t>(H.size() / 2);
    std::nth_element(H.begin(), mid, H.end());
    double med = *mid;
    if (H.size() % 2 == 0) med = 0.5 * (med + *std::max_element(H.begin(), mid));
    out.edge_energy[e] = med;
    out.P += g.edge(e).length * med;
  }
  return out;
}

struct IdentityResiduals {
  double nehari = 0.0;
  double pohozaev = 0.0;
  double link = 0.0;

  double max() const { return std::max({nehari, pohozaev, link}); }
};

namespace detail {
inline double relative(double defect, double scale) { return scale == 0.0 ? 0.0 : std::abs(defect) / scale; }
}  // namespace detail

/// Relative defects of the Nehari identity, the Pohozaev identity and the
/// energy/Pohozaev link, each normalized by the sum of magnitudes of its terms.
inline IdentityResiduals identity_residuals(const DiscreteOperators& ops, const GraphFunction& u, double rho, double p,
                                            double lambda) {
  const Vector x = ops.to_vector(u);
  const double D = ops.dirichlet(x);
  const double m = ops.mass_of(x);
  const double A = ops.core_lp(x, p);
  const double P = pohozaev(u, rho, p, lambda).P;
  const double E = 0.5 * D - rho / p * A;
  IdentityResiduals r;
  r.nehari = detail::relative(D + lambda * m - rho * A, D + std::abs(lambda) * m + rho * A);
  r.pohozaev = detail::relative(0.5 * D + rho / p * A - 0.5 * lambda * m - P,
                                0.5 * D + rho / p * A + 0.5 * std::abs(lambda) * m + std::abs(P));
  const double lam_term = (p - 6.0) * lambda / (2.0 * (p + 2.0)) * m;
  const double p_term = (p - 2.0) / (p + 2.0) * P;
  r.link = detail::relative(E - lam_term - p_term, 0.5 * D + rho / p * A + std::abs(lam_term) + std::abs(p_term));
  return r;
}

inline nlohmann::json to_json(const IdentityResiduals& r) {
  return {{"nehari", r.nehari}, {"pohozaev", r.pohozaev}, {"link", r.link}};
}

/// Coordinate-format dump (row, col, value), one entry per line.
inline void write_coo(std::ostream& os, const SparseMatrix& m) {
  os.precision(17);
  for (Eigen::Index k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
}

}  // namespace qgnls
