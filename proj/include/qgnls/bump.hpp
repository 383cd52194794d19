#pragma once

// The smooth bump used by all test-function families, its dilates
// t^{1/2} phi(t x) and their samples on a mesh edge.

#include <cmath>
#include <cstddef>
#include <memory>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "qgnls/error.hpp"
#include "qgnls/graph.hpp"

namespace qgnls {

/// exp(-1/(x(1-x))) on (0,1), zero outside.
inline double bump_profile(double x) {
  if (x <= 0.0 || x >= 1.0) return 0.0;
  return std::exp(-1.0 / (x * (1.0 - x)));
}

inline double bump_profile_derivative(double x) {
  if (x <= 0.0 || x >= 1.0) return 0.0;
  const double q = x * (1.0 - x);
  return bump_profile(x) * (1.0 - 2.0 * x) / (q * q);
}

/// Integrals of the unit-mass bump phi = c * bump_profile on (0,1).
struct BumpNorms {
  double scale = 0.0;      ///< c, so that int phi^2 = 1
  double derivative = 0.0; ///< ||phi'||_{L^2}
  double lp = 0.0;         ///< int |phi|^p (when requested)
};

inline BumpNorms bump_norms(double p = 2.0) {
  using boost::math::quadrature::gauss_kronrod;
  auto integrate = [](auto f) { return gauss_kronrod<double, 61>::integrate(f, 0.0, 1.0, 15, 1e-14); };
  const double m = integrate([](double x) { return bump_profile(x) * bump_profile(x); });
  const double d = integrate([](double x) { return bump_profile_derivative(x) * bump_profile_derivative(x); });
  const double a = integrate([p](double x) { return std::pow(bump_profile(x), p); });
  BumpNorms n;
  n.scale = 1.0 / std::sqrt(m);
  n.derivative = std::sqrt(d / m);
  n.lp = a * std::pow(n.scale, p);
  return n;
}

/// Samples amplitude * profile((x - start) / width) on edge `e`, zero
/// elsewhere.
inline GraphFunction sampled_bump(std::shared_ptr<const Mesh> mesh, std::size_t e, double start, double width,
                                  double amplitude) {
  if (!(width > 0.0)) throw MeshError("bump width must be positive");
  const auto& edge = mesh->graph().edge(e);
  if (start < 0.0 || start + width > edge.length * (1.0 + 1e-12)) {
    throw MeshError("bump does not fit on edge '" + edge.id + "'");
  }
  GraphFunction u(mesh);
  const auto& gr = mesh->grid(e);
  auto& v = u.edge_values(e);
  for (std::size_t i = 0; i < gr.nodes(); ++i) v[i] = amplitude * bump_profile((gr.x(i) - start) / width);
  return u;
}

/// Nodes of edge `e` spanned by a bump of the given width, counting the
/// interior samples only.
inline std::size_t bump_resolution(const Mesh& mesh, std::size_t e, double width) {
  return static_cast<std::size_t>(std::floor(width / mesh.grid(e).step));
}

}  // namespace qgnls
