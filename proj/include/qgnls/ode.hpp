#pragma once

// One-dimensional theory of -u'' = alpha |u|^{p-2} u: ODE energy, the
// period law, sampled periodic orbits, L^2 bounds, and the explicit
// zero-multiplier solution on the tadpole graph.

#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numbers>
#include <ostream>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>
#include <boost/numeric/odeint.hpp>

#include "qgnls/error.hpp"
#include "qgnls/graph.hpp"

namespace qgnls::ode {

/// H = u'^2/2 + (rho/p)|u|^p - (lambda/2) u^2, conserved along solutions of
/// -u'' + lambda u = rho |u|^{p-2} u.
inline double ode_energy(double u, double uprime, double lambda, double rho, double p) {
  return 0.5 * uprime * uprime + rho / p * std::pow(std::abs(u), p) - 0.5 * lambda * u * u;
}

inline void require_exponent(double p) {
  if (!(p >= 2.0)) throw OdeError("exponent p must satisfy p >= 2");
}

/// C(p) = sqrt(8p) * int_0^1 dt / sqrt(1 - t^p), evaluated after t = 1 - s^2
/// which removes the endpoint square-root singularity.
inline double period_constant(double p) {
  require_exponent(p);
  auto integrand = [p](double s) {
    if (s == 0.0) return 2.0 / std::sqrt(p);
    // 1 - (1 - s^2)^p without cancellation for small s
    const double gap = -std::expm1(p * std::log1p(-s * s));
    return 2.0 * s / std::sqrt(gap);
  };
  double err = 0.0;
  const double integral =
      boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, 0.0, 1.0, 15, 1e-15, &err);
  return std::sqrt(8.0 * p) * integral;
}

/// Period of the orbit with amplitude u0: C(p) alpha^{-1/2} u0^{(2-p)/2}.
inline double period(double u0, double alpha, double p) {
  require_exponent(p);
  if (!(u0 > 0.0) || !(alpha > 0.0)) throw OdeError("period needs u0 > 0 and alpha > 0");
  return period_constant(p) / std::sqrt(alpha) * std::pow(u0, (2.0 - p) / 2.0);
}

/// Amplitude of the orbit with ODE energy H: (pH/alpha)^{1/p}.
inline double amplitude_from_energy(double H, double alpha, double p) { return std::pow(p * H / alpha, 1.0 / p); }

namespace detail {

using State = std::array<double, 2>;
using MassState = std::array<double, 3>;

struct Oscillator {
  double alpha;
  double p;
  void operator()(const State& y, State& dy, double /*x*/) const {
    dy[0] = y[1];
    dy[1] = -alpha * std::pow(std::abs(y[0]), p - 2.0) * y[0];
  }
};

/// Same flow with the running integral of u^2 appended.
struct OscillatorWithMass {
  double alpha;
  double p;
  void operator()(const MassState& y, MassState& dy, double /*x*/) const {
    dy[0] = y[1];
    dy[1] = -alpha * std::pow(std::abs(y[0]), p - 2.0) * y[0];
    dy[2] = y[0] * y[0];
  }
};

inline constexpr double kAbsTol = 1e-14;
inline constexpr double kRelTol = 1e-12;

template <class S>
auto stepper() {
  namespace odeint = boost::numeric::odeint;
  return odeint::make_controlled(kAbsTol, kRelTol, odeint::runge_kutta_fehlberg78<S>());
}

/// Advances y from x0 to x1 with the adaptive order-8 scheme.
template <class System, class S>
void advance(const System& sys, S& y, double x0, double x1) {
  if (x1 == x0) return;
  const double dx = std::copysign(std::min(1e-3, std::abs(x1 - x0)), x1 - x0);
  boost::numeric::odeint::integrate_adaptive(stepper<S>(), sys, y, x0, x1, dx);
}

}  // namespace detail

struct OrbitSample {
  double x;
  double u;
  double uprime;
};

/// Exact periodic solution with u(0) = u0, u'(0) = 0.
struct PeriodicOrbit {
  double u0 = 0.0;
  double alpha = 0.0;
  double p = 0.0;
  double tau = 0.0;
  double H = 0.0;
  /// |u(tau) - u0| + |u'(tau)| of the integrated samples.
  double closure_error = 0.0;
  /// Uniform samples over [0, tau], both endpoints included.
  std::vector<OrbitSample> samples;

  double energy_at(const OrbitSample& s) const { return ode_energy(s.u, s.uprime, 0.0, alpha, p); }

  double max_abs() const {
    double m = 0.0;
    for (const auto& s : samples) m = std::max(m, std::abs(s.u));
    return m;
  }

  double max_energy_drift() const {
    double d = 0.0;
    for (const auto& s : samples) d = std::max(d, std::abs(energy_at(s) - H) / H);
    return d;
  }
};

/// Samples `n_samples` equal steps of one full period of the orbit through
/// (u0, 0).
inline PeriodicOrbit periodic_orbit(double u0, double alpha, double p, std::size_t n_samples) {
  if (n_samples < 16) throw OdeError("periodic_orbit needs at least 16 samples");
  PeriodicOrbit orb;
  orb.u0 = u0;
  orb.alpha = alpha;
  orb.p = p;
  orb.tau = period(u0, alpha, p);
  orb.H = alpha * std::pow(u0, p) / p;
  const detail::Oscillator sys{alpha, p};
  detail::State y{u0, 0.0};
  const double dx = orb.tau / static_cast<double>(n_samples);
  orb.samples.reserve(n_samples + 1);
  orb.samples.push_back({0.0, y[0], y[1]});
  for (std::size_t i = 1; i <= n_samples; ++i) {
    const double x0 = dx * static_cast<double>(i - 1);
    const double x1 = dx * static_cast<double>(i);
    detail::advance(sys, y, x0, x1);
    if (!std::isfinite(y[0]) || !std::isfinite(y[1])) throw OdeError("orbit integration failed");
    orb.samples.push_back({x1, y[0], y[1]});
  }
  orb.closure_error = std::abs(y[0] - u0) + std::abs(y[1]);
  if (orb.closure_error > 1e-8 * u0) throw OdeError("orbit does not close to tolerance");
  return orb;
}

/// Period measured from the integrated flow: the time of the second sign
/// change of u' (from + to -), located by bracketing and root refinement.
/// Independent of period_constant.
inline double measured_period(double u0, double alpha, double p) {
  namespace odeint = boost::numeric::odeint;
  const detail::Oscillator sys{alpha, p};
  auto ctrl = detail::stepper<detail::State>();
  detail::State y{u0, 0.0};
  double x = 0.0;
  // Intrinsic time scale from the local curvature at the turning point.
  double dx = 1e-3 / std::sqrt(alpha * std::pow(u0, p - 2.0));
  int changes = 0;
  double prev_sign = -1.0;
  detail::State y_prev = y;
  double x_prev = x;
  for (int guard = 0; guard < 10'000'000; ++guard) {
    y_prev = y;
    x_prev = x;
    while (ctrl.try_step(sys, y, x, dx) == odeint::fail) {
    }
    const double s = y[1] > 0.0 ? 1.0 : -1.0;
    if (s != prev_sign) {
      ++changes;
      prev_sign = s;
      if (changes == 2) break;
    }
  }
  if (changes < 2) throw OdeError("period measurement did not close");
  auto slope = [&](double t) {
    detail::State z = y_prev;
    detail::advance(sys, z, x_prev, t);
    return z[1];
  };
  std::uintmax_t iters = 200;
  auto r = boost::math::tools::toms748_solve(
      slope, x_prev, x, slope(x_prev), y[1],
      [](double a, double b) { return std::abs(b - a) <= 1e-15 * std::max(1.0, std::abs(a)); }, iters);
  return 0.5 * (r.first + r.second);
}

/// Largest relative ODE-energy deviation along `periods` periods sampled
/// `per_period` times each.
inline double energy_drift(double u0, double alpha, double p, int periods, std::size_t per_period = 512) {
  const detail::Oscillator sys{alpha, p};
  const double tau = period(u0, alpha, p);
  const double H = alpha * std::pow(u0, p) / p;
  detail::State y{u0, 0.0};
  const std::size_t total = per_period * static_cast<std::size_t>(periods);
  const double dx = tau / static_cast<double>(per_period);
  double drift = 0.0;
  for (std::size_t i = 1; i <= total; ++i) {
    detail::advance(sys, y, dx * static_cast<double>(i - 1), dx * static_cast<double>(i));
    drift = std::max(drift, std::abs(ode_energy(y[0], y[1], 0.0, alpha, p) - H) / H);
  }
  return drift;
}

/// Integral of u^2 over [0, length]. Over exactly one period the periodic
/// trapezoid rule on the stored samples is used; otherwise the mass is
/// integrated alongside the flow.
inline double orbit_mass(const PeriodicOrbit& orb, double length) {
  if (orb.samples.size() >= 2 && std::abs(length - orb.tau) <= 1e-14 * orb.tau) {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < orb.samples.size(); ++i) s += orb.samples[i].u * orb.samples[i].u;
    return s * (orb.tau / static_cast<double>(orb.samples.size() - 1));
  }
  const detail::OscillatorWithMass sys{orb.alpha, orb.p};
  detail::MassState y{orb.u0, 0.0, 0.0};
  detail::advance(sys, y, 0.0, length);
  return y[2];
}

inline double orbit_mass(const PeriodicOrbit& orb) { return orbit_mass(orb, orb.tau); }

/// Smallest ODE energy H such that every solution of -u'' = alpha|u|^{p-2}u
/// on an interval of length `ell` with alpha in [alpha_lo, alpha_hi] and
/// energy >= H has mass >= mu_target. Uses the worst-case period bound
/// (tau <= ell/2) and the lower L^2 bound over k periods with k tau >= ell/2.
inline double mass_threshold(double ell, double alpha_lo, double alpha_hi, double p, double mu_target) {
  require_exponent(p);
  if (!(p > 2.0)) throw OdeError("mass_threshold needs p > 2");
  if (!(ell > 0.0) || !(alpha_lo > 0.0) || !(alpha_lo < alpha_hi) || !(mu_target > 0.0)) {
    throw OdeError("mass_threshold needs ell > 0, 0 < alpha_lo < alpha_hi, mu_target > 0");
  }
  const double c = period_constant(p);
  auto ok = [&](double H) {
    const double u0_min = std::pow(p * H / alpha_hi, 1.0 / p);
    const double tau_max = c / std::sqrt(alpha_lo) * std::pow(u0_min, (2.0 - p) / 2.0);
    if (tau_max > 0.5 * ell) return false;
    return (0.5 * ell) * u0_min * u0_min / 8.0 >= mu_target;
  };
  double lo = 1.0, hi = 1.0;
  while (!ok(hi)) hi *= 2.0;
  while (ok(lo) && lo > 1e-300) lo *= 0.5;
  for (int i = 0; i < 200 && (hi - lo) > 1e-14 * hi; ++i) {
    const double mid = std::sqrt(lo * hi);
    (ok(mid) ? hi : lo) = mid;
  }
  return hi;
}

/// The zero-multiplier solution on the tadpole: a sign-changing orbit of
/// -u'' = |u|^{p-2}u with u(0) = 0, u'(0) = v0 on a loop of k full periods,
/// extended by zero on the half-line.
struct TadpoleSolution {
  GraphFunction u;
  double p = 0.0;
  int k = 0;
  double v0 = 0.0;
  double H = 0.0;
  double amplitude = 0.0;
  double period = 0.0;
  double loop_length = 0.0;
};

/// Initial slope v0 for which k full periods exactly fill a loop of length ell.
inline double tadpole_slope_for_loop(double p, int k, double ell) {
  const double u0 = std::pow(ell / (static_cast<double>(k) * period_constant(p)), 2.0 / (2.0 - p));
  return std::sqrt(2.0 * std::pow(u0, p) / p);
}

inline TadpoleSolution tadpole_solution(double p, int k, double v0, double h, double truncation = 1.0) {
  if (!(p > 2.0)) throw OdeError("tadpole_solution needs p > 2");
  if (k < 1) throw OdeError("tadpole_solution needs k >= 1 full periods");
  if (!(v0 > 0.0) || !(h > 0.0)) throw OdeError("tadpole_solution needs v0 > 0 and h > 0");
  TadpoleSolution sol;
  sol.p = p;
  sol.k = k;
  sol.v0 = v0;
  sol.H = 0.5 * v0 * v0;
  sol.amplitude = amplitude_from_energy(sol.H, 1.0, p);
  sol.period = ode::period(sol.amplitude, 1.0, p);
  sol.loop_length = k * sol.period;
  auto mesh = make_mesh(make_tadpole(sol.loop_length, truncation), h);
  GraphFunction u(mesh);
  const std::size_t loop = *mesh->graph().edge_index("loop");
  const auto& gr = mesh->grid(loop);
  auto& vals = u.edge_values(loop);
  const detail::Oscillator sys{1.0, p};
  detail::State y{0.0, v0};
  for (std::size_t i = 1; i + 1 < gr.nodes(); ++i) {
    detail::advance(sys, y, gr.x(i - 1), gr.x(i));
    vals[i] = y[0];
  }
  vals.front() = 0.0;
  vals.back() = 0.0;
  sol.u = std::move(u);
  return sol;
}

/// CSV with columns x, u, uprime, H.
inline void write_orbit_csv(std::ostream& os, const PeriodicOrbit& orb) {
  os << "x,u,uprime,H\n";
  os.precision(17);
  for (const auto& s : orb.samples) os << s.x << ',' << s.u << ',' << s.uprime << ',' << orb.energy_at(s) << '\n';
}

}  // namespace qgnls::ode
