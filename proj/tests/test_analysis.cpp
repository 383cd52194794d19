#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "qgnls/analysis.hpp"
#include "qgnls/ode.hpp"

using namespace qgnls;

namespace {

Vector random_vector(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> normal;
  Vector x(n);
  for (auto& v : x) v = normal(rng);
  return x;
}

// Dense oracle: eigenvalues of (Q, M) restricted to b^perp through an
// orthonormal basis of the complement.
Eigen::VectorXd dense_constrained(const Eigen::MatrixXd& Q, const Eigen::VectorXd& m, const Eigen::VectorXd& b) {
  const Eigen::Index n = Q.rows();
  Eigen::MatrixXd Minv_half = m.cwiseSqrt().cwiseInverse().asDiagonal();
  Eigen::MatrixXd A = Minv_half * Q * Minv_half;
  Eigen::VectorXd c = Minv_half * b;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(c);
  Eigen::MatrixXd basis = Eigen::MatrixXd(qr.householderQ()).rightCols(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(basis.transpose() * A * basis, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

}  // namespace

TEST(PencilCounter, MatchesDenseEigenvalues) {
  auto ops = assemble(make_tadpole(1.0, 2.0), 0.05);
  std::mt19937_64 rng(2);
  const Vector x = 1.5 * random_vector(rng, static_cast<Eigen::Index>(ops.size()));
  const SparseMatrix Q = hessian_form(ops, x, 1.0, 6.0, 0.3);
  const Eigen::MatrixXd Qd(Q);
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(Qd, Eigen::MatrixXd(ops.mass.asDiagonal()),
                                                               Eigen::EigenvaluesOnly);
  PencilCounter free(Q, ops.massmat());
  EXPECT_EQ(free.count_below(0.0), (es.eigenvalues().array() < 0.0).count());
  const auto low = free.smallest(5);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(low[i], es.eigenvalues()[i], 1e-8 * std::max(1.0, std::abs(low[i])));

  const Vector b = ops.mass.cwiseProduct(x);
  const auto ref = dense_constrained(Qd, ops.mass, b);
  PencilCounter tangent(Q, ops.massmat(), b);
  EXPECT_EQ(tangent.count_below(0.0), (ref.array() < 0.0).count());
  const auto lowc = tangent.smallest(4);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(lowc[i], ref[i], 1e-8 * std::max(1.0, std::abs(lowc[i])));
}

TEST(Eigenvectors, SatisfyPencil) {
  auto ops = assemble(make_tadpole(1.0, 3.0), 0.02);
  const SparseMatrix G = ops.stiffness + ops.massmat();
  const auto vals = PencilCounter(G, ops.massmat()).smallest(3);
  const auto vecs = eigenvectors(G, ops.mass, vals);
  for (std::size_t i = 0; i < 3; ++i) {
    const Vector r = G * vecs[i] - vals[i] * ops.mass.cwiseProduct(vecs[i]);
    EXPECT_LT(ops.dual_norm(r), 1e-6 * vals[i]);
    EXPECT_NEAR(ops.mass_of(vecs[i]), 1.0, 1e-12);
    for (std::size_t j = 0; j < i; ++j) EXPECT_NEAR(ops.inner(vecs[i], vecs[j]), 0.0, 1e-8);
  }
}

TEST(MorseIndex, ZeroStateIsStable) {
  auto ops = assemble(make_tadpole(1.0, 3.0), 0.01);
  const Vector zero = Vector::Zero(static_cast<Eigen::Index>(ops.size()));
  auto r = morse_index(ops, zero, 1.0, 8.0, 0.5, false);
  EXPECT_EQ(r.morse, 0);
  EXPECT_GT(r.eigenvalues.front(), 0.0);
  EXPECT_EQ(r.eigenvalues.size(), 20u);
  EXPECT_THROW(morse_index(ops, zero, 1.0, 8.0, 0.5, true), AnalysisError);
}

TEST(MorseIndex, TadpoleAndConstrainedRelation) {
  const double p = 8.0;
  auto sol = ode::tadpole_solution(p, 1, 2.0, 2e-3);
  auto ops = assemble(sol.u.mesh_ptr());
  auto free = morse_index(ops, sol.u, 1.0, p, 0.0, false, 1e-2);
  auto tangent = morse_index(ops, sol.u, 1.0, p, 0.0, true, 1e-2);
  EXPECT_GE(free.morse, 1);
  EXPECT_TRUE(tangent.morse == free.morse || tangent.morse == free.morse - 1);
  EXPECT_LE(free.approx_morse, free.morse);
  EXPECT_LE(tangent.approx_morse, tangent.morse);
  auto j = to_json(tangent);
  EXPECT_TRUE(j.at("constrained").get<bool>());
  EXPECT_LE(j.at("eigenvalues").size(), 20u);
}

TEST(QForm, MatchesDirectQuadrature) {
  // Exact integral of phi'^2 for piecewise linears plus the nodal rule for
  // the potential term, accumulated edge by edge.
  auto ops = assemble(make_tadpole(1.3, 3.0), 0.01);
  std::mt19937_64 rng(4);
  const double rho = 0.9, p = 7.0, lambda = 2.0;
  const auto u = ops.to_function(random_vector(rng, static_cast<Eigen::Index>(ops.size())));
  const auto phi = ops.to_function(random_vector(rng, static_cast<Eigen::Index>(ops.size())));
  double direct = 0.0;
  const auto& g = ops.graph();
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    const auto& gr = ops.mesh->grid(e);
    const auto& a = phi.edge_values(e);
    const auto& w = u.edge_values(e);
    for (std::size_t i = 0; i + 1 < a.size(); ++i) {
      direct += (a[i + 1] - a[i]) * (a[i + 1] - a[i]) / gr.step;
      for (std::size_t k : {i, i + 1}) {
        const double pot = lambda - (g.edge(e).kappa ? (p - 1.0) * rho * std::pow(std::abs(w[k]), p - 2.0) : 0.0);
        direct += 0.5 * gr.step * pot * a[k] * a[k];
      }
    }
  }
  const double q = q_form(ops, ops.to_vector(u), rho, p, lambda, ops.to_vector(phi));
  EXPECT_NEAR(q, direct, 1e-8 * std::abs(direct));
}

TEST(HalflineTestSubspace, BoundHoldsOnBasisAndCombinations) {
  auto ops = assemble(make_tadpole(1.0, 40.0), 0.01);
  const double lambda = -1.0;
  auto sub = halfline_test_subspace(ops, lambda, 3);
  ASSERT_EQ(sub.basis.size(), 3u);
  EXPECT_LE(sub.tau, sub.tau_max);
  const Vector zero = Vector::Zero(static_cast<Eigen::Index>(ops.size()));
  auto bound = [&](const Vector& w) {
    return q_form(ops, zero, 1.0, 8.0, lambda, w) <= 0.5 * lambda * h1_norm_squared(ops, w);
  };
  for (const auto& b : sub.basis) {
    EXPECT_NEAR(mass(b), 1.0, 1e-12);
    EXPECT_TRUE(bound(ops.to_vector(b)));
  }
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    Vector w = Vector::Zero(static_cast<Eigen::Index>(ops.size()));
    for (const auto& b : sub.basis) w += normal(rng) * ops.to_vector(b);
    EXPECT_TRUE(bound(w)) << trial;
  }
}

TEST(HalflineTestSubspace, SmallMultiplierNeedsLongTruncation) {
  auto ops = assemble(make_tadpole(1.0, 10.0), 0.01);
  try {
    halfline_test_subspace(ops, -1e-3, 3);
    FAIL();
  } catch (const AnalysisError& e) {
    EXPECT_NE(std::string(e.what()).find("needs at least"), std::string::npos);
  }
  EXPECT_THROW(halfline_test_subspace(ops, 0.5, 1), AnalysisError);
}

TEST(Rayleigh, RestartAgreementAndHomogeneity) {
  auto ops = assemble(make_tadpole(1.0, 6.0), 0.01);
  const double p = 8.0;
  auto r = rayleigh_level(ops, p, 2);
  ASSERT_GE(r.start_values.size(), 2u);
  for (double v : r.start_values) EXPECT_NEAR(v, r.S, 1e-4 * r.S);
  const SparseMatrix G = ops.stiffness + ops.massmat();
  auto quotient = [&](const Vector& u) { return u.dot(G * u) / std::pow(ops.core_lp(u, p), 2.0 / p); };
  EXPECT_NEAR(quotient(r.argmin), r.S, 1e-12 * r.S);
  EXPECT_NEAR(quotient(2.0 * r.argmin), r.S, 1e-12 * r.S);
}

TEST(Rayleigh, NondecreasingInN) {
  auto ops = assemble(make_tadpole(2.0, 6.0), 0.01);
  double prev = 0.0;
  for (std::size_t N = 2; N <= 8; ++N) {
    const double S = rayleigh_level(ops, 8.0, N).S;
    EXPECT_GE(S, prev * (1.0 - 1e-8)) << N;
    prev = S;
  }
}

TEST(BetaLevels, LConstant) {
  // mu = 1, p = 8: the ratio is invariant under x -> 1/x and peaks at x = 1,
  // where it equals 2^4 / 2 = 8, so L = 3.
  auto [L, x] = l_constant(1.0, 8.0);
  EXPECT_NEAR(L, 3.0, 1e-12);
  EXPECT_NEAR(x, 1.0, 1e-5);
  auto [L2, x2] = l_constant(1.0, 8.0, -7.0, 3.0);
  EXPECT_NEAR(L2, L, 1e-8);
  // mu < 1: interior maximum above both limits mu^{p/2-1} and 1.
  const double mu = 0.5, p = 8.0;
  auto [Lm, xm] = l_constant(mu, p);
  EXPECT_GT(xm, 0.0);
  EXPECT_GT(Lm * p / 3.0, 1.0);
  EXPECT_GT(Lm * p / 3.0, std::pow(mu, p / 2.0 - 1.0));
  double grid_max = 0.0;
  for (int i = -4000; i <= 4000; ++i) {
    const double y = std::exp(i * 1e-3);
    grid_max = std::max(grid_max, std::pow(mu + y * y, p / 2.0) / (mu + std::pow(y, p)));
  }
  EXPECT_NEAR(Lm, 3.0 / p * grid_max, 1e-6 * Lm);
}

TEST(BetaLevels, MonotoneAndFormula) {
  auto b = beta_levels(1.0, 8.0, {1.5, 2.0, 3.0});
  ASSERT_EQ(b.beta.size(), 3u);
  EXPECT_LT(b.beta[0], b.beta[1]);
  EXPECT_LT(b.beta[1], b.beta[2]);
  EXPECT_NEAR(b.beta[1], std::pow(std::pow(2.0, 4.0) / 3.0, 1.0 / 6.0), 1e-12);
  EXPECT_NEAR(b.b_lower[2], b.beta[2] * b.beta[2] / 6.0, 1e-14);
  EXPECT_THROW(beta_levels(1.0, 6.0, {1.0}), AnalysisError);
}
