#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "homlab/spectral.hpp"

using namespace homlab;
using std::numbers::pi;

namespace {

const auto identity_a = [](const Vec2&) -> Mat2 { return Mat2::Identity(); };

const Spectrum& laplace64() {
  static const Spectrum s = hom_spectrum(Mat2::Identity(), 0.0, false, Grid::dirichlet(64), 8, 1);
  return s;
}

}  // namespace

TEST(Eigs, SquareLaplacian) {
  const double expected[] = {2, 5, 5, 8, 10};
  const Spectrum& s = laplace64();
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(s.values[k], expected[k] * pi * pi, 0.01 * expected[k] * pi * pi) << k;
}

TEST(Eigs, OrthonormalAndConverged) {
  const Spectrum& s = laplace64();
  const SparseOperator m = assemble_mass(s.grid);
  const Eigen::MatrixXd gram = s.vectors.transpose() * (m.matrix * s.vectors);
  EXPECT_LE((gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff(), 1e-8);
  for (double r : s.residuals) EXPECT_LE(r, 1e-8);
  EXPECT_TRUE(std::is_sorted(s.values.begin(), s.values.end()));
}

TEST(Eigs, ShiftIdentity) {
  const Grid g = Grid::dirichlet(32);
  const SparseOperator k = assemble_stiffness(g, identity_a);
  const SparseOperator m = assemble_mass(g);
  const EigenPairs a = eigs(k, m, 4, 3);
  const EigenPairs b = eigs(k + 7.5 * m, m, 4, 3);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(b.values[i] - a.values[i], 7.5, 1e-9);
}

TEST(Eigs, DenseAndIterativeAgree) {
  const Grid g = Grid::dirichlet(24);
  const SparseOperator k = assemble_stiffness(g, [](const Vec2& x) -> Mat2 {
    return (2.0 + std::sin(8 * pi * x[0])) * Mat2::Identity();
  });
  const SparseOperator m = assemble_mass(g);
  EigOptions sparse;
  sparse.dense_limit = 0;
  const EigenPairs a = eigs(k, m, 5, 1);
  const EigenPairs b = eigs(k, m, 5, 1, sparse);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-9 * a.values[i]);
}

TEST(Eigs, IndefiniteOperator) {
  const Grid g = Grid::dirichlet(48);
  const SparseOperator m = assemble_mass(g);
  const SparseOperator k = assemble_stiffness(g, identity_a) + (-30.0) * m;
  EigOptions sparse;
  sparse.dense_limit = 0;
  const EigenPairs p = eigs(k, m, 3, 1, sparse);
  EXPECT_NEAR(p.values[0], 2 * pi * pi - 30.0, 0.05);
  EXPECT_LT(p.values[0], 0.0);
}

TEST(Eigs, Deterministic) {
  const Grid g = Grid::dirichlet(40);
  const SparseOperator k = assemble_stiffness(g, identity_a);
  const SparseOperator m = assemble_mass(g);
  const EigenPairs a = eigs(k, m, 4, 11);
  const EigenPairs b = eigs(k, m, 4, 11);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ((a.vectors - b.vectors).norm(), 0.0);
}

TEST(Eigs, BadCount) {
  const Grid g = Grid::dirichlet(8);
  EXPECT_THROW(eigs(assemble_stiffness(g, identity_a), assemble_mass(g), 0, 1), Error);
}

TEST(HomSpectrum, ShiftedByPotential) {
  const double m = -1.0 / (8 * pi * pi);
  const Spectrum s = hom_spectrum(Mat2::Identity(), m, true, Grid::dirichlet(64), 5, 1);
  const double expected[] = {2, 5, 5, 8, 10};
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(s.values[k], expected[k] * pi * pi + m, 0.01 * expected[k] * pi * pi);
  EXPECT_EQ(s.tag, OperatorTag::hom);
}

TEST(Richardson, RemovesQuadraticError) {
  const auto r = richardson({1.0 + 4e-2}, {1.0 + 1e-2});
  EXPECT_NEAR(r[0], 1.0, 1e-15);
  EXPECT_THROW(richardson({1.0}, {1.0, 2.0}), UsageError);
}

TEST(GapTable, IdenticalOperators) {
  const CoefficientModel m = make_preset("identity", "zero", "one");
  const Grid g = Grid::dirichlet(64);
  const Spectrum le = eps_spectrum(EpsProblem(0.25, m, g), true, 5, 1);
  const Spectrum l0 = hom_spectrum(Mat2::Identity(), 0.0, true, g, 5, 1);
  for (const GapRow& r : gap_table(le, l0, 5)) EXPECT_LE(r.gap, 1e-8);
}

TEST(GapTable, NormalizedConstant) {
  const auto rows = gap_table(0.25, {4.0}, {3.0}, 1);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_DOUBLE_EQ(rows[0].normalized_const, 1.0 / (0.25 * 8.0));
  EXPECT_THROW(gap_table(0.25, {4.0}, {3.0}, 2), UsageError);
}

TEST(FirstEig, ZeroPotentialD7) {
  const CoefficientModel m = make_preset("smooth-iso", "zero", "one");
  const EpsProblem p(0.25, m, Grid::dirichlet(64));
  const Spectrum a = eps_spectrum(p, true, 1, 1);
  const Spectrum b = eps_spectrum(p, false, 1, 1);
  EXPECT_LE(first_eig_record(a, b, 20.0, 0.0).d7, 1e-8 * a.values[0]);
}

TEST(FirstEig, Target) {
  const FirstEigRecord r = first_eig_record(0.1, 19.8, 19.7, 2 * pi * pi, -1.0 / (8 * pi * pi));
  EXPECT_NEAR(r.target(), 19.7265, 1e-4);
  EXPECT_NEAR(r.d8, std::abs(19.8 - r.target()), 1e-14);
}

TEST(ClusterProjection, SingleMember) {
  const Spectrum& s = laplace64();
  // sqrt(2 pi^2) = 4.44, window [4.44, 5.44) holds lambda_1 only (sqrt(5 pi^2) = 7.02).
  const ClusterProjection c = cluster_projection(s, s.values[0], s.eigenfunction(0));
  ASSERT_EQ(c.members.size(), 1u);
  EXPECT_LE((c.projected.values - s.eigenfunction(0).values).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE(c.residual.values.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ClusterProjection, OrthogonalInputIsKilled) {
  const Spectrum& s = laplace64();
  const ClusterProjection c = cluster_projection(s, s.values[0], s.eigenfunction(3));
  EXPECT_LE(c.projected.values.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(ClusterProjection, DegeneratePairIsAProjection) {
  const Spectrum& s = laplace64();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  GridFunction f(s.grid);
  for (int k = 0; k < static_cast<int>(s.grid.node_count()); ++k)
    if (!s.grid.on_boundary(k)) f.values[k] = nd(rng);
  f.values /= l2_norm(f);
  const ClusterProjection once = cluster_projection(s, s.values[1], f);
  ASSERT_EQ(once.members, (std::vector<int>{1, 2}));
  EXPECT_LE(l2_norm(once.projected), 1.0 + 1e-12);
  const ClusterProjection twice = cluster_projection(s, s.values[1], once.projected);
  EXPECT_LE((twice.projected.values - once.projected.values).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(OperatorTag, RoundTrip) {
  for (OperatorTag t : {OperatorTag::eps, OperatorTag::eps_prime, OperatorTag::hom, OperatorTag::hom_prime})
    EXPECT_EQ(parse_operator_tag(to_string(t)), t);
  EXPECT_THROW(parse_operator_tag("zeta"), ConfigError);
}
