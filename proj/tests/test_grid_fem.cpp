#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "homlab/fem.hpp"

using namespace homlab;
using std::numbers::pi;

namespace {
const auto identity_a = [](const Vec2&) -> Mat2 { return Mat2::Identity(); };
}

TEST(Grid, Counts) {
  const Grid p = Grid::periodic(8);
  EXPECT_EQ(p.node_count(), 64u);
  EXPECT_EQ(p.dof_count(), 64u);
  EXPECT_EQ(p.node(8, -1), p.node(0, 7));
  const Grid d = Grid::dirichlet(8);
  EXPECT_EQ(d.node_count(), 81u);
  EXPECT_EQ(d.dof_count(), 49u);
  EXPECT_EQ(d.dof(d.node(0, 3)), -1);
  EXPECT_GE(d.dof(d.node(1, 1)), 0);
  EXPECT_TRUE(d.on_boundary(d.node(8, 4)));
}

TEST(Stiffness, SingleInteriorDof) {
  const SparseOperator k = assemble_stiffness(Grid::dirichlet(2), identity_a);
  ASSERT_EQ(k.rows(), 1u);
  EXPECT_NEAR(k.matrix.coeff(0, 0), 8.0 / 3.0, 1e-14);
}

TEST(Stiffness, ConstantsInPeriodicNullspace) {
  const SparseOperator k = assemble_stiffness(Grid::periodic(16), identity_a);
  EXPECT_LE(k.apply(Vector::Ones(256)).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_LE(k.symmetry_defect(), 1e-15);
}

TEST(Stiffness, LinearInA) {
  const Grid g = Grid::dirichlet(8);
  const SparseOperator k1 = assemble_stiffness(g, identity_a);
  const SparseOperator k2 = assemble_stiffness(g, [](const Vec2&) -> Mat2 { return 2.0 * Mat2::Identity(); });
  EXPECT_EQ((SparseMatrix(k2.matrix - 2.0 * k1.matrix)).norm(), 0.0);
}

TEST(Stiffness, NonFiniteCoefficientThrows) {
  EXPECT_THROW(assemble_stiffness(Grid::dirichlet(4), [](const Vec2& x) -> Mat2 {
                 return x[0] > 0.5 ? Mat2(Mat2::Constant(NAN)) : Mat2(Mat2::Identity());
               }),
               AssemblyError);
}

TEST(Mass, PartitionOfUnity) {
  for (int n : {4, 16}) {
    const SparseOperator m = assemble_mass(Grid::periodic(n));
    const Vector one = Vector::Ones(static_cast<Eigen::Index>(n * n));
    EXPECT_NEAR(one.dot(m.apply(one)), 1.0, 1e-12);
  }
}

TEST(Mass, UnitWeightMatchesMass) {
  const Grid g = Grid::dirichlet(8);
  const SparseOperator w = assemble_weighted_mass(g, [](const Vec2&) { return 1.0; });
  EXPECT_EQ((SparseMatrix(w.matrix - assemble_mass(g).matrix)).norm(), 0.0);
}

TEST(Mass, MeanZeroWeight) {
  const Grid g = Grid::periodic(64);
  const SparseOperator m = assemble_weighted_mass(g, [](const Vec2& y) { return std::sin(2 * pi * y[0]); });
  const Vector one = Vector::Ones(64 * 64);
  EXPECT_LE(std::abs(one.dot(m.apply(one))), 1e-12);
}

TEST(Cg, DiagonalOperator) {
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < 10; ++i) t.emplace_back(i, i, 1.0 + i);
  SparseMatrix a(10, 10);
  a.setFromTriplets(t.begin(), t.end());
  Vector rhs = Vector::LinSpaced(10, -1, 3);
  const Vector x = cg_solve(SparseOperator{a}, rhs);
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(x[i], rhs[i] / (1.0 + i), 1e-10);
}

TEST(Cg, ZeroRhs) {
  const SparseOperator k = assemble_stiffness(Grid::dirichlet(8), identity_a);
  EXPECT_EQ(cg_solve(k, Vector::Zero(49)).norm(), 0.0);
}

TEST(Cg, PeriodicSineOracle) {
  // -Lap u = sin(2 pi y1) has the mean-zero solution sin(2 pi y1) / (4 pi^2).
  double prev = 0.0;
  for (int n : {16, 32, 64}) {
    const Grid g = Grid::periodic(n);
    const SparseOperator k = assemble_stiffness(g, identity_a);
    const Vector rhs = assemble_load(g, [](const Vec2& y) { return std::sin(2 * pi * y[0]); });
    CgOptions o;
    o.deflate_constants = true;
    o.tol = 1e-12;
    const Vector x = cg_solve(k, rhs, o);
    const GridFunction exact =
        GridFunction::interpolate(g, [](const Vec2& y) { return std::sin(2 * pi * y[0]) / (4 * pi * pi); });
    const double err = (x - exact.values).cwiseAbs().maxCoeff();
    EXPECT_LE(err, 0.5 * g.h() * g.h());
    if (prev > 0) EXPECT_GT(prev / err, 3.5);
    prev = err;
  }
}

TEST(Cg, IndefiniteBreaksDown) {
  SparseMatrix a(2, 2);
  a.insert(0, 0) = 1.0;
  a.insert(1, 1) = -1.0;
  try {
    cg_solve(SparseOperator{a}, Vector::Ones(2));
    FAIL();
  } catch (const SolverError& e) {
    EXPECT_TRUE(e.breakdown());
  }
}

TEST(Norms, LinearFunction) {
  for (int n : {4, 17}) {
    const GridFunction u = GridFunction::interpolate(Grid::dirichlet(n), [](const Vec2& x) { return x[0]; });
    EXPECT_NEAR(h1_seminorm(u), 1.0, 1e-13);
  }
}

TEST(Norms, Zero) {
  const GridFunction u(Grid::dirichlet(8));
  EXPECT_EQ(l2_norm(u), 0.0);
  EXPECT_EQ(h1_norm(u), 0.0);
}

TEST(Norms, SineSine) {
  const GridFunction u = GridFunction::interpolate(
      Grid::dirichlet(64), [](const Vec2& x) { return std::sin(pi * x[0]) * std::sin(pi * x[1]); });
  EXPECT_NEAR(l2_norm(u), 0.5, 1e-3);
}

TEST(Gradient, LinearExact) {
  const Grid g = Grid::dirichlet(10);
  const auto [gx, gy] = recover_gradient(GridFunction::interpolate(g, [](const Vec2& x) { return 3 * x[0] + 2 * x[1]; }));
  for (int k = 0; k < static_cast<int>(g.node_count()); ++k) {
    EXPECT_NEAR(gx.values[k], 3.0, 1e-13);
    EXPECT_NEAR(gy.values[k], 2.0, 1e-13);
  }
}

TEST(Gradient, SecondOrderInterior) {
  double prev = 0.0;
  for (int n : {64, 128}) {
    const Grid g = Grid::dirichlet(n);
    const auto [gx, gy] = recover_gradient(GridFunction::interpolate(g, [](const Vec2& x) { return std::sin(pi * x[0]); }));
    double err = 0.0;
    for (int k = 0; k < static_cast<int>(g.node_count()); ++k)
      if (!g.on_boundary(k)) err = std::max(err, std::abs(gx.values[k] - pi * std::cos(pi * g.node_coord(k)[0])));
    // Central differences: error pi^3 h^2 / 6 at the extremes of the third derivative.
    EXPECT_LE(err, 1.05 * pi * pi * pi / 6.0 * g.h() * g.h());
    if (prev > 0) EXPECT_GT(prev / err, 3.5);
    prev = err;
  }
}

TEST(Gradient, ConstantIsFlat) {
  const auto [gx, gy] = recover_gradient(GridFunction::interpolate(Grid::periodic(8), [](const Vec2&) { return 4.0; }));
  EXPECT_EQ(gx.values.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(gy.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(BoundaryFlux, SignAndZero) {
  const Grid g = Grid::dirichlet(32);
  EXPECT_GT(boundary_flux(GridFunction::interpolate(g, [](const Vec2& x) { return x[0] * (1 - x[0]) * x[1] * (1 - x[1]); })), 0.0);
  EXPECT_EQ(boundary_flux(GridFunction(g)), 0.0);
  EXPECT_THROW(boundary_flux(GridFunction(Grid::periodic(8))), UsageError);
}

TEST(BoundaryFlux, FirstLaplaceMode) {
  // phi = 2 sin(pi x1) sin(pi x2): flux = 4 * 2 pi^2.
  const GridFunction u = GridFunction::interpolate(
      Grid::dirichlet(128), [](const Vec2& x) { return 2 * std::sin(pi * x[0]) * std::sin(pi * x[1]); });
  EXPECT_NEAR(boundary_flux(u) / (2 * pi * pi), 4.0, 0.08);
}
