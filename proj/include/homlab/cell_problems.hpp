#ifndef HOMLAB_CELL_PROBLEMS_HPP
#define HOMLAB_CELL_PROBLEMS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "homlab/coefficients.hpp"
#include "homlab/fem.hpp"

namespace homlab {

inline CgOptions default_cell_cg() {
  CgOptions o;
  o.deflate_constants = true;
  o.tol = 1e-11;
  return o;
}

namespace detail {

inline void require_cell_grid(const Grid& g) {
  if (!g.is_periodic()) throw UsageError("cell problems need a periodic grid");
  if (g.n() < 16) throw ConfigError("cell grid needs n >= 16");
}

inline CgOptions deflated(CgOptions o) {
  o.deflate_constants = true;
  return o;
}

}  // namespace detail

/// Correctors chi_1, chi_2: zero-mean periodic solutions of
/// int_Y A (grad chi_k + e_k) . grad v = 0.
inline std::array<GridFunction, 2> solve_chi(const CoefficientModel& model, const Grid& grid,
                                             const CgOptions& cg = default_cell_cg()) {
  detail::require_cell_grid(grid);
  const SparseOperator k = assemble_stiffness(grid, [&](const Vec2& y) { return model.a(y); });
  std::array<GridFunction, 2> chi{GridFunction(grid), GridFunction(grid)};
  for (int c = 0; c < 2; ++c) {
    const Vector rhs = -assemble_flux_load(grid, [&](const Vec2& y) -> Vec2 { return model.a(y).col(c); });
    chi[c] = GridFunction(grid, cg_solve(k, rhs, detail::deflated(cg)));
  }
  return chi;
}

/// Effective matrix a_hat_ij = mean over Y of a_ij + a_ik d_k chi_j.
inline Mat2 effective_matrix(const CoefficientModel& model, const Grid& grid,
                             const std::array<GridFunction, 2>& chi) {
  Mat2 a_hat = Mat2::Zero();
  for_each_quad(grid, [&](const QuadPoint& p) {
    const Mat2 a = model.a(p.x);
    for (int j = 0; j < 2; ++j) {
      const Vec2 flux = a.col(j) + a * eval_at(chi[j], p).second;
      a_hat.col(j) += p.weight * flux;
    }
  });
  return a_hat;
}

/// Mean of W over Y by cell quadrature.
inline double mean_of_w(const CoefficientModel& model, const Grid& grid) {
  return integrate(grid, [&](const QuadPoint& p) { return model.w(p.x); });
}

/// Potential corrector: zero-mean periodic solution of div(A grad chi_w) = W,
/// i.e. int_Y A grad chi_w . grad v = -int_Y W v.
inline GridFunction solve_chi_w(const CoefficientModel& model, const Grid& grid,
                                const CgOptions& cg = default_cell_cg()) {
  detail::require_cell_grid(grid);
  const double mw = mean_of_w(model, grid);
  if (std::abs(mw) > 1e-10)
    throw CompatibilityError("solve_chi_w: W has mean " + std::to_string(mw) + ", expected zero");
  const SparseOperator k = assemble_stiffness(grid, [&](const Vec2& y) { return model.a(y); });
  const Vector rhs = -assemble_load(grid, [&](const Vec2& y) { return model.w(y); });
  return GridFunction(grid, cg_solve(k, rhs, detail::deflated(cg)));
}

/// M(W chi_w): mean over Y of W chi_w.
inline double effective_potential(const CoefficientModel& model, const GridFunction& chi_w) {
  return integrate(chi_w.grid, [&](const QuadPoint& p) { return model.w(p.x) * eval_at(chi_w, p).first; });
}

/// int_Y A grad u . grad u.
inline double cell_energy(const CoefficientModel& model, const GridFunction& u) {
  return integrate(u.grid, [&](const QuadPoint& p) {
    const Vec2 g = eval_at(u, p).second;
    return g.dot(model.a(p.x) * g);
  });
}

// ---------------------------------------------------------------------------
// Flux correctors

/// b_ij = a_hat_ij - a_ij - a_ik d_k chi_j, stored at quadrature points.
struct FluxCorrectors {
  std::array<std::array<QuadField, 2>, 2> b;

  const QuadField& operator()(int i, int j) const { return b[i][j]; }
};

inline FluxCorrectors flux_correctors(const CoefficientModel& model, const std::array<GridFunction, 2>& chi,
                                      const Mat2& a_hat) {
  const Grid& g = chi[0].grid;
  FluxCorrectors out{{{{QuadField(g), QuadField(g)}, {QuadField(g), QuadField(g)}}}};
  for_each_quad(g, [&](const QuadPoint& p) {
    const Mat2 a = model.a(p.x);
    for (int j = 0; j < 2; ++j) {
      const Vec2 flux = a.col(j) + a * eval_at(chi[j], p).second;
      for (int i = 0; i < 2; ++i) out.b[i][j](p) = a_hat(i, j) - flux[i];
    }
  });
  return out;
}

/// Weak divergence defect of the flux correctors,
///   max over j and test v of |int_Y b_ij d_i v| / ||grad v||,
/// tested against the trigonometric functions sin/cos 2 pi (m . y), |m|_inf <= 2.
/// The fields are only known at quadrature points, so the result measures the
/// consistency of the discrete fluxes against smooth periodic tests.
inline double weak_divergence_residual(const FluxCorrectors& b) {
  const Grid& g = b(0, 0).grid;
  constexpr double tp = 2.0 * std::numbers::pi;
  double worst = 0.0;
  for (int m2 = -2; m2 <= 2; ++m2)
    for (int m1 = 0; m1 <= 2; ++m1) {
      if (m1 == 0 && m2 <= 0) continue;
      const Vec2 m(m1, m2);
      // ||grad v||_{L^2} of sin or cos(2 pi m.y) is 2 pi |m| / sqrt(2).
      const double grad_norm = tp * m.norm() / std::sqrt(2.0);
      for (int kind = 0; kind < 2; ++kind)
        for (int j = 0; j < 2; ++j) {
          const double s = integrate(g, [&](const QuadPoint& p) {
            const double phase = tp * m.dot(p.x - g.origin());
            const double dv = kind == 0 ? tp * std::cos(phase) : -tp * std::sin(phase);
            return b(0, j)(p) * m[0] * dv + b(1, j)(p) * m[1] * dv;
          });
          worst = std::max(worst, std::abs(s) / grad_norm);
        }
    }
  return worst;
}

// ---------------------------------------------------------------------------
// Identities and auxiliary potentials

/// Defect of  int_Y a_ij d_j chi_w = int_Y chi_i W  for i = 1, 2.
/// The left side uses the cell quadrature of the corrector gradient; the right
/// side is an independent nodal (trapezoidal) quadrature, so the defect
/// reflects discretisation error rather than the Galerkin relation alone.
inline std::array<double, 2> identity_34_defect(const CoefficientModel& model,
                                                const std::array<GridFunction, 2>& chi,
                                                const GridFunction& chi_w) {
  const Grid& g = chi_w.grid;
  std::array<double, 2> defect{};
  const double area = g.h() * g.h();
  for (int i = 0; i < 2; ++i) {
    const double lhs = integrate(g, [&](const QuadPoint& p) {
      return model.a(p.x).row(i).dot(eval_at(chi_w, p).second);
    });
    double rhs = 0.0;
    for (int k = 0; k < static_cast<int>(g.node_count()); ++k)
      rhs += area * chi[i].values[k] * model.w(g.node_coord(k));
    defect[i] = std::abs(lhs - rhs);
  }
  return defect;
}

struct AuxPotentials {
  std::array<GridFunction, 2> psi1;
  GridFunction psi2;
  GridFunction psi3;
  std::array<double, 3> rhs_means{};  // |mean RHS| for psi_1,1, psi_1,2 (max), psi_2, psi_3
};

/// Zero-mean periodic solutions of
///   Lap psi_{1,i} = a_ij d_j chi_w - W chi_i,
///   Lap psi_2     = M(W chi_w) - W chi_w,
///   Lap psi_3     = W.
/// Each right-hand side must be mean-zero within compat_tol.
inline AuxPotentials solve_aux_potentials(const CoefficientModel& model, const std::array<GridFunction, 2>& chi,
                                          const GridFunction& chi_w, double m_w_chi_w, double compat_tol,
                                          const CgOptions& cg = default_cell_cg()) {
  const Grid& g = chi_w.grid;
  detail::require_cell_grid(g);
  const SparseOperator lap = assemble_stiffness(g, [](const Vec2&) -> Mat2 { return Mat2::Identity(); });

  auto solve = [&](auto&& rhs_at, const std::string& name, double& mean_out) {
    QuadField rhs(g);
    for_each_quad(g, [&](const QuadPoint& p) { rhs(p) = rhs_at(p); });
    mean_out = std::abs(rhs.mean());
    if (mean_out > compat_tol)
      throw CompatibilityError("solve_aux_potentials: right-hand side of " + name + " has mean " +
                               std::to_string(mean_out) + " above tolerance " + std::to_string(compat_tol) +
                               "; the cell solutions are inconsistent");
    // Lap psi = r  <=>  int grad psi . grad v = -int r v.
    const Vector load = -assemble_load(g, [&](const QuadPoint& p) { return rhs(p); });
    return GridFunction(g, cg_solve(lap, load, detail::deflated(cg)));
  };

  std::array<double, 4> means{};
  std::array<GridFunction, 2> psi1{GridFunction(g), GridFunction(g)};
  for (int i = 0; i < 2; ++i)
    psi1[i] = solve(
        [&](const QuadPoint& p) {
          return model.a(p.x).row(i).dot(eval_at(chi_w, p).second) - model.w(p.x) * eval_at(chi[i], p).first;
        },
        "psi_1," + std::to_string(i + 1), means[i]);
  GridFunction psi2 = solve(
      [&](const QuadPoint& p) { return m_w_chi_w - model.w(p.x) * eval_at(chi_w, p).first; }, "psi_2", means[2]);
  GridFunction psi3 = solve([&](const QuadPoint& p) { return model.w(p.x); }, "psi_3", means[3]);
  return AuxPotentials{std::move(psi1), std::move(psi2), std::move(psi3),
                       {std::max(means[0], means[1]), means[2], means[3]}};
}

// ---------------------------------------------------------------------------

/// Everything the periodic cell contributes to the homogenized problem.
struct PeriodicCellSolution {
  Grid grid;
  std::array<GridFunction, 2> chi;
  GridFunction chi_w;
  Mat2 a_hat;
  double m_w_chi_w = 0.0;
  double chi_w_energy = 0.0;           // int_Y A grad chi_w . grad chi_w
  double identity_26_residual = 0.0;   // |M + energy| / (1 + |M|)
  std::array<double, 2> identity_34{};
  double b_mean_max = 0.0;
  double b_weak_divergence = 0.0;
  FluxCorrectors b;
  AuxPotentials aux;
};

/// Solves every cell problem on the grid and derives the effective data.
inline PeriodicCellSolution solve_cell(const CoefficientModel& model, const Grid& grid,
                                       const CgOptions& cg = default_cell_cg()) {
  auto chi = solve_chi(model, grid, cg);
  GridFunction chi_w = solve_chi_w(model, grid, cg);
  const Mat2 a_hat = effective_matrix(model, grid, chi);
  const double m = effective_potential(model, chi_w);
  const double energy = cell_energy(model, chi_w);
  const auto id34 = identity_34_defect(model, chi, chi_w);
  FluxCorrectors b = flux_correctors(model, chi, a_hat);
  double b_mean = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) b_mean = std::max(b_mean, std::abs(b(i, j).mean()));
  const double b_div = weak_divergence_residual(b);
  const double compat_tol = std::max(10.0 * std::max(id34[0], id34[1]), 1e-10);
  AuxPotentials aux = solve_aux_potentials(model, chi, chi_w, m, compat_tol, cg);
  return PeriodicCellSolution{grid,
                              std::move(chi),
                              std::move(chi_w),
                              a_hat,
                              m,
                              energy,
                              std::abs(m + energy) / (1.0 + std::abs(m)),
                              id34,
                              b_mean,
                              b_div,
                              std::move(b),
                              std::move(aux)};
}

}  // namespace homlab

#endif  // HOMLAB_CELL_PROBLEMS_HPP
