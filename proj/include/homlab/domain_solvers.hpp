#ifndef HOMLAB_DOMAIN_SOLVERS_HPP
#define HOMLAB_DOMAIN_SOLVERS_HPP

#include <Eigen/SparseCholesky>

#include <array>
#include <cmath>
#include <functional>
#include <string>

#include "homlab/cell_problems.hpp"
#include "homlab/eigensolver.hpp"
#include "homlab/fem.hpp"

namespace homlab {

/// The oscillating problem on the unit square at one epsilon.
/// Construction enforces the resolution rule h <= epsilon / 16.
class EpsProblem {
 public:
  EpsProblem(double epsilon, CoefficientModel model, const Grid& grid)
      : epsilon_(epsilon), model_(std::move(model)), grid_(grid) {
    if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in (0, 1]");
    if (grid.is_periodic()) throw UsageError("EpsProblem needs a Dirichlet grid");
    if (grid.h() > epsilon / 16.0 * (1.0 + 1e-12))
      throw ConfigError("resolution rule violated: h = 1/" + std::to_string(grid.n()) + " exceeds epsilon/16 = " +
                        std::to_string(epsilon / 16.0) + "; use at least " +
                        std::to_string(static_cast<int>(std::ceil(16.0 / epsilon - 1e-9))) + " cells per side");
  }

  double epsilon() const noexcept { return epsilon_; }
  const CoefficientModel& model() const noexcept { return model_; }
  const Grid& grid() const noexcept { return grid_; }

  Mat2 a_at(const Vec2& x) const { return model_.a(x / epsilon_); }
  double w_at(const Vec2& x) const { return model_.w(x / epsilon_); }

  /// int A(x/eps) grad u . grad v
  SparseOperator stiffness() const {
    return assemble_stiffness(grid_, [&](const Vec2& x) { return a_at(x); });
  }
  /// (1/eps) int W(x/eps) u v
  SparseOperator potential() const {
    return assemble_weighted_mass(grid_, [&](const Vec2& x) { return w_at(x) / epsilon_; });
  }
  /// Discrete L_eps (with_potential) or L'_eps.
  SparseOperator operator_matrix(bool with_potential = true) const {
    SparseOperator k = stiffness();
    if (with_potential) k = k + potential();
    return k;
  }

 private:
  double epsilon_;
  CoefficientModel model_;
  Grid grid_;
};

inline CgOptions default_domain_cg(const Grid& g) {
  CgOptions o;
  o.tol = 1e-10;
  o.max_iter = 50 * g.n();
  return o;
}

struct SolveOptions {
  CgOptions cg;
  /// Accept a non-coercive L_eps (super-critical epsilon); solved directly.
  bool allow_noncoercive = false;
  unsigned seed = 1;
};

namespace detail {

inline Vector direct_solve(const SparseOperator& k, const Vector& rhs) {
  const Eigen::SparseMatrix<double> kc(k.matrix);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(kc);
  if (ldlt.info() != Eigen::Success) throw SolverError("direct solve: factorisation failed", 1.0, true);
  return ldlt.solve(rhs);
}

inline double lowest_eigenvalue(const SparseOperator& k, const Grid& g, unsigned seed) {
  return eigs(k, assemble_mass(g), 1, seed).values.front();
}

}  // namespace detail

/// u_eps: int A^eps grad u . grad v + (1/eps) int W^eps u v = int f v.
inline GridFunction solve_eps(const EpsProblem& problem, const std::function<double(const Vec2&)>& f,
                              const SolveOptions& opt) {
  const SparseOperator k = problem.operator_matrix(true);
  const Vector load = assemble_load(problem.grid(), f);
  if (opt.allow_noncoercive) return GridFunction::from_dofs(problem.grid(), detail::direct_solve(k, load));
  try {
    return GridFunction::from_dofs(problem.grid(), cg_solve(k, load, opt.cg));
  } catch (const SolverError& e) {
    if (!e.breakdown()) throw;
    const double l1 = detail::lowest_eigenvalue(k, problem.grid(), opt.seed);
    throw CoercivityError("solve_eps: L_eps is not coercive at epsilon " + std::to_string(problem.epsilon()) +
                              " (lowest eigenvalue " + std::to_string(l1) + ")",
                          l1);
  }
}

inline GridFunction solve_eps(const EpsProblem& problem, const std::function<double(const Vec2&)>& f) {
  SolveOptions opt;
  opt.cg = default_domain_cg(problem.grid());
  return solve_eps(problem, f, opt);
}

/// Discrete L'_0 = -div(a_hat grad) on the Dirichlet grid.
inline SparseOperator homogenized_operator(const Mat2& a_hat, double m_w_chi_w, const Grid& grid) {
  SparseOperator k = assemble_stiffness(grid, [&](const Vec2&) { return a_hat; });
  if (m_w_chi_w != 0.0) k = k + m_w_chi_w * assemble_mass(grid);
  return k;
}

/// u_0: int a_hat grad u . grad v + M int u v = int f v.
/// Requires M > -lambda'_{0,1}; lambda'_{0,1} is computed on the grid when
/// not supplied.
inline GridFunction solve_homogenized(const Mat2& a_hat, double m_w_chi_w, const Grid& grid,
                                      const std::function<double(const Vec2&)>& f, double lambda0_prime_1 = NAN,
                                      const CgOptions* cg = nullptr) {
  if (grid.is_periodic()) throw UsageError("solve_homogenized needs a Dirichlet grid");
  if (std::isnan(lambda0_prime_1))
    lambda0_prime_1 = detail::lowest_eigenvalue(homogenized_operator(a_hat, 0.0, grid), grid, 1);
  if (!(m_w_chi_w > -lambda0_prime_1))
    throw ConfigError("homogenized problem: M(W chi_w) = " + std::to_string(m_w_chi_w) +
                      " does not exceed -lambda'_0,1 = " + std::to_string(-lambda0_prime_1));
  const SparseOperator k = homogenized_operator(a_hat, m_w_chi_w, grid);
  const Vector load = assemble_load(grid, f);
  return GridFunction::from_dofs(grid, cg_solve(k, load, cg ? *cg : default_domain_cg(grid)));
}

/// Phi_j = x_j + phi_j with L'_eps Phi_j = 0 and Phi_j = x_j on the boundary.
struct DirichletCorrectors {
  double epsilon = 0.0;
  std::array<GridFunction, 2> phi;        // Phi_j on every node
  std::array<GridFunction, 2> deviation;  // Phi_j - x_j
};

inline DirichletCorrectors solve_dirichlet_correctors(const EpsProblem& problem, const CgOptions& cg) {
  const Grid& g = problem.grid();
  const SparseOperator k = problem.stiffness();
  DirichletCorrectors out{problem.epsilon(), {GridFunction(g), GridFunction(g)}, {GridFunction(g), GridFunction(g)}};
  for (int j = 0; j < 2; ++j) {
    const Vector rhs = -assemble_flux_load(g, [&](const Vec2& x) -> Vec2 { return problem.a_at(x).col(j); });
    out.deviation[j] = GridFunction::from_dofs(g, cg_solve(k, rhs, cg));
    for (int node = 0; node < static_cast<int>(g.node_count()); ++node) {
      const double xj = g.node_coord(node)[j];
      out.phi[j].values[node] = g.on_boundary(node) ? xj : xj + out.deviation[j].values[node];
    }
  }
  return out;
}

inline DirichletCorrectors solve_dirichlet_correctors(const EpsProblem& problem) {
  return solve_dirichlet_correctors(problem, default_domain_cg(problem.grid()));
}

struct CoercivityReport {
  double epsilon = 0.0;
  double lambda_eps_1 = 0.0;
  double lambda0_prime_1 = 0.0;
  double m_w_chi_w = 0.0;
  bool coercive = false;

  /// lambda'_{0,1} + M(W chi_w), the limit of lambda_eps_1.
  double limit() const { return lambda0_prime_1 + m_w_chi_w; }
};

/// Lowest eigenvalue of the discrete L_eps; coercive iff positive.
inline CoercivityReport coercivity_check(const EpsProblem& problem, const PeriodicCellSolution& cell,
                                         unsigned seed = 1) {
  const Grid& g = problem.grid();
  CoercivityReport r;
  r.epsilon = problem.epsilon();
  r.m_w_chi_w = cell.m_w_chi_w;
  r.lambda_eps_1 = detail::lowest_eigenvalue(problem.operator_matrix(true), g, seed);
  r.lambda0_prime_1 = detail::lowest_eigenvalue(homogenized_operator(cell.a_hat, 0.0, g), g, seed);
  r.coercive = r.lambda_eps_1 > 0.0;
  return r;
}

/// Nodal samples of a periodic cell field at x / epsilon on a domain grid.
inline GridFunction sample_on_domain(const GridFunction& cell_field, const Grid& domain, double epsilon) {
  return GridFunction::interpolate(domain, [&](const Vec2& x) { return sample_periodic(cell_field, x / epsilon); });
}

}  // namespace homlab

#endif  // HOMLAB_DOMAIN_SOLVERS_HPP
