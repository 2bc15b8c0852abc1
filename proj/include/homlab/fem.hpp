#ifndef HOMLAB_FEM_HPP
#define HOMLAB_FEM_HPP

#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "homlab/grid.hpp"

namespace homlab {

/// One 2x2 Gauss point of one cell.
struct QuadPoint {
  int ci;
  int cj;
  int q;          // 0..3
  Vec2 ref;       // reference coordinates in [0,1]^2
  Vec2 x;         // physical coordinates
  double weight;  // includes the cell area

  std::size_t flat(int n) const { return (static_cast<std::size_t>(ci) + static_cast<std::size_t>(n) * cj) * 4 + q; }
};

/// Calls fn(const QuadPoint&) for every quadrature point in a fixed order.
template <class Fn>
void for_each_quad(const Grid& g, Fn&& fn) {
  const auto& ref = ReferenceQ1::get();
  const double h = g.h();
  const double w = 0.25 * h * h;
  for (int cj = 0; cj < g.n(); ++cj)
    for (int ci = 0; ci < g.n(); ++ci) {
      const Vec2 o = g.cell_origin(ci, cj);
      for (int q = 0; q < ReferenceQ1::nq; ++q) fn(QuadPoint{ci, cj, q, ref.points[q], o + h * ref.points[q], w});
    }
}

/// Quadrature sum of fn(const QuadPoint&) over the grid.
template <class Fn>
double integrate(const Grid& g, Fn&& fn) {
  double s = 0.0;
  for_each_quad(g, [&](const QuadPoint& p) { s += p.weight * fn(p); });
  return s;
}

/// Values of some quantity at every quadrature point, indexed by QuadPoint::flat.
struct QuadField {
  Grid grid;
  std::vector<double> values;

  explicit QuadField(const Grid& g) : grid(g), values(g.cell_count() * 4, 0.0) {}
  double operator()(const QuadPoint& p) const { return values[p.flat(grid.n())]; }
  double& operator()(const QuadPoint& p) { return values[p.flat(grid.n())]; }
  double mean() const {
    return integrate(grid, [&](const QuadPoint& p) { return (*this)(p); });
  }
};

namespace detail {

// Samplers may take either the physical point or the full quadrature point.
template <class F>
decltype(auto) call_sampler(F& f, const QuadPoint& p) {
  if constexpr (std::is_invocable_v<F&, const QuadPoint&>)
    return f(p);
  else
    return f(p.x);
}

template <class LocalFn>
SparseOperator assemble_cells(const Grid& g, LocalFn&& local) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(g.cell_count() * 16);
  const auto& ref = ReferenceQ1::get();
  const double h = g.h();
  const double w = 0.25 * h * h;
  for (int cj = 0; cj < g.n(); ++cj)
    for (int ci = 0; ci < g.n(); ++ci) {
      std::array<std::array<double, 4>, 4> ke{};
      const Vec2 o = g.cell_origin(ci, cj);
      for (int q = 0; q < ReferenceQ1::nq; ++q) {
        const QuadPoint p{ci, cj, q, ref.points[q], o + h * ref.points[q], w};
        local(p, ke);
      }
      const auto nodes = g.cell_nodes(ci, cj);
      for (int a = 0; a < 4; ++a) {
        const int ra = g.dof(nodes[a]);
        if (ra < 0) continue;
        for (int b = 0; b < 4; ++b) {
          const int cb = g.dof(nodes[b]);
          if (cb < 0) continue;
          trips.emplace_back(ra, cb, ke[a][b]);
        }
      }
    }
  SparseOperator op;
  op.matrix.resize(static_cast<Eigen::Index>(g.dof_count()), static_cast<Eigen::Index>(g.dof_count()));
  op.matrix.setFromTriplets(trips.begin(), trips.end());
  op.matrix.makeCompressed();
  return op;
}

inline long cell_index(const QuadPoint& p, const Grid& g) { return p.ci + static_cast<long>(g.n()) * p.cj; }

}  // namespace detail

/// Discrete form  int A grad u . grad v  over the grid's DOFs.
template <class Sampler>
SparseOperator assemble_stiffness(const Grid& g, Sampler&& a_sampler) {
  const auto& ref = ReferenceQ1::get();
  const double inv_h2 = 1.0 / (g.h() * g.h());
  return detail::assemble_cells(g, [&](const QuadPoint& p, auto& ke) {
    const Mat2 a = detail::call_sampler(a_sampler, p);
    if (!a.allFinite())
      throw AssemblyError("assemble_stiffness: non-finite coefficient in cell " +
                              std::to_string(detail::cell_index(p, g)),
                          detail::cell_index(p, g));
    const auto& dn = ref.dshape[p.q];
    for (int i = 0; i < 4; ++i) {
      const Vec2 adi = a * dn[i];
      for (int j = 0; j < 4; ++j) ke[i][j] += p.weight * inv_h2 * adi.dot(dn[j]);
    }
  });
}

/// Discrete form  int w u v.
template <class Sampler>
SparseOperator assemble_weighted_mass(const Grid& g, Sampler&& w_sampler) {
  const auto& ref = ReferenceQ1::get();
  return detail::assemble_cells(g, [&](const QuadPoint& p, auto& ke) {
    const double w = detail::call_sampler(w_sampler, p);
    if (!std::isfinite(w))
      throw AssemblyError("assemble_weighted_mass: non-finite weight in cell " +
                              std::to_string(detail::cell_index(p, g)),
                          detail::cell_index(p, g));
    const auto& n = ref.shape[p.q];
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) ke[i][j] += p.weight * w * n[i] * n[j];
  });
}

inline SparseOperator assemble_mass(const Grid& g) {
  return assemble_weighted_mass(g, [](const Vec2&) { return 1.0; });
}

/// Load vector  int f v  for every DOF basis function v.
template <class Sampler>
Vector assemble_load(const Grid& g, Sampler&& f_sampler) {
  const auto& ref = ReferenceQ1::get();
  Vector b = Vector::Zero(g.dof_count());
  for_each_quad(g, [&](const QuadPoint& p) {
    const double f = detail::call_sampler(f_sampler, p);
    const auto nodes = g.cell_nodes(p.ci, p.cj);
    for (int a = 0; a < 4; ++a) {
      const int d = g.dof(nodes[a]);
      if (d >= 0) b[d] += p.weight * f * ref.shape[p.q][a];
    }
  });
  return b;
}

/// Load vector  int G . grad v  for a vector-valued sampler G.
template <class Sampler>
Vector assemble_flux_load(const Grid& g, Sampler&& flux_sampler) {
  const auto& ref = ReferenceQ1::get();
  const double inv_h = 1.0 / g.h();
  Vector b = Vector::Zero(g.dof_count());
  for_each_quad(g, [&](const QuadPoint& p) {
    const Vec2 flux = detail::call_sampler(flux_sampler, p);
    const auto nodes = g.cell_nodes(p.ci, p.cj);
    for (int a = 0; a < 4; ++a) {
      const int d = g.dof(nodes[a]);
      if (d >= 0) b[d] += p.weight * inv_h * flux.dot(ref.dshape[p.q][a]);
    }
  });
  return b;
}

/// Value and physical gradient of u at a quadrature point.
inline std::pair<double, Vec2> eval_at(const GridFunction& u, const QuadPoint& p) {
  return eval_in_cell(u, p.ci, p.cj, p.ref);
}

// ---------------------------------------------------------------------------
// Conjugate gradients

struct CgOptions {
  bool deflate_constants = false;
  double tol = 1e-10;
  int max_iter = 0;  // 0 selects 50 * (grid cells per side), see cg_solve
};

struct CgStats {
  int iterations = 0;
  double relative_residual = 0.0;
};

/// Jacobi-preconditioned CG. With deflation the iteration is confined to the
/// mean-zero subspace, which is the complement of the nullspace of a
/// periodic stiffness operator on a uniform grid.
inline Vector cg_solve(const SparseOperator& op, const Vector& rhs, const CgOptions& opt = {},
                       CgStats* stats = nullptr) {
  const Eigen::Index n = op.matrix.rows();
  if (rhs.size() != n) throw UsageError("cg_solve: rhs size mismatch");
  int max_iter = opt.max_iter;
  if (max_iter <= 0) max_iter = 50 * std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(n)))));

  auto project = [&](Vector& v) {
    if (opt.deflate_constants) v.array() -= v.mean();
  };

  Vector b = rhs;
  project(b);
  Vector x = Vector::Zero(n);
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    if (stats) *stats = {0, 0.0};
    return x;
  }
  const Vector inv_diag = op.matrix.diagonal().cwiseInverse();
  Vector r = b;
  Vector z = inv_diag.cwiseProduct(r);
  project(z);
  Vector p = z;
  double rz = r.dot(z);
  double rel = 1.0;
  for (int it = 1; it <= max_iter; ++it) {
    const Vector ap = op.matrix * p;
    const double curvature = p.dot(ap);
    if (!(curvature > 0.0))
      throw SolverError("cg_solve: non-positive curvature, operator is not positive definite", rel, true);
    const double alpha = rz / curvature;
    x += alpha * p;
    r -= alpha * ap;
    project(r);
    rel = r.norm() / bnorm;
    if (rel <= opt.tol) {
      // The recursively updated residual drifts; confirm with a true one.
      Vector true_r = b - op.matrix * x;
      project(true_r);
      rel = true_r.norm() / bnorm;
      if (rel <= opt.tol) {
        project(x);
        if (stats) *stats = {it, rel};
        return x;
      }
      r = true_r;
    }
    z = inv_diag.cwiseProduct(r);
    project(z);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  throw SolverError("cg_solve: no convergence after " + std::to_string(max_iter) +
                        " iterations, relative residual " + std::to_string(rel),
                    rel, false);
}

// ---------------------------------------------------------------------------
// Norms and derived fields

inline double l2_norm(const GridFunction& u) {
  return std::sqrt(integrate(u.grid, [&](const QuadPoint& p) {
    const double v = eval_at(u, p).first;
    return v * v;
  }));
}

inline double h1_seminorm(const GridFunction& u) {
  return std::sqrt(integrate(u.grid, [&](const QuadPoint& p) { return eval_at(u, p).second.squaredNorm(); }));
}

/// Full H^1 norm (L^2 part plus seminorm).
inline double h1_norm(const GridFunction& u) {
  const double l2 = l2_norm(u), semi = h1_seminorm(u);
  return std::sqrt(l2 * l2 + semi * semi);
}

/// Quadrature mean over the unit square.
inline double mean(const GridFunction& u) {
  return integrate(u.grid, [&](const QuadPoint& p) { return eval_at(u, p).first; });
}

/// Nodal gradient by averaging the corner gradients of the adjacent cells.
inline std::pair<GridFunction, GridFunction> recover_gradient(const GridFunction& u) {
  const Grid& g = u.grid;
  GridFunction gx(g), gy(g);
  const int n = g.n();
  for (int k = 0; k < static_cast<int>(g.node_count()); ++k) {
    const int i = g.node_i(k), j = g.node_j(k);
    Vec2 sum = Vec2::Zero();
    int count = 0;
    for (int dj = -1; dj <= 0; ++dj)
      for (int di = -1; di <= 0; ++di) {
        const int ci = i + di, cj = j + dj;
        if (!g.is_periodic() && (ci < 0 || cj < 0 || ci >= n || cj >= n)) continue;
        // The node is corner (-di, -dj) of cell (ci, cj).
        const Vec2 corner(static_cast<double>(-di), static_cast<double>(-dj));
        sum += eval_in_cell(u, ci, cj, corner).second;
        ++count;
      }
    gx.values[k] = sum[0] / count;
    gy.values[k] = sum[1] / count;
  }
  return {std::move(gx), std::move(gy)};
}

// ---------------------------------------------------------------------------
// Boundary of the Dirichlet grid

struct BoundaryEdge {
  int ci;
  int cj;       // adjacent cell
  Vec2 start;   // reference coordinates of the edge endpoints inside the cell
  Vec2 end;
  Vec2 normal;  // outward unit normal
};

inline std::vector<BoundaryEdge> boundary_edges(const Grid& g) {
  if (g.is_periodic()) throw UsageError("boundary_edges: periodic grids have no boundary");
  const int n = g.n();
  std::vector<BoundaryEdge> edges;
  edges.reserve(4 * static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) {
    edges.push_back({c, 0, Vec2(0, 0), Vec2(1, 0), Vec2(0, -1)});
    edges.push_back({n - 1, c, Vec2(1, 0), Vec2(1, 1), Vec2(1, 0)});
    edges.push_back({c, n - 1, Vec2(0, 1), Vec2(1, 1), Vec2(0, 1)});
    edges.push_back({0, c, Vec2(0, 0), Vec2(0, 1), Vec2(-1, 0)});
  }
  return edges;
}

/// Calls fn(edge, reference point, weight) for the 2-point Gauss rule on every boundary edge.
template <class Fn>
void for_each_edge_quad(const Grid& g, Fn&& fn) {
  const double gp = 0.5 / std::sqrt(3.0);
  const double w = 0.5 * g.h();
  for (const BoundaryEdge& e : boundary_edges(g))
    for (double t : {0.5 - gp, 0.5 + gp}) fn(e, Vec2(e.start + t * (e.end - e.start)), w);
}

/// Edge quadrature of |grad u|^2 over the boundary, using one-sided cell gradients.
inline double boundary_flux(const GridFunction& u) {
  if (u.grid.is_periodic()) throw UsageError("boundary_flux: needs a Dirichlet grid function");
  double s = 0.0;
  for_each_edge_quad(u.grid, [&](const BoundaryEdge& e, const Vec2& p, double w) {
    s += w * eval_in_cell(u, e.ci, e.cj, p).second.squaredNorm();
  });
  return s;
}

}  // namespace homlab

#endif  // HOMLAB_FEM_HPP
