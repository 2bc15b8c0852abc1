#ifndef HOMLAB_GRID_HPP
#define HOMLAB_GRID_HPP

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "homlab/coefficients.hpp"
#include "homlab/errors.hpp"

namespace homlab {

using Vector = Eigen::VectorXd;

enum class GridKind { periodic, dirichlet };

/// Uniform structured grid of n x n square cells on the unit square.
///
/// A periodic grid identifies opposite faces: it has n^2 nodes, all of them
/// degrees of freedom. A Dirichlet grid has (n+1)^2 nodes of which the
/// (n-1)^2 interior nodes are degrees of freedom. Nodes are numbered
/// lexicographically, x-index fastest.
class Grid {
 public:
  static Grid periodic(int n, Vec2 origin = Vec2::Zero()) {
    if (n < 2) throw ConfigError("periodic grid needs n >= 2");
    return Grid(GridKind::periodic, n, origin);
  }
  static Grid dirichlet(int n) {
    if (n < 2) throw ConfigError("Dirichlet grid needs n >= 2");
    return Grid(GridKind::dirichlet, n, Vec2::Zero());
  }

  GridKind kind() const noexcept { return kind_; }
  bool is_periodic() const noexcept { return kind_ == GridKind::periodic; }
  int n() const noexcept { return n_; }
  double h() const noexcept { return 1.0 / n_; }
  /// Shift of the sampling lattice; only periodic grids carry one.
  const Vec2& origin() const noexcept { return origin_; }

  int nodes_per_side() const noexcept { return is_periodic() ? n_ : n_ + 1; }
  std::size_t node_count() const noexcept {
    return static_cast<std::size_t>(nodes_per_side()) * nodes_per_side();
  }
  std::size_t dof_count() const noexcept {
    return is_periodic() ? node_count() : static_cast<std::size_t>(n_ - 1) * (n_ - 1);
  }
  std::size_t cell_count() const noexcept { return static_cast<std::size_t>(n_) * n_; }

  /// Node index of lattice position (i, j); periodic grids wrap.
  int node(int i, int j) const noexcept {
    if (is_periodic()) {
      i = ((i % n_) + n_) % n_;
      j = ((j % n_) + n_) % n_;
    }
    return i + nodes_per_side() * j;
  }
  int node_i(int node) const noexcept { return node % nodes_per_side(); }
  int node_j(int node) const noexcept { return node / nodes_per_side(); }

  Vec2 node_coord(int node) const { return origin_ + h() * Vec2(node_i(node), node_j(node)); }

  bool on_boundary(int node) const noexcept {
    if (is_periodic()) return false;
    const int i = node_i(node), j = node_j(node);
    return i == 0 || j == 0 || i == n_ || j == n_;
  }

  /// Degree-of-freedom index of a node, or -1 for a Dirichlet boundary node.
  int dof(int node) const noexcept {
    if (is_periodic()) return node;
    const int i = node_i(node), j = node_j(node);
    if (i == 0 || j == 0 || i == n_ || j == n_) return -1;
    return (i - 1) + (n_ - 1) * (j - 1);
  }

  /// Corner nodes of cell (ci, cj) in the order (0,0), (1,0), (0,1), (1,1).
  std::array<int, 4> cell_nodes(int ci, int cj) const noexcept {
    return {node(ci, cj), node(ci + 1, cj), node(ci, cj + 1), node(ci + 1, cj + 1)};
  }
  Vec2 cell_origin(int ci, int cj) const { return origin_ + h() * Vec2(ci, cj); }

  bool operator==(const Grid& o) const noexcept {
    return kind_ == o.kind_ && n_ == o.n_ && origin_ == o.origin_;
  }

 private:
  Grid(GridKind kind, int n, Vec2 origin) : kind_(kind), n_(n), origin_(origin) {}

  GridKind kind_;
  int n_;
  Vec2 origin_;
};

/// Nodal scalar field. Dirichlet grids store every node including the
/// boundary; the boundary trace is zero unless explicitly lifted.
struct GridFunction {
  Grid grid;
  Vector values;

  explicit GridFunction(const Grid& g) : grid(g), values(Vector::Zero(g.node_count())) {}
  GridFunction(const Grid& g, Vector v) : grid(g), values(std::move(v)) {
    if (static_cast<std::size_t>(values.size()) != grid.node_count())
      throw UsageError("GridFunction: value count does not match the grid");
  }

  /// Restriction to degrees of freedom.
  Vector dofs() const {
    if (grid.is_periodic()) return values;
    Vector out(grid.dof_count());
    for (int k = 0; k < static_cast<int>(grid.node_count()); ++k) {
      const int d = grid.dof(k);
      if (d >= 0) out[d] = values[k];
    }
    return out;
  }

  /// Embeds a DOF vector; boundary nodes are zero.
  static GridFunction from_dofs(const Grid& g, const Vector& dof_values) {
    if (static_cast<std::size_t>(dof_values.size()) != g.dof_count())
      throw UsageError("GridFunction::from_dofs: size mismatch");
    if (g.is_periodic()) return GridFunction(g, dof_values);
    GridFunction u(g);
    for (int k = 0; k < static_cast<int>(g.node_count()); ++k) {
      const int d = g.dof(k);
      if (d >= 0) u.values[k] = dof_values[d];
    }
    return u;
  }

  /// Nodal interpolant of a function of the physical node coordinate.
  template <class F>
  static GridFunction interpolate(const Grid& g, F&& fn) {
    GridFunction u(g);
    for (int k = 0; k < static_cast<int>(g.node_count()); ++k) u.values[k] = fn(g.node_coord(k));
    return u;
  }
};

/// Symmetric sparse matrix over the DOFs of a grid, compressed row layout.
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct SparseOperator {
  SparseMatrix matrix;

  std::size_t rows() const { return static_cast<std::size_t>(matrix.rows()); }
  Vector apply(const Vector& x) const { return matrix * x; }
  Vector diagonal() const { return matrix.diagonal(); }

  double max_abs_entry() const {
    double m = 0.0;
    for (int r = 0; r < matrix.outerSize(); ++r)
      for (SparseMatrix::InnerIterator it(matrix, r); it; ++it) m = std::max(m, std::abs(it.value()));
    return m;
  }

  /// max |a_ij - a_ji| over stored entries; a missing mirror counts as zero.
  double symmetry_defect() const {
    double d = 0.0;
    for (int r = 0; r < matrix.outerSize(); ++r)
      for (SparseMatrix::InnerIterator it(matrix, r); it; ++it)
        d = std::max(d, std::abs(it.value() - matrix.coeff(it.col(), r)));
    return d;
  }
};

inline SparseOperator operator+(const SparseOperator& a, const SparseOperator& b) {
  return {SparseMatrix(a.matrix + b.matrix)};
}
inline SparseOperator operator*(double s, const SparseOperator& a) { return {SparseMatrix(s * a.matrix)}; }

/// Q1 reference element data on the unit square with 2x2 Gauss quadrature.
struct ReferenceQ1 {
  static constexpr int nq = 4;
  std::array<Vec2, nq> points;                    // reference coordinates
  std::array<std::array<double, 4>, nq> shape;    // N_a at each point
  std::array<std::array<Vec2, 4>, nq> dshape;     // reference gradients

  static Vec2 grad_at(int a, const Vec2& p) {
    const double x = p[0], y = p[1];
    switch (a) {
      case 0: return Vec2(-(1 - y), -(1 - x));
      case 1: return Vec2(1 - y, -x);
      case 2: return Vec2(-y, 1 - x);
      default: return Vec2(y, x);
    }
  }
  static double value_at(int a, const Vec2& p) {
    const double x = p[0], y = p[1];
    switch (a) {
      case 0: return (1 - x) * (1 - y);
      case 1: return x * (1 - y);
      case 2: return (1 - x) * y;
      default: return x * y;
    }
  }

  ReferenceQ1() {
    const double g = 0.5 / std::sqrt(3.0);
    const double lo = 0.5 - g, hi = 0.5 + g;
    points = {Vec2(lo, lo), Vec2(hi, lo), Vec2(lo, hi), Vec2(hi, hi)};
    for (int q = 0; q < nq; ++q)
      for (int a = 0; a < 4; ++a) {
        shape[q][a] = value_at(a, points[q]);
        dshape[q][a] = grad_at(a, points[q]);
      }
  }

  static const ReferenceQ1& get() {
    static const ReferenceQ1 ref;
    return ref;
  }
};

/// Value and gradient of a Q1 grid function at reference point p of a cell.
inline std::pair<double, Vec2> eval_in_cell(const GridFunction& u, int ci, int cj, const Vec2& p) {
  const auto nodes = u.grid.cell_nodes(ci, cj);
  double v = 0.0;
  Vec2 g = Vec2::Zero();
  for (int a = 0; a < 4; ++a) {
    const double ua = u.values[nodes[a]];
    v += ua * ReferenceQ1::value_at(a, p);
    g += ua * ReferenceQ1::grad_at(a, p);
  }
  return {v, g / u.grid.h()};
}

/// Bilinear interpolation of a periodic grid function at any point y in R^2.
inline double sample_periodic(const GridFunction& u, const Vec2& y) {
  const Grid& g = u.grid;
  if (!g.is_periodic()) throw UsageError("sample_periodic needs a periodic grid function");
  const Vec2 local = (y - g.origin()) * g.n();
  const double fx = std::floor(local[0]), fy = std::floor(local[1]);
  const int ci = static_cast<int>(static_cast<long long>(fx) % g.n());
  const int cj = static_cast<int>(static_cast<long long>(fy) % g.n());
  const Vec2 p(local[0] - fx, local[1] - fy);
  return eval_in_cell(u, ci, cj, p).first;
}

}  // namespace homlab

#endif  // HOMLAB_GRID_HPP
