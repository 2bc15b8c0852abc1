#ifndef HOMLAB_ANALYSIS_HPP
#define HOMLAB_ANALYSIS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "homlab/domain_solvers.hpp"
#include "homlab/spectral.hpp"

namespace homlab {

/// w_eps = u_eps - u_0 - (Phi_j - x_j) d_j u_0 - eps chi_w(x/eps) u_0, nodal.
struct CorrectorExpansion {
  double epsilon = 0.0;
  GridFunction w;
  GridFunction uncorrected;  // u_eps - u_0
  GridFunction first_order;  // (Phi_j - x_j) d_j u_0
  GridFunction potential;    // eps chi_w(x/eps) u_0
  double w_h1 = 0.0;
  double w_l2 = 0.0;
  double uncorrected_h1 = 0.0;
  double uncorrected_l2 = 0.0;
  double boundary_trace = 0.0;  // max |w| over boundary nodes
};

inline CorrectorExpansion build_expansion(const GridFunction& u_eps, const GridFunction& u_0,
                                          const DirichletCorrectors& correctors, const GridFunction& chi_w_sampled,
                                          double epsilon) {
  const Grid& g = u_eps.grid;
  if (g.is_periodic()) throw UsageError("build_expansion: fields must live on a Dirichlet grid");
  for (const GridFunction* f : {&u_0, &correctors.deviation[0], &correctors.deviation[1], &chi_w_sampled})
    if (!(f->grid == g)) throw UsageError("build_expansion: fields live on different grids");

  const auto [du_x, du_y] = recover_gradient(u_0);
  CorrectorExpansion e{epsilon, GridFunction(g), GridFunction(g), GridFunction(g), GridFunction(g)};
  e.uncorrected.values = u_eps.values - u_0.values;
  e.first_order.values = correctors.deviation[0].values.cwiseProduct(du_x.values) +
                         correctors.deviation[1].values.cwiseProduct(du_y.values);
  e.potential.values = epsilon * chi_w_sampled.values.cwiseProduct(u_0.values);
  e.w.values = e.uncorrected.values - e.first_order.values - e.potential.values;

  for (int k = 0; k < static_cast<int>(g.node_count()); ++k)
    if (g.on_boundary(k)) e.boundary_trace = std::max(e.boundary_trace, std::abs(e.w.values[k]));
  if (e.boundary_trace > 1e-12)
    throw Error("build_expansion: w_eps has a non-zero boundary trace " + std::to_string(e.boundary_trace));

  e.w_h1 = h1_norm(e.w);
  e.w_l2 = l2_norm(e.w);
  e.uncorrected_h1 = h1_norm(e.uncorrected);
  e.uncorrected_l2 = l2_norm(e.uncorrected);
  return e;
}

// ---------------------------------------------------------------------------
// Rates

struct RateReport {
  std::string quantity;
  std::vector<std::pair<double, double>> points;  // (epsilon, value)
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::string note;  // e.g. excluded non-positive values
};

/// Least-squares fit of log(value) = slope * log(epsilon) + intercept.
inline RateReport rate_fit(const std::vector<std::pair<double, double>>& points, std::string quantity = {}) {
  RateReport r;
  r.quantity = std::move(quantity);
  r.points = points;
  std::vector<double> xs, ys;
  int dropped = 0;
  for (const auto& [eps, v] : points) {
    if (eps > 0.0 && v > 0.0 && std::isfinite(v)) {
      xs.push_back(std::log(eps));
      ys.push_back(std::log(v));
    } else {
      ++dropped;
    }
  }
  if (dropped > 0) r.note = std::to_string(dropped) + " non-positive value(s) excluded";
  if (xs.size() < 3)
    throw InsufficientDataError("rate_fit: " + std::to_string(xs.size()) + " positive points for '" + r.quantity +
                                "', need at least 3");
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0) throw InsufficientDataError("rate_fit: all epsilons coincide");
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double d = ys[i] - (r.intercept + r.slope * xs[i]);
    ss_res += d * d;
  }
  r.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return r;
}

// ---------------------------------------------------------------------------
// Boundary flux of eigenfunctions

struct FluxRecord {
  double epsilon;
  int k;  // 1-based
  double lambda;
  double flux;         // int_{boundary} |grad phi|^2
  double ratio_upper;  // flux / (lambda (1 + eps lambda))
  double ratio_lower;  // flux / lambda
  double eps_lambda() const { return epsilon * lambda; }
  double eps2_lambda() const { return epsilon * epsilon * lambda; }
};

/// Flux records for the first k_max eigenfunctions (L^2-normalised).
inline std::vector<FluxRecord> flux_table(const Spectrum& spec, int k_max) {
  if (spec.size() < k_max) throw UsageError("flux_table: spectrum shorter than k_max");
  std::vector<FluxRecord> rows;
  for (int k = 0; k < k_max; ++k) {
    const double lambda = spec.values[k];
    const double flux = boundary_flux(spec.eigenfunction(k));
    rows.push_back({spec.epsilon, k + 1, lambda, flux, flux / (lambda * (1.0 + spec.epsilon * lambda)), flux / lambda});
  }
  return rows;
}

/// Printed with every flux report.
inline constexpr const char* square_domain_caveat =
    "boundary-flux bounds are established for C^{1,1} (upper) and C^2 (lower) domains; the unit square has "
    "corners, so these rows are trend checks only";

// ---------------------------------------------------------------------------
// Jacobian of the Dirichlet correctors near the boundary

/// min of det(grad Phi_eps) over quadrature points of cells whose centre lies
/// within layer_width_factor * epsilon of the boundary. Gradients are the
/// recovered nodal gradients, interpolated bilinearly.
inline double jacobian_check(const DirichletCorrectors& correctors, double epsilon, double layer_width_factor = 1.0) {
  const Grid& g = correctors.phi[0].grid;
  const auto [d1x, d1y] = recover_gradient(correctors.phi[0]);
  const auto [d2x, d2y] = recover_gradient(correctors.phi[1]);
  const double width = layer_width_factor * epsilon;
  double worst = std::numeric_limits<double>::infinity();
  for_each_quad(g, [&](const QuadPoint& p) {
    const Vec2 centre = g.cell_origin(p.ci, p.cj) + Vec2::Constant(0.5 * g.h());
    const double dist = std::min({centre[0], centre[1], 1.0 - centre[0], 1.0 - centre[1]});
    if (dist > width) return;
    const double j11 = eval_at(d1x, p).first, j12 = eval_at(d1y, p).first;
    const double j21 = eval_at(d2x, p).first, j22 = eval_at(d2y, p).first;
    worst = std::min(worst, j11 * j22 - j12 * j21);
  });
  return worst;
}

}  // namespace homlab

#endif  // HOMLAB_ANALYSIS_HPP
