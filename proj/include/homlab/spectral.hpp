#ifndef HOMLAB_SPECTRAL_HPP
#define HOMLAB_SPECTRAL_HPP

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "homlab/domain_solvers.hpp"
#include "homlab/eigensolver.hpp"

namespace homlab {

/// Which discrete operator a spectrum belongs to.
enum class OperatorTag { eps, eps_prime, hom, hom_prime };

inline std::string to_string(OperatorTag t) {
  switch (t) {
    case OperatorTag::eps: return "eps";
    case OperatorTag::eps_prime: return "eps_prime";
    case OperatorTag::hom: return "hom";
    case OperatorTag::hom_prime: return "hom_prime";
  }
  return "?";
}

inline OperatorTag parse_operator_tag(const std::string& s) {
  if (s == "eps") return OperatorTag::eps;
  if (s == "eps_prime") return OperatorTag::eps_prime;
  if (s == "hom") return OperatorTag::hom;
  if (s == "hom_prime") return OperatorTag::hom_prime;
  throw ConfigError("unknown operator tag '" + s + "'");
}

/// Ascending Dirichlet eigenpairs of one discrete operator. Eigenvectors are
/// mass-orthonormal, hence L^2-normalised as grid functions.
struct Spectrum {
  OperatorTag tag = OperatorTag::eps;
  double epsilon = 0.0;  // 0 for the homogenized operators
  Grid grid = Grid::dirichlet(2);
  std::vector<double> values;
  Eigen::MatrixXd vectors;
  std::vector<double> residuals;

  int size() const { return static_cast<int>(values.size()); }
  /// 0-based index k.
  GridFunction eigenfunction(int k) const { return GridFunction::from_dofs(grid, vectors.col(k)); }
};

inline Spectrum make_spectrum(OperatorTag tag, double epsilon, const Grid& grid, const SparseOperator& k, int count,
                              unsigned seed, const EigOptions& opt = {}) {
  EigenPairs p = eigs(k, assemble_mass(grid), count, seed, opt);
  return Spectrum{tag, epsilon, grid, std::move(p.values), std::move(p.vectors), std::move(p.residuals)};
}

/// Spectrum of L_eps (tag eps) or L'_eps (tag eps_prime).
inline Spectrum eps_spectrum(const EpsProblem& problem, bool with_potential, int count, unsigned seed,
                             const EigOptions& opt = {}) {
  return make_spectrum(with_potential ? OperatorTag::eps : OperatorTag::eps_prime, problem.epsilon(), problem.grid(),
                       problem.operator_matrix(with_potential), count, seed, opt);
}

/// Spectrum of L_0 (with M(W chi_w)) or L'_0.
inline Spectrum hom_spectrum(const Mat2& a_hat, double m_w_chi_w, bool with_potential, const Grid& grid, int count,
                             unsigned seed, const EigOptions& opt = {}) {
  return make_spectrum(with_potential ? OperatorTag::hom : OperatorTag::hom_prime, 0.0, grid,
                       homogenized_operator(a_hat, with_potential ? m_w_chi_w : 0.0, grid), count, seed, opt);
}

/// Eigenvalues with the O(h^2) discretisation error removed by Richardson
/// extrapolation from grids n and 2n: (4 lambda_2n - lambda_n) / 3.
inline std::vector<double> richardson(const std::vector<double>& coarse, const std::vector<double>& fine) {
  if (coarse.size() != fine.size()) throw UsageError("richardson: spectra differ in length");
  std::vector<double> out(coarse.size());
  for (std::size_t k = 0; k < coarse.size(); ++k) out[k] = (4.0 * fine[k] - coarse[k]) / 3.0;
  return out;
}

// ---------------------------------------------------------------------------
// Eigenvalue gap table

struct GapRow {
  double epsilon;
  int k;  // 1-based
  double lambda_eps;
  double lambda_0;
  double gap;
  double normalized_const;  // gap / (eps lambda_eps^{3/2})
};

/// Pairs the two spectra by sorted index.
inline std::vector<GapRow> gap_table(double epsilon, const std::vector<double>& lambda_eps,
                                     const std::vector<double>& lambda_0, int k_max) {
  if (static_cast<int>(lambda_eps.size()) < k_max || static_cast<int>(lambda_0.size()) < k_max)
    throw UsageError("gap_table: spectra shorter than k_max");
  std::vector<GapRow> rows;
  for (int k = 0; k < k_max; ++k) {
    const double le = lambda_eps[k], l0 = lambda_0[k];
    const double gap = std::abs(le - l0);
    rows.push_back({epsilon, k + 1, le, l0, gap, gap / (epsilon * std::pow(std::abs(le), 1.5))});
  }
  return rows;
}

inline std::vector<GapRow> gap_table(const Spectrum& spec_eps, const Spectrum& spec_hom, int k_max) {
  return gap_table(spec_eps.epsilon, spec_eps.values, spec_hom.values, k_max);
}

// ---------------------------------------------------------------------------
// First eigenvalue asymptotics

struct FirstEigRecord {
  double epsilon;
  double lambda_eps_1;
  double lambda_eps_prime_1;
  double lambda0_prime_1;
  double m_w_chi_w;
  double d7;  // |lambda_eps_1 - (lambda'_eps_1 + M)|
  double d8;  // |lambda_eps_1 - (lambda'_0_1 + M)|
  double target() const { return lambda0_prime_1 + m_w_chi_w; }
};

inline FirstEigRecord first_eig_record(double epsilon, double lambda_eps_1, double lambda_eps_prime_1,
                                       double lambda0_prime_1, double m_w_chi_w) {
  return {epsilon,
          lambda_eps_1,
          lambda_eps_prime_1,
          lambda0_prime_1,
          m_w_chi_w,
          std::abs(lambda_eps_1 - (lambda_eps_prime_1 + m_w_chi_w)),
          std::abs(lambda_eps_1 - (lambda0_prime_1 + m_w_chi_w))};
}

inline FirstEigRecord first_eig_record(const Spectrum& spec_eps, const Spectrum& spec_eps_prime,
                                       double lambda0_prime_1, double m_w_chi_w) {
  return first_eig_record(spec_eps.epsilon, spec_eps.values.at(0), spec_eps_prime.values.at(0), lambda0_prime_1,
                          m_w_chi_w);
}

// ---------------------------------------------------------------------------
// Cluster projection

struct ClusterProjection {
  double lambda = 0.0;
  std::vector<int> members;  // 0-based indices with sqrt(lambda_k) in [sqrt(lambda), sqrt(lambda) + 1)
  GridFunction projected;    // S(f)
  GridFunction residual;     // R(f) = sum (lambda_k - lambda) <phi_k, f> phi_k
  bool truncated = false;    // the computed spectrum may not cover the whole window
  double grad_constant = 0.0;      // ||grad S|| / (sqrt(lambda) ||f||)
  double residual_constant = 0.0;  // ||R|| / (sqrt(lambda) ||f||)
};

/// M-orthogonal projection of f onto the eigenfunctions in the window
/// [sqrt(lambda), sqrt(lambda) + 1).
inline ClusterProjection cluster_projection(const Spectrum& spec, double lambda, const GridFunction& f) {
  if (!(lambda >= 1.0)) throw UsageError("cluster_projection: lambda must be >= 1");
  if (!(f.grid == spec.grid)) throw UsageError("cluster_projection: f lives on a different grid");
  const double lo = std::sqrt(lambda), hi = std::sqrt(lambda) + 1.0;
  const SparseOperator mass = assemble_mass(spec.grid);
  const Vector mf = mass.matrix * f.dofs();

  ClusterProjection out{lambda, {}, GridFunction(spec.grid), GridFunction(spec.grid), false, 0.0, 0.0};
  Vector s = Vector::Zero(static_cast<Eigen::Index>(spec.grid.dof_count()));
  Vector r = s;
  for (int k = 0; k < spec.size(); ++k) {
    const double root = std::sqrt(std::max(spec.values[k], 0.0));
    if (root < lo || root >= hi) continue;
    out.members.push_back(k);
    const double c = spec.vectors.col(k).dot(mf);
    s += c * spec.vectors.col(k);
    r += (spec.values[k] - lambda) * c * spec.vectors.col(k);
  }
  out.truncated = spec.size() == 0 || std::sqrt(std::max(spec.values.back(), 0.0)) < hi;
  out.projected = GridFunction::from_dofs(spec.grid, s);
  out.residual = GridFunction::from_dofs(spec.grid, r);
  const double fn = l2_norm(f);
  if (fn > 0.0) {
    out.grad_constant = h1_seminorm(out.projected) / (std::sqrt(lambda) * fn);
    out.residual_constant = l2_norm(out.residual) / (std::sqrt(lambda) * fn);
  }
  return out;
}

}  // namespace homlab

#endif  // HOMLAB_SPECTRAL_HPP
