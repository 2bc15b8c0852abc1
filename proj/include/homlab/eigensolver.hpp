#ifndef HOMLAB_EIGENSOLVER_HPP
#define HOMLAB_EIGENSOLVER_HPP

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "homlab/grid.hpp"

namespace homlab {

struct EigOptions {
  /// Target for ||K x - lambda M x|| / (|lambda| ||M x||) on every wanted pair.
  double tol = 1e-10;
  int max_sweeps = 600;
  /// At or below this many DOFs the pencil is reduced densely.
  int dense_limit = 1000;
};

/// k lowest eigenpairs of the pencil (K, M), M-orthonormal, ascending.
struct EigenPairs {
  std::vector<double> values;
  Eigen::MatrixXd vectors;  // one column per eigenpair
  std::vector<double> residuals;  // relative residuals as defined in EigOptions::tol
  double shift = 0.0;
  int sweeps = 0;
};

namespace detail {

using DenseSparse = Eigen::SparseMatrix<double, Eigen::ColMajor>;

inline void normalise_signs(Eigen::MatrixXd& v) {
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    const double s = v.col(c).sum();
    Eigen::Index arg = 0;
    v.col(c).cwiseAbs().maxCoeff(&arg);
    const double ref = std::abs(s) > 1e-8 * v.col(c).cwiseAbs().sum() ? s : v(arg, c);
    if (ref < 0) v.col(c) = -v.col(c);
  }
}

inline std::vector<double> relative_residuals(const SparseOperator& k, const SparseOperator& m,
                                              const std::vector<double>& values, const Eigen::MatrixXd& vecs) {
  std::vector<double> out(values.size());
  for (std::size_t c = 0; c < values.size(); ++c) {
    const Vector mx = m.matrix * vecs.col(c);
    const Vector r = k.matrix * vecs.col(c) - values[c] * mx;
    const double scale = std::max(std::abs(values[c]), 1e-300) * mx.norm();
    out[c] = r.norm() / scale;
  }
  return out;
}

/// M-orthonormalises the columns of y, dropping numerically dependent ones.
inline Eigen::MatrixXd m_orthonormalise(const Eigen::MatrixXd& y, const SparseOperator& m) {
  const Eigen::MatrixXd my = m.matrix * y;
  Eigen::MatrixXd gram = y.transpose() * my;
  gram = 0.5 * (gram + gram.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  const double top = es.eigenvalues().maxCoeff();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
    if (es.eigenvalues()[i] > 1e-13 * top) keep.push_back(i);
  Eigen::MatrixXd basis(y.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c)
    basis.col(static_cast<Eigen::Index>(c)) =
        y * es.eigenvectors().col(keep[c]) / std::sqrt(es.eigenvalues()[keep[c]]);
  return basis;
}

inline EigenPairs dense_eigs(const SparseOperator& k, const SparseOperator& m, int count) {
  const Eigen::MatrixXd kd = Eigen::MatrixXd(k.matrix);
  const Eigen::MatrixXd md = Eigen::MatrixXd(m.matrix);
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(kd, md);
  if (es.info() != Eigen::Success) throw SpectralError("eigs: dense reduction failed", 0.0);
  EigenPairs out;
  out.vectors = es.eigenvectors().leftCols(count);
  for (int c = 0; c < count; ++c) out.values.push_back(es.eigenvalues()[c]);
  return out;
}

}  // namespace detail

/// Lowest `count` eigenpairs of K x = lambda M x for symmetric K and
/// symmetric positive definite M.
///
/// Small pencils are reduced densely. Larger ones use block inverse (subspace)
/// iteration on (K - sigma M)^{-1} M with Rayleigh-Ritz after every sweep; the
/// shift sigma is lowered until the LDL^T factorisation has no negative
/// pivots, which places it below the whole spectrum (Sylvester inertia), so
/// indefinite K is handled. The start block is drawn from a seeded generator.
inline EigenPairs eigs(const SparseOperator& k, const SparseOperator& m, int count, unsigned seed,
                       const EigOptions& opt = {}) {
  const Eigen::Index n = k.matrix.rows();
  if (m.matrix.rows() != n) throw UsageError("eigs: K and M sizes differ");
  if (count < 1 || count > 64) throw UsageError("eigs: count must be in [1, 64]");
  if (count > n) throw UsageError("eigs: more eigenpairs requested than DOFs");

  EigenPairs out;
  if (n <= opt.dense_limit) {
    out = detail::dense_eigs(k, m, count);
  } else {
    const detail::DenseSparse kc(k.matrix), mc(m.matrix);
    Eigen::SimplicialLDLT<detail::DenseSparse> ldlt;
    double sigma = 0.0;
    double step = 1.0;
    for (int attempt = 0;; ++attempt) {
      ldlt.compute(detail::DenseSparse(kc - sigma * mc));
      if (ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0.0).all()) break;
      if (attempt > 60) throw SpectralError("eigs: could not find a shift below the spectrum", 0.0);
      sigma -= step;
      step *= 4.0;
    }
    out.shift = sigma;

    const Eigen::Index block = std::min<Eigen::Index>(n, std::max(2 * count, count + 8));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd x(n, block);
    for (Eigen::Index c = 0; c < block; ++c)
      for (Eigen::Index r = 0; r < n; ++r) x(r, c) = normal(rng);

    double worst = std::numeric_limits<double>::infinity();
    for (int sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
      const Eigen::MatrixXd y = detail::m_orthonormalise(ldlt.solve(Eigen::MatrixXd(m.matrix * x)), m);
      Eigen::MatrixXd kr = y.transpose() * (k.matrix * y);
      kr = 0.5 * (kr + kr.transpose());
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(kr);
      x = y * es.eigenvectors();
      if (x.cols() < count) throw SpectralError("eigs: search space collapsed", worst);

      out.values.assign(es.eigenvalues().data(), es.eigenvalues().data() + count);
      out.vectors = x.leftCols(count);
      const auto res = detail::relative_residuals(k, m, out.values, out.vectors);
      worst = *std::max_element(res.begin(), res.end());
      out.sweeps = sweep;
      if (worst <= opt.tol) break;
      if (sweep == opt.max_sweeps)
        throw SpectralError("eigs: no convergence after " + std::to_string(opt.max_sweeps) +
                                " sweeps, worst relative residual " + std::to_string(worst),
                            worst);
    }
  }
  detail::normalise_signs(out.vectors);
  out.residuals = detail::relative_residuals(k, m, out.values, out.vectors);
  return out;
}

}  // namespace homlab

#endif  // HOMLAB_EIGENSOLVER_HPP
