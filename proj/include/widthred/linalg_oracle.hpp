#ifndef WIDTHRED_LINALG_ORACLE_HPP
#define WIDTHRED_LINALG_ORACLE_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "widthred/core.hpp"

namespace widthred {

/// Data of   min  D^T P^T Q P D - 2 ell^T P D   s.t.  A D = b,   Q = diag(q).
/// With ell = 0 and q = r this is the energy Psi(r).
struct WlsProblem {
  Matrix A;
  Vector b;
  Matrix P;
  Vector q;
  Vector ell;
};

struct WlsSolution {
  Vector delta;
  double objective = 0.0;
  double constraint_residual = 0.0;
  bool regularized = false;
};

struct WlsOptions {
  double reg = 1e-12;       // retry shift, relative to trace(P^T Q P) / n
  double tol_feas = 1e-8;   // relative to 1 + ||b||
};

namespace detail {

inline void check_wls_dims(const Matrix& A, const Vector& b, const Matrix& P, const Vector& q,
                           const Vector& ell) {
  if (A.cols() != P.cols())
    throw Error(ErrorKind::DimensionMismatch, "cols(A) != cols(P)");
  if (A.rows() != b.size()) throw Error(ErrorKind::DimensionMismatch, "rows(A) != len(b)");
  if (q.size() != P.rows()) throw Error(ErrorKind::DimensionMismatch, "len(q) != rows(P)");
  if (ell.size() != P.rows()) throw Error(ErrorKind::DimensionMismatch, "len(ell) != rows(P)");
}

}  // namespace detail

/// Quadratic objective sum_i q_i (P D)_i^2 - 2 ell^T P D.
inline double energy(const Matrix& P, const Vector& q, const Vector& ell, const Vector& delta) {
  if (q.size() != P.rows() || ell.size() != P.rows() || delta.size() != P.cols())
    throw Error(ErrorKind::DimensionMismatch, "energy: inconsistent dimensions");
  const Vector pd = P * delta;
  return (q.array() * pd.array().square()).sum() - 2.0 * ell.dot(pd);
}

/// Solves the equality-constrained weighted least-squares problem through the
/// symmetric KKT system [2 P^T Q P, A^T; A, 0]. Q and ell are normalised by
/// max(q) before factorisation (the minimiser is invariant to that scaling) and
/// the constraint block is balanced against the Hessian block.
inline WlsSolution solve_wls(const Matrix& A, const Vector& b, const Matrix& P, const Vector& q,
                             const Vector& ell, const WlsOptions& opts = {}) {
  detail::check_wls_dims(A, b, P, q, ell);
  if (opts.reg < 0) throw Error(ErrorKind::InvalidParameter, "reg must be nonnegative");
  if ((q.array() < 0).any() || !q.allFinite())
    throw Error(ErrorKind::InvalidParameter, "quadratic weights must be finite and nonnegative");

  const Index n = P.cols();
  const Index d = A.rows();
  const double qmax = q.size() > 0 ? q.maxCoeff() : 0.0;
  const double qscale = qmax > 0 ? qmax : 1.0;

  const Vector qs = q / qscale;
  const Vector ls = ell / qscale;
  Matrix H = P.transpose() * qs.asDiagonal() * P;
  const Vector c = P.transpose() * ls;

  const double h_mean = H.trace() / static_cast<double>(std::max<Index>(n, 1));
  double a_rms = d > 0 ? A.norm() / std::sqrt(static_cast<double>(d)) : 0.0;
  const double s = (h_mean > 0 && a_rms > 0) ? 2.0 * h_mean / a_rms : 1.0;

  auto factor_and_solve = [&](const Matrix& Hk, Vector& sol) -> bool {
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + d, n + d);
    K.topLeftCorner(n, n) = 2.0 * Hk;
    if (d > 0) {
      K.topRightCorner(n, d) = s * A.transpose();
      K.bottomLeftCorner(d, n) = s * A;
    }
    Eigen::VectorXd rhs(n + d);
    rhs.head(n) = 2.0 * c;
    if (d > 0) rhs.tail(d) = s * b;

    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible()) return false;
    sol = lu.solve(rhs);
    // one step of iterative refinement
    const Eigen::VectorXd resid = rhs - K * sol;
    sol += lu.solve(resid);
    return sol.allFinite();
  };

  WlsSolution out;
  Vector sol;
  if (!factor_and_solve(H, sol)) {
    const double shift = opts.reg * h_mean;
    if (!(shift > 0)) throw Error(ErrorKind::RankDeficient, "KKT system is singular");
    Matrix Hr = H;
    Hr.diagonal().array() += shift;
    if (!factor_and_solve(Hr, sol))
      throw Error(ErrorKind::RankDeficient, "KKT system is singular after regularisation");
    out.regularized = true;
  }

  out.delta = sol.head(n);
  out.objective = energy(P, q, ell, out.delta);
  out.constraint_residual = d > 0 ? (A * out.delta - b).norm() : 0.0;
  if (out.constraint_residual > opts.tol_feas * (1.0 + b.norm()))
    throw Error(ErrorKind::RankDeficient,
                "constraint residual " + std::to_string(out.constraint_residual) +
                    " exceeds feasibility tolerance");
  return out;
}

inline WlsSolution solve_wls(const WlsProblem& prob, const WlsOptions& opts = {}) {
  return solve_wls(prob.A, prob.b, prob.P, prob.q, prob.ell, opts);
}

/// Psi(r) = min_{A D = b} sum_i r_i (P D)_i^2 together with its minimiser.
struct PsiResult {
  double value = 0.0;
  Vector delta;
};

inline PsiResult psi(const Matrix& A, const Vector& b, const Matrix& P, const Vector& r,
                     const WlsOptions& opts = {}) {
  if ((r.array() < 0).any()) throw Error(ErrorKind::InvalidParameter, "resistances must be >= 0");
  auto sol = solve_wls(A, b, P, r, Vector::Zero(P.rows()), opts);
  return {sol.objective, std::move(sol.delta)};
}

/// Rows of A kept after dropping linearly dependent ones.
struct ReducedConstraints {
  Matrix A;
  Vector b;
  std::vector<Index> kept_rows;
  Index dropped = 0;
  bool consistent = true;
};

/// Drops dependent rows of A using a column-pivoted QR of A^T and checks that
/// b lies in range(A).
inline ReducedConstraints preprocess_constraints(const Matrix& A, const Vector& b,
                                                 double rank_tol = 1e-10) {
  if (A.rows() != b.size()) throw Error(ErrorKind::DimensionMismatch, "rows(A) != len(b)");
  ReducedConstraints out;
  const Index d = A.rows();
  const Index n = A.cols();
  if (d == 0) {
    out.A = A;
    out.b = b;
    return out;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A.transpose());
  qr.setThreshold(rank_tol);
  const Index rank = qr.rank();
  const auto& perm = qr.colsPermutation().indices();
  for (Index k = 0; k < rank; ++k) out.kept_rows.push_back(perm(k));
  std::sort(out.kept_rows.begin(), out.kept_rows.end());
  out.dropped = d - rank;
  out.A.resize(rank, n);
  out.b.resize(rank);
  for (Index k = 0; k < rank; ++k) {
    out.A.row(k) = A.row(out.kept_rows[k]);
    out.b(k) = b(out.kept_rows[k]);
  }
  if (rank > 0) {
    const Eigen::MatrixXd Ar = out.A;
    const Vector x = Ar.completeOrthogonalDecomposition().solve(out.b);
    const double resid = (A * x - b).norm();
    out.consistent = resid <= 1e-8 * (1.0 + b.norm());
  } else {
    out.consistent = b.norm() <= 1e-12;
  }
  return out;
}

/// Orthonormal basis of null(A) from a full SVD.
inline Matrix null_space_basis(const Matrix& A, double rank_tol = 1e-10) {
  const Index n = A.cols();
  if (A.rows() == 0) return Matrix::Identity(n, n);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double cutoff = rank_tol * (sv.size() > 0 ? sv(0) : 0.0);
  Index rank = 0;
  for (Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) ++rank;
  return svd.matrixV().rightCols(n - rank);
}

/// Minimum-norm solution of A x = b.
inline Vector min_norm_solution(const Matrix& A, const Vector& b) {
  if (A.rows() == 0) return Vector::Zero(A.cols());
  const Eigen::MatrixXd Ad = A;
  return Ad.completeOrthogonalDecomposition().solve(b);
}

}  // namespace widthred

#endif  // WIDTHRED_LINALG_ORACLE_HPP
