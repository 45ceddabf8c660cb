#ifndef WIDTHRED_ORACLE_HPP
#define WIDTHRED_ORACLE_HPP

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "widthred/core.hpp"
#include "widthred/linalg_oracle.hpp"
#include "widthred/losses.hpp"

namespace widthred {

enum class OracleMethod { ProjectedNewton, GridSearch, LpVertex };

inline const char* to_string(OracleMethod m) {
  switch (m) {
    case OracleMethod::ProjectedNewton: return "projected_newton";
    case OracleMethod::GridSearch: return "grid_search";
    case OracleMethod::LpVertex: return "lp_vertex";
  }
  return "?";
}

struct OracleResult {
  Vector x_opt;
  double f_opt = 0.0;
  OracleMethod method = OracleMethod::ProjectedNewton;
  double certified_tol = 0.0;  // final gradient norm (Newton) or LP tolerance
  long iterations = 0;
};

struct NewtonOptions {
  double tol = 1e-10;  // on the reduced gradient norm
  long max_iter = 500;
};

/// Damped Newton on x = x_p + N u with Armijo backtracking.
template <QscLossLike L>
OracleResult oracle_solve(const ProblemInstance& inst, const L& loss, const NewtonOptions& opt = {}) {
  require_consistent(inst);
  auto red = preprocess_constraints(inst.A, inst.b);
  if (!red.consistent) throw Error(ErrorKind::Infeasible, "A x = b has no solution");
  const Vector xp = min_norm_solution(red.A, red.b);
  const Matrix N = null_space_basis(red.A);
  const Matrix PN = inst.P * N;
  const Vector pxp = inst.P * xp;
  const Index k = N.cols();

  OracleResult out;
  out.method = OracleMethod::ProjectedNewton;
  auto value = [&](const Vector& u) { return total_value(loss, Vector(pxp + PN * u)); };

  Vector u = Vector::Zero(k);
  double fu = value(u);
  double gnorm = 0.0;
  for (long it = 0; it <= opt.max_iter; ++it) {
    out.iterations = it;
    if (k == 0) break;
    const Vector v = pxp + PN * u;
    Vector g1(v.size()), h(v.size());
    for (Index i = 0; i < v.size(); ++i) {
      g1(i) = loss.d1(v(i));
      h(i) = loss.d2(v(i));
    }
    const Vector grad = PN.transpose() * g1;
    gnorm = grad.norm();
    if (gnorm <= opt.tol) break;
    if (it == opt.max_iter) break;
    Eigen::MatrixXd H = PN.transpose() * h.asDiagonal() * PN;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Vector dir;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) dir = -ldlt.solve(grad);
    if (dir.size() == 0 || !dir.allFinite() || dir.dot(grad) >= 0) {
      Eigen::MatrixXd Hs = H;
      Hs.diagonal().array() += 1e-8 * (1.0 + H.diagonal().maxCoeff());
      dir = -Hs.ldlt().solve(grad);
      if (!dir.allFinite() || dir.dot(grad) >= 0) dir = -grad;
    }
    double step = 1.0;
    const double slope = grad.dot(dir);
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Vector cand = u + step * dir;
      const double fc = value(cand);
      if (fc <= fu + 1e-4 * step * slope) {
        u = cand;
        fu = fc;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;  // no representable decrease left
  }
  out.x_opt = xp + N * u;
  out.f_opt = fu;
  out.certified_tol = gnorm;
  if (k > 0 && !(gnorm <= std::max(opt.tol, 1e-7 * (1.0 + std::abs(fu)))))
    throw Error(ErrorKind::NonConverged, "projected Newton stopped with gradient norm " + std::to_string(gnorm));
  return out;
}

inline OracleResult oracle_solve(const ProblemInstance& inst, const QscLoss& loss, const NewtonOptions& opt = {}) {
  return std::visit([&](const auto& l) { return oracle_solve(inst, l, opt); }, loss);
}

// ---------------------------------------------------------------------------
// Dense two-phase simplex, Bland's rule

struct LpResult {
  Vector x;
  double value = 0.0;
  bool feasible = false;
  bool bounded = true;
};

/// min c^T v  s.t.  E v = f,  v >= 0.
inline LpResult simplex_standard(const Eigen::MatrixXd& E, const Vector& f, const Vector& c, double tol = 1e-10) {
  const Index rows = E.rows();
  const Index cols = E.cols();
  // tableau with artificials in columns [cols, cols + rows)
  const Index width = cols + rows + 1;
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(rows + 1, width);
  std::vector<Index> basis(rows);
  for (Index i = 0; i < rows; ++i) {
    const double sgn = f(i) < 0 ? -1.0 : 1.0;
    T.row(i).head(cols) = sgn * E.row(i);
    T(i, cols + i) = 1.0;
    T(i, width - 1) = sgn * f(i);
    basis[i] = cols + i;
  }

  auto pivot = [&](Index r, Index col) {
    T.row(r) /= T(r, col);
    for (Index i = 0; i <= rows; ++i)
      if (i != r && T(i, col) != 0.0) T.row(i) -= T(i, col) * T.row(r);
    basis[r] = col;
  };

  // returns false when unbounded. Dantzig pricing, Bland after a run of degenerate pivots.
  auto run = [&](Index allowed_cols) -> bool {
    long degenerate = 0;
    for (long guard = 0; guard < 50000; ++guard) {
      const bool bland = degenerate > 50;
      Index enter = -1;
      double most = -tol;
      for (Index j = 0; j < allowed_cols; ++j) {
        if (T(rows, j) < most) {
          enter = j;
          if (bland) break;
          most = T(rows, j);
        }
      }
      if (enter < 0) return true;
      // two-pass ratio test: among near-minimal ratios take the largest pivot
      double best = std::numeric_limits<double>::infinity();
      for (Index i = 0; i < rows; ++i)
        if (T(i, enter) > 1e-9) best = std::min(best, std::max(0.0, T(i, width - 1)) / T(i, enter));
      if (!std::isfinite(best)) return false;
      Index leave = -1;
      for (Index i = 0; i < rows; ++i) {
        if (T(i, enter) <= 1e-9) continue;
        const double ratio = std::max(0.0, T(i, width - 1)) / T(i, enter);
        if (ratio > best + 1e-12 * (1 + best)) continue;
        if (leave < 0 || (bland ? basis[i] < basis[leave] : T(i, enter) > T(leave, enter))) leave = i;
      }
      degenerate = best <= 1e-14 ? degenerate + 1 : 0;
      pivot(leave, enter);
    }
    throw Error(ErrorKind::NonConverged, "simplex iteration limit");
  };

  // phase 1: minimise the sum of artificials
  T.row(rows).setZero();
  for (Index i = 0; i < rows; ++i) T.row(rows) -= T.row(i);
  for (Index i = 0; i < rows; ++i) T(rows, cols + i) = 0.0;
  run(cols + rows);
  LpResult out;
  const double scale = 1.0 + f.cwiseAbs().maxCoeff();
  if (-T(rows, width - 1) > 1e-8 * scale) {
    out.feasible = false;
    return out;
  }
  out.feasible = true;
  // drive artificials out of the basis where possible
  for (Index i = 0; i < rows; ++i) {
    if (basis[i] < cols) continue;
    for (Index j = 0; j < cols; ++j)
      if (std::abs(T(i, j)) > 1e-9) {
        pivot(i, j);
        break;
      }
  }
  // phase 2
  T.row(rows).setZero();
  T.row(rows).head(cols) = c.transpose();
  for (Index i = 0; i < rows; ++i) {
    const Index bj = basis[i];
    if (bj < cols && c(bj) != 0.0) T.row(rows) -= c(bj) * T.row(i);
  }
  for (Index i = 0; i < rows; ++i) T.col(cols + i).setZero();
  for (Index i = 0; i < rows; ++i)
    if (basis[i] >= cols) T(i, basis[i]) = 1.0;
  if (!run(cols)) {
    out.bounded = false;
    return out;
  }
  out.x = Vector::Zero(cols);
  for (Index i = 0; i < rows; ++i)
    if (basis[i] < cols) out.x(basis[i]) = T(i, width - 1);
  out.value = c.dot(out.x);
  return out;
}

/// min_{A x = b} ||P x||_inf as a linear program.
inline OracleResult oracle_linf(const ProblemInstance& inst) {
  require_consistent(inst);
  auto red = preprocess_constraints(inst.A, inst.b);
  if (!red.consistent) throw Error(ErrorKind::Infeasible, "A x = b has no solution");
  const Index n = inst.n(), m = inst.m(), d = red.A.rows();
  // v = [x+ (n), x- (n), t, s+ (m), s- (m)]
  const Index cols = 2 * n + 1 + 2 * m;
  Eigen::MatrixXd E = Eigen::MatrixXd::Zero(2 * m + d, cols);
  Vector f = Vector::Zero(2 * m + d);
  const Eigen::MatrixXd P = inst.P;
  E.block(0, 0, m, n) = P;
  E.block(0, n, m, n) = -P;
  E.block(0, 2 * n, m, 1).setConstant(-1.0);
  E.block(0, 2 * n + 1, m, m).setIdentity();
  E.block(m, 0, m, n) = -P;
  E.block(m, n, m, n) = P;
  E.block(m, 2 * n, m, 1).setConstant(-1.0);
  E.block(m, 2 * n + 1 + m, m, m).setIdentity();
  if (d > 0) {
    E.block(2 * m, 0, d, n) = red.A;
    E.block(2 * m, n, d, n) = -Eigen::MatrixXd(red.A);
    f.tail(d) = red.b;
  }
  Vector c = Vector::Zero(cols);
  c(2 * n) = 1.0;
  auto lp = simplex_standard(E, f, c);
  if (!lp.feasible) throw Error(ErrorKind::NonConverged, "simplex found no feasible point");
  OracleResult out;
  out.method = OracleMethod::LpVertex;
  out.x_opt = lp.x.head(n) - lp.x.segment(n, n);
  out.f_opt = (inst.P * out.x_opt).lpNorm<Eigen::Infinity>();
  out.certified_tol = std::abs(out.f_opt - lp.value);
  return out;
}

}  // namespace widthred

#endif  // WIDTHRED_ORACLE_HPP
