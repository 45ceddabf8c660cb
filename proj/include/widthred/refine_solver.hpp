#ifndef WIDTHRED_REFINE_SOLVER_HPP
#define WIDTHRED_REFINE_SOLVER_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "widthred/core.hpp"
#include "widthred/crude_solver.hpp"
#include "widthred/linalg_oracle.hpp"
#include "widthred/losses.hpp"

namespace widthred {

inline constexpr double kE = std::numbers::e;

/// Local model at x_anchor:
///   max  g^T P D - e^{-1} sum_i h_i (P D)_i^2   s.t.  A D = 0,  ||P D - z||_inf <= 1/(2M)
/// with g = f'(P x), h = f''(P x).
struct ResidualInstance {
  Vector x_anchor;
  Vector g;
  Vector h;
  Vector z;
  double M = 1.0;
  double R = 1.0;
  double zeta = 0.0;
};

/// Shift keeping x - e^{-2} D inside the radius-R box whenever ||P D - z|| <= 1/(2M).
/// When both sides are binding (M R < 1/2) the lower side wins.
inline Vector compute_z(const Vector& px, double R, double M) {
  if (!(R > 0) || !(M > 0)) throw Error(ErrorKind::InvalidParameter, "compute_z needs R, M > 0");
  const double over = px.size() ? px.lpNorm<Eigen::Infinity>() : 0.0;
  if (over > R * (1 + 1e-8))
    throw Error(ErrorKind::OutOfDomain,
                "||P x||_inf = " + std::to_string(over) + " exceeds R = " + std::to_string(R));
  const double half = 0.5 / M;
  Vector z = Vector::Zero(px.size());
  for (Index i = 0; i < px.size(); ++i) {
    if (px(i) - half < -R)
      z(i) = -half + R + px(i);
    else if (px(i) + half > R)
      z(i) = -R + px(i) + half;
  }
  return z;
}

template <QscLossLike L>
ResidualInstance make_residual(const ProblemInstance& inst, const L& loss, const Vector& x, double R,
                               double zeta = 0.0) {
  const Vector px = inst.P * x;
  ResidualInstance r;
  r.x_anchor = x;
  r.M = loss.qsc_constant();
  r.R = R;
  r.zeta = zeta;
  r.z = compute_z(px, R, r.M);
  r.g.resize(px.size());
  r.h.resize(px.size());
  for (Index i = 0; i < px.size(); ++i) {
    r.g(i) = loss.d1(px(i));
    r.h(i) = loss.d2(px(i));
  }
  return r;
}

/// res evaluated on the image P D.
inline double residual_value_image(const ResidualInstance& inst, const Vector& pd) {
  if (pd.size() != inst.g.size() || inst.h.size() != inst.g.size())
    throw Error(ErrorKind::DimensionMismatch, "residual_value: inconsistent dimensions");
  return inst.g.dot(pd) - (inst.h.array() * pd.array().square()).sum() / kE;
}

inline double residual_value(const ResidualInstance& inst, const Matrix& P, const Vector& delta) {
  if (P.cols() != delta.size() || P.rows() != inst.g.size())
    throw Error(ErrorKind::DimensionMismatch, "residual_value: inconsistent dimensions");
  return residual_value_image(inst, P * delta);
}

/// ||P D - z||_inf <= 1/(2M), up to a relative slack.
inline bool residual_box_feasible(const ResidualInstance& inst, const Vector& pd, double slack = 1e-8) {
  return (pd - inst.z).lpNorm<Eigen::Infinity>() <= (0.5 / inst.M) * (1 + slack);
}

// ---------------------------------------------------------------------------
// Inner width-reduced MWU

struct ResidualMwuConfig {
  double iter_constant = 10.0;      // T_inner = ceil(alpha^{-1} C log m)
  double width_cap_factor = 10.0;   // width steps <= C m / tau^2
  double weight_guard = 10.0;       // loop while ||w||_1 <= guard * zeta
  double output_scale = 100.0;      // return y / (scale t)
  double reg = 1e-12;
  double feas_tol = 1e-8;
};

enum class InnerExit { WeightGuard, IterationCap };

inline const char* to_string(InnerExit e) {
  return e == InnerExit::WeightGuard ? "weight_guard" : "iteration_cap";
}

struct ResidualMwuResult {
  Vector y;
  long iterations = 0;
  long flow_steps = 0;
  long width_steps = 0;
  InnerExit exit = InnerExit::WeightGuard;
  double w_l1_max_in_loop = 0.0;  // largest ||w||_1 seen at the top of the loop
  double w_min = std::numeric_limits<double>::infinity();
};

/// Algorithm-3 style MWU on the residual problem at target value zeta. Every
/// inner solve pins g^T P D = zeta / 2.
inline ResidualMwuResult mwu_residual(const Matrix& A, const Matrix& P, const ResidualInstance& inst,
                                      const ResidualMwuConfig& cfg = {}) {
  const Index m = P.rows();
  const Index n = P.cols();
  if (A.cols() != n) throw Error(ErrorKind::DimensionMismatch, "cols(A) != cols(P)");
  if (inst.g.size() != m || inst.h.size() != m || inst.z.size() != m)
    throw Error(ErrorKind::DimensionMismatch, "residual instance does not match rows(P)");
  if (!(inst.zeta > 0)) throw Error(ErrorKind::InvalidParameter, "zeta must be positive");

  // augmented row P^T g must leave range(A^T), or g^T P D = zeta/2 contradicts A D = 0
  const Vector pg = P.transpose() * inst.g;
  const double pg_norm = pg.norm();
  Vector pg_null = pg;
  if (A.rows() > 0) {
    const Eigen::MatrixXd At = A.transpose();
    pg_null -= At * At.completeOrthogonalDecomposition().solve(pg);
  }
  if (!(pg_norm > 0) || pg_null.norm() <= 1e-12 * pg_norm)
    throw Error(ErrorKind::InfeasibleAugmented, "P^T grad f lies in the row space of A");

  Matrix Ap(A.rows() + 1, n);
  Ap.topRows(A.rows()) = A;
  Ap.row(A.rows()) = pg.transpose() / pg_norm;
  Vector bp = Vector::Zero(A.rows() + 1);
  bp(A.rows()) = 0.5 * inst.zeta / pg_norm;

  const double md = static_cast<double>(m);
  const double tau = std::cbrt(md);
  const double alpha = 1.0 / tau;
  const long t_cap = std::max(1L, static_cast<long>(std::ceil(cfg.iter_constant * std::log(md) / alpha - 1e-9)));
  const long width_cap = static_cast<long>(std::floor(cfg.width_cap_factor * md / (tau * tau) + 1e-9));
  const double M = inst.M;
  const double four_m2 = 4.0 * M * M;
  const WlsOptions wls{cfg.reg, cfg.feas_tol};

  ResidualMwuResult out;
  Vector y = Vector::Zero(n);
  Vector w = Vector::Constant(m, inst.zeta / md);
  long t = 0;
  out.exit = InnerExit::IterationCap;
  while (true) {
    const double l1 = w.sum();
    if (!(l1 <= cfg.weight_guard * inst.zeta)) {
      out.exit = InnerExit::WeightGuard;
      break;
    }
    if (t >= t_cap) break;
    out.w_l1_max_in_loop = std::max(out.w_l1_max_in_loop, l1);
    out.w_min = std::min(out.w_min, w.minCoeff());

    const Vector c = (w.array() + l1 / md).matrix();
    const Vector q = inst.h + four_m2 * c;
    const Vector ell = four_m2 * c.cwiseProduct(inst.z);
    WlsSolution sol;
    try {
      sol = solve_wls(Ap, bp, P, q, ell, wls);
    } catch (const Error& e) {
      throw Error(ErrorKind::OracleFailure, std::string("residual MWU oracle: ") + e.what());
    }
    const Vector u = P * sol.delta - inst.z;
    const double width = 2.0 * M * u.lpNorm<Eigen::Infinity>();
    if (width <= tau) {
      y += sol.delta;
      w = w.cwiseProduct((1.0 + 0.5 * alpha * M * u.cwiseAbs().array()).matrix());
      ++out.flow_steps;
    } else {
      for (Index i = 0; i < m; ++i)
        if (2.0 * M * std::abs(u(i)) >= tau) w(i) *= 2.0;
      ++out.width_steps;
      if (out.width_steps > width_cap)
        throw Error(ErrorKind::TheoryViolation,
                    "residual MWU width steps exceeded cap " + std::to_string(width_cap));
    }
    ++t;
  }
  out.iterations = t;
  out.y = t > 0 ? Vector(y / (cfg.output_scale * static_cast<double>(t))) : Vector(Vector::Zero(n));
  return out;
}

// ---------------------------------------------------------------------------
// Outer refinement

struct Level {
  double nu = 0.0;
  double zeta = 0.0;
};

/// nu over (eps, gap] halving; for each nu, zeta over (nu / (8 M R), e^2 nu] halving.
inline std::vector<Level> binary_search_levels(double gap_upper, double M, double R, double eps) {
  if (!(eps > 0) || !(M > 0) || !(R > 0))
    throw Error(ErrorKind::InvalidParameter, "binary_search_levels needs eps, M, R > 0");
  std::vector<Level> out;
  if (!(gap_upper > eps)) return out;
  // exact powers of two so equal zetas coincide bit-for-bit across nu levels
  for (int j = 0;; ++j) {
    const double nu = std::ldexp(gap_upper, -j);
    if (!(nu > eps)) break;
    const double lo = nu / (8.0 * M * R);
    for (int k = 0;; ++k) {
      const double zeta = std::ldexp(kE * kE * nu, -k);
      if (!(zeta > lo)) break;
      out.push_back({nu, zeta});
    }
  }
  return out;
}

inline long zeta_levels_per_nu(double M, double R) {
  return static_cast<long>(std::ceil(std::log2(8.0 * kE * kE * M * R) - 1e-12));
}

struct RefineConfig {
  double eps = 1e-6;
  long max_outer_steps = 50000;
  double lower_bound = 0.0;  // f >= lower_bound; catalog losses are nonnegative
  bool dedupe_zeta = true;
  bool record_trace = true;
  ResidualMwuConfig inner;
};

enum class RefineStatus { Converged, Stalled, IterationCap };

inline const char* to_string(RefineStatus s) {
  switch (s) {
    case RefineStatus::Converged: return "converged";
    case RefineStatus::Stalled: return "stalled";
    case RefineStatus::IterationCap: return "iteration_cap";
  }
  return "?";
}

struct Candidate {
  double nu = 0.0;
  double zeta = 0.0;
  bool ok = false;
  bool box_feasible = false;
  double res_value = std::numeric_limits<double>::quiet_NaN();
  double f_new = std::numeric_limits<double>::quiet_NaN();
  long inner_iterations = 0;
  long inner_width_steps = 0;
  std::string failure;
};

/// Measurements for one accepted outer step.
struct RefineStep {
  double f_before = 0.0;
  double f_after = 0.0;
  double nu = 0.0;
  double zeta = 0.0;
  double res_value = 0.0;       // res(y)
  double quad = 0.0;            // sum h (P y)^2
  double box_excess = 0.0;      // ||P y - z||_inf - 1/(2M)
  double max_abs_px = 0.0;      // ||P x_new||_inf
  double newton_quad = 0.0;     // s^T diag(h) s for the move s = -e^{-2} P y
  double bregman = 0.0;         // f(x+s) - f(x) - g^T s
  double step_linf = 0.0;       // ||s||_inf
  Vector y;
};

struct RefineResult {
  Vector x;
  double f = 0.0;
  RefineStatus status = RefineStatus::Converged;
  long outer_steps = 0;
  double stop_threshold = 0.0;
  double M = 0.0;
  double R = 0.0;
  std::vector<RefineStep> steps;
  std::vector<Candidate> last_sweep;  // full table of the final sweep (the stall table when stalled)
  std::vector<TraceRow> trace;
};

/// Iterative refinement: at each outer step sweep every (nu, zeta) level,
/// solve the residual problem approximately and move x <- x - e^{-2} y for the
/// best candidate.
template <QscLossLike L>
RefineResult qsc_min(const ProblemInstance& inst, const L& loss, const Vector& x0, double R,
                     const RefineConfig& cfg = {}) {
  require_consistent(inst);
  if (x0.size() != inst.n()) throw Error(ErrorKind::DimensionMismatch, "x0 has the wrong length");
  if (!(cfg.eps > 0)) throw Error(ErrorKind::InvalidParameter, "eps must be positive");
  const auto red = detail::feasible_constraints(inst);
  if ((inst.A * x0 - inst.b).norm() > 1e-7 * (1 + inst.b.norm()))
    throw Error(ErrorKind::Infeasible, "x0 does not satisfy A x = b");

  const double M = loss.qsc_constant();
  const double e2 = 1.0 / (kE * kE);
  RefineResult out;
  out.M = M;
  out.R = R;
  out.stop_threshold = cfg.eps * e2 / (4.0 * 400.0 * M * R);
  Vector x = x0;
  double fx = total_value(loss, Vector(inst.P * x));
  long trace_iter = 0;

  while (true) {
    if (out.outer_steps >= cfg.max_outer_steps) {
      out.status = RefineStatus::IterationCap;
      break;
    }
    ResidualInstance base = make_residual(inst, loss, x, R);
    const double gap_ub = fx - cfg.lower_bound;
    auto levels = binary_search_levels(gap_ub, M, R, cfg.eps);
    std::vector<Candidate> sweep;
    std::vector<Vector> ys;
    std::vector<double> seen;
    for (const Level& lv : levels) {
      if (cfg.dedupe_zeta) {
        if (std::find(seen.begin(), seen.end(), lv.zeta) != seen.end()) continue;
        seen.push_back(lv.zeta);
      }
      Candidate c;
      c.nu = lv.nu;
      c.zeta = lv.zeta;
      ResidualInstance ri = base;
      ri.zeta = lv.zeta;
      Vector y;
      try {
        auto r = mwu_residual(red.A, inst.P, ri, cfg.inner);
        y = std::move(r.y);
        c.inner_iterations = r.iterations;
        c.inner_width_steps = r.width_steps;
        const Vector py = inst.P * y;
        c.ok = true;
        c.res_value = residual_value_image(ri, py);
        c.box_feasible = residual_box_feasible(ri, py);
        c.f_new = total_value(loss, Vector(inst.P * (x - e2 * y)));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::InfeasibleAugmented && e.kind() != ErrorKind::OracleFailure &&
            e.kind() != ErrorKind::TheoryViolation)
          throw;
        c.failure = e.what();
      }
      sweep.push_back(c);
      ys.push_back(c.ok ? y : Vector());
    }

    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < sweep.size(); ++i) {
      if (!sweep[i].ok || !sweep[i].box_feasible) continue;
      if (!best || sweep[i].f_new < sweep[*best].f_new) best = i;
    }
    const bool improves = best && sweep[*best].f_new < fx;

    if (cfg.record_trace) {
      for (std::size_t i = 0; i < sweep.size(); ++i) {
        TraceRow row;
        row.iteration = trace_iter++;
        row.kind = StepKind::Refine;
        row.refine_step = out.outer_steps;
        row.nu = sweep[i].nu;
        row.zeta = sweep[i].zeta;
        row.res_value = sweep[i].res_value;
        row.objective = sweep[i].f_new;
        row.accepted = improves && i == *best;
        out.trace.push_back(row);
      }
    }
    out.last_sweep = sweep;

    if (!improves) {
      out.status = RefineStatus::Stalled;
      break;
    }
    const Candidate& c = sweep[*best];
    const Vector& y = ys[*best];
    const Vector py = inst.P * y;
    RefineStep st;
    st.f_before = fx;
    st.f_after = c.f_new;
    st.nu = c.nu;
    st.zeta = c.zeta;
    st.res_value = c.res_value;
    st.quad = (base.h.array() * py.array().square()).sum();
    st.box_excess = (py - base.z).lpNorm<Eigen::Infinity>() - 0.5 / M;
    const Vector s = -e2 * py;
    st.newton_quad = (base.h.array() * s.array().square()).sum();
    st.bregman = c.f_new - fx - base.g.dot(s);
    st.step_linf = s.lpNorm<Eigen::Infinity>();
    x -= e2 * y;
    st.max_abs_px = (inst.P * x).lpNorm<Eigen::Infinity>();
    st.y = y;
    out.steps.push_back(std::move(st));
    const double gain = fx - c.f_new;
    fx = c.f_new;
    ++out.outer_steps;
    if (gain < out.stop_threshold) {
      out.status = RefineStatus::Converged;
      break;
    }
  }
  out.x = x;
  out.f = fx;
  return out;
}

inline RefineResult qsc_min(const ProblemInstance& inst, const QscLoss& loss, const Vector& x0, double R,
                            const RefineConfig& cfg = {}) {
  return std::visit([&](const auto& l) { return qsc_min(inst, l, x0, R, cfg); }, loss);
}

struct SolveReport {
  Vector x;
  double f = 0.0;
  double R_input = 0.0;
  double R_boost = 0.0;
  CrudeSolution crude;
  RefineResult refine;
};

/// Crude solve at eps = 1, then refinement from the crude point. The boosting
/// radius must cover both the crude point and the optimum; R M ||w||_inf bounds
/// the crude point and R the optimum.
template <QscLossLike L>
SolveReport boost_pipeline(const ProblemInstance& inst, const L& loss, double R, MwuConfig crude_cfg = {},
                           const RefineConfig& refine_cfg = {}) {
  crude_cfg.epsilon = 1.0;
  SolveReport rep;
  rep.R_input = R;
  rep.crude = qsc_mwu(inst, loss, R, crude_cfg);
  const double px_bar = (inst.P * rep.crude.x_tilde).lpNorm<Eigen::Infinity>();
  rep.R_boost = std::max({R, rep.crude.linf_bound, px_bar});
  rep.refine = qsc_min(inst, loss, rep.crude.x_tilde, rep.R_boost, refine_cfg);
  rep.x = rep.refine.x;
  rep.f = rep.refine.f;
  return rep;
}

inline SolveReport boost_pipeline(const ProblemInstance& inst, const QscLoss& loss, double R,
                                  MwuConfig crude_cfg = {}, const RefineConfig& refine_cfg = {}) {
  return std::visit([&](const auto& l) { return boost_pipeline(inst, l, R, crude_cfg, refine_cfg); }, loss);
}

}  // namespace widthred

#endif  // WIDTHRED_REFINE_SOLVER_HPP
