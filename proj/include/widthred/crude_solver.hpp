#ifndef WIDTHRED_CRUDE_SOLVER_HPP
#define WIDTHRED_CRUDE_SOLVER_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "widthred/core.hpp"
#include "widthred/linalg_oracle.hpp"
#include "widthred/losses.hpp"

namespace widthred {

struct MwuConfig {
  double epsilon = 1.0;
  double c_tau = 1.0;    // tau   = c_tau   m^{1/3} eps^{-2/3}
  double c_alpha = 1.0;  // alpha = c_alpha m^{-1/3} M^{-1} eps^{2/3}
  std::optional<long> max_flow_steps;
  std::optional<long> max_width_steps;
  double width_safety = 1.0;  // width-step cap is floor(tau * width_safety)
  double feas_tol = 1e-8;
  double reg = 1e-12;
  bool record_trace = true;
};

struct MwuSchedule {
  double tau = 0.0;
  double alpha = 0.0;
  long flow_steps = 0;  // T = ceil(1 / (alpha M eps))
  long width_cap = 0;
};

inline MwuSchedule mwu_schedule(Index m, double M, const MwuConfig& cfg) {
  if (!(cfg.epsilon > 0)) throw Error(ErrorKind::InvalidParameter, "epsilon must be positive");
  if (!(cfg.c_tau > 0) || !(cfg.c_alpha > 0))
    throw Error(ErrorKind::InvalidParameter, "c_tau and c_alpha must be positive");
  if (!(M > 0)) throw Error(ErrorKind::InvalidParameter, "q.s.c. constant must be positive");
  const double cube = std::cbrt(static_cast<double>(m));
  const double eps = cfg.epsilon;
  MwuSchedule s;
  s.tau = cfg.c_tau * cube * std::pow(eps, -2.0 / 3.0);
  s.alpha = cfg.c_alpha / cube / M * std::pow(eps, 2.0 / 3.0);
  if (s.alpha * s.tau > (1.0 + 1e-12) / M)
    throw Error(ErrorKind::InvalidParameter, "flow-step stability needs alpha * tau <= 1/M (c_tau * c_alpha <= 1)");
  const double T = 1.0 / (s.alpha * M * eps);
  s.flow_steps = static_cast<long>(std::ceil(T - 1e-9));
  if (cfg.max_flow_steps) s.flow_steps = std::min(s.flow_steps, *cfg.max_flow_steps);
  s.flow_steps = std::max(s.flow_steps, 1L);
  s.width_cap = static_cast<long>(std::floor(s.tau * cfg.width_safety + 1e-9));
  if (cfg.max_width_steps) s.width_cap = *cfg.max_width_steps;
  return s;
}

enum class StepKind { Flow, Width, Refine };

inline const char* to_string(StepKind k) {
  switch (k) {
    case StepKind::Flow: return "flow";
    case StepKind::Width: return "width";
    case StepKind::Refine: return "refine";
  }
  return "?";
}

/// One solver iteration. Crude rows leave the refine columns unset.
struct TraceRow {
  long iteration = 0;
  StepKind kind = StepKind::Flow;
  double phi = std::numeric_limits<double>::quiet_NaN();
  double psi = std::numeric_limits<double>::quiet_NaN();
  double max_abs_PDelta = std::numeric_limits<double>::quiet_NaN();
  double objective = std::numeric_limits<double>::quiet_NaN();
  double bound_linear = std::numeric_limits<double>::quiet_NaN();  // sum_i f''(w_i) |P D|_i
  long refine_step = -1;
  double nu = std::numeric_limits<double>::quiet_NaN();
  double zeta = std::numeric_limits<double>::quiet_NaN();
  double res_value = std::numeric_limits<double>::quiet_NaN();
  bool accepted = false;
};

struct CrudeSolution {
  Vector x_tilde;
  Vector w_final;
  long flow_steps = 0;
  long width_steps = 0;
  double linf_bound = 0.0;  // R M ||w_final||_inf
  double objective = 0.0;   // f(P x_tilde)
  double radius = 0.0;
  double epsilon = 0.0;
  double M = 0.0;
  double phi_initial = 0.0;
  double phi_final = 0.0;
  MwuSchedule schedule;
  std::vector<TraceRow> trace;
};

/// Phi(w) = sum_i f''(w_i).
template <QscLossLike L>
double phi(const Vector& w, const L& loss) {
  double s = 0.0;
  for (Index i = 0; i < w.size(); ++i) s += loss.d2(w(i));
  return s;
}

/// r_i = (f''(w_i) + eps Phi(w) / m) / R^2.
template <QscLossLike L>
Vector compute_resistances(const Vector& w, double eps, double R, const L& loss) {
  if (!(R > 0)) throw Error(ErrorKind::InvalidParameter, "radius must be positive");
  if (!(eps >= 0)) throw Error(ErrorKind::InvalidParameter, "epsilon must be nonnegative");
  const double floor = eps * phi(w, loss) / static_cast<double>(w.size());
  Vector r(w.size());
  for (Index i = 0; i < w.size(); ++i) r(i) = (loss.d2(w(i)) + floor) / (R * R);
  return r;
}

namespace detail {

inline ReducedConstraints feasible_constraints(const ProblemInstance& inst) {
  require_consistent(inst);
  auto red = preprocess_constraints(inst.A, inst.b);
  if (!red.consistent) throw Error(ErrorKind::Infeasible, "A x = b has no solution");
  return red;
}

}  // namespace detail

/// Width-reduced multiplicative-weights crude solver. Every iteration is one
/// weighted least-squares solve over A D = b; coordinates whose step exceeds
/// R tau get their resistance rescaled through the loss's weight rule instead.
template <QscLossLike L>
CrudeSolution qsc_mwu(const ProblemInstance& inst, const L& loss, double R, const MwuConfig& cfg = {}) {
  if (!(R > 0) || !std::isfinite(R)) throw Error(ErrorKind::InvalidParameter, "radius must be positive");
  const auto red = detail::feasible_constraints(inst);
  const Matrix& P = inst.P;
  const Index m = P.rows();
  const double M = loss.qsc_constant();
  const double eps = cfg.epsilon;
  const MwuSchedule sched = mwu_schedule(m, M, cfg);
  const WlsOptions wls{cfg.reg, cfg.feas_tol};

  CrudeSolution out;
  out.radius = R;
  out.epsilon = eps;
  out.M = M;
  out.schedule = sched;

  Vector x = Vector::Zero(inst.n());
  Vector w = Vector::Constant(m, loss.initial_weight());
  out.phi_initial = phi(w, loss);
  const double threshold = R * sched.tau;
  const double step_scale = eps * sched.alpha / R;

  long t = 0, k = 0, iter = 0;
  while (t < sched.flow_steps) {
    const double phi_w = phi(w, loss);
    const Vector r = compute_resistances(w, eps, R, loss);
    PsiResult oracle;
    try {
      oracle = psi(red.A, red.b, P, r, wls);
    } catch (const Error& e) {
      throw Error(ErrorKind::OracleFailure, std::string("crude solver oracle: ") + e.what());
    }
    const Vector pd = P * oracle.delta;
    const double width = pd.lpNorm<Eigen::Infinity>();
    const bool flow = width <= threshold;

    if (cfg.record_trace) {
      TraceRow row;
      row.iteration = iter;
      row.kind = flow ? StepKind::Flow : StepKind::Width;
      row.phi = phi_w;
      row.psi = oracle.value;
      row.max_abs_PDelta = width;
      double lin = 0.0;
      for (Index i = 0; i < m; ++i) lin += loss.d2(w(i)) * std::abs(pd(i));
      row.bound_linear = lin;
      const Vector px = P * (flow ? Vector((x + oracle.delta) / double(t + 1))
                                  : Vector(x / double(std::max<long>(t, 1))));
      row.objective = total_value(loss, px);
      out.trace.push_back(row);
    }

    if (flow) {
      x += oracle.delta;
      w += step_scale * pd.cwiseAbs();
      ++t;
    } else {
      for (Index i = 0; i < m; ++i)
        if (std::abs(pd(i)) >= threshold) w(i) = loss.width_update(w(i), eps);
      ++k;
      if (k > sched.width_cap)
        throw Error(ErrorKind::TheoryViolation,
                    "width steps exceeded cap " + std::to_string(sched.width_cap) +
                        " (tau = " + std::to_string(sched.tau) + ")");
    }
    ++iter;
  }

  out.x_tilde = x / static_cast<double>(sched.flow_steps);
  out.w_final = w;
  out.flow_steps = t;
  out.width_steps = k;
  out.linf_bound = R * M * w.lpNorm<Eigen::Infinity>();
  out.objective = total_value(loss, Vector(P * out.x_tilde));
  out.phi_final = phi(w, loss);
  return out;
}

inline CrudeSolution qsc_mwu(const ProblemInstance& inst, const QscLoss& loss, double R,
                             const MwuConfig& cfg = {}) {
  return std::visit([&](const auto& l) { return qsc_mwu(inst, l, R, cfg); }, loss);
}

// ---------------------------------------------------------------------------
// Radius search for softmax-type objectives

enum class SearchObjective { Smax, Linf };

struct RadiusSearchOptions {
  double nu = 0.1;
  bool nu_relative = false;  // smoothing nu * R for the run at radius R
  double r_lo = 0.0;
  double r_hi = 0.0;
  double refine_ratio = 0.0;          // bisect until hi/lo <= 1 + refine_ratio; 0 means nu
  double search_width_safety = 4.0;   // width-step cap for search runs, in units of tau
  SearchObjective objective = SearchObjective::Smax;
};

struct RadiusRun {
  double radius = 0.0;
  bool completed = false;
  bool certified = false;  // smax within the bound that holds whenever R >= R0
  double objective = std::numeric_limits<double>::infinity();
  long flow_steps = 0;
  long width_steps = 0;
  std::string failure;
};

struct RadiusSearchResult {
  CrudeSolution best;
  double best_radius = 0.0;
  std::vector<RadiusRun> runs;
};

/// r_hi, r_hi/2, ... down to just above r_lo; a single point when the bracket
/// is narrower than a factor of two.
inline std::vector<double> radius_grid(double r_lo, double r_hi) {
  if (!(r_lo > 0) || !(r_hi >= r_lo))
    throw Error(ErrorKind::InvalidParameter, "radius bracket needs 0 < r_lo <= r_hi");
  const long count = std::max(1L, static_cast<long>(std::ceil(std::log2(r_hi / r_lo) - 1e-9)));
  std::vector<double> g(count);
  for (long k = 0; k < count; ++k) g[k] = std::ldexp(r_hi, -static_cast<int>(k));
  return g;
}

/// Runs the exp-loss crude solver over a halving grid of radii followed by a
/// bisection on the smallest radius whose run stays under the width cap, keeping
/// the best objective.
inline RadiusSearchResult binary_search_R(const ProblemInstance& inst, const RadiusSearchOptions& opt,
                                          const MwuConfig& cfg = {}) {
  if (!(opt.nu > 0)) throw Error(ErrorKind::InvalidParameter, "nu must be positive");
  const auto grid = radius_grid(opt.r_lo, opt.r_hi);
  const double log_rows = std::log(static_cast<double>(inst.m()));
  RadiusSearchResult res;
  bool have_best = false;
  double best_obj = std::numeric_limits<double>::infinity();

  auto run_at = [&](double R) {
    const double nu_R = opt.nu_relative ? opt.nu * R : opt.nu;
    ExpLoss loss{nu_R};
    MwuConfig c = cfg;
    if (!c.max_width_steps) c.width_safety = opt.search_width_safety;
    RadiusRun run;
    run.radius = R;
    try {
      CrudeSolution sol = qsc_mwu(inst, loss, R, c);
      const Vector px = inst.P * sol.x_tilde;
      const double s = smax(px, nu_R);
      run.completed = true;
      run.objective = opt.objective == SearchObjective::Smax ? s : px.lpNorm<Eigen::Infinity>();
      // provable for R >= ||P x*||_inf: Phi(w0) e^{1+4 eps} caps max w at nu (1 + 4 eps + log rows)
      run.certified = s <= (1 + 4 * cfg.epsilon + log_rows) * R + nu_R * log_rows;
      run.flow_steps = sol.flow_steps;
      run.width_steps = sol.width_steps;
      if (run.objective < best_obj) {
        best_obj = run.objective;
        res.best = std::move(sol);
        res.best_radius = R;
        have_best = true;
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::TheoryViolation) throw;
      run.failure = e.what();
    }
    res.runs.push_back(run);
  };

  // Smaller radii weigh the exponent harder and give tighter solutions until the
  // width cap trips, so bisect on that boundary.
  std::optional<double> lowest_done, highest_failed;
  for (double R : grid) {
    run_at(R);
    if (res.runs.back().completed)
      lowest_done = R;
    else if (!lowest_done || R < *lowest_done)
      highest_failed = highest_failed ? std::max(*highest_failed, R) : R;
  }

  const double ratio = opt.refine_ratio > 0 ? opt.refine_ratio : opt.nu;
  if (lowest_done && highest_failed && *highest_failed < *lowest_done) {
    double hi = *lowest_done, lo = *highest_failed;
    while (hi / lo > 1 + ratio) {
      const double mid = std::sqrt(lo * hi);
      run_at(mid);
      if (res.runs.back().completed)
        hi = mid;
      else
        lo = mid;
    }
  }
  if (!have_best) throw Error(ErrorKind::TheoryViolation, "no radius in the search produced a solution");
  return res;
}

struct LinfResult {
  Vector x;
  double value = 0.0;  // ||P x||_inf
  double nu = 0.0;
  RadiusSearchResult search;
};

/// (1 + eps)-approximate min_{Ax=b} ||P x||_inf through the exp loss on
/// [P; -P] with smoothing proportional to the radius under test.
inline LinfResult solve_linf(const ProblemInstance& inst, double eps, MwuConfig cfg = {}) {
  if (!(eps > 0 && eps < 1)) throw Error(ErrorKind::InvalidParameter, "solve_linf needs eps in (0, 1)");
  const auto red = detail::feasible_constraints(inst);
  LinfResult out;
  const Index m = inst.m();
  out.nu = eps / (2.0 * std::log(2.0 * static_cast<double>(m)));

  const PsiResult l2 = psi(red.A, red.b, inst.P, Vector::Ones(m));
  const Vector px2 = inst.P * l2.delta;
  const double r_hi = px2.lpNorm<Eigen::Infinity>();
  const double r_lo = std::sqrt(std::max(l2.value, 0.0) / static_cast<double>(m));
  if (!(r_hi > 1e-300)) {
    out.x = l2.delta;
    out.value = r_hi;
    return out;
  }

  ProblemInstance stacked{red.A, red.b, stack_symmetric(inst.P)};
  RadiusSearchOptions opt;
  opt.nu = out.nu;
  opt.nu_relative = true;
  opt.r_lo = std::min(r_lo, r_hi) * out.nu;
  opt.r_hi = r_hi;
  opt.objective = SearchObjective::Linf;
  cfg.epsilon = out.nu;
  out.search = binary_search_R(stacked, opt, cfg);
  out.x = out.search.best.x_tilde;
  out.value = (inst.P * out.x).lpNorm<Eigen::Infinity>();
  return out;
}

}  // namespace widthred

#endif  // WIDTHRED_CRUDE_SOLVER_HPP
