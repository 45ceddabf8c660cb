#ifndef WIDTHRED_LOSSES_HPP
#define WIDTHRED_LOSSES_HPP

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "widthred/core.hpp"

namespace widthred {

/// Direction in which f'' moves for weights w >= w0.
enum class Monotonicity { NonDecreasing, NonIncreasing };

/// A univariate convex loss with |f'''| <= M f'', plus the data the width-reduced
/// solver needs: the initial weight w0 and the per-loss weight rule realising a
/// (1 + eps) resistance change.
template <class L>
concept QscLossLike = requires(const L& loss, double x, double eps) {
  { loss.value(x) } -> std::convertible_to<double>;
  { loss.d1(x) } -> std::convertible_to<double>;
  { loss.d2(x) } -> std::convertible_to<double>;
  { loss.d3(x) } -> std::convertible_to<double>;
  { loss.qsc_constant() } -> std::convertible_to<double>;
  { loss.monotonicity() } -> std::same_as<Monotonicity>;
  { loss.initial_weight() } -> std::convertible_to<double>;
  { loss.width_update(x, eps) } -> std::convertible_to<double>;
};

namespace detail {
// exp() overflows past ~709.78
inline constexpr double kMaxExponent = 700.0;
inline double clamped_exp(double t) { return std::exp(std::min(t, kMaxExponent)); }
}  // namespace detail

/// f(x) = e^{x / nu}; (1/nu)-q.s.c.
struct ExpLoss {
  double nu = 1.0;

  double value(double x) const { return detail::clamped_exp(x / nu); }
  // scale folded into the exponent so derivatives stay finite for tiny nu
  double d1(double x) const { return detail::clamped_exp(x / nu - std::log(nu)); }
  double d2(double x) const { return detail::clamped_exp(x / nu - 2 * std::log(nu)); }
  double d3(double x) const { return detail::clamped_exp(x / nu - 3 * std::log(nu)); }
  double qsc_constant() const { return 1.0 / nu; }
  Monotonicity monotonicity() const { return Monotonicity::NonDecreasing; }
  double initial_weight() const { return 0.0; }
  double width_update(double w, double eps) const { return w + nu * std::log1p(eps); }
  std::string name() const { return "exp"; }
};

/// f(x) = |x|^p + mu x^2 for p >= 3; (p mu^{-1/(p-2)})-q.s.c.
struct LpLoss {
  double p = 3.0;
  double mu = 1.0;

  double value(double x) const { return std::pow(std::abs(x), p) + mu * x * x; }
  double d1(double x) const {
    const double s = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
    return p * std::pow(std::abs(x), p - 1) * s + 2.0 * mu * x;
  }
  double d2(double x) const { return p * (p - 1) * std::pow(std::abs(x), p - 2) + 2.0 * mu; }
  double d3(double x) const {
    const double s = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
    return p * (p - 1) * (p - 2) * std::pow(std::abs(x), p - 3) * s;
  }
  double qsc_constant() const { return p * std::pow(mu, -1.0 / (p - 2)); }
  Monotonicity monotonicity() const { return Monotonicity::NonDecreasing; }
  double initial_weight() const { return 1.0; }
  double width_update(double w, double eps) const { return std::pow(1.0 + eps, 1.0 / (p - 2)) * w; }
  std::string name() const { return "lp"; }
};

/// f(x) = log(1 + e^x); 1-q.s.c.
struct LogisticLoss {
  static double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }
  double value(double x) const {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }
  double d1(double x) const { return sigmoid(x); }
  double d2(double x) const { return sigmoid(x) * sigmoid(-x); }
  double d3(double x) const { return d2(x) * (sigmoid(-x) - sigmoid(x)); }
  double qsc_constant() const { return 1.0; }
  Monotonicity monotonicity() const { return Monotonicity::NonIncreasing; }
  double initial_weight() const { return 0.0; }
  double width_update(double w, double eps) const { return w + 0.9 * eps; }
  std::string name() const { return "logistic"; }
};

/// Loss given by callables; used for quadratic baselines and user-defined losses.
struct FunctionLoss {
  std::function<double(double)> f, f1, f2, f3;
  double M = 1.0;
  Monotonicity mono = Monotonicity::NonDecreasing;
  double w0 = 0.0;
  std::function<double(double, double)> width;
  std::string label = "custom";

  double value(double x) const { return f(x); }
  double d1(double x) const { return f1(x); }
  double d2(double x) const { return f2(x); }
  double d3(double x) const { return f3(x); }
  double qsc_constant() const { return M; }
  Monotonicity monotonicity() const { return mono; }
  double initial_weight() const { return w0; }
  double width_update(double w, double eps) const { return width(w, eps); }
  std::string name() const { return label; }
};

static_assert(QscLossLike<ExpLoss>);
static_assert(QscLossLike<LpLoss>);
static_assert(QscLossLike<LogisticLoss>);
static_assert(QscLossLike<FunctionLoss>);

/// Runtime-selected loss.
using QscLoss = std::variant<ExpLoss, LpLoss, LogisticLoss, FunctionLoss>;

inline ExpLoss make_exp_loss(double nu) {
  if (!(nu > 0) || !std::isfinite(nu)) throw Error(ErrorKind::InvalidParameter, "exp loss needs nu > 0");
  return ExpLoss{nu};
}

/// sum_i e^{(Px)_i/nu} + e^{-(Px)_i/nu}, realised as the exp loss on [P; -P].
struct SymmetricExp {
  ExpLoss loss;
  bool stack_rows = true;

  Index stacked_rows(Index m) const { return stack_rows ? 2 * m : m; }
};

inline SymmetricExp make_symmetric_exp_loss(double nu) { return SymmetricExp{make_exp_loss(nu), true}; }

inline LpLoss make_lp_loss(double p, double mu) {
  if (!(p >= 3) || !std::isfinite(p)) throw Error(ErrorKind::InvalidParameter, "lp loss needs p >= 3");
  if (!(mu > 0) || !std::isfinite(mu)) throw Error(ErrorKind::InvalidParameter, "lp loss needs mu > 0");
  return LpLoss{p, mu};
}

inline LogisticLoss make_logistic_loss() { return LogisticLoss{}; }

/// f(x) = c x^2 / 2: constant curvature, the degenerate case handled exactly by
/// one weighted least-squares solve.
inline FunctionLoss make_quadratic_loss(double c = 1.0) {
  FunctionLoss q;
  q.f = [c](double x) { return 0.5 * c * x * x; };
  q.f1 = [c](double x) { return c * x; };
  q.f2 = [c](double) { return c; };
  q.f3 = [](double) { return 0.0; };
  q.M = 1e-12;
  q.width = [](double w, double) { return w; };
  q.label = "quadratic";
  return q;
}

template <QscLossLike L>
double total_value(const L& loss, const Vector& v) {
  double s = 0.0;
  for (Index i = 0; i < v.size(); ++i) s += loss.value(v(i));
  return s;
}

/// nu * log(sum_i e^{v_i / nu}), evaluated around max(v).
inline double smax(const Vector& v, double nu) {
  if (v.size() == 0) throw Error(ErrorKind::EmptyVector, "smax of an empty vector");
  if (!(nu > 0)) throw Error(ErrorKind::InvalidParameter, "smax needs nu > 0");
  const double top = v.maxCoeff();
  double s = 0.0;
  for (Index i = 0; i < v.size(); ++i) s += std::exp((v(i) - top) / nu);
  return top + nu * std::log(s);
}

/// (N, nu)-general-self-concordance data with optional smoothness L and strong
/// convexity mu.
struct GscParams {
  double N = 1.0;
  double nu = 2.0;
  std::optional<double> L;
  std::optional<double> mu;
};

/// Effective q.s.c. constant after reducing a g.s.c. function to order 2:
///   nu = 2        -> N
///   2 < nu < 6    -> N L^{(nu-2)/2}
///   nu < 2        -> N mu^{-(3-nu)/2} L^{1/2}
inline double gsc_to_qsc(const GscParams& g) {
  if (!(g.N > 0)) throw Error(ErrorKind::InvalidParameter, "g.s.c. constant N must be positive");
  if (!(g.nu >= 0)) throw Error(ErrorKind::InvalidParameter, "g.s.c. order must be nonnegative");
  if (g.L && !(*g.L > 0)) throw Error(ErrorKind::InvalidParameter, "L must be positive");
  if (g.mu && !(*g.mu > 0)) throw Error(ErrorKind::InvalidParameter, "mu must be positive");
  if (g.nu >= 6) throw Error(ErrorKind::UnsupportedOrder, "g.s.c. order nu >= 6 is not supported");
  if (g.nu == 2) return g.N;
  if (g.nu > 2) {
    if (!g.L) throw Error(ErrorKind::MissingConstant, "order nu > 2 needs the smoothness constant L");
    return g.N * std::pow(*g.L, (g.nu - 2) / 2);
  }
  if (!g.mu || !g.L)
    throw Error(ErrorKind::MissingConstant, "order nu < 2 needs both mu and L");
  return g.N * std::pow(*g.mu, -(3 - g.nu) / 2) * std::sqrt(*g.L);
}

struct QscReport {
  double declared_M = 0.0;
  double max_ratio = 0.0;  // max over the grid of |f'''| / f''
  bool qsc_pass = false;
  double stability_radius = 0.0;
  double max_stability_ratio = 0.0;  // max f''(y)/f''(x) over grid pairs |x-y| <= radius
  double stability_bound = 0.0;      // e^{M radius}
  bool stability_pass = false;
  bool convex = true;
  Index points = 0;
};

/// Grid certificate of |f'''| <= M f'' and of l_inf Hessian stability
/// f''(y)/f''(x) <= e^{M r} for |x - y| <= r. Points with f'' == 0 (underflow)
/// are skipped.
template <QscLossLike L>
QscReport check_qsc(const L& loss, std::vector<double> grid, std::optional<double> radius = {}) {
  QscReport rep;
  rep.declared_M = loss.qsc_constant();
  rep.stability_radius = radius.value_or(1.0 / rep.declared_M);
  rep.stability_bound = std::exp(rep.declared_M * rep.stability_radius);
  std::sort(grid.begin(), grid.end());

  std::vector<double> xs, h;
  for (double x : grid) {
    const double c = loss.d2(x);
    if (c < 0) rep.convex = false;
    if (!(c > 0) || !std::isfinite(c)) continue;
    xs.push_back(x);
    h.push_back(c);
    rep.max_ratio = std::max(rep.max_ratio, std::abs(loss.d3(x)) / c);
  }
  rep.points = static_cast<Index>(xs.size());
  rep.qsc_pass = rep.convex && rep.max_ratio <= rep.declared_M * (1 + 1e-8);

  std::size_t lo = 0;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    while (xs[j] - xs[lo] > rep.stability_radius) ++lo;
    for (std::size_t i = lo; i < j; ++i) {
      rep.max_stability_ratio = std::max({rep.max_stability_ratio, h[j] / h[i], h[i] / h[j]});
    }
  }
  if (xs.size() == 1) rep.max_stability_ratio = 1.0;
  rep.stability_pass = rep.max_stability_ratio <= rep.stability_bound * (1 + 1e-8);
  return rep;
}

inline QscReport check_qsc(const QscLoss& loss, std::vector<double> grid,
                           std::optional<double> radius = {}) {
  return std::visit([&](const auto& l) { return check_qsc(l, std::move(grid), radius); }, loss);
}

inline std::vector<double> uniform_grid(double lo, double hi, std::size_t count) {
  std::vector<double> g(count);
  for (std::size_t i = 0; i < count; ++i)
    g[i] = count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  return g;
}

}  // namespace widthred

#endif  // WIDTHRED_LOSSES_HPP
