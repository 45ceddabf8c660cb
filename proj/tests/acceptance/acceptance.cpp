// Acceptance runner: one [PASS]/[FAIL] line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include "test_oracles.hpp"
#include "widthred/cli.hpp"

using namespace widthred;
using widthred::testing::random_instance;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

ProblemInstance hub(Index m, double c) {
  ProblemInstance I{Matrix::Ones(1, 2), Vector::Ones(1), Matrix::Zero(m, 2)};
  I.P(0, 0) = c;
  for (Index i = 1; i < m; ++i) I.P(i, 1) = 1;
  return I;
}

struct CrudeFixture {
  std::string label;
  ProblemInstance inst;
  QscLoss loss;
  double R;
  double eps;
};

// Generated instances carry a planted point with ||P x||_inf = 1, so R = 1
// covers the optimum; hub instances add width steps.
std::vector<CrudeFixture> crude_fixtures() {
  std::vector<CrudeFixture> out;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (const char* kind : {"exp", "sym-exp", "lp", "logistic"}) {
      auto f = generate(kind, seed, 2, 6, 24);
      for (double eps : {1.0, 0.5, 0.25})
        out.push_back({std::string(kind) + "/s" + std::to_string(seed), effective_instance(f.instance(), f.loss),
                       resolve_loss(f.loss), 1.0, eps});
    }
  }
  out.push_back({"hub100/exp", hub(100, 10), make_exp_loss(0.5), 1.0, 1.0});
  out.push_back({"hub200/exp", hub(200, 10), make_exp_loss(0.5), 1.0, 1.0});
  out.push_back({"hub200/exp-c20", hub(200, 20), make_exp_loss(0.5), 1.0, 1.0});
  out.push_back({"hub100/lp", hub(100, 10), make_lp_loss(3, 1), 1.0, 1.0});
  return out;
}

std::vector<CrudeSolution> g_crude_runs;

Verdict ac1() {
  const auto t0 = Clock::now();
  PortableRng rng(2024);
  double worst_inc = 0, worst_dec = 0;
  long bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index d = 1 + static_cast<Index>(rng.next() % 4);
    const Index n = std::max<Index>(d + 1, 2 + static_cast<Index>(rng.next() % 7));
    const Index m = n + static_cast<Index>(rng.next() % static_cast<std::uint64_t>(17 - n));
    auto I = random_instance(10000 + static_cast<std::uint64_t>(trial), d, std::min<Index>(n, 8), m);
    const Vector r = testing::random_positive(rng, m);
    const auto base = psi(I.A, I.b, I.P, r);
    const Vector pd = I.P * base.delta;
    Vector up = r, down = r;
    for (Index i = 0; i < m; ++i) {
      if (rng.uniform() < 0.5) up(i) *= 1 + 10 * rng.uniform();
      if (rng.uniform() < 0.5) down(i) *= rng.uniform();
    }
    const double inc = ((1 - r.array() / up.array()) * r.array() * pd.array().square()).sum();
    const double dec = 0.5 * ((1 - down.array() / r.array()) * r.array() * pd.array().square()).sum();
    const double pu = psi(I.A, I.b, I.P, up).value;
    const double pdn = psi(I.A, I.b, I.P, down).value;
    const double vi = (base.value + inc - pu) / base.value;   // > 0 means violated
    const double vd = (pdn - (base.value - dec)) / base.value;
    worst_inc = std::max(worst_inc, vi);
    worst_dec = std::max(worst_dec, vd);
    if (vi > 1e-8 || vd > 1e-8) ++bad;
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = bad == 0 && secs < 30;
  v.detail = "1000 instances, violations=" + std::to_string(bad) + fmt(", worst rel inc=%.2e", worst_inc) +
             fmt(", worst rel dec=%.2e", worst_dec) + fmt(", %.1fs", secs);
  return v;
}

Verdict ac2() {
  const auto fx = crude_fixtures();
  double worst_sandwich = 0, worst_linear = 0;
  long rows = 0;
  for (const auto& f : fx) {
    MwuConfig c;
    c.epsilon = f.eps;
    auto s = qsc_mwu(f.inst, f.loss, f.R, c);
    for (const auto& r : s.trace) {
      ++rows;
      worst_sandwich = std::max(worst_sandwich, r.psi / ((1 + f.eps) * r.phi));
      if (r.kind == StepKind::Flow) worst_linear = std::max(worst_linear, r.bound_linear / ((1 + f.eps) * f.R * r.phi));
    }
    g_crude_runs.push_back(std::move(s));
  }
  Verdict v;
  v.pass = worst_sandwich <= 1 + 1e-8 && worst_linear <= 1 + 1e-8;
  v.detail = std::to_string(fx.size()) + " runs, " + std::to_string(rows) + " iterations" +
             fmt(", max psi/((1+eps)phi)=%.4f", worst_sandwich) +
             fmt(", max linear/((1+eps)R phi)=%.4f", worst_linear);
  return v;
}

Verdict ac3() {
  const auto fx = crude_fixtures();
  long bad_T = 0, bad_K = 0, bad_phi = 0, width_total = 0;
  for (std::size_t i = 0; i < fx.size(); ++i) {
    const auto& f = fx[i];
    const auto& s = g_crude_runs[i];
    const double M = std::visit([](const auto& l) { return l.qsc_constant(); }, f.loss);
    const bool up = std::visit([](const auto& l) { return l.monotonicity() == Monotonicity::NonDecreasing; }, f.loss);
    const long T = static_cast<long>(std::ceil(1 / (s.schedule.alpha * M * f.eps) - 1e-9));
    if (s.flow_steps != T) ++bad_T;
    if (static_cast<double>(s.width_steps) > s.schedule.tau) ++bad_K;
    width_total += s.width_steps;
    const double cap = s.phi_initial * std::exp(1 + 4 * f.eps);
    const double floor = s.phi_initial * std::exp(-(1 + 4 * f.eps));
    if (up ? s.phi_final > cap * (1 + 1e-6) : s.phi_final < floor * (1 - 1e-6)) ++bad_phi;
  }
  Verdict v;
  v.pass = bad_T == 0 && bad_K == 0 && bad_phi == 0;
  v.detail = std::to_string(fx.size()) + " runs (" + std::to_string(width_total) +
             " width steps total), T mismatches=" + std::to_string(bad_T) + ", K>tau=" + std::to_string(bad_K) +
             ", Phi bound violations=" + std::to_string(bad_phi);
  return v;
}

Verdict ac4() {
  const auto t0 = Clock::now();
  double worst = 0;
  long bad = 0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    const Index n = 3 + static_cast<Index>(k % 6);  // 3..8
    const Index m = std::min<Index>(64, 8 * n + static_cast<Index>(k));
    const Index d = 1 + static_cast<Index>(k % 2);
    auto I = random_instance(500 + k, d, n, m);
    const double lp = oracle_linf(I).f_opt;
    MwuConfig cfg;
    cfg.record_trace = false;
    auto r = solve_linf(I, 0.25, cfg);
    const double ratio = r.value / lp;
    worst = std::max(worst, ratio);
    if (ratio > 1.25 || (I.A * r.x - I.b).norm() > 1e-8 * (1 + I.b.norm())) ++bad;
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = bad == 0 && secs < 300;
  v.detail = "20 instances, failures=" + std::to_string(bad) + fmt(", worst ||Px||/LP=%.4f", worst) +
             fmt(" (bound 1.25), %.1fs", secs);
  return v;
}

struct LogisticRun {
  RefineResult refine;
  double f_opt;
  double R;
};
std::vector<LogisticRun> g_logistic;

Verdict ac5() {
  const auto t0 = Clock::now();
  auto loss = make_logistic_loss();
  double worst = -1e300;
  long bad = 0;
  for (std::uint64_t k = 0; k < 10; ++k) {
    const Index n = 4 + static_cast<Index>(k % 3);   // 4..6
    const Index m = 16 + 4 * static_cast<Index>(k % 5);  // 16..32
    auto I = random_instance(900 + k, 2, n, m);
    const auto o = oracle_solve(I, loss);
    const double R = 1.1 * std::max(1.0, (I.P * o.x_opt).lpNorm<Eigen::Infinity>());
    RefineConfig rc;
    rc.eps = 1e-6;
    rc.max_outer_steps = 50000;
    rc.record_trace = false;
    MwuConfig mc;
    mc.record_trace = false;
    auto rep = boost_pipeline(I, loss, R, mc, rc);
    const double gap = rep.f - o.f_opt;
    worst = std::max(worst, gap);
    if (gap > 1e-6 || (I.A * rep.x - I.b).norm() > 1e-8 * (1 + I.b.norm())) ++bad;
    g_logistic.push_back({std::move(rep.refine), o.f_opt, rep.R_boost});
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = bad == 0 && secs < 600;
  v.detail = "10 instances, failures=" + std::to_string(bad) + fmt(", worst f - f_oracle=%.2e", worst) +
             fmt(" (bound 1e-6), %.1fs", secs);
  return v;
}

Verdict ac6() {
  auto loss = make_logistic_loss();
  double worst_ratio = 0, worst_box = -1, worst_Ay = 0;
  long bad = 0, checked = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto I = random_instance(300 + seed, 1, 4, 8);
    Vector x = min_norm_solution(I.A, I.b);
    const Matrix N = null_space_basis(I.A);
    PortableRng rng(seed);
    Vector u(N.cols());
    for (Index j = 0; j < u.size(); ++j) u(j) = rng.normal();
    x += N * u;
    const double R = 1.2 * (I.P * x).lpNorm<Eigen::Infinity>();
    auto ri = make_residual(I, loss, x, R);
    const auto opt = testing::residual_face_enumeration(I.A, I.P, ri);
    for (double zf : {1.0, 1.5, 1.99}) {
      ri.zeta = zf * opt.value;
      const auto r = mwu_residual(I.A, I.P, ri);
      const Vector py = I.P * r.y;
      const double ay = (I.A * r.y).norm();
      const double box = (py - ri.z).lpNorm<Eigen::Infinity>() * 2 * ri.M;  // <= 1 required
      const double ratio = opt.value / residual_value_image(ri, py);
      worst_ratio = std::max(worst_ratio, ratio);
      worst_box = std::max(worst_box, box);
      worst_Ay = std::max(worst_Ay, ay);
      ++checked;
      if (ay > 1e-9 || box > 1 + 1e-8 || !(ratio > 0 && ratio <= 400)) ++bad;
    }
  }
  Verdict v;
  v.pass = bad == 0;
  v.detail = std::to_string(checked) + " solves on 10 instances, failures=" + std::to_string(bad) +
             fmt(", max res(D*)/res(y)=%.1f (bound 400)", worst_ratio) +
             fmt(", max 2M||Py-z||=%.4f", worst_box) + fmt(", max ||Ay||=%.1e", worst_Ay);
  return v;
}

Verdict ac7() {
  // geometric mean of per-step gap ratios while the gap is above rounding noise
  double worst_gm = 0, worst_bound = 0;
  long bad = 0, used = 0;
  for (const auto& run : g_logistic) {
    const double rho = 1 - std::exp(-2.0) / (1600 * run.refine.M * run.R);
    double log_sum = 0;
    long steps = 0;
    for (const auto& s : run.refine.steps) {
      const double before = s.f_before - run.f_opt, after = s.f_after - run.f_opt;
      if (before <= 1e-9) break;
      log_sum += std::log(std::max(after, 1e-300) / before);
      ++steps;
    }
    if (steps == 0) continue;
    ++used;
    const double gm = std::exp(log_sum / static_cast<double>(steps));
    if (gm > worst_gm) {
      worst_gm = gm;
      worst_bound = rho;
    }
    if (gm > rho) ++bad;
  }
  Verdict v;
  v.pass = bad == 0 && used > 0;
  v.detail = std::to_string(used) + " oracle-verified runs, violations=" + std::to_string(bad) +
             fmt(", worst geometric-mean contraction=%.6f", worst_gm) + fmt(" vs bound %.6f", worst_bound);
  return v;
}

Verdict ac8() {
  bool ok = true;
  std::string detail;
  const std::vector<std::pair<std::string, QscLoss>> losses{{"exp", make_exp_loss(0.5)},
                                                           {"sym-exp", make_symmetric_exp_loss(0.5).loss},
                                                           {"lp", make_lp_loss(3, 1)},
                                                           {"logistic", make_logistic_loss()}};
  for (const auto& [name, loss] : losses) {
    const double M = std::visit([](const auto& l) { return l.qsc_constant(); }, loss);
    const auto rep = check_qsc(loss, uniform_grid(-20 / M, 20 / M, 4001));
    ok = ok && rep.qsc_pass && rep.stability_pass && rep.convex;
    detail += name + fmt(" ratio/M=%.4f; ", rep.max_ratio / M);
  }
  struct Row {
    GscParams g;
    double expect;
  };
  const std::vector<Row> table{
      {{2.5, 2.0, {}, {}}, 2.5},
      {{1.5, 2.0, 4.0, 0.1}, 1.5},
      {{2.0, 3.0, 9.0, {}}, 2.0 * 3.0},
      {{1.0, 4.0, 9.0, {}}, 9.0},
      {{0.5, 5.0, 4.0, {}}, 0.5 * 8.0},
      {{2.0, 1.0, 9.0, 0.5}, 2.0 * std::pow(0.5, -1.0) * 3.0},
      {{3.0, 0.0, 16.0, 4.0}, 3.0 * std::pow(4.0, -1.5) * 4.0},
      {{1.0, 1.5, 2.0, 3.0}, std::pow(3.0, -0.75) * std::sqrt(2.0)},
  };
  double worst = 0;
  for (const auto& r : table) worst = std::max(worst, std::abs(gsc_to_qsc(r.g) - r.expect) / r.expect);
  ok = ok && worst <= 1e-12;
  detail += fmt("gsc table max rel err=%.1e", worst);
  return {ok, detail};
}

Verdict ac9() {
  const auto t0 = Clock::now();
  ScaleOptions so;
  so.cfg.epsilon = 0.5;
  const auto rows = run_scale(so);
  std::vector<double> xs, ys;
  std::string counts;
  bool ok = true;
  for (const auto& r : rows) {
    counts += std::to_string(r.m) + ":" + std::to_string(r.width_steps) + " ";
    if (!r.failure.empty()) ok = false;
    xs.push_back(static_cast<double>(r.m));
    ys.push_back(static_cast<double>(r.width_steps) + 1.0);
  }
  const double slope = loglog_slope(xs, ys);
  ok = ok && slope <= 0.5;
  return {ok, "width steps per m {" + counts + "}" + fmt(", fitted slope=%.3f (<= 0.5)", slope) +
                  fmt(", %.1fs", seconds_since(t0))};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"AC1 energy lemmas", ac1},           {"AC2 potential sandwich", ac2},   {"AC3 step-count caps", ac3},
      {"AC4 linf approximation", ac4},      {"AC5 high-accuracy logistic", ac5}, {"AC6 residual machinery", ac6},
      {"AC7 refinement contraction", ac7}, {"AC8 loss certification", ac8},     {"AC9 scaling smoke test", ac9},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] %s: %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
    std::fflush(stdout);
    if (!v.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
