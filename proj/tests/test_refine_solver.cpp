#include <gtest/gtest.h>

#include "test_oracles.hpp"

using namespace widthred;
using widthred::testing::random_instance;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Feasible point pushed off the minimum-norm solution along null(A).
Vector off_center(const ProblemInstance& I, std::uint64_t seed, double scale = 1.0) {
  Vector x = min_norm_solution(I.A, I.b);
  const Matrix N = null_space_basis(I.A);
  PortableRng rng(seed);
  Vector u(N.cols());
  for (Index j = 0; j < u.size(); ++j) u(j) = scale * rng.normal();
  return x + N * u;
}

struct Anchored {
  ProblemInstance I;
  Vector x;
  double R;
  ResidualInstance ri;
  widthred::testing::ResidualOptimum opt;
};

Anchored anchored_logistic(std::uint64_t seed) {
  auto loss = make_logistic_loss();
  Anchored a{random_instance(seed, 1, 4, 8), {}, 0, {}, {}};
  a.x = off_center(a.I, seed);
  a.R = 1.2 * (a.I.P * a.x).lpNorm<Eigen::Infinity>();
  a.ri = make_residual(a.I, loss, a.x, a.R);
  a.opt = widthred::testing::residual_face_enumeration(a.I.A, a.I.P, a.ri);
  return a;
}

}  // namespace

TEST(ComputeZ, Examples) {
  EXPECT_EQ(compute_z(vec({0}), 1, 1)(0), 0.0);
  EXPECT_NEAR(compute_z(vec({0.9}), 1, 1)(0), 0.4, 1e-15);
  EXPECT_NEAR(compute_z(vec({-1}), 1, 1)(0), -0.5, 1e-15);
  try {
    compute_z(vec({1.5}), 1, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::OutOfDomain);
  }
}

TEST(ComputeZ, InteriorCaseIsExactlyZero) {
  const Vector px = vec({-0.5, 0.0, 0.49, 0.5, -0.5 + 1e-9});
  const Vector z = compute_z(px, 1.0, 1.0);
  for (Index i = 0; i < px.size(); ++i) EXPECT_EQ(z(i), 0.0);
}

TEST(ComputeZ, BoxKeepsStepsInside) {
  PortableRng rng(12);
  for (int k = 0; k < 2000; ++k) {
    const double M = 0.2 + 3 * rng.uniform();
    const double R = (0.5 + 4 * rng.uniform()) / M;  // M R >= 1/2
    const double px = R * (2 * rng.uniform() - 1);
    const double z = compute_z(vec({px}), R, M)(0);
    EXPECT_LE(std::abs(z), 0.5 / M * (1 + 1e-12));
    const double pd = z + 0.5 / M * (2 * rng.uniform() - 1);
    EXPECT_LE(std::abs(pd), 1.0 / M * (1 + 1e-12));
    EXPECT_LE(std::abs(px - pd / (kE * kE)), R * (1 + 1e-12));
  }
}

TEST(ResidualValue, Examples) {
  ResidualInstance ri;
  ri.g = vec({1, 0});
  ri.h = vec({1, 1});
  ri.z = Vector::Zero(2);
  EXPECT_EQ(residual_value(ri, Matrix::Identity(2, 2), Vector::Zero(2)), 0.0);
  EXPECT_NEAR(residual_value(ri, Matrix::Identity(2, 2), vec({1, 0})), 1 - 1 / kE, 1e-15);
  EXPECT_NEAR(1 - 1 / kE, 0.63212, 1e-5);
  try {
    residual_value(ri, Matrix::Identity(3, 3), Vector::Zero(3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimensionMismatch);
  }
}

TEST(ResidualValue, ScalingDerivativeVanishesAtInteriorOptimum) {
  // near the minimiser the gradient is small, so the optimum is off the box
  auto loss = make_logistic_loss();
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    auto I = random_instance(seed, 1, 4, 8);
    const auto o = oracle_solve(I, loss);
    const Vector x = o.x_opt + 0.05 * (off_center(I, seed) - min_norm_solution(I.A, I.b));
    const double R = 1.5 * std::max(1.0, (I.P * x).lpNorm<Eigen::Infinity>());
    auto ri = make_residual(I, loss, x, R);
    auto opt = widthred::testing::residual_face_enumeration(I.A, I.P, ri);
    const Vector pd = I.P * opt.delta;
    if ((pd - ri.z).lpNorm<Eigen::Infinity>() >= 0.5 / ri.M * (1 - 1e-6)) continue;
    const double dres = ri.g.dot(pd) - 2 / kE * (ri.h.array() * pd.array().square()).sum();
    EXPECT_NEAR(dres, 0.0, 1e-10 * (1 + std::abs(opt.value)));
    ++checked;
  }
  EXPECT_GE(checked, 3);
}

TEST(ResidualOptimum, QuadraticBoundAndLowerBound) {
  auto loss = make_logistic_loss();
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto a = anchored_logistic(seed);
    const Vector pd = a.I.P * a.opt.delta;
    EXPECT_LE((a.I.A * a.opt.delta).norm(), 1e-10);
    // with zeta = res(D*) the Lemma-4.4 window holds trivially
    const double zeta = a.opt.value;
    EXPECT_LE((a.ri.h.array() * pd.array().square()).sum(), kE * zeta * (1 + 1e-9));

    const auto o = oracle_solve(a.I, loss);
    const double R = std::max(a.R, (a.I.P * o.x_opt).lpNorm<Eigen::Infinity>());
    auto ri = make_residual(a.I, loss, a.x, R);
    auto opt = widthred::testing::residual_face_enumeration(a.I.A, a.I.P, ri);
    const double gap = total_value(loss, Vector(a.I.P * a.x)) - o.f_opt;
    EXPECT_GE(opt.value, gap / (4 * ri.M * R) * (1 - 1e-6)) << "seed " << seed;
  }
}

TEST(MwuResidual, ConstraintAlgebraAndApproximation) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto a = anchored_logistic(seed);
    for (double zf : {1.0, 1.5, 1.99}) {
      ResidualInstance ri = a.ri;
      ri.zeta = a.opt.value * zf;  // res(D*) in (zeta/2, zeta]
      auto r = mwu_residual(a.I.A, a.I.P, ri);
      const Vector py = a.I.P * r.y;
      EXPECT_LE((a.I.A * r.y).norm(), 1e-9);
      // each flow solve pins g^T P D = zeta / 2; output is y / (100 t)
      const double pinned = ri.zeta * double(r.flow_steps) / (200.0 * double(r.iterations));
      EXPECT_NEAR(ri.g.dot(py), pinned, 1e-9 * ri.zeta);
      if (r.width_steps == 0) EXPECT_NEAR(ri.g.dot(py), ri.zeta / 200, 1e-9 * ri.zeta);
      EXPECT_TRUE(residual_box_feasible(ri, py));
      EXPECT_LE((ri.h.array() * py.array().square()).sum() / kE, ri.zeta / 400);
      EXPECT_GE(residual_value_image(ri, py), a.opt.value / 400) << "seed " << seed << " zf " << zf;
      EXPECT_GT(r.w_min, 0.0);
      if (r.exit == InnerExit::IterationCap) EXPECT_LE(r.w_l1_max_in_loop, 10 * ri.zeta * (1 + 1e-12));
    }
  }
}

TEST(MwuResidual, InfeasibleAugmentedWhenGradientInRowSpace) {
  // g^T P lies in range(A^T): g^T P D = 0 for every D in null(A)
  ProblemInstance I{Matrix::Ones(1, 2), Vector::Zero(1), Matrix::Identity(2, 2)};
  ResidualInstance ri;
  ri.g = vec({1, 1});
  ri.h = vec({1, 1});
  ri.z = Vector::Zero(2);
  ri.M = 1;
  ri.R = 1;
  ri.zeta = 0.1;
  try {
    mwu_residual(I.A, I.P, ri);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InfeasibleAugmented);
  }
  ri.zeta = 0;
  EXPECT_THROW(mwu_residual(I.A, I.P, ri), Error);
}

TEST(BinarySearchLevels, Examples) {
  const double eps = 1e-3;
  auto lv = binary_search_levels(8 * eps, 1, 1, eps);
  std::vector<double> nus;
  for (const auto& l : lv)
    if (nus.empty() || nus.back() != l.nu) nus.push_back(l.nu);
  ASSERT_EQ(nus.size(), 3u);
  EXPECT_DOUBLE_EQ(nus[0], 8 * eps);
  EXPECT_DOUBLE_EQ(nus[1], 4 * eps);
  EXPECT_DOUBLE_EQ(nus[2], 2 * eps);

  for (double MR : {1.0, 2.5, 17.0}) {
    auto one = binary_search_levels(1.0, MR, 1.0, 0.6);  // a single nu level
    EXPECT_EQ(static_cast<long>(one.size()), zeta_levels_per_nu(MR, 1.0));
    EXPECT_EQ(zeta_levels_per_nu(MR, 1.0), static_cast<long>(std::ceil(std::log2(8 * kE * kE * MR))));
    for (const auto& l : one) {
      EXPECT_GT(l.zeta, 1.0 / (8 * MR));
      EXPECT_LE(l.zeta, kE * kE);
    }
  }
  EXPECT_TRUE(binary_search_levels(0.5, 1, 1, 1.0).empty());
}

TEST(QscMin, OptimalStartStalls) {
  auto I = random_instance(2, 1, 4, 6);
  I.b.setZero();
  const Vector x0 = Vector::Zero(4);
  auto r = qsc_min(I, make_lp_loss(3, 1), x0, 1.0);
  EXPECT_EQ(r.status, RefineStatus::Stalled);
  EXPECT_EQ(r.x, x0);
  EXPECT_EQ(r.outer_steps, 0);
}

TEST(QscMin, RejectsInfeasibleStartAndOutOfDomain) {
  auto I = random_instance(2, 1, 4, 6);
  EXPECT_THROW(qsc_min(I, make_logistic_loss(), Vector::Zero(4), 1.0), Error);
  const Vector x = off_center(I, 2, 5.0);
  try {
    qsc_min(I, make_logistic_loss(), x, 1e-3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::OutOfDomain);
  }
}

TEST(QscMin, StepInvariantsAndConvergence) {
  auto loss = make_logistic_loss();
  for (std::uint64_t seed : {3, 4}) {
    auto I = random_instance(seed, 2, 3, 4);
    const auto o = oracle_solve(I, loss);
    const Vector x0 = off_center(I, seed);
    const double R = 1.1 * std::max({1.0, (I.P * x0).lpNorm<Eigen::Infinity>(), (I.P * o.x_opt).lpNorm<Eigen::Infinity>()});
    RefineConfig cfg;
    cfg.eps = 1e-6;
    auto r = qsc_min(I, loss, x0, R, cfg);
    EXPECT_NE(r.status, RefineStatus::IterationCap);
    EXPECT_LE(r.f - o.f_opt, 1e-6) << "seed " << seed;
    EXPECT_LE((I.A * r.x - I.b).norm(), 1e-8 * (1 + I.b.norm()));
    const double M = r.M, e2 = 1 / (kE * kE);
    const double rho = 1 - e2 / (1600 * M * R);
    for (std::size_t i = 0; i < r.steps.size(); ++i) {
      const auto& s = r.steps[i];
      EXPECT_LE(s.box_excess, 0.5 / M * 1e-8);
      EXPECT_LE(s.max_abs_px, R * (1 + 1e-8));
      EXPECT_GE(s.f_before - s.f_after, e2 * s.res_value * (1 - 1e-8) - 1e-15);
      EXPECT_LE(s.step_linf, 1 / M * (1 + 1e-8));
      EXPECT_GE(s.bregman, s.newton_quad / kE - 1e-15);
      EXPECT_LE(s.bregman, kE * s.newton_quad + 1e-15);
      // contraction, while the gap is above rounding noise
      const double before = s.f_before - o.f_opt;
      if (before > 1e-9) EXPECT_LE(s.f_after - o.f_opt, rho * before * (1 + 1e-12)) << "step " << i;
    }
  }
}

TEST(QscMin, TraceMarksOneAcceptedRowPerStep) {
  auto loss = make_logistic_loss();
  auto I = random_instance(5, 1, 3, 5);
  const Vector x0 = off_center(I, 5);
  RefineConfig cfg;
  cfg.max_outer_steps = 5;
  auto r = qsc_min(I, loss, x0, 1.5 * (I.P * x0).lpNorm<Eigen::Infinity>() + 1, cfg);
  std::vector<int> accepted(static_cast<std::size_t>(r.outer_steps + 1), 0);
  for (const auto& row : r.trace) {
    EXPECT_EQ(row.kind, StepKind::Refine);
    if (row.accepted) ++accepted[static_cast<std::size_t>(row.refine_step)];
  }
  for (long s = 0; s < r.outer_steps; ++s) EXPECT_EQ(accepted[static_cast<std::size_t>(s)], 1);
}

TEST(BoostPipeline, LogisticEndToEnd) {
  auto loss = make_logistic_loss();
  auto I = random_instance(7, 2, 3, 4);
  const auto o = oracle_solve(I, loss);
  const double R = 1.1 * std::max(1.0, (I.P * o.x_opt).lpNorm<Eigen::Infinity>());
  auto rep = boost_pipeline(I, loss, R);
  const double m = static_cast<double>(I.m());
  // f(v) <= log 2 + |v| and |P x_bar| <= R M ||w||_inf
  EXPECT_LE(rep.crude.objective, m * (std::log(2.0) + rep.crude.linf_bound));
  EXPECT_GE(rep.R_boost, R);
  EXPECT_LE(rep.f - o.f_opt, 1e-6);
}

TEST(BoostPipeline, ExpCrudeBoundThroughPotential) {
  // |P x_bar| <= R M w, so with M R <= 1: f(P x_bar) <= nu^2 Phi(w) <= m e^{1 + 4 eps}
  for (std::uint64_t seed : {1, 2, 3}) {
    auto I = random_instance(seed, 1, 4, 8);
    const double nu = 1.0;
    auto loss = make_exp_loss(nu);
    MwuConfig c;
    c.epsilon = 1.0;
    auto s = qsc_mwu(I, loss, 1.0, c);
    EXPECT_LE(s.objective, nu * nu * s.phi_final * (1 + 1e-12));
    EXPECT_LE(s.phi_final * nu * nu, static_cast<double>(I.m()) * std::exp(5.0));
  }
}
