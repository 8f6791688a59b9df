#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cpals/problems.hpp"
#include "cpals/solver.hpp"

#include <Eigen/Eigenvalues>

using namespace cpals;

namespace {

// Straight-line re-implementation of one plain ALS sweep from the
// closed-form normal equations, using a different solve path (LU inverse).
FactorSet als_sweep_reference(const Tensor3& t, const FactorSet& x) {
  FactorSet out = x;
  Matrix kr = khatri_rao(x.C, x.B);
  out.A = (matricize(t, Mode::one) * kr) *
          (kr.transpose() * kr).inverse();
  kr = khatri_rao(x.C, out.A);
  out.B = (matricize(t, Mode::two) * kr) *
          (kr.transpose() * kr).inverse();
  kr = khatri_rao(out.B, out.A);
  out.C = (matricize(t, Mode::three) * kr) *
          (kr.transpose() * kr).inverse();
  return out;
}

// Pseudo-inverse of a symmetric PSD matrix through its eigendecomposition.
Matrix psd_pinv_by_eig(const Matrix& g, double threshold) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(g);
  const Vector& ev = eig.eigenvalues();
  const double cutoff = threshold * ev.cwiseAbs().maxCoeff();
  Vector inv = Vector::Zero(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev(i) > cutoff) inv(i) = 1.0 / ev(i);
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

TEST_CASE("lambda schedules are positive and nonincreasing") {
  const LambdaSchedule c = LambdaSchedule::constant(2.0);
  const LambdaSchedule g = LambdaSchedule::geometric(1.0, 0.99, 1e-8);
  LambdaSchedule h;
  h.kind = LambdaSchedule::Kind::harmonic;
  h.lambda0 = 1.0;
  h.lambda_min = 1e-8;
  for (std::int64_t n = 0; n < 5000; ++n) {
    CHECK(c(n) == 2.0);
    for (const LambdaSchedule& s : {g, h}) {
      CHECK(s(n) > 0.0);
      if (n > 0) CHECK(s(n) <= s(n - 1));
    }
  }
  CHECK(g(0) == 1.0);
  CHECK(g(1) == doctest::Approx(0.99));
  CHECK(g(1000000) == 1e-8);
  CHECK(h(3) == doctest::Approx(0.25));
}

TEST_CASE("solve_substep keeps a generating factor fixed for any lambda > 0") {
  const CpProblem p = random_cp_problem(5, 4, 3, 2, ProblemKind::exact_rank, 1);
  const FactorSet& f = p.generating_factors;
  const Matrix kr = khatri_rao(f.C, f.B);
  const Matrix rhs = matricize(p.tensor, Mode::one) * kr;
  for (double lambda : {1e-3, 1.0, 1e3}) {
    const Matrix out = solve_substep(rhs, kr, lambda, f.A);
    CHECK((out - f.A).norm() <= 1e-10 * (1.0 + f.A.norm()));
  }
}

TEST_CASE("huge lambda pins the substep to the previous iterate") {
  const CpProblem p =
      random_cp_problem(5, 4, 3, 2, ProblemKind::random_dense, 2);
  const FactorSet g = random_cp_problem(5, 4, 3, 2, ProblemKind::random_dense, 3)
                          .initial_guess;
  const Matrix kr = khatri_rao(g.C, g.B);
  const Matrix rhs = matricize(p.tensor, Mode::one) * kr;
  const Matrix out = solve_substep(rhs, kr, 1e12, g.A);
  CHECK((out - g.A).norm() <= 1e-3);
}

TEST_CASE("rank-deficient lambda=0 substep matches the eigendecomposition oracle") {
  const CpProblem p =
      random_cp_problem(5, 4, 3, 2, ProblemKind::random_dense, 4);
  FactorSet g = random_cp_problem(5, 4, 3, 2, ProblemKind::random_dense, 5)
                    .initial_guess;
  // Two identical Khatri-Rao columns.
  g.B.col(1) = g.B.col(0);
  g.C.col(1) = g.C.col(0);
  const Matrix kr = khatri_rao(g.C, g.B);
  const Matrix rhs = matricize(p.tensor, Mode::one) * kr;
  const Matrix out = solve_substep(rhs, kr, 0.0, g.A);
  CHECK(out.allFinite());
  const Matrix gram = kr.transpose() * kr;
  // Normal equations are satisfied despite the rank deficiency.
  CHECK((out * gram - rhs).norm() <= 1e-8 * (1.0 + rhs.norm()));
  const Matrix expected = rhs * psd_pinv_by_eig(gram, 1e-12);
  CHECK((out - expected).norm() <= 1e-8 * (1.0 + expected.norm()));
}

TEST_CASE("als_sweep fixes exact generating factors") {
  const CpProblem p = random_cp_problem(6, 5, 4, 2, ProblemKind::exact_rank, 6);
  const FactorSet out = als_sweep(p.tensor, p.generating_factors);
  CHECK(std::sqrt(out.squared_distance(p.generating_factors)) <=
        1e-10 * (1.0 + p.generating_factors.norm()));
}

TEST_CASE("als_sweep never increases the residual") {
  for (unsigned seed : {10u, 11u, 12u, 13u}) {
    const CpProblem p =
        random_cp_problem(6, 6, 6, 3, ProblemKind::random_dense, seed);
    FactorSet x = p.initial_guess;
    for (int it = 0; it < 5; ++it) {
      const FactorSet next = als_sweep(p.tensor, x);
      CHECK(residual_f(p.tensor, next) <= residual_f(p.tensor, x) + 1e-12);
      x = next;
    }
  }
}

TEST_CASE("als_sweep matches the straight-line normal-equations oracle") {
  const CpProblem p =
      random_cp_problem(10, 10, 10, 10, ProblemKind::random_dense, 14);
  const FactorSet a = als_sweep(p.tensor, p.initial_guess);
  const FactorSet b = als_sweep_reference(p.tensor, p.initial_guess);
  CHECK(std::sqrt(a.squared_distance(b)) <= 1e-10 * (1.0 + b.norm()));
}

TEST_CASE("rals_sweep fixes exact generating factors") {
  const CpProblem p = random_cp_problem(6, 5, 4, 2, ProblemKind::exact_rank, 15);
  const FactorSet out = rals_sweep(p.tensor, p.generating_factors, 1.0);
  CHECK(std::sqrt(out.squared_distance(p.generating_factors)) <=
        1e-10 * (1.0 + p.generating_factors.norm()));
}

TEST_CASE("rals_sweep satisfies the descent inequality") {
  for (unsigned seed : {20u, 21u, 22u}) {
    const CpProblem p =
        random_cp_problem(7, 6, 5, 3, ProblemKind::random_dense, seed);
    const double lambda = 1.0;
    FactorSet x = p.initial_guess;
    for (int it = 0; it < 5; ++it) {
      const FactorSet next = rals_sweep(p.tensor, x, lambda);
      const double drop = residual_f(p.tensor, x) - residual_f(p.tensor, next);
      CHECK(drop >= 0.5 * lambda * next.squared_distance(x) - 1e-12);
      x = next;
    }
  }
}

TEST_CASE("rals substeps are stationary at their staggered arguments") {
  const CpProblem p =
      random_cp_problem(6, 5, 4, 3, ProblemKind::random_dense, 30);
  const double lambda = 0.7;
  const FactorSet& x = p.initial_guess;
  const FactorSet next = rals_sweep(p.tensor, x, lambda);
  const double scale = 1.0 + p.tensor.frobenius_norm();

  // grad_A f(A+, B, C) + lambda (A+ - A) = 0
  const FactorSet gA = gradient_f(p.tensor, FactorSet(next.A, x.B, x.C));
  CHECK((gA.A + lambda * (next.A - x.A)).norm() <= 1e-8 * scale);
  // grad_B f(A+, B+, C) + lambda (B+ - B) = 0
  const FactorSet gB = gradient_f(p.tensor, FactorSet(next.A, next.B, x.C));
  CHECK((gB.B + lambda * (next.B - x.B)).norm() <= 1e-8 * scale);
  // grad_C f(A+, B+, C+) + lambda (C+ - C) = 0
  const FactorSet gC = gradient_f(p.tensor, next);
  CHECK((gC.C + lambda * (next.C - x.C)).norm() <= 1e-8 * scale);
}

TEST_CASE("run converges immediately from a fixed-point start") {
  const CpProblem p = random_cp_problem(6, 6, 6, 3, ProblemKind::exact_rank, 40);
  const SolverConfig cfg = SolverConfig::defaults(Algorithm::rals);
  const ConvergenceTrace trace = run(p.tensor, p.generating_factors, cfg);
  REQUIRE(trace.converged());
  CHECK(trace.iterations() == 1);
  CHECK(trace.records.front().err_sq <= 1e-20);
}

TEST_CASE("rals run decreases f by at least the proximal margin each sweep") {
  // f is monotone with slack (lambda/2)||step||^2; err_sq itself need not
  // shrink monotonically (swamps make it rise for long stretches).
  const CpProblem p =
      random_cp_problem(10, 10, 10, 10, ProblemKind::random_dense, 41);
  SolverConfig cfg = SolverConfig::defaults(Algorithm::rals);
  cfg.max_iter = 1500;
  const ConvergenceTrace trace = run(p.tensor, p.initial_guess, cfg);
  REQUIRE(trace.iterations() >= 2);
  const double slack = 1e-10 * (1.0 + trace.f_initial);
  double prev_f = trace.f_initial;
  for (const IterRecord& rec : trace.records) {
    CHECK(prev_f - rec.f_val >= 0.5 * rec.lambda_used * rec.err_sq - slack);
    prev_f = rec.f_val;
  }
}

TEST_CASE("als run has nonincreasing f_val") {
  const CpProblem p =
      random_cp_problem(8, 8, 8, 4, ProblemKind::random_dense, 42);
  SolverConfig cfg = SolverConfig::defaults(Algorithm::als);
  cfg.max_iter = 300;
  const ConvergenceTrace trace = run(p.tensor, p.initial_guess, cfg);
  double prev_f = trace.f_initial;
  for (const IterRecord& rec : trace.records) {
    CHECK(rec.f_val <= prev_f * (1.0 + 1e-10) + 1e-14);
    prev_f = rec.f_val;
  }
}

TEST_CASE("acceleration fires only when the gate held") {
  const CpProblem p = random_cp_problem(10, 10, 10, 10, ProblemKind::swamp, 43);
  SolverConfig cfg = SolverConfig::defaults(Algorithm::rals_a);
  cfg.max_iter = 20000;
  const ConvergenceTrace trace = run(p.tensor, p.initial_guess, cfg);
  bool any_accel = false;
  for (size_t i = 0; i < trace.records.size(); ++i) {
    const IterRecord& rec = trace.records[i];
    if (!rec.accel_applied) continue;
    any_accel = true;
    CHECK(rec.n % cfg.accel_q == 0);
    REQUIRE(i >= 1);
    // The gate reads err from the previous iteration.
    CHECK(trace.records[i - 1].err_sq < cfg.accel_alpha);
  }
  CHECK(any_accel);  // swamps are slow enough to open the gate
  // Conversely: no acceleration while the previous err was >= alpha.
  for (size_t i = 1; i < trace.records.size(); ++i)
    if (trace.records[i - 1].err_sq >= cfg.accel_alpha)
      CHECK_FALSE(trace.records[i].accel_applied);
}

TEST_CASE("gradient norms along a converging rals run stay bounded by displacements") {
  const CpProblem p = random_cp_problem(6, 6, 6, 3, ProblemKind::exact_rank, 44);
  SolverConfig cfg = SolverConfig::defaults(Algorithm::rals);
  const ConvergenceTrace trace = run(p.tensor, p.initial_guess, cfg);
  REQUIRE(trace.converged());
  std::vector<double> ratios;
  for (const IterRecord& rec : trace.records)
    if (rec.err_sq > 1e-30) ratios.push_back(rec.grad_norm / std::sqrt(rec.err_sq));
  REQUIRE(ratios.size() >= 10);
  std::vector<double> tail(ratios.begin() + ratios.size() / 2, ratios.end());
  std::sort(tail.begin(), tail.end());
  const double median = tail[tail.size() / 2];
  for (double ratio : ratios) CHECK(ratio <= 10.0 * median);
}

TEST_CASE("no drift once the iteration is near a fixed point") {
  const CpProblem p = random_cp_problem(6, 6, 6, 3, ProblemKind::exact_rank, 45);
  // Perturb the generating factors slightly; successive iterates must stay
  // in a comparable neighborhood rather than jumping away.
  FactorSet x = p.generating_factors;
  x.A.array() += 1e-8;
  const double eps = std::sqrt(
      rals_sweep(p.tensor, x, 1.0).squared_distance(x));
  FactorSet y = rals_sweep(p.tensor, x, 1.0);
  FactorSet z = rals_sweep(p.tensor, y, 1.0);
  CHECK(std::sqrt(z.squared_distance(x)) <= 10.0 * (eps + 1e-12));
}

TEST_CASE("run flags NaN contamination as numerical failure") {
  const CpProblem p = random_cp_problem(4, 4, 4, 2, ProblemKind::random_dense, 46);
  FactorSet bad = p.initial_guess;
  bad.A(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const SolverConfig cfg = SolverConfig::defaults(Algorithm::rals);
  const ConvergenceTrace trace = run(p.tensor, bad, cfg);
  CHECK(trace.status == RunStatus::numerical_failure);
}

TEST_CASE("max_iter cap is honored") {
  const CpProblem p = random_cp_problem(10, 10, 10, 10, ProblemKind::swamp, 47);
  SolverConfig cfg = SolverConfig::defaults(Algorithm::als);
  cfg.max_iter = 25;
  const ConvergenceTrace trace = run(p.tensor, p.initial_guess, cfg);
  CHECK(trace.status == RunStatus::max_iter);
  CHECK(trace.iterations() == 25);
}
