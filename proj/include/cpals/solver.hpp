#ifndef CPALS_SOLVER_HPP_
#define CPALS_SOLVER_HPP_

#include "cpals/accel.hpp"
#include "cpals/factors.hpp"
#include "cpals/tensor.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpals {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Regularization parameter sequence; positive and nonincreasing in n.
struct LambdaSchedule {
  enum class Kind { constant, geometric, harmonic };
  Kind kind = Kind::constant;
  double lambda0 = 1.0;
  double gamma = 0.99;      // geometric only, in (0,1)
  double lambda_min = 1e-8; // floor for the decreasing kinds

  double operator()(std::int64_t n) const {
    switch (kind) {
      case Kind::constant:
        return lambda0;
      case Kind::geometric:
        return std::max(lambda_min, lambda0 * std::pow(gamma, double(n)));
      case Kind::harmonic:
        return std::max(lambda_min, lambda0 / (1.0 + double(n)));
    }
    return lambda0;
  }

  static LambdaSchedule constant(double lambda0) {
    return LambdaSchedule{Kind::constant, lambda0, 0.99, 0.0};
  }
  static LambdaSchedule geometric(double lambda0, double gamma,
                                  double lambda_min) {
    return LambdaSchedule{Kind::geometric, lambda0, gamma, lambda_min};
  }
};

enum class Algorithm { als, als_a, rals, rals_a, rals_l, rals_al };

inline bool is_accelerated(Algorithm a) {
  return a == Algorithm::als_a || a == Algorithm::rals_a ||
         a == Algorithm::rals_al;
}
inline bool is_regularized(Algorithm a) {
  return a != Algorithm::als && a != Algorithm::als_a;
}
inline bool has_decreasing_lambda(Algorithm a) {
  return a == Algorithm::rals_l || a == Algorithm::rals_al;
}

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "als") return Algorithm::als;
  if (s == "als-a") return Algorithm::als_a;
  if (s == "rals") return Algorithm::rals;
  if (s == "rals-a") return Algorithm::rals_a;
  if (s == "rals-l") return Algorithm::rals_l;
  if (s == "rals-al") return Algorithm::rals_al;
  throw std::invalid_argument("unknown algorithm: " + s);
}

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::als: return "als";
    case Algorithm::als_a: return "als-a";
    case Algorithm::rals: return "rals";
    case Algorithm::rals_a: return "rals-a";
    case Algorithm::rals_l: return "rals-l";
    case Algorithm::rals_al: return "rals-al";
  }
  return "?";
}

struct SolverConfig {
  Algorithm algorithm = Algorithm::rals;
  LambdaSchedule schedule = LambdaSchedule::constant(1.0);
  double tol = 1e-12;               // on err = ||X(n) - X(n-1)||_F^2
  std::int64_t max_iter = 50000;
  double accel_alpha = 1e-6;        // acceleration gate on err
  std::int64_t accel_q = 100;       // acceleration interval
  double pinv_threshold = 1e-12;
  std::uint64_t seed = 0;
  bool store_iterates = false;

  /// Default per-algorithm configuration: constant lambda = 1 for rals and
  /// rals-a, geometric max(1e-8, 0.99^n) for rals-l and rals-al.
  static SolverConfig defaults(Algorithm a) {
    SolverConfig cfg;
    cfg.algorithm = a;
    cfg.schedule = has_decreasing_lambda(a)
                       ? LambdaSchedule::geometric(1.0, 0.99, 1e-8)
                       : LambdaSchedule::constant(1.0);
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

enum class RunStatus { converged, max_iter, numerical_failure };

inline std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::converged: return "converged";
    case RunStatus::max_iter: return "max-iter";
    case RunStatus::numerical_failure: return "numerical-failure";
  }
  return "?";
}

struct IterRecord {
  std::int64_t n = 0;        // 1-based iteration index
  double err_sq = 0.0;       // ||X(n) - X(n-1)||_F^2
  double f_val = 0.0;        // residual after the update
  double grad_norm = 0.0;    // flat gradient norm after the update
  double lambda_used = 0.0;  // 0 for unregularized sweeps
  bool accel_applied = false;
  double elapsed_sec = 0.0;  // since run start
};

struct ConvergenceTrace {
  std::vector<IterRecord> records;
  RunStatus status = RunStatus::max_iter;
  FactorSet final_factors;
  double f_initial = 0.0;  // residual at the starting point
  std::vector<FactorSet> iterates;  // x0, x1, ... if snapshots were enabled

  bool converged() const { return status == RunStatus::converged; }
  std::int64_t iterations() const {
    return static_cast<std::int64_t>(records.size());
  }
};

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

namespace detail {

/// Moore-Penrose pseudo-inverse of a symmetric PSD Gram matrix; singular
/// values below threshold * sigma_max are treated as zero.
inline Matrix gram_pinv(const Matrix& g, double threshold) {
  Eigen::JacobiSVD<Matrix> svd(g, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cutoff = threshold * (sv.size() > 0 ? sv(0) : 0.0);
  Vector inv = Vector::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) inv(i) = 1.0 / sv(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace detail

/**
 * One factor-matrix least-squares update shared by the ALS and RALS sweeps.
 *
 * rhs must be T(k) * kr (the matricized-tensor-times-Khatri-Rao product).
 * For lambda > 0 the result is (rhs + lambda * prev)(kr^T kr + lambda I)^-1
 * through a Cholesky solve; for lambda = 0 it is rhs * pinv(kr^T kr) with
 * the truncated pseudo-inverse.
 */
inline Matrix solve_substep(const Matrix& rhs, const Matrix& kr, double lambda,
                            const Matrix& prev, double pinv_threshold = 1e-12) {
  if (rhs.cols() != kr.cols())
    throw std::invalid_argument("solve_substep: column count mismatch");
  const Matrix gram = kr.transpose() * kr;
  Matrix out;
  if (lambda > 0.0) {
    Matrix lhs = gram;
    lhs.diagonal().array() += lambda;
    Eigen::LLT<Matrix> llt(lhs);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("solve_substep: SPD factorization failed");
    // Solve X (G + lambda I) = rhs + lambda prev by transposing.
    out = llt.solve((rhs + lambda * prev).transpose()).transpose();
  } else {
    out = rhs * detail::gram_pinv(gram, pinv_threshold);
  }
  if (!out.allFinite())
    throw std::runtime_error("solve_substep: non-finite result");
  return out;
}

/// The three unfoldings of a tensor, precomputed once per run.
struct Unfoldings {
  Matrix t1, t2, t3;
  explicit Unfoldings(const Tensor3& t)
      : t1(matricize(t, Mode::one)),
        t2(matricize(t, Mode::two)),
        t3(matricize(t, Mode::three)) {}
};

/**
 * One proximally regularized Gauss-Seidel sweep (operator S): A from (B,C),
 * then B from (C, new A), then C from (new A, new B), each substep with the
 * proximal term lambda toward the incoming iterate. lambda = 0 gives the
 * plain ALS sweep (operator S_ALS).
 */
inline FactorSet sweep(const Unfoldings& u, const FactorSet& x, double lambda,
                       double pinv_threshold = 1e-12) {
  FactorSet out = x;
  Matrix kr = khatri_rao(x.C, x.B);
  out.A = solve_substep(u.t1 * kr, kr, lambda, x.A, pinv_threshold);
  kr = khatri_rao(x.C, out.A);
  out.B = solve_substep(u.t2 * kr, kr, lambda, x.B, pinv_threshold);
  kr = khatri_rao(out.B, out.A);
  out.C = solve_substep(u.t3 * kr, kr, lambda, x.C, pinv_threshold);
  return out;
}

inline FactorSet als_sweep(const Tensor3& t, const FactorSet& x,
                           double pinv_threshold = 1e-12) {
  return sweep(Unfoldings(t), x, 0.0, pinv_threshold);
}

inline FactorSet rals_sweep(const Tensor3& t, const FactorSet& x,
                            double lambda, double pinv_threshold = 1e-12) {
  if (lambda <= 0.0)
    throw std::invalid_argument("rals_sweep: lambda must be positive");
  return sweep(Unfoldings(t), x, lambda, pinv_threshold);
}

// ---------------------------------------------------------------------------
// Outer iteration
// ---------------------------------------------------------------------------

/**
 * Runs the configured variant until err = ||X(n) - X(n-1)||_F^2 drops below
 * tol or max_iter is reached. Accelerated variants take the matrix
 * Aitken-Steffensen step whenever err < accel_alpha and n mod accel_q == 0
 * (err starts at accel_alpha, so the gate is closed until a measured err
 * falls below it); every other iteration is a plain sweep. The stopping
 * check runs after the update, so an acceleration-induced residual jump
 * cannot terminate the run early.
 */
inline ConvergenceTrace run(const Tensor3& t, const FactorSet& x0,
                            const SolverConfig& cfg) {
  const Unfoldings u(t);
  const bool accel = is_accelerated(cfg.algorithm);
  const bool regularized = is_regularized(cfg.algorithm);

  ConvergenceTrace trace;
  trace.f_initial = residual_f(t, x0);
  trace.records.reserve(256);
  if (cfg.store_iterates) trace.iterates.push_back(x0);

  FactorSet x = x0;
  double err = cfg.accel_alpha;
  const auto t_start = std::chrono::steady_clock::now();

  for (std::int64_t n = 1; n <= cfg.max_iter; ++n) {
    const double lambda = regularized ? cfg.schedule(n - 1) : 0.0;
    IterRecord rec;
    rec.n = n;
    rec.lambda_used = lambda;

    FactorSet x_next;
    try {
      if (accel && err < cfg.accel_alpha && n % cfg.accel_q == 0) {
        const auto sweep_fn = [&](const Matrix& stacked) {
          const FactorSet y =
              FactorSet::from_stacked(stacked, t.I(), t.J(), t.K());
          return sweep(u, y, lambda, cfg.pinv_threshold).stacked();
        };
        const AccelStep step = accel_step(x, sweep_fn, cfg.pinv_threshold);
        x_next = FactorSet::from_stacked(step.x_out, t.I(), t.J(), t.K());
        rec.accel_applied = true;
      } else {
        x_next = sweep(u, x, lambda, cfg.pinv_threshold);
      }
    } catch (const std::runtime_error&) {
      trace.status = RunStatus::numerical_failure;
      trace.final_factors = x;
      return trace;
    }

    err = x_next.squared_distance(x);
    rec.err_sq = err;
    rec.f_val = residual_f(t, x_next);
    rec.grad_norm = gradient_f(t, x_next).flat().norm();
    rec.elapsed_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      t_start)
            .count();
    trace.records.push_back(rec);
    x = std::move(x_next);
    if (cfg.store_iterates) trace.iterates.push_back(x);

    if (!std::isfinite(err) || !std::isfinite(rec.f_val) || !x.all_finite()) {
      trace.status = RunStatus::numerical_failure;
      trace.final_factors = x;
      return trace;
    }
    if (err < cfg.tol) {
      trace.status = RunStatus::converged;
      trace.final_factors = x;
      return trace;
    }
  }
  trace.status = RunStatus::max_iter;
  trace.final_factors = x;
  return trace;
}

}  // namespace cpals

#endif  // CPALS_SOLVER_HPP_
