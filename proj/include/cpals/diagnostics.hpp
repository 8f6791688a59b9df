#ifndef CPALS_DIAGNOSTICS_HPP_
#define CPALS_DIAGNOSTICS_HPP_

#include "cpals/factors.hpp"
#include "cpals/solver.hpp"
#include "cpals/tensor.hpp"

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace cpals::diagnostics {

// ---------------------------------------------------------------------------
// Descent inequality
// ---------------------------------------------------------------------------

/**
 * Checks f(x(n)) - f(x(n+1)) >= (lambda_n / 2) ||x(n+1) - x(n)||^2 along a
 * regularized trace, with slack 1e-10 (1 + f(x(0))). Returns the iteration
 * indices where the inequality fails; acceleration steps are exempt (they
 * are not proximal sweeps).
 */
inline std::vector<std::int64_t> check_descent(const ConvergenceTrace& trace,
                                               const LambdaSchedule& schedule) {
  std::vector<std::int64_t> violations;
  const double slack = 1e-10 * (1.0 + trace.f_initial);
  double f_prev = trace.f_initial;
  for (const IterRecord& rec : trace.records) {
    if (!rec.accel_applied) {
      const double lambda = schedule(rec.n - 1);
      if (f_prev - rec.f_val < 0.5 * lambda * rec.err_sq - slack)
        violations.push_back(rec.n);
    }
    f_prev = rec.f_val;
  }
  return violations;
}

// ---------------------------------------------------------------------------
// Empirical contraction rate
// ---------------------------------------------------------------------------

/// Log-linear fit of err_sq over a tail window; q_fit is the implied
/// per-iteration contraction factor of ||dX||.
struct RateEstimate {
  double q_fit = 0.0;
  double r_squared = 0.0;
  std::int64_t window_start = 0;
  std::int64_t window_end = 0;
};

/// Fit over explicit (iteration, err_sq) samples.
inline RateEstimate fit_rate(const std::vector<std::int64_t>& iters,
                             const std::vector<double>& err_sq) {
  std::vector<double> xs, ys;
  for (size_t i = 0; i < err_sq.size(); ++i) {
    if (std::isfinite(err_sq[i]) && err_sq[i] > 0.0) {
      xs.push_back(double(iters[i]));
      ys.push_back(std::log(err_sq[i]));
    }
  }
  if (xs.size() < 10)
    throw std::invalid_argument("fit_rate: fewer than 10 usable samples");
  const size_t n = xs.size();
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) { mx += xs[i]; my += ys[i]; }
  mx /= double(n);
  my /= double(n);
  double sxx = 0, sxy = 0, syy = 0;
  for (size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  const double slope = sxy / sxx;
  RateEstimate est;
  est.q_fit = std::exp(0.5 * slope);
  est.r_squared = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0)
                            : 1.0;  // constant sequence: perfect fit
  est.window_start = std::int64_t(xs.front());
  est.window_end = std::int64_t(xs.back());
  return est;
}

/// Rate over the final window_fraction of a trace (default: last half).
inline RateEstimate estimate_rate(const ConvergenceTrace& trace,
                                  double window_fraction = 0.5) {
  const std::int64_t n = trace.iterations();
  const auto window =
      std::max<std::int64_t>(10, std::int64_t(std::ceil(window_fraction * double(n))));
  const std::int64_t start = std::max<std::int64_t>(0, n - window);
  std::vector<std::int64_t> iters;
  std::vector<double> errs;
  for (std::int64_t i = start; i < n; ++i) {
    iters.push_back(trace.records[size_t(i)].n);
    errs.push_back(trace.records[size_t(i)].err_sq);
  }
  return fit_rate(iters, errs);
}

// ---------------------------------------------------------------------------
// Hessian and the spectral rate predictor
// ---------------------------------------------------------------------------

/**
 * Hessian of the residual at x by central finite differences of the analytic
 * gradient over the flat (A, B, C) ordering, symmetrized as (H + H^T)/2.
 */
inline Matrix hessian_fd(const Tensor3& t, const FactorSet& x) {
  const Eigen::Index I = t.I(), J = t.J(), K = t.K(), r = x.rank();
  const Eigen::Index dim = x.flat_size();
  const Vector x0 = x.flat();
  Matrix h(dim, dim);
  for (Eigen::Index p = 0; p < dim; ++p) {
    const double step = 1e-5 * (1.0 + std::abs(x0(p)));
    Vector xp = x0, xm = x0;
    xp(p) += step;
    xm(p) -= step;
    const Vector gp = gradient_f(t, FactorSet::from_flat(xp, I, J, K, r)).flat();
    const Vector gm = gradient_f(t, FactorSet::from_flat(xm, I, J, K, r)).flat();
    h.col(p) = (gp - gm) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

struct SpectralPrediction {
  double rho = 0.0;           // spectral radius of I - M^-1 H
  Eigen::Index hessian_dim = 0;
  double lambda = 0.0;
};

/**
 * Spectral radius of I - M^-1 H for the block Gauss-Seidel splitting
 * H = D - L - U with M = lambda I + D - L, where the blocks follow the
 * given partition of the flat coordinates.
 *
 * At a CP minimizer H is singular along the scaling-indeterminacy directions,
 * and any v with Hv = 0 is an eigenvector of I - M^-1 H with eigenvalue
 * exactly 1. Those directions are neutral: the iteration map fixes the whole
 * minimizer manifold, successive differences have no component along it, so
 * the observed contraction is governed by the remaining spectrum (the
 * H-seminorm bound). Eigenvectors in the numerical null space of H are
 * therefore excluded from the radius.
 */
inline double contraction_radius(const Matrix& h,
                                 const std::vector<Eigen::Index>& block_sizes,
                                 double lambda, double null_tol = 1e-5) {
  const Eigen::Index dim = h.rows();
  // M = lambda I + (block lower triangle of H, diagonal blocks included).
  Matrix m = Matrix::Zero(dim, dim);
  Eigen::Index row0 = 0;
  for (Eigen::Index bi = 0; bi < Eigen::Index(block_sizes.size()); ++bi) {
    const Eigen::Index rows = block_sizes[size_t(bi)];
    m.block(row0, 0, rows, row0 + rows) = h.block(row0, 0, rows, row0 + rows);
    row0 += rows;
  }
  if (row0 != dim)
    throw std::invalid_argument("contraction_radius: block sizes do not sum to dim");
  m.diagonal().array() += lambda;

  Eigen::PartialPivLU<Matrix> lu(m);
  if (std::abs(lu.determinant()) == 0.0)
    throw std::runtime_error("contraction_radius: singular M");
  const Matrix iter = Matrix::Identity(dim, dim) - lu.solve(h);
  Eigen::EigenSolver<Matrix> eig(iter, /*computeEigenvectors=*/true);
  const Eigen::SelfAdjointEigenSolver<Matrix> hs(h, Eigen::EigenvaluesOnly);
  const double h_scale = hs.eigenvalues().cwiseAbs().maxCoeff();
  double rho = 0.0;
  for (Eigen::Index i = 0; i < dim; ++i) {
    const Eigen::VectorXcd v = eig.eigenvectors().col(i);
    const double hv = (h.cast<std::complex<double>>() * v).norm();
    if (hv <= null_tol * std::max(1.0, h_scale) * v.norm()) continue;
    rho = std::max(rho, std::abs(eig.eigenvalues()(i)));
  }
  return rho;
}

/// Predictor of the local linear rate at an (approximately) stationary point.
inline SpectralPrediction predict_contraction(const Tensor3& t,
                                              const FactorSet& x_star,
                                              double lambda) {
  const Eigen::Index r = x_star.rank();
  const Matrix h = hessian_fd(t, x_star);
  SpectralPrediction pred;
  pred.hessian_dim = h.rows();
  pred.lambda = lambda;
  pred.rho = contraction_radius(
      h, {r * t.I(), r * t.J(), r * t.K()}, lambda);
  return pred;
}

// ---------------------------------------------------------------------------
// Gradient-norm / displacement ratios
// ---------------------------------------------------------------------------

struct GradientBoundProfile {
  // ||grad f(x(n))|| / ||x(n) - x(n-1)|| per record; NaN marks iterations
  // with (numerically) zero displacement.
  std::vector<double> ratios;
  double max_ratio = 0.0;
  double median_ratio = 0.0;
};

inline GradientBoundProfile gradient_bound_profile(
    const ConvergenceTrace& trace) {
  if (trace.records.empty())
    throw std::invalid_argument("gradient_bound_profile: empty trace");
  GradientBoundProfile prof;
  std::vector<double> usable;
  for (const IterRecord& rec : trace.records) {
    if (rec.err_sq < 1e-30) {
      prof.ratios.push_back(std::numeric_limits<double>::quiet_NaN());
    } else {
      const double ratio = rec.grad_norm / std::sqrt(rec.err_sq);
      prof.ratios.push_back(ratio);
      usable.push_back(ratio);
    }
  }
  if (!usable.empty()) {
    prof.max_ratio = *std::max_element(usable.begin(), usable.end());
    std::nth_element(usable.begin(), usable.begin() + usable.size() / 2,
                     usable.end());
    prof.median_ratio = usable[usable.size() / 2];
  }
  return prof;
}

// ---------------------------------------------------------------------------
// Swamp detection
// ---------------------------------------------------------------------------

struct Plateau {
  std::int64_t start = 0;  // 1-based iteration indices, inclusive
  std::int64_t end = 0;
  std::int64_t length() const { return end - start + 1; }
};

/**
 * Maximal windows of at least min_len iterations whose per-iteration err_sq
 * reduction factor stays >= plateau_ratio (near-stagnation). A window at the
 * very end of a non-converged trace also counts (the swamp outlived the run).
 */
inline std::vector<Plateau> detect_swamp(const ConvergenceTrace& trace,
                                         double plateau_ratio = 0.999,
                                         std::int64_t min_len = 50) {
  const auto& recs = trace.records;
  std::vector<Plateau> out;
  if (recs.size() < 2) return out;
  const auto stagnant = [&](size_t m) {
    // Reduction factor from record m to m+1.
    return recs[m].err_sq > 0.0 &&
           recs[m + 1].err_sq / recs[m].err_sq >= plateau_ratio;
  };
  size_t m = 0;
  while (m + 1 < recs.size()) {
    if (!stagnant(m)) { ++m; continue; }
    size_t end = m;
    while (end + 1 < recs.size() && stagnant(end)) ++end;
    // Window covers records m .. end (end exclusive step above overshoots by
    // one transition; the last stagnant transition is end-1 -> end).
    const Plateau window{recs[m].n, recs[end].n};
    if (window.length() >= min_len) {
      const bool at_tail = end + 1 >= recs.size();
      bool decreases_later = false;
      for (size_t j = end + 1; j < recs.size(); ++j)
        if (recs[j].err_sq < recs[end].err_sq) { decreases_later = true; break; }
      if (decreases_later || (at_tail && !trace.converged()))
        out.push_back(window);
    }
    m = end + 1;
  }
  return out;
}

inline std::int64_t total_plateau_length(const std::vector<Plateau>& ps) {
  std::int64_t total = 0;
  for (const Plateau& p : ps) total += p.length();
  return total;
}

// ---------------------------------------------------------------------------
// JSON fragments
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const RateEstimate& est) {
  return {{"q_fit", est.q_fit},
          {"r_squared", est.r_squared},
          {"window", {est.window_start, est.window_end}}};
}

inline nlohmann::json to_json(const SpectralPrediction& pred) {
  return {{"rho", pred.rho},
          {"hessian_dim", pred.hessian_dim},
          {"lambda", pred.lambda}};
}

inline nlohmann::json to_json(const std::vector<Plateau>& plateaus) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Plateau& p : plateaus) arr.push_back({p.start, p.end});
  return {{"plateaus", arr}, {"total_length", total_plateau_length(plateaus)}};
}

}  // namespace cpals::diagnostics

#endif  // CPALS_DIAGNOSTICS_HPP_
