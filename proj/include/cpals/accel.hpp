#ifndef CPALS_ACCEL_HPP_
#define CPALS_ACCEL_HPP_

#include "cpals/factors.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <functional>
#include <stdexcept>

namespace cpals {

/// One-sweep update operator on stacked (I+J+K) x r factor matrices.
using SweepFn = std::function<Matrix(const Matrix&)>;

/// One accelerated update X -> X - Z, with the intermediate quantities kept
/// for inspection.
struct AccelStep {
  Matrix x_in;        // X
  Matrix s1;          // S(X)
  Matrix s2;          // S(S(X))
  Matrix z;           // perturbation Z
  Matrix x_out;       // X - Z
  double ls_residual = 0.0;  // || Z D2^T - R ||_F
  bool degenerate = false;   // D2^T rank-deficient at the threshold
};

/**
 * Scalar Aitken extrapolation: x0 - (x1-x0)^2 / (x2 - 2 x1 + x0).
 * Exact for geometric sequences x_n = L + c rho^n. Throws on a (near-)zero
 * second difference.
 */
inline double scalar_aitken(double x0, double x1, double x2) {
  const double d2 = x2 - 2.0 * x1 + x0;
  const double scale = std::abs(x0) + std::abs(x1) + std::abs(x2);
  if (std::abs(d2) <= 1e-14 * (1.0 + scale))
    throw std::domain_error("scalar_aitken: zero second difference");
  const double d1 = x1 - x0;
  return x0 - d1 * d1 / d2;
}

/**
 * Matrix Aitken-Steffensen step built from two applications of the sweep
 * operator. With s1 = sweep(x), s2 = sweep(s1),
 *   D2 = s2 - 2 s1 + x,   R = (s1 - x)(s1 - x)^T,
 * Z solves Z D2^T = R in the minimum-norm least-squares sense and the
 * update is x_out = x - Z. A fixed point of the sweep gives R = 0, hence
 * Z = 0 and x_out = x.
 */
inline AccelStep accel_step(const Matrix& x, const SweepFn& sweep,
                            double pinv_threshold = 1e-12) {
  AccelStep step;
  step.x_in = x;
  step.s1 = sweep(x);
  step.s2 = sweep(step.s1);

  const Matrix d1 = step.s1 - x;
  const Matrix d2 = step.s2 - 2.0 * step.s1 + x;
  const Matrix r = d1 * d1.transpose();

  // Z = R * pinv(D2^T); D2^T is r x (I+J+K).
  Eigen::JacobiSVD<Matrix> svd(d2.transpose(),
                               Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(pinv_threshold);
  step.degenerate = svd.rank() < d2.cols();
  // pinv(D2^T) = V diag(1/sigma) U^T restricted to the numerical rank.
  const Eigen::Index rk = svd.rank();
  Matrix pinv = Matrix::Zero(d2.rows(), d2.cols());
  if (rk > 0) {
    pinv = svd.matrixV().leftCols(rk) *
           svd.singularValues().head(rk).cwiseInverse().asDiagonal() *
           svd.matrixU().leftCols(rk).transpose();
  }
  step.z = r * pinv;
  step.ls_residual = (step.z * d2.transpose() - r).norm();
  step.x_out = x - step.z;
  if (!step.x_out.allFinite())
    throw std::runtime_error("accel_step: non-finite update");
  return step;
}

/// Convenience overload on FactorSet views.
inline AccelStep accel_step(const FactorSet& x, const SweepFn& sweep,
                            double pinv_threshold = 1e-12) {
  return accel_step(x.stacked(), sweep, pinv_threshold);
}

}  // namespace cpals

#endif  // CPALS_ACCEL_HPP_
