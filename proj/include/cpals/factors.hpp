#ifndef CPALS_FACTORS_HPP_
#define CPALS_FACTORS_HPP_

#include "cpals/tensor.hpp"

#include <stdexcept>
#include <utility>

namespace cpals {

/**
 * Factor matrices (A, B, C) of a rank-r CP model for an I x J x K tensor.
 *
 * The same data supports three lossless views:
 *   - the three matrices A (I x r), B (J x r), C (K x r),
 *   - the stacked (I+J+K) x r matrix [A; B; C],
 *   - a flat vector of length r(I+J+K) ordered vec(A), vec(B), vec(C)
 *     with column-major vectorization.
 */
struct FactorSet {
  Matrix A, B, C;

  FactorSet() = default;
  FactorSet(Matrix a, Matrix b, Matrix c)
      : A(std::move(a)), B(std::move(b)), C(std::move(c)) {
    if (A.cols() != B.cols() || A.cols() != C.cols())
      throw std::invalid_argument("FactorSet: column counts differ");
  }

  Eigen::Index rank() const { return A.cols(); }
  Eigen::Index stacked_rows() const { return A.rows() + B.rows() + C.rows(); }
  Eigen::Index flat_size() const { return rank() * stacked_rows(); }

  Matrix stacked() const {
    Matrix x(stacked_rows(), rank());
    x.topRows(A.rows()) = A;
    x.middleRows(A.rows(), B.rows()) = B;
    x.bottomRows(C.rows()) = C;
    return x;
  }

  static FactorSet from_stacked(const Matrix& x, Eigen::Index I,
                                Eigen::Index J, Eigen::Index K) {
    if (x.rows() != I + J + K)
      throw std::invalid_argument("from_stacked: row count mismatch");
    return FactorSet(x.topRows(I), x.middleRows(I, J), x.bottomRows(K));
  }

  Vector flat() const {
    Vector v(flat_size());
    v.head(A.size()) = Eigen::Map<const Vector>(A.data(), A.size());
    v.segment(A.size(), B.size()) =
        Eigen::Map<const Vector>(B.data(), B.size());
    v.tail(C.size()) = Eigen::Map<const Vector>(C.data(), C.size());
    return v;
  }

  static FactorSet from_flat(const Vector& v, Eigen::Index I, Eigen::Index J,
                             Eigen::Index K, Eigen::Index r) {
    if (v.size() != r * (I + J + K))
      throw std::invalid_argument("from_flat: length mismatch");
    FactorSet f;
    f.A = Eigen::Map<const Matrix>(v.data(), I, r);
    f.B = Eigen::Map<const Matrix>(v.data() + I * r, J, r);
    f.C = Eigen::Map<const Matrix>(v.data() + (I + J) * r, K, r);
    return f;
  }

  double norm() const {
    return std::sqrt(A.squaredNorm() + B.squaredNorm() + C.squaredNorm());
  }

  /// Squared Frobenius distance to another factor set of the same shape.
  double squared_distance(const FactorSet& o) const {
    return (A - o.A).squaredNorm() + (B - o.B).squaredNorm() +
           (C - o.C).squaredNorm();
  }

  bool all_finite() const {
    return A.allFinite() && B.allFinite() && C.allFinite();
  }
};

/**
 * Khatri-Rao product: column s is the Kronecker product of the s-th columns,
 * (p_s ⊗ q_s)(i*Jq + j) = p(i,s) q(j,s).
 */
inline Matrix khatri_rao(const Matrix& p, const Matrix& q) {
  if (p.cols() != q.cols())
    throw std::invalid_argument("khatri_rao: column counts differ");
  const Eigen::Index Ip = p.rows(), Jq = q.rows(), r = p.cols();
  Matrix out(Ip * Jq, r);
  for (Eigen::Index s = 0; s < r; ++s)
    for (Eigen::Index i = 0; i < Ip; ++i)
      out.col(s).segment(i * Jq, Jq) = p(i, s) * q.col(s);
  return out;
}

/// Dense tensor with entries sum_s A(i,s) B(j,s) C(k,s).
inline Tensor3 cp_reconstruct(const FactorSet& f, Eigen::Index I,
                              Eigen::Index J, Eigen::Index K) {
  if (f.A.rows() != I || f.B.rows() != J || f.C.rows() != K)
    throw std::invalid_argument("cp_reconstruct: factor shapes do not match dims");
  // Mode-1 identity T(1) = A (C ⊙ B)^T, then fold.
  Matrix t1 = f.A * khatri_rao(f.C, f.B).transpose();
  return fold(t1, Mode::one, I, J, K);
}

inline Tensor3 cp_reconstruct(const FactorSet& f) {
  return cp_reconstruct(f, f.A.rows(), f.B.rows(), f.C.rows());
}

/// Residual objective f(A,B,C) = 0.5 || T - sum_s a_s ∘ b_s ∘ c_s ||_F^2.
inline double residual_f(const Tensor3& t, const FactorSet& f) {
  const Tensor3 model = cp_reconstruct(f, t.I(), t.J(), t.K());
  return 0.5 * (t.values() - model.values()).squaredNorm();
}

/**
 * Analytic gradient of residual_f with respect to each factor:
 *   ∇_A f = (A (C⊙B)^T - T(1)) (C⊙B), and cyclically for B, C.
 * Returned as a FactorSet-shaped triple; flat() gives the r(I+J+K) vector.
 */
inline FactorSet gradient_f(const Tensor3& t, const FactorSet& f) {
  const Matrix krA = khatri_rao(f.C, f.B);
  const Matrix krB = khatri_rao(f.C, f.A);
  const Matrix krC = khatri_rao(f.B, f.A);
  FactorSet g;
  g.A = (f.A * krA.transpose() - matricize(t, Mode::one)) * krA;
  g.B = (f.B * krB.transpose() - matricize(t, Mode::two)) * krB;
  g.C = (f.C * krC.transpose() - matricize(t, Mode::three)) * krC;
  return g;
}

}  // namespace cpals

#endif  // CPALS_FACTORS_HPP_
