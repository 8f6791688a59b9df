#ifndef CPALS_PROBLEMS_HPP_
#define CPALS_PROBLEMS_HPP_

#include "cpals/factors.hpp"
#include "cpals/tensor.hpp"

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace cpals {

enum class ProblemKind { random_dense, exact_rank, swamp };

inline ProblemKind problem_kind_from_string(const std::string& s) {
  if (s == "random-dense") return ProblemKind::random_dense;
  if (s == "exact-rank") return ProblemKind::exact_rank;
  if (s == "swamp") return ProblemKind::swamp;
  throw std::invalid_argument("unknown problem kind: " + s);
}

inline std::string to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::random_dense: return "random-dense";
    case ProblemKind::exact_rank: return "exact-rank";
    case ProblemKind::swamp: return "swamp";
  }
  return "?";
}

struct CpProblem {
  Tensor3 tensor;
  FactorSet initial_guess;
  // Populated for exact-rank and swamp kinds; empty matrices otherwise.
  FactorSet generating_factors;
};

namespace detail {

inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{seed, tag};
  return std::mt19937_64(seq);
}

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols,
                              std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix m(rows, cols);
  // Fill in a fixed row-major order so results do not depend on Eigen
  // storage internals.
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = gauss(rng);
  return m;
}

inline double min_pairwise_abs_cos(const Matrix& m) {
  double best = 1.0;
  for (Eigen::Index s = 0; s < m.cols(); ++s)
    for (Eigen::Index t = s + 1; t < m.cols(); ++t) {
      const double c = std::abs(m.col(s).dot(m.col(t))) /
                       (m.col(s).norm() * m.col(t).norm());
      best = std::min(best, c);
    }
  return best;
}

/// Columns u_s = v + eps * w_s with a shared unit direction v. eps is chosen
/// by bisection as the largest perturbation for which every column pair still
/// satisfies |cos| >= collinearity, so the instances sit right at the
/// requested severity instead of far past it.
inline Matrix collinear_matrix(Eigen::Index rows, Eigen::Index cols,
                               double collinearity, std::mt19937_64& rng) {
  Vector v = gaussian_matrix(rows, 1, rng).col(0);
  v.normalize();
  const Matrix w = gaussian_matrix(rows, cols, rng);
  const auto with_eps = [&](double eps) {
    Matrix m = eps * w;
    m.colwise() += v;
    return m;
  };
  if (cols < 2) return with_eps(1.0);
  double lo = 0.0, hi = 1.0;
  int expand = 0;
  while (min_pairwise_abs_cos(with_eps(hi)) >= collinearity) {
    hi *= 2.0;
    if (++expand > 64)
      throw std::runtime_error("collinear_matrix: unreachable collinearity");
  }
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (min_pairwise_abs_cos(with_eps(mid)) >= collinearity ? lo : hi) = mid;
  }
  return with_eps(lo);
}

}  // namespace detail

/**
 * Seed-deterministic test problem generator.
 *
 *   random-dense: i.i.d. standard normal tensor entries.
 *   exact-rank:   tensor = cp_reconstruct of standard normal factors.
 *   swamp:        exact-rank tensor whose generating mode-1 columns are
 *                 near-collinear (pairwise |cos| >= collinearity).
 *
 * The initial guess is drawn from an independent substream of the seed, so
 * tensor and guess can be regenerated separately.
 */
inline CpProblem random_cp_problem(Eigen::Index I, Eigen::Index J,
                                   Eigen::Index K, Eigen::Index r,
                                   ProblemKind kind, std::uint64_t seed,
                                   double collinearity = 0.99) {
  if (I <= 0 || J <= 0 || K <= 0 || r < 1)
    throw std::invalid_argument("random_cp_problem: bad dims or rank");
  CpProblem p;
  auto tensor_rng = detail::substream(seed, 0x7e4507);
  switch (kind) {
    case ProblemKind::random_dense: {
      Tensor3 t(I, J, K);
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (Eigen::Index q = 0; q < t.size(); ++q) t.values()(q) = gauss(tensor_rng);
      p.tensor = std::move(t);
      break;
    }
    case ProblemKind::exact_rank: {
      p.generating_factors =
          FactorSet(detail::gaussian_matrix(I, r, tensor_rng),
                    detail::gaussian_matrix(J, r, tensor_rng),
                    detail::gaussian_matrix(K, r, tensor_rng));
      p.tensor = cp_reconstruct(p.generating_factors, I, J, K);
      break;
    }
    case ProblemKind::swamp: {
      // Single-mode bottleneck: near-collinear columns in the first factor
      // only. Collinearity in every mode makes recovery so ill-conditioned
      // that no variant converges in any reasonable budget.
      p.generating_factors =
          FactorSet(detail::collinear_matrix(I, r, collinearity, tensor_rng),
                    detail::gaussian_matrix(J, r, tensor_rng),
                    detail::gaussian_matrix(K, r, tensor_rng));
      p.tensor = cp_reconstruct(p.generating_factors, I, J, K);
      break;
    }
  }
  auto guess_rng = detail::substream(seed, 0x9a55e5);
  p.initial_guess = FactorSet(detail::gaussian_matrix(I, r, guess_rng),
                              detail::gaussian_matrix(J, r, guess_rng),
                              detail::gaussian_matrix(K, r, guess_rng));
  return p;
}

}  // namespace cpals

#endif  // CPALS_PROBLEMS_HPP_
