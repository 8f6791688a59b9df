#ifndef CPALS_TENSOR_HPP_
#define CPALS_TENSOR_HPP_

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace cpals {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Which index a matricization preserves as the row index.
enum class Mode : int { one = 1, two = 2, three = 3 };

/**
 * Dense real third-order tensor with dimensions (I, J, K).
 *
 * Canonical memory layout: first index fastest, then second, then third,
 * i.e. entry (i, j, k) lives at offset i + I*j + I*J*k (zero-based).
 * The mode-1 unfolding is therefore a plain column-major view of the data.
 */
class Tensor3 {
 public:
  Tensor3() : dims_{0, 0, 0} {}

  Tensor3(Eigen::Index I, Eigen::Index J, Eigen::Index K)
      : dims_{I, J, K}, values_(Vector::Zero(I * J * K)) {
    if (I <= 0 || J <= 0 || K <= 0)
      throw std::invalid_argument("Tensor3: dimensions must be positive");
  }

  Tensor3(Eigen::Index I, Eigen::Index J, Eigen::Index K, Vector values)
      : dims_{I, J, K}, values_(std::move(values)) {
    if (I <= 0 || J <= 0 || K <= 0)
      throw std::invalid_argument("Tensor3: dimensions must be positive");
    if (values_.size() != I * J * K)
      throw std::invalid_argument("Tensor3: value count does not match dims");
  }

  Eigen::Index dim(int axis) const { return dims_[static_cast<size_t>(axis)]; }
  Eigen::Index I() const { return dims_[0]; }
  Eigen::Index J() const { return dims_[1]; }
  Eigen::Index K() const { return dims_[2]; }
  Eigen::Index size() const { return values_.size(); }

  double operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) const {
    return values_(i + I() * (j + J() * k));
  }
  double& operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) {
    return values_(i + I() * (j + J() * k));
  }

  const Vector& values() const { return values_; }
  Vector& values() { return values_; }

  double frobenius_norm() const { return values_.norm(); }
  double squared_norm() const { return values_.squaredNorm(); }

  bool same_dims(const Tensor3& other) const {
    return dims_ == other.dims_;
  }

 private:
  std::array<Eigen::Index, 3> dims_;
  Vector values_;
};

/**
 * Mode-m unfolding. Rows are the preserved index; the columns enumerate the
 * remaining two indices with the smaller-numbered one varying fastest:
 *   mode 1: I x JK, column j + J*k
 *   mode 2: J x IK, column i + I*k
 *   mode 3: K x IJ, column i + I*j
 */
inline Matrix matricize(const Tensor3& t, Mode m) {
  const Eigen::Index I = t.I(), J = t.J(), K = t.K();
  switch (m) {
    case Mode::one:
      // Mode-1 unfolding is the canonical layout read column-major.
      return Eigen::Map<const Matrix>(t.values().data(), I, J * K);
    case Mode::two: {
      Matrix out(J, I * K);
      for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index i = 0; i < I; ++i)
          for (Eigen::Index j = 0; j < J; ++j)
            out(j, i + I * k) = t(i, j, k);
      return out;
    }
    case Mode::three: {
      Matrix out(K, I * J);
      for (Eigen::Index j = 0; j < J; ++j)
        for (Eigen::Index i = 0; i < I; ++i)
          for (Eigen::Index k = 0; k < K; ++k)
            out(k, i + I * j) = t(i, j, k);
      return out;
    }
  }
  throw std::invalid_argument("matricize: bad mode");
}

/// Inverse of matricize: fold(matricize(t, m), m, dims) == t for every mode.
inline Tensor3 fold(const Matrix& m, Mode mode, Eigen::Index I,
                    Eigen::Index J, Eigen::Index K) {
  const auto check = [&](Eigen::Index rows, Eigen::Index cols) {
    if (m.rows() != rows || m.cols() != cols) {
      std::ostringstream os;
      os << "fold: matrix is " << m.rows() << "x" << m.cols()
         << ", expected " << rows << "x" << cols;
      throw std::invalid_argument(os.str());
    }
  };
  Tensor3 t(I, J, K);
  switch (mode) {
    case Mode::one:
      check(I, J * K);
      t.values() = Eigen::Map<const Vector>(m.data(), m.size());
      return t;
    case Mode::two:
      check(J, I * K);
      for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index i = 0; i < I; ++i)
          for (Eigen::Index j = 0; j < J; ++j)
            t(i, j, k) = m(j, i + I * k);
      return t;
    case Mode::three:
      check(K, I * J);
      for (Eigen::Index j = 0; j < J; ++j)
        for (Eigen::Index i = 0; i < I; ++i)
          for (Eigen::Index k = 0; k < K; ++k)
            t(i, j, k) = m(k, i + I * j);
      return t;
  }
  throw std::invalid_argument("fold: bad mode");
}

/// Text format: line 1 "I J K", then entries in canonical layout order.
inline void save_tensor(const Tensor3& t, std::ostream& os) {
  os << t.I() << ' ' << t.J() << ' ' << t.K() << '\n';
  os << std::setprecision(17);
  for (Eigen::Index p = 0; p < t.size(); ++p) {
    os << t.values()(p);
    os << ((p + 1) % 8 == 0 || p + 1 == t.size() ? '\n' : ' ');
  }
}

inline void save_tensor(const Tensor3& t, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_tensor: cannot open " + path);
  save_tensor(t, os);
}

inline Tensor3 load_tensor(std::istream& is) {
  Eigen::Index I = 0, J = 0, K = 0;
  if (!(is >> I >> J >> K))
    throw std::runtime_error("load_tensor: malformed header");
  if (I <= 0 || J <= 0 || K <= 0)
    throw std::runtime_error("load_tensor: nonpositive dimension");
  Vector v(I * J * K);
  for (Eigen::Index p = 0; p < v.size(); ++p)
    if (!(is >> v(p)))
      throw std::runtime_error("load_tensor: truncated entry list");
  return Tensor3(I, J, K, std::move(v));
}

inline Tensor3 load_tensor(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_tensor: cannot open " + path);
  return load_tensor(is);
}

}  // namespace cpals

#endif  // CPALS_TENSOR_HPP_
